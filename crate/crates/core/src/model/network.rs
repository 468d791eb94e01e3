//! The two-branch classifier: a dilated causal ResNet-18 trunk over the
//! packet sequence, a dense branch over the metadata vector, and a dense
//! fusion head with dropout and softmax.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::conv::CausalConv1d;
use super::layers::{
    global_avg_pool, global_avg_pool_backward, max_pool_backward, max_pool_causal, mean_pool_causal,
    relu_backward_inplace, relu_inplace, BatchNorm, BnStats, Dense,
};
use super::probability::ProbabilityMatrix;
use super::{ModelConfig, ModelError, Scalar, Tensor3};

/// Basic residual block: conv, BN, ReLU, conv, BN, add skip, ReLU.
#[derive(Debug, Clone)]
pub struct ResidualBlock<S> {
    pub conv1: CausalConv1d<S>,
    pub bn1: BatchNorm<S>,
    pub conv2: CausalConv1d<S>,
    pub bn2: BatchNorm<S>,
    /// Strided 1-wide convolution and BN on the skip path when the block
    /// changes width or resolution.
    pub projection: Option<(CausalConv1d<S>, BatchNorm<S>)>,
}

struct BlockTape<S> {
    h1: Tensor3<S>,
    st1: BnStats<S>,
    r1: Tensor3<S>,
    h2: Tensor3<S>,
    st2: BnStats<S>,
    proj: Option<(Tensor3<S>, BnStats<S>)>,
    out: Tensor3<S>,
}

fn add_inplace<S: Scalar>(a: &mut Tensor3<S>, b: &Tensor3<S>) {
    debug_assert!(a.same_shape(b));
    for (x, &y) in a.data.iter_mut().zip(&b.data) {
        *x += y;
    }
}

impl<S: Scalar> ResidualBlock<S> {
    #[allow(clippy::too_many_arguments)]
    fn new<R: Rng>(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilations: (usize, usize),
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let projection = (stride != 1 || c_in != c_out)
            .then(|| (CausalConv1d::new(c_in, c_out, 1, 1, stride, rng), BatchNorm::new(c_out)));
        ResidualBlock {
            conv1: CausalConv1d::new(c_in, c_out, kernel, dilations.0, stride, rng),
            bn1: BatchNorm::new(c_out),
            conv2: CausalConv1d::new(c_out, c_out, kernel, dilations.1, 1, rng),
            bn2: BatchNorm::new(c_out),
            projection,
        }
    }

    /// Inference-mode forward pass. `linear` replaces both rectifiers with
    /// the identity.
    pub fn forward_infer(&self, x: &Tensor3<S>, linear: bool) -> Tensor3<S> {
        let mut a1 = self.bn1.forward_infer(&self.conv1.forward(x));
        if !linear {
            relu_inplace(&mut a1.data);
        }
        let mut out = self.bn2.forward_infer(&self.conv2.forward(&a1));
        match &self.projection {
            Some((conv, bn)) => add_inplace(&mut out, &bn.forward_infer(&conv.forward(x))),
            None => add_inplace(&mut out, x),
        }
        if !linear {
            relu_inplace(&mut out.data);
        }
        out
    }

    fn forward_train(&mut self, x: &Tensor3<S>) -> BlockTape<S> {
        let h1 = self.conv1.forward(x);
        let (mut r1, st1) = self.bn1.forward_train(&h1);
        relu_inplace(&mut r1.data);
        let h2 = self.conv2.forward(&r1);
        let (mut out, st2) = self.bn2.forward_train(&h2);
        let proj = match &mut self.projection {
            Some((conv, bn)) => {
                let p = conv.forward(x);
                let (sp, stp) = bn.forward_train(&p);
                add_inplace(&mut out, &sp);
                Some((p, stp))
            }
            None => {
                add_inplace(&mut out, x);
                None
            }
        };
        relu_inplace(&mut out.data);
        BlockTape {
            h1,
            st1,
            r1,
            h2,
            st2,
            proj,
            out,
        }
    }

    fn backward(&mut self, x: &Tensor3<S>, tape: &BlockTape<S>, mut dout: Tensor3<S>) -> Tensor3<S> {
        relu_backward_inplace(&mut dout.data, &tape.out.data);
        let d_h2 = self.bn2.backward(&tape.h2, &tape.st2, &dout);
        let mut d_r1 = self.conv2.backward(&tape.r1, &d_h2, true).expect("input grad");
        relu_backward_inplace(&mut d_r1.data, &tape.r1.data);
        let d_h1 = self.bn1.backward(&tape.h1, &tape.st1, &d_r1);
        let mut dx = self.conv1.backward(x, &d_h1, true).expect("input grad");
        match (&mut self.projection, &tape.proj) {
            (Some((conv, bn)), Some((p, stp))) => {
                let d_p = bn.backward(p, stp, &dout);
                add_inplace(&mut dx, &conv.backward(x, &d_p, true).expect("input grad"));
            }
            _ => add_inplace(&mut dx, &dout),
        }
        dx
    }
}

/// Everything the backward pass needs from one training forward pass.
pub struct Tape<S> {
    batch: usize,
    input: Tensor3<S>,
    stem_h: Tensor3<S>,
    stem_st: BnStats<S>,
    stem_r: Tensor3<S>,
    pool_arg: Vec<u32>,
    pool_out: Tensor3<S>,
    blocks: Vec<BlockTape<S>>,
    metadata: Vec<S>,
    meta_act: Vec<S>,
    concat: Vec<S>,
    comb_act: Vec<S>,
    drop_mask: Vec<S>,
    dropped: Vec<S>,
    /// Softmax output, row-major `[batch][n_classes]`.
    pub probs: Vec<f64>,
}

/// Mutable access to one trainable array and its gradient.
pub struct ParamMut<'a, S> {
    pub name: String,
    pub value: &'a mut [S],
    pub grad: &'a [S],
}

/// A named array of network state (weights or batch-norm running statistics).
pub struct StateRef<'a, S> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [S],
}

pub struct StateMut<'a, S> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [S],
}

#[derive(Debug, Clone)]
pub struct Network<S> {
    pub config: ModelConfig,
    pub stem_conv: CausalConv1d<S>,
    pub stem_bn: BatchNorm<S>,
    pub blocks: Vec<ResidualBlock<S>>,
    pub metadata: Dense<S>,
    pub combined: Dense<S>,
    pub output: Dense<S>,
}

fn softmax_rows(logits: &[f64], n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(n) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / sum));
    }
    out
}

impl<S: Scalar> Network<S> {
    /// Builds a freshly initialized network.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stem_conv = CausalConv1d::new(1, config.stem_filters, config.stem_kernel, 1, config.stem_stride, &mut rng);
        let stem_bn = BatchNorm::new(config.stem_filters);
        let mut blocks = Vec::with_capacity(config.stage_filters.len() * config.blocks_per_stage);
        let mut width = config.stem_filters;
        let mut dil = config.dilations.chunks(2);
        for (stage, &filters) in config.stage_filters.iter().enumerate() {
            for b in 0..config.blocks_per_stage {
                let d = dil.next().expect("validated schedule");
                let stride = if b == 0 { config.stage_stride(stage) } else { 1 };
                blocks.push(ResidualBlock::new(width, filters, config.kernel, (d[0], d[1]), stride, &mut rng));
                width = filters;
            }
        }
        let metadata = Dense::new(config.metadata_features, config.metadata_units, 2.0, &mut rng);
        let combined = Dense::new(width + config.metadata_units, config.combined_units, 2.0, &mut rng);
        let output = Dense::new(config.combined_units, config.n_classes, 1.0, &mut rng);
        Ok(Network {
            config,
            stem_conv,
            stem_bn,
            blocks,
            metadata,
            combined,
            output,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    fn check_shapes(&self, seq: &[S], meta: Option<&[S]>, batch: usize) -> Result<(), ModelError> {
        if batch == 0 {
            return Err(ModelError::Shape("empty batch".into()));
        }
        if seq.len() != batch * self.config.seq_len {
            return Err(ModelError::Shape(format!(
                "sequence batch has {} values, expected {batch} x {}",
                seq.len(),
                self.config.seq_len
            )));
        }
        if let Some(meta) = meta {
            if meta.len() != batch * self.config.metadata_features {
                return Err(ModelError::Shape(format!(
                    "metadata batch has {} values, expected {batch} x {}",
                    meta.len(),
                    self.config.metadata_features
                )));
            }
        }
        Ok(())
    }

    fn trunk_infer(&self, seq: &[S], batch: usize, linear: bool) -> Tensor3<S> {
        let x = Tensor3::from_data(1, batch, self.config.seq_len, seq.to_vec());
        let mut h = self.stem_bn.forward_infer(&self.stem_conv.forward(&x));
        let mut h = if linear {
            mean_pool_causal(&h, self.config.pool_window, self.config.pool_stride)
        } else {
            relu_inplace(&mut h.data);
            max_pool_causal(&h, self.config.pool_window, self.config.pool_stride).0
        };
        for block in &self.blocks {
            h = block.forward_infer(&h, linear);
        }
        h
    }

    /// Inference-mode trunk feature map before temporal pooling,
    /// `[width][batch][trunk_len]`.
    pub fn trunk_features(&self, seq: &[S], batch: usize) -> Result<Tensor3<S>, ModelError> {
        self.check_shapes(seq, None, batch)?;
        Ok(self.trunk_infer(seq, batch, false))
    }

    /// Trunk feature map with every rectifier replaced by the identity and
    /// max-pooling replaced by a window mean, so each output is a linear
    /// function of exactly its receptive window.
    pub fn trunk_features_linear(&self, seq: &[S], batch: usize) -> Result<Tensor3<S>, ModelError> {
        self.check_shapes(seq, None, batch)?;
        Ok(self.trunk_infer(seq, batch, true))
    }

    fn head_logits_infer(&self, features: &[S], meta: &[S], batch: usize) -> Vec<S> {
        let width = self.config.trunk_width();
        let mut m = self.metadata.forward(meta, batch);
        relu_inplace(&mut m);
        let concat = concat_rows(features, width, &m, self.config.metadata_units, batch);
        let mut c = self.combined.forward(&concat, batch);
        relu_inplace(&mut c);
        self.output.forward(&c, batch)
    }

    /// Inference mode: batch-norm uses running statistics and dropout is off.
    pub fn forward(&self, seq: &[S], meta: &[S], batch: usize) -> Result<ProbabilityMatrix, ModelError> {
        self.check_shapes(seq, Some(meta), batch)?;
        let trunk = self.trunk_infer(seq, batch, false);
        let features = global_avg_pool(&trunk);
        let logits = self.head_logits_infer(&features, meta, batch);
        let logits: Vec<f64> = logits.iter().map(|v| v.to_f64().unwrap()).collect();
        ProbabilityMatrix::new(self.n_classes(), softmax_rows(&logits, self.n_classes()))
            .map_err(|e| ModelError::NonFinite(format!("softmax output invalid: {e}")))
    }

    /// Training mode: batch statistics (running statistics are updated) and
    /// dropout drawn from `rng`.
    pub fn forward_train<R: Rng>(
        &mut self,
        seq: &[S],
        meta: &[S],
        batch: usize,
        rng: &mut R,
    ) -> Result<Tape<S>, ModelError> {
        self.check_shapes(seq, Some(meta), batch)?;
        let cfg = self.config.clone();
        let input = Tensor3::from_data(1, batch, cfg.seq_len, seq.to_vec());
        let stem_h = self.stem_conv.forward(&input);
        let (mut stem_r, stem_st) = self.stem_bn.forward_train(&stem_h);
        relu_inplace(&mut stem_r.data);
        let (pool_out, pool_arg) = max_pool_causal(&stem_r, cfg.pool_window, cfg.pool_stride);

        let mut blocks: Vec<BlockTape<S>> = Vec::with_capacity(self.blocks.len());
        for block in self.blocks.iter_mut() {
            let x = blocks.last().map_or(&pool_out, |t| &t.out);
            let tape = block.forward_train(x);
            blocks.push(tape);
        }
        let trunk = &blocks.last().expect("at least one block").out;
        let features = global_avg_pool(trunk);

        let mut meta_act = self.metadata.forward(meta, batch);
        relu_inplace(&mut meta_act);
        let concat = concat_rows(&features, cfg.trunk_width(), &meta_act, cfg.metadata_units, batch);
        let mut comb_act = self.combined.forward(&concat, batch);
        relu_inplace(&mut comb_act);

        let keep = 1.0 - cfg.dropout;
        let scale = S::of(1.0 / keep);
        let drop_mask: Vec<S> = (0..comb_act.len())
            .map(|_| {
                if cfg.dropout == 0.0 || rng.gen::<f64>() < keep {
                    scale
                } else {
                    S::zero()
                }
            })
            .collect();
        let dropped: Vec<S> = comb_act.iter().zip(&drop_mask).map(|(&a, &m)| a * m).collect();
        let logits = self.output.forward(&dropped, batch);
        let logits: Vec<f64> = logits.iter().map(|v| v.to_f64().unwrap()).collect();
        let probs = softmax_rows(&logits, cfg.n_classes);

        Ok(Tape {
            batch,
            input,
            stem_h,
            stem_st,
            stem_r,
            pool_arg,
            pool_out,
            blocks,
            metadata: meta.to_vec(),
            meta_act,
            concat,
            comb_act,
            drop_mask,
            dropped,
            probs,
        })
    }

    /// Mean categorical cross-entropy of a training pass; back-propagates it
    /// into the accumulated gradients.
    pub fn backward(&mut self, tape: &Tape<S>, labels: &[usize]) -> Result<f64, ModelError> {
        let batch = tape.batch;
        let n = self.n_classes();
        if labels.len() != batch {
            return Err(ModelError::Shape(format!("{} labels for batch {batch}", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
            return Err(ModelError::Shape(format!("label {bad} outside {n} classes")));
        }
        let mut loss = 0.0;
        let mut d_logits = Vec::with_capacity(batch * n);
        for (row, &label) in tape.probs.chunks(n).zip(labels) {
            loss -= row[label].max(f64::MIN_POSITIVE).ln();
            for (j, &p) in row.iter().enumerate() {
                let target = if j == label { 1.0 } else { 0.0 };
                d_logits.push(S::of((p - target) / batch as f64));
            }
        }
        loss /= batch as f64;

        let cfg = &self.config;
        let (width, meta_units) = (cfg.trunk_width(), cfg.metadata_units);
        let mut d_drop = self.output.backward(&tape.dropped, &d_logits, batch, true).expect("input grad");
        for (g, &m) in d_drop.iter_mut().zip(&tape.drop_mask) {
            *g *= m;
        }
        relu_backward_inplace(&mut d_drop, &tape.comb_act);
        let d_concat = self.combined.backward(&tape.concat, &d_drop, batch, true).expect("input grad");
        let (d_features, mut d_meta) = split_rows(&d_concat, width, meta_units, batch);
        relu_backward_inplace(&mut d_meta, &tape.meta_act);
        self.metadata.backward(&tape.metadata, &d_meta, batch, false);

        let trunk = &tape.blocks.last().expect("at least one block").out;
        let mut d = global_avg_pool_backward(&d_features, width, batch, trunk.len);
        for i in (0..self.blocks.len()).rev() {
            let x = if i == 0 { &tape.pool_out } else { &tape.blocks[i - 1].out };
            d = self.blocks[i].backward(x, &tape.blocks[i], d);
        }
        let mut d_r = max_pool_backward(&d, &tape.pool_arg, tape.stem_r.len);
        relu_backward_inplace(&mut d_r.data, &tape.stem_r.data);
        let d_h = self.stem_bn.backward(&tape.stem_h, &tape.stem_st, &d_r);
        self.stem_conv.backward(&tape.input, &d_h, false);
        Ok(loss)
    }

    pub fn zero_grad(&mut self) {
        let zero = |v: &mut Vec<S>| v.iter_mut().for_each(|g| *g = S::zero());
        zero(&mut self.stem_conv.grad);
        zero_bn(&mut self.stem_bn);
        for b in &mut self.blocks {
            zero(&mut b.conv1.grad);
            zero(&mut b.conv2.grad);
            zero_bn(&mut b.bn1);
            zero_bn(&mut b.bn2);
            if let Some((c, bn)) = &mut b.projection {
                zero(&mut c.grad);
                zero_bn(bn);
            }
        }
        for d in [&mut self.metadata, &mut self.combined, &mut self.output] {
            zero(&mut d.grad_weight);
            zero(&mut d.grad_bias);
        }
    }

    fn block_prefix(&self, i: usize) -> String {
        let bps = self.config.blocks_per_stage;
        format!("stage{}.block{}", i / bps + 1, i % bps)
    }

    /// Trainable arrays with their gradients, in a fixed order.
    pub fn params_mut(&mut self) -> Vec<ParamMut<'_, S>> {
        let prefixes: Vec<String> = (0..self.blocks.len()).map(|i| self.block_prefix(i)).collect();
        let mut out = Vec::new();
        conv_params(&mut out, "stem.conv", &mut self.stem_conv);
        bn_params(&mut out, "stem.bn", &mut self.stem_bn);
        for (b, p) in self.blocks.iter_mut().zip(&prefixes) {
            conv_params(&mut out, &format!("{p}.conv1"), &mut b.conv1);
            bn_params(&mut out, &format!("{p}.bn1"), &mut b.bn1);
            conv_params(&mut out, &format!("{p}.conv2"), &mut b.conv2);
            bn_params(&mut out, &format!("{p}.bn2"), &mut b.bn2);
            if let Some((c, bn)) = &mut b.projection {
                conv_params(&mut out, &format!("{p}.proj_conv"), c);
                bn_params(&mut out, &format!("{p}.proj_bn"), bn);
            }
        }
        dense_params(&mut out, "metadata", &mut self.metadata);
        dense_params(&mut out, "combined", &mut self.combined);
        dense_params(&mut out, "output", &mut self.output);
        out
    }

    pub fn n_parameters(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.value.len()).sum()
    }

    /// Every persisted array: weights plus batch-norm running statistics.
    pub fn state(&self) -> Vec<StateRef<'_, S>> {
        let mut out = Vec::new();
        conv_ref(&mut out, "stem.conv", &self.stem_conv);
        bn_ref(&mut out, "stem.bn", &self.stem_bn);
        for (i, b) in self.blocks.iter().enumerate() {
            let p = self.block_prefix(i);
            conv_ref(&mut out, &format!("{p}.conv1"), &b.conv1);
            bn_ref(&mut out, &format!("{p}.bn1"), &b.bn1);
            conv_ref(&mut out, &format!("{p}.conv2"), &b.conv2);
            bn_ref(&mut out, &format!("{p}.bn2"), &b.bn2);
            if let Some((c, pb)) = &b.projection {
                conv_ref(&mut out, &format!("{p}.proj_conv"), c);
                bn_ref(&mut out, &format!("{p}.proj_bn"), pb);
            }
        }
        dense_ref(&mut out, "metadata", &self.metadata);
        dense_ref(&mut out, "combined", &self.combined);
        dense_ref(&mut out, "output", &self.output);
        out
    }

    pub fn state_mut(&mut self) -> Vec<StateMut<'_, S>> {
        let prefixes: Vec<String> = (0..self.blocks.len()).map(|i| self.block_prefix(i)).collect();
        let mut out = Vec::new();
        conv_state(&mut out, "stem.conv", &mut self.stem_conv);
        bn_state(&mut out, "stem.bn", &mut self.stem_bn);
        for (b, p) in self.blocks.iter_mut().zip(&prefixes) {
            conv_state(&mut out, &format!("{p}.conv1"), &mut b.conv1);
            bn_state(&mut out, &format!("{p}.bn1"), &mut b.bn1);
            conv_state(&mut out, &format!("{p}.conv2"), &mut b.conv2);
            bn_state(&mut out, &format!("{p}.bn2"), &mut b.bn2);
            if let Some((c, bn)) = &mut b.projection {
                conv_state(&mut out, &format!("{p}.proj_conv"), c);
                bn_state(&mut out, &format!("{p}.proj_bn"), bn);
            }
        }
        dense_state(&mut out, "metadata", &mut self.metadata);
        dense_state(&mut out, "combined", &mut self.combined);
        dense_state(&mut out, "output", &mut self.output);
        out
    }

    /// True when every weight and running statistic is finite.
    pub fn is_finite(&self) -> bool {
        self.state().iter().all(|s| s.data.iter().all(|v| v.is_finite()))
    }
}

fn zero_bn<S: Scalar>(bn: &mut BatchNorm<S>) {
    bn.grad_gamma.iter_mut().for_each(|g| *g = S::zero());
    bn.grad_beta.iter_mut().for_each(|g| *g = S::zero());
}

fn conv_params<'a, S>(out: &mut Vec<ParamMut<'a, S>>, p: &str, c: &'a mut CausalConv1d<S>) {
    out.push(ParamMut {
        name: format!("{p}.weight"),
        value: &mut c.weight,
        grad: &c.grad,
    });
}

fn bn_params<'a, S>(out: &mut Vec<ParamMut<'a, S>>, p: &str, b: &'a mut BatchNorm<S>) {
    out.push(ParamMut {
        name: format!("{p}.gamma"),
        value: &mut b.gamma,
        grad: &b.grad_gamma,
    });
    out.push(ParamMut {
        name: format!("{p}.beta"),
        value: &mut b.beta,
        grad: &b.grad_beta,
    });
}

fn dense_params<'a, S>(out: &mut Vec<ParamMut<'a, S>>, p: &str, d: &'a mut Dense<S>) {
    out.push(ParamMut {
        name: format!("{p}.weight"),
        value: &mut d.weight,
        grad: &d.grad_weight,
    });
    out.push(ParamMut {
        name: format!("{p}.bias"),
        value: &mut d.bias,
        grad: &d.grad_bias,
    });
}

fn conv_ref<'a, S>(out: &mut Vec<StateRef<'a, S>>, p: &str, c: &'a CausalConv1d<S>) {
    out.push(StateRef {
        name: format!("{p}.weight"),
        shape: vec![c.c_out, c.c_in, c.kernel],
        data: &c.weight,
    });
}

fn bn_ref<'a, S>(out: &mut Vec<StateRef<'a, S>>, p: &str, b: &'a BatchNorm<S>) {
    let c = b.channels;
    out.push(StateRef { name: format!("{p}.gamma"), shape: vec![c], data: &b.gamma });
    out.push(StateRef { name: format!("{p}.beta"), shape: vec![c], data: &b.beta });
    out.push(StateRef { name: format!("{p}.running_mean"), shape: vec![c], data: &b.running_mean });
    out.push(StateRef { name: format!("{p}.running_var"), shape: vec![c], data: &b.running_var });
}

fn dense_ref<'a, S>(out: &mut Vec<StateRef<'a, S>>, p: &str, d: &'a Dense<S>) {
    out.push(StateRef {
        name: format!("{p}.weight"),
        shape: vec![d.n_out, d.n_in],
        data: &d.weight,
    });
    out.push(StateRef { name: format!("{p}.bias"), shape: vec![d.n_out], data: &d.bias });
}

fn conv_state<'a, S>(out: &mut Vec<StateMut<'a, S>>, p: &str, c: &'a mut CausalConv1d<S>) {
    out.push(StateMut {
        name: format!("{p}.weight"),
        shape: vec![c.c_out, c.c_in, c.kernel],
        data: &mut c.weight,
    });
}

fn bn_state<'a, S>(out: &mut Vec<StateMut<'a, S>>, p: &str, b: &'a mut BatchNorm<S>) {
    let c = b.channels;
    out.push(StateMut { name: format!("{p}.gamma"), shape: vec![c], data: &mut b.gamma });
    out.push(StateMut { name: format!("{p}.beta"), shape: vec![c], data: &mut b.beta });
    out.push(StateMut { name: format!("{p}.running_mean"), shape: vec![c], data: &mut b.running_mean });
    out.push(StateMut { name: format!("{p}.running_var"), shape: vec![c], data: &mut b.running_var });
}

fn dense_state<'a, S>(out: &mut Vec<StateMut<'a, S>>, p: &str, d: &'a mut Dense<S>) {
    out.push(StateMut {
        name: format!("{p}.weight"),
        shape: vec![d.n_out, d.n_in],
        data: &mut d.weight,
    });
    out.push(StateMut { name: format!("{p}.bias"), shape: vec![d.n_out], data: &mut d.bias });
}

fn concat_rows<S: Scalar>(a: &[S], wa: usize, b: &[S], wb: usize, batch: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(batch * (wa + wb));
    for r in 0..batch {
        out.extend_from_slice(&a[r * wa..(r + 1) * wa]);
        out.extend_from_slice(&b[r * wb..(r + 1) * wb]);
    }
    out
}

fn split_rows<S: Scalar>(x: &[S], wa: usize, wb: usize, batch: usize) -> (Vec<S>, Vec<S>) {
    let mut a = Vec::with_capacity(batch * wa);
    let mut b = Vec::with_capacity(batch * wb);
    for row in x.chunks(wa + wb) {
        a.extend_from_slice(&row[..wa]);
        b.extend_from_slice(&row[wa..]);
    }
    (a, b)
}
