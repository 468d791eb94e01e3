use serde::{Deserialize, Serialize};

use super::conv::{receptive_field, ConvGeometry};
use super::ModelError;
use crate::features::{METADATA_LEN, SEQ_LEN};

/// Architecture of one dilated causal 1-D ResNet-18 with the metadata branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub seq_len: usize,
    pub stem_kernel: usize,
    pub stem_filters: usize,
    pub stem_stride: usize,
    pub pool_window: usize,
    pub pool_stride: usize,
    /// Output width of each of the four stages.
    pub stage_filters: Vec<usize>,
    pub blocks_per_stage: usize,
    pub kernel: usize,
    /// Dilation of each stage convolution, in network order.
    pub dilations: Vec<usize>,
    pub metadata_features: usize,
    pub metadata_units: usize,
    pub combined_units: usize,
    pub dropout: f64,
    pub n_classes: usize,
}

/// Number of convolutions inside the residual stages.
pub const STAGE_CONVS: usize = 16;

/// `1, 2, 4, ..., max, 1, 2, ...` of length `n`.
pub fn dilation_cycle(n: usize, max: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    let mut d = 1;
    for _ in 0..n {
        out.push(d);
        d = if d >= max { 1 } else { d * 2 };
    }
    out
}

impl ModelConfig {
    pub fn new(n_classes: usize) -> Self {
        ModelConfig {
            seq_len: SEQ_LEN,
            stem_kernel: 7,
            stem_filters: 64,
            stem_stride: 2,
            pool_window: 3,
            pool_stride: 2,
            stage_filters: vec![64, 128, 256, 512],
            blocks_per_stage: 2,
            kernel: 3,
            dilations: dilation_cycle(STAGE_CONVS, 8),
            metadata_features: METADATA_LEN,
            metadata_units: 32,
            combined_units: 1024,
            dropout: 0.5,
            n_classes,
        }
    }

    /// Small network (32-step input, width 4) for gradient checks and fast tests.
    pub fn miniature(n_classes: usize) -> Self {
        ModelConfig {
            seq_len: 32,
            stem_filters: 4,
            stage_filters: vec![4, 4, 4, 4],
            metadata_units: 4,
            combined_units: 8,
            ..ModelConfig::new(n_classes)
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.stage_filters.len() * self.blocks_per_stage * 2 != STAGE_CONVS {
            return bad(format!(
                "{} stages x {} blocks gives {} stage convolutions, expected {STAGE_CONVS}",
                self.stage_filters.len(),
                self.blocks_per_stage,
                self.stage_filters.len() * self.blocks_per_stage * 2
            ));
        }
        if self.dilations.len() != STAGE_CONVS {
            return bad(format!(
                "dilation schedule has {} entries, expected {STAGE_CONVS}",
                self.dilations.len()
            ));
        }
        let positive = [
            ("seq_len", self.seq_len),
            ("stem_kernel", self.stem_kernel),
            ("stem_filters", self.stem_filters),
            ("stem_stride", self.stem_stride),
            ("pool_window", self.pool_window),
            ("pool_stride", self.pool_stride),
            ("kernel", self.kernel),
            ("metadata_features", self.metadata_features),
            ("metadata_units", self.metadata_units),
            ("combined_units", self.combined_units),
        ];
        for (name, v) in positive {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.stage_filters.contains(&0) || self.dilations.contains(&0) {
            return bad("stage widths and dilations must be positive".into());
        }
        if self.n_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    /// Stride of the first convolution of stage `stage`.
    pub fn stage_stride(&self, stage: usize) -> usize {
        if stage == 0 {
            1
        } else {
            2
        }
    }

    pub fn trunk_width(&self) -> usize {
        *self.stage_filters.last().expect("validated")
    }

    /// Geometry of the longest path through the trunk: stem, pool, and every
    /// stage convolution.
    pub fn trunk_path(&self) -> Vec<ConvGeometry> {
        let mut path = vec![
            ConvGeometry {
                kernel: self.stem_kernel,
                dilation: 1,
                stride: self.stem_stride,
            },
            ConvGeometry {
                kernel: self.pool_window,
                dilation: 1,
                stride: self.pool_stride,
            },
        ];
        let mut d = self.dilations.iter();
        for stage in 0..self.stage_filters.len() {
            for block in 0..self.blocks_per_stage {
                for conv in 0..2 {
                    let stride = if block == 0 && conv == 0 { self.stage_stride(stage) } else { 1 };
                    path.push(ConvGeometry {
                        kernel: self.kernel,
                        dilation: *d.next().expect("validated"),
                        stride,
                    });
                }
            }
        }
        path
    }

    /// Input steps per trunk output step.
    pub fn trunk_stride(&self) -> usize {
        self.trunk_path().iter().map(|g| g.stride).product()
    }

    pub fn trunk_len(&self) -> usize {
        self.trunk_path()
            .iter()
            .fold(self.seq_len, |len, g| len.div_ceil(g.stride))
    }

    /// Nominal receptive field of one trunk output.
    pub fn receptive_field(&self) -> usize {
        receptive_field(&self.trunk_path())
    }

    /// Input indices (inclusive) that can influence trunk output `position`.
    pub fn receptive_window(&self, position: usize) -> (usize, usize) {
        let end = position * self.trunk_stride();
        ((end + 1).saturating_sub(self.receptive_field()), end)
    }
}
