#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wfp_core::dataset::{build_dataset, extract_features, fit_standardization, split_corpus, ProcessedDataset, UnmonitoredPools};
use wfp_core::traces::{Corpus, Direction, Packet, RawTrace, TraceLabel};

/// A trace whose packets are outgoing with probability `p_out`.
pub fn biased_trace<R: Rng>(rng: &mut R, len: usize, p_out: f64) -> RawTrace {
    let mut t = 0.0;
    let packets = (0..len)
        .map(|i| {
            if i > 0 {
                t += rng.gen_range(0.001..0.05);
            }
            let dir = if rng.gen_bool(p_out) {
                Direction::Outgoing
            } else {
                Direction::Incoming
            };
            Packet::new(t, dir)
        })
        .collect();
    RawTrace::new(packets).unwrap()
}

/// Two sites separated by the sign of the direction sum: site 0 is mostly
/// outgoing, site 1 mostly incoming.
pub fn separable_corpus(per_site: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for (class_id, p_out) in [(0, 0.9), (1, 0.1)] {
        for instance_id in 0..per_site {
            let len = rng.gen_range(40..120);
            entries.push((biased_trace(&mut rng, len, p_out), TraceLabel { class_id, instance_id }));
        }
    }
    Corpus::new(entries, 2).unwrap()
}

/// Processes `corpus` with rows cut to `seq_len` steps.
pub fn dataset_with_len(corpus: &Corpus, seq_len: usize, pools: UnmonitoredPools, seed: u64) -> ProcessedDataset {
    let labels = corpus.labels();
    let split = split_corpus(&labels, corpus.n_mon, pools, seed).unwrap();
    let features = extract_features(corpus, seq_len);
    let st = fit_standardization(&features, &split.train_idx).unwrap();
    build_dataset(&features, &labels, corpus.n_mon, &split, st).unwrap()
}
