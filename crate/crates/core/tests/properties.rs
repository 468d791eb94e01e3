mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wfp_core::dataset::{split_corpus, UnmonitoredPools};
use wfp_core::defense::{assign_slots, simulate_constant_rate, DefenseConfig};
use wfp_core::ensemble::{apply_threshold, average_softmax};
use wfp_core::features::{extract_direction, extract_metadata, extract_timing, SEQ_LEN};
use wfp_core::metrics::open_world_metrics;
use wfp_core::model::ProbabilityMatrix;
use wfp_core::synthgen::{generate_site_profiles, generate_trace, Separability};
use wfp_core::traces::{Direction, TraceLabel};

fn random_probs(rng: &mut ChaCha8Rng, rows: usize, classes: usize) -> ProbabilityMatrix {
    let data: Vec<Vec<f64>> = (0..rows)
        .map(|_| {
            let raw: Vec<f64> = (0..classes).map(|_| rng.gen::<f64>().powi(3)).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| v / s).collect()
        })
        .collect();
    ProbabilityMatrix::from_rows(&data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_trace_features_hold_invariants(seed in any::<u64>(), hard in any::<bool>()) {
        let sep = if hard { Separability::Hard } else { Separability::Easy };
        let profiles = generate_site_profiles(3, seed, sep);
        for (i, profile) in profiles.iter().enumerate() {
            let trace = generate_trace(profile, seed ^ i as u64);
            let n = trace.len().min(SEQ_LEN);
            let d = extract_direction(&trace);
            prop_assert_eq!(d.0.iter().filter(|&&v| v != 0).count(), n);
            prop_assert!(d.0.iter().all(|&v| v == 0 || v == 1 || v == -1));
            let t = extract_timing(&trace);
            prop_assert!(t.0.iter().all(|&v| v >= 0.0));
            let span = trace.packets()[n - 1].timestamp - trace.packets()[0].timestamp;
            let sum: f64 = t.0.iter().sum();
            prop_assert!((sum - span).abs() <= 1e-9 * span.max(1.0));
            let m = extract_metadata(&trace);
            prop_assert_eq!(m.incoming_packets() + m.outgoing_packets(), m.total_packets());
            prop_assert!((m.incoming_ratio() + m.outgoing_ratio() - 1.0).abs() < 1e-12);
            prop_assert!(m.total_time() >= 0.0);
            prop_assert!((m.avg_time_per_packet() - m.total_time() / m.total_packets()).abs() < 1e-12);
        }
    }

    #[test]
    fn long_traces_truncate_to_the_first_packets(seed in any::<u64>(), len in 4990usize..7000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trace = common::biased_trace(&mut rng, len, 0.5);
        let d = extract_direction(&trace);
        for (i, p) in trace.packets().iter().take(SEQ_LEN).enumerate() {
            prop_assert_eq!(d.0[i], p.direction.sign());
        }
        let m = extract_metadata(&trace);
        prop_assert_eq!(m.total_packets(), len as f64);
    }

    #[test]
    fn splits_are_disjoint_and_cover_the_pools(
        sites in 1usize..6,
        per_site in 10usize..40,
        unmon_train in 0usize..60,
        unmon_test in 0usize..60,
        seed in any::<u64>(),
    ) {
        let n_unmon = unmon_train + unmon_test + 5;
        let mut labels = Vec::new();
        for class_id in 0..sites {
            for instance_id in 0..per_site {
                labels.push(TraceLabel { class_id, instance_id });
            }
        }
        for instance_id in 0..n_unmon {
            labels.push(TraceLabel { class_id: sites, instance_id });
        }
        let pools = UnmonitoredPools { train: unmon_train, test: unmon_test };
        let s = split_corpus(&labels, sites, pools, seed).unwrap();
        let mut seen = vec![0u8; labels.len()];
        for idx in [&s.train_idx, &s.val_idx, &s.test_idx] {
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
            for &i in idx.iter() {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c <= 1));
        let monitored_seen = (0..sites * per_site).filter(|&i| seen[i] == 1).count();
        prop_assert_eq!(monitored_seen, sites * per_site);
        prop_assert_eq!(seen.iter().filter(|&&c| c == 1).count(), sites * per_site + unmon_train + unmon_test);
        for site in 0..sites {
            let in_test = s.test_idx.iter().filter(|&&i| labels[i].class_id == site).count();
            prop_assert_eq!(in_test, per_site / 10);
        }
        let um_test = s.test_idx.iter().filter(|&&i| labels[i].class_id == sites).count();
        prop_assert_eq!(um_test, unmon_test);
    }

    #[test]
    fn defense_is_constant_rate_and_delay_only(
        seed in any::<u64>(),
        len in 1usize..400,
        pad in 1usize..50,
        rho_out in 0.001f64..0.1,
        rho_in in 0.001f64..0.1,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p_out = rng.gen_range(0.05..0.95);
        let trace = common::biased_trace(&mut rng, len, p_out);
        let config = DefenseConfig { rho_out, rho_in, pad_multiple: pad };
        let defended = simulate_constant_rate(&trace, &config).unwrap();
        for (dir, rho) in [(Direction::Outgoing, rho_out), (Direction::Incoming, rho_in)] {
            let ts: Vec<f64> = defended.packets().iter().filter(|p| p.direction == dir).map(|p| p.timestamp).collect();
            prop_assert_eq!(ts.len() % pad, 0);
            for (k, &t) in ts.iter().enumerate() {
                prop_assert_eq!(t, k as f64 * rho);
            }
        }
        let slots = assign_slots(&trace, &config);
        for (dir, rho, slots) in [(Direction::Outgoing, rho_out, &slots[0]), (Direction::Incoming, rho_in, &slots[1])] {
            let orig: Vec<f64> = trace.packets().iter().filter(|p| p.direction == dir).map(|p| p.timestamp).collect();
            prop_assert_eq!(orig.len(), slots.len());
            prop_assert!(slots.windows(2).all(|w| w[0] < w[1]));
            for (&t, &k) in orig.iter().zip(slots.iter()) {
                prop_assert!(k as f64 * rho >= t);
            }
        }
    }

    #[test]
    fn threshold_shrinks_the_monitored_set(seed in any::<u64>(), t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_probs(&mut rng, 50, 4);
        let a = apply_threshold(&p, lo, Some(3)).unwrap();
        let b = apply_threshold(&p, hi, Some(3)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(*y == 3 || (*x != 3 && x == y));
        }
        let zero = apply_threshold(&p, 0.0, Some(3)).unwrap();
        prop_assert!(zero.iter().enumerate().all(|(i, &c)| c == p.argmax(i).0));
    }

    #[test]
    fn ensemble_of_agreeing_models_keeps_the_argmax(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_probs(&mut rng, 40, 5);
        let b = random_probs(&mut rng, 40, 5);
        let avg = average_softmax(&a, &b).unwrap();
        for i in 0..40 {
            if a.argmax(i).0 == b.argmax(i).0 {
                prop_assert_eq!(avg.argmax(i).0, a.argmax(i).0);
            }
        }
        prop_assert_eq!(average_softmax(&a, &a).unwrap(), a);
    }

    #[test]
    fn open_world_rates_ignore_row_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pairs: Vec<(usize, usize)> = (0..200).map(|_| (rng.gen_range(0..4), rng.gen_range(0..4))).collect();
        pairs.push((0, 0));
        pairs.push((3, 3));
        let split = |v: &[(usize, usize)]| -> (Vec<usize>, Vec<usize>) { v.iter().copied().unzip() };
        let (p, l) = split(&pairs);
        let r = open_world_metrics(&p, &l, 3).unwrap();
        prop_assert!(r.multi_tpr <= r.two_tpr);
        use rand::seq::SliceRandom;
        pairs.shuffle(&mut rng);
        let (p2, l2) = split(&pairs);
        prop_assert_eq!(open_world_metrics(&p2, &l2, 3).unwrap(), r);
    }
}

#[test]
fn standardized_training_features_are_centered() {
    let corpus = wfp_core::synthgen::generate_corpus(
        &generate_site_profiles(4, 3, Separability::Easy),
        20,
        0,
        3,
    );
    let ds = common::dataset_with_len(&corpus, SEQ_LEN, UnmonitoredPools::default(), 3);
    let train = &ds.manifest.splits.train;
    let l = ds.seq_len();
    let mut timing = Vec::new();
    for &r in train {
        let n = ds.lengths[r].min(l);
        timing.extend(ds.timing[r * l..r * l + n].iter().map(|&v| v as f64));
    }
    let mean = timing.iter().sum::<f64>() / timing.len() as f64;
    let var = timing.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / timing.len() as f64;
    assert!(mean.abs() < 1e-4, "timing mean {mean}");
    assert!((var.sqrt() - 1.0).abs() < 1e-4, "timing std {}", var.sqrt());
    for f in 0..7 {
        let col: Vec<f64> = train.iter().map(|&r| ds.metadata[r * 7 + f] as f64).collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
        assert!(mean.abs() < 1e-4, "feature {f} mean {mean}");
        assert!((sd - 1.0).abs() < 1e-4, "feature {f} std {sd}");
    }
}
