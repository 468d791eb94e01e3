//! Seeded synthetic trace corpora with controllable class separability.
//!
//! Each site emits alternating outgoing/incoming bursts with geometric
//! lengths, separated by exponential inter-packet gaps. Burst lengths carry
//! the signal for the direction model; packet rate carries it for the timing
//! model.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Geometric, Normal};
use serde::{Deserialize, Serialize};

use crate::traces::{Corpus, Direction, Packet, RawTrace, TraceLabel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteProfile {
    pub site_id: usize,
    /// Mean length of an outgoing burst, in packets (at least 1).
    pub mean_burst_out: f64,
    /// Mean length of an incoming burst, in packets (at least 1).
    pub mean_burst_in: f64,
    /// Probability that a page load opens with an outgoing burst.
    pub outgoing_fraction: f64,
    /// Packets per second.
    pub rate: f64,
    pub trace_length_mean: usize,
    /// Relative timing noise: each gap is scaled by `1 + jitter * u`, `u ~ U(-1, 1)`.
    pub jitter: f64,
}

impl SiteProfile {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("mean_burst_out", self.mean_burst_out),
            ("mean_burst_in", self.mean_burst_in),
            ("rate", self.rate),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.mean_burst_out < 1.0 || self.mean_burst_in < 1.0 {
            return Err("mean burst lengths must be at least 1 packet".into());
        }
        if !(self.outgoing_fraction > 0.0 && self.outgoing_fraction < 1.0) {
            return Err(format!(
                "outgoing_fraction must lie in (0, 1), got {}",
                self.outgoing_fraction
            ));
        }
        if self.trace_length_mean == 0 {
            return Err("trace_length_mean must be positive".into());
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(format!("jitter must lie in [0, 1), got {}", self.jitter));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Separability {
    Easy,
    Hard,
}

impl FromStr for Separability {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "easy" => Ok(Separability::Easy),
            "hard" => Ok(Separability::Hard),
            other => Err(format!("unknown separability {other:?} (easy|hard)")),
        }
    }
}

impl fmt::Display for Separability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Separability::Easy => "easy",
            Separability::Hard => "hard",
        })
    }
}

/// SplitMix64 finalizer over `(base, stream, index)`, for per-item seeds.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const RATE_RANGE: (f64, f64) = (20.0, 1280.0);
const LENGTH_RANGE: (f64, f64) = (400.0, 3600.0);
const BURST_OUT_RANGE: (f64, f64) = (1.0, 6.0);
const BURST_IN_RANGE: (f64, f64) = (2.0, 20.0);

fn geometric_grid(n: usize, (lo, hi): (f64, f64)) -> Vec<f64> {
    if n == 1 {
        return vec![(lo * hi).sqrt()];
    }
    (0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
        .collect()
}

fn log_uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    (rng.gen_range(lo.ln()..=hi.ln())).exp()
}

/// Builds `n_sites` monitored-site profiles.
///
/// `Easy` spreads packet rate over a 64x geometric range in site order and
/// spreads trace length and burst lengths over independent shuffled grids.
/// `Hard` draws every site from the same narrow parameter box.
pub fn generate_site_profiles(n_sites: usize, seed: u64, separability: Separability) -> Vec<SiteProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, 0));
    match separability {
        Separability::Easy => {
            let rates = geometric_grid(n_sites, RATE_RANGE);
            let mut lengths = geometric_grid(n_sites, LENGTH_RANGE);
            let mut burst_out = geometric_grid(n_sites, BURST_OUT_RANGE);
            let mut burst_in = geometric_grid(n_sites, BURST_IN_RANGE);
            lengths.shuffle(&mut rng);
            burst_out.shuffle(&mut rng);
            burst_in.shuffle(&mut rng);
            (0..n_sites)
                .map(|i| {
                    let w: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-0.03..0.03f64).exp());
                    SiteProfile {
                        site_id: i,
                        mean_burst_out: (burst_out[i] * w[0]).max(1.0),
                        mean_burst_in: (burst_in[i] * w[1]).max(1.0),
                        outgoing_fraction: rng.gen_range(0.6..0.9),
                        rate: rates[i] * w[2],
                        trace_length_mean: (lengths[i] * w[3]).round() as usize,
                        jitter: 0.1,
                    }
                })
                .collect()
        }
        Separability::Hard => (0..n_sites)
            .map(|i| SiteProfile {
                site_id: i,
                mean_burst_out: rng.gen_range(2.0..3.0),
                mean_burst_in: rng.gen_range(6.0..9.0),
                outgoing_fraction: rng.gen_range(0.6..0.9),
                rate: rng.gen_range(80.0..120.0),
                trace_length_mean: rng.gen_range(900..1100),
                jitter: 0.5,
            })
            .collect(),
    }
}

/// A one-off profile drawn from the broad parameter ranges; used for
/// unmonitored pages.
pub fn sample_profile<R: Rng>(rng: &mut R, site_id: usize) -> SiteProfile {
    SiteProfile {
        site_id,
        mean_burst_out: log_uniform(rng, BURST_OUT_RANGE),
        mean_burst_in: log_uniform(rng, BURST_IN_RANGE),
        outgoing_fraction: rng.gen_range(0.6..0.9),
        rate: log_uniform(rng, RATE_RANGE),
        trace_length_mean: log_uniform(rng, LENGTH_RANGE).round() as usize,
        jitter: 0.1,
    }
}

fn burst_length<R: Rng>(rng: &mut R, mean: f64) -> usize {
    let p = (1.0 / mean).clamp(f64::MIN_POSITIVE, 1.0);
    let failures = Geometric::new(p).expect("valid probability").sample(rng);
    1 + failures as usize
}

/// Generates one page load. Timestamps start at 0 and are quantized to whole
/// microseconds so the trace survives the text format unchanged.
pub fn generate_trace(profile: &SiteProfile, seed: u64) -> RawTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spread = Normal::new(0.0, 0.1).expect("valid normal");
    let n = ((profile.trace_length_mean as f64) * (1.0 + spread.sample(&mut rng)))
        .round()
        .max(2.0) as usize;
    let gaps = Exp::new(profile.rate).expect("positive rate");

    let mut direction = if rng.gen_bool(profile.outgoing_fraction) {
        Direction::Outgoing
    } else {
        Direction::Incoming
    };
    let mut remaining_in_burst = 0usize;
    let mut clock = 0.0f64;
    let mut packets = Vec::with_capacity(n);
    for i in 0..n {
        if remaining_in_burst == 0 {
            if i > 0 {
                direction = match direction {
                    Direction::Outgoing => Direction::Incoming,
                    Direction::Incoming => Direction::Outgoing,
                };
            }
            let mean = match direction {
                Direction::Outgoing => profile.mean_burst_out,
                Direction::Incoming => profile.mean_burst_in,
            };
            remaining_in_burst = burst_length(&mut rng, mean);
        }
        if i > 0 {
            let noise = 1.0 + profile.jitter * rng.gen_range(-1.0..1.0);
            clock += gaps.sample(&mut rng) * noise.max(0.0);
        }
        let micros = (clock * 1e6).round();
        packets.push(Packet::new(micros / 1e6, direction));
        remaining_in_burst -= 1;
    }
    RawTrace::new(packets).expect("generator emits valid traces")
}

/// Monitored traces for every profile followed by `n_unmonitored` traces,
/// each from its own freshly sampled profile.
pub fn generate_corpus(
    profiles: &[SiteProfile],
    traces_per_site: usize,
    n_unmonitored: usize,
    seed: u64,
) -> Corpus {
    let n_mon = profiles.len();
    let mut entries = Vec::with_capacity(n_mon * traces_per_site + n_unmonitored);
    for (site, profile) in profiles.iter().enumerate() {
        for instance in 0..traces_per_site {
            let trace_seed = derive_seed(seed, 1 + site as u64, instance as u64);
            entries.push((
                generate_trace(profile, trace_seed),
                TraceLabel {
                    class_id: site,
                    instance_id: instance,
                },
            ));
        }
    }
    for id in 0..n_unmonitored {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX, id as u64));
        let profile = sample_profile(&mut rng, n_mon + id);
        let trace_seed = derive_seed(seed, u64::MAX - 1, id as u64);
        entries.push((
            generate_trace(&profile, trace_seed),
            TraceLabel {
                class_id: n_mon,
                instance_id: id,
            },
        ));
    }
    Corpus::new(entries, n_mon).expect("labels are in range by construction")
}
