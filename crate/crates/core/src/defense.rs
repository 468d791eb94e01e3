//! Constant-rate padding defense over raw traces.
//!
//! Each direction transmits on its own fixed schedule of slots
//! `0, rho, 2*rho, ...`. Real packets take the earliest free slot at or after
//! their original time; every other slot up to the padded end carries a dummy
//! packet, so the attacker sees a perfectly regular stream whose length is a
//! multiple of `pad_multiple`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::traces::{read_trace, write_trace, CorpusError, Direction, Packet, RawTrace};

#[derive(Debug, Error)]
pub enum DefenseError {
    #[error("invalid defense config: {0}")]
    Config(String),
    #[error("overhead undefined: {0}")]
    Overhead(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefenseConfig {
    /// Seconds between outgoing slots.
    pub rho_out: f64,
    /// Seconds between incoming slots.
    pub rho_in: f64,
    /// Per-direction packet counts are padded to a multiple of this.
    pub pad_multiple: usize,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        DefenseConfig {
            rho_out: 0.04,
            rho_in: 0.012,
            pad_multiple: 100,
        }
    }
}

impl DefenseConfig {
    pub fn validate(&self) -> Result<(), DefenseError> {
        if !(self.rho_out.is_finite() && self.rho_out > 0.0) {
            return Err(DefenseError::Config(format!("rho_out must be positive, got {}", self.rho_out)));
        }
        if !(self.rho_in.is_finite() && self.rho_in > 0.0) {
            return Err(DefenseError::Config(format!("rho_in must be positive, got {}", self.rho_in)));
        }
        if self.pad_multiple == 0 {
            return Err(DefenseError::Config("pad_multiple must be at least 1".into()));
        }
        Ok(())
    }

    fn rho(&self, direction: Direction) -> f64 {
        match direction {
            Direction::Outgoing => self.rho_out,
            Direction::Incoming => self.rho_in,
        }
    }
}

/// Smallest slot index `k` with `k * rho >= t`.
fn first_slot_at_or_after(t: f64, rho: f64) -> u64 {
    let mut k = (t / rho).ceil().max(0.0) as u64;
    while k > 0 && (k - 1) as f64 * rho >= t {
        k -= 1;
    }
    while (k as f64) * rho < t {
        k += 1;
    }
    k
}

/// Slot indices occupied by one direction's defended stream (real and dummy):
/// always `0..count` with `count` a positive multiple of `pad_multiple`.
fn schedule_direction(timestamps: &[f64], rho: f64, pad_multiple: usize) -> (Vec<u64>, u64) {
    let mut assigned = Vec::with_capacity(timestamps.len());
    let mut next_free = 0u64;
    for &t in timestamps {
        let slot = first_slot_at_or_after(t, rho).max(next_free);
        assigned.push(slot);
        next_free = slot + 1;
    }
    let l = pad_multiple as u64;
    let count = next_free.div_ceil(l).max(1) * l;
    (assigned, count)
}

/// Slot indices assigned to the real packets of each direction, in order.
/// Exposed for delay auditing.
pub fn assign_slots(trace: &RawTrace, config: &DefenseConfig) -> [Vec<u64>; 2] {
    [Direction::Outgoing, Direction::Incoming].map(|dir| {
        let ts: Vec<f64> = trace
            .packets()
            .iter()
            .filter(|p| p.direction == dir)
            .map(|p| p.timestamp)
            .collect();
        schedule_direction(&ts, config.rho(dir), config.pad_multiple).0
    })
}

pub fn simulate_constant_rate(trace: &RawTrace, config: &DefenseConfig) -> Result<RawTrace, DefenseError> {
    config.validate()?;
    let mut streams = Vec::with_capacity(2);
    for dir in [Direction::Outgoing, Direction::Incoming] {
        let ts: Vec<f64> = trace
            .packets()
            .iter()
            .filter(|p| p.direction == dir)
            .map(|p| p.timestamp)
            .collect();
        let (_, count) = schedule_direction(&ts, config.rho(dir), config.pad_multiple);
        let rho = config.rho(dir);
        streams.push((0..count).map(|k| Packet::new(k as f64 * rho, dir)).collect::<Vec<_>>());
    }
    let (outgoing, incoming) = (&streams[0], &streams[1]);

    // Merge by time; outgoing wins ties.
    let mut merged = Vec::with_capacity(outgoing.len() + incoming.len());
    let (mut i, mut j) = (0, 0);
    while i < outgoing.len() || j < incoming.len() {
        let take_out = j == incoming.len()
            || (i < outgoing.len() && outgoing[i].timestamp <= incoming[j].timestamp);
        if take_out {
            merged.push(outgoing[i]);
            i += 1;
        } else {
            merged.push(incoming[j]);
            j += 1;
        }
    }
    Ok(RawTrace::new(merged).expect("slot schedule is ordered"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Overhead {
    /// Extra packets relative to the original, in percent.
    pub bandwidth_pct: f64,
    /// Extra time span relative to the original, in percent.
    pub latency_pct: f64,
}

pub fn overhead(original: &RawTrace, defended: &RawTrace) -> Result<Overhead, DefenseError> {
    let n = original.len();
    if n == 0 {
        return Err(DefenseError::Overhead("original trace has no packets".into()));
    }
    let span = original.span();
    if span <= 0.0 {
        return Err(DefenseError::Overhead("original trace has zero duration".into()));
    }
    Ok(Overhead {
        bandwidth_pct: 100.0 * (defended.len() as f64 - n as f64) / n as f64,
        latency_pct: 100.0 * (defended.span() - span) / span,
    })
}

/// Corpus-level overhead summary written by the `defend` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadSummary {
    pub config: DefenseConfig,
    pub n_traces: usize,
    /// Traces whose latency overhead is undefined (zero original span).
    pub n_skipped: usize,
    pub mean_bandwidth_pct: f64,
    pub mean_latency_pct: f64,
}

pub fn summarize(pairs: &[(RawTrace, RawTrace)], config: DefenseConfig) -> OverheadSummary {
    let mut bw = 0.0;
    let mut lat = 0.0;
    let mut used = 0usize;
    for (orig, def) in pairs {
        if let Ok(o) = overhead(orig, def) {
            bw += o.bandwidth_pct;
            lat += o.latency_pct;
            used += 1;
        }
    }
    let denom = used.max(1) as f64;
    OverheadSummary {
        config,
        n_traces: pairs.len(),
        n_skipped: pairs.len() - used,
        mean_bandwidth_pct: bw / denom,
        mean_latency_pct: lat / denom,
    }
}

fn trace_files(root: &Path) -> Result<Vec<PathBuf>, DefenseError> {
    let mut out = Vec::new();
    for sub in ["monitored", "unmonitored"] {
        let dir = root.join(sub);
        if !dir.is_dir() {
            continue;
        }
        let io = |source| CorpusError::Io {
            path: dir.clone(),
            source,
        };
        for entry in fs::read_dir(&dir).map_err(io)? {
            let path = entry.map_err(io)?.path();
            if path.extension().is_some_and(|e| e == "txt") {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Defends every trace of a corpus directory into `output`, mirroring the
/// layout, and returns the overhead summary.
pub fn defend_corpus_dir(
    input: &Path,
    output: &Path,
    config: DefenseConfig,
) -> Result<OverheadSummary, DefenseError> {
    config.validate()?;
    let files = trace_files(input)?;
    if files.is_empty() {
        return Err(CorpusError::Layout(format!("no trace files under {}", input.display())).into());
    }
    let mut pairs = Vec::with_capacity(files.len());
    for path in files {
        let rel = path.strip_prefix(input).expect("listed under input");
        let dest = output.join(rel);
        if let Some(parent) = dest.parent() {
            fs::create_dir_all(parent).map_err(|source| CorpusError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        let original = read_trace(&path)?;
        let defended = simulate_constant_rate(&original, &config)?;
        write_trace(&dest, &defended)?;
        pairs.push((original, defended));
    }
    Ok(summarize(&pairs, config))
}
