//! Model inputs derived from a [`RawTrace`]: the padded direction sequence,
//! the padded inter-packet timing sequence, and seven whole-trace statistics.

use serde::{Deserialize, Serialize};

use crate::traces::{Direction, RawTrace};

/// Fixed input length of both sequence models.
pub const SEQ_LEN: usize = 5000;

/// Number of cumulative statistics in a [`MetadataVector`].
pub const METADATA_LEN: usize = 7;

/// Packet directions (`+1`/`-1`) truncated to the sequence length, then
/// zero-padded at the end.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectionSequence(pub Vec<i8>);

/// Inter-packet delays in seconds; the first entry is always 0 and the
/// padding is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingSequence(pub Vec<f64>);

/// Whole-trace statistics in fixed order:
/// total, incoming and outgoing packet counts, incoming and outgoing ratios,
/// total transmission time and average time per packet (seconds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetadataVector(pub [f64; METADATA_LEN]);

impl MetadataVector {
    pub fn total_packets(&self) -> f64 {
        self.0[0]
    }
    pub fn incoming_packets(&self) -> f64 {
        self.0[1]
    }
    pub fn outgoing_packets(&self) -> f64 {
        self.0[2]
    }
    pub fn incoming_ratio(&self) -> f64 {
        self.0[3]
    }
    pub fn outgoing_ratio(&self) -> f64 {
        self.0[4]
    }
    pub fn total_time(&self) -> f64 {
        self.0[5]
    }
    pub fn avg_time_per_packet(&self) -> f64 {
        self.0[6]
    }
}

pub fn extract_direction(trace: &RawTrace) -> DirectionSequence {
    extract_direction_len(trace, SEQ_LEN)
}

pub fn extract_direction_len(trace: &RawTrace, seq_len: usize) -> DirectionSequence {
    let mut values = vec![0i8; seq_len];
    for (slot, p) in values.iter_mut().zip(trace.packets()) {
        *slot = p.direction.sign();
    }
    DirectionSequence(values)
}

pub fn extract_timing(trace: &RawTrace) -> TimingSequence {
    extract_timing_len(trace, SEQ_LEN)
}

pub fn extract_timing_len(trace: &RawTrace, seq_len: usize) -> TimingSequence {
    let mut values = vec![0.0; seq_len];
    let packets = trace.packets();
    let n = packets.len().min(seq_len);
    for i in 1..n {
        values[i] = packets[i].timestamp - packets[i - 1].timestamp;
    }
    TimingSequence(values)
}

/// Statistics over the full trace, not the truncated prefix.
pub fn extract_metadata(trace: &RawTrace) -> MetadataVector {
    let total = trace.len() as f64;
    let incoming = trace.count(Direction::Incoming) as f64;
    let outgoing = total - incoming;
    let total_time = trace.span();
    MetadataVector([
        total,
        incoming,
        outgoing,
        incoming / total,
        outgoing / total,
        total_time,
        total_time / total,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traces::Packet;
    use approx::assert_relative_eq;

    fn trace(points: &[(f64, i64)]) -> RawTrace {
        RawTrace::new(
            points
                .iter()
                .map(|&(t, d)| Packet::new(t, Direction::from_sign(d).unwrap()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn direction_pads_with_zeros() {
        let d = extract_direction(&trace(&[(0.0, 1), (0.1, -1)]));
        assert_eq!(d.0.len(), SEQ_LEN);
        assert_eq!(&d.0[..3], &[1, -1, 0]);
        assert!(d.0[2..].iter().all(|&v| v == 0));
    }

    #[test]
    fn exact_length_trace_has_no_pad() {
        let points: Vec<_> = (0..SEQ_LEN)
            .map(|i| (i as f64 * 0.01, if i % 3 == 0 { -1 } else { 1 }))
            .collect();
        let d = extract_direction(&trace(&points));
        assert!(d.0.iter().all(|&v| v != 0));
        assert_eq!(d.0[SEQ_LEN - 1], if (SEQ_LEN - 1) % 3 == 0 { -1 } else { 1 });
    }

    #[test]
    fn timing_deltas_start_at_zero() {
        let t = extract_timing(&trace(&[(0.0, 1), (0.1, -1), (0.3, 1)]));
        assert_eq!(t.0[0], 0.0);
        assert_relative_eq!(t.0[1], 0.1);
        assert_relative_eq!(t.0[2], 0.2, epsilon = 1e-12);
        assert!(t.0[3..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_packet_timing_is_all_zero() {
        let t = extract_timing(&trace(&[(7.5, 1)]));
        assert!(t.0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn metadata_hand_example() {
        let m = extract_metadata(&trace(&[(0.0, 1), (0.1, -1), (0.3, -1)]));
        let expected = [3.0, 2.0, 1.0, 2.0 / 3.0, 1.0 / 3.0, 0.3, 0.1];
        for (got, want) in m.0.iter().zip(expected) {
            assert_relative_eq!(*got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn metadata_single_outgoing_packet() {
        let m = extract_metadata(&trace(&[(4.0, 1)]));
        assert_eq!(m.0, [1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn metadata_ignores_start_offset() {
        let m = extract_metadata(&trace(&[(10.0, 1), (10.5, -1)]));
        assert_relative_eq!(m.total_time(), 0.5);
        assert_relative_eq!(m.avg_time_per_packet(), 0.25);
    }
}
