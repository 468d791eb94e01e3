//! Raw packet traces, their on-disk text format, and labeled corpora.
//!
//! A trace file holds one packet per line as `<timestamp>\t<direction>`,
//! where the direction is `+1` (outgoing, toward the server) or `-1`
//! (incoming, toward the client). A corpus directory contains
//! `monitored/<site>-<instance>.txt` and `unmonitored/<id>.txt`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("trace contains no packets")]
    EmptyTrace,
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: timestamp {timestamp} is earlier than the previous packet ({previous})")]
    Order {
        line: usize,
        timestamp: f64,
        previous: f64,
    },
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus layout: {0}")]
    Layout(String),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: TraceError },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Packet direction as seen from the client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// Toward the server (`+1`).
    Outgoing,
    /// Toward the client (`-1`).
    Incoming,
}

impl Direction {
    pub fn sign(self) -> i8 {
        match self {
            Direction::Outgoing => 1,
            Direction::Incoming => -1,
        }
    }

    pub fn from_sign(sign: i64) -> Option<Direction> {
        match sign {
            1 => Some(Direction::Outgoing),
            -1 => Some(Direction::Incoming),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub timestamp: f64,
    pub direction: Direction,
}

impl Packet {
    pub fn new(timestamp: f64, direction: Direction) -> Self {
        Packet {
            timestamp,
            direction,
        }
    }
}

/// The time-ordered packet record of one page load.
///
/// Always non-empty, with finite non-negative, non-decreasing timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrace {
    packets: Vec<Packet>,
}

impl RawTrace {
    pub fn new(packets: Vec<Packet>) -> Result<Self, TraceError> {
        if packets.is_empty() {
            return Err(TraceError::EmptyTrace);
        }
        let mut previous = f64::NEG_INFINITY;
        for (i, p) in packets.iter().enumerate() {
            if !p.timestamp.is_finite() || p.timestamp < 0.0 {
                return Err(TraceError::Parse {
                    line: i + 1,
                    reason: format!("invalid timestamp {}", p.timestamp),
                });
            }
            if p.timestamp < previous {
                return Err(TraceError::Order {
                    line: i + 1,
                    timestamp: p.timestamp,
                    previous,
                });
            }
            previous = p.timestamp;
        }
        Ok(RawTrace { packets })
    }

    pub fn packets(&self) -> &[Packet] {
        &self.packets
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn first_timestamp(&self) -> f64 {
        self.packets[0].timestamp
    }

    pub fn last_timestamp(&self) -> f64 {
        self.packets[self.packets.len() - 1].timestamp
    }

    /// Time between the first and last packet.
    pub fn span(&self) -> f64 {
        self.last_timestamp() - self.first_timestamp()
    }

    pub fn count(&self, direction: Direction) -> usize {
        self.packets
            .iter()
            .filter(|p| p.direction == direction)
            .count()
    }

    pub fn into_packets(self) -> Vec<Packet> {
        self.packets
    }
}

/// Parses the text trace format. Blank lines are skipped.
pub fn parse_trace_file(text: &str) -> Result<RawTrace, TraceError> {
    let mut packets = Vec::new();
    let mut previous = f64::NEG_INFINITY;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.trim();
        if content.is_empty() {
            continue;
        }
        let mut fields = content.split('\t');
        let (ts, dir) = match (fields.next(), fields.next(), fields.next()) {
            (Some(ts), Some(dir), None) => (ts.trim(), dir.trim()),
            _ => {
                return Err(TraceError::Parse {
                    line,
                    reason: "expected <timestamp>\\t<direction>".into(),
                })
            }
        };
        let timestamp: f64 = ts.parse().map_err(|_| TraceError::Parse {
            line,
            reason: format!("bad timestamp {ts:?}"),
        })?;
        if !timestamp.is_finite() || timestamp < 0.0 {
            return Err(TraceError::Parse {
                line,
                reason: format!("timestamp {ts:?} must be finite and non-negative"),
            });
        }
        let direction = dir
            .parse::<i64>()
            .ok()
            .and_then(Direction::from_sign)
            .ok_or_else(|| TraceError::Parse {
                line,
                reason: format!("direction {dir:?} is not +1 or -1"),
            })?;
        if timestamp < previous {
            return Err(TraceError::Order {
                line,
                timestamp,
                previous,
            });
        }
        previous = timestamp;
        packets.push(Packet::new(timestamp, direction));
    }
    if packets.is_empty() {
        return Err(TraceError::EmptyTrace);
    }
    Ok(RawTrace { packets })
}

/// Renders a trace in the canonical `%.6f<TAB>%+d` line format.
pub fn serialize_trace(trace: &RawTrace) -> String {
    let mut out = String::with_capacity(trace.len() * 12);
    for p in trace.packets() {
        let _ = writeln!(out, "{:.6}\t{:+}", p.timestamp, p.direction.sign());
    }
    out
}

pub fn read_trace(path: &Path) -> Result<RawTrace, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_trace_file(&text).map_err(|source| CorpusError::File {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_trace(path: &Path, trace: &RawTrace) -> Result<(), CorpusError> {
    fs::write(path, serialize_trace(trace)).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Class assignment of one trace. Unmonitored traces carry `class_id == n_mon`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TraceLabel {
    pub class_id: usize,
    pub instance_id: usize,
}

impl TraceLabel {
    pub fn is_monitored(&self, n_mon: usize) -> bool {
        self.class_id < n_mon
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub entries: Vec<(RawTrace, TraceLabel)>,
    pub n_mon: usize,
}

impl Corpus {
    pub fn new(entries: Vec<(RawTrace, TraceLabel)>, n_mon: usize) -> Result<Self, CorpusError> {
        if let Some((_, bad)) = entries.iter().find(|(_, l)| l.class_id > n_mon) {
            return Err(CorpusError::Layout(format!(
                "class id {} exceeds the unmonitored sentinel {n_mon}",
                bad.class_id
            )));
        }
        Ok(Corpus { entries, n_mon })
    }

    /// Class index reserved for unmonitored traces.
    pub fn unmonitored_class(&self) -> usize {
        self.n_mon
    }

    pub fn labels(&self) -> Vec<TraceLabel> {
        self.entries.iter().map(|(_, l)| *l).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Relative file name of an entry within the corpus layout.
    pub fn relative_path(&self, label: &TraceLabel) -> PathBuf {
        if label.is_monitored(self.n_mon) {
            Path::new("monitored").join(format!("{}-{}.txt", label.class_id, label.instance_id))
        } else {
            Path::new("unmonitored").join(format!("{}.txt", label.instance_id))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CorpusFile {
    Monitored { site: usize, instance: usize },
    Unmonitored { id: usize },
}

fn list_txt(dir: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let io = |source| CorpusError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "txt") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn classify_file(path: &Path, monitored: bool) -> Result<CorpusFile, CorpusError> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| CorpusError::Layout(format!("unreadable file name {}", path.display())))?;
    let bad = || CorpusError::Layout(format!("unexpected file name {}", path.display()));
    if monitored {
        let (site, instance) = stem.split_once('-').ok_or_else(bad)?;
        Ok(CorpusFile::Monitored {
            site: site.parse().map_err(|_| bad())?,
            instance: instance.parse().map_err(|_| bad())?,
        })
    } else {
        Ok(CorpusFile::Unmonitored {
            id: stem.parse().map_err(|_| bad())?,
        })
    }
}

/// Loads every trace file under `root`, labeling monitored entries from their
/// file names and unmonitored entries with the sentinel class `n_mon`.
///
/// Entries are ordered monitored first (by site, then instance), then
/// unmonitored by id.
pub fn load_corpus(root: &Path, n_mon: usize) -> Result<Corpus, CorpusError> {
    if !root.is_dir() {
        return Err(CorpusError::Layout(format!(
            "{} is not a directory",
            root.display()
        )));
    }
    let mut files = Vec::new();
    for path in list_txt(&root.join("monitored"))? {
        files.push((classify_file(&path, true)?, path));
    }
    for path in list_txt(&root.join("unmonitored"))? {
        files.push((classify_file(&path, false)?, path));
    }

    let mut seen = vec![false; n_mon];
    for (kind, path) in &files {
        if let CorpusFile::Monitored { site, .. } = kind {
            if *site >= n_mon {
                return Err(CorpusError::Layout(format!(
                    "{}: site {site} outside [0, {n_mon})",
                    path.display()
                )));
            }
            seen[*site] = true;
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(CorpusError::Layout(format!(
            "no traces for monitored site {missing} (expected sites 0..{n_mon})"
        )));
    }

    files.sort_by_key(|(kind, _)| match *kind {
        CorpusFile::Monitored { site, instance } => (0, site, instance),
        CorpusFile::Unmonitored { id } => (1, id, 0),
    });

    if let Some(w) = files.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(CorpusError::Layout(format!(
            "{} and {} name the same trace",
            w[0].1.display(),
            w[1].1.display()
        )));
    }

    let mut entries = Vec::with_capacity(files.len());
    for (kind, path) in files {
        let trace = read_trace(&path)?;
        let label = match kind {
            CorpusFile::Monitored { site, instance } => TraceLabel {
                class_id: site,
                instance_id: instance,
            },
            CorpusFile::Unmonitored { id } => TraceLabel {
                class_id: n_mon,
                instance_id: id,
            },
        };
        entries.push((trace, label));
    }
    Corpus::new(entries, n_mon)
}

/// Writes a corpus in the directory layout read by [`load_corpus`].
pub fn write_corpus(root: &Path, corpus: &Corpus) -> Result<(), CorpusError> {
    for sub in ["monitored", "unmonitored"] {
        let dir = root.join(sub);
        fs::create_dir_all(&dir).map_err(|source| CorpusError::Io { path: dir, source })?;
    }
    for (trace, label) in &corpus.entries {
        write_trace(&root.join(corpus.relative_path(label)), trace)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_two_packets() {
        let t = parse_trace_file("0.0\t1\n0.12\t-1\n").unwrap();
        assert_eq!(
            t.packets(),
            &[
                Packet::new(0.0, Direction::Outgoing),
                Packet::new(0.12, Direction::Incoming)
            ]
        );
    }

    #[test]
    fn empty_input_is_empty_trace() {
        assert_eq!(parse_trace_file(""), Err(TraceError::EmptyTrace));
        assert_eq!(parse_trace_file("\n  \n"), Err(TraceError::EmptyTrace));
    }

    #[test]
    fn decreasing_timestamp_is_order_error() {
        assert!(matches!(
            parse_trace_file("0.5\t1\n0.2\t-1\n"),
            Err(TraceError::Order { line: 2, .. })
        ));
    }

    #[test]
    fn equal_timestamps_are_allowed() {
        let t = parse_trace_file("0.5\t1\n0.5\t-1\n").unwrap();
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn malformed_lines_report_line_number() {
        for (text, line) in [
            ("0.0\t1\nabc\t1\n", 2),
            ("0.0\t1\n0.1\t0\n", 2),
            ("0.0\t1500\n", 1),
            ("0.0 1\n", 1),
            ("0.0\t1\t3\n", 1),
            ("-1.0\t1\n", 1),
            ("nan\t1\n", 1),
        ] {
            match parse_trace_file(text) {
                Err(TraceError::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?} gave {other:?}"),
            }
        }
    }

    #[test]
    fn accepts_explicit_plus_sign() {
        let t = parse_trace_file("0.000000\t+1\n0.100000\t-1\n").unwrap();
        assert_eq!(t.packets()[0].direction, Direction::Outgoing);
    }

    #[test]
    fn serialized_format_is_canonical() {
        let t = RawTrace::new(vec![
            Packet::new(0.0, Direction::Outgoing),
            Packet::new(1.5, Direction::Incoming),
        ])
        .unwrap();
        assert_eq!(serialize_trace(&t), "0.000000\t+1\n1.500000\t-1\n");
    }

    fn arb_trace() -> impl Strategy<Value = RawTrace> {
        prop::collection::vec((0u64..5_000_000, any::<bool>()), 1..200).prop_map(|steps| {
            let mut micros = 0u64;
            let packets = steps
                .into_iter()
                .map(|(gap, out)| {
                    micros += gap;
                    let dir = if out {
                        Direction::Outgoing
                    } else {
                        Direction::Incoming
                    };
                    Packet::new(micros as f64 / 1e6, dir)
                })
                .collect();
            RawTrace::new(packets).unwrap()
        })
    }

    proptest! {
        #[test]
        fn parse_inverts_serialize(trace in arb_trace()) {
            let back = parse_trace_file(&serialize_trace(&trace)).unwrap();
            prop_assert_eq!(back, trace);
        }
    }

    fn write(dir: &Path, rel: &str, text: &str) {
        let p = dir.join(rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, text).unwrap();
    }

    #[test]
    fn loads_monitored_corpus() {
        let dir = tempfile::tempdir().unwrap();
        for f in ["monitored/0-0.txt", "monitored/0-1.txt", "monitored/1-0.txt"] {
            write(dir.path(), f, "0.0\t1\n0.1\t-1\n");
        }
        let c = load_corpus(dir.path(), 2).unwrap();
        assert_eq!(c.len(), 3);
        let labels: Vec<_> = c.labels().iter().map(|l| (l.class_id, l.instance_id)).collect();
        assert_eq!(labels, vec![(0, 0), (0, 1), (1, 0)]);
    }

    #[test]
    fn loads_unmonitored_only_corpus() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "unmonitored/42.txt", "0.0\t1\n");
        let c = load_corpus(dir.path(), 0).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(
            c.entries[0].1,
            TraceLabel {
                class_id: 0,
                instance_id: 42
            }
        );
    }

    #[test]
    fn missing_site_is_layout_error() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "monitored/0-0.txt", "0.0\t1\n");
        assert!(matches!(
            load_corpus(dir.path(), 2),
            Err(CorpusError::Layout(_))
        ));
    }

    #[test]
    fn parse_errors_carry_file_path() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "monitored/0-0.txt", "0.0\t1\n");
        write(dir.path(), "monitored/0-1.txt", "0.3\t1\n0.1\t1\n");
        match load_corpus(dir.path(), 1) {
            Err(CorpusError::File { path, source }) => {
                assert!(path.ends_with("monitored/0-1.txt"));
                assert!(matches!(source, TraceError::Order { .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn corpus_write_then_load_preserves_entries() {
        let dir = tempfile::tempdir().unwrap();
        let trace = parse_trace_file("0.0\t1\n0.25\t-1\n").unwrap();
        let corpus = Corpus::new(
            vec![
                (trace.clone(), TraceLabel { class_id: 0, instance_id: 3 }),
                (trace.clone(), TraceLabel { class_id: 1, instance_id: 0 }),
                (trace, TraceLabel { class_id: 2, instance_id: 7 }),
            ],
            2,
        )
        .unwrap();
        write_corpus(dir.path(), &corpus).unwrap();
        let back = load_corpus(dir.path(), 2).unwrap();
        assert_eq!(back.labels(), corpus.labels());
    }
}
