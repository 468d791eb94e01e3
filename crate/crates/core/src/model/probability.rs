use serde::{Deserialize, Serialize};

/// Per-row class distributions, `rows x n_classes`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityMatrix {
    n_classes: usize,
    data: Vec<f64>,
}

/// Tolerance on the row sums of a [`ProbabilityMatrix`].
pub const ROW_SUM_TOLERANCE: f64 = 1e-5;

impl ProbabilityMatrix {
    /// Validates non-negativity and row sums.
    pub fn new(n_classes: usize, data: Vec<f64>) -> Result<Self, String> {
        if n_classes == 0 {
            return Err("probability matrix needs at least one class".into());
        }
        if data.len() % n_classes != 0 {
            return Err(format!(
                "{} values do not form rows of {n_classes} classes",
                data.len()
            ));
        }
        for (r, row) in data.chunks(n_classes).enumerate() {
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(format!("row {r} has a negative or non-finite entry"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(format!("row {r} sums to {sum}"));
            }
        }
        Ok(ProbabilityMatrix { n_classes, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, String> {
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err("ragged rows".into());
        }
        Self::new(n, rows.concat())
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_rows(&self) -> usize {
        self.data.len() / self.n_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_classes..(i + 1) * self.n_classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.n_classes)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Argmax class and its probability; ties go to the lowest index.
    pub fn argmax(&self, i: usize) -> (usize, f64) {
        argmax(self.row(i))
    }
}

pub(crate) fn argmax(row: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (j, &p) in row.iter().enumerate().skip(1) {
        if p > row[best] {
            best = j;
        }
    }
    (best, row[best])
}
