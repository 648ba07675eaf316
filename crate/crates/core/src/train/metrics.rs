use std::fmt::Write as _;

use crate::data::{CLASS_NAMES, N_CLASSES};

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    /// Absent when training on merged train + validation data.
    pub val_acc: Option<f64>,
    pub seconds: f64,
}

pub const METRICS_HEADER: &str = "epoch\tlr\ttrain_loss\ttrain_acc\tval_acc\tseconds";

impl EpochMetrics {
    /// Tab-separated line. `seconds` is written as `0` unless
    /// `wall_time` is set.
    pub fn tsv_line(&self, wall_time: bool) -> String {
        let val = self
            .val_acc
            .map_or_else(|| "-".to_string(), |v| v.to_string());
        let secs = if wall_time {
            format!("{:.3}", self.seconds)
        } else {
            "0".to_string()
        };
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.epoch, self.lr, self.train_loss, self.train_acc, val, secs
        )
    }
}

/// Rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub counts: [[u64; N_CLASSES]; N_CLASSES],
}

impl ConfusionMatrix {
    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..N_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> [u64; N_CLASSES] {
        self.counts.map(|r| r.iter().sum())
    }

    /// `trace / total`, or 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.trace() as f64 / t as f64,
        }
    }

    pub fn flat(&self) -> Vec<u64> {
        self.counts.iter().flatten().copied().collect()
    }

    /// Aligned table with class names, for summaries and the terminal.
    pub fn table(&self) -> String {
        let mut out = String::from("true\\pred");
        for name in CLASS_NAMES {
            let _ = write!(out, "\t{name}");
        }
        out.push('\n');
        for (name, row) in CLASS_NAMES.iter().zip(&self.counts) {
            out.push_str(name);
            for c in row {
                let _ = write!(out, "\t{c}");
            }
            out.push('\n');
        }
        out
    }
}

/// Final line of a metrics log: test accuracy and the 49 confusion counts.
pub fn test_line(accuracy: f64, confusion: &ConfusionMatrix) -> String {
    let mut s = format!("test\t{accuracy}");
    for c in confusion.flat() {
        let _ = write!(s, "\t{c}");
    }
    s
}
