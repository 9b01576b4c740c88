use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Per-epoch training summary.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// `(split, metric, value)` triples measured after the epoch.
    pub metrics: Vec<(String, String, f64)>,
}

/// Counts of Stage-2 batches checked against `Σ w·g ≤ Σ g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BoundCheck {
    pub batches: usize,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub checkpoint: Option<PathBuf>,
    pub bound: Option<BoundCheck>,
}

impl TrainReport {
    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    /// Per-epoch values of one validation metric.
    pub fn series(&self, split: &str, metric: &str) -> Vec<f64> {
        self.epochs
            .iter()
            .filter_map(|e| e.metrics.iter().find(|(s, m, _)| s == split && m == metric).map(|t| t.2))
            .collect()
    }

    /// Value of a metric at the selected epoch.
    pub fn best(&self, split: &str, metric: &str) -> Option<f64> {
        let e = self.epochs.iter().find(|e| e.epoch == self.best_epoch)?;
        e.metrics.iter().find(|(s, m, _)| s == split && m == metric).map(|t| t.2)
    }

    /// Long-format CSV: `epoch,split,metric,value`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epoch", "split", "metric", "value"])?;
        for e in &self.epochs {
            let epoch = e.epoch.to_string();
            w.write_record([epoch.as_str(), "train", "loss", &e.train_loss.to_string()])?;
            w.write_record([epoch.as_str(), "train", "lr", &e.lr.to_string()])?;
            for (s, m, v) in &e.metrics {
                w.write_record([epoch.as_str(), s, m, &v.to_string()])?;
            }
        }
        if let Some(b) = self.bound {
            w.write_record(["", "train", "bound_batches", &b.batches.to_string()])?;
            w.write_record(["", "train", "bound_violations", &b.violations.to_string()])?;
        }
        w.write_record(["", "val", "best_epoch", &self.best_epoch.to_string()])?;
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let text = self.to_csv()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }
}
