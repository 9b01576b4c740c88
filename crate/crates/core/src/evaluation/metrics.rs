use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS_FORMAT: &str = "permurank.metrics";
pub const METRICS_VERSION: u32 = 1;

/// Mean, standard error and count of one metric for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub method: String,
    pub metric: String,
    /// Threshold `c` for cutoff-conditional entries.
    pub cutoff: Option<f64>,
    pub mean: f64,
    /// Sample standard deviation over `sqrt(n)`.
    pub se: f64,
    pub n: usize,
}

/// `(mean, se)` of a sample; the SE of a single value is 0.
pub fn mean_se(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::contract("cannot summarize an empty sample"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub entries: Vec<MetricEntry>,
}

impl MetricsReport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Summarizes `values` into a new entry. Empty samples are skipped with
    /// a warning, so every stored entry has `n > 0`.
    pub fn push(&mut self, method: &str, metric: &str, cutoff: Option<f64>, values: &[f64]) {
        match mean_se(values) {
            Ok((mean, se)) => self.entries.push(MetricEntry {
                method: method.to_string(),
                metric: metric.to_string(),
                cutoff,
                mean,
                se,
                n: values.len(),
            }),
            Err(_) => log::warn!("no groups for {method} {metric} at cutoff {cutoff:?}; entry omitted"),
        }
    }

    pub fn get(&self, method: &str, metric: &str, cutoff: Option<f64>) -> Option<&MetricEntry> {
        self.entries.iter().find(|e| e.method == method && e.metric == metric && e.cutoff == cutoff)
    }

    /// Appends `other`, replacing entries with the same key.
    pub fn merge(&mut self, other: MetricsReport) {
        for e in other.entries {
            self.entries.retain(|x| !(x.method == e.method && x.metric == e.metric && x.cutoff == e.cutoff));
            self.entries.push(e);
        }
    }

    pub fn methods(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.method.as_str()) {
                out.push(&e.method);
            }
        }
        out
    }

    /// CSV with a `# permurank.metrics v1` first line.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "metric", "cutoff", "mean", "se", "n"])?;
        for e in &self.entries {
            let cutoff = e.cutoff.map(|c| c.to_string()).unwrap_or_default();
            w.write_record([&e.method, &e.metric, &cutoff, &e.mean.to_string(), &e.se.to_string(), &e.n.to_string()])?;
        }
        let body = String::from_utf8(w.into_inner().map_err(|e| Error::Data(e.to_string()))?).expect("csv output is utf-8");
        Ok(format!("# {METRICS_FORMAT} v{METRICS_VERSION}\n{body}"))
    }

    pub fn from_csv(text: &str, origin: &str) -> Result<Self> {
        let (first, body) = text.split_once('\n').unwrap_or((text, ""));
        let version = first
            .strip_prefix(&format!("# {METRICS_FORMAT} v"))
            .ok_or_else(|| Error::Parse {
                what: origin.to_string(),
                line: 1,
                message: "missing metrics header line".into(),
            })?
            .trim()
            .parse::<u32>()
            .map_err(|e| Error::Parse {
                what: origin.to_string(),
                line: 1,
                message: e.to_string(),
            })?;
        if version != METRICS_VERSION {
            return Err(Error::SchemaVersion {
                what: origin.to_string(),
                found: version,
                expected: METRICS_VERSION,
            });
        }
        let mut r = csv::Reader::from_reader(body.as_bytes());
        let mut entries = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let line = i + 3;
            let err = |m: String| Error::Parse {
                what: origin.to_string(),
                line,
                message: m,
            };
            let rec = rec.map_err(|e| err(e.to_string()))?;
            if rec.len() != 6 {
                return Err(err(format!("expected 6 fields, got {}", rec.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("{s:?}: {e}")));
            entries.push(MetricEntry {
                method: rec[0].to_string(),
                metric: rec[1].to_string(),
                cutoff: if rec[2].is_empty() { None } else { Some(num(&rec[2])?) },
                mean: num(&rec[3])?,
                se: num(&rec[4])?,
                n: rec[5].parse().map_err(|e| err(format!("{:?}: {e}", &rec[5])))?,
            });
        }
        Ok(Self { entries })
    }

    /// Fixed-width table for terminals.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<24} {:<14} {:>7} {:>10} {:>10} {:>7}", "method", "metric", "cutoff", "mean", "se", "n");
        for e in &self.entries {
            let cutoff = e.cutoff.map(|c| format!("<{c}")).unwrap_or_else(|| "all".into());
            let _ = writeln!(out, "{:<24} {:<14} {:>7} {:>10.4} {:>10.4} {:>7}", e.method, e.metric, cutoff, e.mean, e.se, e.n);
        }
        out
    }
}
