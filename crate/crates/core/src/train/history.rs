use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One logged scalar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

/// Append-only log of per-epoch metrics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricHistory {
    records: Vec<MetricRecord>,
}

impl MetricHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, epoch: usize, split: &str, metric: &str, value: f64) {
        self.records.push(MetricRecord {
            epoch,
            split: split.to_string(),
            metric: metric.to_string(),
            value,
        });
    }

    pub fn records(&self) -> &[MetricRecord] {
        &self.records
    }

    /// `(epoch, value)` for one split and metric, in logging order.
    pub fn series(&self, split: &str, metric: &str) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter(|r| r.split == split && r.metric == metric)
            .map(|r| (r.epoch, r.value))
            .collect()
    }

    pub fn last(&self, split: &str, metric: &str) -> Option<f64> {
        self.series(split, metric).last().map(|&(_, v)| v)
    }

    pub fn extend(&mut self, other: MetricHistory) {
        self.records.extend(other.records);
    }

    /// CSV with header `epoch,split,metric,value`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r).map_err(|e| Error::invalid(format!("encoding metrics: {e}")))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::invalid(format!("encoding metrics: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?)
            .map_err(|e| Error::io(format!("writing metrics {}", path.display()), e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)
            .map_err(|e| Error::invalid(format!("reading metrics {}: {e}", path.display())))?;
        let records = r
            .deserialize()
            .collect::<std::result::Result<Vec<MetricRecord>, _>>()
            .map_err(|e| Error::invalid(format!("reading metrics {}: {e}", path.display())))?;
        Ok(MetricHistory { records })
    }
}
