//! Line-delimited JSON result records.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub experiment: String,
    pub config_hash: String,
    pub metric: String,
    pub split: String,
    pub value: f64,
    pub seed: u64,
}

/// Collects records stamped with one config's hash and seed.
#[derive(Clone, Debug)]
pub struct RecordSink {
    hash: String,
    seed: u64,
    records: Vec<ResultRecord>,
}

impl RecordSink {
    pub fn new(c: &ExperimentConfig) -> Self {
        Self { hash: c.hash(), seed: c.seed, records: Vec::new() }
    }

    pub fn push(&mut self, experiment: impl Into<String>, metric: &str, split: &str, value: f64) {
        self.records.push(ResultRecord {
            experiment: experiment.into(),
            config_hash: self.hash.clone(),
            metric: metric.into(),
            split: split.into(),
            value,
            seed: self.seed,
        });
    }

    pub fn records(&self) -> &[ResultRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<ResultRecord> {
        self.records
    }
}

pub fn write_records<W: Write>(w: &mut W, records: &[ResultRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(r: R) -> Result<Vec<ResultRecord>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Value of the first record matching `experiment` and `metric`.
pub fn lookup(records: &[ResultRecord], experiment: &str, metric: &str) -> Option<f64> {
    records.iter().find(|r| r.experiment == experiment && r.metric == metric).map(|r| r.value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip_is_exact() {
        let mut sink = RecordSink::new(&ExperimentConfig::default());
        sink.push("best/ce/sf", "wer", "dev", 0.1 + 0.2);
        sink.push("ppl/ce", "renorm", "dev", f64::MIN_POSITIVE);
        let mut buf = Vec::new();
        write_records(&mut buf, sink.records()).unwrap();
        let back = read_records(buf.as_slice()).unwrap();
        assert_eq!(back, sink.records());
        assert_eq!(back[0].value.to_bits(), (0.1f64 + 0.2).to_bits());
        assert_eq!(lookup(&back, "ppl/ce", "renorm"), Some(f64::MIN_POSITIVE));
        assert_eq!(lookup(&back, "ppl/ce", "raw"), None);
    }
}
