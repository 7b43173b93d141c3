// SPDX-License-Identifier: MIT OR Apache-2.0

//! The row type every metric emits, and its CSV encoding.

use std::fmt::Write as _;

use crate::error::{HlabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Process {
    Ngram,
    Pcfg,
}

impl Process {
    pub fn as_str(self) -> &'static str {
        match self {
            Process::Ngram => "ngram",
            Process::Pcfg => "pcfg",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ngram" => Ok(Process::Ngram),
            "pcfg" => Ok(Process::Pcfg),
            other => Err(HlabError::config("process", format!("unknown process `{other}`"))),
        }
    }
}

/// One measurement. `k` holds the induction order, or the ablation offset
/// `m` for Hydra rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub run_id: String,
    pub process: Process,
    pub step: u64,
    pub metric: String,
    pub layer: Option<usize>,
    pub head: Option<usize>,
    pub k: Option<usize>,
    pub value: f64,
}

pub const METRICS_HEADER: &str = "run_id,process,step,metric,layer,head,k,value";

fn opt(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricRecord {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.run_id,
            self.process.as_str(),
            self.step,
            self.metric,
            opt(self.layer),
            opt(self.head),
            opt(self.k),
            self.value
        )
    }

    pub fn parse_csv_line(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || HlabError::Metric(format!("malformed metrics row `{line}`"));
        if f.len() != 8 {
            return Err(bad());
        }
        let o = |s: &str| -> Result<Option<usize>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad())
            }
        };
        Ok(Self {
            run_id: f[0].to_string(),
            process: Process::parse(f[1])?,
            step: f[2].parse().map_err(|_| bad())?,
            metric: f[3].to_string(),
            layer: o(f[4])?,
            head: o(f[5])?,
            k: o(f[6])?,
            value: f[7].parse().map_err(|_| bad())?,
        })
    }
}

pub fn records_to_csv(records: &[MetricRecord]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(s, "{}", r.to_csv_line());
    }
    s
}

pub fn records_from_csv(text: &str) -> Result<Vec<MetricRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(HlabError::Metric("metrics.csv header mismatch".into()));
    }
    lines.filter(|l| !l.is_empty()).map(MetricRecord::parse_csv_line).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_keeps_empty_cells() {
        let r = MetricRecord {
            run_id: "r1".into(),
            process: Process::Pcfg,
            step: 250,
            metric: "induction_max".into(),
            layer: None,
            head: None,
            k: Some(1),
            value: 0.125,
        };
        let line = r.to_csv_line();
        assert_eq!(line, "r1,pcfg,250,induction_max,,,1,0.125");
        assert_eq!(MetricRecord::parse_csv_line(&line).unwrap(), r);
    }
}
