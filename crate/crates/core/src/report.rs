//! Per-instance result records and summary tables (means, medians, size buckets).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("no results to summarize")]
    EmptyResults,
}

/// What `solve` writes for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub instance: String,
    pub n: usize,
    pub fleet: usize,
    pub cost: Option<f64>,
    pub bks: Option<f64>,
    pub gap: Option<f64>,
    pub feasible: bool,
    pub iterations: usize,
    pub circuits: usize,
    pub lower_bound: Option<f64>,
    pub max_width: usize,
    /// Simulated seconds spent in QUBO execution.
    pub virtual_time: f64,
    /// Measured seconds, only when requested.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_time: Option<f64>,
    pub routes: Vec<Vec<usize>>,
    #[serde(default)]
    pub device_mix: String,
}

impl SolveResult {
    /// Wall time when recorded, otherwise simulated time.
    pub fn time(&self) -> f64 {
        self.wall_time.unwrap_or(self.virtual_time)
    }
}

pub const BUCKETS: [&str; 4] = ["10-20", "21-50", "51-100", "101+"];

/// Size bucket by customer count; anything at or below 20 falls in the first.
pub fn bucket(n: usize) -> &'static str {
    match n {
        0..=20 => BUCKETS[0],
        21..=50 => BUCKETS[1],
        51..=100 => BUCKETS[2],
        _ => BUCKETS[3],
    }
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len().is_multiple_of(2) { (v[m - 1] + v[m]) / 2.0 } else { v[m] })
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.4}")).unwrap_or_default()
}

/// Per-instance rows followed by `mean` and `median` footer rows.
pub fn instance_table(results: &[SolveResult]) -> Result<String, ReportError> {
    if results.is_empty() {
        return Err(ReportError::EmptyResults);
    }
    let mut s = String::from("instance,n,fleet,bks,cost,gap_pct,feasible,iterations,circuits,time_s,device_mix\n");
    for r in results {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{:.4},{}",
            r.instance,
            r.n,
            r.fleet,
            opt(r.bks),
            opt(r.cost),
            opt(r.gap),
            r.feasible,
            r.iterations,
            r.circuits,
            r.time(),
            r.device_mix
        );
    }
    let gaps: Vec<f64> = results.iter().filter_map(|r| r.gap).collect();
    let times: Vec<f64> = results.iter().map(SolveResult::time).collect();
    let _ = writeln!(s, "mean,,,,,{},,,,{},", opt(mean(&gaps)), opt(mean(&times)));
    let _ = writeln!(s, "median,,,,,{},,,,{},", opt(median(&gaps)), opt(median(&times)));
    Ok(s)
}

/// One row per non-empty size bucket.
pub fn bucket_table(results: &[SolveResult]) -> Result<String, ReportError> {
    if results.is_empty() {
        return Err(ReportError::EmptyResults);
    }
    let mut s = String::from("bucket,count,mean_gap_pct,median_gap_pct,mean_time_s,median_time_s\n");
    for b in BUCKETS {
        let rows: Vec<&SolveResult> = results.iter().filter(|r| bucket(r.n) == b).collect();
        if rows.is_empty() {
            continue;
        }
        let gaps: Vec<f64> = rows.iter().filter_map(|r| r.gap).collect();
        let times: Vec<f64> = rows.iter().map(|r| r.time()).collect();
        let _ = writeln!(
            s,
            "{b},{},{},{},{},{}",
            rows.len(),
            opt(mean(&gaps)),
            opt(median(&gaps)),
            opt(mean(&times)),
            opt(median(&times))
        );
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn res(name: &str, n: usize, gap: f64) -> SolveResult {
        SolveResult {
            instance: name.into(),
            n,
            fleet: 2,
            cost: Some(100.0 + gap),
            bks: Some(100.0),
            gap: Some(gap),
            feasible: true,
            iterations: 3,
            circuits: 0,
            lower_bound: None,
            max_width: 4,
            virtual_time: 1.5,
            wall_time: None,
            routes: vec![],
            device_mix: String::new(),
        }
    }

    #[test]
    fn single_row_mean_equals_median() {
        let t = instance_table(&[res("a", 12, 10.0)]).unwrap();
        assert!(t.contains("mean,,,,,10.0000"));
        assert!(t.contains("median,,,,,10.0000"));
    }

    #[test]
    fn mean_and_median() {
        assert_eq!(mean(&[10.0, 20.0, 60.0]), Some(30.0));
        assert_eq!(median(&[60.0, 10.0, 20.0]), Some(20.0));
        assert_eq!(median(&[1.0, 2.0, 3.0, 4.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn buckets() {
        assert_eq!(bucket(36), "21-50");
        assert_eq!(bucket(20), "10-20");
        assert_eq!(bucket(21), "21-50");
        assert_eq!(bucket(100), "51-100");
        assert_eq!(bucket(150), "101+");
        let t = bucket_table(&[res("a", 12, 10.0), res("b", 36, 20.0), res("c", 40, 40.0)]).unwrap();
        assert!(t.contains("21-50,2,30.0000,30.0000"));
        assert!(!t.contains("101+"));
    }

    #[test]
    fn empty() {
        assert_eq!(instance_table(&[]), Err(ReportError::EmptyResults));
        assert_eq!(bucket_table(&[]), Err(ReportError::EmptyResults));
    }
}
