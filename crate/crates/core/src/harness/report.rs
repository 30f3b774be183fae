//! Re-scoring recorded models against a baseline.

use serde::Serialize;

use crate::error::Result;
use crate::evaluator::{ReplayRecord, ReplayTable};
use crate::fairness::{relative_fairness_change, unfairness};
use crate::reward::RewardParams;

/// Constraints used when re-scoring. Without a timing constraint only the
/// accuracy gate applies.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSpec {
    pub accuracy_constraint: f64,
    pub timing_constraint_ms: Option<f64>,
    pub device: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreRow {
    pub model: String,
    pub params: u64,
    pub accuracy: f64,
    pub unfairness: f64,
    /// Positive when fairer than the baseline.
    pub fairness_change: f64,
    pub reward: f64,
    pub meets_accuracy: bool,
    pub meets_timing: Option<bool>,
    pub storage_mb: f64,
    /// Baseline params over model params.
    pub storage_reduction: f64,
    pub latency_raspberry_ms: f64,
    pub speedup_raspberry: f64,
    pub latency_odroid_ms: f64,
    pub speedup_odroid: f64,
    pub is_baseline: bool,
}

impl ScoreRow {
    pub fn formatted_fairness_change(&self) -> String {
        if self.is_baseline {
            return "baseline".into();
        }
        let arrow = if self.fairness_change >= 0.0 {
            '↑'
        } else {
            '↓'
        };
        format!("{:.2}% {arrow}", self.fairness_change.abs() * 100.0)
    }

    pub fn formatted_ratio(&self, ratio: f64) -> String {
        if self.is_baseline {
            "baseline".into()
        } else {
            format!("{ratio:.2}×")
        }
    }

    /// Cells in the published column precision.
    pub fn cells(&self) -> Vec<String> {
        vec![
            self.model.clone(),
            self.params.to_string(),
            format!("{:.2}%", self.accuracy * 100.0),
            if self.meets_accuracy { "yes" } else { "no" }.into(),
            format!("{:.4}", self.unfairness),
            self.formatted_fairness_change(),
            format!("{:.2}", self.reward),
            format!("{:.2}", self.storage_mb),
            self.formatted_ratio(self.storage_reduction),
            format!("{:.2}", self.latency_raspberry_ms),
            self.formatted_ratio(self.speedup_raspberry),
            format!("{:.2}", self.latency_odroid_ms),
            self.formatted_ratio(self.speedup_odroid),
        ]
    }
}

pub const REPORT_COLUMNS: [&str; 13] = [
    "model",
    "params",
    "accuracy",
    "meets_acc",
    "unfairness",
    "fairness_comp",
    "reward",
    "storage_mb",
    "storage_red",
    "raspberry_ms",
    "raspberry_speedup",
    "odroid_ms",
    "odroid_speedup",
];

fn score_one(
    rec: &ReplayRecord,
    base: &ReplayRecord,
    base_u: f64,
    spec: &ScoreSpec,
    params: &RewardParams,
) -> Result<ScoreRow> {
    let u = unfairness(&rec.grouped());
    let meets_accuracy = rec.overall_acc >= spec.accuracy_constraint;
    let meets_timing = spec
        .timing_constraint_ms
        .map(|tc| rec.latency_on(&spec.device).is_some_and(|l| l <= tc));
    let feasible = meets_accuracy && meets_timing.unwrap_or(true);
    Ok(ScoreRow {
        model: rec.model.clone(),
        params: rec.params,
        accuracy: rec.overall_acc,
        unfairness: u,
        fairness_change: relative_fairness_change(u, base_u)?,
        reward: params.gated(feasible, rec.overall_acc, u),
        meets_accuracy,
        meets_timing,
        storage_mb: rec.storage_mb,
        storage_reduction: base.params as f64 / rec.params as f64,
        latency_raspberry_ms: rec.latency_raspberry_ms,
        speedup_raspberry: base.latency_raspberry_ms / rec.latency_raspberry_ms,
        latency_odroid_ms: rec.latency_odroid_ms,
        speedup_odroid: base.latency_odroid_ms / rec.latency_odroid_ms,
        is_baseline: rec.model == base.model,
    })
}

pub fn score_report(
    table: &ReplayTable,
    spec: &ScoreSpec,
    params: &RewardParams,
    baseline_id: &str,
) -> Result<Vec<ScoreRow>> {
    let base = table.get(baseline_id)?;
    let base_u = unfairness(&base.grouped());
    table
        .records
        .iter()
        .map(|rec| score_one(rec, base, base_u, spec, params))
        .collect()
}

pub fn render(rows: &[ScoreRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_COLUMNS).expect("in-memory write");
    for r in rows {
        w.write_record(r.cells()).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    const G1: &str = "model,overall_acc,acc_light,acc_dark,params,storage_mb,latency_raspberry_ms,latency_odroid_ms
MobileNetV2,0.8105,0.8127,0.5802,2230277,8.51,1939.40,4264.55
FaHaNa-Small,0.8128,0.8146,0.6173,422341,1.61,337.30,736.22
";

    fn rows(tc: Option<f64>) -> Vec<ScoreRow> {
        let t = ReplayTable::from_reader(G1.as_bytes(), Path::new("g1.csv")).unwrap();
        let spec = ScoreSpec {
            accuracy_constraint: 0.81,
            timing_constraint_ms: tc,
            device: "raspberry".into(),
        };
        score_report(&t, &spec, &RewardParams::default(), "MobileNetV2").unwrap()
    }

    #[test]
    fn baseline_row_is_neutral() {
        let r = &rows(None)[0];
        assert_eq!(r.fairness_change, 0.0);
        assert_eq!(
            (r.storage_reduction, r.speedup_raspberry, r.speedup_odroid),
            (1.0, 1.0, 1.0)
        );
        assert_eq!(r.formatted_fairness_change(), "baseline");
    }

    #[test]
    fn candidate_row_formatting() {
        let r = &rows(None)[1];
        let cells = r.cells();
        assert_eq!(cells[4], "0.1973");
        assert_eq!(cells[5], "15.14% ↑");
        assert_eq!(cells[6], "0.62");
        assert_eq!(cells[8], "5.28×");
        assert_eq!(cells[10], "5.75×");
        assert_eq!(cells[12], "5.79×");
    }

    #[test]
    fn timing_gate_is_optional() {
        assert!(rows(None)[0].reward > 0.0);
        let gated = rows(Some(1500.0));
        assert_eq!(gated[0].reward, -1.0);
        assert_eq!(gated[0].meets_timing, Some(false));
        assert!(gated[1].reward > 0.0);
    }

    #[test]
    fn unknown_baseline() {
        let t = ReplayTable::from_reader(G1.as_bytes(), Path::new("g1.csv")).unwrap();
        let spec = ScoreSpec {
            accuracy_constraint: 0.81,
            timing_constraint_ms: None,
            device: "raspberry".into(),
        };
        assert!(score_report(&t, &spec, &RewardParams::default(), "VGG").is_err());
    }
}
