//! Accuracy/unfairness Pareto frontier.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub id: String,
    pub accuracy: f64,
    pub unfairness: f64,
}

impl ParetoPoint {
    pub fn new(id: &str, accuracy: f64, unfairness: f64) -> Self {
        ParetoPoint {
            id: id.to_string(),
            accuracy,
            unfairness,
        }
    }

    /// Higher accuracy is better, lower unfairness is better.
    pub fn dominates(&self, other: &ParetoPoint) -> bool {
        self.accuracy >= other.accuracy
            && self.unfairness <= other.unfairness
            && (self.accuracy > other.accuracy || self.unfairness < other.unfairness)
    }
}

/// Non-dominated points, sorted by accuracy descending (stable on ties).
pub fn pareto(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let mut front: Vec<ParetoPoint> = points
        .iter()
        .filter(|p| !points.iter().any(|q| q.dominates(p)))
        .cloned()
        .collect();
    front.sort_by(|a, b| b.accuracy.total_cmp(&a.accuracy));
    front
}

/// Reads `id,accuracy,unfairness` rows.
pub fn read_points(path: &Path) -> Result<Vec<ParetoPoint>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::parse(path, i + 2, e)))
        .collect()
}
