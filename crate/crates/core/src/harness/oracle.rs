//! Exhaustive evaluation of a small search space.

use rayon::prelude::*;
use serde::Serialize;

use super::{join_actions, SearchProblem};
use crate::error::Result;
use crate::search_space::{encode, enumerate, ArchitectureSpec};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LandscapeRow {
    /// Position in canonical enumeration order.
    pub index: usize,
    pub actions: String,
    pub architecture: String,
    pub reward: f64,
    pub feasible: bool,
    pub evaluated: bool,
    pub latency_ms: f64,
    pub accuracy: Option<f64>,
    pub unfairness: Option<f64>,
    pub params: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Oracle {
    pub rows: Vec<LandscapeRow>,
    pub best: usize,
    pub best_architecture: ArchitectureSpec,
}

impl Oracle {
    pub fn best_row(&self) -> &LandscapeRow {
        &self.rows[self.best]
    }

    /// Reward of the architecture ranked `ceil(fraction * N)` from the top.
    /// A search result at or above it lies in the top `fraction`.
    pub fn top_threshold(&self, fraction: f64) -> f64 {
        let mut rewards: Vec<f64> = self.rows.iter().map(|r| r.reward).collect();
        rewards.sort_by(|a, b| b.total_cmp(a));
        let rank = ((fraction * rewards.len() as f64).ceil() as usize).clamp(1, rewards.len());
        rewards[rank - 1]
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }
}

/// Scores every architecture of `problem.config` with the problem's own
/// backend. Ties go to the earliest architecture in canonical order.
pub fn exhaustive_oracle(problem: &SearchProblem, limit: u64) -> Result<Oracle> {
    let archs: Vec<ArchitectureSpec> = enumerate(&problem.config, limit)?.collect();
    let rows = archs
        .par_iter()
        .enumerate()
        .map(|(index, arch)| {
            let r = problem.evaluate(arch)?;
            Ok(LandscapeRow {
                index,
                actions: join_actions(&encode(arch, &problem.config)?),
                architecture: arch.summary(),
                reward: r.reward_value,
                feasible: r.feasible,
                evaluated: r.evaluated(),
                latency_ms: r.latency_ms,
                accuracy: r.accuracy(),
                unfairness: r.unfair,
                params: r.params,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = rows
        .iter()
        .enumerate()
        .fold(0, |b, (i, r)| if r.reward > rows[b].reward { i } else { b });
    Ok(Oracle {
        best_architecture: archs[best].clone(),
        rows,
        best,
    })
}
