//! Child-network evaluation backends.
//!
//! Real training is replaced by either a deterministic synthetic surrogate or
//! by replaying recorded per-group accuracies. [`evaluate_full`] checks the
//! timing constraint first and never calls the backend for an architecture
//! that misses it.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fairness::{unfairness, GroupedAccuracy};
use crate::latency::LatencyTable;
use crate::reward::{RewardParams, Specification};
use crate::rng::CounterRng;
use crate::search_space::{param_count, ArchitectureSpec};

/// Synthetic accuracy model. Accuracy saturates with total size and the
/// majority/minority gap shrinks with the capacity of the last few blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateConfig {
    pub a_max: f64,
    pub a_min: f64,
    pub size_scale: f64,
    pub gap0: f64,
    pub tail_scale: f64,
    pub tail_window: usize,
    pub majority_fraction: f64,
    pub noise_amp: f64,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            a_max: 0.9,
            a_min: 0.5,
            size_scale: 2.0e4,
            gap0: 0.4,
            tail_scale: 1.0e4,
            tail_window: 2,
            majority_fraction: 0.9,
            noise_amp: 0.01,
            seed: 0,
        }
    }
}

impl SurrogateConfig {
    pub fn check(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        let ok = unit(self.a_max)
            && unit(self.a_min)
            && self.a_min < self.a_max
            && unit(self.gap0)
            && self.gap0 <= self.a_max
            && self.size_scale > 0.0
            && self.tail_scale > 0.0
            && self.tail_window > 0
            && self.majority_fraction > 0.0
            && self.majority_fraction < 1.0
            && self.noise_amp >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(
                "surrogate parameters out of range".into(),
            ))
        }
    }
}

fn arch_key(arch: &ArchitectureSpec) -> impl Iterator<Item = u64> + '_ {
    std::iter::once(u64::from(arch.header_out_channels)).chain(arch.blocks.iter().flat_map(|b| {
        [
            u64::from(b.skipped),
            b.block_type as u64,
            u64::from(b.kernel),
            u64::from(b.ch2),
            u64::from(b.ch3),
        ]
    }))
}

/// Parameters of the last `window` kept blocks.
pub fn tail_capacity(arch: &ArchitectureSpec, window: usize) -> u64 {
    arch.resolved()
        .iter()
        .rev()
        .take(window)
        .map(|r| r.block.params(r.ch1))
        .sum()
}

pub fn surrogate_evaluate(arch: &ArchitectureSpec, cfg: &SurrogateConfig) -> GroupedAccuracy {
    let params = param_count(arch) as f64;
    let base = cfg.a_max - (cfg.a_max - cfg.a_min) * (-params / cfg.size_scale).exp();
    let tail = tail_capacity(arch, cfg.tail_window) as f64;
    let gap = cfg.gap0 * (-tail / cfg.tail_scale).exp();
    let rng = CounterRng::keyed(cfg.seed, arch_key(arch));
    let eps = |i| cfg.noise_amp * (2.0 * rng.uniform(i) - 1.0);
    let majority = (base + eps(0)).clamp(0.0, 1.0);
    let minority = (base - gap + eps(1)).clamp(0.0, 1.0);
    let p = cfg.majority_fraction;
    GroupedAccuracy {
        overall: p * majority + (1.0 - p) * minority,
        per_group: vec![majority, minority],
        group_sizes: Some(vec![p, 1.0 - p]),
    }
}

pub const REPLAY_HEADER: [&str; 8] = [
    "model",
    "overall_acc",
    "acc_light",
    "acc_dark",
    "params",
    "storage_mb",
    "latency_raspberry_ms",
    "latency_odroid_ms",
];

/// One recorded model. Accuracies are fractions in [0, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub model: String,
    pub overall_acc: f64,
    pub acc_light: f64,
    pub acc_dark: f64,
    pub params: u64,
    pub storage_mb: f64,
    pub latency_raspberry_ms: f64,
    pub latency_odroid_ms: f64,
}

impl ReplayRecord {
    pub fn grouped(&self) -> GroupedAccuracy {
        GroupedAccuracy::from_rates(self.overall_acc, vec![self.acc_light, self.acc_dark])
    }

    /// Latency on a named device; `raspberry` and `odroid` are recorded.
    pub fn latency_on(&self, device: &str) -> Option<f64> {
        match device.to_ascii_lowercase().as_str() {
            "raspberry" | "raspberry_pi" | "raspberrypi" => Some(self.latency_raspberry_ms),
            "odroid" | "odroid_xu4" => Some(self.latency_odroid_ms),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayTable {
    pub records: Vec<ReplayRecord>,
}

impl ReplayTable {
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file, path)
    }

    pub fn from_reader<R: std::io::Read>(reader: R, path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::parse(path, 1, e))?.clone();
        if headers.iter().ne(REPLAY_HEADER) {
            return Err(Error::parse(
                path,
                1,
                format!("expected header `{}`", REPLAY_HEADER.join(",")),
            ));
        }
        let mut records = Vec::new();
        for (i, row) in rdr.deserialize::<ReplayRecord>().enumerate() {
            let rec = row.map_err(|e| Error::parse(path, i + 2, e))?;
            if records.iter().any(|r: &ReplayRecord| r.model == rec.model) {
                return Err(Error::parse(
                    path,
                    i + 2,
                    format!("duplicate model `{}`", rec.model),
                ));
            }
            records.push(rec);
        }
        Ok(ReplayTable { records })
    }

    pub fn get(&self, model: &str) -> Result<&ReplayRecord> {
        self.records
            .iter()
            .find(|r| r.model == model)
            .ok_or_else(|| Error::UnknownArchitecture(model.to_string()))
    }
}

pub fn replay_evaluate(arch_id: &str, table: &ReplayTable) -> Result<GroupedAccuracy> {
    Ok(table.get(arch_id)?.grouped())
}

/// Something that can "train" a child network and report grouped accuracy.
pub trait Backend: Sync {
    fn evaluate(&self, arch: &ArchitectureSpec) -> Result<GroupedAccuracy>;
}

impl Backend for SurrogateConfig {
    fn evaluate(&self, arch: &ArchitectureSpec) -> Result<GroupedAccuracy> {
        Ok(surrogate_evaluate(arch, self))
    }
}

/// Replays recorded accuracies keyed by [`ArchitectureSpec::summary`].
#[derive(Clone, Debug, Default)]
pub struct ReplayBackend {
    pub results: HashMap<String, GroupedAccuracy>,
}

impl ReplayBackend {
    pub fn from_table(table: &ReplayTable) -> Self {
        ReplayBackend {
            results: table
                .records
                .iter()
                .map(|r| (r.model.clone(), r.grouped()))
                .collect(),
        }
    }
}

impl Backend for ReplayBackend {
    fn evaluate(&self, arch: &ArchitectureSpec) -> Result<GroupedAccuracy> {
        let id = arch.summary();
        self.results
            .get(&id)
            .cloned()
            .ok_or(Error::UnknownArchitecture(id))
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn evaluate(&self, arch: &ArchitectureSpec) -> Result<GroupedAccuracy> {
        (**self).evaluate(arch)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn evaluate(&self, arch: &ArchitectureSpec) -> Result<GroupedAccuracy> {
        (**self).evaluate(arch)
    }
}

/// Counts backend invocations.
pub struct Counting<B> {
    pub inner: B,
    calls: AtomicU64,
}

impl<B> Counting<B> {
    pub fn new(inner: B) -> Self {
        Counting {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<B: Backend> Backend for Counting<B> {
    fn evaluate(&self, arch: &ArchitectureSpec) -> Result<GroupedAccuracy> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.evaluate(arch)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    /// Absent when the timing check bypassed the backend.
    pub grouped: Option<GroupedAccuracy>,
    pub unfair: Option<f64>,
    pub latency_ms: f64,
    pub params: u64,
    pub feasible: bool,
    pub reward_value: f64,
}

impl EvaluationResult {
    pub fn evaluated(&self) -> bool {
        self.grouped.is_some()
    }

    pub fn accuracy(&self) -> Option<f64> {
        self.grouped.as_ref().map(|g| g.overall)
    }
}

/// Everything needed to score an architecture besides the architecture itself.
pub struct EvalContext<'a> {
    pub spec: &'a Specification,
    pub reward: &'a RewardParams,
    pub latency: &'a LatencyTable,
    pub input_resolution: u32,
    pub backend: &'a dyn Backend,
}

pub fn evaluate_full(arch: &ArchitectureSpec, ctx: &EvalContext<'_>) -> Result<EvaluationResult> {
    let latency_ms = ctx.latency.estimate(arch, ctx.input_resolution)?;
    let params = param_count(arch);
    if !crate::latency::meets_timing(latency_ms, ctx.spec) {
        return Ok(EvaluationResult {
            grouped: None,
            unfair: None,
            latency_ms,
            params,
            feasible: false,
            reward_value: crate::reward::INFEASIBLE_REWARD,
        });
    }
    let grouped = ctx.backend.evaluate(arch)?;
    let unfair = unfairness(&grouped);
    let feasible = ctx.spec.meets_accuracy(grouped.overall);
    let reward_value = ctx.reward.gated(feasible, grouped.overall, unfair);
    Ok(EvaluationResult {
        grouped: Some(grouped),
        unfair: Some(unfair),
        latency_ms,
        params,
        feasible,
        reward_value,
    })
}
