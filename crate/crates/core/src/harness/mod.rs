//! Search orchestration: run configuration, the sample/evaluate/update loop,
//! run logs, the exhaustive oracle, Pareto extraction and replay scoring.

pub mod oracle;
pub mod pareto;
pub mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{ControllerState, EpisodeRecord, Hyper};
use crate::error::{Error, Result};
use crate::evaluator::{
    evaluate_full, Backend, Counting, EvalContext, EvaluationResult, ReplayBackend, ReplayTable,
    SurrogateConfig,
};
use crate::freezer::{
    apply_freeze, layer_variation, split_point, Backbone, FeatureTrace, FreezePlan, FrozenSpace,
    Normalization, DEFAULT_FREEZE_RATIO,
};
use crate::latency::{next_resolution, CostModel, LatencyTable};
use crate::reward::{RewardParams, Specification};
use crate::rng::CounterRng;
use crate::search_space::{cardinality, ArchitectureSpec, SearchSpaceConfig};

pub use oracle::{exhaustive_oracle, LandscapeRow, Oracle};
pub use pareto::{pareto, ParetoPoint};
pub use report::{score_report, ScoreRow, ScoreSpec};

pub const RUN_LOG_FILE: &str = "run_log.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "controller.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    Surrogate(SurrogateConfig),
    /// Replay file of recorded accuracies keyed by architecture summary.
    Replay(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LatencySource {
    Table(PathBuf),
    CostModel(CostModel),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreezeConfig {
    pub trace: PathBuf,
    #[serde(default = "default_ratio")]
    pub ratio: f64,
    #[serde(default)]
    pub normalization: Normalization,
    /// One-based backbone block of each trace layer.
    pub layer_to_block: Vec<usize>,
    pub backbone: Backbone,
}

fn default_ratio() -> f64 {
    DEFAULT_FREEZE_RATIO
}
fn default_episodes() -> usize {
    500
}
fn default_threads() -> usize {
    1
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("run")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub search_space: SearchSpaceConfig,
    pub spec: Specification,
    #[serde(default)]
    pub reward: RewardParams,
    #[serde(default)]
    pub controller: Hyper,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    pub backend: BackendConfig,
    pub latency: LatencySource,
    #[serde(default)]
    pub freeze: Option<FreezeConfig>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Evaluation threads. Results do not depend on this.
    #[serde(default = "default_threads")]
    pub threads: usize,
}

impl RunConfig {
    /// Parses and validates a config file. Relative paths are taken from the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        cfg.check()?;
        Ok(cfg)
    }

    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let BackendConfig::Replay(p) = &mut self.backend {
            fix(p);
        }
        if let LatencySource::Table(p) = &mut self.latency {
            fix(p);
        }
        if let Some(f) = &mut self.freeze {
            fix(&mut f.trace);
        }
        fix(&mut self.output_dir);
    }

    pub fn referenced_files(&self) -> Vec<&Path> {
        let mut files = Vec::new();
        if let BackendConfig::Replay(p) = &self.backend {
            files.push(p.as_path());
        }
        if let LatencySource::Table(p) = &self.latency {
            files.push(p.as_path());
        }
        if let Some(f) = &self.freeze {
            files.push(f.trace.as_path());
        }
        files
    }

    pub fn check(&self) -> Result<()> {
        self.search_space.check()?;
        self.spec.check()?;
        self.reward.check()?;
        self.controller.check()?;
        if self.episodes == 0 {
            return Err(Error::InvalidConfig("episodes must be at least 1".into()));
        }
        if self.threads == 0 {
            return Err(Error::InvalidConfig("threads must be at least 1".into()));
        }
        if let BackendConfig::Surrogate(s) = &self.backend {
            s.check()?;
        }
        if let Some(f) = &self.freeze {
            if !(f.ratio > 0.0 && f.ratio <= 1.0) {
                return Err(Error::InvalidConfig(
                    "freeze ratio must lie in (0, 1]".into(),
                ));
            }
        }
        for p in self.referenced_files() {
            if !p.is_file() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file not found"),
                ));
            }
        }
        Ok(())
    }

    pub fn options(&self) -> SearchOptions {
        SearchOptions {
            episodes: self.episodes,
            hyper: self.controller.clone(),
            seed: self.seed,
            threads: self.threads,
        }
    }
}

/// A fully materialized search: the (possibly reduced) space, constraints,
/// latency table and backend.
pub struct SearchProblem {
    pub config: SearchSpaceConfig,
    pub spec: Specification,
    pub reward: RewardParams,
    pub latency: LatencyTable,
    pub backend: Box<dyn Backend>,
    pub freeze: Option<(FreezePlan, FrozenSpace)>,
}

impl SearchProblem {
    pub fn new(
        config: SearchSpaceConfig,
        spec: Specification,
        reward: RewardParams,
        latency: LatencyTable,
        backend: Box<dyn Backend>,
    ) -> Result<Self> {
        config.check()?;
        spec.check()?;
        reward.check()?;
        if !spec.device_id.is_empty() && spec.device_id != latency.device_id {
            return Err(Error::InvalidConfig(format!(
                "specification targets {:?} but the latency table is for {:?}",
                spec.device_id, latency.device_id
            )));
        }
        Ok(SearchProblem {
            config,
            spec,
            reward,
            latency,
            backend,
            freeze: None,
        })
    }

    /// Builds the problem, running the freeze phase first when configured.
    pub fn from_run_config(cfg: &RunConfig) -> Result<Self> {
        let backend: Box<dyn Backend> = match &cfg.backend {
            BackendConfig::Surrogate(s) => Box::new(s.clone()),
            BackendConfig::Replay(p) => Box::new(ReplayBackend::from_table(&ReplayTable::load(p)?)),
        };
        let Some(fc) = &cfg.freeze else {
            let latency = match &cfg.latency {
                LatencySource::Table(p) => LatencyTable::load(p)?,
                LatencySource::CostModel(m) => m.generate(&cfg.search_space)?,
            };
            return SearchProblem::new(
                cfg.search_space.clone(),
                cfg.spec.clone(),
                cfg.reward,
                latency,
                backend,
            );
        };
        let trace = FeatureTrace::read_jsonl(&fc.trace)?;
        let plan = split_point(&layer_variation(&trace, fc.normalization)?, fc.ratio)?;
        let frozen = apply_freeze(&plan, &fc.backbone, &fc.layer_to_block, &cfg.search_space)?;
        let latency = match &cfg.latency {
            LatencySource::Table(p) => {
                let mut t = LatencyTable::load(p)?;
                t.header_overhead_ms +=
                    t.blocks_latency(&frozen.header, fc.backbone.input_resolution)?;
                t
            }
            LatencySource::CostModel(m) => {
                let mut t = m.generate(&frozen.config)?;
                t.header_overhead_ms +=
                    prefix_latency(m, &frozen.header, fc.backbone.input_resolution);
                t
            }
        };
        let mut problem = SearchProblem::new(
            frozen.config.clone(),
            cfg.spec.clone(),
            cfg.reward,
            latency,
            backend,
        )?;
        problem.freeze = Some((plan, frozen));
        Ok(problem)
    }

    pub fn frozen_blocks(&self) -> usize {
        self.freeze
            .as_ref()
            .map_or(0, |(_, f)| f.frozen_block_count)
    }

    pub fn context<'a>(&'a self, backend: &'a dyn Backend) -> EvalContext<'a> {
        EvalContext {
            spec: &self.spec,
            reward: &self.reward,
            latency: &self.latency,
            input_resolution: self.config.input_resolution,
            backend,
        }
    }

    pub fn evaluate(&self, arch: &ArchitectureSpec) -> Result<EvaluationResult> {
        evaluate_full(arch, &self.context(&*self.backend))
    }
}

fn prefix_latency(model: &CostModel, header: &ArchitectureSpec, input_resolution: u32) -> f64 {
    let mut res = input_resolution;
    let mut total = 0.0;
    for r in header.resolved() {
        total += model.block_latency(&r.block, r.ch1, res);
        res = next_resolution(res, r.block.block_type.stride());
    }
    total
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOptions {
    pub episodes: usize,
    pub hyper: Hyper,
    pub seed: u64,
    pub threads: usize,
}

/// One sampled child network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub episode: usize,
    pub sample: usize,
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

impl LogRow {
    fn new(
        episode: usize,
        sample: usize,
        actions: &[usize],
        arch: &ArchitectureSpec,
        r: &EvaluationResult,
    ) -> Self {
        LogRow {
            episode,
            sample,
            actions: join_actions(actions),
            architecture: arch.summary(),
            reward: r.reward_value,
            feasible: r.feasible,
            evaluated: r.evaluated(),
            latency_ms: r.latency_ms,
            accuracy: r.accuracy(),
            unfairness: r.unfair,
            params: r.params,
        }
    }
}

pub fn join_actions(actions: &[usize]) -> String {
    actions
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join("-")
}

/// Float32 weights, in MiB.
pub fn storage_mb(params: u64) -> f64 {
    params as f64 * 4.0 / f64::from(1u32 << 20)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunLog {
    pub rows: Vec<LogRow>,
    pub batch_size: usize,
    pub action_len: usize,
    pub frozen_blocks: usize,
    pub search_cardinality: String,
    pub backend_calls: u64,
    pub wall_time_s: f64,
    pub controller: Option<ControllerState>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BestEntry {
    #[serde(flatten)]
    pub row: LogRow,
    pub storage_mb: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub episodes: usize,
    pub samples: usize,
    pub best: Option<BestEntry>,
    /// Best reward seen up to and including each episode.
    pub best_so_far: Vec<f64>,
    pub valid_rate: f64,
    pub backend_calls: u64,
    pub bypassed: usize,
    pub action_len: usize,
    pub frozen_blocks: usize,
    pub search_cardinality: String,
    pub wall_time_s: f64,
    pub aborted: Option<String>,
}

impl RunLog {
    pub fn episodes(&self) -> usize {
        self.rows.last().map_or(0, |r| r.episode)
    }

    /// Highest reward; the earliest sample wins ties.
    pub fn best(&self) -> Option<&LogRow> {
        self.rows
            .iter()
            .fold(None, |best: Option<&LogRow>, r| match best {
                Some(b) if b.reward >= r.reward => Some(b),
                _ => Some(r),
            })
    }

    pub fn best_so_far(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::with_capacity(self.episodes());
        for r in &self.rows {
            let prev = out.last().copied().unwrap_or(f64::NEG_INFINITY);
            if out.len() < r.episode {
                out.push(prev.max(r.reward));
            } else if let Some(last) = out.last_mut() {
                *last = last.max(r.reward);
            }
        }
        out
    }

    pub fn summary(&self, aborted: Option<&Error>) -> RunSummary {
        RunSummary {
            episodes: self.episodes(),
            samples: self.rows.len(),
            best: self.best().map(|r| BestEntry {
                row: r.clone(),
                storage_mb: storage_mb(r.params),
            }),
            best_so_far: self.best_so_far(),
            valid_rate: valid_rate(self),
            backend_calls: self.backend_calls,
            bypassed: self.rows.iter().filter(|r| !r.evaluated).count(),
            action_len: self.action_len,
            frozen_blocks: self.frozen_blocks,
            search_cardinality: self.search_cardinality.clone(),
            wall_time_s: self.wall_time_s,
            aborted: aborted.map(|e| e.to_string()),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.rows.is_empty() {
            w.write_record([
                "episode",
                "sample",
                "actions",
                "architecture",
                "reward",
                "feasible",
                "evaluated",
                "latency_ms",
                "accuracy",
                "unfairness",
                "params",
            ])
            .expect("in-memory write");
        }
        for r in &self.rows {
            w.serialize(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    pub fn write(&self, dir: &Path, aborted: Option<&Error>) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        put(RUN_LOG_FILE, self.to_csv())?;
        let summary =
            serde_json::to_string_pretty(&self.summary(aborted)).expect("summary serializes");
        put(SUMMARY_FILE, summary + "\n")?;
        if let Some(state) = &self.controller {
            put(CHECKPOINT_FILE, state.to_json())?;
        }
        Ok(())
    }
}

/// Fraction of sampled architectures that met both constraints.
/// An empty log has rate 0.
pub fn valid_rate(log: &RunLog) -> f64 {
    if log.rows.is_empty() {
        return 0.0;
    }
    log.rows.iter().filter(|r| r.feasible).count() as f64 / log.rows.len() as f64
}

/// A search that stopped early, with everything logged before the failure.
#[derive(Debug)]
pub struct Aborted {
    pub log: Box<RunLog>,
    pub error: Error,
}

impl std::fmt::Display for Aborted {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "search aborted after {} episodes: {}",
            self.log.episodes(),
            self.error
        )
    }
}

impl std::error::Error for Aborted {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

fn derived_seed(master: u64, stream: u64) -> u64 {
    CounterRng::keyed(master, [stream]).bits(0)
}

pub fn run_search(
    problem: &SearchProblem,
    opts: &SearchOptions,
) -> std::result::Result<RunLog, Aborted> {
    let started = Instant::now();
    let counting = Counting::new(&*problem.backend);
    let mut log = RunLog {
        rows: Vec::new(),
        batch_size: opts.hyper.batch_size,
        action_len: problem.config.action_len(),
        frozen_blocks: problem.frozen_blocks(),
        search_cardinality: cardinality(&problem.config).to_string(),
        backend_calls: 0,
        wall_time_s: 0.0,
        controller: None,
    };
    let outcome = drive(problem, opts, &counting, &mut log);
    log.backend_calls = counting.calls();
    log.wall_time_s = started.elapsed().as_secs_f64();
    match outcome {
        Ok(state) => {
            log.controller = Some(state);
            Ok(log)
        }
        Err(error) => Err(Aborted {
            log: Box::new(log),
            error,
        }),
    }
}

fn drive(
    problem: &SearchProblem,
    opts: &SearchOptions,
    backend: &dyn Backend,
    log: &mut RunLog,
) -> Result<ControllerState> {
    if opts.episodes == 0 || opts.threads == 0 {
        return Err(Error::InvalidConfig(
            "episodes and threads must be at least 1".into(),
        ));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads)
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut state = ControllerState::init(
        &problem.config,
        opts.hyper.clone(),
        derived_seed(opts.seed, 1),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(opts.seed, 2));
    let ctx = problem.context(backend);
    for episode in 1..=opts.episodes {
        let drawn = (0..opts.hyper.batch_size)
            .map(|_| state.sample(&problem.config, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let results: Vec<Result<EvaluationResult>> = pool.install(|| {
            drawn
                .par_iter()
                .map(|(arch, _)| evaluate_full(arch, &ctx))
                .collect()
        });
        let mut batch: Vec<EpisodeRecord> = Vec::with_capacity(drawn.len());
        for (k, ((arch, mut ep), res)) in drawn.into_iter().zip(results).enumerate() {
            let res = res?;
            ep.reward = res.reward_value;
            ep.feasible = res.feasible;
            log.rows
                .push(LogRow::new(episode, k + 1, &ep.actions, &arch, &res));
            batch.push(ep);
        }
        state.update(&batch)?;
    }
    Ok(state)
}

/// Loads problem and runs the search, writing outputs to `out_dir` (the
/// configured output directory by default) even when the search aborts.
pub fn execute(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<RunLog> {
    let problem = SearchProblem::from_run_config(cfg)?;
    let dir = out_dir.unwrap_or(&cfg.output_dir);
    match run_search(&problem, &cfg.options()) {
        Ok(log) => {
            log.write(dir, None)?;
            Ok(log)
        }
        Err(a) => {
            a.log.write(dir, Some(&a.error))?;
            Err(a.error)
        }
    }
}
