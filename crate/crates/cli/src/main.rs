use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fairnas::evaluator::ReplayTable;
use fairnas::freezer::{layer_variation, split_point, FeatureTrace, Normalization, TraceProfile};
use fairnas::harness::{self, pareto::read_points, report, RunConfig, ScoreSpec, SearchProblem};
use fairnas::latency::{CostModel, LatencyTable};
use fairnas::reward::RewardParams;
use fairnas::search_space::{
    cardinality, encode, enumerate, param_count, ArchitectureSpec, SearchSpaceConfig,
};
use fairnas::{Error, Result};

#[derive(Parser)]
#[command(
    name = "fairnas",
    version,
    about = "Fairness- and hardware-aware architecture search"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Norm {
    None,
    PerDimension,
}

impl From<Norm> for Normalization {
    fn from(n: Norm) -> Self {
        match n {
            Norm::None => Normalization::None,
            Norm::PerDimension => Normalization::PerDimension,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a search and write run_log.csv and summary.json.
    Search {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides output_dir in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// List every architecture of a search-space config in canonical order.
    Enumerate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        limit: u64,
        /// Print only the cardinality.
        #[arg(long)]
        count: bool,
    },
    /// Score every architecture of a run config's space.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        limit: u64,
        /// Landscape CSV destination; stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pick the freeze split from a feature trace.
    Freeze {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = fairnas::freezer::DEFAULT_FREEZE_RATIO)]
        ratio: f64,
        #[arg(long, value_enum, default_value = "none")]
        normalization: Norm,
    },
    /// Estimate an architecture's latency from a lookup table.
    Latency {
        #[arg(long)]
        arch: PathBuf,
        #[arg(long)]
        table: PathBuf,
        #[arg(long, default_value_t = 224)]
        resolution: u32,
    },
    /// Re-score recorded models against a baseline.
    Score {
        #[arg(long)]
        replay: PathBuf,
        #[arg(long)]
        baseline: String,
        #[arg(long)]
        ac: f64,
        #[arg(long)]
        tc: Option<f64>,
        #[arg(long, default_value = "raspberry")]
        device: String,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Accuracy/unfairness Pareto frontier of id,accuracy,unfairness rows.
    Pareto {
        #[arg(long)]
        points: PathBuf,
    },
    /// Write a synthetic latency table covering a search space.
    GenTable {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "synthetic")]
        device: String,
        #[arg(long, default_value_t = 2.0)]
        ms_per_mmac: f64,
        #[arg(long, default_value_t = 0.5)]
        per_block_ms: f64,
        #[arg(long, default_value_t = 20.0)]
        header_ms: f64,
    },
    /// Write a synthetic per-layer feature trace.
    GenTrace {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 17)]
        layers: usize,
        #[arg(long, default_value_t = 2)]
        groups: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 8)]
        samples: usize,
        #[arg(long, default_value_t = 13)]
        split: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn emit(text: &str) -> Result<()> {
    std::io::stdout()
        .write_all(text.as_bytes())
        .map_err(|e| Error::Io {
            path: "<stdout>".into(),
            source: e,
        })
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Search {
            config,
            out,
            episodes,
            seed,
            threads,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(n) = episodes {
                cfg.episodes = n;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = threads {
                cfg.threads = t;
            }
            cfg.check()?;
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            let log = harness::execute(&cfg, Some(&dir))?;
            let summary = log.summary(None);
            let best = summary
                .best
                .as_ref()
                .map(|b| b.row.architecture.as_str())
                .unwrap_or("-");
            emit(&format!(
                "{} episodes, valid rate {:.4}, best reward {:.4} {best}\nwrote {}\n",
                summary.episodes,
                summary.valid_rate,
                summary.best.as_ref().map_or(f64::NAN, |b| b.row.reward),
                dir.display()
            ))
        }
        Command::Enumerate {
            config,
            limit,
            count,
        } => {
            let cfg = SearchSpaceConfig::from_json(&read_text(&config)?)?;
            if count {
                return emit(&format!("{}\n", cardinality(&cfg)));
            }
            let mut out = String::from("index,actions,architecture,params\n");
            for (i, arch) in enumerate(&cfg, limit)?.enumerate() {
                let actions = harness::join_actions(&encode(&arch, &cfg)?);
                out.push_str(&format!(
                    "{i},{actions},\"{}\",{}\n",
                    arch.summary(),
                    param_count(&arch)
                ));
            }
            emit(&out)
        }
        Command::Oracle { config, limit, out } => {
            let cfg = RunConfig::load(&config)?;
            let problem = SearchProblem::from_run_config(&cfg)?;
            let oracle = harness::exhaustive_oracle(&problem, limit)?;
            let best = oracle.best_row();
            let line = format!(
                "{} architectures, best reward {:.4} at index {}: {}\n",
                oracle.rows.len(),
                best.reward,
                best.index,
                best.architecture
            );
            match out {
                Some(p) => {
                    write_text(&p, &oracle.to_csv())?;
                    emit(&line)
                }
                None => emit(&oracle.to_csv()),
            }
        }
        Command::Freeze {
            trace,
            ratio,
            normalization,
        } => {
            let trace = FeatureTrace::read_jsonl(&trace)?;
            let plan = split_point(&layer_variation(&trace, normalization.into())?, ratio)?;
            emit(&json(&plan))
        }
        Command::Latency {
            arch,
            table,
            resolution,
        } => {
            let arch: ArchitectureSpec = serde_json::from_str(&read_text(&arch)?)
                .map_err(|e| Error::InvalidArchitecture(e.to_string()))?;
            let table = LatencyTable::load(&table)?;
            emit(&format!("{:.4}\n", table.estimate(&arch, resolution)?))
        }
        Command::Score {
            replay,
            baseline,
            ac,
            tc,
            device,
            alpha,
            beta,
            format,
        } => {
            let params = RewardParams { alpha, beta };
            params.check()?;
            let spec = ScoreSpec {
                accuracy_constraint: ac,
                timing_constraint_ms: tc,
                device,
            };
            let rows =
                harness::score_report(&ReplayTable::load(&replay)?, &spec, &params, &baseline)?;
            match format {
                Format::Csv => emit(&report::render(&rows)),
                Format::Json => emit(&json(&rows)),
            }
        }
        Command::Pareto { points } => {
            let front = harness::pareto(&read_points(&points)?);
            let mut out = String::from("id,accuracy,unfairness\n");
            for p in front {
                out.push_str(&format!("\"{}\",{},{}\n", p.id, p.accuracy, p.unfairness));
            }
            emit(&out)
        }
        Command::GenTable {
            config,
            out,
            device,
            ms_per_mmac,
            per_block_ms,
            header_ms,
        } => {
            let cfg = SearchSpaceConfig::from_json(&read_text(&config)?)?;
            let model = CostModel {
                device_id: device,
                ms_per_mmac,
                per_block_ms,
                header_overhead_ms: header_ms,
            };
            let table = model.generate(&cfg)?;
            table.write_csv(&out)?;
            emit(&format!(
                "{} entries written to {}\n",
                table.entries.len(),
                out.display()
            ))
        }
        Command::GenTrace {
            out,
            layers,
            groups,
            dim,
            samples,
            split,
            seed,
        } => {
            let profile = TraceProfile {
                layers,
                groups,
                dim,
                samples_per_group: samples,
                split_layer: split,
                seed,
                ..TraceProfile::default()
            };
            fairnas::freezer::synthesize_trace(&profile)?.write_jsonl(&out)?;
            emit(&format!("{layers} layers written to {}\n", out.display()))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 3 } else { 2 })
        }
    }
}
