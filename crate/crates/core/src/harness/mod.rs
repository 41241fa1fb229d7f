//! Experiment orchestration: configs, seed battery execution, reports and the
//! command implementations behind the CLI.

pub mod config;
pub mod lower_bound;
pub mod report;
pub mod slope;
pub mod sweep;
pub mod verify;

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::bandit::{simulate_episode, EpisodeOptions, EpisodeSpec, RegretTrace};
use crate::error::Error;

pub use config::ExperimentConfig;
use report::{SeedSummary, SlopeSummary, Summary};

/// Environment variable overriding the worker thread count.
pub const THREADS_ENV: &str = "SMOOTHED_BANDIT_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(Error),
    #[error(transparent)]
    Run(Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl From<Error> for HarnessError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => HarnessError::Config(e),
            other => HarnessError::Run(other),
        }
    }
}

impl HarnessError {
    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type HarnessResult<T> = std::result::Result<T, HarnessError>;

/// Thread pool sized by [`THREADS_ENV`], or rayon's default when unset.
pub fn thread_pool() -> HarnessResult<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().map_err(|_| {
            HarnessError::Config(Error::config(
                format!("${THREADS_ENV}"),
                format!("expected a positive integer, got {v:?}"),
            ))
        })?;
        builder = builder.num_threads(n.max(1));
    }
    builder
        .build()
        .map_err(|e| HarnessError::Run(Error::invalid(format!("cannot start thread pool: {e}"))))
}

/// Runs one episode per seed. Output order follows `seeds` regardless of
/// scheduling.
pub fn run_seeds(
    spec: &EpisodeSpec,
    seeds: &[u64],
    opts: EpisodeOptions,
    parallel: bool,
) -> crate::Result<Vec<RegretTrace>> {
    if parallel {
        seeds.par_iter().map(|&s| simulate_episode(spec, s, opts)).collect()
    } else {
        seeds.iter().map(|&s| simulate_episode(spec, s, opts)).collect()
    }
}

pub(crate) fn write_file(path: &Path, contents: &str) -> HarnessResult<()> {
    std::fs::write(path, contents).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn ensure_dir(dir: &Path) -> HarnessResult<()> {
    std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

pub fn trace_file_name(seed: u64) -> String {
    format!("trace_seed{seed}.csv")
}

pub const SUMMARY_FILE: &str = "summary.json";

/// Slope window implied by the configured checkpoints (those `>= 10`).
fn checkpoint_slope(traces: &[RegretTrace], checkpoints: &[usize]) -> crate::Result<Option<SlopeSummary>> {
    let mut usable: Vec<usize> = checkpoints.iter().copied().filter(|&t| t >= 10).collect();
    usable.sort_unstable();
    usable.dedup();
    if usable.len() < 2 {
        return Ok(None);
    }
    let fit = slope::fit_regret_slope_at(traces, &usable)?;
    Ok(Some(SlopeSummary {
        t_lo: usable[0],
        t_hi: usable[usable.len() - 1],
        slope: fit.slope,
        stderr: fit.stderr,
    }))
}

/// Runs every seed of `cfg`, writes per-seed CSV traces and `summary.json`
/// into `out_dir` (falling back to the configured directory, then `.`).
pub fn simulate(cfg: &ExperimentConfig, out_dir: Option<&Path>, parallel: bool) -> HarnessResult<Summary> {
    cfg.validate()?;
    let dir = out_dir
        .map(Path::to_path_buf)
        .or_else(|| cfg.outputs.dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let spec = cfg.episode();
    let traces = if parallel {
        thread_pool()?.install(|| run_seeds(&spec, &cfg.seeds, EpisodeOptions::default(), true))?
    } else {
        run_seeds(&spec, &cfg.seeds, EpisodeOptions::default(), false)?
    };
    ensure_dir(&dir)?;
    let mut seeds = Vec::with_capacity(traces.len());
    for (&seed, trace) in cfg.seeds.iter().zip(&traces) {
        let file = if cfg.outputs.traces {
            let name = trace_file_name(seed);
            write_file(&dir.join(&name), &report::trace_csv(trace))?;
            Some(name)
        } else {
            None
        };
        seeds.push(SeedSummary::of(seed, trace, &cfg.checkpoints, file));
    }
    let slope = checkpoint_slope(&traces, &cfg.checkpoints)?;
    let summary = Summary::build(cfg.horizon, cfg.model.arms, seeds, &cfg.checkpoints, slope);
    let json = serde_json::to_string_pretty(&summary).expect("summary serialises");
    write_file(&dir.join(SUMMARY_FILE), &(json + "\n"))?;
    Ok(summary)
}
