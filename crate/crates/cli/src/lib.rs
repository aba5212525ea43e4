//! Command-line front end: configuration, dispatch and artifact emission.

pub mod commands;
pub mod config;
pub mod emit;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mfe_core::casestudy::CaseMode;
use mfe_core::sim::SweepMode;

use config::{out_dir, parse_config, parse_k_list, parse_psi_list, Mode, Overrides, RunConfig, OUT_DIR_ENV};
use emit::{write_manifest, Artifacts};
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "mfe", version, about = "Mean field equilibria of budget-constrained sharing markets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for the equilibrium belief and write value, policy and budget law.
    Solve,
    /// Best-response Monte Carlo run.
    Simulate,
    /// Trade ratio and value over a grid of prices and regeneration laws.
    Sweep {
        /// `solve` (analytic) or `simulate`.
        #[arg(long = "sweep-mode")]
        sweep_mode: Option<String>,
    },
    /// Two-region photovoltaic market.
    CaseStudy {
        /// Weather CSV with `timestamp,region_a_good,region_b_good`.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// `solve`, `simulate` or `both`.
        #[arg(long = "case-mode")]
        case_mode: Option<String>,
    },
    /// Structural checks of the solved market.
    Check,
}

#[derive(Debug, Args, Default)]
pub struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// `hard`, `bank`, `peer-loan` or `all`.
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Price: a value, a comma list or `lo:step:hi`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub k: Option<String>,
    /// Regeneration laws, e.g. `U[0,5],U[5,10]`.
    #[arg(long, global = true)]
    pub psi: Option<String>,
    #[arg(long, global = true)]
    pub agents: Option<usize>,
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default `$MFE_OUT_DIR`, then `mfe-out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads, 0 for all cores.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub beta: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub s: Option<f64>,
    #[arg(long = "c-serve", global = true, allow_hyphen_values = true)]
    pub c_serve: Option<f64>,
    #[arg(long = "c-lose", global = true, allow_hyphen_values = true)]
    pub c_lose: Option<f64>,
    /// Client probability; the server probability becomes `1 - p_c`.
    #[arg(long = "p-c", global = true, allow_hyphen_values = true)]
    pub p_c: Option<f64>,
    /// Grid step.
    #[arg(long, global = true)]
    pub delta: Option<f64>,
    /// Grid top.
    #[arg(long = "b-max", global = true)]
    pub b_max: Option<f64>,
}

fn sweep_mode(s: &str) -> Result<SweepMode> {
    match s {
        "solve" => Ok(SweepMode::Solve),
        "simulate" => Ok(SweepMode::Simulate),
        _ => Err(CliError::config("sweep-mode", format!("`{s}` is not solve or simulate"))),
    }
}

fn case_mode(s: &str) -> Result<CaseMode> {
    match s {
        "solve" => Ok(CaseMode::Solve),
        "simulate" => Ok(CaseMode::Simulate),
        "both" => Ok(CaseMode::Both),
        _ => Err(CliError::config("case-mode", format!("`{s}` is not solve, simulate or both"))),
    }
}

impl Cli {
    pub fn mode(&self) -> Mode {
        match self.command {
            Command::Solve => Mode::Solve,
            Command::Simulate => Mode::Simulate,
            Command::Sweep { .. } => Mode::Sweep,
            Command::CaseStudy { .. } => Mode::CaseStudy,
            Command::Check => Mode::Check,
        }
    }

    pub fn overrides(&self) -> Result<Overrides> {
        let c = &self.common;
        let mut ov = Overrides {
            model: c.model.as_deref().map(str::parse).transpose()?,
            k: c.k.as_deref().map(parse_k_list).transpose()?,
            psi: c.psi.as_deref().map(parse_psi_list).transpose()?,
            agents: c.agents,
            steps: c.steps,
            seed: c.seed,
            out: c.out.clone(),
            workers: c.workers,
            alpha: c.alpha,
            beta: c.beta,
            s: c.s,
            c_serve: c.c_serve,
            c_lose: c.c_lose,
            p_c: c.p_c,
            delta: c.delta,
            b_max: c.b_max,
            ..Overrides::default()
        };
        match &self.command {
            Command::Sweep { sweep_mode: Some(m) } => ov.sweep_mode = Some(sweep_mode(m)?),
            Command::CaseStudy { trace, case_mode: m } => {
                ov.trace = trace.clone();
                ov.case_mode = m.as_deref().map(case_mode).transpose()?;
            }
            _ => {}
        }
        Ok(ov)
    }

    pub fn config(&self) -> Result<RunConfig> {
        parse_config(self.common.config.as_deref(), self.mode(), &self.overrides()?)
    }
}

/// What a finished run leaves behind.
#[derive(Debug)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub manifest: PathBuf,
    pub summary: String,
}

/// Runs a validated configuration inside a pool of `cfg.workers` threads.
pub fn execute(cfg: &RunConfig) -> Result<RunOutcome> {
    let mut art = Artifacts::create(out_dir(cfg))?;
    let go = |art: &mut Artifacts| match cfg.mode {
        Mode::Solve => commands::solve(cfg, art),
        Mode::Simulate => commands::simulate(cfg, art),
        Mode::Sweep => commands::run_sweep(cfg, art),
        Mode::CaseStudy => commands::case_study(cfg, art),
        Mode::Check => commands::check(cfg, art),
    };
    let summary = if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| CliError::config("workers", e.to_string()))?
            .install(|| go(&mut art))?
    } else {
        go(&mut art)?
    };
    let manifest = write_manifest(&mut art, cfg)?;
    Ok(RunOutcome {
        out_dir: art.dir.clone(),
        files: art.files().to_vec(),
        manifest,
        summary,
    })
}

/// Parses arguments (without clap's exit on bad input) and runs.
pub fn run_from<I, T>(args: I) -> Result<RunOutcome>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::config("arguments", e.to_string()))?;
    execute(&cli.config()?)
}

/// Name of the environment variable holding the default output directory.
pub fn out_dir_env() -> &'static str {
    OUT_DIR_ENV
}
