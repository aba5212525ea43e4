//! Parameter sweeps over the price `k` and the regeneration distribution.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{rng, Simulation, SimConfig};
use crate::dp::DpProblem;
use crate::error::Result;
use crate::market::{LoanModel, RegenerationDistribution};
use crate::mfe::{sweep_equilibria, MfeOptions, DEFAULT_Z0_SCAN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMode {
    /// Analytic equilibrium; with several, the one with the highest trade ratio.
    Solve,
    /// Best-response Monte Carlo run seeded per cell.
    Simulate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub index: usize,
    pub k: f64,
    pub psi: RegenerationDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub index: usize,
    pub k: f64,
    pub psi: String,
    pub model: LoanModel,
    pub trade_ratio: Option<f64>,
    pub expected_value: Option<f64>,
    pub z_star: Option<f64>,
    pub residual: Option<f64>,
    /// Distinct equilibria found (solve mode).
    pub equilibria: usize,
    pub seed: Option<u64>,
    pub warnings: Vec<String>,
    pub error: Option<String>,
}

/// Cells in `psi`-major order.
pub fn cells(k_values: &[f64], psi_options: &[RegenerationDistribution]) -> Vec<SweepCell> {
    psi_options
        .iter()
        .flat_map(|psi| k_values.iter().map(move |&k| (k, psi.clone())))
        .enumerate()
        .map(|(index, (k, psi))| SweepCell { index, k, psi })
        .collect()
}

fn run_cell(cell: &SweepCell, cfg: &SimConfig, mode: SweepMode, opts: &MfeOptions) -> Result<SweepRow> {
    let params = cfg.params.clone().with_k(cell.k).with_psi(cell.psi.clone());
    let mut row = SweepRow {
        index: cell.index,
        k: cell.k,
        psi: cell.psi.to_string(),
        model: cfg.model,
        trade_ratio: None,
        expected_value: None,
        z_star: None,
        residual: None,
        equilibria: 0,
        seed: None,
        warnings: params.band_warnings(),
        error: None,
    };
    match mode {
        SweepMode::Solve => {
            let dp = DpProblem::new(params, cfg.model, cfg.grid)?;
            let found = sweep_equilibria(&dp, opts, &DEFAULT_Z0_SCAN);
            row.equilibria = found.len();
            let best = found
                .into_iter()
                .max_by(|a, b| a.trade_ratio.total_cmp(&b.trade_ratio))
                .ok_or_else(|| crate::Error::NoFixedPoint { trace: Vec::new() })?;
            row.trade_ratio = Some(best.trade_ratio);
            row.expected_value = Some(best.expected_value);
            row.z_star = Some(best.z_star);
            row.residual = Some(best.residual);
        }
        SweepMode::Simulate => {
            let seed = rng::cell_seed(cfg.seed, cell.index as u64);
            // the sweep owns the worker pool; cells run single-level
            let c = SimConfig {
                params,
                seed,
                workers: 0,
                ..cfg.clone()
            };
            let out = Simulation::new(c)?.run()?;
            row.seed = Some(seed);
            row.trade_ratio = Some(out.summary.terminal_trade_ratio);
            row.expected_value = out.summary.expected_value[0];
            row.z_star = Some(out.summary.z.tail_mean);
        }
    }
    Ok(row)
}

/// One row per cell; a failing cell records its error and the sweep goes on.
pub fn sweep(
    k_values: &[f64],
    psi_options: &[RegenerationDistribution],
    cfg: &SimConfig,
    mode: SweepMode,
    opts: &MfeOptions,
) -> Result<Vec<SweepRow>> {
    let all = cells(k_values, psi_options);
    let go = || -> Vec<SweepRow> {
        all.par_iter()
            .map(|cell| {
                run_cell(cell, cfg, mode, opts).unwrap_or_else(|e| SweepRow {
                    index: cell.index,
                    k: cell.k,
                    psi: cell.psi.to_string(),
                    model: cfg.model,
                    trade_ratio: None,
                    expected_value: None,
                    z_star: None,
                    residual: None,
                    equilibria: 0,
                    seed: None,
                    warnings: Vec::new(),
                    error: Some(e.to_string()),
                })
            })
            .collect()
    };
    if cfg.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| crate::Error::Invalid(format!("thread pool: {e}")))?;
        Ok(pool.install(go))
    } else {
        Ok(go())
    }
}
