//! Run configuration: JSON file, then command-line overrides, then validation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mfe_core::casestudy::{case_study_params, CaseMode, DaytimeRule, JointWeatherProbs};
use mfe_core::mfe::MfeOptions;
use mfe_core::sim::{SweepMode, DEFAULT_RECORD};
use mfe_core::{GridSpec, LoanModel, MarketParams, RegenerationDistribution, SimConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "MFE_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "mfe-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Solve,
    Simulate,
    Sweep,
    CaseStudy,
    Check,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Solve => "solve",
            Mode::Simulate => "simulate",
            Mode::Sweep => "sweep",
            Mode::CaseStudy => "case-study",
            Mode::Check => "check",
        }
    }
}

/// One financing model or all three.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelSel {
    One(LoanModel),
    All,
}

impl Default for ModelSel {
    fn default() -> Self {
        ModelSel::One(LoanModel::Bank)
    }
}

impl ModelSel {
    pub fn models(self) -> Vec<LoanModel> {
        match self {
            ModelSel::One(m) => vec![m],
            ModelSel::All => LoanModel::ALL.to_vec(),
        }
    }
}

impl FromStr for ModelSel {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(ModelSel::All);
        }
        s.parse::<LoanModel>().map(ModelSel::One).map_err(CliError::from)
    }
}

impl fmt::Display for ModelSel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelSel::One(m) => f.write_str(m.as_str()),
            ModelSel::All => f.write_str("all"),
        }
    }
}

impl Serialize for ModelSel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ModelSel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse::<ModelSel>().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSettings {
    pub agents: usize,
    pub steps: usize,
    pub policy_refresh_period: usize,
    pub belief_window: usize,
    pub belief_damping: f64,
    pub initial_belief: f64,
    pub record: Vec<String>,
}

impl Default for SimSettings {
    fn default() -> Self {
        let d = SimConfig::default();
        SimSettings {
            agents: 100_000,
            steps: 2000,
            policy_refresh_period: d.policy_refresh_period,
            belief_window: d.belief_window,
            belief_damping: d.belief_damping,
            initial_belief: d.initial_belief,
            record: DEFAULT_RECORD.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub k: Vec<f64>,
    pub psi: Vec<RegenerationDistribution>,
    pub mode: SweepMode,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            k: (0..10).map(|i| 6.0 + 0.25 * i as f64).collect(),
            psi: vec![
                RegenerationDistribution::uniform(0.0, 5.0),
                RegenerationDistribution::uniform(3.0, 8.0),
                RegenerationDistribution::uniform(5.0, 10.0),
            ],
            mode: SweepMode::Solve,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaseSpec {
    pub params: MarketParams,
    /// Weather CSV; when absent the shares and hour counts below are used.
    pub trace: Option<PathBuf>,
    pub daytime: DaytimeRule,
    pub probs: JointWeatherProbs,
    pub client_hours_a: u64,
    pub client_hours_b: u64,
    pub mode: CaseMode,
    pub agents: usize,
    /// Simulated budgets reach a few hundred units, so the grid is taller.
    pub grid: GridSpec,
}

impl Default for CaseSpec {
    fn default() -> Self {
        CaseSpec {
            params: case_study_params(),
            trace: None,
            daytime: DaytimeRule::default(),
            probs: JointWeatherProbs::EXAMPLE,
            client_hours_a: 1115,
            client_hours_b: 692,
            mode: CaseMode::Both,
            agents: 20_000,
            grid: GridSpec { b_max: 400.0, delta: 0.05 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub params: MarketParams,
    pub model: ModelSel,
    pub grid: GridSpec,
    pub solver: MfeOptions,
    pub sim: SimSettings,
    pub sweep: SweepSpec,
    pub case_study: CaseSpec,
    /// Output directory; falls back to `$MFE_OUT_DIR`, then `mfe-out`.
    pub out: Option<PathBuf>,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
}

/// Values given on the command line; each replaces the file's.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub model: Option<ModelSel>,
    pub k: Option<Vec<f64>>,
    pub psi: Option<Vec<RegenerationDistribution>>,
    pub agents: Option<usize>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub s: Option<f64>,
    pub c_serve: Option<f64>,
    pub c_lose: Option<f64>,
    pub p_c: Option<f64>,
    pub delta: Option<f64>,
    pub b_max: Option<f64>,
    pub sweep_mode: Option<SweepMode>,
    pub trace: Option<PathBuf>,
    pub case_mode: Option<CaseMode>,
}

/// `7`, `6,6.5,7` or `lo:step:hi` (inclusive).
pub fn parse_k_list(s: &str) -> Result<Vec<f64>> {
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .map_err(|_| CliError::config("k", format!("cannot parse `{t}` as a number")))
    };
    let parts: Vec<&str> = s.split(':').collect();
    let out = match parts.as_slice() {
        [lo, step, hi] => {
            let (lo, step, hi) = (num(lo)?, num(step)?, num(hi)?);
            if !(step > 0.0) || hi < lo {
                return Err(CliError::config("k", format!("range `{s}` needs step > 0 and lo <= hi")));
            }
            let n = ((hi - lo) / step + 1e-9).floor() as usize;
            (0..=n).map(|i| lo + step * i as f64).collect()
        }
        [_] => s.split(',').map(num).collect::<Result<Vec<_>>>()?,
        _ => return Err(CliError::config("k", format!("`{s}` is neither a list nor lo:step:hi"))),
    };
    if out.is_empty() {
        return Err(CliError::config("k", "no values"));
    }
    Ok(out)
}

/// Comma separated distributions; commas inside brackets belong to the item.
pub fn parse_psi_list(s: &str) -> Result<Vec<RegenerationDistribution>> {
    let mut items = Vec::new();
    let (mut depth, mut start) = (0i32, 0);
    for (i, ch) in s.char_indices() {
        match ch {
            '[' => depth += 1,
            ']' => depth -= 1,
            ',' if depth == 0 => {
                items.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    items.push(&s[start..]);
    items
        .into_iter()
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.parse::<RegenerationDistribution>().map_err(CliError::from))
        .collect()
}

/// Parses a JSON document; an empty document means all defaults.
pub fn from_json(text: &str) -> Result<RunConfig> {
    if text.trim().is_empty() {
        return Ok(RunConfig::default());
    }
    serde_json::from_str(text).map_err(|e| CliError::Schema(e.to_string()))
}

pub fn to_json(cfg: &RunConfig) -> String {
    serde_json::to_string_pretty(cfg).expect("config serializes")
}

/// File (if any), then overrides, then validation.
pub fn parse_config(file: Option<&Path>, mode: Mode, ov: &Overrides) -> Result<RunConfig> {
    let mut cfg = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            from_json(&text)?
        }
        None => RunConfig::default(),
    };
    cfg.mode = mode;
    apply(&mut cfg, ov)?;
    validate(&cfg)?;
    Ok(cfg)
}

fn apply(cfg: &mut RunConfig, ov: &Overrides) -> Result<()> {
    if let Some(m) = ov.model {
        cfg.model = m;
    }
    let sweeping = cfg.mode == Mode::Sweep;
    let params = if cfg.mode == Mode::CaseStudy {
        &mut cfg.case_study.params
    } else {
        &mut cfg.params
    };
    if let Some(ks) = &ov.k {
        if sweeping {
            cfg.sweep.k = ks.clone();
        } else if let [k] = ks.as_slice() {
            params.k = *k;
        } else {
            return Err(CliError::config("k", "a list of prices only applies to `sweep`"));
        }
    }
    if let Some(psis) = &ov.psi {
        if sweeping {
            cfg.sweep.psi = psis.clone();
        } else if let [psi] = psis.as_slice() {
            params.psi = psi.clone();
        } else {
            return Err(CliError::config("psi", "a list of distributions only applies to `sweep`"));
        }
    }
    for (slot, v) in [
        (&mut params.alpha, ov.alpha),
        (&mut params.beta, ov.beta),
        (&mut params.s, ov.s),
        (&mut params.c_serve, ov.c_serve),
        (&mut params.c_lose, ov.c_lose),
    ] {
        if let Some(v) = v {
            *slot = v;
        }
    }
    if let Some(p_c) = ov.p_c {
        *params = params.clone().with_roles(p_c);
    }
    let grid = if cfg.mode == Mode::CaseStudy {
        &mut cfg.case_study.grid
    } else {
        &mut cfg.grid
    };
    if let Some(d) = ov.delta {
        grid.delta = d;
    }
    if let Some(b) = ov.b_max {
        grid.b_max = b;
    }
    if let Some(a) = ov.agents {
        cfg.sim.agents = a;
        cfg.case_study.agents = a;
    }
    if let Some(s) = ov.steps {
        cfg.sim.steps = s;
    }
    if let Some(s) = ov.seed {
        cfg.seed = s;
    }
    if let Some(o) = &ov.out {
        cfg.out = Some(o.clone());
    }
    if let Some(w) = ov.workers {
        cfg.workers = w;
    }
    if let Some(m) = ov.sweep_mode {
        cfg.sweep.mode = m;
    }
    if let Some(t) = &ov.trace {
        cfg.case_study.trace = Some(t.clone());
    }
    if let Some(m) = ov.case_mode {
        cfg.case_study.mode = m;
    }
    Ok(())
}

pub fn validate(cfg: &RunConfig) -> Result<()> {
    cfg.params.validate()?;
    cfg.grid.validate()?;
    cfg.solver.validate()?;
    sim_config(cfg, LoanModel::Bank).validate()?;
    if cfg.sweep.k.is_empty() || cfg.sweep.psi.is_empty() {
        return Err(CliError::config("sweep", "needs at least one k and one psi"));
    }
    if let Some(bad) = cfg.sweep.k.iter().find(|k| !(k.is_finite() && **k >= 0.0)) {
        return Err(CliError::config("sweep.k", format!("{bad} must be finite and >= 0")));
    }
    for psi in &cfg.sweep.psi {
        psi.validate()?;
    }
    let cs = &cfg.case_study;
    cs.params.validate()?;
    cs.grid.validate()?;
    cs.probs.validate()?;
    if cs.agents < 2 {
        return Err(CliError::config("case_study.agents", "need at least 2 agents"));
    }
    Ok(())
}

/// The simulator configuration a run of `model` uses.
pub fn sim_config(cfg: &RunConfig, model: LoanModel) -> SimConfig {
    let s = &cfg.sim;
    SimConfig {
        n_agents: s.agents,
        n_steps: s.steps,
        params: cfg.params.clone(),
        model,
        seed: cfg.seed,
        policy_refresh_period: s.policy_refresh_period,
        belief_window: s.belief_window,
        belief_damping: s.belief_damping,
        initial_belief: s.initial_belief,
        record: s.record.clone(),
        grid: cfg.grid,
        // the command owns the thread pool
        workers: 0,
    }
}

/// Output directory: config, then environment, then the default.
pub fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}
