//! Two-region photovoltaic market.
//!
//! Each daytime hour the weather in regions A and B is good (surplus PV) or
//! bad. Only mixed hours need a market: agents of the bad region are clients
//! and agents of the good region serve them. Conditioning on mixed hours
//! gives each region its own role probabilities.

use std::fmt;
use std::io::BufRead;
use std::path::Path;

pub use chrono::NaiveDateTime;
use chrono::Timelike;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dp::DpProblem;
use crate::error::{invalid, Error, Result};
use crate::market::{LoanModel, MarketParams, RegenerationDistribution};
use crate::mfe::{solve_coupled_mfe, CoupledReport, MfeOptions, TypeProfile};
use crate::sim::{EpochMetrics, SimConfig, SimSummary, Simulation};

/// Dollars per simulation currency unit (2.5 cents buys one service hour).
pub const DEFAULT_CURRENCY_UNIT: f64 = 0.025;

/// Net metering charges a client hour `s` cents; the grid buys surplus back
/// at cost, so serving earns nothing.
pub const NET_METERING_DOLLARS_PER_S: f64 = 0.01;

/// Market constants of the case study: `s = 10`, `c_serve = 5`, `k = 7.5`,
/// budgets regenerate from `U[5, 10]`.
pub fn case_study_params() -> MarketParams {
    MarketParams {
        s: 10.0,
        c_serve: 5.0,
        k: 7.5,
        psi: RegenerationDistribution::uniform(5.0, 10.0),
        ..MarketParams::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherRow {
    pub timestamp: NaiveDateTime,
    pub region_a_good: bool,
    pub region_b_good: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherTrace {
    pub rows: Vec<WeatherRow>,
}

/// Which hours count as daytime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DaytimeRule {
    /// Every row is daytime (the trace is pre-filtered).
    All,
    /// Hours `start <= h < end` of the timestamp's clock.
    HourWindow { start: u32, end: u32 },
}

impl Default for DaytimeRule {
    /// 8:00 to 17:00, roughly an hour inside sunrise and sunset year-round
    /// at Texan latitudes.
    fn default() -> Self {
        DaytimeRule::HourWindow { start: 8, end: 17 }
    }
}

impl DaytimeRule {
    pub fn contains(&self, t: &NaiveDateTime) -> bool {
        match *self {
            DaytimeRule::All => true,
            DaytimeRule::HourWindow { start, end } => (start..end).contains(&t.hour()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointWeatherProbs {
    pub p_both_good: f64,
    pub p_both_bad: f64,
    pub p_a_bad_b_good: f64,
    pub p_a_good_b_bad: f64,
}

impl JointWeatherProbs {
    /// Shares of the two-city example.
    pub const EXAMPLE: JointWeatherProbs = JointWeatherProbs {
        p_both_good: 0.44,
        p_both_bad: 0.11,
        p_a_bad_b_good: 0.28,
        p_a_good_b_bad: 0.17,
    };

    pub fn validate(&self) -> Result<()> {
        let all = [self.p_both_good, self.p_both_bad, self.p_a_bad_b_good, self.p_a_good_b_bad];
        if all.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(invalid("joint_probs", "probabilities must lie in [0, 1]"));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(invalid("joint_probs", format!("sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Probability that an hour needs the market.
    pub fn p_mixed(&self) -> f64 {
        self.p_a_bad_b_good + self.p_a_good_b_bad
    }
}

/// Role probabilities of the two regions over mixed hours.
pub fn derive_role_probs(jp: &JointWeatherProbs, psi: &RegenerationDistribution) -> Result<[TypeProfile; 2]> {
    jp.validate()?;
    let mixed = jp.p_mixed();
    if mixed <= 0.0 {
        return Err(Error::NoMarket);
    }
    let a_c = jp.p_a_bad_b_good / mixed;
    Ok([
        TypeProfile {
            type_id: 0,
            p_c: a_c,
            p_s: 1.0 - a_c,
            psi: psi.clone(),
            label: "region-a".into(),
        },
        TypeProfile {
            type_id: 1,
            p_c: 1.0 - a_c,
            p_s: a_c,
            psi: psi.clone(),
            label: "region-b".into(),
        },
    ])
}

fn parse_bool(s: &str, line: usize) -> Result<bool> {
    match s.trim() {
        "1" => Ok(true),
        "0" => Ok(false),
        other => Err(Error::Trace(format!("line {line}: expected 0 or 1, got `{other}`"))),
    }
}

fn parse_time(s: &str, line: usize) -> Result<NaiveDateTime> {
    let s = s.trim();
    if let Ok(t) = chrono::DateTime::parse_from_rfc3339(s) {
        return Ok(t.naive_local());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t);
        }
    }
    Err(Error::Trace(format!("line {line}: bad timestamp `{s}`")))
}

/// What a trace yields after the daytime filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub trace: WeatherTrace,
    pub probs: JointWeatherProbs,
    /// Hours in which region A (resp. B) agents are clients.
    pub client_hours_a: u64,
    pub client_hours_b: u64,
}

pub const TRACE_HEADER: &str = "timestamp,region_a_good,region_b_good";

/// Reads `timestamp,region_a_good,region_b_good` rows.
pub fn read_weather_trace<R: BufRead>(reader: R, rule: DaytimeRule) -> Result<TraceSummary> {
    let mut rows = Vec::new();
    let mut last: Option<NaiveDateTime> = None;
    let mut saw_header = false;
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = n + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if !saw_header {
            let cols: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            if cols != TRACE_HEADER.split(',').collect::<Vec<_>>() {
                return Err(Error::Trace(format!("line {line_no}: header must be `{TRACE_HEADER}`")));
            }
            saw_header = true;
            continue;
        }
        let cols: Vec<&str> = trimmed.split(',').collect();
        if cols.len() != 3 {
            return Err(Error::Trace(format!("line {line_no}: expected 3 columns, got {}", cols.len())));
        }
        let t = parse_time(cols[0], line_no)?;
        if last.is_some_and(|p| t <= p) {
            return Err(Error::Trace(format!("line {line_no}: timestamps must increase")));
        }
        last = Some(t);
        let row = WeatherRow {
            timestamp: t,
            region_a_good: parse_bool(cols[1], line_no)?,
            region_b_good: parse_bool(cols[2], line_no)?,
        };
        if rule.contains(&t) {
            rows.push(row);
        }
    }
    if !saw_header {
        return Err(Error::Trace("empty file".into()));
    }
    if rows.is_empty() {
        return Err(Error::Trace("no daytime rows".into()));
    }
    let count = |f: &dyn Fn(&WeatherRow) -> bool| rows.iter().filter(|r| f(r)).count() as u64;
    let n = rows.len() as f64;
    let both_good = count(&|r| r.region_a_good && r.region_b_good);
    let both_bad = count(&|r| !r.region_a_good && !r.region_b_good);
    let a_client = count(&|r| !r.region_a_good && r.region_b_good);
    let b_client = count(&|r| r.region_a_good && !r.region_b_good);
    Ok(TraceSummary {
        probs: JointWeatherProbs {
            p_both_good: both_good as f64 / n,
            p_both_bad: both_bad as f64 / n,
            p_a_bad_b_good: a_client as f64 / n,
            p_a_good_b_bad: b_client as f64 / n,
        },
        client_hours_a: a_client,
        client_hours_b: b_client,
        trace: WeatherTrace { rows },
    })
}

pub fn ingest_weather_trace(path: &Path, rule: DaytimeRule) -> Result<TraceSummary> {
    let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_weather_trace(std::io::BufReader::new(f), rule)
}

/// Hourly trace starting at midnight of `start`, states drawn i.i.d. from `jp`.
pub fn synthetic_trace(jp: &JointWeatherProbs, start: NaiveDateTime, hours: usize, seed: u64) -> Result<WeatherTrace> {
    jp.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..hours)
        .map(|h| {
            let u: f64 = rng.gen();
            let (a, b) = if u < jp.p_both_good {
                (true, true)
            } else if u < jp.p_both_good + jp.p_both_bad {
                (false, false)
            } else if u < jp.p_both_good + jp.p_both_bad + jp.p_a_bad_b_good {
                (false, true)
            } else {
                (true, false)
            };
            WeatherRow {
                timestamp: start + chrono::Duration::hours(h as i64),
                region_a_good: a,
                region_b_good: b,
            }
        })
        .collect();
    Ok(WeatherTrace { rows })
}

pub fn write_weather_trace<W: std::io::Write>(trace: &WeatherTrace, mut w: W) -> Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in &trace.rows {
        writeln!(
            w,
            "{},{},{}",
            r.timestamp.format("%Y-%m-%dT%H:%M:%S"),
            r.region_a_good as u8,
            r.region_b_good as u8
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavingsReport {
    pub client_hours_a: u64,
    pub client_hours_b: u64,
    /// Dollars per year saved through the market by a pair of agents, one per region.
    pub market_savings: f64,
    pub market_savings_a: f64,
    pub market_savings_b: f64,
    /// Dollars per year under net metering, per region.
    pub net_metering_a: f64,
    pub net_metering_b: f64,
    pub trade_ratio_used: f64,
    pub currency_unit: f64,
    pub s: f64,
    pub k: f64,
    pub c_serve: f64,
}

/// Region A saves `s - k` per client hour, region B earns `k - c_serve` per
/// served hour; both scale by the unit and the realized trade ratio.
pub fn savings(hours_a: u64, hours_b: u64, params: &MarketParams, trade_ratio: f64, unit: f64) -> Result<SavingsReport> {
    if !(0.0..=1.0).contains(&trade_ratio) {
        return Err(invalid("trade_ratio", format!("{trade_ratio} not in [0, 1]")));
    }
    if !(unit > 0.0) {
        return Err(invalid("currency_unit", "must be > 0"));
    }
    let a = hours_a as f64 * (params.s - params.k) * unit * trade_ratio;
    let b = hours_b as f64 * (params.k - params.c_serve) * unit * trade_ratio;
    Ok(SavingsReport {
        client_hours_a: hours_a,
        client_hours_b: hours_b,
        market_savings: (hours_a as f64 * (params.s - params.k) + hours_b as f64 * (params.k - params.c_serve))
            * unit
            * trade_ratio,
        market_savings_a: a,
        market_savings_b: b,
        net_metering_a: -(hours_a as f64) * params.s * NET_METERING_DOLLARS_PER_S,
        net_metering_b: -(hours_b as f64) * params.s * NET_METERING_DOLLARS_PER_S,
        trade_ratio_used: trade_ratio,
        currency_unit: unit,
        s: params.s,
        k: params.k,
        c_serve: params.c_serve,
    })
}

impl fmt::Display for SavingsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "client hours: region A {}, region B {}", self.client_hours_a, self.client_hours_b)?;
        writeln!(
            f,
            "market (k = {}, s = {}, c_serve = {}, trade ratio {:.4}): ${:.2}/year",
            self.k, self.s, self.c_serve, self.trade_ratio_used, self.market_savings
        )?;
        writeln!(f, "  region A ${:.2}, region B ${:.2}", self.market_savings_a, self.market_savings_b)?;
        write!(
            f,
            "net metering: region A ${:.2}/year, region B ${:.2}/year",
            self.net_metering_a, self.net_metering_b
        )
    }
}

/// Where the weather statistics come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CaseInput {
    Trace { summary: TraceSummary },
    Probs { probs: JointWeatherProbs, client_hours_a: u64, client_hours_b: u64 },
}

impl CaseInput {
    /// Example shares and 2016 client-hour counts.
    pub fn example() -> Self {
        CaseInput::Probs {
            probs: JointWeatherProbs::EXAMPLE,
            client_hours_a: 1115,
            client_hours_b: 692,
        }
    }

    fn parts(&self) -> (JointWeatherProbs, u64, u64) {
        match self {
            CaseInput::Trace { summary } => (summary.probs, summary.client_hours_a, summary.client_hours_b),
            CaseInput::Probs {
                probs,
                client_hours_a,
                client_hours_b,
            } => (*probs, *client_hours_a, *client_hours_b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaseMode {
    Solve,
    Simulate,
    Both,
}

#[derive(Debug, Clone)]
pub struct CaseStudyOutput {
    pub profiles: [TypeProfile; 2],
    pub coupled: Option<CoupledReport>,
    pub sim_summary: Option<SimSummary>,
    pub metrics: Vec<EpochMetrics>,
    /// Final budgets per region (simulation).
    pub budgets: [Vec<f64>; 2],
    pub savings: SavingsReport,
}

/// Solves and/or simulates the coupled market, then prices the savings with
/// the realized trade ratio (simulated if available, else analytic).
pub fn run_case_study(
    input: &CaseInput,
    params: &MarketParams,
    model: LoanModel,
    mode: CaseMode,
    sim: &SimConfig,
    opts: &MfeOptions,
) -> Result<CaseStudyOutput> {
    let (probs, hours_a, hours_b) = input.parts();
    let profiles = derive_role_probs(&probs, &params.psi)?;
    let coupled = if mode != CaseMode::Simulate {
        let base = DpProblem::new(params.clone(), model, sim.grid)?;
        Some(solve_coupled_mfe(&profiles, &base, opts)?)
    } else {
        None
    };
    let mut out_metrics = Vec::new();
    let mut summary = None;
    let mut budgets = [Vec::new(), Vec::new()];
    if mode != CaseMode::Solve {
        let cfg = SimConfig {
            params: params.clone(),
            model,
            ..sim.clone()
        };
        let out = Simulation::two_type(cfg, &profiles, probs.p_mixed())?.run()?;
        budgets = [out.budgets_of(0), out.budgets_of(1)];
        out_metrics = out.metrics;
        summary = Some(out.summary);
    }
    let trade_ratio = match (&summary, &coupled) {
        (Some(s), _) => s.terminal_trade_ratio,
        (None, Some(c)) => c.joint_trade_ratio,
        (None, None) => unreachable!("mode runs at least one"),
    };
    let savings = savings(hours_a, hours_b, params, trade_ratio, DEFAULT_CURRENCY_UNIT)?;
    Ok(CaseStudyOutput {
        profiles,
        coupled,
        sim_summary: summary,
        metrics: out_metrics,
        budgets,
        savings,
    })
}
