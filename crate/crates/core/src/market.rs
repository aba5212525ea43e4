//! Market constants, financing models and the mechanics of a single trade.
//!
//! A matched client with budget `b` bidding at least the server's ask `k`
//! receives the surplus `s` and pays `k`. Under the bank and peer-loan models
//! the client may overdraw by `(k - b)⁺` and repays `α` times the overdraft
//! out of the surplus; the bid cap `b + s/(1+α)` keeps the post-trade budget
//! non-negative. Under the peer-loan model the repayment goes to the server
//! instead of an external bank.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Slack used when a bid-cap boundary lands a budget a few ulps below zero.
const BUDGET_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoanModel {
    /// No overdraft: a client can bid at most its budget.
    Hard,
    /// Overdraft financed by an external bank that keeps the repayment.
    Bank,
    /// Overdraft financed by the matched server, who keeps the repayment.
    PeerLoan,
}

impl LoanModel {
    pub const ALL: [LoanModel; 3] = [LoanModel::Hard, LoanModel::Bank, LoanModel::PeerLoan];

    pub fn allows_overdraft(self) -> bool {
        !matches!(self, LoanModel::Hard)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LoanModel::Hard => "hard",
            LoanModel::Bank => "bank",
            LoanModel::PeerLoan => "peer-loan",
        }
    }

    /// Short label used in plot column names.
    pub fn short(self) -> &'static str {
        match self {
            LoanModel::Hard => "hard",
            LoanModel::Bank => "bank",
            LoanModel::PeerLoan => "loan",
        }
    }
}

impl fmt::Display for LoanModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LoanModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hard" => Ok(LoanModel::Hard),
            "bank" => Ok(LoanModel::Bank),
            "peer-loan" | "peer_loan" | "peerloan" | "peer" | "loan" => Ok(LoanModel::PeerLoan),
            other => Err(invalid("model", format!("unknown loan model `{other}`"))),
        }
    }
}

/// Budget distribution of a newly entering agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RegenerationDistribution {
    Uniform { lo: f64, hi: f64 },
    PointMass { at: f64 },
    /// Finite list of `(budget, probability)` atoms.
    Tabulated { atoms: Vec<(f64, f64)> },
}

impl RegenerationDistribution {
    pub fn uniform(lo: f64, hi: f64) -> Self {
        RegenerationDistribution::Uniform { lo, hi }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            RegenerationDistribution::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite()) || *lo < 0.0 || lo > hi {
                    return Err(invalid("psi", format!("uniform support [{lo}, {hi}] must satisfy 0 <= lo <= hi")));
                }
            }
            RegenerationDistribution::PointMass { at } => {
                if !at.is_finite() || *at < 0.0 {
                    return Err(invalid("psi", format!("point mass at {at} must be finite and >= 0")));
                }
            }
            RegenerationDistribution::Tabulated { atoms } => {
                if atoms.is_empty() {
                    return Err(invalid("psi", "tabulated distribution has no atoms"));
                }
                let mut total = 0.0;
                for &(b, p) in atoms {
                    if !b.is_finite() || b < 0.0 || !(0.0..=1.0).contains(&p) {
                        return Err(invalid("psi", format!("bad atom ({b}, {p})")));
                    }
                    total += p;
                }
                if (total - 1.0).abs() > 1e-9 {
                    return Err(invalid("psi", format!("atom masses sum to {total}, expected 1")));
                }
            }
        }
        Ok(())
    }

    /// Smallest and largest budget in the support.
    pub fn support(&self) -> (f64, f64) {
        match self {
            RegenerationDistribution::Uniform { lo, hi } => (*lo, *hi),
            RegenerationDistribution::PointMass { at } => (*at, *at),
            RegenerationDistribution::Tabulated { atoms } => atoms.iter().fold(
                (f64::INFINITY, f64::NEG_INFINITY),
                |(lo, hi), &(b, _)| (lo.min(b), hi.max(b)),
            ),
        }
    }

    pub fn upper(&self) -> f64 {
        self.support().1
    }

    pub fn mean(&self) -> f64 {
        match self {
            RegenerationDistribution::Uniform { lo, hi } => 0.5 * (lo + hi),
            RegenerationDistribution::PointMass { at } => *at,
            RegenerationDistribution::Tabulated { atoms } => atoms.iter().map(|&(b, p)| b * p).sum(),
        }
    }

    /// Probability mass of `[a, b)` (atoms at `b` excluded).
    pub fn mass_between(&self, a: f64, b: f64) -> f64 {
        match self {
            RegenerationDistribution::Uniform { lo, hi } => {
                if hi <= lo {
                    return if *lo >= a && *lo < b { 1.0 } else { 0.0 };
                }
                let len = (b.min(*hi) - a.max(*lo)).max(0.0);
                len / (hi - lo)
            }
            RegenerationDistribution::PointMass { at } => {
                if *at >= a && *at < b {
                    1.0
                } else {
                    0.0
                }
            }
            RegenerationDistribution::Tabulated { atoms } => atoms
                .iter()
                .filter(|(x, _)| *x >= a && *x < b)
                .map(|(_, p)| p)
                .sum(),
        }
    }

    /// Draws a fresh budget.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.inverse_cdf(rng.gen())
    }

    /// Maps a uniform draw on [0, 1) to a budget.
    pub fn inverse_cdf(&self, u: f64) -> f64 {
        match self {
            RegenerationDistribution::Uniform { lo, hi } => {
                if hi > lo {
                    lo + (hi - lo) * u
                } else {
                    *lo
                }
            }
            RegenerationDistribution::PointMass { at } => *at,
            RegenerationDistribution::Tabulated { atoms } => {
                let mut acc = 0.0;
                for &(b, p) in atoms {
                    acc += p;
                    if u < acc {
                        return b;
                    }
                }
                atoms[atoms.len() - 1].0
            }
        }
    }
}

impl fmt::Display for RegenerationDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegenerationDistribution::Uniform { lo, hi } => write!(f, "U[{lo},{hi}]"),
            RegenerationDistribution::PointMass { at } => write!(f, "P[{at}]"),
            RegenerationDistribution::Tabulated { atoms } => {
                f.write_str("T[")?;
                for (i, (b, p)) in atoms.iter().enumerate() {
                    if i > 0 {
                        f.write_str(";")?;
                    }
                    write!(f, "{b}:{p}")?;
                }
                f.write_str("]")
            }
        }
    }
}

impl FromStr for RegenerationDistribution {
    type Err = Error;

    /// Parses `U[lo,hi]`, `P[x]` or `T[b1:p1;b2:p2;...]`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || invalid("psi", format!("cannot parse `{s}` (expected U[lo,hi], P[x] or T[b:p;...])"));
        if s.len() < 3 || !s.ends_with(']') || s.as_bytes()[1] != b'[' {
            return Err(bad());
        }
        let body = &s[2..s.len() - 1];
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
        let psi = match s.as_bytes()[0].to_ascii_uppercase() {
            b'U' => {
                let (a, b) = body.split_once(',').ok_or_else(bad)?;
                RegenerationDistribution::Uniform { lo: num(a)?, hi: num(b)? }
            }
            b'P' => RegenerationDistribution::PointMass { at: num(body)? },
            b'T' => {
                let atoms = body
                    .split(';')
                    .map(|pair| {
                        let (b, p) = pair.split_once(':').ok_or_else(bad)?;
                        Ok((num(b)?, num(p)?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                RegenerationDistribution::Tabulated { atoms }
            }
            _ => return Err(bad()),
        };
        psi.validate()?;
        Ok(psi)
    }
}

/// All scalar market constants plus the regeneration distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketParams {
    /// Probability of being a client in a period.
    pub p_c: f64,
    /// Probability of being a server in a period.
    pub p_s: f64,
    /// Per-period survival probability.
    pub beta: f64,
    /// Overdraft repayment factor.
    pub alpha: f64,
    /// Client surplus per successful trade.
    pub s: f64,
    /// Server's cost of serving.
    pub c_serve: f64,
    /// Client's disutility when it fails to trade; never touches budgets.
    pub c_lose: f64,
    /// Unified price.
    pub k: f64,
    pub psi: RegenerationDistribution,
}

impl Default for MarketParams {
    fn default() -> Self {
        MarketParams {
            p_c: 0.5,
            p_s: 0.5,
            beta: 0.98,
            alpha: 1.1,
            s: 8.0,
            c_serve: 6.0,
            c_lose: 0.5,
            k: 7.0,
            psi: RegenerationDistribution::uniform(0.0, 5.0),
        }
    }
}

impl MarketParams {
    pub fn with_k(mut self, k: f64) -> Self {
        self.k = k;
        self
    }

    pub fn with_psi(mut self, psi: RegenerationDistribution) -> Self {
        self.psi = psi;
        self
    }

    pub fn with_roles(mut self, p_c: f64) -> Self {
        self.p_c = p_c;
        self.p_s = 1.0 - p_c;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let in_open_unit = |x: f64| x > 0.0 && x < 1.0;
        if !in_open_unit(self.p_c) {
            return Err(invalid("p_c", format!("{} not in (0, 1)", self.p_c)));
        }
        if !in_open_unit(self.p_s) {
            return Err(invalid("p_s", format!("{} not in (0, 1)", self.p_s)));
        }
        if (self.p_c + self.p_s - 1.0).abs() > 1e-9 {
            return Err(invalid("p_s", format!("p_c + p_s = {} != 1", self.p_c + self.p_s)));
        }
        if !in_open_unit(self.beta) {
            return Err(invalid("beta", format!("{} not in (0, 1)", self.beta)));
        }
        if !self.alpha.is_finite() || self.alpha < 1.0 {
            return Err(invalid("alpha", format!("{} must be >= 1", self.alpha)));
        }
        for (field, x) in [("s", self.s), ("c_serve", self.c_serve), ("c_lose", self.c_lose), ("k", self.k)] {
            if !x.is_finite() || x < 0.0 {
                return Err(invalid(field, format!("{x} must be finite and >= 0")));
            }
        }
        self.psi.validate()
    }

    /// Warnings for parameters outside the band `c_serve <= k`, `s - k >= c_lose`.
    pub fn band_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.k < self.c_serve {
            out.push(format!("k = {} below c_serve = {}: servers lose on every trade", self.k, self.c_serve));
        }
        if self.s - self.k < self.c_lose {
            out.push(format!(
                "s - k = {} below c_lose = {}: trading is barely worth it for clients",
                self.s - self.k,
                self.c_lose
            ));
        }
        out
    }

    /// Budget below which a client cannot afford `k` (`k - s/(1+α)`, or `k` under Hard).
    pub fn afford_threshold(&self, model: LoanModel) -> f64 {
        if model.allows_overdraft() {
            self.k - self.s / (1.0 + self.alpha)
        } else {
            self.k
        }
    }

    /// Budget above which bidding `k` never lowers the budget (`k - (s-k)/α`).
    pub fn win_threshold(&self) -> f64 {
        self.k - (self.s - self.k) / self.alpha
    }

    pub fn overdraft(&self, b: f64) -> f64 {
        (self.k - b).max(0.0)
    }
}

/// State of one agent in the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub budget: f64,
    pub alive: bool,
    pub type_id: u8,
}

impl AgentState {
    pub fn new(budget: f64, type_id: u8) -> Self {
        AgentState {
            budget,
            alive: true,
            type_id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeOutcome {
    pub traded: bool,
    pub price_paid: f64,
    pub overdraft: f64,
    pub client_delta: f64,
    pub server_delta: f64,
    /// The client failed to trade and suffers `c_lose`.
    pub client_penalty_incurred: bool,
}

/// A trade happens iff the client's bid covers the server's ask.
pub fn resolve_trade(x_c: f64, x_s: f64) -> Result<bool> {
    if x_c < 0.0 || x_s < 0.0 || x_c.is_nan() || x_s.is_nan() {
        return Err(Error::NegativeBid { client: x_c, server: x_s });
    }
    Ok(x_c >= x_s)
}

pub fn max_client_bid(b: f64, params: &MarketParams, model: LoanModel) -> f64 {
    match model {
        LoanModel::Hard => b,
        LoanModel::Bank | LoanModel::PeerLoan => b + params.s / (1.0 + params.alpha),
    }
}

/// Client budget after buying at price `k`.
pub fn client_budget_update(b: f64, params: &MarketParams, model: LoanModel) -> Result<f64> {
    let cap = max_client_bid(b, params, model);
    if params.k > cap + BUDGET_EPS {
        return Err(Error::BidCap {
            budget: b,
            price: params.k,
            cap,
        });
    }
    let next = b + params.s - params.k - params.alpha * params.overdraft(b);
    Ok(next.max(0.0))
}

/// Server budget after selling at price `k` to a client holding `b_client`.
pub fn server_budget_update(b_server: f64, b_client: f64, params: &MarketParams, model: LoanModel) -> f64 {
    let base = b_server + params.k - params.c_serve;
    match model {
        LoanModel::Hard | LoanModel::Bank => base,
        LoanModel::PeerLoan => base + params.alpha * params.overdraft(b_client),
    }
}

/// Settles one matched pair where the server asks `k` and the client bids `client_bid`.
pub fn settle(
    client_budget: f64,
    server_budget: f64,
    client_bid: f64,
    params: &MarketParams,
    model: LoanModel,
) -> Result<TradeOutcome> {
    if !resolve_trade(client_bid, params.k)? {
        return Ok(TradeOutcome {
            traded: false,
            price_paid: 0.0,
            overdraft: 0.0,
            client_delta: 0.0,
            server_delta: 0.0,
            client_penalty_incurred: true,
        });
    }
    let client_next = client_budget_update(client_budget, params, model)?;
    let server_next = server_budget_update(server_budget, client_budget, params, model);
    Ok(TradeOutcome {
        traded: true,
        price_paid: params.k,
        overdraft: params.overdraft(client_budget),
        client_delta: client_next - client_budget,
        server_delta: server_next - server_budget,
        client_penalty_incurred: false,
    })
}

/// Net change of total wealth caused by one trade.
pub fn wealth_delta(outcome: &TradeOutcome, _model: LoanModel) -> Result<f64> {
    if !outcome.traded {
        return Err(Error::Untraded);
    }
    Ok(outcome.client_delta + outcome.server_delta)
}

pub fn regenerate<R: Rng + ?Sized>(rng: &mut R, psi: &RegenerationDistribution) -> f64 {
    psi.sample(rng)
}
