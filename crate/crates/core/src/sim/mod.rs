//! Large-population Monte Carlo with best-response dynamics.
//!
//! A step runs survival and role draws per agent (in parallel), pairs clients
//! with servers uniformly at random, settles trades and aggregates metrics.
//! Every `policy_refresh_period` steps the shared client policy is recomputed
//! against the belief estimated from the most recent `belief_window` steps.

mod output;
pub mod rng;
pub mod sweep;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dp::{expected_value, Belief, ClientPolicy, DpProblem, GridSpec, PremiumHistogram, ValueFunction};
use crate::error::{invalid, Error, Result};
use crate::market::{settle, wealth_delta, AgentState, LoanModel, MarketParams, RegenerationDistribution};
use crate::mfe::{StationaryDistribution, TypeProfile};

pub use output::{write_metrics_csv, DEFAULT_RECORD, METRIC_COLUMNS};
pub use sweep::{sweep, SweepCell, SweepMode, SweepRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_agents: usize,
    pub n_steps: usize,
    pub params: MarketParams,
    pub model: LoanModel,
    pub seed: u64,
    pub policy_refresh_period: usize,
    pub belief_window: usize,
    /// Weight of the fresh window estimate when the belief is refreshed.
    pub belief_damping: f64,
    pub initial_belief: f64,
    /// CSV columns, see [`METRIC_COLUMNS`].
    pub record: Vec<String>,
    pub grid: GridSpec,
    /// Worker threads; 0 uses the global pool.
    pub workers: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_agents: 10_000,
            n_steps: 2000,
            params: MarketParams::default(),
            model: LoanModel::Bank,
            seed: 1,
            policy_refresh_period: 10,
            belief_window: 10,
            belief_damping: 0.5,
            initial_belief: 1.0,
            record: DEFAULT_RECORD.iter().map(|s| s.to_string()).collect(),
            grid: GridSpec::default(),
            workers: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents < 2 {
            return Err(invalid("n_agents", "need at least 2 agents"));
        }
        if self.policy_refresh_period < 1 {
            return Err(invalid("policy_refresh_period", "must be >= 1"));
        }
        if self.belief_window < 1 {
            return Err(invalid("belief_window", "must be >= 1"));
        }
        if !(self.belief_damping > 0.0 && self.belief_damping <= 1.0) {
            return Err(invalid("belief_damping", format!("{} not in (0, 1]", self.belief_damping)));
        }
        if !(0.0..=1.0).contains(&self.initial_belief) {
            return Err(invalid("initial_belief", format!("{} not in [0, 1]", self.initial_belief)));
        }
        for r in &self.record {
            if !METRIC_COLUMNS.contains(&r.as_str()) {
                return Err(invalid("record", format!("unknown metric `{r}`")));
            }
        }
        self.params.validate()?;
        self.grid.validate()
    }
}

/// How roles are assigned in a step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RoleRule {
    /// Each agent is a client with its own type's `p_c`.
    Independent,
    /// Two types, roles set per step for a whole type: with probability
    /// `1 - p_market` the step is idle, otherwise type 0 are all clients with
    /// probability `p_a_client` and all servers otherwise.
    CrossType { p_market: f64, p_a_client: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub agents: Vec<AgentState>,
    pub epoch: u64,
    pub seed: u64,
}

impl Population {
    /// `counts[t]` agents of type `t`, budgets drawn from `psis[t]`.
    pub fn sample_types(seed: u64, counts: &[usize], psis: &[RegenerationDistribution]) -> Self {
        let mut agents = Vec::with_capacity(counts.iter().sum());
        for (t, (&c, psi)) in counts.iter().zip(psis).enumerate() {
            for _ in 0..c {
                let id = agents.len() as u64;
                let b = psi.sample(&mut rng::stream(seed, rng::Domain::Init, id, 0));
                agents.push(AgentState::new(b, t as u8));
            }
        }
        Population { agents, epoch: 0, seed }
    }

    pub fn sample(seed: u64, n: usize, psi: &RegenerationDistribution) -> Self {
        Self::sample_types(seed, &[n], std::slice::from_ref(psi))
    }

    /// Budgets drawn from a grid distribution (grid points only, so the
    /// first step sees exactly the bid split the distribution implies).
    pub fn from_distribution(seed: u64, n: usize, pi: &StationaryDistribution) -> Self {
        let cdf = pi.cdf();
        let total = *cdf.last().unwrap_or(&1.0);
        let agents = (0..n)
            .map(|id| {
                let mut r = rng::stream(seed, rng::Domain::Init, id as u64, 0);
                let u: f64 = r.gen::<f64>() * total;
                let i = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
                AgentState::new(pi.grid.budget(i), 0)
            })
            .collect();
        Population { agents, epoch: 0, seed }
    }

    pub fn from_budgets(seed: u64, budgets: &[f64]) -> Self {
        Population {
            agents: budgets.iter().map(|&b| AgentState::new(b, 0)).collect(),
            epoch: 0,
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn total_wealth(&self) -> f64 {
        self.agents.iter().map(|a| a.budget).sum()
    }

    pub fn budgets(&self) -> Vec<f64> {
        self.agents.iter().map(|a| a.budget).collect()
    }

    pub fn n_types(&self) -> usize {
        self.agents.iter().map(|a| a.type_id as usize + 1).max().unwrap_or(1)
    }
}

pub const QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub step: u64,
    pub idle: bool,
    pub matches: u64,
    pub trades: u64,
    /// Fraction of matched clients bidding 0 (NaN without matches).
    pub empirical_z: f64,
    pub trade_ratio: f64,
    pub mean_budget: f64,
    /// Budgets at [`QUANTILES`].
    pub budget_quantiles: [f64; 5],
    /// Matched client bids: `[bid 0, bid k]`.
    pub bid_histogram: [u64; 2],
    pub total_wealth: f64,
    /// Loan repayments `α (k - b)⁺` made this step, to the bank or to peers.
    pub loans_outstanding_paid: f64,
    pub wealth_before: f64,
    pub wealth_removed: f64,
    pub wealth_injected: f64,
    pub trade_delta: f64,
    /// Matched clients per type.
    pub type_clients: Vec<u64>,
    pub type_bid0: Vec<u64>,
    /// Loan repayments made by clients of each type.
    pub type_repaid: Vec<f64>,
    /// Law of those repayments per type (bid-k trades only).
    pub type_repaid_law: Vec<PremiumHistogram>,
}

impl EpochMetrics {
    /// `after - (before - removed + injected + trades)`; zero up to rounding.
    pub fn accounting_residual(&self) -> f64 {
        self.total_wealth - (self.wealth_before - self.wealth_removed + self.wealth_injected + self.trade_delta)
    }
}

/// Everything one step needs besides the population.
#[derive(Debug, Clone, Copy)]
pub struct StepEnv<'a> {
    /// Per-type market parameters; trade mechanics use the client's.
    pub params: &'a [MarketParams],
    /// Per-type client policies.
    pub policies: &'a [ClientPolicy],
    pub model: LoanModel,
    pub rule: RoleRule,
    /// Skip the quantile table.
    pub skip_quantiles: bool,
}

/// Agents per parallel work unit; fixed so results ignore the thread count.
const CHUNK: usize = 4096;

struct Draw {
    removed: f64,
    injected: f64,
    client: bool,
    tie: f64,
}

/// One step under the independent role rule for a single-type population.
pub fn step(pop: &mut Population, policy: &ClientPolicy, params: &MarketParams, model: LoanModel) -> Result<EpochMetrics> {
    step_env(
        pop,
        &StepEnv {
            params: std::slice::from_ref(params),
            policies: std::slice::from_ref(policy),
            model,
            rule: RoleRule::Independent,
            skip_quantiles: false,
        },
    )
}

pub fn step_env(pop: &mut Population, env: &StepEnv) -> Result<EpochMetrics> {
    let step = pop.epoch;
    let seed = pop.seed;
    let nt = env.params.len();
    if env.policies.len() != nt {
        return Err(Error::Invalid("one policy per type required".into()));
    }
    if pop.agents.iter().any(|a| a.type_id as usize >= nt) {
        return Err(Error::Invalid("agent type without parameters".into()));
    }
    let mut m = EpochMetrics {
        step,
        idle: false,
        matches: 0,
        trades: 0,
        empirical_z: f64::NAN,
        trade_ratio: f64::NAN,
        mean_budget: 0.0,
        budget_quantiles: [0.0; 5],
        bid_histogram: [0, 0],
        total_wealth: 0.0,
        loans_outstanding_paid: 0.0,
        wealth_before: pop.total_wealth(),
        wealth_removed: 0.0,
        wealth_injected: 0.0,
        trade_delta: 0.0,
        type_clients: vec![0; nt],
        type_bid0: vec![0; nt],
        type_repaid: vec![0.0; nt],
        type_repaid_law: env.params.iter().map(PremiumHistogram::empty).collect(),
    };

    let a_client = match env.rule {
        RoleRule::Independent => None,
        RoleRule::CrossType { p_market, p_a_client } => {
            let mut r = rng::stream(seed, rng::Domain::Weather, step, 0);
            let u: f64 = r.gen();
            if u >= p_market {
                m.idle = true;
                None
            } else {
                Some(r.gen::<f64>() < p_a_client)
            }
        }
    };

    if !m.idle {
        let rule = env.rule;
        let draws: Vec<Draw> = pop
            .agents
            .par_chunks_mut(CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let mut r = rng::agent_block(seed, step, (c * CHUNK) as u64);
                chunk
                    .iter_mut()
                    .map(|a| {
                        let p = &env.params[a.type_id as usize];
                        let u = rng::next_agent(&mut r);
                        let mut d = Draw {
                            removed: 0.0,
                            injected: 0.0,
                            client: false,
                            tie: u.tie,
                        };
                        if u.survive >= p.beta {
                            d.removed = a.budget;
                            a.budget = p.psi.inverse_cdf(u.regen);
                            d.injected = a.budget;
                        }
                        d.client = match (rule, a_client) {
                            (RoleRule::CrossType { .. }, Some(ac)) => (a.type_id == 0) == ac,
                            _ => u.role < p.p_c,
                        };
                        d
                    })
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<Vec<Draw>>>()
            .into_iter()
            .flatten()
            .collect();

        let mut clients = Vec::new();
        let mut servers = Vec::new();
        for (i, d) in draws.iter().enumerate() {
            m.wealth_removed += d.removed;
            m.wealth_injected += d.injected;
            if d.client {
                clients.push(i);
            } else {
                servers.push(i);
            }
        }

        // a random subset of the larger side, in random order, meets the smaller side
        let mut mr = rng::matching(seed, step);
        let n_pairs = clients.len().min(servers.len());
        let clients_small = clients.len() <= servers.len();
        let (small, large) = if clients_small {
            (&mut clients, &mut servers)
        } else {
            (&mut servers, &mut clients)
        };
        for i in 0..n_pairs {
            let j = mr.gen_range(i..large.len());
            large.swap(i, j);
        }
        let pairs: Vec<(usize, usize)> = (0..n_pairs)
            .map(|i| if clients_small { (small[i], large[i]) } else { (large[i], small[i]) })
            .collect();

        for (c, s) in pairs {
            let t = pop.agents[c].type_id as usize;
            let p = &env.params[t];
            let bc = pop.agents[c].budget;
            let bs = pop.agents[s].budget;
            let q = env.policies[t].bid_k_prob(bc);
            let bid_k = q >= 1.0 || (q > 0.0 && draws[c].tie < q);
            m.matches += 1;
            m.type_clients[t] += 1;
            if !bid_k {
                m.bid_histogram[0] += 1;
                m.type_bid0[t] += 1;
                continue;
            }
            m.bid_histogram[1] += 1;
            let out = settle(bc, bs, p.k, p, env.model)?;
            m.trades += 1;
            m.trade_delta += wealth_delta(&out, env.model)?;
            let repaid = if env.model.allows_overdraft() { p.alpha * out.overdraft } else { 0.0 };
            m.loans_outstanding_paid += repaid;
            m.type_repaid[t] += repaid;
            m.type_repaid_law[t].add(repaid, 1.0);
            pop.agents[c].budget = bc + out.client_delta;
            pop.agents[s].budget = bs + out.server_delta;
        }
        if m.matches > 0 {
            m.empirical_z = m.bid_histogram[0] as f64 / m.matches as f64;
            m.trade_ratio = m.trades as f64 / m.matches as f64;
        }
    }

    m.total_wealth = pop.total_wealth();
    m.mean_budget = m.total_wealth / pop.len() as f64;
    if !env.skip_quantiles {
        m.budget_quantiles = quantiles(&pop.budgets(), &QUANTILES);
    }
    pop.epoch += 1;
    Ok(m)
}

/// Nearest-rank order statistics.
pub fn quantiles(xs: &[f64], qs: &[f64]) -> [f64; 5] {
    let mut out = [0.0; 5];
    if xs.is_empty() {
        return out;
    }
    let mut v = xs.to_vec();
    for (o, &q) in out.iter_mut().zip(qs) {
        let idx = ((q * (v.len() - 1) as f64).round() as usize).min(v.len() - 1);
        let (_, x, _) = v.select_nth_unstable_by(idx, f64::total_cmp);
        *o = *x;
    }
    out
}

/// Fraction of matched clients bidding 0 over `window`; `previous` when the
/// window saw no matches.
pub fn empirical_belief(window: &[EpochMetrics], previous: f64) -> f64 {
    let (bid0, clients) = window
        .iter()
        .fold((0u64, 0u64), |(a, b), m| (a + m.bid_histogram[0], b + m.matches));
    if clients == 0 {
        previous
    } else {
        bid0 as f64 / clients as f64
    }
}

fn type_belief(window: &[EpochMetrics], t: usize, previous: f64) -> f64 {
    let (bid0, clients) = window
        .iter()
        .fold((0u64, 0u64), |(a, b), m| (a + m.type_bid0[t], b + m.type_clients[t]));
    if clients == 0 {
        previous
    } else {
        bid0 as f64 / clients as f64
    }
}

/// Repayment law of type-`t` clients pooled over `window`.
fn type_premium_law(window: &[EpochMetrics], t: usize, params: &MarketParams) -> PremiumHistogram {
    let mut h = PremiumHistogram::empty(params);
    for m in window {
        h.merge(&m.type_repaid_law[t]);
    }
    h
}

/// Terminal statistics of a belief series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeliefStats {
    /// Belief over the final window.
    pub last_window: f64,
    /// Standard deviation of window means over the terminal half: the
    /// standard error of a single window estimate.
    pub window_se: f64,
    /// Pooled belief over the terminal half.
    pub tail_mean: f64,
    pub tail_se: f64,
    pub windows: usize,
}

impl BeliefStats {
    fn compute(metrics: &[EpochMetrics], window: usize, counts: impl Fn(&EpochMetrics) -> (u64, u64)) -> Self {
        let tail = &metrics[metrics.len() / 2..];
        let mut means = Vec::new();
        let (mut b0, mut n) = (0u64, 0u64);
        for chunk in tail.rchunks_exact(window) {
            let (a, c) = chunk.iter().map(&counts).fold((0, 0), |x, y| (x.0 + y.0, x.1 + y.1));
            b0 += a;
            n += c;
            if c > 0 {
                means.push(a as f64 / c as f64);
            }
        }
        let k = means.len();
        let avg = means.iter().sum::<f64>() / k.max(1) as f64;
        let sd = if k > 1 {
            (means.iter().map(|x| (x - avg).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
        } else {
            f64::NAN
        };
        BeliefStats {
            last_window: means.first().copied().unwrap_or(f64::NAN),
            window_se: sd,
            tail_mean: if n > 0 { b0 as f64 / n as f64 } else { f64::NAN },
            tail_se: sd / (k as f64).sqrt(),
            windows: k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub z: BeliefStats,
    /// Trades over matches across the terminal half.
    pub terminal_trade_ratio: f64,
    pub per_type: Vec<BeliefStats>,
    pub final_mean_budget: f64,
    /// Belief and premium the last policy was computed at, per type.
    pub final_belief: Vec<f64>,
    pub final_premium: Vec<f64>,
    /// `E_Ψ[v]` of the last computed value function, per type.
    pub expected_value: Vec<Option<f64>>,
    pub max_accounting_residual: f64,
}

/// A recorded policy refresh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefUpdate {
    pub step: u64,
    pub belief: Vec<f64>,
    pub premium: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub metrics: Vec<EpochMetrics>,
    pub refreshes: Vec<BeliefUpdate>,
    pub summary: SimSummary,
    pub final_budgets: Vec<f64>,
    pub final_types: Vec<u8>,
    pub final_policies: Vec<ClientPolicy>,
    pub final_values: Vec<Option<ValueFunction>>,
}

impl SimOutput {
    /// Final budgets of one type.
    pub fn budgets_of(&self, t: u8) -> Vec<f64> {
        self.final_budgets
            .iter()
            .zip(&self.final_types)
            .filter(|(_, &ty)| ty == t)
            .map(|(&b, _)| b)
            .collect()
    }
}

/// Configured run; see [`run`] for the single-type default.
#[derive(Debug, Clone)]
pub struct Simulation {
    cfg: SimConfig,
    types: Vec<MarketParams>,
    rule: RoleRule,
    frozen: Option<(Vec<ClientPolicy>, Vec<f64>)>,
    initial: Option<Population>,
}

impl Simulation {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Simulation {
            types: vec![cfg.params.clone()],
            cfg,
            rule: RoleRule::Independent,
            frozen: None,
            initial: None,
        })
    }

    /// Two equal-sized types trading only with each other; `p_market` is the
    /// probability that a step is a market step.
    pub fn two_type(cfg: SimConfig, profiles: &[TypeProfile; 2], p_market: f64) -> Result<Self> {
        cfg.validate()?;
        let mut types = Vec::new();
        for prof in profiles {
            prof.validate()?;
            let mut p = cfg.params.clone();
            p.p_c = prof.p_c;
            p.p_s = prof.p_s;
            p.psi = prof.psi.clone();
            types.push(p);
        }
        if !(p_market > 0.0 && p_market <= 1.0) {
            return Err(invalid("p_market", format!("{p_market} not in (0, 1]")));
        }
        Ok(Simulation {
            rule: RoleRule::CrossType {
                p_market,
                p_a_client: profiles[0].p_c,
            },
            types,
            cfg,
            frozen: None,
            initial: None,
        })
    }

    /// Keep `policies` for the whole run instead of refreshing.
    pub fn frozen(mut self, policies: Vec<ClientPolicy>) -> Self {
        let n = policies.len();
        self.frozen = Some((policies, vec![0.0; n]));
        self
    }

    pub fn with_population(mut self, pop: Population) -> Self {
        self.initial = Some(pop);
        self
    }

    pub fn run(self) -> Result<SimOutput> {
        if self.cfg.workers > 0 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.cfg.workers)
                .build()
                .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
            pool.install(|| self.run_inner())
        } else {
            self.run_inner()
        }
    }

    fn run_inner(self) -> Result<SimOutput> {
        let cfg = &self.cfg;
        let nt = self.types.len();
        let cross = matches!(self.rule, RoleRule::CrossType { .. });
        // the counterpart type whose clients a type-t server meets
        let other = |t: usize| if cross { 1 - t } else { t };

        let mut pop = match self.initial.clone() {
            Some(p) => p,
            None => {
                let per = cfg.n_agents / nt;
                let mut counts = vec![per; nt];
                counts[0] += cfg.n_agents - per * nt;
                let psis: Vec<_> = self.types.iter().map(|p| p.psi.clone()).collect();
                Population::sample_types(cfg.seed, &counts, &psis)
            }
        };
        if pop.n_types() > nt {
            return Err(Error::Invalid("population has more types than parameters".into()));
        }

        let dps: Vec<DpProblem> = self
            .types
            .iter()
            .map(|p| DpProblem::new(p.clone(), cfg.model, cfg.grid))
            .collect::<Result<_>>()?;
        let peer = cfg.model == LoanModel::PeerLoan;
        let mut belief = vec![cfg.initial_belief; nt];
        let mut laws: Vec<PremiumHistogram> = self.types.iter().map(|p| PremiumHistogram::point(p, 0.0)).collect();
        let mut values: Vec<Option<ValueFunction>> = vec![None; nt];
        let solve = |t: usize, belief: &[f64], laws: &[PremiumHistogram], values: &mut Vec<Option<ValueFunction>>| -> Result<ClientPolicy> {
            let dp = dps[t].clone().with_premiums(laws[t].atoms());
            let start = values[t].take().unwrap_or_else(|| ValueFunction::constant(dp.grid, 0.0));
            let sol = dp.value_iterate_from(start, Belief::clamped(belief[other(t)]), 1e-8, 1_000_000)?;
            let pol = dp.extract_client_policy(&sol.value);
            values[t] = Some(sol.value);
            Ok(pol)
        };

        let frozen = self.frozen.is_some();
        let mut policies = match &self.frozen {
            Some((p, _)) => {
                if p.len() != nt {
                    return Err(Error::Invalid("one frozen policy per type required".into()));
                }
                p.clone()
            }
            None => (0..nt).map(|t| solve(t, &belief, &laws, &mut values)).collect::<Result<_>>()?,
        };
        let mut refreshes = vec![BeliefUpdate {
            step: 0,
            belief: belief.clone(),
            premium: laws.iter().map(PremiumHistogram::mean).collect(),
        }];

        let skip_quantiles = !cfg.record.iter().any(|r| r.starts_with('q'));
        let mut metrics: Vec<EpochMetrics> = Vec::with_capacity(cfg.n_steps);
        for s in 0..cfg.n_steps {
            let m = step_env(
                &mut pop,
                &StepEnv {
                    params: &self.types,
                    policies: &policies,
                    model: cfg.model,
                    rule: self.rule,
                    skip_quantiles: skip_quantiles && s + 1 < cfg.n_steps,
                },
            )?;
            metrics.push(m);
            if !frozen && (s + 1) % cfg.policy_refresh_period == 0 {
                let w = &metrics[metrics.len().saturating_sub(cfg.belief_window)..];
                let d = cfg.belief_damping;
                for t in 0..nt {
                    belief[t] = (1.0 - d) * belief[t] + d * type_belief(w, t, belief[t]);
                    if peer {
                        // a type-t server is repaid by the other type's clients
                        laws[t] = laws[t].mix(&type_premium_law(w, other(t), &self.types[t]), d);
                    }
                }
                policies = (0..nt).map(|t| solve(t, &belief, &laws, &mut values)).collect::<Result<_>>()?;
                refreshes.push(BeliefUpdate {
                    step: s as u64 + 1,
                    belief: belief.clone(),
                    premium: laws.iter().map(PremiumHistogram::mean).collect(),
                });
            }
        }

        let window = cfg.belief_window;
        let tail = &metrics[metrics.len() / 2..];
        let (tr_num, tr_den) = tail.iter().fold((0u64, 0u64), |(a, b), m| (a + m.trades, b + m.matches));
        let summary = SimSummary {
            z: BeliefStats::compute(&metrics, window, |m| (m.bid_histogram[0], m.matches)),
            terminal_trade_ratio: if tr_den > 0 { tr_num as f64 / tr_den as f64 } else { 0.0 },
            per_type: (0..nt)
                .map(|t| BeliefStats::compute(&metrics, window, |m| (m.type_bid0[t], m.type_clients[t])))
                .collect(),
            final_mean_budget: pop.total_wealth() / pop.len() as f64,
            final_belief: belief,
            final_premium: laws.iter().map(PremiumHistogram::mean).collect(),
            expected_value: values
                .iter()
                .zip(&self.types)
                .map(|(v, p)| v.as_ref().map(|v| expected_value(v, &p.psi)).transpose())
                .collect::<Result<_>>()?,
            max_accounting_residual: metrics.iter().map(|m| m.accounting_residual().abs()).fold(0.0, f64::max),
        };
        Ok(SimOutput {
            summary,
            refreshes,
            final_budgets: pop.budgets(),
            final_types: pop.agents.iter().map(|a| a.type_id).collect(),
            final_policies: policies,
            final_values: values,
            metrics,
        })
    }
}

/// Best-response run of a single-type market from budgets drawn from Ψ.
pub fn run(config: &SimConfig) -> Result<SimOutput> {
    Simulation::new(config.clone())?.run()
}
