//! Budget Markov chain under a client policy and the equilibrium search.
//!
//! Given a belief `z` and the induced client policy, one period moves a
//! surviving agent (probability β) as follows:
//!
//! ```text
//! stay at b                   w.p. β (p_s z + p_c 1{bid 0 at b})
//! b + s - k - α(k-b)⁺         w.p. β p_c 1{bid k at b}
//! b + k - c_serve + φ         w.p. β p_s (1-z) P(φ)
//! fresh draw from Ψ           w.p. 1 - β
//! ```
//!
//! `γ(z)` is the stationary mass of the bid-0 region; equilibria solve `γ(z) = z`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dp::{Belief, BidAction, ClientPolicy, DpProblem, GridSpec, PremiumHistogram, ValueFunction};
use crate::error::{invalid, Error, Result};
use crate::market::{LoanModel, MarketParams, RegenerationDistribution};

/// Sparse budget transition kernel. `rows[i]` carries the survival part
/// (summing to β); the regeneration part `(1-β) Ψ` is shared by every row.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetKernel {
    pub grid: GridSpec,
    pub beta: f64,
    pub rows: Vec<Vec<(usize, f64)>>,
    pub regen: Vec<(usize, f64)>,
}

impl BudgetKernel {
    /// Full row `i`, regeneration included, merged by destination.
    pub fn row(&self, i: usize) -> Vec<(usize, f64)> {
        let mut out = self.rows[i].clone();
        for &(j, m) in &self.regen {
            add_mass(&mut out, j, (1.0 - self.beta) * m);
        }
        out.sort_by_key(|e| e.0);
        out
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.rows[i].iter().map(|e| e.1).sum::<f64>() + (1.0 - self.beta) * self.regen.iter().map(|e| e.1).sum::<f64>()
    }

    /// `π ↦ π P`.
    pub fn push_forward(&self, pi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; pi.len()];
        self.push_forward_into(pi, &mut out);
        out
    }

    fn push_forward_into(&self, pi: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        let mut total = 0.0;
        for (i, row) in self.rows.iter().enumerate() {
            let m = pi[i];
            if m == 0.0 {
                continue;
            }
            total += m;
            for &(j, p) in row {
                out[j] += m * p;
            }
        }
        let regen = (1.0 - self.beta) * total;
        for &(j, p) in &self.regen {
            out[j] += regen * p;
        }
    }
}

fn add_mass(row: &mut Vec<(usize, f64)>, j: usize, m: f64) {
    if m <= 0.0 {
        return;
    }
    match row.iter_mut().find(|e| e.0 == j) {
        Some(e) => e.1 += m,
        None => row.push((j, m)),
    }
}

fn add_split(row: &mut Vec<(usize, f64)>, grid: &GridSpec, x: f64, m: f64) {
    let (i, f) = grid.locate(x);
    add_mass(row, i, m * (1.0 - f));
    if f > 0.0 {
        add_mass(row, i + 1, m * f);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryDistribution {
    pub grid: GridSpec,
    pub mass: Vec<f64>,
}

impl StationaryDistribution {
    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.mass.iter().enumerate().map(|(i, m)| m * self.grid.budget(i)).sum()
    }

    pub fn cdf(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.mass
            .iter()
            .map(|m| {
                acc += m;
                acc
            })
            .collect()
    }

    /// Smallest grid budget whose CDF reaches `q`.
    pub fn quantile(&self, q: f64) -> f64 {
        let mut acc = 0.0;
        for (i, m) in self.mass.iter().enumerate() {
            acc += m;
            if acc >= q - 1e-15 {
                return self.grid.budget(i);
            }
        }
        self.grid.top()
    }

    /// Mass of grid points where `policy` bids 0 (tie points weighted by `p_tie`).
    pub fn bid0_mass(&self, policy: &ClientPolicy) -> f64 {
        self.mass
            .iter()
            .enumerate()
            .map(|(i, m)| m * (1.0 - policy.bid_k_prob(self.grid.budget(i))))
            .sum()
    }
}

/// Builds the one-period kernel for belief `z` and client policy `policy`.
pub fn budget_kernel(dp: &DpProblem, z: Belief, policy: &ClientPolicy) -> Result<BudgetKernel> {
    let p = &dp.params;
    let grid = dp.grid;
    let beta = p.beta;
    let z = z.z();
    let regen = grid.discretize(&p.psi)?;
    let mut rows = Vec::with_capacity(grid.n());
    for i in 0..grid.n() {
        let b = grid.budget(i);
        let q = policy.bid_k_prob(b);
        let mut row = Vec::with_capacity(6);
        if q > 0.0 {
            let raw = match dp.model {
                LoanModel::Hard => b + p.s - p.k,
                _ => b + p.s - p.k - p.alpha * p.overdraft(b),
            };
            if !dp.can_afford(b) || raw < -1e-9 {
                return Err(Error::NegativeDestination { index: i, dest: raw });
            }
            add_split(&mut row, &grid, dp.client_destination(b), beta * p.p_c * q);
        }
        add_mass(&mut row, i, beta * (p.p_s * z + p.p_c * (1.0 - q)));
        if z < 1.0 {
            for &(x, w) in dp.premium_atoms() {
                add_split(&mut row, &grid, dp.server_destination(b, x), beta * p.p_s * (1.0 - z) * w);
            }
        }
        rows.push(row);
    }
    Ok(BudgetKernel { grid, beta, rows, regen })
}

pub const STATIONARY_TOL: f64 = 1e-10;

/// Power iteration from the regeneration distribution.
pub fn stationary_distribution(kernel: &BudgetKernel) -> Result<StationaryDistribution> {
    stationary_distribution_with(kernel, STATIONARY_TOL, 200_000)
}

pub fn stationary_distribution_with(kernel: &BudgetKernel, tol: f64, max_iters: usize) -> Result<StationaryDistribution> {
    let n = kernel.grid.n();
    let mut pi = vec![0.0; n];
    for &(j, m) in &kernel.regen {
        pi[j] += m;
    }
    let mut next = vec![0.0; n];
    let mut diff = f64::INFINITY;
    for _ in 0..max_iters {
        kernel.push_forward_into(&pi, &mut next);
        diff = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut pi, &mut next);
        if diff <= tol {
            let total: f64 = pi.iter().sum();
            pi.iter_mut().for_each(|m| *m /= total);
            return Ok(StationaryDistribution {
                grid: kernel.grid,
                mass: pi,
            });
        }
    }
    Err(Error::NoConvergence {
        what: "stationary distribution",
        iters: max_iters,
        residual: diff,
    })
}

/// Tolerances and start point for the equilibrium search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfeOptions {
    pub z0: f64,
    pub damping: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub vi_tol: f64,
    pub vi_max_iters: usize,
}

impl Default for MfeOptions {
    fn default() -> Self {
        MfeOptions {
            z0: 1.0,
            damping: 0.5,
            tol: 1e-6,
            max_iters: 400,
            vi_tol: 1e-8,
            vi_max_iters: 1_000_000,
        }
    }
}

impl MfeOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.z0) {
            return Err(invalid("z0", format!("{} not in [0, 1]", self.z0)));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(invalid("damping", format!("{} not in (0, 1]", self.damping)));
        }
        if !(self.tol > 0.0) || !(self.vi_tol > 0.0) {
            return Err(invalid("tol", "tolerances must be > 0"));
        }
        Ok(())
    }
}

/// Everything computed while evaluating `γ` at one belief.
#[derive(Debug, Clone)]
pub struct GammaEval {
    pub z: f64,
    pub gamma: f64,
    /// Law of the loan repayment per trade implied by `pi` and `policy`.
    pub premium: PremiumHistogram,
    pub value: ValueFunction,
    pub policy: ClientPolicy,
    pub pi: StationaryDistribution,
    pub vi_iterations: usize,
}

/// Evaluates `γ(z)`; `warm` seeds value iteration.
pub fn evaluate(dp: &DpProblem, z: Belief, warm: Option<&ValueFunction>, opts: &MfeOptions) -> Result<GammaEval> {
    let start = warm.cloned().unwrap_or_else(|| ValueFunction::constant(dp.grid, 0.0));
    let solve = dp.value_iterate_from(start, z, opts.vi_tol, opts.vi_max_iters)?;
    let policy = dp.extract_client_policy(&solve.value);
    let kernel = budget_kernel(dp, z, &policy)?;
    let pi = stationary_distribution(&kernel)?;
    let gamma = pi.bid0_mass(&policy).clamp(0.0, 1.0);
    let premium = premium_law(&dp.params, &policy, &pi);
    Ok(GammaEval {
        z: z.z(),
        gamma,
        premium,
        value: solve.value,
        policy,
        pi,
        vi_iterations: solve.iterations,
    })
}

/// Law of `α (k - B)⁺` given that the client bids `k`, with `B ~ pi`.
pub fn premium_law(params: &MarketParams, policy: &ClientPolicy, pi: &StationaryDistribution) -> PremiumHistogram {
    let mut h = PremiumHistogram::empty(params);
    for (i, m) in pi.mass.iter().enumerate() {
        let b = pi.grid.budget(i);
        let q = m * policy.bid_k_prob(b);
        if q > 0.0 {
            h.add(params.alpha * params.overdraft(b), q);
        }
    }
    h.normalized()
}

/// `γ(z)` alone.
pub fn gamma(dp: &DpProblem, z: Belief) -> Result<f64> {
    Ok(evaluate(dp, z, None, &MfeOptions::default())?.gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMethod {
    Damped,
    Bisection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixedPointReport {
    pub model: LoanModel,
    pub z_star: f64,
    pub residual: f64,
    pub iterations: usize,
    pub trade_ratio: f64,
    /// Mean peer-loan premium at the equilibrium (0 for other models).
    pub premium: f64,
    pub premium_law: Vec<(f64, f64)>,
    pub expected_value: f64,
    pub method: SearchMethod,
    pub policy: ClientPolicy,
    pub value: ValueFunction,
    pub pi: StationaryDistribution,
    pub trace: Vec<(f64, f64)>,
}

impl FixedPointReport {
    fn from_eval(dp: &DpProblem, ev: GammaEval, iterations: usize, method: SearchMethod, trace: Vec<(f64, f64)>) -> Result<Self> {
        let expected_value = crate::dp::expected_value(&ev.value, &dp.params.psi)?;
        Ok(FixedPointReport {
            model: dp.model,
            z_star: ev.z,
            residual: (ev.gamma - ev.z).abs(),
            iterations,
            trade_ratio: 1.0 - ev.z,
            premium: dp.mean_premium(),
            premium_law: dp.premium_atoms().to_vec(),
            expected_value,
            method,
            policy: ev.policy,
            value: ev.value,
            pi: ev.pi,
            trace,
        })
    }
}

fn uses_premium(dp: &DpProblem) -> bool {
    dp.model == LoanModel::PeerLoan
}

/// Damped iteration `z ← (1-d) z + d γ(z)`, falling back to bisection on
/// `γ(z) - z` when the iteration stalls. Under the peer-loan model the
/// premium is iterated jointly with `z`.
pub fn solve_mfe(dp: &DpProblem, opts: &MfeOptions) -> Result<FixedPointReport> {
    opts.validate()?;
    let mut law = PremiumHistogram::point(&dp.params, 0.0);
    let mut dp = dp.clone().with_premiums(law.atoms());
    let mut z = opts.z0;
    let mut trace = Vec::new();
    let mut warm: Option<ValueFunction> = None;
    let mut best = f64::INFINITY;
    let mut stall = 0usize;
    for it in 1..=opts.max_iters {
        let ev = evaluate(&dp, Belief::clamped(z), warm.as_ref(), opts)?;
        trace.push((z, ev.gamma));
        let premium_gap = if uses_premium(&dp) { law.distance(&ev.premium) } else { 0.0 };
        let residual = (ev.gamma - z).abs();
        if residual <= opts.tol && premium_gap <= opts.tol {
            return FixedPointReport::from_eval(&dp, ev, it, SearchMethod::Damped, trace);
        }
        if residual < 0.999 * best {
            best = residual;
            stall = 0;
        } else {
            stall += 1;
        }
        if stall >= 25 {
            break;
        }
        z = (1.0 - opts.damping) * z + opts.damping * ev.gamma;
        if uses_premium(&dp) {
            law = law.mix(&ev.premium, opts.damping);
            dp = dp.with_premiums(law.atoms());
        }
        warm = Some(ev.value);
    }
    bisect_mfe(&dp, opts, trace)
}

fn bisect_mfe(dp: &DpProblem, opts: &MfeOptions, mut trace: Vec<(f64, f64)>) -> Result<FixedPointReport> {
    // g(0) = γ(0) >= 0 and g(1) = γ(1) - 1 <= 0, so [0, 1] always brackets
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    for &(z, g) in &trace {
        let s = g - z;
        if s > 0.0 && z > lo && z < hi {
            lo = z;
        } else if s < 0.0 && z < hi && z > lo {
            hi = z;
        }
    }
    let start = trace.len();
    let mut warm: Option<ValueFunction> = None;
    for it in 0..200 {
        let mid = 0.5 * (lo + hi);
        let ev = evaluate(dp, Belief::clamped(mid), warm.as_ref(), opts)?;
        trace.push((mid, ev.gamma));
        let g = ev.gamma - mid;
        if g.abs() <= opts.tol {
            return FixedPointReport::from_eval(dp, ev, start + it + 1, SearchMethod::Bisection, trace);
        }
        if g > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
        warm = Some(ev.value);
    }
    Err(Error::NoFixedPoint { trace })
}

/// Solves from each start in `z0s` (in parallel) and keeps distinct equilibria,
/// sorted by `z_star`.
pub fn sweep_equilibria(dp: &DpProblem, opts: &MfeOptions, z0s: &[f64]) -> Vec<FixedPointReport> {
    let found: Vec<FixedPointReport> = z0s
        .par_iter()
        .filter_map(|&z0| {
            let o = MfeOptions { z0, ..opts.clone() };
            solve_mfe(dp, &o).ok()
        })
        .collect();
    let mut distinct: Vec<FixedPointReport> = Vec::new();
    for r in found {
        if distinct.iter().all(|d| (d.z_star - r.z_star).abs() > 1e-3) {
            distinct.push(r);
        }
    }
    distinct.sort_by(|a, b| a.z_star.total_cmp(&b.z_star));
    distinct
}

pub const DEFAULT_Z0_SCAN: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// One agent type of a heterogeneous population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeProfile {
    pub type_id: u8,
    pub p_c: f64,
    pub p_s: f64,
    pub psi: RegenerationDistribution,
    pub label: String,
}

impl TypeProfile {
    pub fn validate(&self) -> Result<()> {
        if (self.p_c + self.p_s - 1.0).abs() > 1e-9 {
            return Err(invalid("p_s", format!("type `{}`: p_c + p_s != 1", self.label)));
        }
        self.psi.validate()
    }

    /// DP problem for this type on top of the shared market constants.
    pub fn problem(&self, base: &DpProblem) -> Result<DpProblem> {
        self.validate()?;
        let mut params = base.params.clone();
        params.p_c = self.p_c;
        params.p_s = self.p_s;
        params.psi = self.psi.clone();
        let mut dp = DpProblem::new(params, base.model, base.grid)?;
        dp.tie_tol = base.tie_tol;
        dp.p_tie = base.p_tie;
        Ok(dp)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoupledReport {
    pub profiles: [TypeProfile; 2],
    pub reports: [FixedPointReport; 2],
    /// Probability-weighted trade ratio over market periods.
    pub joint_trade_ratio: f64,
    pub iterations: usize,
    /// Visited `(z_a, z_b)`.
    pub trace: Vec<(f64, f64)>,
}

/// Coupled equilibrium of two types that always trade across types: a type-A
/// server faces type-B clients, so type A's dynamic program uses `z_B`.
pub fn solve_coupled_mfe(profiles: &[TypeProfile; 2], base: &DpProblem, opts: &MfeOptions) -> Result<CoupledReport> {
    opts.validate()?;
    let mut dps = [profiles[0].problem(base)?, profiles[1].problem(base)?];
    let mut laws = [
        PremiumHistogram::point(&dps[0].params, 0.0),
        PremiumHistogram::point(&dps[1].params, 0.0),
    ];
    for t in 0..2 {
        dps[t] = dps[t].clone().with_premiums(laws[t].atoms());
    }
    let peer = base.model == LoanModel::PeerLoan;
    let mut z = [opts.z0, opts.z0];
    let mut warm: [Option<ValueFunction>; 2] = [None, None];
    let mut trace = Vec::new();
    let mut per_type: [Vec<(f64, f64)>; 2] = [Vec::new(), Vec::new()];
    for it in 1..=opts.max_iters {
        trace.push((z[0], z[1]));
        // a type's server-side belief is the other type's client behaviour
        let evs: Vec<GammaEval> = (0..2)
            .into_par_iter()
            .map(|t| evaluate(&dps[t], Belief::clamped(z[1 - t]), warm[t].as_ref(), opts))
            .collect::<Result<_>>()?;
        let gammas = [evs[0].gamma, evs[1].gamma];
        for t in 0..2 {
            per_type[t].push((z[t], gammas[t]));
        }
        let premium_gap = if peer {
            (0..2).map(|t| laws[t].distance(&evs[1 - t].premium)).fold(0.0, f64::max)
        } else {
            0.0
        };
        let res = [(gammas[0] - z[0]).abs(), (gammas[1] - z[1]).abs()];
        if res[0] <= opts.tol && res[1] <= opts.tol && premium_gap <= opts.tol {
            // z is a fixed point, so each eval belongs to its own type's equilibrium
            let mut reports = Vec::with_capacity(2);
            for (t, ev) in evs.into_iter().enumerate() {
                let expected_value = crate::dp::expected_value(&ev.value, &dps[t].params.psi)?;
                reports.push(FixedPointReport {
                    model: base.model,
                    z_star: z[t],
                    residual: res[t],
                    iterations: it,
                    trade_ratio: 1.0 - z[t],
                    premium: dps[t].mean_premium(),
                    premium_law: dps[t].premium_atoms().to_vec(),
                    expected_value,
                    method: SearchMethod::Damped,
                    policy: ev.policy,
                    value: ev.value,
                    pi: ev.pi,
                    trace: per_type[t].clone(),
                });
            }
            let w = profiles[0].p_c / (profiles[0].p_c + profiles[1].p_c);
            let joint = w * (1.0 - z[0]) + (1.0 - w) * (1.0 - z[1]);
            let b = reports.pop().unwrap();
            let a = reports.pop().unwrap();
            return Ok(CoupledReport {
                profiles: profiles.clone(),
                reports: [a, b],
                joint_trade_ratio: joint,
                iterations: it,
                trace,
            });
        }
        let d = opts.damping;
        for t in 0..2 {
            z[t] = (1.0 - d) * z[t] + d * gammas[t];
            if peer {
                // type-t servers are repaid by the other type's clients
                laws[t] = laws[t].mix(&evs[1 - t].premium, d);
                dps[t] = dps[t].clone().with_premiums(laws[t].atoms());
            }
        }
        let [e0, e1]: [GammaEval; 2] = evs.try_into().map_err(|_| Error::Invalid("two evaluations expected".into()))?;
        warm = [Some(e0.value), Some(e1.value)];
    }
    Err(Error::NoFixedPoint { trace })
}

/// Policy regions as a sanity helper: `true` iff every grid point below the
/// affordability threshold bids 0 and every point above the win threshold bids `k`.
pub fn policy_is_pinned(dp: &DpProblem, policy: &ClientPolicy) -> bool {
    let lo = dp.params.afford_threshold(dp.model);
    let hi = dp.params.win_threshold().max(lo);
    dp.grid.budgets().all(|b| {
        if b < lo {
            policy.action(b) == BidAction::Bid0
        } else if b > hi {
            policy.action(b) == BidAction::BidK
        } else {
            true
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::GridSpec;

    fn bank() -> DpProblem {
        DpProblem::new(MarketParams::default(), LoanModel::Bank, GridSpec::default()).unwrap()
    }

    fn z(x: f64) -> Belief {
        Belief::new(x).unwrap()
    }

    #[test]
    fn bid0_kernel_is_stay_or_regenerate() {
        let dp = bank();
        let k = budget_kernel(&dp, z(1.0), &ClientPolicy::constant(BidAction::Bid0)).unwrap();
        for i in [0, 10, 500, 2000] {
            assert_eq!(k.rows[i], vec![(i, 0.98)]);
            assert!((k.row_sum(i) - 1.0).abs() < 1e-12);
        }
        let pi = stationary_distribution(&k).unwrap();
        let psi = dp.grid.discretize(&dp.params.psi).unwrap();
        for (j, m) in psi {
            assert!((pi.mass[j] - m).abs() < 1e-10);
        }
    }

    #[test]
    fn kernel_row_at_five() {
        let dp = bank();
        let pol = ClientPolicy::threshold(4.0);
        let k = budget_kernel(&dp, z(0.2), &pol).unwrap();
        let i = 100; // b = 5
        let row = &k.rows[i];
        let at = |b: f64| -> f64 {
            let (j, f) = dp.grid.locate(b);
            assert!(f < 1e-9 || f > 1.0 - 1e-9, "{b} should be on grid");
            let j = if f > 0.5 { j + 1 } else { j };
            row.iter().filter(|e| e.0 == j).map(|e| e.1).sum()
        };
        assert!((at(5.0) - 0.98 * 0.5 * 0.2).abs() < 1e-12);
        assert!((at(3.8) - 0.98 * 0.5).abs() < 1e-9);
        assert!((at(6.0) - 0.98 * 0.5 * 0.8).abs() < 1e-9);
        let regen: f64 = k.regen.iter().map(|e| e.1).sum::<f64>() * (1.0 - k.beta);
        assert!((regen - 0.02).abs() < 1e-12);
        for i in 0..dp.grid.n() {
            assert!((k.row_sum(i) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_rejects_unaffordable_bids() {
        let dp = bank();
        let err = budget_kernel(&dp, z(0.5), &ClientPolicy::constant(BidAction::BidK)).unwrap_err();
        assert!(matches!(err, Error::NegativeDestination { index: 0, .. }));
    }

    #[test]
    fn hard_market_freezes_at_one() {
        // nobody starts with k and nobody earns, so nobody ever bids
        let dp = DpProblem::new(MarketParams::default(), LoanModel::Hard, GridSpec::default()).unwrap();
        assert!((gamma(&dp, z(1.0)).unwrap() - 1.0).abs() < 1e-12);
        let r = solve_mfe(&dp, &MfeOptions::default()).unwrap();
        assert_eq!(r.z_star, 1.0);
        assert_eq!(r.iterations, 1);
    }

    #[test]
    fn cheap_resource_gamma_is_zero() {
        let p = MarketParams::default().with_k(3.0);
        let dp = DpProblem::new(p, LoanModel::Bank, GridSpec::default()).unwrap();
        for zz in [0.0, 0.5, 1.0] {
            assert!(gamma(&dp, z(zz)).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn options_validation() {
        assert!(MfeOptions { damping: 0.0, ..Default::default() }.validate().is_err());
        assert!(MfeOptions { z0: 1.5, ..Default::default() }.validate().is_err());
        assert!(MfeOptions::default().validate().is_ok());
    }

    #[test]
    fn bisection_finds_root_with_full_damping_cycle() {
        // damping 1 turns the iteration into plain z <- γ(z); the solver must
        // still land on a residual within tolerance
        let dp = bank();
        let r = solve_mfe(&dp, &MfeOptions { damping: 1.0, tol: 1e-5, ..Default::default() }).unwrap();
        assert!(r.residual <= 1e-5);
        assert!((r.trade_ratio - 0.843).abs() < 0.01);
    }
}
