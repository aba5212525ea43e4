//! Single-agent dynamic program under the unified-price belief.
//!
//! Servers ask `k`; a matched client declines (bids 0) with probability `z`.
//! The value of holding budget `b` just before the role is revealed solves
//!
//! ```text
//! v(b) = β v(b)
//!      + p_s (1-z) E_φ[k - c_serve + φ + β (v(b + k - c_serve + φ) - v(b))]
//!      + p_c max{ s - k + β [v(b + s - k - α(k-b)⁺) - v(b)],  -c_lose }
//! ```
//!
//! where the first branch of the max is only available when the client can
//! afford `k`, and `φ` is the peer-loan premium the server collects, a
//! random variable with a discrete law (zero outside the peer-loan model). Budgets live on a uniform grid; off-grid lookups
//! interpolate linearly and lookups past the top of the grid clamp.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::market::{LoanModel, MarketParams, RegenerationDistribution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub b_max: f64,
    pub delta: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            b_max: 100.0,
            delta: 0.05,
        }
    }
}

impl GridSpec {
    pub fn new(b_max: f64, delta: f64) -> Result<Self> {
        let g = GridSpec { b_max, delta };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(invalid("grid.delta", format!("{} must be > 0", self.delta)));
        }
        if !(self.b_max >= self.delta && self.b_max.is_finite()) {
            return Err(invalid("grid.b_max", format!("{} must be >= delta", self.b_max)));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        (self.b_max / self.delta + 1e-9).floor() as usize + 1
    }

    pub fn budget(&self, i: usize) -> f64 {
        i as f64 * self.delta
    }

    /// Largest representable budget.
    pub fn top(&self) -> f64 {
        self.budget(self.n() - 1)
    }

    pub fn budgets(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n()).map(move |i| self.budget(i))
    }

    /// Lower neighbour index and interpolation weight of the upper neighbour.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let n = self.n();
        if x <= 0.0 {
            return (0, 0.0);
        }
        let t = x / self.delta;
        let i = t.floor() as usize;
        if i >= n - 1 {
            return (n - 1, 0.0);
        }
        let i = i.min(n - 2);
        (i, (t - i as f64).clamp(0.0, 1.0))
    }

    /// Mass of `psi` assigned to grid points: each point owns the cell
    /// `[b_i - δ/2, b_i + δ/2)`; atoms split linearly between neighbours.
    pub fn discretize(&self, psi: &RegenerationDistribution) -> Result<Vec<(usize, f64)>> {
        let (lo, hi) = psi.support();
        if hi > self.top() + 1e-9 {
            return Err(Error::SupportExceedsGrid {
                lo,
                hi,
                b_max: self.top(),
            });
        }
        let mut out: Vec<(usize, f64)> = Vec::new();
        let push = |i: usize, m: f64, out: &mut Vec<(usize, f64)>| {
            if m > 0.0 {
                match out.iter_mut().find(|(j, _)| *j == i) {
                    Some(e) => e.1 += m,
                    None => out.push((i, m)),
                }
            }
        };
        let split = |x: f64, m: f64, out: &mut Vec<(usize, f64)>| {
            let (i, f) = self.locate(x);
            push(i, m * (1.0 - f), out);
            if f > 0.0 {
                push(i + 1, m * f, out);
            }
        };
        match psi {
            RegenerationDistribution::Uniform { lo, hi } if hi > lo => {
                let first = ((lo / self.delta) - 0.5).floor().max(0.0) as usize;
                let last = (((hi / self.delta) + 0.5).ceil() as usize).min(self.n() - 1);
                for i in first..=last {
                    let c = self.budget(i);
                    let m = psi.mass_between(c - 0.5 * self.delta, c + 0.5 * self.delta);
                    push(i, m, &mut out);
                }
            }
            RegenerationDistribution::Uniform { lo, .. } => split(*lo, 1.0, &mut out),
            RegenerationDistribution::PointMass { at } => split(*at, 1.0, &mut out),
            RegenerationDistribution::Tabulated { atoms } => {
                for &(b, p) in atoms {
                    split(b, p, &mut out);
                }
            }
        }
        let total: f64 = out.iter().map(|e| e.1).sum();
        for e in &mut out {
            e.1 /= total;
        }
        out.sort_by_key(|e| e.0);
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl ValueFunction {
    pub fn constant(grid: GridSpec, c: f64) -> Self {
        ValueFunction {
            grid,
            values: vec![c; grid.n()],
        }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(f64) -> f64) -> Self {
        ValueFunction {
            grid,
            values: grid.budgets().map(f).collect(),
        }
    }

    /// Linear interpolation; clamps outside `[0, top]`.
    pub fn eval(&self, x: f64) -> f64 {
        let (i, f) = self.grid.locate(x);
        if f == 0.0 {
            self.values[i]
        } else {
            self.values[i] * (1.0 - f) + self.values[i + 1] * f
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sup_distance(&self, other: &ValueFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite { index }),
            None => Ok(()),
        }
    }
}

/// Probability that a matched client bids 0.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Belief(f64);

impl Belief {
    pub fn new(z: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&z) {
            return Err(invalid("z", format!("{z} not in [0, 1]")));
        }
        Ok(Belief(z))
    }

    /// Clamps into `[0, 1]`; for values produced by arithmetic on beliefs.
    pub fn clamped(z: f64) -> Self {
        Belief(z.clamp(0.0, 1.0))
    }

    pub fn z(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BidAction {
    Bid0,
    BidK,
}

/// Piecewise-constant client policy. `actions[i]` applies on
/// `[switch_points[i-1], switch_points[i])`, with the first interval starting at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientPolicy {
    pub switch_points: Vec<f64>,
    pub actions: Vec<BidAction>,
    pub tie_points: Vec<f64>,
    /// Probability of bidding 0 exactly at a tie point.
    #[serde(default)]
    pub p_tie: f64,
}

impl ClientPolicy {
    pub fn constant(action: BidAction) -> Self {
        ClientPolicy {
            switch_points: Vec::new(),
            actions: vec![action],
            tie_points: Vec::new(),
            p_tie: 0.0,
        }
    }

    /// Bid 0 below `threshold`, bid `k` from it on.
    pub fn threshold(threshold: f64) -> Self {
        if threshold <= 0.0 {
            return ClientPolicy::constant(BidAction::BidK);
        }
        ClientPolicy {
            switch_points: vec![threshold],
            actions: vec![BidAction::Bid0, BidAction::BidK],
            tie_points: Vec::new(),
            p_tie: 0.0,
        }
    }

    pub fn action(&self, b: f64) -> BidAction {
        let idx = self.switch_points.partition_point(|&s| s <= b);
        self.actions[idx]
    }

    /// Probability of bidding `k` at budget `b`, honouring `p_tie`.
    pub fn bid_k_prob(&self, b: f64) -> f64 {
        if self.p_tie > 0.0 && self.tie_points.iter().any(|t| (t - b).abs() <= 1e-9) {
            return 1.0 - self.p_tie;
        }
        match self.action(b) {
            BidAction::BidK => 1.0,
            BidAction::Bid0 => 0.0,
        }
    }

    /// Number of action changes inside `[lo, hi]`.
    pub fn switches_within(&self, lo: f64, hi: f64) -> usize {
        self.switch_points.iter().filter(|&&s| s >= lo && s <= hi).count()
    }

    pub fn always(&self, action: BidAction) -> bool {
        self.actions.iter().all(|a| *a == action)
    }
}

pub const PREMIUM_BINS: usize = 32;

/// Binned law of the peer-loan premium on `[0, α s / (1 + α)]`, the range of
/// `α (k - b)⁺` over affordable budgets. Each bin keeps its mass and the
/// mass-weighted sum, so the mean survives binning exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PremiumHistogram {
    pub hi: f64,
    pub mass: Vec<f64>,
    pub sum: Vec<f64>,
}

impl PremiumHistogram {
    pub fn empty(params: &MarketParams) -> Self {
        PremiumHistogram {
            hi: params.alpha * params.s / (1.0 + params.alpha),
            mass: vec![0.0; PREMIUM_BINS],
            sum: vec![0.0; PREMIUM_BINS],
        }
    }

    pub fn point(params: &MarketParams, x: f64) -> Self {
        let mut h = Self::empty(params);
        h.add(x, 1.0);
        h
    }

    fn bin(&self, x: f64) -> usize {
        if self.hi <= 0.0 {
            return 0;
        }
        ((x / self.hi * PREMIUM_BINS as f64) as usize).min(PREMIUM_BINS - 1)
    }

    pub fn add(&mut self, x: f64, w: f64) {
        let b = self.bin(x);
        self.mass[b] += w;
        self.sum[b] += w * x;
    }

    pub fn merge(&mut self, other: &PremiumHistogram) {
        for b in 0..PREMIUM_BINS {
            self.mass[b] += other.mass[b];
            self.sum[b] += other.sum[b];
        }
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        let t = self.total();
        if t > 0.0 {
            self.sum.iter().sum::<f64>() / t
        } else {
            0.0
        }
    }

    pub fn normalized(&self) -> Self {
        let t = self.total();
        let mut h = self.clone();
        if t > 0.0 {
            h.mass.iter_mut().for_each(|m| *m /= t);
            h.sum.iter_mut().for_each(|m| *m /= t);
        }
        h
    }

    /// `(1-d) self + d other` as probability laws; an empty `other` changes nothing.
    pub fn mix(&self, other: &PremiumHistogram, d: f64) -> Self {
        let a = self.normalized();
        if other.total() <= 0.0 {
            return a;
        }
        let b = other.normalized();
        PremiumHistogram {
            hi: self.hi,
            mass: a.mass.iter().zip(&b.mass).map(|(x, y)| (1.0 - d) * x + d * y).collect(),
            sum: a.sum.iter().zip(&b.sum).map(|(x, y)| (1.0 - d) * x + d * y).collect(),
        }
    }

    /// L1 distance of the normalized bin masses and sums.
    pub fn distance(&self, other: &PremiumHistogram) -> f64 {
        let a = self.normalized();
        let b = other.normalized();
        (0..PREMIUM_BINS)
            .map(|i| (a.mass[i] - b.mass[i]).abs() + (a.sum[i] - b.sum[i]).abs())
            .sum()
    }

    /// `(bin mean, probability)` atoms of the nonempty bins.
    pub fn atoms(&self) -> Vec<(f64, f64)> {
        let t = self.total();
        if t <= 0.0 {
            return vec![(0.0, 1.0)];
        }
        (0..PREMIUM_BINS)
            .filter(|&b| self.mass[b] > 0.0)
            .map(|b| (self.sum[b] / self.mass[b], self.mass[b] / t))
            .collect()
    }
}

/// Everything a DP solve needs besides the belief.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpProblem {
    pub params: MarketParams,
    pub model: LoanModel,
    pub grid: GridSpec,
    /// Law of the premium a peer-loan server collects per trade, as
    /// `(value, probability)` atoms; ignored for other models.
    pub premiums: Vec<(f64, f64)>,
    /// Relative tolerance for recording a policy tie.
    pub tie_tol: f64,
    pub p_tie: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueSolve {
    pub value: ValueFunction,
    pub iterations: usize,
    pub residual: f64,
}

/// Grid point of `x` in interpolation form.
#[derive(Debug, Clone, Copy)]
struct Lookup {
    i: usize,
    f: f64,
}

impl Lookup {
    #[inline]
    fn eval(self, v: &[f64]) -> f64 {
        if self.f == 0.0 {
            v[self.i]
        } else {
            v[self.i] * (1.0 - self.f) + v[self.i + 1] * self.f
        }
    }
}

/// Precomputed destinations for one operator application.
struct Stencil {
    afford: Vec<bool>,
    client: Vec<Lookup>,
    server: Vec<Lookup>,
}

impl DpProblem {
    pub fn new(params: MarketParams, model: LoanModel, grid: GridSpec) -> Result<Self> {
        params.validate()?;
        grid.validate()?;
        let need = params.psi.upper() + params.s;
        if grid.top() + 1e-9 < need {
            return Err(invalid(
                "grid.b_max",
                format!("{} below regeneration upper bound plus surplus ({need})", grid.top()),
            ));
        }
        Ok(DpProblem {
            params,
            model,
            grid,
            premiums: vec![(0.0, 1.0)],
            tie_tol: 1e-9,
            p_tie: 0.0,
        })
    }

    /// Deterministic premium `φ`.
    pub fn with_premium(self, premium: f64) -> Self {
        self.with_premiums(vec![(premium, 1.0)])
    }

    /// Premium law; weights are normalized, an empty list means no premium.
    pub fn with_premiums(mut self, atoms: Vec<(f64, f64)>) -> Self {
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        self.premiums = if total > 0.0 {
            atoms.into_iter().filter(|a| a.1 > 0.0).map(|(x, w)| (x, w / total)).collect()
        } else {
            vec![(0.0, 1.0)]
        };
        self
    }

    /// Premium atoms in effect for this model.
    pub fn premium_atoms(&self) -> &[(f64, f64)] {
        match self.model {
            LoanModel::PeerLoan => &self.premiums,
            _ => &[(0.0, 1.0)],
        }
    }

    pub fn mean_premium(&self) -> f64 {
        self.premium_atoms().iter().map(|(x, w)| x * w).sum()
    }

    /// Whether a client holding `b` can bid `k`.
    pub fn can_afford(&self, b: f64) -> bool {
        b + 1e-12 >= self.params.afford_threshold(self.model)
    }

    /// Client budget after a successful purchase (only meaningful if affordable).
    pub fn client_destination(&self, b: f64) -> f64 {
        let p = &self.params;
        match self.model {
            LoanModel::Hard => b + p.s - p.k,
            _ => (b + p.s - p.k - p.alpha * p.overdraft(b)).max(0.0),
        }
    }

    /// Server budget after a sale collecting premium `premium`.
    pub fn server_destination(&self, b: f64, premium: f64) -> f64 {
        (b + self.params.k - self.params.c_serve + premium).max(0.0)
    }

    fn stencil(&self) -> Stencil {
        let g = &self.grid;
        let look = |x: f64| {
            let (i, f) = g.locate(x);
            Lookup { i, f }
        };
        let budgets: Vec<f64> = g.budgets().collect();
        Stencil {
            afford: budgets.iter().map(|&b| self.can_afford(b)).collect(),
            client: budgets.iter().map(|&b| look(self.client_destination(b))).collect(),
            server: budgets
                .iter()
                .flat_map(|&b| self.premium_atoms().iter().map(move |&(x, _)| (b, x)))
                .map(|(b, x)| look(self.server_destination(b, x)))
                .collect(),
        }
    }

    fn apply_into(&self, st: &Stencil, v: &[f64], z: f64, out: &mut [f64]) {
        let p = &self.params;
        let beta = p.beta;
        let atoms = self.premium_atoms();
        let na = atoms.len();
        let serve_reward = p.k - p.c_serve + self.mean_premium();
        let buy_reward = p.s - p.k;
        for i in 0..v.len() {
            let vb = v[i];
            let after: f64 = if na == 1 {
                st.server[i].eval(v)
            } else {
                atoms.iter().zip(&st.server[i * na..(i + 1) * na]).map(|(a, l)| a.1 * l.eval(v)).sum()
            };
            let server = p.p_s * (1.0 - z) * (serve_reward + beta * (after - vb));
            let lose = -p.c_lose;
            let client = if st.afford[i] {
                let win = buy_reward + beta * (st.client[i].eval(v) - vb);
                win.max(lose)
            } else {
                lose
            };
            out[i] = beta * vb + server + p.p_c * client;
        }
    }

    /// One application of the Bellman operator.
    pub fn bellman_apply(&self, v: &ValueFunction, z: Belief) -> Result<ValueFunction> {
        v.check_finite()?;
        if v.grid != self.grid {
            return Err(Error::Invalid("value function grid does not match problem grid".into()));
        }
        let st = self.stencil();
        let mut out = vec![0.0; v.values.len()];
        self.apply_into(&st, &v.values, z.z(), &mut out);
        Ok(ValueFunction {
            grid: self.grid,
            values: out,
        })
    }

    pub fn value_iterate(&self, z: Belief, tol: f64, max_iters: usize) -> Result<ValueSolve> {
        self.value_iterate_from(ValueFunction::constant(self.grid, 0.0), z, tol, max_iters)
    }

    /// Value iteration from a warm start.
    pub fn value_iterate_from(&self, start: ValueFunction, z: Belief, tol: f64, max_iters: usize) -> Result<ValueSolve> {
        if !(tol > 0.0) {
            return Err(invalid("tol", "must be > 0"));
        }
        start.check_finite()?;
        let st = self.stencil();
        let mut cur = start.values;
        let mut next = vec![0.0; cur.len()];
        let mut residual = f64::INFINITY;
        for it in 1..=max_iters {
            self.apply_into(&st, &cur, z.z(), &mut next);
            residual = cur.iter().zip(&next).fold(0.0, |m, (a, b)| m.max((a - b).abs()));
            std::mem::swap(&mut cur, &mut next);
            if residual <= tol {
                return Ok(ValueSolve {
                    value: ValueFunction {
                        grid: self.grid,
                        values: cur,
                    },
                    iterations: it,
                    residual,
                });
            }
        }
        Err(Error::NoConvergence {
            what: "value iteration",
            iters: max_iters,
            residual,
        })
    }

    /// `v_c_win(b) - v_c_lose(b)` with `v` interpolated at continuous `b`.
    pub fn win_minus_lose(&self, v: &ValueFunction, b: f64) -> f64 {
        let p = &self.params;
        let win = p.beta * v.eval(self.client_destination(b)) + p.s - p.k;
        let lose = p.beta * v.eval(b) - p.c_lose;
        win - lose
    }

    /// Client best response: bid 0 where `k` is unaffordable, bid `k` above the
    /// budget-preserving threshold, and compare win/lose values in between.
    pub fn extract_client_policy(&self, v: &ValueFunction) -> ClientPolicy {
        let p = &self.params;
        let lo = p.afford_threshold(self.model).max(0.0);
        let hi = p.win_threshold();
        let tie_tol = self.tie_tol * (1.0 + v.sup_norm());

        let mut switch_points = Vec::new();
        let mut actions = vec![if lo > 0.0 { BidAction::Bid0 } else { BidAction::BidK }];
        let mut tie_points = Vec::new();
        let set = |at: f64, a: BidAction, switch_points: &mut Vec<f64>, actions: &mut Vec<BidAction>| {
            if *actions.last().unwrap() != a {
                switch_points.push(at);
                actions.push(a);
            }
        };

        if hi >= lo {
            // sample at lo, grid points strictly inside, hi
            let mut samples = vec![lo];
            let first = (lo / self.grid.delta).floor() as usize + 1;
            let mut i = first;
            while self.grid.budget(i) < hi && i < self.grid.n() {
                if self.grid.budget(i) > lo {
                    samples.push(self.grid.budget(i));
                }
                i += 1;
            }
            if hi > lo {
                samples.push(hi);
            }
            let classify = |d: f64| if d >= -tie_tol { BidAction::BidK } else { BidAction::Bid0 };
            let mut prev: Option<(f64, f64)> = None;
            for &b in &samples {
                let d = self.win_minus_lose(v, b);
                if d.abs() <= tie_tol {
                    tie_points.push(b);
                }
                let a = classify(d);
                match prev {
                    Some((pb, pd)) if classify(pd) != a => {
                        let root = bisect_sign_change(|x| self.win_minus_lose(v, x) + tie_tol, pb, b);
                        set(root, a, &mut switch_points, &mut actions);
                    }
                    None => set(b, a, &mut switch_points, &mut actions),
                    _ => {}
                }
                prev = Some((b, d));
            }
        }
        let upper = hi.max(lo);
        set(upper, BidAction::BidK, &mut switch_points, &mut actions);
        // a zero-width leading interval arises when lo == 0
        if switch_points.first() == Some(&0.0) {
            switch_points.remove(0);
            actions.remove(0);
        }
        ClientPolicy {
            switch_points,
            actions,
            tie_points,
            p_tie: self.p_tie,
        }
    }

    /// Checks that asking `k` beats asking 0 at every grid budget.
    pub fn server_best_response_check(&self, v: &ValueFunction, z: Belief) -> ServerCheck {
        let p = &self.params;
        let z = z.z();
        let tol = self.tie_tol * (1.0 + v.sup_norm());
        let stage = |b: f64, x: f64| {
            (1.0 - z) * (p.beta * v.eval((b + x - p.c_serve).max(0.0)) + x - p.c_serve) + z * p.beta * v.eval(b)
        };
        let mut out = ServerCheck::default();
        for b in self.grid.budgets() {
            let gain = stage(b, p.k) - stage(b, 0.0);
            if gain.abs() <= tol {
                out.ties.push(b);
            } else if gain < 0.0 {
                out.violations.push(b);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ServerCheck {
    /// Budgets where asking 0 strictly beats asking `k`.
    pub violations: Vec<f64>,
    /// Budgets where both asks give the same stage value.
    pub ties: Vec<f64>,
}

/// Root of `f` in `[a, b]` given opposite signs at the ends.
fn bisect_sign_change(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let mut fa = f(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if b - a <= 1e-12 {
            break;
        }
        let fm = f(m);
        if (fm >= 0.0) == (fa >= 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    b
}

/// Largest root of `c_serve = x β^(x - s/(1+α) - b̄_init)`.
pub fn server_bid_upper_bound(params: &MarketParams) -> Result<f64> {
    let beta = params.beta;
    let offset = params.s / (1.0 + params.alpha) + params.psi.upper();
    let ret = |x: f64| x * beta.powf(x - offset);
    let peak_x = -1.0 / beta.ln();
    let peak = ret(peak_x);
    if peak < params.c_serve {
        return Err(Error::NoBidBound {
            peak,
            c_serve: params.c_serve,
        });
    }
    let mut lo = peak_x;
    let mut hi = 1e4_f64.max(2.0 * peak_x);
    while ret(hi) > params.c_serve {
        hi *= 2.0;
    }
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if ret(mid) >= params.c_serve {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `∫ v dΨ` by quadrature on the grid cells.
pub fn expected_value(v: &ValueFunction, psi: &RegenerationDistribution) -> Result<f64> {
    let cells = v.grid.discretize(psi)?;
    Ok(cells.iter().map(|&(i, m)| m * v.values[i]).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::RegenerationDistribution;

    fn table1(model: LoanModel) -> DpProblem {
        DpProblem::new(MarketParams::default(), model, GridSpec::default()).unwrap()
    }

    fn z(x: f64) -> Belief {
        Belief::new(x).unwrap()
    }

    #[test]
    fn premium_histogram_keeps_mean() {
        let p = MarketParams::default();
        let mut h = PremiumHistogram::empty(&p);
        for (x, w) in [(0.0, 3.0), (0.11, 1.0), (0.13, 1.0), (4.0, 0.5)] {
            h.add(x, w);
        }
        let mean = (0.11 + 0.13 + 2.0) / 5.5;
        assert!((h.mean() - mean).abs() < 1e-15);
        let atoms = h.atoms();
        assert_eq!(atoms.len(), 2);
        let am: f64 = atoms.iter().map(|(x, w)| x * w).sum();
        assert!((am - mean).abs() < 1e-15);
        let z = PremiumHistogram::point(&p, 0.0);
        let m = z.mix(&h, 0.5);
        assert!((m.mean() - 0.5 * mean).abs() < 1e-15);
        assert!((m.total() - 1.0).abs() < 1e-15);
        assert_eq!(z.mix(&PremiumHistogram::empty(&p), 0.5), z);
        assert!(z.distance(&z) == 0.0 && z.distance(&h) > 0.0);
    }

    #[test]
    fn premium_law_averages_server_continuation() {
        let p = MarketParams::default();
        let split = DpProblem::new(p.clone(), LoanModel::PeerLoan, GridSpec::default())
            .unwrap()
            .with_premiums(vec![(0.0, 1.0), (2.0, 1.0)]);
        assert!((split.mean_premium() - 1.0).abs() < 1e-15);
        let v = ValueFunction::from_fn(GridSpec::default(), |b| b);
        let z = Belief::new(0.0).unwrap();
        // a linear value function cannot tell the law from its mean (away from the clamped top)
        let a = split.bellman_apply(&v, z).unwrap();
        let b = split.clone().with_premium(1.0).bellman_apply(&v, z).unwrap();
        for i in 0..1800 {
            assert!((a.values[i] - b.values[i]).abs() < 1e-9);
        }
        let bank = DpProblem { model: LoanModel::Bank, ..split };
        assert_eq!(bank.mean_premium(), 0.0);
    }

    #[test]
    fn grid_basics() {
        let g = GridSpec::default();
        assert_eq!(g.n(), 2001);
        assert!((g.top() - 100.0).abs() < 1e-9);
        assert_eq!(g.locate(-1.0), (0, 0.0));
        assert_eq!(g.locate(150.0), (2000, 0.0));
        let (i, f) = g.locate(3.81);
        assert_eq!(i, 76);
        assert!((g.budget(i) + f * g.delta - 3.81).abs() < 1e-12);
        assert!(GridSpec::new(10.0, 0.0).is_err());
    }

    #[test]
    fn discretized_uniform_is_trapezoid() {
        let g = GridSpec::default();
        let cells = g.discretize(&RegenerationDistribution::uniform(0.0, 5.0)).unwrap();
        assert_eq!(cells.len(), 101);
        let total: f64 = cells.iter().map(|c| c.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!((cells[0].1 - 0.005).abs() < 1e-12);
        assert!((cells[50].1 - 0.01).abs() < 1e-12);
        assert!((cells[100].1 - 0.005).abs() < 1e-12);
        let point = g.discretize(&RegenerationDistribution::PointMass { at: 5.02 }).unwrap();
        assert_eq!(point.len(), 2);
        assert!((point[0].1 - 0.6).abs() < 1e-9);
        assert!(g.discretize(&RegenerationDistribution::uniform(0.0, 150.0)).is_err());
    }

    #[test]
    fn bellman_constant_input_examples() {
        let dp = table1(LoanModel::Bank);
        let zero = ValueFunction::constant(dp.grid, 0.0);
        let t = dp.bellman_apply(&zero, z(0.0)).unwrap();
        // b >= k: both roles trade, stage reward 0.5*1 + 0.5*1
        assert!((t.eval(7.0) - 1.0).abs() < 1e-12);
        assert!((t.eval(20.0) - 1.0).abs() < 1e-12);
        let t1 = dp.bellman_apply(&zero, z(1.0)).unwrap();
        assert!((t1.eval(2.0) + 0.25).abs() < 1e-12);
    }

    #[test]
    fn bellman_rejects_non_finite() {
        let dp = table1(LoanModel::Bank);
        let mut v = ValueFunction::constant(dp.grid, 0.0);
        v.values[10] = f64::NAN;
        assert_eq!(dp.bellman_apply(&v, z(0.5)), Err(Error::NonFinite { index: 10 }));
    }

    #[test]
    fn cheap_resource_bids_k_at_zero() {
        let p = MarketParams::default().with_k(3.0);
        let dp = DpProblem::new(p, LoanModel::Bank, GridSpec::default()).unwrap();
        assert!(dp.can_afford(0.0));
        let v = dp.value_iterate(z(0.3), 1e-8, 1_000_000).unwrap().value;
        let pol = dp.extract_client_policy(&v);
        assert!(pol.always(BidAction::BidK));
        assert_eq!(pol.action(0.0), BidAction::BidK);
    }

    #[test]
    fn abundant_budget_closed_form() {
        let dp = table1(LoanModel::Bank);
        let v = dp.value_iterate(z(0.0), 1e-8, 1_000_000).unwrap().value;
        let closed = (0.5 * 1.0 + 0.5 * 1.0) / (1.0 - 0.98);
        assert!((v.eval(20.0) - closed).abs() / closed < 0.01, "{}", v.eval(20.0));
    }

    #[test]
    fn frozen_hard_market_closed_form() {
        let dp = table1(LoanModel::Hard);
        let solve = dp.value_iterate(z(1.0), 1e-8, 1_000_000).unwrap();
        assert!((solve.value.eval(2.0) + 12.5).abs() < 1e-5);
        let ev = expected_value(&solve.value, &dp.params.psi).unwrap();
        assert!((ev + 12.49).abs() < 0.02);
    }

    #[test]
    fn residuals_contract_by_beta() {
        let dp = table1(LoanModel::Bank);
        let mut v = ValueFunction::constant(dp.grid, 0.0);
        let mut prev = f64::INFINITY;
        for _ in 0..50 {
            let next = dp.bellman_apply(&v, z(0.3)).unwrap();
            let r = next.sup_distance(&v);
            assert!(r <= 0.98 * prev + 1e-12, "{r} vs {prev}");
            prev = r;
            v = next;
        }
    }

    #[test]
    fn value_iterate_reports_nonconvergence() {
        let dp = table1(LoanModel::Bank);
        assert!(matches!(dp.value_iterate(z(0.3), 1e-8, 5), Err(Error::NoConvergence { .. })));
        assert!(dp.value_iterate(z(0.3), 0.0, 5).is_err());
    }

    #[test]
    fn policy_examples() {
        let dp = table1(LoanModel::Bank);
        let v = dp.value_iterate(z(0.15), 1e-8, 1_000_000).unwrap().value;
        let pol = dp.extract_client_policy(&v);
        assert_eq!(pol.action(2.0), BidAction::Bid0);
        assert_eq!(pol.action(6.5), BidAction::BidK);
        assert_eq!(pol.action(50.0), BidAction::BidK);
        assert!(pol.switches_within(0.0, dp.params.win_threshold()) >= 1);
    }

    #[test]
    fn hard_policy_uses_budget_as_cap() {
        let dp = table1(LoanModel::Hard);
        let v = dp.value_iterate(z(0.5), 1e-8, 1_000_000).unwrap().value;
        let pol = dp.extract_client_policy(&v);
        assert_eq!(pol.action(6.99), BidAction::Bid0);
        assert_eq!(pol.action(7.0), BidAction::BidK);
    }

    #[test]
    fn policy_representation() {
        let pol = ClientPolicy::threshold(5.0);
        assert_eq!(pol.action(4.999), BidAction::Bid0);
        assert_eq!(pol.action(5.0), BidAction::BidK);
        assert_eq!(ClientPolicy::threshold(0.0), ClientPolicy::constant(BidAction::BidK));
        let mut tied = ClientPolicy::threshold(5.0);
        tied.tie_points.push(5.0);
        tied.p_tie = 0.25;
        assert!((tied.bid_k_prob(5.0) - 0.75).abs() < 1e-12);
        assert_eq!(tied.bid_k_prob(6.0), 1.0);
    }

    #[test]
    fn server_check_examples() {
        let dp = table1(LoanModel::Bank);
        let v = dp.value_iterate(z(0.15), 1e-8, 1_000_000).unwrap().value;
        assert!(dp.server_best_response_check(&v, z(0.15)).violations.is_empty());
        let flat = ValueFunction::constant(dp.grid, 3.0);
        let chk = dp.server_best_response_check(&flat, z(0.4));
        assert!(chk.violations.is_empty() && chk.ties.is_empty());
        let tie = dp.server_best_response_check(&v, z(1.0));
        assert!(tie.violations.is_empty());
        assert_eq!(tie.ties.len(), dp.grid.n());
    }

    #[test]
    fn server_bound_examples() {
        // frozen from scipy brentq on x*0.98^(x - 8/2.1 - b) - 6
        let p = MarketParams::default();
        assert!((server_bid_upper_bound(&p).unwrap() - 176.070_532_098).abs() < 1e-6);
        let p10 = MarketParams::default().with_psi(RegenerationDistribution::uniform(5.0, 10.0));
        assert!((server_bid_upper_bound(&p10).unwrap() - 182.974_284_718).abs() < 1e-6);
        let mut bad = MarketParams::default();
        bad.c_serve = 40.0;
        assert!(matches!(server_bid_upper_bound(&bad), Err(Error::NoBidBound { .. })));
    }

    #[test]
    fn expected_value_of_constant() {
        let g = GridSpec::default();
        let v = ValueFunction::constant(g, 4.25);
        for psi in ["U[0,5]", "U[5,10]", "P[3.33]", "T[1:0.5;9.99:0.5]"] {
            let psi: RegenerationDistribution = psi.parse().unwrap();
            assert!((expected_value(&v, &psi).unwrap() - 4.25).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_too_small_rejected() {
        let g = GridSpec::new(10.0, 0.05).unwrap();
        assert!(DpProblem::new(MarketParams::default().with_psi(RegenerationDistribution::uniform(5.0, 10.0)), LoanModel::Bank, g).is_err());
    }
}
