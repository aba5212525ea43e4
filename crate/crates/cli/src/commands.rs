//! One function per subcommand. Each writes its artifacts and returns a
//! short human-readable summary.

use std::fmt::Write as _;

use mfe_core::casestudy::{ingest_weather_trace, run_case_study, CaseInput};
use mfe_core::dp::{BidAction, ClientPolicy, ServerCheck};
use mfe_core::mfe::{policy_is_pinned, solve_mfe, CoupledReport, FixedPointReport, SearchMethod};
use mfe_core::sim::{write_metrics_csv, sweep, BeliefUpdate, EpochMetrics, SimSummary, Simulation, SweepRow};
use mfe_core::theory::{
    equilibrium_facts_audit, exhaustive_dominance, lipschitz_probe, policy_piece_audit, DiscreteBidDist, FactViolation,
    LipschitzReport, PieceAudit,
};
use mfe_core::{DpProblem, LoanModel, SimConfig, StationaryDistribution, ValueFunction};
use serde::Serialize;

use crate::config::{sim_config, RunConfig};
use crate::emit::{fmt_f64, slug, Artifacts, PlotKind, PlotTable};
use crate::error::Result;

#[derive(Debug, Serialize)]
pub struct SolveSummary {
    pub model: LoanModel,
    pub z_star: f64,
    pub residual: f64,
    pub trade_ratio: f64,
    pub expected_value: f64,
    pub premium: f64,
    pub premium_law: Vec<(f64, f64)>,
    pub method: SearchMethod,
    pub iterations: usize,
    pub policy: ClientPolicy,
    pub server_check: ServerCheck,
    pub warnings: Vec<String>,
    /// Visited `(z, γ(z))`.
    pub trace: Vec<(f64, f64)>,
}

impl SolveSummary {
    fn new(dp: &DpProblem, r: &FixedPointReport) -> Self {
        let server_check = dp.server_best_response_check(&r.value, mfe_core::Belief::clamped(r.z_star));
        SolveSummary {
            model: r.model,
            z_star: r.z_star,
            residual: r.residual,
            trade_ratio: r.trade_ratio,
            expected_value: r.expected_value,
            premium: r.premium,
            premium_law: r.premium_law.clone(),
            method: r.method,
            iterations: r.iterations,
            policy: r.policy.clone(),
            server_check,
            warnings: dp.params.band_warnings(),
            trace: r.trace.clone(),
        }
    }
}

fn value_csv(v: &ValueFunction, policy: &ClientPolicy) -> String {
    let mut s = String::from("budget,value,bid_k\n");
    for (b, x) in v.grid.budgets().zip(&v.values) {
        let a = u8::from(policy.action(b) == BidAction::BidK);
        let _ = writeln!(s, "{},{},{a}", fmt_f64(b), fmt_f64(*x));
    }
    s
}

fn pi_csv(pi: &StationaryDistribution) -> String {
    let mut s = String::from("budget,mass,cdf\n");
    for ((b, m), c) in pi.grid.budgets().zip(&pi.mass).zip(pi.cdf()) {
        let _ = writeln!(s, "{},{},{}", fmt_f64(b), fmt_f64(*m), fmt_f64(c));
    }
    s
}

pub fn solve(cfg: &RunConfig, art: &mut Artifacts) -> Result<String> {
    let mut text = String::new();
    let mut cdf = PlotTable::new(cfg.grid.budgets().collect());
    let mut bids = PlotTable::new(vec![0.0, cfg.params.k]);
    for m in cfg.model.models() {
        let dp = DpProblem::new(cfg.params.clone(), m, cfg.grid)?;
        let r = solve_mfe(&dp, &cfg.solver)?;
        let tag = m.short();
        art.json(&format!("solve_{tag}.json"), &SolveSummary::new(&dp, &r))?;
        art.write(&format!("value_{tag}.csv"), value_csv(&r.value, &r.policy))?;
        art.write(&format!("pi_{tag}.csv"), pi_csv(&r.pi))?;
        cdf.push(tag, r.pi.cdf());
        bids.push(tag, vec![r.z_star, 1.0 - r.z_star]);
        let _ = writeln!(
            text,
            "{m}: z* = {:.5}, trade ratio {:.4}, E[v] = {:.3} ({} iterations, residual {:.1e})",
            r.z_star, r.trade_ratio, r.expected_value, r.iterations, r.residual
        );
    }
    art.plot(PlotKind::BudgetCdf, None, &cdf)?;
    art.plot(PlotKind::BidHist, None, &bids)?;
    Ok(text)
}

#[derive(Debug, Serialize)]
struct SimReport<'a> {
    model: LoanModel,
    summary: &'a SimSummary,
    refreshes: &'a [BeliefUpdate],
}

fn empirical_cdf(budgets: &[f64], at: &[f64]) -> Vec<f64> {
    let mut b = budgets.to_vec();
    b.sort_by(f64::total_cmp);
    let n = b.len().max(1) as f64;
    at.iter().map(|&x| b.partition_point(|&y| y <= x) as f64 / n).collect()
}

fn terminal_bid_split(metrics: &[EpochMetrics]) -> Vec<f64> {
    let tail = &metrics[metrics.len() / 2..];
    let (b0, bk) = tail.iter().fold((0u64, 0u64), |a, m| (a.0 + m.bid_histogram[0], a.1 + m.bid_histogram[1]));
    let n = (b0 + bk).max(1) as f64;
    vec![b0 as f64 / n, bk as f64 / n]
}

pub fn simulate(cfg: &RunConfig, art: &mut Artifacts) -> Result<String> {
    let mut text = String::new();
    let steps: Vec<f64> = (0..cfg.sim.steps).map(|s| s as f64).collect();
    let mut belief = PlotTable::new(steps);
    let budgets: Vec<f64> = cfg.grid.budgets().collect();
    let mut cdf = PlotTable::new(budgets.clone());
    let mut bids = PlotTable::new(vec![0.0, cfg.params.k]);
    for m in cfg.model.models() {
        let out = Simulation::new(sim_config(cfg, m))?.run()?;
        let tag = m.short();
        art.with_writer(&format!("metrics_{tag}.csv"), |w| Ok(write_metrics_csv(&out.metrics, &cfg.sim.record, w)?))?;
        art.json(
            &format!("sim_{tag}.json"),
            &SimReport {
                model: m,
                summary: &out.summary,
                refreshes: &out.refreshes,
            },
        )?;
        belief.push(tag, out.metrics.iter().map(|e| e.empirical_z).collect());
        cdf.push(tag, empirical_cdf(&out.final_budgets, &budgets));
        bids.push(tag, terminal_bid_split(&out.metrics));
        let s = &out.summary;
        let _ = writeln!(
            text,
            "{m}: terminal trade ratio {:.4}, belief {:.5} (window se {:.5}), mean budget {:.3}",
            s.terminal_trade_ratio, s.z.tail_mean, s.z.window_se, s.final_mean_budget
        );
    }
    art.plot(PlotKind::BeliefConvergence, None, &belief)?;
    art.plot(PlotKind::BudgetCdf, None, &cdf)?;
    art.plot(PlotKind::BidHist, None, &bids)?;
    Ok(text)
}

fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("index,psi,k,model,trade_ratio,expected_value,z_star,residual,equilibria,seed,error\n");
    let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.index,
            // distributions contain commas
            format_args!("\"{}\"", r.psi),
            fmt_f64(r.k),
            r.model,
            opt(r.trade_ratio),
            opt(r.expected_value),
            opt(r.z_star),
            opt(r.residual),
            r.equilibria,
            r.seed.map(|x| x.to_string()).unwrap_or_default(),
            r.error.as_deref().map(|e| format!("\"{}\"", e.replace('"', "'"))).unwrap_or_default()
        );
    }
    s
}

pub fn run_sweep(cfg: &RunConfig, art: &mut Artifacts) -> Result<String> {
    let mut rows = Vec::new();
    let models = cfg.model.models();
    for &m in &models {
        rows.extend(sweep(&cfg.sweep.k, &cfg.sweep.psi, &sim_config(cfg, m), cfg.sweep.mode, &cfg.solver)?);
    }
    art.write("sweep_rows.csv", sweep_csv(&rows))?;
    art.json("sweep_rows.json", &rows)?;
    let mut text = String::new();
    for psi in &cfg.sweep.psi {
        let name = psi.to_string();
        let mut t = PlotTable::new(cfg.sweep.k.clone());
        let pick = |m: LoanModel, f: fn(&SweepRow) -> Option<f64>| -> Vec<f64> {
            cfg.sweep
                .k
                .iter()
                .map(|&k| {
                    rows.iter()
                        .find(|r| r.model == m && r.psi == name && r.k == k)
                        .and_then(f)
                        .unwrap_or(f64::NAN)
                })
                .collect()
        };
        for &m in &models {
            let tr = pick(m, |r| r.trade_ratio);
            let _ = writeln!(
                text,
                "{name} {m}: trade ratio {}",
                tr.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ")
            );
            t.push(format!("tr_{}", m.short()), tr);
            t.push(format!("ev_{}", m.short()), pick(m, |r| r.expected_value));
        }
        art.plot(PlotKind::Sweep, Some(&slug(&name)), &t)?;
    }
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        let _ = writeln!(text, "{failed} cell(s) failed; see sweep_rows.csv");
    }
    Ok(text)
}

#[derive(Debug, Serialize)]
struct CoupledSummary {
    z: [f64; 2],
    trade_ratio: [f64; 2],
    expected_value: [f64; 2],
    residual: [f64; 2],
    joint_trade_ratio: f64,
    iterations: usize,
    trace: Vec<(f64, f64)>,
}

impl From<&CoupledReport> for CoupledSummary {
    fn from(c: &CoupledReport) -> Self {
        let [a, b] = &c.reports;
        CoupledSummary {
            z: [a.z_star, b.z_star],
            trade_ratio: [a.trade_ratio, b.trade_ratio],
            expected_value: [a.expected_value, b.expected_value],
            residual: [a.residual, b.residual],
            joint_trade_ratio: c.joint_trade_ratio,
            iterations: c.iterations,
            trace: c.trace.clone(),
        }
    }
}

#[derive(Debug, Serialize)]
struct CaseReport<'a> {
    model: LoanModel,
    input: &'a CaseInput,
    profiles: &'a [mfe_core::TypeProfile; 2],
    coupled: Option<CoupledSummary>,
    simulation: Option<&'a SimSummary>,
    savings: &'a mfe_core::casestudy::SavingsReport,
}

pub fn case_study(cfg: &RunConfig, art: &mut Artifacts) -> Result<String> {
    let cs = &cfg.case_study;
    let input = match &cs.trace {
        Some(p) => CaseInput::Trace {
            summary: ingest_weather_trace(p, cs.daytime)?,
        },
        None => CaseInput::Probs {
            probs: cs.probs,
            client_hours_a: cs.client_hours_a,
            client_hours_b: cs.client_hours_b,
        },
    };
    let sim = SimConfig {
        n_agents: cs.agents,
        grid: cs.grid,
        params: cs.params.clone(),
        ..sim_config(cfg, LoanModel::Bank)
    };
    let mut text = String::new();
    for m in cfg.model.models() {
        let out = run_case_study(&input, &cs.params, m, cs.mode, &sim, &cfg.solver)?;
        let tag = m.short();
        let report = CaseReport {
            model: m,
            input: &input,
            profiles: &out.profiles,
            coupled: out.coupled.as_ref().map(CoupledSummary::from),
            simulation: out.sim_summary.as_ref(),
            savings: &out.savings,
        };
        art.json(&format!("case_{tag}.json"), &report)?;
        art.write(&format!("savings_{tag}.txt"), format!("{}\n", out.savings))?;
        let budgets: Vec<f64> = cs.grid.budgets().collect();
        let mut cdf = PlotTable::new(budgets.clone());
        if let Some(c) = &out.coupled {
            let [a, b] = &c.reports;
            cdf.push("a", a.pi.cdf());
            cdf.push("b", b.pi.cdf());
            let mut v = String::from("budget,v_a,v_b\n");
            for (i, x) in budgets.iter().enumerate() {
                let _ = writeln!(v, "{},{},{}", fmt_f64(*x), fmt_f64(a.value.values[i]), fmt_f64(b.value.values[i]));
            }
            art.write(&format!("case_value_{tag}.csv"), v)?;
        }
        if !out.metrics.is_empty() {
            cdf.push("sim_a", empirical_cdf(&out.budgets[0], &budgets));
            cdf.push("sim_b", empirical_cdf(&out.budgets[1], &budgets));
            let mut t = PlotTable::new(out.metrics.iter().map(|e| e.step as f64).collect());
            for ty in 0..2 {
                let z = out
                    .metrics
                    .iter()
                    .map(|e| match e.type_clients.get(ty) {
                        Some(&n) if n > 0 => e.type_bid0[ty] as f64 / n as f64,
                        _ => f64::NAN,
                    })
                    .collect();
                t.push(["a", "b"][ty], z);
            }
            art.plot(PlotKind::BeliefConvergence, Some(&format!("case_{tag}")), &t)?;
        }
        art.plot(PlotKind::BudgetCdf, Some(&format!("case_{tag}")), &cdf)?;
        let _ = writeln!(text, "{m}:\n{}", out.savings);
    }
    Ok(text)
}

#[derive(Debug, Serialize)]
struct ModelChecks {
    model: LoanModel,
    z_star: f64,
    residual: f64,
    facts: Vec<FactViolation>,
    lipschitz: LipschitzReport,
    pieces: PieceAudit,
    pinned: bool,
    server_check: ServerCheck,
}

#[derive(Debug, Serialize)]
struct CheckReport {
    dominance_cases: usize,
    dominance_failure: Option<(DiscreteBidDist, DiscreteBidDist, f64)>,
    models: Vec<ModelChecks>,
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Structural checks at the configured parameters. Failures are reported,
/// not raised.
pub fn check(cfg: &RunConfig, art: &mut Artifacts) -> Result<String> {
    let p = &cfg.params;
    let asks: Vec<f64> = [-1.0, -0.5, 0.0, 0.5].iter().map(|d| p.k + d).filter(|&x| x > 0.0).collect();
    let (dominance_cases, dominance_failure) = exhaustive_dominance(&asks, 4, 10);
    let mut text = String::new();
    let _ = writeln!(
        text,
        "{} single-price dominance over {dominance_cases} cases",
        verdict(dominance_failure.is_none())
    );
    let zs: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let mut models = Vec::new();
    for m in cfg.model.models() {
        let dp = DpProblem::new(p.clone(), m, cfg.grid)?;
        let r = solve_mfe(&dp, &cfg.solver)?;
        let server = DiscreteBidDist::point(p.k);
        let atoms: Vec<(f64, f64)> = [(0.0, r.z_star), (p.k, 1.0 - r.z_star)].into_iter().filter(|a| a.1 > 0.0).collect();
        let client = DiscreteBidDist::new(&atoms)?;
        let facts = equilibrium_facts_audit(&server, &client);
        let lipschitz = lipschitz_probe(&dp, &zs)?;
        let pieces = policy_piece_audit(p, m, r.z_star, &[0.1, 0.05, 0.025], cfg.grid.b_max)?;
        let pinned = policy_is_pinned(&dp, &r.policy);
        let server_check = dp.server_best_response_check(&r.value, mfe_core::Belief::clamped(r.z_star));
        let _ = writeln!(text, "{m}: z* = {:.5}", r.z_star);
        let _ = writeln!(text, "  {} fixed point residual {:.1e}", verdict(r.residual <= 1e-3), r.residual);
        if r.trade_ratio > 0.0 {
            let _ = writeln!(text, "  {} bidding facts ({} violations)", verdict(facts.is_empty()), facts.len());
        } else {
            // nobody bids k, so every ask is a best response
            let _ = writeln!(text, "  SKIP bidding facts: no trade at this equilibrium");
        }
        let _ = writeln!(
            text,
            "  {} Lipschitz ratio {:.3} vs (k - c_serve)/(1 - beta) = {:.3}",
            verdict(lipschitz.within_bound),
            lipschitz.max_ratio,
            lipschitz.bound
        );
        let _ = writeln!(
            text,
            "  {} Lipschitz ratio vs oscillation bound {:.3}",
            verdict(lipschitz.within_oscillation_bound),
            lipschitz.oscillation_bound
        );
        let _ = writeln!(text, "  {} policy pieces {:?}", verdict(pieces.stable), pieces.counts);
        let _ = writeln!(text, "  {} policy pinned outside the band", verdict(pinned));
        let _ = writeln!(
            text,
            "  {} server asks k ({} violations)",
            verdict(server_check.violations.is_empty()),
            server_check.violations.len()
        );
        models.push(ModelChecks {
            model: m,
            z_star: r.z_star,
            residual: r.residual,
            facts,
            lipschitz,
            pieces,
            pinned,
            server_check,
        });
    }
    art.json(
        "check.json",
        &CheckReport {
            dominance_cases,
            dominance_failure,
            models,
        },
    )?;
    Ok(text)
}
