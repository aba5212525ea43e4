use mfe_core::dp::{DpProblem, GridSpec};
use mfe_core::market::{LoanModel, MarketParams, RegenerationDistribution};
use mfe_core::mfe::{solve_mfe, sweep_equilibria, MfeOptions, DEFAULT_Z0_SCAN};

fn solve(model: LoanModel, lo: f64, hi: f64) -> mfe_core::FixedPointReport {
    let p = MarketParams::default().with_psi(RegenerationDistribution::uniform(lo, hi));
    let dp = DpProblem::new(p, model, GridSpec::default()).unwrap();
    solve_mfe(&dp, &MfeOptions::default()).unwrap()
}

#[test]
fn table_one_low_regeneration() {
    let hard = solve(LoanModel::Hard, 0.0, 5.0);
    assert_eq!(hard.trade_ratio, 0.0);
    assert!((hard.expected_value - -12.5).abs() < 0.01);

    let bank = solve(LoanModel::Bank, 0.0, 5.0);
    assert!((bank.trade_ratio - 0.84).abs() < 0.01, "{}", bank.trade_ratio);
    assert!((bank.expected_value - 40.1).abs() < 0.5);

    let peer = solve(LoanModel::PeerLoan, 0.0, 5.0);
    assert!((peer.trade_ratio - 0.85).abs() < 0.01, "{}", peer.trade_ratio);
    assert!((peer.expected_value - 42.1).abs() < 0.5);
    assert!(peer.premium > 0.0 && peer.residual < 1e-5);
}

#[test]
fn table_one_high_regeneration() {
    let ratios: Vec<f64> = LoanModel::ALL.iter().map(|&m| solve(m, 5.0, 10.0).trade_ratio).collect();
    assert!((ratios[0] - 0.977).abs() < 0.01, "{ratios:?}");
    assert!((ratios[1] - 0.995).abs() < 0.01 && (ratios[2] - 0.995).abs() < 0.01, "{ratios:?}");
}

#[test]
fn scan_finds_the_frozen_branch_under_hard() {
    let p = MarketParams::default().with_psi(RegenerationDistribution::uniform(5.0, 10.0));
    let dp = DpProblem::new(p, LoanModel::Hard, GridSpec::default()).unwrap();
    let eqs = sweep_equilibria(&dp, &MfeOptions::default(), &DEFAULT_Z0_SCAN);
    assert!(eqs.iter().any(|e| e.trade_ratio > 0.9));
    for e in &eqs {
        assert!(e.residual < 1e-5);
    }
}
