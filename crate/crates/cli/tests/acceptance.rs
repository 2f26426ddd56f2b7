//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.

#[path = "../../core/tests/common/mod.rs"]
mod oracle;

use std::f64::consts::{E, LN_2};
use std::process::{Command, ExitCode};
use std::time::Instant;

use shuffle_rdp::dist::{normal_cdf, pair_quadratic_form};
use shuffle_rdp::mc::{estimate_beta_at_alpha, estimate_renyi_plugin};
use shuffle_rdp::sgd::{
    block_orders, l1_clip, plan_epsilon0, run_shuffled_sgd, run_shuffled_sgd_observed, two_blobs, Example,
    LogisticLoss, Loss, PlanOutcome, PlanTarget, SgdConfig, SquaredLoss,
};
use shuffle_rdp::{
    build_pair, corollary2_rdp, gdp_to_eps_delta, girgis_lower, girgis_upper, np_curve, renyi_direct,
    renyi_from_curve, GdpParam, ShuffleAccountant, ShuffleParams, DEFAULT_TAIL_TOL,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

const GRID_EPS: [f64; 4] = [0.25, 0.5, 1.0, 2.0];
const GRID_N: [u64; 4] = [10, 100, 1000, 2000];
const GRID_LAMBDA: [f64; 4] = [2.0, 4.0, 8.0, 16.0];

fn two_route_exactness() -> Outcome {
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for eps in GRID_EPS {
        for n in GRID_N {
            let pair = build_pair(&ShuffleParams::new(eps, n).unwrap(), DEFAULT_TAIL_TOL).unwrap();
            let curve = np_curve(&pair.p, &pair.q).unwrap();
            for lambda in GRID_LAMBDA {
                let d = renyi_direct(&pair.p, &pair.q, lambda).unwrap();
                let c = renyi_from_curve(&curve, lambda).unwrap();
                let gap = (d.epsilon - c.epsilon).abs();
                worst = worst.max(gap);
                if gap > 1e-9f64.max(d.error_bound + c.error_bound) {
                    failures.push(format!("eps0={eps} n={n} lambda={lambda} gap={gap:e}"));
                }
            }
        }
    }
    check(failures.is_empty(), format!("64 points, max |direct - curve| = {worst:.2e} {failures:?}"))
}

fn brute_force_equivalence() -> Outcome {
    let (mut atom_err, mut renyi_err) = (0.0f64, 0.0f64);
    for n in 1..=12u64 {
        for eps in [0.5, 1.0, 2.0] {
            let pair = build_pair(&ShuffleParams::new(eps, n).unwrap(), DEFAULT_TAIL_TOL).unwrap();
            let (op, oq) = oracle::enumerate(eps, n);
            for (pmf, o) in [(&pair.p, &op), (&pair.q, &oq)] {
                for (a, b, lp) in pmf.iter() {
                    atom_err = atom_err.max((lp.exp() - o.get(&(a, b)).copied().unwrap_or(0.0)).abs());
                }
                for (&(a, b), &v) in o.iter() {
                    let got = pmf.log_mass(a, b).map_or(0.0, f64::exp);
                    atom_err = atom_err.max((got - v).abs());
                }
            }
            for lambda in GRID_LAMBDA {
                let got = renyi_direct(&pair.p, &pair.q, lambda).unwrap().epsilon;
                renyi_err = renyi_err.max((got - oracle::renyi(&op, &oq, lambda)).abs());
            }
        }
    }
    check(
        atom_err <= 1e-14 && renyi_err <= 1e-10,
        format!("max atom error {atom_err:.2e} (<= 1e-14), max renyi error {renyi_err:.2e} (<= 1e-10)"),
    )
}

fn sandwich() -> Outcome {
    let mut points: Vec<(f64, u32)> = (0..15).map(|i| (0.1 + 2.9 * i as f64 / 14.0, 4)).collect();
    points.extend((2..=16).map(|l| (2.0, l)));
    let mut failures = Vec::new();
    let mut worst_ratio = 0.0f64;
    for (eps, lambda) in points {
        let params = ShuffleParams::new(eps, 10_000).unwrap();
        let l = lambda as f64;
        let exact = ShuffleAccountant::new(&params, DEFAULT_TAIL_TOL).unwrap().rdp(l).unwrap().epsilon;
        let lower = girgis_lower(&params, l).unwrap().epsilon;
        let upper = girgis_upper(&params, lambda).unwrap().epsilon;
        let c2 = corollary2_rdp(&params, l).unwrap().epsilon;
        worst_ratio = worst_ratio.max(exact / c2);
        if !(lower <= exact && exact <= upper && exact <= c2) {
            failures.push(format!("eps0={eps:.3} lambda={lambda}: {lower:e} <= {exact:e} <= min({upper:e}, {c2:e})"));
        }
    }
    check(
        failures.is_empty(),
        format!("30 points at n=1e4, max exact/corollary2 = {worst_ratio:.3} {failures:?}"),
    )
}

fn closed_form_spots() -> Outcome {
    let c2 = corollary2_rdp(&ShuffleParams::new(2.0, 10_000).unwrap(), 4.0).unwrap().epsilon;
    let want_c2 = 8.0 * E * E / 9999.0;
    let lower = girgis_lower(&ShuffleParams::new(LN_2, 100).unwrap(), 2.0).unwrap().epsilon;
    let delta = gdp_to_eps_delta(&GdpParam::new(1.0).unwrap(), 0.0).unwrap().delta;
    // p = 1/2 means eps0 = ln 2
    let quad = pair_quadratic_form(&ShuffleParams::new(LN_2, 11).unwrap()).unwrap();
    let ok = ((c2 - want_c2) / want_c2).abs() <= 1e-12
        && (lower - 1.005f64.ln()).abs() <= 1e-12
        && (delta - (2.0 * normal_cdf(0.5) - 1.0)).abs() <= 1e-9
        && (quad - 0.8).abs() <= 1e-10;
    check(
        ok,
        format!("corollary2={c2:.10} girgis_lower={lower:.10} delta={delta:.10} quadratic_form={quad:.12}"),
    )
}

fn symmetry_and_caps() -> Outcome {
    let (mut worst_sym, mut worst_cap) = (0.0f64, f64::NEG_INFINITY);
    for eps in GRID_EPS {
        for n in GRID_N {
            let acc = ShuffleAccountant::new(&ShuffleParams::new(eps, n).unwrap(), DEFAULT_TAIL_TOL).unwrap();
            for lambda in GRID_LAMBDA {
                let pq = renyi_direct(&acc.pair().p, &acc.pair().q, lambda).unwrap().epsilon;
                let qp = renyi_direct(&acc.pair().q, &acc.pair().p, lambda).unwrap().epsilon;
                worst_sym = worst_sym.max((pq - qp).abs());
                worst_cap = worst_cap.max(acc.rdp(lambda).unwrap().epsilon - eps);
            }
        }
    }
    check(
        worst_sym <= 1e-9 && worst_cap <= 0.0,
        format!("max |D(P||Q) - D(Q||P)| = {worst_sym:.2e}, max (epsilon - eps0) = {worst_cap:.3}"),
    )
}

fn monte_carlo_coverage() -> Outcome {
    let params = ShuffleParams::new(1.0, 50).unwrap();
    let pair = build_pair(&params, DEFAULT_TAIL_TOL).unwrap();
    let curve = np_curve(&pair.p, &pair.q).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, alpha) in [0.1, 0.2, 0.3].into_iter().enumerate() {
        let est = estimate_beta_at_alpha(&params, alpha, 1_000_000, 100 + i as u64).unwrap();
        let exact = curve.eval(alpha).unwrap();
        let z = (est.value - exact) / est.stderr;
        ok &= z.abs() <= 4.0;
        parts.push(format!("beta({alpha}) z={z:+.2}"));
    }
    let est = estimate_renyi_plugin(&params, 2.0, 1_000_000, 200).unwrap();
    let exact = renyi_direct(&pair.p, &pair.q, 2.0).unwrap().epsilon;
    let z = (est.value - exact) / est.stderr;
    ok &= z.abs() <= 4.0;
    parts.push(format!("renyi(2) {:.5} vs {exact:.5} z={z:+.2}", est.value));
    check(ok, parts.join(", "))
}

fn sgd_accounting() -> Outcome {
    let mut notes = Vec::new();
    let data = two_blobs(2000, 5, 2.0, 1);
    let cfg = SgdConfig {
        eta: 0.1,
        epochs: 50,
        blocks: 100,
        clip: 0.5,
        epsilon0: 1.0,
        dim: 5,
        seed: 11,
    };
    let mut clip_ok = true;
    let report = run_shuffled_sgd_observed(&data, &LogisticLoss, &cfg, 2.0, |g| {
        clip_ok &= g.iter().map(|x| x.abs()).sum::<f64>() <= cfg.clip * (1.0 + 1e-12);
    })
    .unwrap();
    let formula_ok = report.privacy.rdp.epsilon == 200.0 * E / 99.0;
    notes.push(format!("epsilon={} clip_ok={clip_ok}", report.privacy.rdp.epsilon));

    let reg: Vec<Example> = data
        .iter()
        .map(|ex| Example {
            label: 0.5 * ex.features[0] - ex.features[2],
            ..ex.clone()
        })
        .collect();
    let quiet = SgdConfig {
        epsilon0: f64::INFINITY,
        eta: 0.05,
        ..cfg
    };
    let noisy_free = run_shuffled_sgd(&reg, &SquaredLoss, &quiet, 2.0).unwrap();
    let size = reg.len() / quiet.blocks;
    let mut theta = vec![0.0; quiet.dim];
    for order in block_orders(quiet.blocks, quiet.epochs, quiet.seed) {
        for block in order {
            let mut sum = vec![0.0; quiet.dim];
            for ex in &reg[block * size..(block + 1) * size] {
                for (s, g) in sum.iter_mut().zip(l1_clip(&SquaredLoss.gradient(&theta, ex), quiet.clip)) {
                    *s += g;
                }
            }
            for (t, s) in theta.iter_mut().zip(&sum) {
                *t -= quiet.eta * s / quiet.blocks as f64;
            }
        }
    }
    let path_gap = noisy_free
        .final_params
        .iter()
        .zip(&theta)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    notes.push(format!("noise-free gap={path_gap:.1e}"));

    let target = PlanTarget::Rdp { lambda: 2.0, epsilon: 40.0 };
    let round_trip = match plan_epsilon0(&target, 50, 100).unwrap() {
        PlanOutcome::Feasible { epsilon0 } => {
            let r = run_shuffled_sgd(&data, &LogisticLoss, &SgdConfig { epsilon0, ..cfg }, 2.0).unwrap();
            (r.privacy.rdp.epsilon - 40.0).abs() <= 1e-12
        }
        PlanOutcome::Infeasible { .. } => false,
    };
    let infeasible = matches!(
        plan_epsilon0(&PlanTarget::Rdp { lambda: 2.0, epsilon: 0.016 }, 50, 100).unwrap(),
        PlanOutcome::Infeasible { .. }
    );
    notes.push(format!("round_trip={round_trip} budget_0.008_infeasible={infeasible}"));
    check(
        formula_ok && clip_ok && path_gap <= 1e-12 && round_trip && infeasible,
        notes.join(", "),
    )
}

fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_shuffle-rdp");
    let dir = std::env::temp_dir().join(format!("shuffle-rdp-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let csv = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let runs: Vec<Vec<String>> = vec![
        vec!["rdp", "--epsilon0", "1", "--n", "1000", "--lambda", "4"],
        vec!["rdp", "--epsilon0", "2", "--n", "500", "--lambda", "3.5", "--format", "csv"],
        vec!["compare", "--preset", "fig3"],
        vec!["tradeoff", "--epsilon0", "1", "--n", "200"],
        vec!["tradeoff", "--epsilon0", "1", "--n", "30", "--closed-form", "21"],
        vec!["simulate", "--n", "50", "--epsilon0", "1", "--alpha", "0.2", "--lambda", "2", "--samples", "100000", "--seed", "7"],
        vec!["sgd", "--epsilon0", "1", "--epochs", "5", "--seed", "3"],
        vec!["plan", "--rdp-slope", "0.5", "--epochs", "10", "--blocks", "1000"],
        vec!["plan", "--rdp-slope", "0.008", "--epochs", "50", "--blocks", "100"],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    let mut failures = Vec::new();
    for args in &runs {
        let a = Command::new(bin).args(args).output().unwrap();
        let b = Command::new(bin).args(args).output().unwrap();
        if a.stdout != b.stdout || a.status != b.status || a.stdout.is_empty() {
            failures.push(args.join(" "));
        }
    }
    let file_args = |path: &str| vec!["compare".to_string(), "--preset".into(), "fig2".into(), "-o".into(), path.to_string()];
    let (f1, f2) = (csv("a.csv"), csv("b.csv"));
    let s1 = Command::new(bin).args(file_args(&f1)).status().unwrap();
    let s2 = Command::new(bin).args(file_args(&f2)).status().unwrap();
    if !(s1.success() && s2.success() && std::fs::read(&f1).unwrap() == std::fs::read(&f2).unwrap()) {
        failures.push("compare --preset fig2 -o".into());
    }
    std::fs::remove_dir_all(&dir).ok();
    check(failures.is_empty(), format!("{} commands run twice, mismatches {failures:?}", runs.len() + 1))
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 8] = [
        ("two-route exactness", two_route_exactness),
        ("brute-force equivalence", brute_force_equivalence),
        ("sandwich between prior bounds", sandwich),
        ("closed-form spot values", closed_form_spots),
        ("symmetry and DP caps", symmetry_and_caps),
        ("Monte Carlo coverage", monte_carlo_coverage),
        ("SGD accounting", sgd_accounting),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        println!(
            "{verdict} [{}] {name} ({:.1}s): {}",
            i + 1,
            start.elapsed().as_secs_f64(),
            outcome.detail
        );
        failed += usize::from(!outcome.pass);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
