//! Acceptance suite. Every test prints one `[PASS]` or `[FAIL]` line; run with
//! `cargo test -p fsm-design --test acceptance -- --nocapture --test-threads 1`.

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use fsm_design::cli::{cmd_oracle, cmd_sweep};
use fsm_design::designs::{DesignKind, DesignSpec};
use fsm_design::dgp::{Covariates, ScenarioKind, ScenarioSpec};
use fsm_design::engine::{aggregate, run_designs, AggregateOptions, CurvePoint, Split};
use fsm_design::metrics::{asmd, diff_in_means, neyman_variance};
use fsm_design::selection::{select_min_mse, SelectionRule};
use fsm_design::study::{aggregate_cell, run_selection, SelectionRow, SweepOutput};
use fsm_design::RunConfig;

const BASELINE_N: [usize; 3] = [100, 300, 500];

fn report(name: &str, pass: bool, detail: impl AsRef<str>) {
    println!("[{}] {name}: {}", if pass { "PASS" } else { "FAIL" }, detail.as_ref());
    assert!(pass, "{name}: {}", detail.as_ref());
}

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

struct Study {
    cfg: RunConfig,
    sweep: SweepOutput,
    selection: Vec<SelectionRow>,
    elapsed: Duration,
}

fn study() -> &'static Study {
    static STUDY: OnceLock<Study> = OnceLock::new();
    STUDY.get_or_init(|| {
        let cfg = RunConfig {
            output_dir: scratch("default"),
            ..RunConfig::default()
        };
        let start = Instant::now();
        let sweep = cmd_sweep(&cfg).unwrap();
        let elapsed = start.elapsed();
        let selection = run_selection(&cfg, &sweep).unwrap();
        Study { cfg, sweep, selection, elapsed }
    })
}

fn baseline_point(n: usize, kind: DesignKind, eps: Option<f64>, split: Split) -> &'static CurvePoint {
    study()
        .sweep
        .cell(ScenarioKind::BaselineNormal, n)
        .and_then(|c| c.curve(kind, eps, split))
        .unwrap_or_else(|| panic!("missing curve point n={n} {kind:?} {eps:?} {split:?}"))
}

fn show(v: Option<f64>) -> String {
    v.map_or("infeasible".into(), |x| format!("{x:.4}"))
}

#[test]
fn oracle_engine_agreement() {
    let cfg = RunConfig {
        output_dir: scratch("oracle"),
        ..RunConfig::default()
    };
    let start = Instant::now();
    let out = cmd_oracle(&cfg);
    let secs = start.elapsed().as_secs_f64();
    let detail = match &out {
        Ok(o) => {
            let worst = o
                .mc
                .iter()
                .zip(&o.exact.points)
                .map(|(m, e)| {
                    let za = (m.accept_prob - e.accept_prob).abs() / m.accept_prob_se.max(f64::MIN_POSITIVE);
                    let zv = match (m.cond_var, m.cond_var_se, e.cond_var) {
                        (Some(v), Some(se), Some(x)) if se > 0.0 => (v - x).abs() / se,
                        _ => 0.0,
                    };
                    za.max(zv)
                })
                .fold(0.0, f64::max);
            format!(
                "{} grid points, {} draws each, max |z| = {worst:.2}, {secs:.1}s",
                o.mc.len(),
                cfg.oracle.draws
            )
        }
        Err(e) => e.to_string(),
    };
    let pass = out.as_ref().is_ok_and(|o| o.agreement()) && cfg.oracle.draws >= 100_000 && secs < 30.0;
    report("oracle-engine agreement", pass, detail);
}

#[test]
fn metric_unit_suite() {
    fn rel(a: f64, b: f64) -> f64 {
        if b == 0.0 {
            a.abs()
        } else {
            ((a - b) / b).abs()
        }
    }
    let x = Covariates::from_columns(vec![vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
    let y = [3.0, 5.0, 1.0, 2.0];
    let alt = [true, false, true, false];
    let doubled: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
    let cases = [
        ("asmd separated", asmd(&x, &[true, true, false, false]).unwrap(), 2.0 / 0.5f64.sqrt()),
        ("asmd balanced", asmd(&x, &[true, false, false, true]).unwrap(), 0.0),
        ("asmd complement", asmd(&x, &[false, false, true, true]).unwrap(), 2.0 / 0.5f64.sqrt()),
        ("diff in means", diff_in_means(&y, &alt).unwrap(), -1.5),
        ("diff in means unit", diff_in_means(&[1.0, 1.0, 0.0, 0.0], &[true, true, false, false]).unwrap(), 1.0),
        ("diff in means constant", diff_in_means(&[4.2; 4], &alt).unwrap(), 0.0),
        ("neyman", neyman_variance(&y, &alt).unwrap(), 3.25),
        ("neyman scaled", neyman_variance(&doubled, &alt).unwrap(), 13.0),
    ];
    let worst = cases.iter().map(|(_, got, want)| rel(*got, *want)).fold(0.0, f64::max);
    let errors = [
        asmd(&Covariates::from_columns(vec![vec![2.0; 4]]).unwrap(), &[true, true, false, false]).is_err(),
        asmd(&x, &[true, false, false, false]).is_err(),
        diff_in_means(&[1.0, 2.0], &[false, false]).is_err(),
        neyman_variance(&[1.0, 2.0, 3.0], &[true, false, false]).is_err(),
    ];
    let pass = worst < 1e-12 && errors.iter().all(|&e| e);
    report(
        "metric unit suite",
        pass,
        format!("{} values, max relative error {worst:.1e}, {} error cases", cases.len(), errors.len()),
    );
}

#[test]
fn monotonicity_suite() {
    let grid = RunConfig::default().epsilons;
    let designs: Vec<DesignSpec> = grid.epsilons().iter().map(|&e| DesignSpec::fsm(e)).collect();
    let mut violations = Vec::new();
    for pool in 0..100u64 {
        let recs = run_designs(&ScenarioSpec::baseline(), 100, 5, &designs, 20, pool).unwrap();
        let points: Vec<CurvePoint> = recs
            .iter()
            .map(|r| {
                aggregate(
                    r,
                    None,
                    &AggregateOptions {
                        bootstrap_b: 2,
                        ..AggregateOptions::default()
                    },
                )
                .unwrap()
            })
            .collect();
        for w in 0..designs.len() - 1 {
            let (lo, hi) = (&points[w], &points[w + 1]);
            if hi.accept_prob_single < lo.accept_prob_single {
                violations.push(format!("pool {pool} accept at eps {:?}", hi.epsilon));
            }
            if let (Some(a), Some(b)) = (lo.asmd_mean, hi.asmd_mean) {
                if b < a * (1.0 - 1e-12) {
                    violations.push(format!("pool {pool} asmd at eps {:?}", hi.epsilon));
                }
            }
            for (x, y) in recs[w].iter().zip(&recs[w + 1]) {
                if y.attempts > x.attempts {
                    violations.push(format!("pool {pool} attempts rep {}", x.replication_index));
                }
            }
        }
    }
    report(
        "monotonicity suite",
        violations.is_empty(),
        format!(
            "100 pools x {} thresholds, {} violations {}",
            designs.len(),
            violations.len(),
            violations.first().cloned().unwrap_or_default()
        ),
    );
}

#[test]
fn unbiasedness() {
    let mut checked = 0;
    let mut ok = 0;
    for p in study().sweep.cells.iter().flat_map(|c| &c.curves) {
        if p.split != Split::All || p.r_effective < 50 {
            continue;
        }
        let (Some(bias), Some(var)) = (p.bias, p.variance) else { continue };
        checked += 1;
        if bias.abs() <= 3.0 * (var / p.r_effective as f64).sqrt() {
            ok += 1;
        }
    }
    let frac = ok as f64 / checked.max(1) as f64;
    report(
        "unbiasedness",
        checked > 0 && frac >= 0.95,
        format!("{ok}/{checked} cells within 3 SE ({:.1}%)", 100.0 * frac),
    );
}

#[test]
fn trend_a_small_feasible_eps_beats_cr() {
    let mut pass = true;
    let mut parts = Vec::new();
    for n in BASELINE_N {
        let cr = baseline_point(n, DesignKind::Fsm, Some(0.5), Split::Test).mse;
        let small = study()
            .cfg
            .epsilons
            .epsilons()
            .iter()
            .map(|&e| baseline_point(n, DesignKind::Fsm, Some(e), Split::Test))
            .find(|p| p.is_feasible());
        let ok = matches!((small.and_then(|p| p.mse), cr), (Some(s), Some(c)) if s < c);
        pass &= ok;
        parts.push(format!(
            "N={n} eps={} mse={} vs {}",
            show(small.and_then(|p| p.epsilon)),
            show(small.and_then(|p| p.mse)),
            show(cr)
        ));
    }
    report("trend (a) test MSE below CR proxy", pass, parts.join("; "));
}

#[test]
fn trend_b_vrr_at_0_006() {
    let vrr = baseline_point(300, DesignKind::Fsm, Some(0.006), Split::All).vrr;
    let pass = vrr.is_some_and(|v| (0.65..=0.90).contains(&v));
    report("trend (b) VRR N=300 eps=0.006 in [0.65, 0.90]", pass, format!("vrr={}", show(vrr)));
}

#[test]
fn trend_c_vrr_at_0_02() {
    let mut pass = true;
    let mut parts = Vec::new();
    for n in BASELINE_N {
        let vrr = baseline_point(n, DesignKind::Fsm, Some(0.02), Split::All).vrr;
        pass &= vrr.is_some_and(|v| (0.78..=0.95).contains(&v));
        parts.push(format!("N={n} vrr={}", show(vrr)));
    }
    report("trend (c) VRR eps=0.02 in [0.78, 0.95]", pass, parts.join("; "));
}

#[test]
fn trend_d_tiny_eps_rarely_accepted() {
    let mut worst = (0.0, 0, 0.0);
    for n in BASELINE_N {
        for &e in study().cfg.epsilons.epsilons().iter().filter(|&&e| e <= 0.008) {
            let a = baseline_point(n, DesignKind::Fsm, Some(e), Split::Test).accept_within_attempts;
            if a >= worst.0 {
                worst = (a, n, e);
            }
        }
    }
    report(
        "trend (d) within-80 acceptance below 0.01 for eps <= 0.008",
        worst.0 < 0.01,
        format!("max {:.4} at N={} eps={}", worst.0, worst.1, worst.2),
    );
}

#[test]
fn trend_e_moderate_eps_acceptance() {
    let mut pass = true;
    let mut parts = Vec::new();
    for &e in study().cfg.epsilons.epsilons().iter().filter(|e| (0.015..=0.02).contains(*e)) {
        let a = baseline_point(300, DesignKind::Fsm, Some(e), Split::Test).accept_within_attempts;
        pass &= (0.02..=0.40).contains(&a);
        parts.push(format!("eps={e} accept={a:.4}"));
    }
    pass &= !parts.is_empty();
    report("trend (e) N=300 within-80 acceptance in [0.02, 0.40]", pass, parts.join("; "));
}

#[test]
fn sweep_runtime() {
    let secs = study().elapsed.as_secs_f64();
    let threads = rayon::current_num_threads();
    report(
        "trend runtime under 10 minutes",
        secs < 600.0,
        format!("default sweep {secs:.1}s on {threads} threads"),
    );
}

fn selected(n: usize, rule: impl Fn(&SelectionRule) -> bool) -> f64 {
    study()
        .selection
        .iter()
        .find(|r| r.scenario == ScenarioKind::BaselineNormal && r.n == n && rule(&r.result.rule))
        .expect("selection row")
        .result
        .epsilon_star
}

#[test]
fn selection_min_mse_small() {
    let stars: Vec<(usize, f64)> = BASELINE_N
        .iter()
        .map(|&n| (n, selected(n, |r| *r == SelectionRule::MinMse)))
        .collect();
    report(
        "selection MinMSE eps* <= 0.02",
        stars.iter().all(|&(_, e)| e <= 0.02),
        stars.iter().map(|(n, e)| format!("N={n} eps*={e}")).collect::<Vec<_>>().join("; "),
    );
}

#[test]
fn selection_constraint_raises_eps() {
    let pairs: Vec<(usize, f64, f64)> = BASELINE_N
        .iter()
        .map(|&n| {
            let free = selected(n, |r| *r == SelectionRule::MinMse);
            let constrained = selected(n, |r| r.min_accept() == Some(0.05));
            (n, free, constrained)
        })
        .collect();
    report(
        "selection constrained eps* above MinMSE eps*",
        pairs.iter().all(|&(_, f, c)| c > f),
        pairs
            .iter()
            .map(|(n, f, c)| format!("N={n} {f} -> {c}"))
            .collect::<Vec<_>>()
            .join("; "),
    );
}

#[test]
fn selection_no_leakage() {
    let s = study();
    let mut changed = Vec::new();
    for cell in s.sweep.cells.iter().filter(|c| c.scenario.kind == ScenarioKind::BaselineNormal) {
        let mut records = cell.records.clone();
        for r in records.iter_mut().flatten() {
            if !cell.plan.is_train(r.replication_index) {
                r.tau_hat = r.tau_hat.map(|t| -3.0 * t + 17.0);
                r.neyman_var = r.neyman_var.map(|v| v * 9.0);
            }
        }
        let curves = aggregate_cell(&cell.plan, &cell.designs, &records, 50, 1).unwrap();
        let train: Vec<CurvePoint> = curves
            .into_iter()
            .filter(|c| c.design == DesignKind::Fsm && c.split == Split::Train)
            .collect();
        let before = select_min_mse(&cell.fsm_curve(Split::Train), &s.cfg.band).unwrap().epsilon_star;
        let after = select_min_mse(&train, &s.cfg.band).unwrap().epsilon_star;
        if before != after {
            changed.push(cell.n);
        }
    }
    report(
        "selection no leakage",
        changed.is_empty(),
        format!("test split perturbed in {} baseline cells, eps* changed in {:?}", BASELINE_N.len(), changed),
    );
}

#[test]
fn determinism_across_workers() {
    let cfg = RunConfig {
        output_dir: scratch("determinism"),
        ..RunConfig::default()
    };
    let files = ["records.csv", "curves.csv", "run-manifest.json"];
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| cmd_sweep(&cfg).unwrap());
        files.map(|f| std::fs::read(cfg.output_dir.join(f)).unwrap())
    };
    let one = run(1);
    let eight = run(8);
    let differing: Vec<&str> = files.iter().zip(one.iter().zip(&eight)).filter(|(_, (a, b))| a != b).map(|(f, _)| *f).collect();
    report(
        "determinism worker counts 1 and 8",
        differing.is_empty(),
        format!("{} files compared, differing: {:?}", files.len(), differing),
    );
}
