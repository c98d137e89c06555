//! Orchestration of sweeps, selection and oracle validation, plus the CSV
//! tables the command line writes.

use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::designs::{DesignKind, DesignSpec};
use crate::dgp::{ScenarioKind, ScenarioSpec};
use crate::engine::{aggregate, run_designs, run_injected, AggregateOptions, CurvePoint, ReplicationRecord, Split};
use crate::error::{Error, Result};
use crate::oracle::{self, ExactCurve, LemmaReport};
use crate::selection::{self, split, SelectionResult, SplitPlan};
use crate::table::{fmt_num, fmt_opt, Table};

/// Built-in oracle instance: `n = 8`, `p = 2`, baseline scenario.
pub const ORACLE_FIXTURE: &str = include_str!("../fixtures/oracle_n8_p2_sample.txt");
/// Frozen exact curve of [`ORACLE_FIXTURE`] over [`ORACLE_FIXTURE_GRID`].
pub const ORACLE_GOLDEN: &str = include_str!("../fixtures/oracle_n8_p2_exact.txt");
pub const ORACLE_FIXTURE_GRID: [f64; 5] = [0.2, 0.4, 0.6, 1.0, 3.0];

const BOOTSTRAP_SALT: u64 = 0xb007;

pub const CURVE_COLUMNS: [&str; 19] = [
    "scenario",
    "n",
    "epsilon",
    "split",
    "design",
    "asmd_mean",
    "asmd_se",
    "bias",
    "variance",
    "mse",
    "mse_se",
    "accept_prob_single",
    "accept_prob_single_se",
    "accept_within_attempts",
    "exhaustion_rate",
    "avg_neyman_var",
    "vrr",
    "vrr_se",
    "r_effective",
];

pub const RECORD_COLUMNS: [&str; 11] = [
    "scenario",
    "n",
    "design",
    "epsilon",
    "replication_index",
    "split",
    "status",
    "attempts",
    "achieved_asmd",
    "tau_hat",
    "neyman_var",
];

pub const SELECTION_COLUMNS: [&str; 12] = [
    "scenario",
    "n",
    "rule",
    "min_accept",
    "epsilon_star",
    "train_mse",
    "test_mse",
    "test_mse_se",
    "test_asmd",
    "test_accept_within_attempts",
    "feasible_band_lo",
    "feasible_band_hi",
];

pub const ORACLE_COLUMNS: [&str; 15] = [
    "epsilon",
    "accepted",
    "accept_prob",
    "cond_mean",
    "cond_var",
    "cond_mse",
    "reference_var",
    "reference_gap",
    "mc_accept_prob",
    "mc_accept_prob_se",
    "mc_cond_var",
    "mc_cond_var_se",
    "mc_draws",
    "accept_agree",
    "var_agree",
];

/// All records and curve points of one `(scenario, n)` cell.
#[derive(Debug, Clone)]
pub struct CellOutput {
    pub scenario: ScenarioSpec,
    pub n: usize,
    pub plan: SplitPlan,
    pub designs: Vec<DesignSpec>,
    /// One record list per design, in `designs` order.
    pub records: Vec<Vec<ReplicationRecord>>,
    /// Ordered by design, then split (train, test, all).
    pub curves: Vec<CurvePoint>,
}

impl CellOutput {
    pub fn records_for(&self, design: &DesignSpec) -> Option<&[ReplicationRecord]> {
        self.designs.iter().position(|d| d == design).map(|i| self.records[i].as_slice())
    }

    pub fn curve(&self, kind: DesignKind, epsilon: Option<f64>, split: Split) -> Option<&CurvePoint> {
        self.curves
            .iter()
            .find(|c| c.design == kind && c.epsilon == epsilon && c.split == split)
    }

    pub fn fsm_curve(&self, split: Split) -> Vec<CurvePoint> {
        self.curves
            .iter()
            .filter(|c| c.design == DesignKind::Fsm && c.split == split)
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub cells: Vec<CellOutput>,
}

pub const SPLITS: [Split; 3] = [Split::Train, Split::Test, Split::All];

fn split_records(plan: &SplitPlan, records: &[ReplicationRecord], s: Split) -> Vec<ReplicationRecord> {
    match s {
        Split::Train => plan.train(records),
        Split::Test => plan.test(records),
        Split::All => records.to_vec(),
    }
}

/// Aggregates every design of a cell on every split, using the cell's CR
/// records on the same split as the VRR baseline.
pub fn aggregate_cell(
    plan: &SplitPlan,
    designs: &[DesignSpec],
    records: &[Vec<ReplicationRecord>],
    bootstrap_b: usize,
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    let cr = designs.iter().position(|d| d.kind == DesignKind::Cr);
    let baselines: Vec<Option<Vec<ReplicationRecord>>> = SPLITS
        .iter()
        .map(|&s| cr.map(|i| split_records(plan, &records[i], s)))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..designs.len()).flat_map(|d| (0..SPLITS.len()).map(move |s| (d, s))).collect();
    jobs.par_iter()
        .map(|&(d, s)| {
            let subset = split_records(plan, &records[d], SPLITS[s]);
            let opts = AggregateOptions {
                bootstrap_b,
                seed,
                split: SPLITS[s],
            };
            aggregate(&subset, baselines[s].as_deref(), &opts)
        })
        .collect()
}

pub fn run_sweep(cfg: &RunConfig) -> Result<SweepOutput> {
    cfg.validate()?;
    let designs = cfg.designs();
    let plan = split(cfg.replications, cfg.split_seed)?;
    let cells = cfg
        .cells()
        .into_iter()
        .map(|(scenario, n)| {
            let records = run_designs(&scenario, n, cfg.p, &designs, cfg.replications, cfg.master_seed)?;
            let curves = aggregate_cell(
                &plan,
                &designs,
                &records,
                cfg.bootstrap_b,
                cfg.master_seed ^ BOOTSTRAP_SALT,
            )?;
            Ok(CellOutput {
                scenario,
                n,
                plan: plan.clone(),
                designs: designs.clone(),
                records,
                curves,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepOutput { cells })
}

impl SweepOutput {
    pub fn cell(&self, kind: ScenarioKind, n: usize) -> Option<&CellOutput> {
        self.cells.iter().find(|c| c.scenario.kind == kind && c.n == n)
    }

    pub fn records_table(&self) -> Table {
        let mut t = Table::new(&RECORD_COLUMNS);
        for cell in &self.cells {
            for recs in &cell.records {
                for r in recs {
                    let split = if cell.plan.is_train(r.replication_index) { Split::Train } else { Split::Test };
                    t.push(vec![
                        cell.scenario.kind.name().into(),
                        r.n.to_string(),
                        r.design.kind.name().into(),
                        fmt_opt(r.epsilon()),
                        r.replication_index.to_string(),
                        split.name().into(),
                        match r.status {
                            crate::engine::ReplicationStatus::Accepted => "accepted".into(),
                            crate::engine::ReplicationStatus::Exhausted => "exhausted".into(),
                        },
                        r.attempts.to_string(),
                        fmt_num(r.achieved_asmd),
                        fmt_opt(r.tau_hat),
                        fmt_opt(r.neyman_var),
                    ]);
                }
            }
        }
        t
    }

    pub fn curves_table(&self) -> Table {
        let mut t = Table::new(&CURVE_COLUMNS);
        for c in self.cells.iter().flat_map(|cell| &cell.curves) {
            t.push(vec![
                c.scenario.name().into(),
                c.n.to_string(),
                fmt_opt(c.epsilon),
                c.split.name().into(),
                c.design.name().into(),
                fmt_opt(c.asmd_mean),
                fmt_opt(c.asmd_se),
                fmt_opt(c.bias),
                fmt_opt(c.variance),
                fmt_opt(c.mse),
                fmt_opt(c.mse_se),
                fmt_num(c.accept_prob_single),
                fmt_opt(c.accept_prob_single_se),
                fmt_num(c.accept_within_attempts),
                fmt_num(c.exhaustion_rate),
                fmt_opt(c.avg_neyman_var),
                fmt_opt(c.vrr),
                fmt_opt(c.vrr_se),
                c.r_effective.to_string(),
            ]);
        }
        t
    }
}

#[derive(Debug, Clone)]
pub struct SelectionRow {
    pub scenario: ScenarioKind,
    pub n: usize,
    pub result: SelectionResult,
}

/// Selects on each cell's training curve and attaches the test-split point at the selected threshold.
pub fn run_selection(cfg: &RunConfig, sweep: &SweepOutput) -> Result<Vec<SelectionRow>> {
    let mut rows = Vec::new();
    for cell in &sweep.cells {
        let context = format!("scenario={}, n={}", cell.scenario.kind, cell.n);
        let train = cell.fsm_curve(Split::Train);
        let mut results = vec![selection::select_min_mse(&train, &cfg.band).map_err(|e| e.in_cell(&context))?];
        for &m in &cfg.min_accept {
            results.push(
                selection::select_constrained(&train, m, cfg.acceptance_measure, &cfg.band)
                    .map_err(|e| e.in_cell(&context))?,
            );
        }
        for mut result in results {
            result.test_curve_point = cell
                .curve(DesignKind::Fsm, Some(result.epsilon_star), Split::Test)
                .cloned();
            rows.push(SelectionRow {
                scenario: cell.scenario.kind,
                n: cell.n,
                result,
            });
        }
    }
    Ok(rows)
}

pub fn selection_table(rows: &[SelectionRow]) -> Table {
    let mut t = Table::new(&SELECTION_COLUMNS);
    for row in rows {
        let r = &row.result;
        let test = r.test_curve_point.as_ref();
        t.push(vec![
            row.scenario.name().into(),
            row.n.to_string(),
            r.rule.name().into(),
            fmt_opt(r.rule.min_accept()),
            fmt_num(r.epsilon_star),
            fmt_num(r.train_mse),
            fmt_opt(test.and_then(|p| p.mse)),
            fmt_opt(test.and_then(|p| p.mse_se)),
            fmt_opt(test.and_then(|p| p.asmd_mean)),
            fmt_opt(test.map(|p| p.accept_within_attempts)),
            fmt_opt(r.feasible_range.map(|b| b.0)),
            fmt_opt(r.feasible_range.map(|b| b.1)),
        ]);
    }
    t
}

/// Monte Carlo estimates on the injected oracle sample at one threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct McPoint {
    pub epsilon: f64,
    pub draws: usize,
    pub accept_prob: f64,
    /// Binomial standard error at the exact acceptance probability.
    pub accept_prob_se: f64,
    pub cond_var: Option<f64>,
    /// Large-sample standard error of the sample variance, `sqrt((m4 - s^4) / k)`.
    pub cond_var_se: Option<f64>,
    pub accept_agree: bool,
    pub var_agree: bool,
}

#[derive(Debug, Clone)]
pub struct OracleOutput {
    pub exact: ExactCurve,
    pub report: LemmaReport,
    pub mc: Vec<McPoint>,
}

impl OracleOutput {
    pub fn agreement(&self) -> bool {
        self.mc.iter().all(|m| m.accept_agree && m.var_agree)
    }
}

pub fn load_oracle_sample(cfg: &RunConfig) -> Result<crate::dgp::Sample> {
    match &cfg.oracle.fixture {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
                path: path.display().to_string(),
                source,
            })?;
            oracle::fixture::read_sample(&text)
        }
        None => oracle::fixture::read_sample(ORACLE_FIXTURE),
    }
}

/// Exact curve, lemma diagnostics and Monte Carlo agreement on the fixture sample.
pub fn run_oracle(cfg: &RunConfig) -> Result<OracleOutput> {
    let sample = load_oracle_sample(cfg)?;
    let exact = oracle::exact_curve(&sample, &cfg.oracle.grid)?;
    let report = oracle::lemma_check(&exact);
    let designs: Vec<DesignSpec> = cfg
        .oracle
        .grid
        .iter()
        .map(|&e| DesignSpec::fsm(e).with_max_attempts(1))
        .collect();
    let draws = cfg.oracle.draws;
    let runs = run_injected(&sample, &designs, draws, cfg.oracle.seed)?;
    let z = cfg.oracle.z;
    let mc = exact
        .points
        .iter()
        .zip(&runs)
        .map(|(point, recs)| {
            let taus: Vec<f64> = recs.iter().filter_map(|r| r.tau_hat).collect();
            let k = taus.len();
            let accept_prob = k as f64 / draws as f64;
            let accept_prob_se = (point.accept_prob * (1.0 - point.accept_prob) / draws as f64).sqrt();
            let accept_agree = (accept_prob - point.accept_prob).abs() <= z * accept_prob_se;
            let (cond_var, cond_var_se) = if k >= 2 {
                let m = taus.iter().sum::<f64>() / k as f64;
                let s2 = taus.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (k - 1) as f64;
                let m4 = taus.iter().map(|x| (x - m).powi(4)).sum::<f64>() / k as f64;
                (Some(s2), Some(((m4 - s2 * s2).max(0.0) / k as f64).sqrt()))
            } else {
                (None, None)
            };
            let var_agree = match (point.cond_var, cond_var, cond_var_se) {
                (Some(exact_v), Some(v), Some(se)) => (v - exact_v).abs() <= z * se,
                (None, _, _) => k == 0,
                _ => false,
            };
            McPoint {
                epsilon: point.epsilon,
                draws,
                accept_prob,
                accept_prob_se,
                cond_var,
                cond_var_se,
                accept_agree,
                var_agree,
            }
        })
        .collect();
    Ok(OracleOutput { exact, report, mc })
}

pub fn oracle_table(out: &OracleOutput) -> Table {
    let mut t = Table::new(&ORACLE_COLUMNS);
    for (p, m) in out.exact.points.iter().zip(&out.mc) {
        let gap = p.cond_var.zip(p.reference_var).map(|(v, r)| v - r);
        t.push(vec![
            fmt_num(p.epsilon),
            p.accepted.to_string(),
            fmt_num(p.accept_prob),
            fmt_opt(p.cond_mean),
            fmt_opt(p.cond_var),
            fmt_opt(p.cond_mse),
            fmt_opt(p.reference_var),
            fmt_opt(gap),
            fmt_num(m.accept_prob),
            fmt_num(m.accept_prob_se),
            fmt_opt(m.cond_var),
            fmt_opt(m.cond_var_se),
            m.draws.to_string(),
            m.accept_agree.to_string(),
            m.var_agree.to_string(),
        ]);
    }
    t
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

pub fn oracle_summary(out: &OracleOutput) -> String {
    let r = &out.report;
    let list = |v: &[f64]| v.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(" ");
    let mut s = String::new();
    s.push_str(&format!("assignments enumerated: {}\n", out.exact.assignments));
    s.push_str(&format!("feasible grid points: {}\n", r.feasible_points));
    s.push_str(&format!("{} acceptance probability nondecreasing\n", verdict(r.accept_monotone)));
    s.push_str(&format!(
        "{} oracle-engine agreement ({} draws per threshold)\n",
        verdict(out.agreement()),
        out.mc.first().map_or(0, |m| m.draws)
    ));
    s.push_str(&format!("diagnostic: acceptance concave on grid: {}\n", r.accept_concave));
    s.push_str(&format!(
        "diagnostic: conditional variance nonincreasing: {} (increases at [{}])\n",
        r.variance_nonincreasing,
        list(&r.variance_increases)
    ));
    s.push_str(&format!(
        "diagnostic: exact MSE discretely convex: {} (violations at [{}])\n",
        r.mse_convex(),
        list(&r.convexity_violations)
    ));
    for (eps, gap) in &r.reference_gaps {
        s.push_str(&format!("diagnostic: cond_var - Var/p at {eps}: {}\n", fmt_num(*gap)));
    }
    s
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    code_version: &'a str,
    schema_version: u32,
    master_seed: u64,
    split_seed: u64,
    oracle_seed: u64,
    config: &'a RunConfig,
}

/// Config echo with code version and seeds. Contains nothing that varies between identical runs.
pub fn manifest(cfg: &RunConfig, command: &str) -> String {
    let m = Manifest {
        command,
        code_version: env!("CARGO_PKG_VERSION"),
        schema_version: crate::table::SCHEMA_VERSION,
        master_seed: cfg.master_seed,
        split_seed: cfg.split_seed,
        oracle_seed: cfg.oracle.seed,
        config: cfg,
    };
    let mut s = serde_json::to_string_pretty(&m).expect("config serializes");
    s.push('\n');
    s
}
