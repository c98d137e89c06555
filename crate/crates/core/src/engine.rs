//! Replication runner, per-cell aggregation and bootstrap standard errors.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::designs::{AssignmentOutcome, CandidatePool, DesignKind, DesignSpec};
use crate::dgp::{generate_sample, Sample, ScenarioKind, ScenarioSpec};
use crate::error::{Error, Result};
use crate::metrics;
use crate::seed::{mix, replication_seed, stream_rng, ASSIGNMENT_STREAM};

/// Scenario identifier used when a fixed sample is injected instead of simulated.
pub const INJECTED_SCENARIO_ID: u64 = 0xff;

/// Sorted grid of FSM thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GridSpec(Vec<f64>);

impl GridSpec {
    pub fn new(epsilons: Vec<f64>) -> Result<Self> {
        if epsilons.is_empty() {
            return Err(Error::Config("epsilon grid is empty".into()));
        }
        if let Some(bad) = epsilons.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(Error::Config(format!("epsilon grid value {bad} must be positive and finite")));
        }
        if epsilons.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("epsilon grid must be strictly increasing".into()));
        }
        Ok(GridSpec(epsilons))
    }

    pub fn epsilons(&self) -> &[f64] {
        &self.0
    }
}

impl Default for GridSpec {
    /// 0.001 to 0.010 in steps of 0.001, then a coarser tail up to 0.5.
    fn default() -> Self {
        let fine = (1..=10).map(|k| k as f64 / 1000.0);
        let coarse = [0.015, 0.02, 0.03, 0.05, 0.075, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5];
        GridSpec(fine.chain(coarse).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplicationStatus {
    Accepted,
    Exhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub replication_index: usize,
    pub scenario: ScenarioSpec,
    pub n: usize,
    pub design: DesignSpec,
    pub status: ReplicationStatus,
    /// Candidate draws consumed by this replication.
    pub attempts: usize,
    /// ASMD of the accepted assignment, or of the best candidate when exhausted.
    pub achieved_asmd: f64,
    /// Present iff the replication was accepted.
    pub tau_hat: Option<f64>,
    pub neyman_var: Option<f64>,
}

impl ReplicationRecord {
    pub fn epsilon(&self) -> Option<f64> {
        self.design.reported_threshold()
    }

    pub fn is_accepted(&self) -> bool {
        self.status == ReplicationStatus::Accepted
    }
}

fn record_from(
    sample: &Sample,
    r: usize,
    design: &DesignSpec,
    outcome: &AssignmentOutcome,
) -> Result<ReplicationRecord> {
    let a = outcome.assignment();
    let (status, tau_hat, neyman_var) = match outcome {
        AssignmentOutcome::Accepted(_) => {
            let y = sample.observed(&a.t);
            (
                ReplicationStatus::Accepted,
                Some(metrics::diff_in_means(&y, &a.t)?),
                Some(metrics::neyman_variance(&y, &a.t)?),
            )
        }
        AssignmentOutcome::Exhausted { .. } => (ReplicationStatus::Exhausted, None, None),
    };
    Ok(ReplicationRecord {
        replication_index: r,
        scenario: sample.scenario,
        n: sample.n(),
        design: *design,
        status,
        attempts: a.attempts,
        achieved_asmd: a.achieved_asmd,
        tau_hat,
        neyman_var,
    })
}

/// Resolves every design against one sample. Designs with the same
/// allocation share a candidate stream.
fn resolve_designs(
    sample: &Sample,
    r: usize,
    assignment_seed: u64,
    designs: &[DesignSpec],
) -> Result<Vec<ReplicationRecord>> {
    let mut pools: Vec<CandidatePool<'_, _>> = Vec::new();
    designs
        .iter()
        .map(|design| {
            let pool = match pools.iter().position(|p| p.allocation() == design.allocation) {
                Some(i) => &mut pools[i],
                None => {
                    pools.push(CandidatePool::new(
                        &sample.x,
                        design.allocation,
                        stream_rng(assignment_seed, ASSIGNMENT_STREAM),
                    ));
                    pools.last_mut().expect("just pushed")
                }
            };
            let outcome = pool.resolve(design)?;
            record_from(sample, r, design, &outcome)
        })
        .collect()
}

fn cell_context(kind: ScenarioKind, n: usize, design: Option<&DesignSpec>, r: usize) -> String {
    match design.and_then(|d| d.reported_threshold()) {
        Some(eps) => format!("scenario={kind}, n={n}, epsilon={eps}, r={r}"),
        None => format!("scenario={kind}, n={n}, r={r}"),
    }
}

fn transpose(rows: Vec<Vec<ReplicationRecord>>, k: usize) -> Vec<Vec<ReplicationRecord>> {
    let mut out: Vec<Vec<ReplicationRecord>> = (0..k).map(|_| Vec::with_capacity(rows.len())).collect();
    for row in rows {
        for (d, rec) in row.into_iter().enumerate() {
            out[d].push(rec);
        }
    }
    out
}

/// Runs `replications` replications of the `(scenario, n)` cell under every
/// design. Returns one record list per design, each ordered by replication
/// index. Designs see identical samples and identical candidate streams.
pub fn run_designs(
    scenario: &ScenarioSpec,
    n: usize,
    p: usize,
    designs: &[DesignSpec],
    replications: usize,
    master_seed: u64,
) -> Result<Vec<Vec<ReplicationRecord>>> {
    if replications < 2 {
        return Err(Error::Config(format!("replications = {replications} must be at least 2")));
    }
    for d in designs {
        d.validate()?;
    }
    let rows = (0..replications)
        .into_par_iter()
        .map(|r| {
            let seed = replication_seed(master_seed, scenario.kind.id(), n, r);
            let sample = generate_sample(scenario, n, p, seed)
                .map_err(|e| e.in_cell(cell_context(scenario.kind, n, None, r)))?;
            resolve_designs(&sample, r, seed, designs).map_err(|e| {
                let design = designs.first();
                e.in_cell(cell_context(scenario.kind, n, design, r))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(transpose(rows, designs.len()))
}

/// Runs `replications` replications of one design.
pub fn run_cell(
    scenario: &ScenarioSpec,
    n: usize,
    p: usize,
    design: &DesignSpec,
    replications: usize,
    master_seed: u64,
) -> Result<Vec<ReplicationRecord>> {
    Ok(run_designs(scenario, n, p, std::slice::from_ref(design), replications, master_seed)?
        .pop()
        .expect("one design"))
}

/// Like [`run_designs`], but every replication reuses the given sample; only
/// the assignment is random.
pub fn run_injected(
    sample: &Sample,
    designs: &[DesignSpec],
    replications: usize,
    master_seed: u64,
) -> Result<Vec<Vec<ReplicationRecord>>> {
    if replications < 2 {
        return Err(Error::Config(format!("replications = {replications} must be at least 2")));
    }
    let rows = (0..replications)
        .into_par_iter()
        .map(|r| {
            let seed = replication_seed(master_seed, INJECTED_SCENARIO_ID, sample.n(), r);
            resolve_designs(sample, r, seed, designs)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(transpose(rows, designs.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    All,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::All => "all",
        }
    }

    fn id(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
            Split::All => 2,
        }
    }
}

/// Aggregated metrics at one (scenario, n, design, threshold, split) cell.
///
/// Fields derived from accepted replications are `None` when fewer than two
/// replications were accepted.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub scenario: ScenarioKind,
    pub n: usize,
    pub design: DesignKind,
    pub epsilon: Option<f64>,
    pub split: Split,
    pub r_total: usize,
    pub r_effective: usize,
    pub asmd_mean: Option<f64>,
    pub asmd_se: Option<f64>,
    pub bias: Option<f64>,
    pub variance: Option<f64>,
    pub mse: Option<f64>,
    pub mse_se: Option<f64>,
    /// Accepted candidates over all candidate draws.
    pub accept_prob_single: f64,
    pub accept_prob_single_se: Option<f64>,
    /// Fraction of replications that found an acceptable draw within `max_attempts`.
    pub accept_within_attempts: f64,
    pub exhaustion_rate: f64,
    pub avg_neyman_var: Option<f64>,
    pub vrr: Option<f64>,
    pub vrr_se: Option<f64>,
}

impl CurvePoint {
    pub fn is_feasible(&self) -> bool {
        self.mse.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Mse,
    AsmdMean,
    AcceptProb,
    Vrr,
}

#[derive(Debug, Clone, Copy)]
pub struct AggregateOptions {
    pub bootstrap_b: usize,
    pub seed: u64,
    pub split: Split,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        AggregateOptions {
            bootstrap_b: 1000,
            seed: 0,
            split: Split::All,
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn unbiased_var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

fn mse_of(tau_hats: &[f64], tau: f64) -> f64 {
    let bias = mean(tau_hats) - tau;
    bias * bias + unbiased_var(tau_hats)
}

fn sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        0.0
    } else {
        unbiased_var(values).sqrt()
    }
}

fn accepted_values(records: &[ReplicationRecord], f: impl Fn(&ReplicationRecord) -> Option<f64>) -> Vec<f64> {
    records.iter().filter(|r| r.is_accepted()).filter_map(f).collect()
}

fn resample<R: Rng>(values: &[f64], rng: &mut R, buf: &mut Vec<f64>) {
    buf.clear();
    buf.extend((0..values.len()).map(|_| values[rng.random_range(0..values.len())]));
}

fn cell_seed(records: &[ReplicationRecord], seed: u64, statistic: Statistic, split: Split) -> u64 {
    let first = &records[0];
    mix(
        seed,
        &[
            first.scenario.kind.id(),
            first.n as u64,
            first.design.kind as u64,
            first.epsilon().unwrap_or(-1.0).to_bits(),
            statistic as u64,
            split.id(),
        ],
    )
}

fn bootstrap_with(
    records: &[ReplicationRecord],
    statistic: Statistic,
    b: usize,
    seed: u64,
    baseline: Option<&[ReplicationRecord]>,
) -> Result<f64> {
    if b < 2 {
        return Err(Error::Config(format!("bootstrap resamples B = {b} must be at least 2")));
    }
    if records.is_empty() {
        return Err(Error::Contract("bootstrap needs at least one record".into()));
    }
    let mut rng = stream_rng(seed, 0);
    let mut buf = Vec::new();
    let mut stats = Vec::with_capacity(b);
    match statistic {
        Statistic::AcceptProb => {
            // Resample replications; each contributes (accepted, draws).
            let pairs: Vec<(f64, f64)> = records
                .iter()
                .map(|r| (if r.is_accepted() { 1.0 } else { 0.0 }, r.attempts as f64))
                .collect();
            for _ in 0..b {
                let (mut acc, mut draws) = (0.0, 0.0);
                for _ in 0..pairs.len() {
                    let (a, d) = pairs[rng.random_range(0..pairs.len())];
                    acc += a;
                    draws += d;
                }
                stats.push(acc / draws);
            }
        }
        Statistic::Mse | Statistic::AsmdMean => {
            let values = match statistic {
                Statistic::Mse => accepted_values(records, |r| r.tau_hat),
                _ => accepted_values(records, |r| Some(r.achieved_asmd)),
            };
            if values.len() < 2 {
                return Err(Error::Contract("bootstrap needs at least two accepted records".into()));
            }
            let tau = records[0].scenario.tau;
            for _ in 0..b {
                resample(&values, &mut rng, &mut buf);
                stats.push(match statistic {
                    Statistic::Mse => mse_of(&buf, tau),
                    _ => mean(&buf),
                });
            }
        }
        Statistic::Vrr => {
            let baseline = baseline.ok_or_else(|| Error::Contract("vrr bootstrap needs a CR baseline".into()))?;
            let num = accepted_values(records, |r| r.neyman_var);
            let den = accepted_values(baseline, |r| r.neyman_var);
            if num.len() < 2 || den.len() < 2 {
                return Err(Error::Contract("bootstrap needs at least two accepted records".into()));
            }
            let mut buf2 = Vec::new();
            for _ in 0..b {
                resample(&num, &mut rng, &mut buf);
                resample(&den, &mut rng, &mut buf2);
                stats.push(mean(&buf) / mean(&buf2));
            }
        }
    }
    Ok(sd(&stats))
}

/// Nonparametric bootstrap standard error of `statistic` over `b` resamples.
///
/// MSE and mean ASMD resample accepted records; acceptance probability
/// resamples all replications; VRR resamples the design cell and the CR
/// baseline independently.
pub fn bootstrap_se(
    records: &[ReplicationRecord],
    statistic: Statistic,
    b: usize,
    seed: u64,
    cr_baseline: Option<&[ReplicationRecord]>,
) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Contract("bootstrap needs at least one record".into()));
    }
    bootstrap_with(records, statistic, b, cell_seed(records, seed, statistic, Split::All), cr_baseline)
}

/// Aggregates one cell's records into a [`CurvePoint`].
///
/// `cr_baseline` supplies the denominator of the variance reduction ratio
/// and must come from the same (scenario, n, split).
pub fn aggregate(
    records: &[ReplicationRecord],
    cr_baseline: Option<&[ReplicationRecord]>,
    opts: &AggregateOptions,
) -> Result<CurvePoint> {
    let first = records
        .first()
        .ok_or_else(|| Error::Contract("cannot aggregate an empty record set".into()))?;
    if records
        .iter()
        .any(|r| r.n != first.n || r.scenario != first.scenario || r.design != first.design)
    {
        return Err(Error::Contract("records span more than one cell".into()));
    }
    let tau = first.scenario.tau;
    let r_total = records.len();
    let tau_hats = accepted_values(records, |r| r.tau_hat);
    let r_effective = tau_hats.len();
    let draws: usize = records.iter().map(|r| r.attempts).sum();
    let accept_prob_single = r_effective as f64 / draws as f64;
    let accept_within_attempts = r_effective as f64 / r_total as f64;
    let se = |stat: Statistic, baseline: Option<&[ReplicationRecord]>| {
        bootstrap_with(records, stat, opts.bootstrap_b, cell_seed(records, opts.seed, stat, opts.split), baseline)
    };

    let mut point = CurvePoint {
        scenario: first.scenario.kind,
        n: first.n,
        design: first.design.kind,
        epsilon: first.epsilon(),
        split: opts.split,
        r_total,
        r_effective,
        asmd_mean: None,
        asmd_se: None,
        bias: None,
        variance: None,
        mse: None,
        mse_se: None,
        accept_prob_single,
        accept_prob_single_se: if r_total >= 2 { Some(se(Statistic::AcceptProb, None)?) } else { None },
        accept_within_attempts,
        exhaustion_rate: 1.0 - accept_within_attempts,
        avg_neyman_var: None,
        vrr: None,
        vrr_se: None,
    };
    if r_effective < 2 {
        return Ok(point);
    }

    let bias = mean(&tau_hats) - tau;
    let variance = unbiased_var(&tau_hats);
    let asmds = accepted_values(records, |r| Some(r.achieved_asmd));
    let neyman = accepted_values(records, |r| r.neyman_var);
    let avg_neyman = mean(&neyman);
    point.asmd_mean = Some(mean(&asmds));
    point.asmd_se = Some(se(Statistic::AsmdMean, None)?);
    point.bias = Some(bias);
    point.variance = Some(variance);
    point.mse = Some(bias * bias + variance);
    point.mse_se = Some(se(Statistic::Mse, None)?);
    point.avg_neyman_var = Some(avg_neyman);

    if let Some(baseline) = cr_baseline {
        let base = accepted_values(baseline, |r| r.neyman_var);
        if base.len() >= 2 {
            point.vrr = Some(avg_neyman / mean(&base));
            point.vrr_se = Some(se(Statistic::Vrr, Some(baseline))?);
        }
    }
    Ok(point)
}
