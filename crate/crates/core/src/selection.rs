//! Sample-splitting selection of the FSM threshold.
//!
//! The threshold is chosen on the training half of the replications and
//! evaluated on the held-out half.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::engine::{aggregate, AggregateOptions, CurvePoint, ReplicationRecord};
use crate::error::{Error, Result};
use crate::seed::stream_rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub split_seed: u64,
    membership: Vec<bool>,
}

impl SplitPlan {
    pub fn is_train(&self, replication_index: usize) -> bool {
        self.membership[replication_index]
    }

    pub fn train(&self, records: &[ReplicationRecord]) -> Vec<ReplicationRecord> {
        records.iter().filter(|r| self.is_train(r.replication_index)).cloned().collect()
    }

    pub fn test(&self, records: &[ReplicationRecord]) -> Vec<ReplicationRecord> {
        records.iter().filter(|r| !self.is_train(r.replication_index)).cloned().collect()
    }
}

/// Uniformly random half/half partition of `0..replications`.
pub fn split(replications: usize, split_seed: u64) -> Result<SplitPlan> {
    if replications < 4 {
        return Err(Error::Config(format!(
            "sample splitting needs at least 4 replications, got {replications}"
        )));
    }
    let mut order: Vec<usize> = (0..replications).collect();
    order.shuffle(&mut stream_rng(split_seed, 0));
    let mut test_indices = order.split_off(replications / 2);
    let mut train_indices = order;
    train_indices.sort_unstable();
    test_indices.sort_unstable();
    let mut membership = vec![false; replications];
    for &i in &train_indices {
        membership[i] = true;
    }
    Ok(SplitPlan {
        train_indices,
        test_indices,
        split_seed,
        membership,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    MinMse,
    ConstrainedMinMse { min_accept: f64 },
}

impl SelectionRule {
    pub fn name(&self) -> &'static str {
        match self {
            SelectionRule::MinMse => "MinMSE",
            SelectionRule::ConstrainedMinMse { .. } => "ConstrainedMinMSE",
        }
    }

    pub fn min_accept(&self) -> Option<f64> {
        match self {
            SelectionRule::MinMse => None,
            SelectionRule::ConstrainedMinMse { min_accept } => Some(*min_accept),
        }
    }
}

/// Which acceptance estimate a feasibility constraint is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcceptanceMeasure {
    /// Single-draw probability `P(ASMD <= eps)`.
    #[default]
    SingleDraw,
    /// Success within the design's attempt budget.
    WithinAttempts,
}

impl AcceptanceMeasure {
    pub fn of(self, point: &CurvePoint) -> f64 {
        match self {
            AcceptanceMeasure::SingleDraw => point.accept_prob_single,
            AcceptanceMeasure::WithinAttempts => point.accept_within_attempts,
        }
    }
}

/// Thresholds for the recommended feasible band: MSE within `mse_slack`
/// of the minimum while acceptance is at least `min_accept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandRule {
    pub mse_slack: f64,
    pub min_accept: f64,
    pub measure: AcceptanceMeasure,
}

impl Default for BandRule {
    fn default() -> Self {
        BandRule {
            mse_slack: 0.10,
            min_accept: 0.05,
            measure: AcceptanceMeasure::SingleDraw,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub rule: SelectionRule,
    pub epsilon_star: f64,
    pub train_mse: f64,
    /// Grid thresholds skipped because fewer than two training replications were accepted.
    pub skipped: Vec<f64>,
    pub feasible_range: Option<(f64, f64)>,
    pub test_curve_point: Option<CurvePoint>,
}

fn curve_sorted(curve: &[CurvePoint]) -> Result<Vec<&CurvePoint>> {
    let mut points: Vec<&CurvePoint> = curve.iter().collect();
    if points.iter().any(|p| p.epsilon.is_none()) {
        return Err(Error::Contract("selection curve contains a point without a threshold".into()));
    }
    points.sort_by(|a, b| a.epsilon.partial_cmp(&b.epsilon).expect("finite thresholds"));
    Ok(points)
}

/// Argmin of MSE over feasible points; ties go to the larger threshold.
fn argmin<'a>(points: impl Iterator<Item = &'a CurvePoint>) -> Option<&'a CurvePoint> {
    points.fold(None, |best: Option<&CurvePoint>, p| match (best, p.mse) {
        (_, None) => best,
        (None, Some(_)) => Some(p),
        (Some(b), Some(m)) => {
            if m <= b.mse.expect("best is feasible") {
                Some(p)
            } else {
                Some(b)
            }
        }
    })
}

fn epsilon(p: &CurvePoint) -> f64 {
    p.epsilon.expect("checked in curve_sorted")
}

/// Band of thresholds whose MSE is within the slack of the curve minimum and
/// whose acceptance reaches the band minimum.
pub fn feasible_band(curve: &[CurvePoint], band: &BandRule) -> Result<Option<(f64, f64)>> {
    let points = curve_sorted(curve)?;
    let Some(best) = argmin(points.iter().copied()) else {
        return Ok(None);
    };
    let limit = best.mse.expect("feasible") * (1.0 + band.mse_slack);
    let inside: Vec<f64> = points
        .iter()
        .filter(|p| p.mse.is_some_and(|m| m <= limit) && band.measure.of(p) >= band.min_accept)
        .map(|p| epsilon(p))
        .collect();
    Ok(inside.first().zip(inside.last()).map(|(&lo, &hi)| (lo, hi)))
}

fn skipped(points: &[&CurvePoint]) -> Vec<f64> {
    points.iter().filter(|p| !p.is_feasible()).map(|p| epsilon(p)).collect()
}

/// Training-curve threshold with minimal MSE. Infeasible cells are skipped.
pub fn select_min_mse(train_curve: &[CurvePoint], band: &BandRule) -> Result<SelectionResult> {
    let points = curve_sorted(train_curve)?;
    let best = argmin(points.iter().copied())
        .ok_or_else(|| Error::Selection("no feasible epsilon on grid".into()))?;
    Ok(SelectionResult {
        rule: SelectionRule::MinMse,
        epsilon_star: epsilon(best),
        train_mse: best.mse.expect("feasible"),
        skipped: skipped(&points),
        feasible_range: feasible_band(train_curve, band)?,
        test_curve_point: None,
    })
}

/// Minimal-MSE threshold among those whose training acceptance is at least `min_accept`.
pub fn select_constrained(
    train_curve: &[CurvePoint],
    min_accept: f64,
    measure: AcceptanceMeasure,
    band: &BandRule,
) -> Result<SelectionResult> {
    if !(0.0..=1.0).contains(&min_accept) {
        return Err(Error::Config(format!("min_accept = {min_accept} must lie in [0, 1]")));
    }
    let points = curve_sorted(train_curve)?;
    let best = argmin(points.iter().copied().filter(|p| measure.of(p) >= min_accept)).ok_or_else(|| {
        let top = points
            .iter()
            .filter(|p| p.is_feasible())
            .max_by(|a, b| measure.of(a).total_cmp(&measure.of(b)));
        match top {
            Some(p) => Error::Selection(format!(
                "no feasible epsilon reaches acceptance {min_accept}; the largest achievable on this grid is {} at epsilon = {}",
                measure.of(p),
                epsilon(p)
            )),
            None => Error::Selection("no feasible epsilon on grid".into()),
        }
    })?;
    Ok(SelectionResult {
        rule: SelectionRule::ConstrainedMinMse { min_accept },
        epsilon_star: epsilon(best),
        train_mse: best.mse.expect("feasible"),
        skipped: skipped(&points),
        feasible_range: feasible_band(train_curve, band)?,
        test_curve_point: None,
    })
}

/// Aggregates the held-out records at the selected threshold.
pub fn evaluate_on_test(
    test_records: &[ReplicationRecord],
    cr_baseline: Option<&[ReplicationRecord]>,
    opts: &AggregateOptions,
) -> Result<CurvePoint> {
    aggregate(test_records, cr_baseline, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designs::DesignKind;
    use crate::dgp::ScenarioKind;
    use crate::engine::Split;

    pub(crate) fn point(eps: f64, mse: Option<f64>, accept: f64) -> CurvePoint {
        CurvePoint {
            scenario: ScenarioKind::BaselineNormal,
            n: 100,
            design: DesignKind::Fsm,
            epsilon: Some(eps),
            split: Split::Train,
            r_total: 500,
            r_effective: if mse.is_some() { 100 } else { 0 },
            asmd_mean: None,
            asmd_se: None,
            bias: None,
            variance: None,
            mse,
            mse_se: None,
            accept_prob_single: accept / 10.0,
            accept_prob_single_se: None,
            accept_within_attempts: accept,
            exhaustion_rate: 1.0 - accept,
            avg_neyman_var: None,
            vrr: None,
            vrr_se: None,
        }
    }

    #[test]
    fn split_halves() {
        let plan = split(1000, 3).unwrap();
        assert_eq!(plan.train_indices.len(), 500);
        assert_eq!(plan.test_indices.len(), 500);
        let mut all: Vec<_> = plan.train_indices.iter().chain(&plan.test_indices).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        assert_eq!(plan, split(1000, 3).unwrap());
        assert_ne!(plan.train_indices, split(1000, 4).unwrap().train_indices);

        let small = split(4, 0).unwrap();
        assert_eq!((small.train_indices.len(), small.test_indices.len()), (2, 2));
        assert!(split(3, 0).is_err());
    }

    #[test]
    fn min_mse_picks_unique_argmin() {
        let curve = vec![
            point(0.01, Some(0.5), 0.0),
            point(0.02, Some(0.2), 0.1),
            point(0.05, Some(0.3), 0.5),
            point(0.1, Some(0.6), 1.0),
        ];
        let r = select_min_mse(&curve, &BandRule::default()).unwrap();
        assert_eq!(r.epsilon_star, 0.02);
        assert_eq!(r.train_mse, 0.2);
    }

    #[test]
    fn ties_go_to_larger_epsilon_and_infeasible_are_skipped() {
        let curve = vec![
            point(0.001, None, 0.0),
            point(0.01, Some(0.2), 0.0),
            point(0.02, Some(0.2), 0.1),
            point(0.05, Some(0.3), 0.5),
        ];
        let r = select_min_mse(&curve, &BandRule::default()).unwrap();
        assert_eq!(r.epsilon_star, 0.02);
        assert_eq!(r.skipped, vec![0.001]);
    }

    #[test]
    fn all_infeasible_is_an_error() {
        let curve = vec![point(0.001, None, 0.0), point(0.002, None, 0.0)];
        assert!(matches!(select_min_mse(&curve, &BandRule::default()), Err(Error::Selection(_))));
    }

    #[test]
    fn constrained_selection() {
        let curve = vec![
            point(0.01, Some(0.10), 0.001),
            point(0.015, Some(0.105), 0.04),
            point(0.02, Some(0.108), 0.12),
            point(0.05, Some(0.15), 0.6),
            point(0.5, Some(0.4), 1.0),
        ];
        let m = AcceptanceMeasure::WithinAttempts;
        let band = BandRule {
            measure: m,
            ..BandRule::default()
        };
        let vacuous = select_constrained(&curve, 0.0, m, &band).unwrap();
        assert_eq!(vacuous.epsilon_star, select_min_mse(&curve, &band).unwrap().epsilon_star);
        assert_eq!(select_constrained(&curve, 0.05, m, &band).unwrap().epsilon_star, 0.02);
        assert_eq!(select_constrained(&curve, 1.0, m, &band).unwrap().epsilon_star, 0.5);
        assert_eq!(vacuous.feasible_range, Some((0.02, 0.02)));

        let strict: Vec<_> = curve.iter().take(4).cloned().collect();
        match select_constrained(&strict, 1.0, m, &band) {
            Err(Error::Selection(msg)) => assert!(msg.contains("0.6"), "{msg}"),
            other => panic!("expected selection error, got {other:?}"),
        }
    }
}
