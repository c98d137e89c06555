//! Exact computations over every balanced assignment of a small fixed sample.
//!
//! Assignments are the only randomness here: each of the `C(n, n/2)`
//! balanced splits is equally likely, and conditioning on `ASMD <= eps`
//! restricts to a subset of them.

use std::fmt::Write as _;

use crate::dgp::{Covariates, Sample};
use crate::error::{Error, Result};
use crate::metrics;
use crate::table::fmt_num;

pub const MAX_ENUMERATION_N: usize = 20;

/// All length-`n` vectors with exactly `n/2` ones, in lexicographic order of
/// the treated index sets.
pub fn enumerate_assignments(n: usize) -> Result<Vec<Vec<bool>>> {
    if !n.is_multiple_of(2) || !(4..=MAX_ENUMERATION_N).contains(&n) {
        return Err(Error::Config(format!(
            "enumeration needs an even n in [4, {MAX_ENUMERATION_N}], got {n}"
        )));
    }
    let k = n / 2;
    let mut idx: Vec<usize> = (0..k).collect();
    let mut out = Vec::new();
    loop {
        let mut t = vec![false; n];
        for &i in &idx {
            t[i] = true;
        }
        out.push(t);
        // Advance to the next k-combination.
        let Some(pos) = (0..k).rev().find(|&i| idx[i] < n - k + i) else {
            break;
        };
        idx[pos] += 1;
        for i in pos + 1..k {
            idx[i] = idx[i - 1] + 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactPoint {
    pub epsilon: f64,
    /// Number of assignments with `ASMD <= epsilon`.
    pub accepted: usize,
    pub accept_prob: f64,
    /// Conditional moments of the estimator; `None` when nothing is accepted.
    pub cond_mean: Option<f64>,
    pub cond_var: Option<f64>,
    pub cond_mse: Option<f64>,
    /// `Var(tau_hat) / p(eps)`.
    pub reference_var: Option<f64>,
}

impl ExactPoint {
    pub fn is_feasible(&self) -> bool {
        self.accepted > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactCurve {
    pub tau: f64,
    pub assignments: usize,
    pub max_asmd: f64,
    pub unconditional_mean: f64,
    pub unconditional_var: f64,
    pub points: Vec<ExactPoint>,
}

/// Exact acceptance probability and conditional moments of the
/// difference-in-means estimator at each threshold in `grid`.
pub fn exact_curve(sample: &Sample, grid: &[f64]) -> Result<ExactCurve> {
    let assignments = enumerate_assignments(sample.n())?;
    let mut evaluated = Vec::with_capacity(assignments.len());
    for (k, t) in assignments.iter().enumerate() {
        let asmd = metrics::asmd(&sample.x, t)
            .map_err(|e| e.in_cell(format!("enumerated assignment #{k} {t:?}")))?;
        let tau_hat = metrics::diff_in_means(&sample.observed(t), t)?;
        evaluated.push((asmd, tau_hat));
    }
    let tau = sample.tau();
    let total = evaluated.len();
    let moments = |vals: &[f64]| {
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
        (m, v)
    };
    let all: Vec<f64> = evaluated.iter().map(|&(_, th)| th).collect();
    let (unconditional_mean, unconditional_var) = moments(&all);
    let max_asmd = evaluated.iter().map(|&(a, _)| a).fold(0.0, f64::max);

    let points = grid
        .iter()
        .map(|&eps| {
            let kept: Vec<f64> = evaluated.iter().filter(|&&(a, _)| a <= eps).map(|&(_, th)| th).collect();
            let accept_prob = kept.len() as f64 / total as f64;
            if kept.is_empty() {
                return ExactPoint {
                    epsilon: eps,
                    accepted: 0,
                    accept_prob,
                    cond_mean: None,
                    cond_var: None,
                    cond_mse: None,
                    reference_var: None,
                };
            }
            let (m, v) = moments(&kept);
            let bias = m - tau;
            ExactPoint {
                epsilon: eps,
                accepted: kept.len(),
                accept_prob,
                cond_mean: Some(m),
                cond_var: Some(v),
                cond_mse: Some(bias * bias + v),
                reference_var: Some(unconditional_var / accept_prob),
            }
        })
        .collect();

    Ok(ExactCurve {
        tau,
        assignments: total,
        max_asmd,
        unconditional_mean,
        unconditional_var,
        points,
    })
}

/// Diagnostics of the convexity argument on one exact curve. Only
/// `accept_monotone` is a hard property; the rest describe the instance.
#[derive(Debug, Clone, PartialEq)]
pub struct LemmaReport {
    pub feasible_points: usize,
    pub accept_monotone: bool,
    /// Whether `p(eps)` has nonincreasing slopes over the grid.
    pub accept_concave: bool,
    pub variance_nonincreasing: bool,
    /// Thresholds at which the conditional variance rose from the previous grid point.
    pub variance_increases: Vec<f64>,
    /// `cond_var - Var/p` at each feasible threshold.
    pub reference_gaps: Vec<(f64, f64)>,
    /// Interior thresholds at which the exact MSE sequence fails discrete convexity.
    pub convexity_violations: Vec<f64>,
}

impl LemmaReport {
    pub fn mse_convex(&self) -> bool {
        self.convexity_violations.is_empty()
    }
}

const SLOPE_TOL: f64 = 1e-12;

fn slopes(points: &[(f64, f64)]) -> Vec<f64> {
    points.windows(2).map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0)).collect()
}

pub fn lemma_check(exact: &ExactCurve) -> LemmaReport {
    let accept_monotone = exact.points.windows(2).all(|w| w[1].accept_prob >= w[0].accept_prob);
    let accept_pts: Vec<(f64, f64)> = exact.points.iter().map(|p| (p.epsilon, p.accept_prob)).collect();
    let accept_concave = slopes(&accept_pts).windows(2).all(|s| s[1] <= s[0] + SLOPE_TOL);

    let feasible: Vec<&ExactPoint> = exact.points.iter().filter(|p| p.is_feasible()).collect();
    let variance_increases: Vec<f64> = feasible
        .windows(2)
        .filter(|w| w[1].cond_var.unwrap() > w[0].cond_var.unwrap() + SLOPE_TOL)
        .map(|w| w[1].epsilon)
        .collect();
    let reference_gaps = feasible
        .iter()
        .map(|p| (p.epsilon, p.cond_var.unwrap() - p.reference_var.unwrap()))
        .collect();
    let mse_pts: Vec<(f64, f64)> = feasible.iter().map(|p| (p.epsilon, p.cond_mse.unwrap())).collect();
    let convexity_violations = slopes(&mse_pts)
        .windows(2)
        .zip(&mse_pts[1..])
        .filter(|(s, _)| s[1] < s[0] - SLOPE_TOL)
        .map(|(_, &(eps, _))| eps)
        .collect();

    LemmaReport {
        feasible_points: feasible.len(),
        accept_monotone,
        accept_concave,
        variance_nonincreasing: variance_increases.is_empty(),
        variance_increases,
        reference_gaps,
        convexity_violations,
    }
}

/// Plain-text fixture files: `#` comment lines, a `tau <value>` line, then
/// whitespace-separated rows `x_1 .. x_p y0`.
pub mod fixture {
    use super::*;

    pub fn write_sample(sample: &Sample) -> String {
        let mut out = String::new();
        writeln!(out, "# fixed sample: columns x_1..x_{} y0; y1 = y0 + tau", sample.x.p()).unwrap();
        writeln!(out, "tau {}", fmt_num(sample.tau())).unwrap();
        for i in 0..sample.n() {
            let row: Vec<String> = (0..sample.x.p())
                .map(|j| fmt_num(sample.x.get(i, j)))
                .chain(std::iter::once(fmt_num(sample.y0[i])))
                .collect();
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
        out
    }

    fn parse_num(s: &str, line: usize) -> Result<f64> {
        s.parse()
            .map_err(|_| Error::Config(format!("fixture line {line}: cannot parse number {s:?}")))
    }

    pub fn read_sample(text: &str) -> Result<Sample> {
        let mut tau = None;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("tau") {
                tau = Some(parse_num(rest.trim(), lineno + 1)?);
                continue;
            }
            rows.push(
                line.split_whitespace()
                    .map(|s| parse_num(s, lineno + 1))
                    .collect::<Result<_>>()?,
            );
        }
        let tau = tau.ok_or_else(|| Error::Config("fixture is missing the tau line".into()))?;
        if rows.iter().any(|r| r.len() < 2) {
            return Err(Error::Config("fixture rows need at least one covariate and y0".into()));
        }
        let y0 = rows.iter().map(|r| *r.last().unwrap()).collect();
        let x_rows: Vec<Vec<f64>> = rows.iter().map(|r| r[..r.len() - 1].to_vec()).collect();
        Sample::from_parts(Covariates::from_rows(&x_rows)?, y0, tau, 0)
    }

    pub const EXACT_COLUMNS: &str = "epsilon accepted accept_prob cond_mean cond_var cond_mse reference_var";

    pub fn write_exact(curve: &ExactCurve) -> String {
        let mut out = String::new();
        writeln!(out, "# exact curve over {} assignments", curve.assignments).unwrap();
        writeln!(out, "# unconditional_var {}", fmt_num(curve.unconditional_var)).unwrap();
        writeln!(out, "# {EXACT_COLUMNS}").unwrap();
        let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), fmt_num);
        for p in &curve.points {
            writeln!(
                out,
                "{} {} {} {} {} {} {}",
                fmt_num(p.epsilon),
                p.accepted,
                fmt_num(p.accept_prob),
                opt(p.cond_mean),
                opt(p.cond_var),
                opt(p.cond_mse),
                opt(p.reference_var)
            )
            .unwrap();
        }
        out
    }

    /// Rows of an exact-curve table, one `Vec<f64>` per threshold (`NaN` for absent values).
    pub fn read_table(text: &str) -> Result<Vec<Vec<f64>>> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
            .map(|(i, l)| l.split_whitespace().map(|s| parse_num(s, i + 1)).collect())
            .collect()
    }
}
