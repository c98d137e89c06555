//! Simulated covariates and potential outcomes.
//!
//! Outcomes follow `Y(0) = X·1 + e` and `Y(1) = Y(0) + tau`, with the
//! covariate law and error law selected by [`ScenarioKind`].

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{stream_rng, SAMPLE_STREAM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    BaselineNormal,
    Correlated,
    HeavyTailT3,
    SkewedChiSq2,
    Heteroskedastic,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::BaselineNormal,
        ScenarioKind::Correlated,
        ScenarioKind::HeavyTailT3,
        ScenarioKind::SkewedChiSq2,
        ScenarioKind::Heteroskedastic,
    ];

    /// Stable identifier mixed into replication seeds.
    pub fn id(self) -> u64 {
        match self {
            ScenarioKind::BaselineNormal => 0,
            ScenarioKind::Correlated => 1,
            ScenarioKind::HeavyTailT3 => 2,
            ScenarioKind::SkewedChiSq2 => 3,
            ScenarioKind::Heteroskedastic => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::BaselineNormal => "baseline_normal",
            ScenarioKind::Correlated => "correlated",
            ScenarioKind::HeavyTailT3 => "heavy_tail_t3",
            ScenarioKind::SkewedChiSq2 => "skewed_chi_sq2",
            ScenarioKind::Heteroskedastic => "heteroskedastic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = ScenarioKind::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!("unknown scenario {s:?}; expected one of {names:?}"))
            })
    }
}

impl std::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// Off-diagonal correlation, used by [`ScenarioKind::Correlated`] only.
    pub rho: f64,
    /// True (constant) treatment effect.
    pub tau: f64,
    /// Error scale slope on `|X_1|`, used by [`ScenarioKind::Heteroskedastic`] only.
    pub hetero_slope: f64,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind) -> Self {
        ScenarioSpec {
            kind,
            rho: 0.5,
            tau: 1.0,
            hetero_slope: 0.5,
        }
    }

    pub fn baseline() -> Self {
        Self::new(ScenarioKind::BaselineNormal)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(Error::Config(format!("rho = {} must lie in (-1, 1)", self.rho)));
        }
        if !self.tau.is_finite() {
            return Err(Error::Config(format!("tau = {} must be finite", self.tau)));
        }
        if !self.hetero_slope.is_finite() {
            return Err(Error::Config(format!(
                "hetero_slope = {} must be finite",
                self.hetero_slope
            )));
        }
        Ok(())
    }
}

/// An `n × p` covariate matrix stored column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    n: usize,
    p: usize,
    data: Vec<f64>,
}

impl Covariates {
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        let p = columns.len();
        if p == 0 {
            return Err(Error::Config("covariate matrix needs at least one column".into()));
        }
        let n = columns[0].len();
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::Config("covariate columns have unequal lengths".into()));
        }
        let data: Vec<f64> = columns.into_iter().flatten().collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("covariate matrix has non-finite entries".into()));
        }
        Ok(Covariates { n, p, data })
    }

    /// Builds from row-major data (`rows[i][j]` is covariate `j` of unit `i`).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::Config("covariate rows have unequal lengths".into()));
        }
        Self::from_columns((0..p).map(|j| rows.iter().map(|r| r[j]).collect()).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.n + i]
    }
}

/// One simulated dataset: covariates plus both potential outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Covariates,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub scenario: ScenarioSpec,
    pub seed: u64,
}

impl Sample {
    /// Assembles a sample from given data, e.g. a fixture or user-supplied matrix.
    pub fn from_parts(x: Covariates, y0: Vec<f64>, tau: f64, seed: u64) -> Result<Self> {
        if y0.len() != x.n() {
            return Err(Error::Config(format!(
                "outcome length {} does not match covariate rows {}",
                y0.len(),
                x.n()
            )));
        }
        if y0.iter().any(|v| !v.is_finite()) || !tau.is_finite() {
            return Err(Error::Config("outcomes must be finite".into()));
        }
        let y1 = y0.iter().map(|v| v + tau).collect();
        let scenario = ScenarioSpec {
            tau,
            ..ScenarioSpec::baseline()
        };
        Ok(Sample {
            x,
            y0,
            y1,
            scenario,
            seed,
        })
    }

    pub fn n(&self) -> usize {
        self.x.n()
    }

    pub fn tau(&self) -> f64 {
        self.scenario.tau
    }

    /// Observed outcomes under assignment `t`: `Y(1)` for treated units, `Y(0)` otherwise.
    pub fn observed(&self, t: &[bool]) -> Vec<f64> {
        t.iter()
            .zip(self.y0.iter().zip(&self.y1))
            .map(|(&treated, (&y0, &y1))| if treated { y1 } else { y0 })
            .collect()
    }
}

fn compound_symmetry_factor(p: usize, rho: f64) -> Result<DMatrix<f64>> {
    let sigma = DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { rho });
    sigma
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| {
            Error::Config(format!(
                "correlation matrix with rho = {rho} is not positive definite for p = {p}"
            ))
        })
}

pub fn generate_sample(scenario: &ScenarioSpec, n: usize, p: usize, seed: u64) -> Result<Sample> {
    scenario.validate()?;
    if n < 4 {
        return Err(Error::Config(format!("sample size n = {n} must be at least 4")));
    }
    if p < 1 {
        return Err(Error::Config("covariate count p must be at least 1".into()));
    }
    let factor = match scenario.kind {
        ScenarioKind::Correlated => Some(compound_symmetry_factor(p, scenario.rho)?),
        _ => None,
    };

    let mut rng = stream_rng(seed, SAMPLE_STREAM);
    let t3 = StudentT::new(3.0).expect("valid df");
    let chi2 = ChiSquared::new(2.0).expect("valid df");
    let t3_scale = (1.0f64 / 3.0).sqrt();

    let mut columns = vec![vec![0.0; n]; p];
    let mut z = vec![0.0; p];
    for i in 0..n {
        match scenario.kind {
            ScenarioKind::BaselineNormal | ScenarioKind::Heteroskedastic => {
                for col in columns.iter_mut() {
                    col[i] = rng.sample(StandardNormal);
                }
            }
            ScenarioKind::Correlated => {
                let l = factor.as_ref().expect("factor built above");
                for zj in z.iter_mut() {
                    *zj = rng.sample(StandardNormal);
                }
                for (j, col) in columns.iter_mut().enumerate() {
                    col[i] = (0..=j).map(|k| l[(j, k)] * z[k]).sum();
                }
            }
            ScenarioKind::HeavyTailT3 => {
                for col in columns.iter_mut() {
                    col[i] = t3.sample(&mut rng) * t3_scale;
                }
            }
            ScenarioKind::SkewedChiSq2 => {
                for col in columns.iter_mut() {
                    col[i] = (chi2.sample(&mut rng) - 2.0) / 2.0;
                }
            }
        }
    }

    let y0: Vec<f64> = (0..n)
        .map(|i| {
            let signal: f64 = columns.iter().map(|c| c[i]).sum();
            let e: f64 = rng.sample(StandardNormal);
            let scale = match scenario.kind {
                ScenarioKind::Heteroskedastic => 1.0 + scenario.hetero_slope * columns[0][i].abs(),
                _ => 1.0,
            };
            signal + scale * e
        })
        .collect();
    let y1 = y0.iter().map(|v| v + scenario.tau).collect();
    let x = Covariates::from_columns(columns)?;

    Ok(Sample {
        x,
        y0,
        y1,
        scenario: *scenario,
        seed,
    })
}
