//! Balance and estimation primitives.

use crate::dgp::Covariates;
use crate::error::{Error, Result};

/// Pooled standard deviations below this are treated as a constant covariate.
pub const MIN_POOLED_SD: f64 = 1e-12;

/// Per-group means and unbiased variances of one variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupSummary {
    pub mean1: f64,
    pub mean0: f64,
    /// Unbiased (`n - 1`) variances; `NaN` for a group of size one.
    pub var1: f64,
    pub var0: f64,
    pub n1: usize,
    pub n0: usize,
}

impl GroupSummary {
    pub fn of(values: &[f64], t: &[bool]) -> Result<Self> {
        if values.len() != t.len() {
            return Err(Error::Contract(format!(
                "assignment length {} does not match data length {}",
                t.len(),
                values.len()
            )));
        }
        let (mut n1, mut n0, mut s1, mut s0) = (0usize, 0usize, 0.0, 0.0);
        for (&v, &treated) in values.iter().zip(t) {
            if treated {
                n1 += 1;
                s1 += v;
            } else {
                n0 += 1;
                s0 += v;
            }
        }
        if n1 == 0 || n0 == 0 {
            return Err(Error::Contract(format!(
                "both groups must be nonempty (n1 = {n1}, n0 = {n0})"
            )));
        }
        let (mean1, mean0) = (s1 / n1 as f64, s0 / n0 as f64);
        let (mut q1, mut q0) = (0.0, 0.0);
        for (&v, &treated) in values.iter().zip(t) {
            if treated {
                q1 += (v - mean1) * (v - mean1);
            } else {
                q0 += (v - mean0) * (v - mean0);
            }
        }
        let unbiased = |q: f64, n: usize| if n > 1 { q / (n - 1) as f64 } else { f64::NAN };
        Ok(GroupSummary {
            mean1,
            mean0,
            var1: unbiased(q1, n1),
            var0: unbiased(q0, n0),
            n1,
            n0,
        })
    }

    fn require_variances(&self) -> Result<()> {
        if self.n1 < 2 || self.n0 < 2 {
            return Err(Error::Contract(format!(
                "group variances need at least two units per group (n1 = {}, n0 = {})",
                self.n1, self.n0
            )));
        }
        Ok(())
    }
}

/// Average over covariates of `|mean1 - mean0| / sqrt((var1 + var0) / 2)`.
pub fn asmd(x: &Covariates, t: &[bool]) -> Result<f64> {
    let mut total = 0.0;
    for (j, column) in x.columns().enumerate() {
        let g = GroupSummary::of(column, t)?;
        g.require_variances()?;
        let pooled_sd = ((g.var1 + g.var0) / 2.0).sqrt();
        if pooled_sd < MIN_POOLED_SD {
            return Err(Error::DegenerateCovariate { column: j, pooled_sd });
        }
        total += (g.mean1 - g.mean0).abs() / pooled_sd;
    }
    Ok(total / x.p() as f64)
}

/// Treated mean minus control mean.
pub fn diff_in_means(y: &[f64], t: &[bool]) -> Result<f64> {
    let g = GroupSummary::of(y, t)?;
    Ok(g.mean1 - g.mean0)
}

/// Conservative design-based variance `s1²/n1 + s0²/n0`.
pub fn neyman_variance(y: &[f64], t: &[bool]) -> Result<f64> {
    let g = GroupSummary::of(y, t)?;
    g.require_variances()?;
    Ok(g.var1 / g.n1 as f64 + g.var0 / g.n0 as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel_close(a: f64, b: f64) -> bool {
        if b == 0.0 {
            a.abs() < 1e-12
        } else {
            ((a - b) / b).abs() < 1e-12
        }
    }

    fn col(v: &[f64]) -> Covariates {
        Covariates::from_columns(vec![v.to_vec()]).unwrap()
    }

    #[test]
    fn asmd_hand_values() {
        let x = col(&[1.0, 2.0, 3.0, 4.0]);
        assert!(rel_close(asmd(&x, &[true, false, false, true]).unwrap(), 0.0));
        let expected = 2.0 / 0.5f64.sqrt();
        assert!(rel_close(asmd(&x, &[true, true, false, false]).unwrap(), expected));
    }

    #[test]
    fn asmd_averages_over_columns() {
        let t = [true, true, false, false, true, false];
        let c1 = vec![0.3, 1.2, -0.7, 2.5, 0.1, -1.0];
        let c2 = vec![5.0, 4.0, 1.0, 2.0, 3.0, 9.0];
        let a = asmd(&col(&c1), &t).unwrap();
        let b = asmd(&col(&c2), &t).unwrap();
        let both = asmd(&Covariates::from_columns(vec![c1, c2]).unwrap(), &t).unwrap();
        assert!(rel_close(both, (a + b) / 2.0));
    }

    #[test]
    fn asmd_rejects_constant_covariate() {
        let x = col(&[2.0, 2.0, 2.0, 2.0]);
        assert!(matches!(
            asmd(&x, &[true, true, false, false]),
            Err(Error::DegenerateCovariate { column: 0, .. })
        ));
    }

    #[test]
    fn asmd_rejects_singleton_group() {
        let x = col(&[1.0, 2.0, 3.0, 4.0]);
        assert!(matches!(asmd(&x, &[true, false, false, false]), Err(Error::Contract(_))));
    }

    #[test]
    fn diff_in_means_hand_values() {
        assert!(rel_close(diff_in_means(&[1.0, 1.0, 0.0, 0.0], &[true, true, false, false]).unwrap(), 1.0));
        assert!(rel_close(diff_in_means(&[4.2; 4], &[true, false, true, false]).unwrap(), 0.0));
        assert!(rel_close(diff_in_means(&[3.0, 5.0, 1.0, 2.0], &[true, false, true, false]).unwrap(), -1.5));
        assert!(diff_in_means(&[1.0, 2.0], &[false, false]).is_err());
    }

    #[test]
    fn neyman_hand_values() {
        // treated {3, 1}, control {5, 2}
        let y = [3.0, 5.0, 1.0, 2.0];
        let t = [true, false, true, false];
        assert!(rel_close(neyman_variance(&y, &t).unwrap(), 3.25));
        let doubled: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
        assert!(rel_close(neyman_variance(&doubled, &t).unwrap(), 13.0));
        assert_eq!(neyman_variance(&[1.0, 1.0, 7.0, 7.0], &[true, true, false, false]).unwrap(), 0.0);
        assert!(neyman_variance(&[1.0, 2.0, 3.0], &[true, false, false]).is_err());
    }

    fn data_and_split() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (4usize..30).prop_flat_map(|n| {
            (
                prop::collection::vec(-50.0f64..50.0, n),
                prop::collection::vec(any::<bool>(), n).prop_filter("two per group", |t| {
                    let k = t.iter().filter(|&&b| b).count();
                    k >= 2 && t.len() - k >= 2
                }),
            )
        })
    }

    proptest! {
        #[test]
        fn asmd_affine_invariant((v, t) in data_and_split(), a in prop_oneof![-10.0f64..-0.1, 0.1f64..10.0], b in -100.0f64..100.0) {
            let base = asmd(&col(&v), &t);
            prop_assume!(base.is_ok());
            let w: Vec<f64> = v.iter().map(|x| a * x + b).collect();
            let moved = asmd(&col(&w), &t).unwrap();
            prop_assert!((moved - base.unwrap()).abs() <= 1e-9 * (1.0 + moved.abs()));
        }

        #[test]
        fn complement_symmetries((v, t) in data_and_split()) {
            let c: Vec<bool> = t.iter().map(|b| !b).collect();
            if let Ok(a) = asmd(&col(&v), &t) {
                prop_assert!((a - asmd(&col(&v), &c).unwrap()).abs() <= 1e-12 * (1.0 + a));
            }
            let d = diff_in_means(&v, &t).unwrap();
            prop_assert!((d + diff_in_means(&v, &c).unwrap()).abs() <= 1e-12 * (1.0 + d.abs()));
        }

        #[test]
        fn neyman_shift_invariant((v, t) in data_and_split(), shift in -1e3f64..1e3) {
            let base = neyman_variance(&v, &t).unwrap();
            let w: Vec<f64> = v.iter().map(|x| x + shift).collect();
            prop_assert!((neyman_variance(&w, &t).unwrap() - base).abs() <= 1e-8 * (1.0 + base));
        }
    }
}
