//! Central finite-difference check of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{GradientSet, ParameterSet};

/// Minimum number of coordinates probed per tensor (all of them if fewer).
pub const MIN_COORDS_PER_TENSOR: usize = 50;

/// A deterministic scalar loss with an analytic gradient.
pub trait Objective {
    fn loss(&self, params: &ParameterSet) -> Result<f64>;
    fn gradient(&self, params: &ParameterSet) -> Result<GradientSet>;
}

/// Adapts a pair of closures to [`Objective`].
pub struct FnObjective<L, G> {
    pub loss: L,
    pub gradient: G,
}

impl<L, G> Objective for FnObjective<L, G>
where
    L: Fn(&ParameterSet) -> Result<f64>,
    G: Fn(&ParameterSet) -> Result<GradientSet>,
{
    fn loss(&self, params: &ParameterSet) -> Result<f64> {
        (self.loss)(params)
    }

    fn gradient(&self, params: &ParameterSet) -> Result<GradientSet> {
        (self.gradient)(params)
    }
}

/// The coordinate with the largest relative error.
#[derive(Debug, Clone, PartialEq)]
pub struct WorstCoordinate {
    pub tensor: String,
    /// Flat index into the tensor.
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<WorstCoordinate>,
    pub coords_checked: usize,
}

/// Compares the analytic gradient against `(L(θ+h) − L(θ−h)) / 2h` on sampled
/// coordinates and reports the largest relative error, using
/// `max(|analytic|, |numeric|, 1e-8)` as the denominator.
pub fn finite_diff_report<O: Objective + ?Sized>(
    objective: &O,
    params: &ParameterSet,
    step: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    if step.is_nan() || step <= 0.0 {
        return Err(Error::Validation(format!(
            "finite-difference step {step} must be > 0"
        )));
    }
    let analytic = objective.gradient(params)?;
    params.check_compatible(&analytic, "finite_diff_check")?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coords_checked: 0,
    };

    let names: Vec<String> = params.names().map(str::to_owned).collect();
    for name in &names {
        let len = params.expect(name)?.len();
        let coords: Vec<usize> = if len <= MIN_COORDS_PER_TENSOR {
            (0..len).collect()
        } else {
            let mut picked = sample(&mut rng, len, MIN_COORDS_PER_TENSOR).into_vec();
            picked.sort_unstable();
            picked
        };
        let grad = analytic.expect(name)?.data().to_vec();
        for i in coords {
            let original = params.expect(name)?.data()[i];
            set(&mut probe, name, i, original + step);
            let plus = objective.loss(&probe)?;
            set(&mut probe, name, i, original - step);
            let minus = objective.loss(&probe)?;
            set(&mut probe, name, i, original);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss while probing `{name}`[{i}]"
                )));
            }
            let numeric = (plus - minus) / (2.0 * step);
            let denom = grad[i].abs().max(numeric.abs()).max(1e-8);
            let rel = (grad[i] - numeric).abs() / denom;
            report.coords_checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some(WorstCoordinate {
                    tensor: name.clone(),
                    index: i,
                    analytic: grad[i],
                    numeric,
                });
            }
        }
    }
    Ok(report)
}

/// Maximum relative error between analytic and central-difference gradients.
pub fn finite_diff_check<O: Objective + ?Sized>(
    objective: &O,
    params: &ParameterSet,
    step: f64,
    seed: u64,
) -> Result<f64> {
    finite_diff_report(objective, params, step, seed).map(|r| r.max_rel_error)
}

fn set(params: &mut ParameterSet, name: &str, i: usize, value: f64) {
    if let Some(t) = params.get_mut(name) {
        t.data_mut()[i] = value;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn half_norm_sq() -> impl Objective {
        FnObjective {
            loss: |p: &ParameterSet| Ok(0.5 * p.l2_norm().powi(2)),
            gradient: |p: &ParameterSet| Ok(p.clone()),
        }
    }

    fn params(values: &[f64]) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert("w", Tensor::vector(values.to_vec()).unwrap())
            .unwrap();
        p.insert("b", Tensor::scalar(0.5)).unwrap();
        p
    }

    #[test]
    fn quadratic_is_exact() {
        let p = params(&[0.3, -1.7, 2.5, 10.0]);
        let err = finite_diff_check(&half_norm_sq(), &p, 1e-5, 0).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn zero_params_symmetric_loss() {
        let mut p = ParameterSet::new();
        p.insert("w", Tensor::zeros(&[3, 3])).unwrap();
        let report = finite_diff_report(&half_norm_sq(), &p, 1e-5, 0).unwrap();
        assert_eq!(report.max_rel_error, 0.0);
        assert_eq!(report.coords_checked, 9);
    }

    #[test]
    fn samples_large_tensors() {
        let mut p = ParameterSet::new();
        p.insert("w", Tensor::filled(&[20, 20], 0.1)).unwrap();
        let report = finite_diff_report(&half_norm_sq(), &p, 1e-5, 7).unwrap();
        assert_eq!(report.coords_checked, MIN_COORDS_PER_TENSOR);
    }

    #[test]
    fn detects_wrong_gradient() {
        let wrong = FnObjective {
            loss: |p: &ParameterSet| Ok(0.5 * p.l2_norm().powi(2)),
            gradient: |p: &ParameterSet| p.zip_map(p, "scale", |a, _| 1.01 * a),
        };
        let err = finite_diff_check(&wrong, &params(&[1.0, 2.0]), 1e-5, 0).unwrap();
        assert!(err > 5e-3);
    }

    #[test]
    fn nan_loss_is_numeric_failure() {
        let bad = FnObjective {
            loss: |_: &ParameterSet| Ok(f64::NAN),
            gradient: |p: &ParameterSet| Ok(p.clone()),
        };
        let err = finite_diff_check(&bad, &params(&[1.0]), 1e-5, 0).unwrap_err();
        assert!(err.is_numeric());
    }
}
