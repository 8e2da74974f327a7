//! Posterior prediction with the sparse-spectrum feature model or the exact
//! SM kernel, and RMSE / MNLL evaluation.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::data::DENSE_CAP;
use crate::error::{Error, Result};
use crate::inference::likelihood::LowRankSystem;
use crate::kernel::{feature_map, sm_cross_gram, sm_gram, SmParams, SpectralSample};
use crate::linalg::cholesky_with_jitter;
use crate::rng::SplitRng;
use crate::sampling::{draw_sample, Allocation};

/// Gaussian predictive distribution per test point; variance includes observation noise.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictive {
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
    /// Per-point log densities, filled by [`Predictive::score`].
    pub log_density: Option<DVector<f64>>,
}

fn gaussian_log_density(y: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * PI * var).ln() + (y - mean).powi(2) / var)
}

impl Predictive {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Records per-point log densities of `y`.
    pub fn score(&mut self, y: &DVector<f64>) -> Result<()> {
        if y.len() != self.len() {
            return Err(Error::Shape(format!("{} targets for {} predictions", y.len(), self.len())));
        }
        self.log_density = Some(DVector::from_fn(self.len(), |i, _| {
            gaussian_log_density(y[i], self.mean[i], self.variance[i])
        }));
        Ok(())
    }
}

fn check_train(x: &DMatrix<f64>, y: &DVector<f64>, x_test: &DMatrix<f64>) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!("{} training inputs, {} targets", x.nrows(), y.len())));
    }
    if x.ncols() != x_test.ncols() {
        return Err(Error::Shape(format!(
            "training inputs have {} columns, test inputs {}",
            x.ncols(),
            x_test.ncols()
        )));
    }
    Ok(())
}

/// Bayesian linear model on the random features:
/// mean `phi* A^{-1} Phi^T Y`, variance `s2 (1 + phi* A^{-1} phi*^T)`, `A = Phi^T Phi + s2 I`.
///
/// When there are more features than training points the same moments are
/// computed from the N x N system `Phi Phi^T + s2 I` instead.
pub fn ssgp_predict(
    params: &SmParams,
    sample: &SpectralSample,
    x_train: &DMatrix<f64>,
    y_train: &DVector<f64>,
    x_test: &DMatrix<f64>,
) -> Result<Predictive> {
    check_train(x_train, y_train, x_test)?;
    let phi = feature_map(params, sample, x_train)?;
    let phi_star = feature_map(params, sample, x_test)?.values;
    if phi.values.ncols() > x_train.nrows() {
        return dual_predict(&phi.values, &phi_star, y_train, params.noise_var);
    }
    let sys = LowRankSystem::new(&phi.values, y_train, params.noise_var)?;
    let mean = &phi_star * &sys.beta;
    // Columns of L^{-1} phi*^T give the quadratic forms as squared norms.
    let v = sys
        .chol
        .l()
        .solve_lower_triangular(&phi_star.transpose())
        .ok_or_else(|| Error::Internal("singular Cholesky factor".into()))?;
    let variance = DVector::from_fn(x_test.nrows(), |i, _| {
        params.noise_var * (1.0 + v.column(i).norm_squared())
    });
    Ok(Predictive {
        mean,
        variance,
        log_density: None,
    })
}

/// Uses `s2 A^{-1} = I - Phi^T (Phi Phi^T + s2 I)^{-1} Phi`.
fn dual_predict(phi: &DMatrix<f64>, phi_star: &DMatrix<f64>, y: &DVector<f64>, noise_var: f64) -> Result<Predictive> {
    let mut k = phi * phi.transpose();
    for i in 0..k.nrows() {
        k[(i, i)] += noise_var;
    }
    let (chol, _) = cholesky_with_jitter(&k)?;
    let cross = phi * phi_star.transpose();
    let mean = cross.tr_mul(&chol.solve(y));
    let v = chol
        .l()
        .solve_lower_triangular(&cross)
        .ok_or_else(|| Error::Internal("singular Cholesky factor".into()))?;
    let variance = DVector::from_fn(phi_star.nrows(), |i, _| {
        (phi_star.row(i).norm_squared() - v.column(i).norm_squared()).max(0.0) + noise_var
    });
    Ok(Predictive {
        mean,
        variance,
        log_density: None,
    })
}

/// Averages `samples` independent draws by moment matching: mean of means,
/// variance `E[var + mean^2] - mean^2`.
pub fn ssgp_predict_averaged(
    params: &SmParams,
    allocation: &Allocation,
    samples: usize,
    rng: &mut SplitRng,
    x_train: &DMatrix<f64>,
    y_train: &DVector<f64>,
    x_test: &DMatrix<f64>,
) -> Result<Predictive> {
    if samples == 0 {
        return Err(Error::Config("at least one sample required".into()));
    }
    let n = x_test.nrows();
    let mut first = DVector::zeros(n);
    let mut second = DVector::zeros(n);
    for _ in 0..samples {
        let s = draw_sample(params, allocation, rng)?;
        let p = ssgp_predict(params, &s, x_train, y_train, x_test)?;
        first += &p.mean;
        second += p.variance + p.mean.component_mul(&p.mean);
    }
    let k = samples as f64;
    let mean = first / k;
    let variance = DVector::from_fn(n, |i, _| {
        (second[i] / k - mean[i] * mean[i]).max(params.noise_var)
    });
    Ok(Predictive {
        mean,
        variance,
        log_density: None,
    })
}

/// Dense GP regression with the exact SM kernel; refuses more than
/// [`DENSE_CAP`] training points.
pub fn exact_predict(
    params: &SmParams,
    x_train: &DMatrix<f64>,
    y_train: &DVector<f64>,
    x_test: &DMatrix<f64>,
) -> Result<Predictive> {
    check_train(x_train, y_train, x_test)?;
    if x_train.nrows() > DENSE_CAP {
        return Err(Error::TooLarge {
            n: x_train.nrows(),
            cap: DENSE_CAP,
        });
    }
    let mut k = sm_gram(params, x_train)?;
    for i in 0..k.nrows() {
        k[(i, i)] += params.noise_var;
    }
    let (chol, _) = cholesky_with_jitter(&k)?;
    let k_star = sm_cross_gram(params, x_train, x_test)?;
    let alpha = chol.solve(y_train);
    let mean = k_star.tr_mul(&alpha);
    let v = chol
        .l()
        .solve_lower_triangular(&k_star)
        .ok_or_else(|| Error::Internal("singular Cholesky factor".into()))?;
    let prior_var = params.total_weight();
    let variance = DVector::from_fn(x_test.nrows(), |i, _| {
        (prior_var - v.column(i).norm_squared()).max(0.0) + params.noise_var
    });
    Ok(Predictive {
        mean,
        variance,
        log_density: None,
    })
}

/// `(rmse, mnll)` of `pred` against `y`.
pub fn metrics(pred: &Predictive, y: &DVector<f64>) -> Result<(f64, f64)> {
    if y.len() != pred.len() || y.is_empty() {
        return Err(Error::Shape(format!("{} targets for {} predictions", y.len(), pred.len())));
    }
    let n = y.len() as f64;
    let mse = (0..y.len()).map(|i| (y[i] - pred.mean[i]).powi(2)).sum::<f64>() / n;
    let mnll = -(0..y.len())
        .map(|i| gaussian_log_density(y[i], pred.mean[i], pred.variance[i]))
        .sum::<f64>()
        / n;
    Ok((mse.sqrt(), mnll))
}

/// CSV with columns `index, mean, variance[, target, nll]`.
pub fn write_predictions(path: impl AsRef<Path>, pred: &Predictive, targets: Option<&DVector<f64>>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    if targets.is_some() {
        writeln!(out, "index,mean,variance,target,nll").map_err(io)?;
    } else {
        writeln!(out, "index,mean,variance").map_err(io)?;
    }
    for i in 0..pred.len() {
        let (m, v) = (pred.mean[i], pred.variance[i]);
        match targets {
            Some(y) => {
                let nll = -gaussian_log_density(y[i], m, v);
                writeln!(out, "{i},{m},{v},{},{nll}", y[i]).map_err(io)?;
            }
            None => writeln!(out, "{i},{m},{v}").map_err(io)?,
        }
    }
    out.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{allocate, equal_ratios};

    fn setup() -> (SmParams, DMatrix<f64>, DMatrix<f64>) {
        let p = SmParams::one_dim(&[1.0, 0.5], &[0.2, 0.9], &[0.1, 0.2], 0.05).unwrap();
        let x = DMatrix::from_fn(12, 1, |i, _| i as f64 * 0.3);
        let xt = DMatrix::from_fn(5, 1, |i, _| i as f64 * 0.7 + 0.1);
        (p, x, xt)
    }

    #[test]
    fn zero_targets_give_zero_mean() {
        let (p, x, xt) = setup();
        let s = draw_sample(&p, &allocate(&equal_ratios(2), 8).unwrap(), &mut SplitRng::new(2)).unwrap();
        let pred = ssgp_predict(&p, &s, &x, &DVector::zeros(12), &xt).unwrap();
        assert!(pred.mean.iter().all(|m| *m == 0.0));
        assert!(pred.variance.iter().all(|v| *v > p.noise_var));
    }

    #[test]
    fn single_point_exact() {
        let p = SmParams::one_dim(&[2.0], &[0.3], &[0.1], 0.5).unwrap();
        let x = DMatrix::from_element(1, 1, 0.4);
        let y = DVector::from_element(1, 1.5);
        let pred = exact_predict(&p, &x, &y, &x).unwrap();
        assert!((pred.mean[0] - 1.5 * 2.0 / 2.5).abs() < 1e-14);
        assert!((pred.variance[0] - (2.0 - 4.0 / 2.5 + 0.5)).abs() < 1e-14);
    }

    #[test]
    fn far_points_revert_to_prior() {
        let p = SmParams::one_dim(&[2.0], &[0.3], &[0.1], 0.5).unwrap();
        let x = DMatrix::from_column_slice(2, 1, &[0.0, 0.5]);
        let y = DVector::from_vec(vec![1.0, -1.0]);
        let pred = exact_predict(&p, &x, &y, &DMatrix::from_element(1, 1, 1e3)).unwrap();
        assert!(pred.mean[0].abs() < 1e-12);
        assert!((pred.variance[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn metrics_examples() {
        let pred = Predictive {
            mean: DVector::from_vec(vec![1.0, 2.0]),
            variance: DVector::from_element(2, 0.25),
            log_density: None,
        };
        let (rmse, mnll) = metrics(&pred, &DVector::from_vec(vec![1.0, 2.0])).unwrap();
        assert_eq!(rmse, 0.0);
        assert!((mnll - 0.5 * (2.0 * PI * 0.25).ln()).abs() < 1e-15);
        assert!(metrics(&pred, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn dual_form_matches_primal() {
        let (p, x, xt) = setup();
        let y = DVector::from_fn(12, |i, _| (i as f64).sin());
        let s = draw_sample(&p, &allocate(&equal_ratios(2), 4).unwrap(), &mut SplitRng::new(9)).unwrap();
        let primal = ssgp_predict(&p, &s, &x, &y, &xt).unwrap();
        let phi = feature_map(&p, &s, &x).unwrap().values;
        let phi_star = feature_map(&p, &s, &xt).unwrap().values;
        let dual = dual_predict(&phi, &phi_star, &y, p.noise_var).unwrap();
        for i in 0..5 {
            assert!((primal.mean[i] - dual.mean[i]).abs() < 1e-10);
            assert!((primal.variance[i] - dual.variance[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn averaged_with_one_sample_matches_single() {
        let (p, x, xt) = setup();
        let y = DVector::from_fn(12, |i, _| (i as f64).cos());
        let alloc = allocate(&equal_ratios(2), 8).unwrap();
        let avg = ssgp_predict_averaged(&p, &alloc, 1, &mut SplitRng::new(4), &x, &y, &xt).unwrap();
        let s = draw_sample(&p, &alloc, &mut SplitRng::new(4)).unwrap();
        let one = ssgp_predict(&p, &s, &x, &y, &xt).unwrap();
        for i in 0..5 {
            assert!((avg.mean[i] - one.mean[i]).abs() < 1e-12);
            assert!((avg.variance[i] - one.variance[i]).abs() < 1e-9);
        }
    }
}
