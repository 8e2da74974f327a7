//! Spectral mixture kernel, its gram matrix, and the random Fourier feature map.
//!
//! The kernel is
//!
//! ```text
//! k(tau) = sum_q w_q * exp(-2 pi^2 * sum_d (sigma_qd * tau_d)^2) * cos(2 pi * mu_q . tau)
//! ```
//!
//! Note the envelope is the separable form `sum_d (sigma_qd tau_d)^2`, which is
//! the Fourier transform of a diagonal Gaussian spectral density. The
//! squared-dot-product form `(sigma_q . tau)^2` coincides with it only when D = 1.
//!
//! Frequencies (`means`, `scales`, spectral points) are in cycles per input unit.

use std::f64::consts::PI;

use nalgebra::{DMatrix, RowDVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sampling::Allocation;

const TWO_PI: f64 = 2.0 * PI;
const TWO_PI_SQ: f64 = 2.0 * PI * PI;

/// Rows above this count are built in parallel.
const PAR_ROWS: usize = 512;

/// Parameters of a Q-component SM kernel on D-dimensional inputs, plus the
/// Gaussian observation noise variance.
#[derive(Clone, Debug, PartialEq)]
pub struct SmParams {
    /// Mixture weights `w_q`, length Q.
    pub weights: Vec<f64>,
    /// Spectral means `mu_q`, Q x D.
    pub means: DMatrix<f64>,
    /// Spectral standard deviations `sigma_q`, Q x D.
    pub scales: DMatrix<f64>,
    pub noise_var: f64,
}

impl SmParams {
    pub fn new(
        weights: Vec<f64>,
        means: DMatrix<f64>,
        scales: DMatrix<f64>,
        noise_var: f64,
    ) -> Result<Self> {
        let params = SmParams {
            weights,
            means,
            scales,
            noise_var,
        };
        params.validate()?;
        Ok(params)
    }

    /// Convenience constructor for one-dimensional inputs.
    pub fn one_dim(weights: &[f64], means: &[f64], scales: &[f64], noise_var: f64) -> Result<Self> {
        let q = weights.len();
        if means.len() != q || scales.len() != q {
            return Err(Error::Shape(format!(
                "{} weights, {} means, {} scales",
                q,
                means.len(),
                scales.len()
            )));
        }
        Self::new(
            weights.to_vec(),
            DMatrix::from_column_slice(q, 1, means),
            DMatrix::from_column_slice(q, 1, scales),
            noise_var,
        )
    }

    pub fn q(&self) -> usize {
        self.weights.len()
    }

    pub fn dims(&self) -> usize {
        self.means.ncols()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.weights.len();
        if q == 0 {
            return Err(Error::InvalidParams("at least one component required".into()));
        }
        if self.means.nrows() != q || self.scales.nrows() != q {
            return Err(Error::Shape(format!(
                "{q} weights but means {}x{} and scales {}x{}",
                self.means.nrows(),
                self.means.ncols(),
                self.scales.nrows(),
                self.scales.ncols()
            )));
        }
        if self.means.ncols() == 0 || self.means.ncols() != self.scales.ncols() {
            return Err(Error::Shape(format!(
                "means have {} columns, scales have {}",
                self.means.ncols(),
                self.scales.ncols()
            )));
        }
        if let Some(w) = self.weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidParams(format!("weight {w} is not positive")));
        }
        if let Some(m) = self.means.iter().find(|m| !(m.is_finite() && **m >= 0.0)) {
            return Err(Error::InvalidParams(format!("mean {m} is negative or non-finite")));
        }
        if let Some(s) = self.scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::InvalidParams(format!("scale {s} is not positive")));
        }
        if !(self.noise_var.is_finite() && self.noise_var > 0.0) {
            return Err(Error::InvalidParams(format!(
                "noise variance {} is not positive",
                self.noise_var
            )));
        }
        Ok(())
    }

    /// Normalized single-component kernel `k_q(tau)` (unit weight).
    pub fn component_kernel(&self, q: usize, tau: &[f64]) -> f64 {
        let mut envelope = 0.0;
        let mut phase = 0.0;
        for (d, &t) in tau.iter().enumerate() {
            let s = self.scales[(q, d)] * t;
            envelope += s * s;
            phase += self.means[(q, d)] * t;
        }
        (-TWO_PI_SQ * envelope).exp() * (TWO_PI * phase).cos()
    }

    fn check_dims(&self, d: usize) -> Result<()> {
        if d != self.dims() {
            return Err(Error::Shape(format!(
                "input has {d} dimensions, kernel has {}",
                self.dims()
            )));
        }
        Ok(())
    }
}

/// SM kernel value at lag `tau`.
pub fn sm_kernel(params: &SmParams, tau: &[f64]) -> Result<f64> {
    params.check_dims(tau.len())?;
    Ok(kernel_unchecked(params, tau))
}

fn kernel_unchecked(params: &SmParams, tau: &[f64]) -> f64 {
    params
        .weights
        .iter()
        .enumerate()
        .map(|(q, w)| w * params.component_kernel(q, tau))
        .sum()
}

/// Exact N x N gram matrix of the SM kernel on the rows of `x`.
pub fn sm_gram(params: &SmParams, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    sm_cross_gram(params, x, x).map(|mut k| {
        let diag = params.total_weight();
        let n = k.nrows();
        for i in 0..n {
            k[(i, i)] = diag;
            for j in 0..i {
                k[(i, j)] = k[(j, i)];
            }
        }
        k
    })
}

/// Cross-covariance `K[i, j] = k(a_i - b_j)`.
pub fn sm_cross_gram(params: &SmParams, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    params.check_dims(a.ncols())?;
    params.check_dims(b.ncols())?;
    let (n, m, d) = (a.nrows(), b.nrows(), a.ncols());
    let row = |i: usize| -> Vec<f64> {
        let mut tau = vec![0.0; d];
        (0..m)
            .map(|j| {
                for (k, t) in tau.iter_mut().enumerate() {
                    *t = a[(i, k)] - b[(j, k)];
                }
                kernel_unchecked(params, &tau)
            })
            .collect()
    };
    let rows: Vec<Vec<f64>> = if n >= PAR_ROWS {
        (0..n).into_par_iter().map(row).collect()
    } else {
        (0..n).map(row).collect()
    };
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

/// One reparameterized draw of spectral points, grouped by component.
///
/// Row `i` satisfies `points[i] = means[c] + scales[c] * noise[i]` with
/// `c = component_of[i]`, evaluated exactly as written.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralSample {
    pub points: DMatrix<f64>,
    /// Zero-based component index of each row.
    pub component_of: Vec<usize>,
    pub noise: DMatrix<f64>,
    pub allocation: Allocation,
}

impl SpectralSample {
    /// Builds the sample from standard-normal `noise` (M x D, grouped by the allocation).
    pub fn from_noise(params: &SmParams, allocation: &Allocation, noise: DMatrix<f64>) -> Result<Self> {
        let m = allocation.total;
        if noise.nrows() != m || noise.ncols() != params.dims() {
            return Err(Error::Shape(format!(
                "noise is {}x{}, allocation needs {}x{}",
                noise.nrows(),
                noise.ncols(),
                m,
                params.dims()
            )));
        }
        if allocation.counts.len() != params.q() {
            return Err(Error::InvalidSample(format!(
                "allocation covers {} components, kernel has {}",
                allocation.counts.len(),
                params.q()
            )));
        }
        let component_of = allocation.component_index();
        let points = DMatrix::from_fn(m, params.dims(), |i, d| {
            let c = component_of[i];
            params.means[(c, d)] + params.scales[(c, d)] * noise[(i, d)]
        });
        Ok(SpectralSample {
            points,
            component_of,
            noise,
            allocation: allocation.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    /// Checks that the points are exactly the reparameterization of `params`.
    pub fn check_matches(&self, params: &SmParams) -> Result<()> {
        if self.points.ncols() != params.dims() || self.allocation.counts.len() != params.q() {
            return Err(Error::StaleSample { point: 0, dim: 0 });
        }
        for i in 0..self.len() {
            let c = self.component_of[i];
            for d in 0..params.dims() {
                let expect = params.means[(c, d)] + params.scales[(c, d)] * self.noise[(i, d)];
                if expect.to_bits() != self.points[(i, d)].to_bits() {
                    return Err(Error::StaleSample { point: i, dim: d });
                }
            }
        }
        Ok(())
    }
}

/// Random feature matrix `Phi` (N x 2M); `Phi Phi^T` estimates the SM gram.
#[derive(Clone, Debug)]
pub struct FeatureMatrix<'s> {
    pub values: DMatrix<f64>,
    pub sample: &'s SpectralSample,
}

impl FeatureMatrix<'_> {
    pub fn gram(&self) -> DMatrix<f64> {
        &self.values * self.values.transpose()
    }
}

/// Builds `Phi` whose row n holds, for each component block q and point i,
/// `sqrt(w_q / m_q) * [cos(2 pi s_qi . x_n), sin(2 pi s_qi . x_n)]`.
pub fn feature_map<'s>(
    params: &SmParams,
    sample: &'s SpectralSample,
    x: &DMatrix<f64>,
) -> Result<FeatureMatrix<'s>> {
    params.check_dims(x.ncols())?;
    if sample.points.ncols() != params.dims() || sample.allocation.counts.len() != params.q() {
        return Err(Error::InvalidSample(format!(
            "sample has {} components in {} dims, kernel has {} in {}",
            sample.allocation.counts.len(),
            sample.points.ncols(),
            params.q(),
            params.dims()
        )));
    }
    if let Some(q) = sample.allocation.counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidSample(format!("component {q} has no spectral points")));
    }
    let m = sample.len();
    let amp: Vec<f64> = sample
        .component_of
        .iter()
        .map(|&c| (params.weights[c] / sample.allocation.counts[c] as f64).sqrt())
        .collect();
    let row = |n: usize| -> RowDVector<f64> {
        let mut out = RowDVector::zeros(2 * m);
        for i in 0..m {
            let mut phase = 0.0;
            for d in 0..x.ncols() {
                phase += sample.points[(i, d)] * x[(n, d)];
            }
            let (s, c) = (TWO_PI * phase).sin_cos();
            out[2 * i] = amp[i] * c;
            out[2 * i + 1] = amp[i] * s;
        }
        out
    };
    let rows: Vec<RowDVector<f64>> = if x.nrows() >= PAR_ROWS {
        (0..x.nrows()).into_par_iter().map(row).collect()
    } else {
        (0..x.nrows()).map(row).collect()
    };
    let values = if rows.is_empty() {
        DMatrix::zeros(0, 2 * m)
    } else {
        DMatrix::from_rows(&rows)
    };
    Ok(FeatureMatrix { values, sample })
}

/// Probability bound on `||Phi Phi^T - K||_2 >= eps` for the SM random
/// features, `N exp(-3 eps^2 m0 / (W0 N (6 ||K||_2 + 4 eps)))` with
/// `W0 = ||w||_2` and `m0` the smallest per-component count. Clamped to 1.
pub fn concentration_bound(params: &SmParams, n: usize, m0: usize, k_norm: f64, eps: f64) -> f64 {
    let w0 = params.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
    let n = n as f64;
    let exponent = -3.0 * eps * eps * m0 as f64 / (w0 * n * (6.0 * k_norm + 4.0 * eps));
    (n * exponent.exp()).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitRng;
    use crate::sampling::{allocate, draw_sample, equal_ratios};

    fn two_component() -> SmParams {
        SmParams::one_dim(&[1.5, 0.5], &[0.2, 1.0], &[0.1, 0.3], 0.1).unwrap()
    }

    #[test]
    fn kernel_at_zero_is_total_weight() {
        let p = two_component();
        assert_eq!(sm_kernel(&p, &[0.0]).unwrap(), 2.0);
    }

    #[test]
    fn zero_mean_component_is_squared_exponential() {
        let s = 0.37;
        let p = SmParams::one_dim(&[1.0], &[0.0], &[s], 1.0).unwrap();
        for &tau in &[0.1, 0.5, 1.3, -2.0] {
            let expect = (-2.0 * PI * PI * s * s * tau * tau).exp();
            assert!((sm_kernel(&p, &[tau]).unwrap() - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let p = two_component();
        assert!(matches!(sm_kernel(&p, &[0.0, 1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(SmParams::one_dim(&[0.0], &[0.1], &[0.1], 1.0).is_err());
        assert!(SmParams::one_dim(&[1.0], &[-0.1], &[0.1], 1.0).is_err());
        assert!(SmParams::one_dim(&[1.0], &[0.1], &[0.0], 1.0).is_err());
        assert!(SmParams::one_dim(&[1.0], &[0.1], &[0.1], 0.0).is_err());
        assert!(SmParams::one_dim(&[1.0, 2.0], &[0.1], &[0.1], 1.0).is_err());
    }

    #[test]
    fn gram_single_point_and_duplicates() {
        let p = two_component();
        let k = sm_gram(&p, &DMatrix::from_element(1, 1, 0.3)).unwrap();
        assert_eq!(k.shape(), (1, 1));
        assert_eq!(k[(0, 0)], 2.0);
        let x = DMatrix::from_column_slice(3, 1, &[0.4, 1.0, 0.4]);
        let k = sm_gram(&p, &x).unwrap();
        assert_eq!(k[(0, 2)], 2.0);
        assert_eq!(k[(0, 1)], k[(1, 0)]);
    }

    #[test]
    fn zero_input_row_has_unit_cosines() {
        let p = two_component();
        let alloc = allocate(&equal_ratios(2), 4).unwrap();
        let sample = draw_sample(&p, &alloc, &mut SplitRng::new(3)).unwrap();
        let x = DMatrix::zeros(1, 1);
        let phi = feature_map(&p, &sample, &x).unwrap();
        let a0 = (1.5f64 / 2.0).sqrt();
        let a1 = (0.5f64 / 2.0).sqrt();
        let expect = [a0, 0.0, a0, 0.0, a1, 0.0, a1, 0.0];
        for (v, e) in phi.values.iter().zip(expect) {
            assert_eq!(*v, e);
        }
    }

    #[test]
    fn feature_diagonal_is_total_weight() {
        let p = two_component();
        let alloc = allocate(&[0.7, 0.3], 9).unwrap();
        let sample = draw_sample(&p, &alloc, &mut SplitRng::new(11)).unwrap();
        let x = DMatrix::from_fn(7, 1, |i, _| i as f64 * 0.61 - 1.0);
        let phi = feature_map(&p, &sample, &x).unwrap();
        assert_eq!(phi.values.ncols(), 18);
        let g = phi.gram();
        for i in 0..7 {
            assert!((g[(i, i)] - 2.0).abs() < 1e-13);
        }
    }

    #[test]
    fn empty_component_is_invalid_sample() {
        let p = two_component();
        let alloc = Allocation {
            counts: vec![3, 0],
            ratios: vec![1.0, 0.0],
            total: 3,
        };
        let sample = SpectralSample::from_noise(&p, &alloc, DMatrix::zeros(3, 1)).unwrap();
        let err = feature_map(&p, &sample, &DMatrix::zeros(2, 1)).unwrap_err();
        assert!(matches!(err, Error::InvalidSample(_)));
    }

    #[test]
    fn bound_is_monotone_in_eps_and_linear_in_m0() {
        let p = two_component();
        let mut prev = f64::INFINITY;
        for k in 1..40 {
            let b = concentration_bound(&p, 20, 50, 5.0, k as f64 * 5.0);
            assert!(b <= prev);
            prev = b;
        }
        assert!(prev < 1e-3);
        let log_excess = |m0| (concentration_bound(&p, 20, m0, 5.0, 60.0) / 20.0).ln();
        let (a, b) = (log_excess(40), log_excess(80));
        assert!((b / a - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bound_clamped_to_one() {
        let p = two_component();
        assert_eq!(concentration_bound(&p, 20, 1, 5.0, 1e-3), 1.0);
    }
}
