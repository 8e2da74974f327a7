//! Conditional log marginal likelihood `log N(Y; 0, Phi Phi^T + s2 I)` through
//! the 2M x 2M system `A = Phi^T Phi + s2 I`, without forming the N x N covariance.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::kernel::{FeatureMatrix, SmParams};
use crate::linalg::{cholesky_with_jitter, log_det};

/// Factorized feature system shared by the likelihood, its gradient and the predictor.
pub struct LowRankSystem {
    pub chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
    pub noise_var: f64,
    /// `Phi^T Y`.
    pub phi_t_y: DVector<f64>,
    /// `A^{-1} Phi^T Y`.
    pub beta: DVector<f64>,
}

impl LowRankSystem {
    pub fn new(phi: &DMatrix<f64>, y: &DVector<f64>, noise_var: f64) -> Result<Self> {
        if phi.nrows() != y.len() {
            return Err(Error::Shape(format!(
                "feature matrix has {} rows, targets have {}",
                phi.nrows(),
                y.len()
            )));
        }
        let mut a = phi.tr_mul(phi);
        for i in 0..a.nrows() {
            a[(i, i)] += noise_var;
        }
        let (chol, jitter) = cholesky_with_jitter(&a)?;
        let phi_t_y = phi.tr_mul(y);
        let beta = chol.solve(&phi_t_y);
        Ok(LowRankSystem {
            chol,
            jitter,
            noise_var,
            phi_t_y,
            beta,
        })
    }

    pub fn features(&self) -> usize {
        self.phi_t_y.len()
    }

    /// Log density of `y` given the factorization built from the same `y`.
    pub fn log_density(&self, y: &DVector<f64>) -> f64 {
        let n = y.len() as f64;
        let k = self.features() as f64;
        let quad = (y.norm_squared() - self.phi_t_y.dot(&self.beta)) / self.noise_var;
        let logdet = (n - k) * self.noise_var.ln() + log_det(&self.chol);
        -0.5 * (n * (2.0 * PI).ln() + logdet + quad)
    }
}

/// `log N(Y; 0, Phi Phi^T + noise_var I)` in O(N M^2 + M^3).
pub fn log_marginal(params: &SmParams, phi: &FeatureMatrix<'_>, y: &DVector<f64>) -> Result<f64> {
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::Data("non-finite target".into()));
    }
    let sys = LowRankSystem::new(&phi.values, y, params.noise_var)?;
    Ok(sys.log_density(y))
}

/// Gradient of the log marginal with respect to `Phi` and the noise variance.
pub struct MarginalGradient {
    pub value: f64,
    /// `(S^{-1} Y Y^T S^{-1} - S^{-1}) Phi`, N x 2M.
    pub d_phi: DMatrix<f64>,
    pub d_noise_var: f64,
}

pub fn log_marginal_with_gradient(phi: &DMatrix<f64>, y: &DVector<f64>, noise_var: f64) -> Result<MarginalGradient> {
    let sys = LowRankSystem::new(phi, y, noise_var)?;
    let value = sys.log_density(y);
    let n = y.len() as f64;
    let k = sys.features() as f64;
    // S^{-1} Y = (Y - Phi beta) / s2 and S^{-1} Phi = Phi A^{-1}.
    let alpha = (y - phi * &sys.beta) / noise_var;
    let a_inv = sys.chol.inverse();
    let phi_a_inv = phi * &a_inv;
    let alpha_t_phi = phi.tr_mul(&alpha).transpose();
    let d_phi = &alpha * alpha_t_phi - phi_a_inv;
    let trace_s_inv = (n - k) / noise_var + a_inv.trace();
    let d_noise_var = 0.5 * (alpha.norm_squared() - trace_s_inv);
    Ok(MarginalGradient {
        value,
        d_phi,
        d_noise_var,
    })
}
