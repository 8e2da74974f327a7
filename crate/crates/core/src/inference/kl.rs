//! KL divergence between the variational distribution of spectral points and
//! their Gaussian prior.
//!
//! The variational distribution places every point of component q at
//! `N(mu_q, diag sigma_q^2)`. The prior for point i of component q is
//! `N(prior_mean_qi, diag prior_scale_qi^2)`; when a component stores fewer
//! prior rows than it has points, rows are reused cyclically (`i mod rows`),
//! so a single row per component acts as a replicated prior.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernel::SmParams;
use crate::sampling::Allocation;

#[derive(Clone, Debug, PartialEq)]
pub struct ComponentPrior {
    /// Per-point prior means, rows x D.
    pub means: DMatrix<f64>,
    /// Per-point prior standard deviations, rows x D.
    pub scales: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriorSpec {
    pub components: Vec<ComponentPrior>,
}

impl PriorSpec {
    /// One prior row per component: centered on `params`' means with scales
    /// multiplied by `scale_factor`.
    pub fn replicated(params: &SmParams, scale_factor: f64) -> Self {
        let d = params.dims();
        let components = (0..params.q())
            .map(|q| ComponentPrior {
                means: DMatrix::from_fn(1, d, |_, k| params.means[(q, k)]),
                scales: DMatrix::from_fn(1, d, |_, k| params.scales[(q, k)] * scale_factor),
            })
            .collect();
        PriorSpec { components }
    }

    /// The variational distribution itself as a prior (KL = 0).
    pub fn matching(params: &SmParams) -> Self {
        Self::replicated(params, 1.0)
    }

    pub fn validate(&self, params: &SmParams) -> Result<()> {
        if self.components.len() != params.q() {
            return Err(Error::Shape(format!(
                "prior has {} components, kernel has {}",
                self.components.len(),
                params.q()
            )));
        }
        for (q, c) in self.components.iter().enumerate() {
            if c.means.nrows() == 0
                || c.means.shape() != c.scales.shape()
                || c.means.ncols() != params.dims()
            {
                return Err(Error::Shape(format!("prior component {q} has inconsistent shape")));
            }
            if c.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                return Err(Error::InvalidParams(format!("prior component {q} has a non-positive scale")));
            }
        }
        Ok(())
    }
}

/// Diagonal-Gaussian KL for one coordinate: `KL(N(m, s^2) || N(pm, ps^2))`.
fn kl_1d(m: f64, s: f64, pm: f64, ps: f64) -> f64 {
    let r = s / ps;
    let z = (m - pm) / ps;
    0.5 * (r * r + z * z - 1.0) - r.ln()
}

pub fn kl_term(params: &SmParams, prior: &PriorSpec, alloc: &Allocation) -> Result<f64> {
    prior.validate(params)?;
    if alloc.counts.len() != params.q() {
        return Err(Error::Shape("allocation does not match kernel components".into()));
    }
    let mut total = 0.0;
    for (q, comp) in prior.components.iter().enumerate() {
        for i in 0..alloc.counts[q] {
            let row = i % comp.means.nrows();
            for d in 0..params.dims() {
                total += kl_1d(
                    params.means[(q, d)],
                    params.scales[(q, d)],
                    comp.means[(row, d)],
                    comp.scales[(row, d)],
                );
            }
        }
    }
    Ok(total.max(0.0))
}

/// Gradients of the KL with respect to `log mu` and `log sigma`, each Q x D.
pub fn kl_log_gradients(
    params: &SmParams,
    prior: &PriorSpec,
    alloc: &Allocation,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    prior.validate(params)?;
    let (q_n, d_n) = (params.q(), params.dims());
    let mut d_log_mu = DMatrix::zeros(q_n, d_n);
    let mut d_log_sigma = DMatrix::zeros(q_n, d_n);
    for (q, comp) in prior.components.iter().enumerate() {
        for i in 0..alloc.counts[q] {
            let row = i % comp.means.nrows();
            for d in 0..d_n {
                let (m, s) = (params.means[(q, d)], params.scales[(q, d)]);
                let (pm, ps) = (comp.means[(row, d)], comp.scales[(row, d)]);
                d_log_mu[(q, d)] += m * (m - pm) / (ps * ps);
                d_log_sigma[(q, d)] += s * s / (ps * ps) - 1.0;
            }
        }
    }
    Ok((d_log_mu, d_log_sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::allocate;

    #[test]
    fn identical_prior_is_zero() {
        let p = SmParams::one_dim(&[1.0, 2.0], &[0.3, 1.2], &[0.1, 0.4], 0.1).unwrap();
        let a = allocate(&[0.5, 0.5], 8).unwrap();
        assert_eq!(kl_term(&p, &PriorSpec::matching(&p), &a).unwrap(), 0.0);
    }

    #[test]
    fn unit_shift() {
        let p = SmParams::one_dim(&[1.0], &[1.0], &[1.0], 0.1).unwrap();
        let prior = PriorSpec {
            components: vec![ComponentPrior {
                means: DMatrix::from_element(1, 1, 0.0),
                scales: DMatrix::from_element(1, 1, 1.0),
            }],
        };
        let a = allocate(&[1.0], 1).unwrap();
        assert!((kl_term(&p, &prior, &a).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cyclic_prior_rows() {
        let p = SmParams::one_dim(&[1.0], &[1.0], &[1.0], 0.1).unwrap();
        let prior = PriorSpec {
            components: vec![ComponentPrior {
                means: DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
                scales: DMatrix::from_element(2, 1, 1.0),
            }],
        };
        let a = allocate(&[1.0], 3).unwrap();
        // Rows used: 0, 1, 0 -> 0 + 0.5 + 0.
        assert!((kl_term(&p, &prior, &a).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mean_gradient_matches_hand_derivative() {
        // d/dlog(mu) of m * [(mu - pm)^2 / (2 ps^2)] = m * mu (mu - pm) / ps^2.
        let p = SmParams::one_dim(&[1.0], &[0.7], &[0.2], 0.1).unwrap();
        let prior = PriorSpec {
            components: vec![ComponentPrior {
                means: DMatrix::from_element(1, 1, 0.4),
                scales: DMatrix::from_element(1, 1, 0.5),
            }],
        };
        let a = allocate(&[1.0], 3).unwrap();
        let (gm, gs) = kl_log_gradients(&p, &prior, &a).unwrap();
        let expect_mu = 3.0 * 0.7 * (0.7 - 0.4) / 0.25;
        let expect_sigma = 3.0 * (0.04 / 0.25 - 1.0);
        assert!((gm[(0, 0)] - expect_mu).abs() < 1e-14);
        assert!((gs[(0, 0)] - expect_sigma).abs() < 1e-14);
    }

    #[test]
    fn mismatched_prior_rejected() {
        let p = SmParams::one_dim(&[1.0, 2.0], &[0.3, 1.2], &[0.1, 0.4], 0.1).unwrap();
        let single = SmParams::one_dim(&[1.0], &[0.3], &[0.1], 0.1).unwrap();
        let a = allocate(&[0.5, 0.5], 4).unwrap();
        assert!(kl_term(&p, &PriorSpec::matching(&single), &a).is_err());
    }
}
