//! Training objectives and their analytic gradients in the log domain.
//!
//! SVSS maximizes the regularized estimator
//! `(1/L) sum_l log p(Y | X, s_l) - KL(q || p)` with `s_l` reparameterized
//! draws. SS and SS+RP maximize the conditional log marginal alone, with
//! fixed or per-call noise respectively.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::inference::kl::{kl_log_gradients, kl_term, PriorSpec};
use crate::inference::likelihood::{log_marginal, log_marginal_with_gradient};
use crate::kernel::{feature_map, SmParams, SpectralSample};
use crate::rng::SplitRng;
use crate::sampling::{draw_sample, Allocation};

/// Floor applied to means before taking logs; a zero mean has no log-domain image.
pub const MIN_LOG_INPUT: f64 = 1e-300;
/// Log-domain values are clamped to this magnitude so that `exp` stays finite and positive.
pub const LOG_CLAMP: f64 = 700.0;

/// Positions of each parameter group in the flat log-domain vector
/// `[log w (Q), log mu (Q*D), log sigma (Q*D), log noise_std]`, row-major in (q, d).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub q: usize,
    pub d: usize,
}

impl ParamLayout {
    pub fn new(q: usize, d: usize) -> Self {
        ParamLayout { q, d }
    }

    pub fn of(params: &SmParams) -> Self {
        Self::new(params.q(), params.dims())
    }

    pub fn len(&self) -> usize {
        self.q + 2 * self.q * self.d + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn weight(&self, q: usize) -> usize {
        q
    }

    pub fn mean(&self, q: usize, d: usize) -> usize {
        self.q + q * self.d + d
    }

    pub fn scale(&self, q: usize, d: usize) -> usize {
        self.q + self.q * self.d + q * self.d + d
    }

    pub fn noise(&self) -> usize {
        self.q + 2 * self.q * self.d
    }

    pub fn to_log(&self, params: &SmParams) -> Vec<f64> {
        let mut v = vec![0.0; self.len()];
        for q in 0..self.q {
            v[self.weight(q)] = params.weights[q].ln();
            for d in 0..self.d {
                v[self.mean(q, d)] = params.means[(q, d)].max(MIN_LOG_INPUT).ln();
                v[self.scale(q, d)] = params.scales[(q, d)].ln();
            }
        }
        v[self.noise()] = 0.5 * params.noise_var.ln();
        v
    }

    pub fn from_log(&self, v: &[f64]) -> SmParams {
        let e = |x: f64| x.clamp(-LOG_CLAMP, LOG_CLAMP).exp();
        SmParams {
            weights: (0..self.q).map(|q| e(v[self.weight(q)])).collect(),
            means: DMatrix::from_fn(self.q, self.d, |q, d| e(v[self.mean(q, d)])),
            scales: DMatrix::from_fn(self.q, self.d, |q, d| e(v[self.scale(q, d)])),
            noise_var: e(2.0 * v[self.noise()]),
        }
    }
}

/// One evaluation of the SVSS objective.
#[derive(Clone, Debug)]
pub struct ElboEstimate {
    /// `log_lik - kl`.
    pub value: f64,
    /// Mean conditional log marginal over the draws.
    pub log_lik: f64,
    pub kl: f64,
    pub samples: Vec<SpectralSample>,
}

/// Monte-Carlo ELBO with `mc_samples` independent draws under `alloc`.
pub fn elbo(
    params: &SmParams,
    prior: &PriorSpec,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    alloc: &Allocation,
    mc_samples: usize,
    rng: &mut SplitRng,
) -> Result<ElboEstimate> {
    if mc_samples == 0 {
        return Err(Error::Config("at least one Monte-Carlo sample required".into()));
    }
    let samples = (0..mc_samples)
        .map(|_| draw_sample(params, alloc, rng))
        .collect::<Result<Vec<_>>>()?;
    elbo_with_samples(params, prior, x, y, samples)
}

/// ELBO evaluated on given draws; used to inject fixed noise.
pub fn elbo_with_samples(
    params: &SmParams,
    prior: &PriorSpec,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    samples: Vec<SpectralSample>,
) -> Result<ElboEstimate> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Config("at least one Monte-Carlo sample required".into()))?;
    let kl = kl_term(params, prior, &first.allocation)?;
    let mut log_lik = 0.0;
    for s in &samples {
        log_lik += log_marginal(params, &feature_map(params, s, x)?, y)?;
    }
    log_lik /= samples.len() as f64;
    Ok(ElboEstimate {
        value: log_lik - kl,
        log_lik,
        kl,
        samples,
    })
}

/// SS / SS+RP objective: the conditional log marginal for the sample built
/// from `noise` (fixed across calls for SS, fresh per call for SS+RP).
pub fn ss_objective(
    params: &SmParams,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    alloc: &Allocation,
    noise: DMatrix<f64>,
) -> Result<(f64, SpectralSample)> {
    let sample = SpectralSample::from_noise(params, alloc, noise)?;
    let value = log_marginal(params, &feature_map(params, &sample, x)?, y)?;
    Ok((value, sample))
}

/// Analytic gradient of the Monte-Carlo objective over the log-domain vector
/// (see [`ParamLayout`]). The KL term is included when `prior` is given.
///
/// Each sample must be the exact reparameterization of `params`; allocation
/// counts are treated as constants.
pub fn gradients(
    params: &SmParams,
    prior: Option<&PriorSpec>,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    samples: &[SpectralSample],
) -> Result<Vec<f64>> {
    let layout = ParamLayout::of(params);
    let mut grad = vec![0.0; layout.len()];
    let (q_n, d_n) = (params.q(), params.dims());
    if samples.is_empty() {
        return Err(Error::Config("gradient needs at least one sample".into()));
    }
    let scale = 1.0 / samples.len() as f64;
    for sample in samples {
        sample.check_matches(params)?;
        let phi = feature_map(params, sample, x)?;
        let mg = log_marginal_with_gradient(&phi.values, y, params.noise_var)?;
        let g = &mg.d_phi;
        let f = &phi.values;
        let mut d_mu = DMatrix::<f64>::zeros(q_n, d_n);
        let mut d_sigma = DMatrix::<f64>::zeros(q_n, d_n);
        for i in 0..sample.len() {
            let c = sample.component_of[i];
            let (ci, si) = (2 * i, 2 * i + 1);
            let mut d_w = 0.0;
            let mut d_s = vec![0.0; d_n];
            for n in 0..f.nrows() {
                let (fc, fs) = (f[(n, ci)], f[(n, si)]);
                let (gc, gs) = (g[(n, ci)], g[(n, si)]);
                d_w += gc * fc + gs * fs;
                // d cos(2 pi s.x) / ds = -2 pi x sin, d sin / ds = 2 pi x cos.
                let cross = gs * fc - gc * fs;
                for (d, acc) in d_s.iter_mut().enumerate() {
                    *acc += x[(n, d)] * cross;
                }
            }
            grad[layout.weight(c)] += scale * 0.5 * d_w;
            for d in 0..d_n {
                let ds = 2.0 * PI * d_s[d];
                d_mu[(c, d)] += ds;
                d_sigma[(c, d)] += ds * sample.noise[(i, d)];
            }
        }
        for q in 0..q_n {
            for d in 0..d_n {
                grad[layout.mean(q, d)] += scale * params.means[(q, d)] * d_mu[(q, d)];
                grad[layout.scale(q, d)] += scale * params.scales[(q, d)] * d_sigma[(q, d)];
            }
        }
        grad[layout.noise()] += scale * 2.0 * params.noise_var * mg.d_noise_var;
    }
    if let Some(prior) = prior {
        let (km, ks) = kl_log_gradients(params, prior, &samples[0].allocation)?;
        for q in 0..q_n {
            for d in 0..d_n {
                grad[layout.mean(q, d)] -= km[(q, d)];
                grad[layout.scale(q, d)] -= ks[(q, d)];
            }
        }
    }
    if let Some(bad) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Internal(format!("non-finite gradient at coordinate {bad}")));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{allocate, equal_ratios};

    fn instance() -> (SmParams, DMatrix<f64>, DVector<f64>) {
        let p = SmParams::one_dim(&[1.2, 0.6], &[0.3, 1.1], &[0.2, 0.15], 0.2).unwrap();
        let x = DMatrix::from_fn(9, 1, |i, _| 0.37 * i as f64 - 1.0);
        let y = DVector::from_fn(9, |i, _| (1.7 * i as f64).sin());
        (p, x, y)
    }

    #[test]
    fn layout_roundtrip() {
        let (p, _, _) = instance();
        let l = ParamLayout::of(&p);
        assert_eq!(l.len(), 2 + 2 + 2 + 1);
        let back = l.from_log(&l.to_log(&p));
        for (a, b) in back.weights.iter().zip(&p.weights) {
            assert!((a - b).abs() < 1e-15 * b);
        }
        assert!((back.noise_var - p.noise_var).abs() < 1e-15);
    }

    #[test]
    fn elbo_equals_log_marginal_with_matching_prior() {
        let (p, x, y) = instance();
        let alloc = allocate(&equal_ratios(2), 6).unwrap();
        let prior = PriorSpec::matching(&p);
        let est = elbo(&p, &prior, &x, &y, &alloc, 1, &mut SplitRng::new(5)).unwrap();
        assert_eq!(est.kl, 0.0);
        let direct = log_marginal(&p, &feature_map(&p, &est.samples[0], &x).unwrap(), &y).unwrap();
        assert_eq!(est.value, direct);
    }

    #[test]
    fn ss_objective_is_deterministic_and_matches_elbo() {
        let (p, x, y) = instance();
        let alloc = allocate(&equal_ratios(2), 6).unwrap();
        let noise = DMatrix::from_fn(6, 1, |i, _| (i as f64 - 2.5) * 0.4);
        let (a, s) = ss_objective(&p, &x, &y, &alloc, noise.clone()).unwrap();
        let (b, _) = ss_objective(&p, &x, &y, &alloc, noise).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        let est = elbo_with_samples(&p, &PriorSpec::matching(&p), &x, &y, vec![s]).unwrap();
        assert_eq!(est.value, a);
    }

    #[test]
    fn stale_sample_rejected() {
        let (p, x, y) = instance();
        let alloc = allocate(&equal_ratios(2), 6).unwrap();
        let s = draw_sample(&p, &alloc, &mut SplitRng::new(1)).unwrap();
        let mut moved = p.clone();
        moved.means[(1, 0)] *= 1.01;
        assert!(matches!(
            gradients(&moved, None, &x, &y, &[s]),
            Err(Error::StaleSample { .. })
        ));
    }

    #[test]
    fn gradient_finite_at_origin_inputs() {
        let (p, _, y) = instance();
        let x = DMatrix::zeros(9, 1);
        let alloc = allocate(&equal_ratios(2), 6).unwrap();
        let s = draw_sample(&p, &alloc, &mut SplitRng::new(1)).unwrap();
        let g = gradients(&p, Some(&PriorSpec::replicated(&p, 10.0)), &x, &y, &[s]).unwrap();
        assert!(g.iter().all(|v| v.is_finite()));
    }
}
