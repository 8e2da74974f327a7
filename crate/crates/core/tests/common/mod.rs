//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use svss::inference::kl::{kl_term, PriorSpec};
use svss::inference::likelihood::log_marginal;
use svss::inference::objective::{gradients, ParamLayout};
use svss::kernel::feature_map;
use svss::sampling::{allocate, Allocation};
use svss::{SmParams, SpectralSample, SplitRng};

/// Direct evaluation of the SM kernel, written independently of the library.
pub fn sm_kernel_oracle(p: &SmParams, tau: &[f64]) -> f64 {
    let mut k = 0.0;
    for q in 0..p.q() {
        let mut env = 0.0;
        let mut phase = 0.0;
        for d in 0..tau.len() {
            env += (p.scales[(q, d)] * tau[d]).powi(2);
            phase += p.means[(q, d)] * tau[d];
        }
        k += p.weights[q] * (-2.0 * PI * PI * env).exp() * (2.0 * PI * phase).cos();
    }
    k
}

pub fn gram_oracle(p: &SmParams, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        let tau: Vec<f64> = (0..a.ncols()).map(|d| a[(i, d)] - b[(j, d)]).collect();
        sm_kernel_oracle(p, &tau)
    })
}

/// Dense `log N(y; 0, cov)` through a fresh Cholesky of the full N x N covariance.
pub fn dense_log_normal(cov: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let chol = cov.clone().cholesky().expect("covariance must be positive definite");
    let alpha = chol.solve(y);
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (y.len() as f64 * (2.0 * PI).ln() + logdet + y.dot(&alpha))
}

/// Dense GP predictive mean and variance (noise included) for covariance function `k`.
pub fn dense_predict(
    k_train: &DMatrix<f64>,
    k_cross: &DMatrix<f64>,
    k_test_diag: &DVector<f64>,
    noise_var: f64,
    y: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let mut k = k_train.clone();
    for i in 0..k.nrows() {
        k[(i, i)] += noise_var;
    }
    let chol = k.cholesky().expect("positive definite");
    let mean = k_cross.tr_mul(&chol.solve(y));
    let v = chol.solve(k_cross);
    let var = DVector::from_fn(k_cross.ncols(), |j, _| {
        k_test_diag[j] - k_cross.column(j).dot(&v.column(j)) + noise_var
    });
    (mean, var)
}

/// Random instance with positive parameters in moderate ranges.
pub fn random_params(rng: &mut SplitRng, q: usize, d: usize) -> SmParams {
    let weights = (0..q).map(|_| rng.uniform(0.3, 2.0)).collect();
    let means = DMatrix::from_fn(q, d, |_, _| rng.uniform(0.05, 1.5));
    let scales = DMatrix::from_fn(q, d, |_, _| rng.uniform(0.05, 0.6));
    SmParams::new(weights, means, scales, rng.uniform(0.05, 0.5)).unwrap()
}

/// One gradient-check instance: data, allocation, fixed noise and prior.
pub struct GradInstance {
    pub params: SmParams,
    pub prior: PriorSpec,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub alloc: Allocation,
    pub noise: DMatrix<f64>,
}

impl GradInstance {
    pub fn new(seed: u64, n: usize, q: usize, m: usize, d: usize) -> Self {
        let mut rng = SplitRng::new(seed);
        let params = random_params(&mut rng, q, d);
        let layout = ParamLayout::of(&params);
        let params = layout.from_log(&layout.to_log(&params));
        let mut prior_params = random_params(&mut rng, q, d);
        prior_params.scales *= 3.0;
        let prior = PriorSpec::replicated(&prior_params, 1.0);
        let x = DMatrix::from_fn(n, d, |_, _| rng.uniform(-2.0, 2.0));
        let y = DVector::from_fn(n, |_, _| rng.standard_normal());
        let ratios: Vec<f64> = (0..q).map(|_| rng.uniform(0.2, 1.0)).collect();
        let alloc = allocate(&ratios, m).unwrap();
        let noise = DMatrix::from_fn(m, d, |_, _| rng.standard_normal());
        GradInstance { params, prior, x, y, alloc, noise }
    }

    /// The objective (log marginal minus KL) at log-domain point `theta`, noise held fixed.
    pub fn objective(&self, theta: &[f64]) -> f64 {
        let layout = ParamLayout::of(&self.params);
        let p = layout.from_log(theta);
        let s = SpectralSample::from_noise(&p, &self.alloc, self.noise.clone()).unwrap();
        let ll = log_marginal(&p, &feature_map(&p, &s, &self.x).unwrap(), &self.y).unwrap();
        ll - kl_term(&p, &self.prior, &self.alloc).unwrap()
    }

    pub fn analytic(&self) -> Vec<f64> {
        let s = SpectralSample::from_noise(&self.params, &self.alloc, self.noise.clone()).unwrap();
        gradients(&self.params, Some(&self.prior), &self.x, &self.y, &[s]).unwrap()
    }

    /// Central differences with one Richardson extrapolation step.
    pub fn numeric(&self) -> Vec<f64> {
        let layout = ParamLayout::of(&self.params);
        let theta = layout.to_log(&self.params);
        let central = |i: usize, h: f64| {
            let mut up = theta.clone();
            let mut dn = theta.clone();
            up[i] += h;
            dn[i] -= h;
            (self.objective(&up) - self.objective(&dn)) / (2.0 * h)
        };
        (0..theta.len())
            .map(|i| {
                let h = 1e-4;
                (4.0 * central(i, h / 2.0) - central(i, h)) / 3.0
            })
            .collect()
    }
}

/// `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}
