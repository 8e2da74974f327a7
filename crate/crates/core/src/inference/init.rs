//! Initial kernel parameters.
//!
//! Two strategies share the frequency scale `nu` (one over the median gap
//! between distinct sorted input values, per dimension):
//!
//! * `uniform`: means uniform on `[0, nu/2]`, scales `nu / (8Q)`.
//! * `spectral`: a Q-component Gaussian mixture fitted by EM to the
//!   per-dimension periodogram of Y on `(0, nu/2]`, after subtracting a
//!   noise threshold derived from the median power. Components are paired
//!   across dimensions in order of increasing frequency.
//!
//! Both set weights to `1/Q` and the noise variance to `0.1 Var(Y)`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::SmParams;
use crate::rng::SplitRng;

/// Upper bound on periodogram frequencies per dimension.
const MAX_FREQUENCIES: usize = 4096;
const EM_ITERATIONS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum InitStrategy {
    Uniform,
    #[default]
    Spectral,
}

impl fmt::Display for InitStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitStrategy::Uniform => "uniform",
            InitStrategy::Spectral => "spectral",
        })
    }
}

impl FromStr for InitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uniform" => Ok(InitStrategy::Uniform),
            "spectral" => Ok(InitStrategy::Spectral),
            other => Err(Error::Config(format!("unknown init {other:?} (expected uniform or spectral)"))),
        }
    }
}

/// Per-dimension frequency scale `1 / median gap` between consecutive
/// distinct input values, a Nyquist-style proxy for the sampling density.
pub fn input_frequency_scale(x: &DMatrix<f64>) -> Vec<f64> {
    (0..x.ncols())
        .map(|d| {
            let mut col: Vec<f64> = x.column(d).iter().copied().collect();
            col.sort_by(f64::total_cmp);
            col.dedup();
            let mut gaps: Vec<f64> = col.windows(2).map(|w| w[1] - w[0]).collect();
            if gaps.is_empty() {
                return 1.0;
            }
            gaps.sort_by(f64::total_cmp);
            let mid = gaps.len() / 2;
            let median = if gaps.len() % 2 == 0 {
                0.5 * (gaps[mid - 1] + gaps[mid])
            } else {
                gaps[mid]
            };
            1.0 / median
        })
        .collect()
}

/// Initial parameters with the given strategy.
pub fn initial_params_with(
    strategy: InitStrategy,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    q: usize,
    rng: &mut SplitRng,
) -> Result<SmParams> {
    match strategy {
        InitStrategy::Uniform => initial_params(x, y, q, rng),
        InitStrategy::Spectral => spectral_params(x, y, q),
    }
}

/// The `uniform` strategy.
pub fn initial_params(x: &DMatrix<f64>, y: &DVector<f64>, q: usize, rng: &mut SplitRng) -> Result<SmParams> {
    if x.nrows() == 0 || x.nrows() != y.len() {
        return Err(Error::Shape(format!("{} inputs, {} targets", x.nrows(), y.len())));
    }
    let nu = input_frequency_scale(x);
    let d = x.ncols();
    let means = DMatrix::from_fn(q, d, |_, k| rng.uniform(0.0, nu[k] / 2.0));
    let scales = DMatrix::from_fn(q, d, |_, k| nu[k] / (8.0 * q as f64));
    SmParams::new(vec![1.0 / q as f64; q], means, scales, initial_noise(y))
}

fn initial_noise(y: &DVector<f64>) -> f64 {
    let mean_y = y.mean();
    let var_y = y.iter().map(|v| (v - mean_y).powi(2)).sum::<f64>() / y.len() as f64;
    if var_y > 0.0 {
        0.1 * var_y
    } else {
        0.1
    }
}

/// Periodogram `|sum_n (y_n - ybar) exp(-2 pi i f x_n)|^2` on an even grid of
/// `(0, f_max]` with spacing about a quarter of `1 / range`.
fn periodogram(x: &[f64], y: &DVector<f64>, f_max: f64) -> (Vec<f64>, Vec<f64>) {
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = (hi - lo).max(f64::MIN_POSITIVE);
    let k = ((f_max * 4.0 * range).ceil() as usize).clamp(1, MAX_FREQUENCIES);
    let step = f_max / k as f64;
    let mean_y = y.mean();
    let freqs: Vec<f64> = (1..=k).map(|i| i as f64 * step).collect();
    let power = freqs
        .par_iter()
        .map(|&f| {
            let (mut c, mut s) = (0.0, 0.0);
            for (xn, yn) in x.iter().zip(y.iter()) {
                let (sn, cn) = (2.0 * PI * f * xn).sin_cos();
                c += (yn - mean_y) * cn;
                s += (yn - mean_y) * sn;
            }
            c * c + s * s
        })
        .collect();
    (freqs, power)
}

/// Weighted one-dimensional Gaussian mixture by EM; returns (means, stds),
/// sorted by mean. Starts from weighted quantiles.
fn fit_mixture(points: &[f64], weights: &[f64], q: usize, min_std: f64) -> (Vec<f64>, Vec<f64>) {
    let total: f64 = weights.iter().sum();
    let mut cdf = 0.0;
    let mut means = vec![0.0; q];
    let mut next = 0;
    for (p, w) in points.iter().zip(weights) {
        cdf += w / total;
        while next < q && cdf >= (next as f64 + 0.5) / q as f64 {
            means[next] = *p;
            next += 1;
        }
    }
    for m in means.iter_mut().skip(next) {
        *m = *points.last().expect("non-empty grid");
    }
    let overall_mean = points.iter().zip(weights).map(|(p, w)| p * w).sum::<f64>() / total;
    let overall_var = points.iter().zip(weights).map(|(p, w)| w * (p - overall_mean).powi(2)).sum::<f64>() / total;
    let mut stds = vec![(overall_var.sqrt() / q as f64).max(min_std); q];
    let mut mix = vec![1.0 / q as f64; q];
    let mut resp = vec![0.0; q];
    for _ in 0..EM_ITERATIONS {
        let mut nk = vec![0.0; q];
        let mut sum = vec![0.0; q];
        let mut sum2 = vec![0.0; q];
        for (p, w) in points.iter().zip(weights) {
            if *w == 0.0 {
                continue;
            }
            let mut norm = 0.0;
            for j in 0..q {
                let z = (p - means[j]) / stds[j];
                resp[j] = mix[j] / stds[j] * (-0.5 * z * z).exp();
                norm += resp[j];
            }
            if !(norm > 0.0) {
                continue;
            }
            for j in 0..q {
                let r = w * resp[j] / norm;
                nk[j] += r;
                sum[j] += r * p;
                sum2[j] += r * p * p;
            }
        }
        for j in 0..q {
            if nk[j] <= 0.0 {
                continue;
            }
            means[j] = sum[j] / nk[j];
            stds[j] = (sum2[j] / nk[j] - means[j] * means[j]).max(0.0).sqrt().max(min_std);
            mix[j] = nk[j] / total;
        }
    }
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&a, &b| means[a].total_cmp(&means[b]));
    (order.iter().map(|&j| means[j]).collect(), order.iter().map(|&j| stds[j]).collect())
}

/// The `spectral` strategy; falls back to `uniform`-style values in a
/// dimension whose periodogram has no power above the noise floor.
pub fn spectral_params(x: &DMatrix<f64>, y: &DVector<f64>, q: usize) -> Result<SmParams> {
    if x.nrows() == 0 || x.nrows() != y.len() {
        return Err(Error::Shape(format!("{} inputs, {} targets", x.nrows(), y.len())));
    }
    if q == 0 {
        return Err(Error::Config("q must be at least 1".into()));
    }
    let nu = input_frequency_scale(x);
    let d = x.ncols();
    let mut means = DMatrix::zeros(q, d);
    let mut scales = DMatrix::zeros(q, d);
    for k in 0..d {
        let col: Vec<f64> = x.column(k).iter().copied().collect();
        let (freqs, power) = periodogram(&col, y, nu[k] / 2.0);
        let mut sorted = power.clone();
        sorted.sort_by(f64::total_cmp);
        // The off-peak periodogram is roughly exponential; with mean
        // median / ln 2, at most about one of K noise bins exceeds mean * ln K.
        let median = sorted[sorted.len() / 2];
        let floor = median / std::f64::consts::LN_2 * (power.len() as f64).ln().max(1.0);
        let excess: Vec<f64> = power.iter().map(|p| (p - floor).max(0.0)).collect();
        let step = freqs[0];
        if excess.iter().sum::<f64>() > 0.0 {
            let (m, s) = fit_mixture(&freqs, &excess, q, step);
            for j in 0..q {
                means[(j, k)] = m[j];
                scales[(j, k)] = s[j];
            }
        } else {
            for j in 0..q {
                means[(j, k)] = nu[k] / 2.0 * (j as f64 + 0.5) / q as f64;
                scales[(j, k)] = nu[k] / (8.0 * q as f64);
            }
        }
    }
    SmParams::new(vec![1.0 / q as f64; q], means, scales, initial_noise(y))
}
