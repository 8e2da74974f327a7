//! Gram-approximation benchmark: relative Frobenius error of `Phi Phi^T`
//! against the exact SM gram under the three allocation policies.
//!
//! Within a trial every policy reuses the same kernel parameters and the same
//! standard-normal noise (common random numbers), so differences between
//! policies come from the allocation alone.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{feature_map, sm_gram, SmParams, SpectralSample};
use crate::rng::SplitRng;
use crate::sampling::{allocate, equal_ratios, optimal_ratios_with, pairwise_subset, weight_ratios, VarianceFactor};

/// Numeric codes (`as u8`) are used in CSV output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Policy {
    Equal = 0,
    Weight = 1,
    Ws = 2,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Equal, Policy::Weight, Policy::Ws];
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Equal => "equal",
            Policy::Weight => "weight",
            Policy::Ws => "ws",
        })
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "equal" => Ok(Policy::Equal),
            "weight" => Ok(Policy::Weight),
            "ws" => Ok(Policy::Ws),
            other => Err(Error::Config(format!("unknown policy {other:?} (expected equal, weight, ws)"))),
        }
    }
}

/// Distribution of the mixture weights drawn for each trial.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WeightInit {
    Uniform { lo: f64, hi: f64 },
}

impl FromStr for WeightInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "uniform0-20" => Ok(WeightInit::Uniform { lo: 0.0, hi: 20.0 }),
            "uniform0.99-1.01" => Ok(WeightInit::Uniform { lo: 0.99, hi: 1.01 }),
            other => Err(Error::Config(format!(
                "unknown weight init {other:?} (expected uniform0-20 or uniform0.99-1.01)"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    /// Kernel inputs, N x D.
    pub x: DMatrix<f64>,
    pub q: usize,
    pub m_list: Vec<usize>,
    pub policies: Vec<Policy>,
    /// Pair rates; only the `ws` policy depends on them, others are run once with rate 1.
    pub rate_list: Vec<f64>,
    pub weight_init: WeightInit,
    /// Variance factor of the `ws` policy.
    pub ws_factor: VarianceFactor,
    pub trials: usize,
    pub seed: u64,
    pub max_pairs: Option<usize>,
}

impl BenchConfig {
    /// Inputs `{0, 1/n, ..., (n-1)/n}`.
    pub fn grid(n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, 1, |i, _| i as f64 / n as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.q == 0 || self.trials == 0 || self.m_list.is_empty() || self.policies.is_empty() {
            return Err(Error::Config("q, trials, m-list and policies must be non-empty".into()));
        }
        if let Some(&m) = self.m_list.iter().find(|&&m| m < self.q) {
            return Err(Error::Config(format!("M = {m} is smaller than Q = {}", self.q)));
        }
        if self.policies.contains(&Policy::Ws) {
            if self.rate_list.is_empty() || self.rate_list.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
                return Err(Error::Config("ws needs rates in (0, 1]".into()));
            }
            if self.x.nrows() < 2 {
                return Err(Error::Config("ws needs at least two inputs".into()));
            }
        }
        if self.x.nrows() == 0 {
            return Err(Error::Config("no inputs".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub policy: Policy,
    pub m: usize,
    pub q: usize,
    pub rate: f64,
    pub trial: usize,
    pub rel_error: f64,
    pub wall_ms: f64,
}

/// Kernel parameters for one trial: weights from `init`, means uniform on
/// `[0, nu/2]`, scales `nu / (8Q)`, where `nu` is the input frequency scale.
pub fn trial_params(x: &DMatrix<f64>, q: usize, init: WeightInit, rng: &mut SplitRng) -> Result<SmParams> {
    let nu = crate::inference::init::input_frequency_scale(x);
    let WeightInit::Uniform { lo, hi } = init;
    let weights: Vec<f64> = (0..q).map(|_| rng.uniform(lo, hi).max(f64::MIN_POSITIVE)).collect();
    let d = x.ncols();
    let means = DMatrix::from_fn(q, d, |_, k| rng.uniform(0.0, nu[k] / 2.0));
    let scales = DMatrix::from_fn(q, d, |_, k| nu[k] / (8.0 * q as f64));
    SmParams::new(weights, means, scales, 1.0)
}

/// Relative Frobenius error `||K - Phi Phi^T||_F / ||K||_F`.
pub fn relative_error(k: &DMatrix<f64>, approx: &DMatrix<f64>) -> f64 {
    (k - approx).norm() / k.norm()
}

fn run_trial(cfg: &BenchConfig, trial: usize) -> Result<Vec<BenchRow>> {
    let root = SplitRng::new(cfg.seed).split(trial as u64);
    let params = trial_params(&cfg.x, cfg.q, cfg.weight_init, &mut root.split(0))?;
    let k = sm_gram(&params, &cfg.x)?;
    let mut rows = Vec::new();
    for (mi, &m) in cfg.m_list.iter().enumerate() {
        let mut noise_rng = root.split(1000 + mi as u64);
        let noise = DMatrix::from_fn(m, cfg.x.ncols(), |_, _| noise_rng.standard_normal());
        for &policy in &cfg.policies {
            let rates: Vec<f64> = match policy {
                Policy::Ws => cfg.rate_list.clone(),
                _ => vec![1.0],
            };
            for (ri, &rate) in rates.iter().enumerate() {
                let started = Instant::now();
                let ratios = match policy {
                    Policy::Equal => equal_ratios(cfg.q),
                    Policy::Weight => weight_ratios(&params),
                    Policy::Ws => {
                        let mut r = root.split(2000 + (mi * rates.len() + ri) as u64);
                        let subset = pairwise_subset(&cfg.x, rate, cfg.max_pairs, &mut r)?;
                        optimal_ratios_with(&params, &subset, cfg.ws_factor)?
                    }
                };
                let alloc = allocate(&ratios, m)?;
                let sample = SpectralSample::from_noise(&params, &alloc, noise.clone())?;
                let approx = feature_map(&params, &sample, &cfg.x)?.gram();
                rows.push(BenchRow {
                    policy,
                    m,
                    q: cfg.q,
                    rate,
                    trial,
                    rel_error: relative_error(&k, &approx),
                    wall_ms: started.elapsed().as_secs_f64() * 1e3,
                });
            }
        }
    }
    Ok(rows)
}

/// Runs all trials (in parallel); rows are ordered by trial, then M, policy, rate.
pub fn run_approx_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    let per_trial = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(per_trial.into_iter().flatten().collect())
}

/// Median of the `rel_error` values selected by `keep`.
pub fn median_error(rows: &[BenchRow], keep: impl Fn(&BenchRow) -> bool) -> f64 {
    let mut v: Vec<f64> = rows.iter().filter(|r| keep(r)).map(|r| r.rel_error).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    }
}
