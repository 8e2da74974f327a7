//! Allocation of the spectral-point budget across mixture components and
//! reparameterized sampling of spectral points.
//!
//! Three allocation policies are provided: equal (`1/Q`), weight-proportional
//! (`w_q / sum w`), and variance-optimal, where
//!
//! ```text
//! p_q  ∝  w_q * sqrt( sum_p g_q(tau_p) )
//! ```
//!
//! over a (possibly subsampled) set of pairwise input differences `tau_p`.
//!
//! A spectral point of component q adds `(w_q / m_q) cos(2 pi s^T tau)` to a
//! gram entry, and `Var cos(2 pi s^T tau) = (1 + k_q(2 tau)) / 2 - k_q(tau)^2`,
//! so the minimizer of the summed off-diagonal variance uses
//! `g_q(tau) = 1 + k_q(2 tau) - 2 k_q(tau)^2` ([`VarianceFactor::Exact`]).
//! The published closed form `1 + k_q(2 tau) + k_q(tau)^2` is kept as
//! [`VarianceFactor::Published`].

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernel::{SmParams, SpectralSample};
use crate::rng::SplitRng;

/// Default cap on the number of pairwise differences considered.
pub const DEFAULT_MAX_PAIRS: usize = 1_000_000;

/// Integer split of `total` spectral points across components.
#[derive(Clone, Debug, PartialEq)]
pub struct Allocation {
    pub counts: Vec<usize>,
    /// Target ratios the counts were rounded from.
    pub ratios: Vec<f64>,
    pub total: usize,
}

impl Allocation {
    /// Component index of each spectral point, in grouped order.
    pub fn component_index(&self) -> Vec<usize> {
        self.counts
            .iter()
            .enumerate()
            .flat_map(|(q, &c)| std::iter::repeat_n(q, c))
            .collect()
    }

    pub fn min_count(&self) -> usize {
        self.counts.iter().copied().min().unwrap_or(0)
    }
}

/// Subset of pairwise input differences `x_i - x_j` (i < j).
#[derive(Clone, Debug)]
pub struct PairwiseSubset {
    pub taus: DMatrix<f64>,
    pub rate: f64,
    /// Number of pairs the subset was drawn from, `N (N - 1) / 2`.
    pub source_size: usize,
}

/// Number of pairs kept for `rate` out of `pairs`: `max(1, round_half_even(rate * pairs))`.
pub fn subset_size(pairs: usize, rate: f64) -> usize {
    ((rate * pairs as f64).round_ties_even() as usize).clamp(1, pairs.max(1))
}

/// Maps a lexicographic pair index to `(i, j)`, `i < j`, among `n` items.
fn pair_from_index(n: usize, k: usize) -> (usize, usize) {
    // Pairs before row i: i (2n - i - 1) / 2.
    let before = |i: usize| i * (2 * n - i - 1) / 2;
    let nf = n as f64;
    let disc = (2.0 * nf - 1.0).powi(2) - 8.0 * k as f64;
    let mut i = (((2.0 * nf - 1.0) - disc.max(0.0).sqrt()) / 2.0).floor().max(0.0) as usize;
    i = i.min(n - 2);
    while i > 0 && before(i) > k {
        i -= 1;
    }
    while i + 1 < n - 1 && before(i + 1) <= k {
        i += 1;
    }
    (i, i + 1 + (k - before(i)))
}

/// Draws pairwise differences of the rows of `x`.
///
/// `max_pairs` caps the pool first; `rate` then selects `max(1, round(rate * P))`
/// pairs without replacement. With `rate == 1` and no effective cap, all pairs
/// are returned in lexicographic `(i, j)` order.
pub fn pairwise_subset(
    x: &DMatrix<f64>,
    rate: f64,
    max_pairs: Option<usize>,
    rng: &mut SplitRng,
) -> Result<PairwiseSubset> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "pairwise differences need at least 2 inputs, got {n}"
        )));
    }
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::Config(format!("pair rate {rate} outside (0, 1]")));
    }
    let source_size = n * (n - 1) / 2;
    let pool = max_pairs.map_or(source_size, |cap| cap.clamp(1, source_size));
    let keep = subset_size(pool, rate);
    let indices: Vec<usize> = if keep == source_size {
        (0..source_size).collect()
    } else {
        let mut idx = rand::seq::index::sample(rng, source_size, keep).into_vec();
        idx.sort_unstable();
        idx
    };
    let d = x.ncols();
    let mut taus = DMatrix::zeros(indices.len(), d);
    for (row, &k) in indices.iter().enumerate() {
        let (i, j) = pair_from_index(n, k);
        for c in 0..d {
            taus[(row, c)] = x[(i, c)] - x[(j, c)];
        }
    }
    Ok(PairwiseSubset {
        taus,
        rate,
        source_size,
    })
}

pub fn equal_ratios(q: usize) -> Vec<f64> {
    vec![1.0 / q as f64; q]
}

pub fn weight_ratios(params: &SmParams) -> Vec<f64> {
    let total = params.total_weight();
    params.weights.iter().map(|w| w / total).collect()
}

/// Per-pair variance factor `g_q` used by the variance-optimal policy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum VarianceFactor {
    /// `1 + k(2 tau) - 2 k(tau)^2`, the exact feature variance up to a constant.
    #[default]
    Exact,
    /// `1 + k(2 tau) + k(tau)^2`, as published.
    Published,
}

impl VarianceFactor {
    fn g(self, k: f64, k2: f64) -> f64 {
        match self {
            VarianceFactor::Exact => (1.0 + k2 - 2.0 * k * k).max(0.0),
            VarianceFactor::Published => 1.0 + k2 + k * k,
        }
    }
}

impl fmt::Display for VarianceFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VarianceFactor::Exact => "exact",
            VarianceFactor::Published => "published",
        })
    }
}

impl FromStr for VarianceFactor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exact" => Ok(VarianceFactor::Exact),
            "published" => Ok(VarianceFactor::Published),
            other => Err(Error::Config(format!("unknown variance factor {other:?} (expected exact or published)"))),
        }
    }
}

/// Variance-optimal spectral-point ratios with the exact variance factor.
pub fn optimal_ratios(params: &SmParams, subset: &PairwiseSubset) -> Result<Vec<f64>> {
    optimal_ratios_with(params, subset, VarianceFactor::Exact)
}

/// Variance-optimal ratios for the chosen `g_q`. If every component has zero
/// summed variance (all differences zero), any split is optimal and the
/// weight ratios are returned.
pub fn optimal_ratios_with(params: &SmParams, subset: &PairwiseSubset, factor: VarianceFactor) -> Result<Vec<f64>> {
    let taus = &subset.taus;
    if taus.nrows() == 0 {
        return Err(Error::InsufficientData("empty pairwise subset".into()));
    }
    if taus.ncols() != params.dims() {
        return Err(Error::Shape(format!(
            "differences have {} dims, kernel has {}",
            taus.ncols(),
            params.dims()
        )));
    }
    let d = params.dims();
    let mut tau = vec![0.0; d];
    let mut tau2 = vec![0.0; d];
    let mut raw = Vec::with_capacity(params.q());
    for q in 0..params.q() {
        let mut sum = 0.0;
        for p in 0..taus.nrows() {
            for c in 0..d {
                tau[c] = taus[(p, c)];
                tau2[c] = 2.0 * taus[(p, c)];
            }
            let k = params.component_kernel(q, &tau);
            sum += factor.g(k, params.component_kernel(q, &tau2));
        }
        if !sum.is_finite() {
            return Err(Error::Internal(format!("component {q} has a non-finite variance factor")));
        }
        raw.push(params.weights[q] * sum.sqrt());
    }
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Ok(weight_ratios(params));
    }
    Ok(raw.into_iter().map(|r| r / total).collect())
}

/// Rounds `budget * ratios` to positive integer counts summing to `budget`.
///
/// Counts start at `max(1, round_half_even(budget * p_q))`; any surplus or
/// deficit is repaired one point at a time, adding to the component furthest
/// below its target and removing from the one furthest above it (never below 1).
pub fn allocate(ratios: &[f64], budget: usize) -> Result<Allocation> {
    let q = ratios.len();
    if q == 0 {
        return Err(Error::Config("no components to allocate".into()));
    }
    if budget < q {
        return Err(Error::BudgetTooSmall {
            budget,
            components: q,
        });
    }
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::Config(format!("invalid ratios {ratios:?}")));
    }
    let sum: f64 = ratios.iter().sum();
    if !(sum > 0.0) {
        return Err(Error::Config("ratios sum to zero".into()));
    }
    let ratios: Vec<f64> = ratios.iter().map(|r| r / sum).collect();
    let target: Vec<f64> = ratios.iter().map(|r| r * budget as f64).collect();
    let mut counts: Vec<usize> = target
        .iter()
        .map(|t| (t.round_ties_even() as usize).max(1))
        .collect();
    let deficit = |counts: &[usize], i: usize| target[i] - counts[i] as f64;
    let mut assigned: usize = counts.iter().sum();
    while assigned < budget {
        let i = (0..q)
            .max_by(|&a, &b| deficit(&counts, a).total_cmp(&deficit(&counts, b)).then(b.cmp(&a)))
            .expect("q > 0");
        counts[i] += 1;
        assigned += 1;
    }
    while assigned > budget {
        let i = (0..q)
            .filter(|&i| counts[i] > 1)
            .min_by(|&a, &b| deficit(&counts, a).total_cmp(&deficit(&counts, b)).then(a.cmp(&b)))
            .expect("budget >= q leaves a removable point");
        counts[i] -= 1;
        assigned -= 1;
    }
    Ok(Allocation {
        counts,
        ratios,
        total: budget,
    })
}

/// Draws `alloc.total` spectral points `s = mu_q + sigma_q * eps`, `eps ~ N(0, I)`.
pub fn draw_sample(params: &SmParams, alloc: &Allocation, rng: &mut SplitRng) -> Result<SpectralSample> {
    let noise = DMatrix::from_fn(alloc.total, params.dims(), |_, _| rng.standard_normal());
    SpectralSample::from_noise(params, alloc, noise)
}
