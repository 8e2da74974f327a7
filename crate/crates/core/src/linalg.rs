//! Cholesky factorization with jitter escalation, shared by the likelihood and predictors.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

/// Number of times the jitter is multiplied by ten after the first attempt.
const JITTER_ESCALATIONS: usize = 3;

/// Factorizes a symmetric positive definite matrix.
///
/// If the plain factorization fails, retries with `1e-10 * trace / n` added to
/// the diagonal, escalating by 10x up to three times. Returns the factor and
/// the jitter actually used (0 when none was needed).
pub fn cholesky_with_jitter(a: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(chol) = Cholesky::new(a.clone()) {
        return Ok((chol, 0.0));
    }
    let n = a.nrows().max(1);
    let base = 1e-10 * a.trace().abs() / n as f64;
    let mut tried = Vec::with_capacity(JITTER_ESCALATIONS + 1);
    let mut jitter = if base > 0.0 { base } else { 1e-10 };
    for _ in 0..=JITTER_ESCALATIONS {
        tried.push(jitter);
        let mut b = a.clone();
        for i in 0..b.nrows() {
            b[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(b) {
            return Ok((chol, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::NumericalFailure { jitters: tried })
}

/// `log det` from a Cholesky factor.
pub fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}
