//! Adaptive-moment optimizer (gradient ascent) with bias-corrected moments.
//!
//! Coordinates can be stepped in separate groups within one iteration, which
//! the natural-gradient ordering needs; all groups share the iteration count.

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, step_size: f64, betas: (f64, f64), eps: f64) -> Self {
        Adam {
            step_size,
            beta1: betas.0,
            beta2: betas.1,
            eps,
            first: vec![0.0; len],
            second: vec![0.0; len],
        }
    }

    /// Ascends `params` along `grads` on the listed coordinates at iteration `t` (1-based).
    pub fn step(&mut self, t: u64, params: &mut [f64], grads: &[f64], coords: impl IntoIterator<Item = usize>) {
        let c1 = 1.0 - self.beta1.powi(t as i32);
        let c2 = 1.0 - self.beta2.powi(t as i32);
        for i in coords {
            let g = grads[i];
            self.first[i] = self.beta1 * self.first[i] + (1.0 - self.beta1) * g;
            self.second[i] = self.beta2 * self.second[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.first[i] / c1;
            let v_hat = self.second[i] / c2;
            params[i] += self.step_size * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_step_size() {
        let mut opt = Adam::new(2, 0.01, (0.9, 0.999), 1e-8);
        let mut p = vec![0.0, 1.0];
        opt.step(1, &mut p, &[3.0, -0.5], 0..2);
        assert!((p[0] - 0.01).abs() < 1e-9);
        assert!((p[1] - 0.99).abs() < 1e-9);
    }

    #[test]
    fn climbs_a_concave_quadratic() {
        let mut opt = Adam::new(1, 0.05, (0.9, 0.999), 1e-8);
        let mut p = vec![3.0];
        for t in 1..=2000 {
            let g = [-2.0 * (p[0] - 1.0)];
            opt.step(t, &mut p, &g, [0]);
        }
        assert!((p[0] - 1.0).abs() < 1e-2);
    }
}
