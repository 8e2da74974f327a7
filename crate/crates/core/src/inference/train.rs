//! Training loop for the SS, SS+RP and SVSS (optionally Ws / Ng) modes.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::inference::adam::Adam;
use crate::inference::init::{initial_params_with, InitStrategy};
use crate::inference::kl::{kl_term, PriorSpec};
use crate::inference::natgrad::{natural_gradient, natural_scale_gradient};
use crate::inference::objective::{elbo, gradients, ss_objective, ParamLayout, LOG_CLAMP};
use crate::kernel::{SmParams, SpectralSample};
use crate::rng::SplitRng;
use crate::sampling::{
    allocate, equal_ratios, optimal_ratios_with, pairwise_subset, Allocation, VarianceFactor, DEFAULT_MAX_PAIRS,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Fixed noise, likelihood only.
    Ss,
    /// Fresh noise every iteration, likelihood only.
    SsRp,
    /// Regularized Monte-Carlo ELBO.
    Svss,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Ss => "ss",
            Mode::SsRp => "ss-rp",
            Mode::Svss => "svss",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ss" => Ok(Mode::Ss),
            "ss-rp" | "ss_rp" | "ssrp" => Ok(Mode::SsRp),
            "svss" => Ok(Mode::Svss),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    /// Variance-optimal allocation, recomputed every iteration.
    pub use_ws: bool,
    /// Variance factor of the Ws allocation.
    pub ws_factor: VarianceFactor,
    /// Approximate natural gradient for means and scales.
    pub use_ng: bool,
    pub mc_samples: usize,
    pub pair_rate: f64,
    pub max_pairs: Option<usize>,
    pub iterations: usize,
    pub step_size: f64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    pub seed: u64,
    /// Total spectral points M.
    pub m: usize,
    /// Mixture components Q.
    pub q: usize,
    /// Prior scales are this multiple of the initial variational scales.
    pub prior_scale_factor: f64,
    pub init: InitStrategy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Svss,
            use_ws: false,
            ws_factor: VarianceFactor::default(),
            use_ng: false,
            mc_samples: 1,
            pair_rate: 0.1,
            max_pairs: Some(DEFAULT_MAX_PAIRS),
            iterations: 1000,
            step_size: 0.01,
            betas: (0.9, 0.999),
            adam_eps: 1e-8,
            seed: 0,
            m: 60,
            q: 4,
            prior_scale_factor: 10.0,
            init: InitStrategy::default(),
        }
    }
}

impl TrainConfig {
    /// SVSS with both strategies enabled.
    pub fn svss_ws_ng(q: usize, m: usize) -> Self {
        TrainConfig {
            use_ws: true,
            use_ng: true,
            q,
            m,
            ..Default::default()
        }
    }

    pub fn label(&self) -> String {
        let mut s = self.mode.to_string();
        if self.use_ws {
            s.push_str("-ws");
        }
        if self.use_ng {
            s.push_str("-ng");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode != Mode::Svss && (self.use_ws || self.use_ng) {
            return Err(Error::Config(format!(
                "Ws and Ng require mode svss, got {}",
                self.mode
            )));
        }
        if self.mc_samples == 0 {
            return Err(Error::Config("mc-samples must be at least 1".into()));
        }
        if self.q == 0 {
            return Err(Error::Config("q must be at least 1".into()));
        }
        if self.m < self.q {
            return Err(Error::Config(format!(
                "m = {} cannot give each of q = {} components a point",
                self.m, self.q
            )));
        }
        if !(self.pair_rate > 0.0 && self.pair_rate <= 1.0) {
            return Err(Error::Config(format!("pair rate {} outside (0, 1]", self.pair_rate)));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config("step size must be positive".into()));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        if !(self.prior_scale_factor > 0.0) {
            return Err(Error::Config("prior scale factor must be positive".into()));
        }
        Ok(())
    }
}

/// One row of the training trace.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    /// The quantity being maximized: ELBO for SVSS, log marginal for SS modes.
    pub objective: f64,
    /// Mean conditional log marginal over this iteration's draws.
    pub log_lik: f64,
    /// KL of the current variational distribution to the prior (reported in every mode).
    pub kl: f64,
    pub wall_ms: f64,
}

impl TraceRow {
    /// `log_lik - kl`, comparable across modes.
    pub fn elbo(&self) -> f64 {
        self.log_lik - self.kl
    }
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub log_params: Vec<f64>,
    pub optimizer: Adam,
    pub iteration: usize,
    pub rng: SplitRng,
    pub allocation: Allocation,
    /// SS mode only.
    pub fixed_noise: Option<DMatrix<f64>>,
    pub trace: Vec<TraceRow>,
    pub last_sample: Option<SpectralSample>,
}

pub struct Trainer<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    config: TrainConfig,
    layout: ParamLayout,
    prior: PriorSpec,
    state: TrainState,
}

impl<'a> Trainer<'a> {
    /// Initializes parameters from the data with `config.init`.
    pub fn new(x: &'a DMatrix<f64>, y: &'a DVector<f64>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let root = SplitRng::new(config.seed);
        let init = initial_params_with(config.init, x, y, config.q, &mut root.split(1))?;
        Self::with_params(x, y, config, init, None)
    }

    /// Starts from explicit parameters and optional prior.
    pub fn with_params(
        x: &'a DMatrix<f64>,
        y: &'a DVector<f64>,
        config: TrainConfig,
        init: SmParams,
        prior: Option<PriorSpec>,
    ) -> Result<Self> {
        config.validate()?;
        init.validate()?;
        if init.q() != config.q {
            return Err(Error::Config(format!(
                "initial parameters have {} components, config asks for {}",
                init.q(),
                config.q
            )));
        }
        if x.nrows() != y.len() || x.ncols() != init.dims() {
            return Err(Error::Shape(format!(
                "data is {}x{} with {} targets, kernel has {} dims",
                x.nrows(),
                x.ncols(),
                y.len(),
                init.dims()
            )));
        }
        if config.use_ws && x.nrows() < 2 {
            return Err(Error::InsufficientData("Ws needs at least two inputs".into()));
        }
        let prior = prior.unwrap_or_else(|| PriorSpec::replicated(&init, config.prior_scale_factor));
        prior.validate(&init)?;
        let layout = ParamLayout::of(&init);
        let root = SplitRng::new(config.seed);
        let allocation = allocate(&equal_ratios(config.q), config.m)?;
        let fixed_noise = (config.mode == Mode::Ss).then(|| {
            let mut r = root.split(2);
            DMatrix::from_fn(config.m, init.dims(), |_, _| r.standard_normal())
        });
        let state = TrainState {
            log_params: layout.to_log(&init),
            optimizer: Adam::new(layout.len(), config.step_size, config.betas, config.adam_eps),
            iteration: 0,
            rng: root.split(3),
            allocation,
            fixed_noise,
            trace: Vec::with_capacity(config.iterations),
            last_sample: None,
        };
        Ok(Trainer {
            x,
            y,
            config,
            layout,
            prior,
            state,
        })
    }

    pub fn params(&self) -> SmParams {
        self.layout.from_log(&self.state.log_params)
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    fn next_allocation(&mut self, params: &SmParams) -> Result<Allocation> {
        if !self.config.use_ws {
            return Ok(self.state.allocation.clone());
        }
        let subset = pairwise_subset(self.x, self.config.pair_rate, self.config.max_pairs, &mut self.state.rng)?;
        allocate(&optimal_ratios_with(params, &subset, self.config.ws_factor)?, self.config.m)
    }

    /// Runs one optimizer iteration and returns its trace row.
    pub fn step(&mut self) -> Result<TraceRow> {
        let started = Instant::now();
        let params = self.params();
        let alloc = self.next_allocation(&params)?;
        let (objective, log_lik, kl, samples) = match self.config.mode {
            Mode::Ss | Mode::SsRp => {
                let noise = match &self.state.fixed_noise {
                    Some(n) => n.clone(),
                    None => {
                        let rng = &mut self.state.rng;
                        DMatrix::from_fn(alloc.total, params.dims(), |_, _| rng.standard_normal())
                    }
                };
                let (value, sample) = ss_objective(&params, self.x, self.y, &alloc, noise)?;
                let kl = kl_term(&params, &self.prior, &alloc)?;
                (value, value, kl, vec![sample])
            }
            Mode::Svss => {
                let est = elbo(
                    &params,
                    &self.prior,
                    self.x,
                    self.y,
                    &alloc,
                    self.config.mc_samples,
                    &mut self.state.rng,
                )?;
                (est.value, est.log_lik, est.kl, est.samples)
            }
        };
        let prior = (self.config.mode == Mode::Svss).then_some(&self.prior);
        let grads = gradients(&params, prior, self.x, self.y, &samples)?;

        self.state.iteration += 1;
        let t = self.state.iteration as u64;
        let layout = self.layout;
        let lp = &mut self.state.log_params;
        let opt = &mut self.state.optimizer;
        let mean_coords = || (0..layout.q).flat_map(move |q| (0..layout.d).map(move |d| layout.mean(q, d)));
        if self.config.use_ng {
            // Scales (and the non-variational coordinates) first, then means
            // with the freshly updated scales.
            let adjusted = natural_scale_gradient(&layout, &grads);
            let non_mean: Vec<usize> = (0..layout.len())
                .filter(|&i| !(layout.q..layout.q + layout.q * layout.d).contains(&i))
                .collect();
            opt.step(t, lp, &adjusted, non_mean);
            clamp_log(lp);
            let next_scales = layout.from_log(lp).scales;
            let adjusted = natural_gradient(&params, &next_scales, &grads);
            opt.step(t, lp, &adjusted, mean_coords());
        } else {
            opt.step(t, lp, &grads, 0..layout.len());
        }
        clamp_log(lp);

        let row = TraceRow {
            iter: self.state.iteration,
            objective,
            log_lik,
            kl,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        self.state.allocation = alloc;
        self.state.last_sample = samples.into_iter().next();
        self.state.trace.push(row.clone());
        Ok(row)
    }

    /// Runs the configured number of iterations. On failure the trace so far is kept in the error.
    pub fn run(&mut self) -> std::result::Result<(), TrainAbort> {
        while self.state.iteration < self.config.iterations {
            if let Err(error) = self.step() {
                return Err(TrainAbort {
                    error,
                    trace: self.state.trace.clone(),
                });
            }
        }
        Ok(())
    }
}

fn clamp_log(v: &mut [f64]) {
    for x in v {
        *x = x.clamp(-LOG_CLAMP, LOG_CLAMP);
    }
}

/// Training stopped early; carries the trace recorded before the failure.
#[derive(Debug)]
pub struct TrainAbort {
    pub error: Error,
    pub trace: Vec<TraceRow>,
}

impl fmt::Display for TrainAbort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "training aborted after {} iterations: {}", self.trace.len(), self.error)
    }
}

impl std::error::Error for TrainAbort {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

pub struct TrainOutcome {
    pub state: TrainState,
    pub params: SmParams,
    pub prior: PriorSpec,
}

/// Initializes from the data and runs `config.iterations` steps.
pub fn train(x: &DMatrix<f64>, y: &DVector<f64>, config: &TrainConfig) -> std::result::Result<TrainOutcome, TrainAbort> {
    let mut trainer = Trainer::new(x, y, config.clone()).map_err(|error| TrainAbort {
        error,
        trace: Vec::new(),
    })?;
    trainer.run()?;
    let params = trainer.params();
    let prior = trainer.prior.clone();
    Ok(TrainOutcome {
        state: trainer.into_state(),
        params,
        prior,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (DMatrix<f64>, DVector<f64>) {
        let x = DMatrix::from_fn(40, 1, |i, _| i as f64 * 0.25);
        let y = DVector::from_fn(40, |i, _| (0.25 * i as f64 * 1.3).sin());
        (x, y)
    }

    #[test]
    fn ws_ng_require_svss() {
        let cfg = TrainConfig {
            mode: Mode::Ss,
            use_ng: true,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn zero_iterations_returns_init() {
        let (x, y) = toy();
        let cfg = TrainConfig {
            iterations: 0,
            q: 2,
            m: 6,
            ..Default::default()
        };
        let out = train(&x, &y, &cfg).unwrap();
        let init = initial_params_with(cfg.init, &x, &y, 2, &mut SplitRng::new(0).split(1)).unwrap();
        let layout = ParamLayout::of(&init);
        assert_eq!(out.params, layout.from_log(&layout.to_log(&init)));
        assert!(out.state.trace.is_empty());
    }

    #[test]
    fn runs_are_bit_reproducible() {
        let (x, y) = toy();
        for cfg in [
            TrainConfig { mode: Mode::Ss, iterations: 30, q: 2, m: 6, ..Default::default() },
            TrainConfig { mode: Mode::SsRp, iterations: 30, q: 2, m: 6, ..Default::default() },
            TrainConfig { iterations: 30, q: 2, m: 6, use_ws: true, use_ng: true, pair_rate: 0.3, ..Default::default() },
        ] {
            let a = train(&x, &y, &cfg).unwrap();
            let b = train(&x, &y, &cfg).unwrap();
            assert_eq!(a.state.log_params, b.state.log_params);
            assert_eq!(a.state.trace.len(), 30);
            let objs = |o: &TrainOutcome| o.state.trace.iter().map(|r| r.objective.to_bits()).collect::<Vec<_>>();
            assert_eq!(objs(&a), objs(&b));
        }
    }

}
