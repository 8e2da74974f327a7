//! The training engine: likelihood, KL, gradients, natural gradient and the optimizer loop.

pub mod adam;
pub mod checkpoint;
pub mod init;
pub mod kl;
pub mod likelihood;
pub mod natgrad;
pub mod objective;
pub mod train;

pub use checkpoint::{Checkpoint, DataSource};
pub use init::{initial_params_with, InitStrategy};
pub use kl::{kl_term, ComponentPrior, PriorSpec};
pub use likelihood::{log_marginal, LowRankSystem};
pub use natgrad::natural_gradient;
pub use objective::{elbo, gradients, ss_objective, ElboEstimate, ParamLayout};
pub use train::{train, Mode, TrainAbort, TrainConfig, TrainOutcome, TrainState, Trainer, TraceRow};
