//! Diffusion machinery: schedules, the DDPM objective and ancestral step,
//! DDIM sampling and inversion, all over a pluggable noise predictor.

mod dump;
mod latent;
mod predictor;
mod sampler;
mod schedule;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use dump::{read_trajectory_dump, write_trajectory_dump, DumpHeader};
pub use latent::{Grid, LatentImage, Shape};
pub use predictor::{
    make_analytic_predictor, AnalyticPredictor, CompositePredictor, Condition, GaussianPredictor,
    NoisePredictor, ObjectTerm,
};
pub use sampler::{
    ddim_invert, ddim_sample, ddim_step, ddim_update, ddpm_loss, ddpm_step, forward_diffuse,
    predicted_x0, Trajectory,
};
pub use schedule::{
    make_schedule, NoiseSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiffusionError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("timestep {t} outside 1..={max}")]
    StepOutOfRange { t: usize, max: usize },
    #[error("DDIM step must decrease the timestep, got {t_from} -> {t_to}")]
    StepOrder { t_from: usize, t_to: usize },
    #[error("non-finite values produced in {0}")]
    NonFinite(String),
}

/// Seeded generator for one independent stream under a master seed.
/// Stream 0 is the main run; per-object work uses streams `1..`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
