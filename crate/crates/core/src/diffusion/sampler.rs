//! DDPM/DDIM updates and DDIM inversion over a [`NoisePredictor`].

use serde::{Deserialize, Serialize};

use super::latent::LatentImage;
use super::predictor::{Condition, NoisePredictor};
use super::schedule::NoiseSchedule;
use super::DiffusionError;

/// Latents visited by a sampler or an inversion, stored in increasing
/// timestep order: `latents[0]` is the clean sample at `t = 0` and the last
/// entry sits at `t = T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub timesteps: Vec<usize>,
    pub latents: Vec<LatentImage>,
}

impl Trajectory {
    pub fn clean(&self) -> &LatentImage {
        &self.latents[0]
    }

    /// Most-noised latent (`x_T` for a full grid).
    pub fn noisiest(&self) -> &LatentImage {
        self.latents.last().expect("trajectory is never empty")
    }

    /// Latent at grid position `k` (0 = clean).
    pub fn at(&self, k: usize) -> &LatentImage {
        &self.latents[k]
    }

    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }

    /// Number of update steps (`len - 1`).
    pub fn n_steps(&self) -> usize {
        self.latents.len() - 1
    }
}

/// Sum of squared elementwise differences, the denoising training loss.
pub fn ddpm_loss(eps_true: &LatentImage, eps_pred: &LatentImage) -> Result<f64, DiffusionError> {
    eps_true.ensure_same_shape(eps_pred)?;
    let loss = eps_true
        .data()
        .iter()
        .zip(eps_pred.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>();
    if !loss.is_finite() {
        return Err(DiffusionError::NonFinite("ddpm_loss".into()));
    }
    Ok(loss)
}

/// Closed-form forward marginal `sqrt(ab_t) * x0 + sqrt(1 - ab_t) * noise`.
pub fn forward_diffuse(
    x0: &LatentImage,
    t: usize,
    schedule: &NoiseSchedule,
    noise: &LatentImage,
) -> Result<LatentImage, DiffusionError> {
    let ab = schedule.alpha_bar(t)?;
    if t == 0 {
        return Err(DiffusionError::StepOutOfRange {
            t,
            max: schedule.steps(),
        });
    }
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let out = x0.zip_with(noise, |x, n| a * x + b * n)?;
    out.ensure_finite("forward_diffuse")?;
    Ok(out)
}

/// Ancestral DDPM step from `t` to `t - 1` with `sigma_t = sqrt(beta_t)`:
/// `x_{t-1} = (x_t - (1 - alpha_t) / sqrt(1 - ab_t) * eps) / sqrt(alpha_t) + sigma_t * z`.
///
/// The caller supplies `z` (zero at `t = 1`).
pub fn ddpm_step(
    x_t: &LatentImage,
    t: usize,
    schedule: &NoiseSchedule,
    predictor: &dyn NoisePredictor,
    condition: &Condition,
    z: &LatentImage,
) -> Result<LatentImage, DiffusionError> {
    let alpha = schedule.alpha(t)?;
    let beta = schedule.beta(t)?;
    let ab = schedule.alpha_bar(t)?;
    x_t.ensure_same_shape(z)?;
    let eps = predictor.predict(x_t, t, ab, condition)?;
    x_t.ensure_same_shape(&eps)?;
    let coef = (1.0 - alpha) / (1.0 - ab).sqrt();
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let sigma = beta.sqrt();
    let data = x_t
        .data()
        .iter()
        .zip(eps.data())
        .zip(z.data())
        .map(|((&x, &e), &n)| inv_sqrt_alpha * (x - coef * e) + sigma * n)
        .collect();
    let out = LatentImage::from_vec(x_t.shape(), data)?;
    out.ensure_finite("ddpm_step")?;
    Ok(out)
}

/// Deterministic DDIM move between cumulative levels `ab_from` and `ab_to`
/// given a noise estimate:
/// `x_to = sqrt(ab_to) * (x - sqrt(1 - ab_from) * eps) / sqrt(ab_from) + sqrt(1 - ab_to) * eps`.
///
/// Direction-agnostic; sampling and inversion both use it.
pub fn ddim_update(
    x: &LatentImage,
    eps: &LatentImage,
    ab_from: f64,
    ab_to: f64,
) -> Result<LatentImage, DiffusionError> {
    let (s_from, n_from) = (ab_from.sqrt(), (1.0 - ab_from).sqrt());
    let (s_to, n_to) = (ab_to.sqrt(), (1.0 - ab_to).sqrt());
    let out = x.zip_with(eps, |x, e| s_to * ((x - n_from * e) / s_from) + n_to * e)?;
    out.ensure_finite("ddim_update")?;
    Ok(out)
}

/// Clean-sample estimate `(x_t - sqrt(1 - ab) * eps) / sqrt(ab)`.
pub fn predicted_x0(
    x_t: &LatentImage,
    eps: &LatentImage,
    alpha_bar: f64,
) -> Result<LatentImage, DiffusionError> {
    let (s, n) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x_t.zip_with(eps, |x, e| (x - n * e) / s)
}

/// One DDIM (sigma = 0) denoising step from `t_from` down to `t_to`.
pub fn ddim_step(
    x_t: &LatentImage,
    t_from: usize,
    t_to: usize,
    schedule: &NoiseSchedule,
    predictor: &dyn NoisePredictor,
    condition: &Condition,
) -> Result<LatentImage, DiffusionError> {
    if t_from <= t_to {
        return Err(DiffusionError::StepOrder { t_from, t_to });
    }
    let ab_from = schedule.alpha_bar(t_from)?;
    let ab_to = schedule.alpha_bar(t_to)?;
    let eps = predictor.predict(x_t, t_from, ab_from, condition)?;
    x_t.ensure_same_shape(&eps)?;
    ddim_update(x_t, &eps, ab_from, ab_to)
}

/// DDIM sampling over an evenly spaced grid from `T` down to 0.
pub fn ddim_sample(
    x_t: &LatentImage,
    schedule: &NoiseSchedule,
    predictor: &dyn NoisePredictor,
    condition: &Condition,
    n_steps: usize,
) -> Result<Trajectory, DiffusionError> {
    x_t.ensure_finite("ddim_sample input")?;
    let grid = schedule.timestep_grid(n_steps)?;
    let mut latents = Vec::with_capacity(grid.len());
    latents.push(x_t.clone());
    for pair in grid.windows(2).rev() {
        let (t_to, t_from) = (pair[0], pair[1]);
        let next = ddim_step(
            latents.last().unwrap(),
            t_from,
            t_to,
            schedule,
            predictor,
            condition,
        )?;
        latents.push(next);
    }
    latents.reverse();
    Ok(Trajectory {
        timesteps: grid,
        latents,
    })
}

/// DDIM inversion: runs the DDIM update with increasing noise level from a
/// clean sample. Each step from `t_k` to `t_{k+1}` evaluates the predictor
/// at the current latent with the destination timestep `t_{k+1}`, which
/// keeps closed-form predictors away from `alpha_bar = 1`.
pub fn ddim_invert(
    x0: &LatentImage,
    schedule: &NoiseSchedule,
    predictor: &dyn NoisePredictor,
    condition: &Condition,
    n_steps: usize,
) -> Result<Trajectory, DiffusionError> {
    x0.ensure_finite("ddim_invert input")?;
    let grid = schedule.timestep_grid(n_steps)?;
    let mut latents = Vec::with_capacity(grid.len());
    latents.push(x0.clone());
    for pair in grid.windows(2) {
        let (t_from, t_to) = (pair[0], pair[1]);
        let ab_from = schedule.alpha_bar(t_from)?;
        let ab_to = schedule.alpha_bar(t_to)?;
        let current = latents.last().unwrap();
        let eps = predictor.predict(current, t_to, ab_to, condition)?;
        current.ensure_same_shape(&eps)?;
        let next = ddim_update(current, &eps, ab_from, ab_to)?;
        latents.push(next);
    }
    Ok(Trajectory {
        timesteps: grid,
        latents,
    })
}
