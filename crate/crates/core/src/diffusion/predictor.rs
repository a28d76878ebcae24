//! Noise predictors. The toy engine replaces a learned denoiser with exact
//! closed-form predictors for simple data distributions, so every sampler
//! identity can be checked to machine precision.

use serde::{Deserialize, Serialize};

use super::latent::{Grid, LatentImage};
use super::DiffusionError;
use crate::layout::BoundingBox;

/// One foreground term of a composite condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTerm {
    /// Clean image the object term pulls toward.
    pub target: LatentImage,
    /// Box on the latent grid.
    pub bbox: BoundingBox,
    /// Per-pixel weight on this term's contribution; `None` means weight 1.
    pub attenuation: Option<Grid>,
}

/// Conditioning signal: the toy analog of a composite text prompt
/// `"[background] with [box 1], [box 2], ..."`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub background_target: LatentImage,
    pub object_terms: Vec<ObjectTerm>,
}

impl Condition {
    pub fn background(target: LatentImage) -> Self {
        Self {
            background_target: target,
            object_terms: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), DiffusionError> {
        let shape = self.background_target.shape();
        for term in &self.object_terms {
            self.background_target.ensure_same_shape(&term.target)?;
            if let Some(g) = &term.attenuation {
                if g.height != shape.height || g.width != shape.width {
                    return Err(DiffusionError::ShapeMismatch(format!(
                        "attenuation grid {}x{} vs latent {}x{}",
                        g.height, g.width, shape.height, shape.width
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Estimates the noise `eps` contained in `x_t`.
///
/// `alpha_bar` is the cumulative schedule product at `t`, passed so that
/// closed-form predictors need no schedule of their own.
pub trait NoisePredictor: Send + Sync {
    fn predict(
        &self,
        x_t: &LatentImage,
        t: usize,
        alpha_bar: f64,
        condition: &Condition,
    ) -> Result<LatentImage, DiffusionError>;
}

impl<F> NoisePredictor for F
where
    F: Fn(&LatentImage, usize, f64, &Condition) -> Result<LatentImage, DiffusionError>
        + Send
        + Sync,
{
    fn predict(
        &self,
        x_t: &LatentImage,
        t: usize,
        alpha_bar: f64,
        condition: &Condition,
    ) -> Result<LatentImage, DiffusionError> {
        self(x_t, t, alpha_bar, condition)
    }
}

fn point_mass_eps(
    x_t: &LatentImage,
    target: &LatentImage,
    alpha_bar: f64,
) -> Result<LatentImage, DiffusionError> {
    if !(alpha_bar < 1.0 && alpha_bar > 0.0) {
        return Err(DiffusionError::Domain(format!(
            "analytic predictor needs 0 < alpha_bar < 1, got {alpha_bar}"
        )));
    }
    let signal = alpha_bar.sqrt();
    let noise = (1.0 - alpha_bar).sqrt();
    x_t.zip_with(target, |x, y| (x - signal * y) / noise)
}

/// Exact noise for a point-mass data distribution at `target`:
/// `eps = (x_t - sqrt(alpha_bar) * target) / sqrt(1 - alpha_bar)`.
///
/// Ignores the condition. DDIM sampling with this predictor lands on
/// `target` from any starting latent.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticPredictor {
    target: LatentImage,
}

impl AnalyticPredictor {
    pub fn target(&self) -> &LatentImage {
        &self.target
    }
}

pub fn make_analytic_predictor(target: LatentImage) -> AnalyticPredictor {
    AnalyticPredictor { target }
}

impl NoisePredictor for AnalyticPredictor {
    fn predict(
        &self,
        x_t: &LatentImage,
        _t: usize,
        alpha_bar: f64,
        _condition: &Condition,
    ) -> Result<LatentImage, DiffusionError> {
        point_mass_eps(x_t, &self.target, alpha_bar)
    }
}

/// Posterior-mean noise for data drawn i.i.d. `N(mean, spread^2)` per
/// element:
/// `eps = sqrt(1 - ab) * (x_t - sqrt(ab) * mean) / (ab * spread^2 + 1 - ab)`.
///
/// Unlike the point mass, the predicted noise varies along a DDIM path, so
/// inversion incurs a discretization error that shrinks with step count.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPredictor {
    pub mean: LatentImage,
    pub spread: f64,
}

impl NoisePredictor for GaussianPredictor {
    fn predict(
        &self,
        x_t: &LatentImage,
        _t: usize,
        alpha_bar: f64,
        _condition: &Condition,
    ) -> Result<LatentImage, DiffusionError> {
        let var = alpha_bar * self.spread * self.spread + 1.0 - alpha_bar;
        if var <= 0.0 {
            return Err(DiffusionError::Domain(
                "zero spread at alpha_bar = 1 has no defined noise".into(),
            ));
        }
        let signal = alpha_bar.sqrt();
        let noise = (1.0 - alpha_bar).sqrt();
        x_t.zip_with(&self.mean, |x, m| noise * (x - signal * m) / var)
    }
}

/// Blends analytic predictors according to the condition:
/// `eps = eps_bg + sum_k w_k * (eps_k - eps_bg)`, where `eps_bg` and `eps_k`
/// are point-mass predictors for the background and object targets and
/// `w_k` is the term's attenuation grid (broadcast over channels).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CompositePredictor;

impl CompositePredictor {
    /// Noise estimate plus each object term's weighted contribution
    /// `w_k * (eps_k - eps_bg)`, in term order.
    pub fn predict_with_contributions(
        &self,
        x_t: &LatentImage,
        alpha_bar: f64,
        condition: &Condition,
    ) -> Result<(LatentImage, Vec<LatentImage>), DiffusionError> {
        condition.validate()?;
        let shape = x_t.shape();
        let background = point_mass_eps(x_t, &condition.background_target, alpha_bar)?;
        let mut eps = background.clone();
        let mut contributions = Vec::with_capacity(condition.object_terms.len());
        for term in &condition.object_terms {
            let object = point_mass_eps(x_t, &term.target, alpha_bar)?;
            let mut contribution = object.zip_with(&background, |o, b| o - b)?;
            if let Some(weights) = &term.attenuation {
                let plane = shape.plane();
                for (i, v) in contribution.data_mut().iter_mut().enumerate() {
                    *v *= weights.data[i % plane];
                }
            }
            // Zero contributions are skipped so fully attenuated pixels stay
            // bitwise equal to the background estimate.
            for (e, &c) in eps.data_mut().iter_mut().zip(contribution.data()) {
                if c != 0.0 {
                    *e += c;
                }
            }
            contributions.push(contribution);
        }
        Ok((eps, contributions))
    }
}

impl NoisePredictor for CompositePredictor {
    fn predict(
        &self,
        x_t: &LatentImage,
        _t: usize,
        alpha_bar: f64,
        condition: &Condition,
    ) -> Result<LatentImage, DiffusionError> {
        self.predict_with_contributions(x_t, alpha_bar, condition)
            .map(|(eps, _)| eps)
    }
}
