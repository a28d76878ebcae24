//! Layout-grounded generation over the toy diffusion engine.
//!
//! Two stages:
//!
//! 1. Per box, generate a single-object image under a composite condition
//!    whose object term is attenuated outside the box, read a saliency map
//!    off the object term, refine it into a mask, and DDIM-invert the image.
//! 2. Place every masked inverted latent onto fresh Gaussian noise, then
//!    denoise: during the frozen phase each foreground region is reset to
//!    its inversion latent after every step, during the free phase the whole
//!    latent evolves.

pub mod descriptor;
pub mod mask;
pub mod measure;
pub mod render;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffusion::{
    ddim_invert, ddim_sample, ddim_step, ddim_update, stream_rng, CompositePredictor, Condition,
    DiffusionError, Grid, LatentImage, NoiseSchedule, ObjectTerm, Shape, Trajectory,
};
use crate::layout::{BoundingBox, Canvas, Layout, ObjectSpec};
use descriptor::{BackgroundDescriptor, ObjectDescriptor};
use mask::{FloodFillRefiner, Mask, MaskRefiner, SaliencyMap};
use render::{object_term_target, render_background};

pub use mask::refine_mask;
pub use render::render_target;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeneratorError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("assets do not match layout: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: crate::diffusion::DEFAULT_STEPS,
            beta_start: crate::diffusion::DEFAULT_BETA_START,
            beta_end: crate::diffusion::DEFAULT_BETA_END,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule, DiffusionError> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }
}

/// Knobs of the grounded generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    /// Fraction of sampling steps in which the whole latent may change.
    pub r: f64,
    pub n_steps: usize,
    pub seed: u64,
    /// Weight on an object term outside its box (1 = no attenuation).
    pub attenuation: f64,
    /// Superlevel fraction of peak saliency kept in the mask.
    pub mask_threshold: f64,
    pub latent_shape: Shape,
    /// Canvas the layout is expressed on.
    pub canvas: Canvas,
    pub schedule: ScheduleConfig,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            r: 0.3,
            n_steps: 50,
            seed: 0,
            attenuation: 0.1,
            mask_threshold: 0.5,
            latent_shape: Shape::default(),
            canvas: Canvas::default(),
            schedule: ScheduleConfig::default(),
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), GeneratorError> {
        let bad = |what: &str| Err(GeneratorError::Domain(what.to_string()));
        if !(0.0..=1.0).contains(&self.r) {
            return bad("r must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.attenuation) {
            return bad("attenuation must lie in [0, 1]");
        }
        if !(self.mask_threshold > 0.0 && self.mask_threshold < 1.0) {
            return bad("mask threshold must lie in (0, 1)");
        }
        if self.latent_shape.is_empty() {
            return bad("latent shape must be non-empty");
        }
        if self.n_steps > self.schedule.steps {
            return bad("n_steps exceeds the schedule length");
        }
        Ok(())
    }

    pub fn latent_canvas(&self) -> Canvas {
        Canvas {
            width: self.latent_shape.width as u32,
            height: self.latent_shape.height as u32,
        }
    }

    /// `(frozen, free)` step counts: `free = floor(r * n)`, the rest frozen.
    pub fn phase_split(&self) -> (usize, usize) {
        let free = ((self.r * self.n_steps as f64) + 1e-9).floor() as usize;
        let free = free.min(self.n_steps);
        (self.n_steps - free, free)
    }
}

/// Weight grid: 1 inside `bbox`, `outside` elsewhere.
pub fn attenuation_grid(bbox: &BoundingBox, shape: Shape, outside: f64) -> Grid {
    Grid::from_fn(shape.height, shape.width, |row, col| {
        if bbox.contains_pixel(col as i64, row as i64) {
            1.0
        } else {
            outside
        }
    })
}

fn object_term(
    spec: &ObjectSpec,
    background: &BackgroundDescriptor,
    config: &GenerationConfig,
) -> Result<ObjectTerm, GeneratorError> {
    let descriptor = ObjectDescriptor::parse(&spec.description);
    Ok(ObjectTerm {
        target: object_term_target(&descriptor, &spec.bbox, background, config.latent_shape)?,
        bbox: spec.bbox,
        attenuation: Some(attenuation_grid(
            &spec.bbox,
            config.latent_shape,
            config.attenuation,
        )),
    })
}

/// Composite condition for `"[background] with [box 1], [box 2], ..."`.
/// Boxes are on the latent grid.
pub fn composite_condition(
    objects: &[ObjectSpec],
    background_prompt: &str,
    config: &GenerationConfig,
) -> Result<Condition, GeneratorError> {
    let background = BackgroundDescriptor::parse(background_prompt);
    let object_terms = objects
        .iter()
        .map(|o| object_term(o, &background, config))
        .collect::<Result<_, _>>()?;
    Ok(Condition {
        background_target: render_background(&background, config.latent_shape),
        object_terms,
    })
}

/// Output of [`generate_single_object`].
#[derive(Debug, Clone, PartialEq)]
pub struct SingleObjectSample {
    pub sample: LatentImage,
    /// Accumulated object-term magnitude, normalized to max 1.
    pub saliency: SaliencyMap,
    pub condition: Condition,
}

/// Samples one object in its box under the attenuated composite condition
/// and records how strongly the object term acted on each pixel.
///
/// `stream` selects the noise stream under `config.seed`; the pipeline uses
/// `object_index + 1`.
pub fn generate_single_object(
    spec: &ObjectSpec,
    background_prompt: &str,
    config: &GenerationConfig,
    stream: u64,
) -> Result<SingleObjectSample, GeneratorError> {
    config.validate()?;
    let schedule = config.schedule.build()?;
    let condition = composite_condition(std::slice::from_ref(spec), background_prompt, config)?;
    let shape = config.latent_shape;
    let mut x = LatentImage::gaussian(shape, &mut stream_rng(config.seed, stream));
    let mut saliency = Grid::filled(shape.height, shape.width, 0.0);

    let grid = schedule.timestep_grid(config.n_steps)?;
    for pair in grid.windows(2).rev() {
        let (t_to, t_from) = (pair[0], pair[1]);
        let ab_from = schedule.alpha_bar(t_from)?;
        let ab_to = schedule.alpha_bar(t_to)?;
        let (eps, contributions) =
            CompositePredictor.predict_with_contributions(&x, ab_from, &condition)?;
        let contribution = &contributions[0];
        for row in 0..shape.height {
            for col in 0..shape.width {
                let norm = (0..shape.channels)
                    .map(|c| contribution.get(c, row, col).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let v = saliency.get(row, col) + norm;
                saliency.set(row, col, v);
            }
        }
        x = ddim_update(&x, &eps, ab_from, ab_to)?;
    }

    let max = saliency.max();
    if !(max > 0.0 && max.is_finite()) {
        return Err(GeneratorError::Domain(format!(
            "object {:?} has no saliency; it is indistinguishable from the background",
            spec.description
        )));
    }
    saliency.data.iter_mut().for_each(|v| *v /= max);
    Ok(SingleObjectSample {
        sample: x,
        saliency,
        condition,
    })
}

/// Plain DDIM sample of the background condition alone from the same
/// noise stream as [`generate_single_object`].
pub fn generate_background(
    background_prompt: &str,
    config: &GenerationConfig,
    stream: u64,
) -> Result<LatentImage, GeneratorError> {
    config.validate()?;
    let schedule = config.schedule.build()?;
    let condition = composite_condition(&[], background_prompt, config)?;
    let x = LatentImage::gaussian(config.latent_shape, &mut stream_rng(config.seed, stream));
    let traj = ddim_sample(
        &x,
        &schedule,
        &CompositePredictor,
        &condition,
        config.n_steps,
    )?;
    Ok(traj.clean().clone())
}

/// Masked inverted latent describing one foreground object.
#[derive(Debug, Clone, PartialEq)]
pub struct ForegroundAsset {
    /// DDIM inversion of the single-object sample, stored unmasked.
    pub trajectory: Trajectory,
    pub mask: Mask,
    /// Tight bounds of `mask`.
    pub mask_outer_box: BoundingBox,
    /// The box specification on the latent grid.
    pub spec: ObjectSpec,
    pub saliency: SaliencyMap,
}

impl ForegroundAsset {
    /// Offset `(dx, dy)` that moves the mask's outer-box centre onto the
    /// spec-box centre, rounded half up.
    pub fn placement_offset(&self) -> (i64, i64) {
        let (sx, sy) = self.spec.bbox.center();
        let (mx, my) = self.mask_outer_box.center();
        (
            (sx - mx + 0.5).floor() as i64,
            (sy - my + 0.5).floor() as i64,
        )
    }
}

pub fn build_foreground_asset(
    spec: &ObjectSpec,
    background_prompt: &str,
    config: &GenerationConfig,
    stream: u64,
) -> Result<ForegroundAsset, GeneratorError> {
    build_foreground_asset_with(spec, background_prompt, config, stream, &FloodFillRefiner)
}

pub fn build_foreground_asset_with(
    spec: &ObjectSpec,
    background_prompt: &str,
    config: &GenerationConfig,
    stream: u64,
    refiner: &dyn MaskRefiner,
) -> Result<ForegroundAsset, GeneratorError> {
    let single = generate_single_object(spec, background_prompt, config, stream)?;
    let (mask, mask_outer_box) = refiner.refine(&single.saliency, config.mask_threshold)?;
    if mask.is_empty() {
        return Err(GeneratorError::Domain(
            "mask refiner returned an empty mask".into(),
        ));
    }
    let schedule = config.schedule.build()?;
    let trajectory = ddim_invert(
        &single.sample,
        &schedule,
        &CompositePredictor,
        &single.condition,
        config.n_steps,
    )?;
    Ok(ForegroundAsset {
        trajectory,
        mask,
        mask_outer_box,
        spec: spec.clone(),
        saliency: single.saliency,
    })
}

/// One asset per layout object, built on scoped threads. Object `i` uses
/// noise stream `i + 1`.
pub fn build_assets(
    layout: &Layout,
    config: &GenerationConfig,
    refiner: &dyn MaskRefiner,
) -> Result<Vec<ForegroundAsset>, GeneratorError> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = layout
            .objects
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                scope.spawn(move || {
                    build_foreground_asset_with(
                        spec,
                        &layout.background_prompt,
                        config,
                        i as u64 + 1,
                        refiner,
                    )
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("asset worker panicked"))
            .collect()
    })
}

/// Copies `step_latent` under the asset's mask, shifted so the mask's outer
/// box is centred on the spec box, into `background_latent`. Pixels shifted
/// off the grid are dropped.
pub fn place_foreground(
    background_latent: &LatentImage,
    asset: &ForegroundAsset,
    step_latent: &LatentImage,
) -> Result<LatentImage, GeneratorError> {
    background_latent.ensure_same_shape(step_latent)?;
    let shape = background_latent.shape();
    if asset.mask.height != shape.height || asset.mask.width != shape.width {
        return Err(GeneratorError::Mismatch(format!(
            "mask {}x{} vs latent {}x{}",
            asset.mask.height, asset.mask.width, shape.height, shape.width
        )));
    }
    let (dx, dy) = asset.placement_offset();
    let mut out = background_latent.clone();
    for (row, col) in asset.mask.pixels() {
        let (r, c) = (row as i64 + dy, col as i64 + dx);
        if r < 0 || c < 0 || r >= shape.height as i64 || c >= shape.width as i64 {
            continue;
        }
        for ch in 0..shape.channels {
            out.set(ch, r as usize, c as usize, step_latent.get(ch, row, col));
        }
    }
    Ok(out)
}

/// Summary of one composed generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposeRecord {
    pub seed: u64,
    pub n_steps: usize,
    pub r: f64,
    pub frozen_steps: usize,
    pub free_steps: usize,
    /// Placement offset `(dx, dy)` per asset, in layout order.
    pub offsets: Vec<(i64, i64)>,
}

/// Snapshot passed to a compose observer after every sampling step.
pub struct StepView<'a> {
    /// 0-based index of the step just taken.
    pub index: usize,
    /// Grid position reached (`0` = clean).
    pub grid_position: usize,
    pub timestep: usize,
    pub frozen: bool,
    pub latent: &'a LatentImage,
}

pub fn compose_and_generate(
    layout: &Layout,
    assets: &[ForegroundAsset],
    config: &GenerationConfig,
) -> Result<(LatentImage, ComposeRecord), GeneratorError> {
    compose_and_generate_observed(layout, assets, config, |_| {})
}

/// Foreground-aware generation from composed noise. `layout` must already be
/// on the latent grid, with one asset per object in the same order.
pub fn compose_and_generate_observed(
    layout: &Layout,
    assets: &[ForegroundAsset],
    config: &GenerationConfig,
    mut observe: impl FnMut(StepView<'_>),
) -> Result<(LatentImage, ComposeRecord), GeneratorError> {
    config.validate()?;
    if assets.len() != layout.objects.len() {
        return Err(GeneratorError::Mismatch(format!(
            "{} assets for {} objects",
            assets.len(),
            layout.objects.len()
        )));
    }
    for (i, (asset, spec)) in assets.iter().zip(&layout.objects).enumerate() {
        if asset.spec != *spec {
            return Err(GeneratorError::Mismatch(format!(
                "asset {i} was built for {:?}, layout has {:?}",
                asset.spec.description, spec.description
            )));
        }
        if asset.trajectory.n_steps() != config.n_steps {
            return Err(GeneratorError::Mismatch(format!(
                "asset {i} has {} inversion steps, config asks for {}",
                asset.trajectory.n_steps(),
                config.n_steps
            )));
        }
    }

    let schedule = config.schedule.build()?;
    let grid = schedule.timestep_grid(config.n_steps)?;
    let condition = composite_condition(&layout.objects, &layout.background_prompt, config)?;

    let noise = LatentImage::gaussian(config.latent_shape, &mut stream_rng(config.seed, 0));
    let mut x = noise;
    for asset in assets {
        x = place_foreground(&x, asset, asset.trajectory.noisiest())?;
    }

    let (frozen_steps, free_steps) = config.phase_split();
    for (index, k) in (1..grid.len()).rev().enumerate() {
        x = ddim_step(
            &x,
            grid[k],
            grid[k - 1],
            &schedule,
            &CompositePredictor,
            &condition,
        )?;
        let frozen = index < frozen_steps;
        if frozen {
            for asset in assets {
                x = place_foreground(&x, asset, asset.trajectory.at(k - 1))?;
            }
        }
        observe(StepView {
            index,
            grid_position: k - 1,
            timestep: grid[k - 1],
            frozen,
            latent: &x,
        });
    }

    let record = ComposeRecord {
        seed: config.seed,
        n_steps: config.n_steps,
        r: config.r,
        frozen_steps,
        free_steps,
        offsets: assets
            .iter()
            .map(ForegroundAsset::placement_offset)
            .collect(),
    };
    Ok((x, record))
}

/// The composed starting latent: seeded noise with every asset's `x_T`
/// placed in layout order.
pub fn composed_noise(
    assets: &[ForegroundAsset],
    config: &GenerationConfig,
) -> Result<LatentImage, GeneratorError> {
    let mut x = LatentImage::gaussian(config.latent_shape, &mut stream_rng(config.seed, 0));
    for asset in assets {
        x = place_foreground(&x, asset, asset.trajectory.noisiest())?;
    }
    Ok(x)
}
