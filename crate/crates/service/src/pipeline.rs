//! Caption -> layout -> assets -> composed image, persisted per run.

use std::path::PathBuf;

use lmd_core::diffusion::{write_trajectory_dump, LatentImage, Trajectory};
use lmd_core::generator::mask::FloodFillRefiner;
use lmd_core::generator::{build_assets, compose_and_generate, GenerationConfig};
use lmd_core::{scale_layout, validate_layout, Canvas, Layout};
use lmd_llm::backend::initial_messages;
use lmd_llm::{parse_completion, LlmBackend, PromptRole, PromptTemplate};
use thiserror::Error;

use crate::render::{encode_png, render_layout_svg};
use crate::store::{RunRecord, RunStatus, RunStore, Stage, StoreError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("layout stage failed (run {run_id}): {message}")]
    LayoutStage { run_id: String, message: String },
    #[error("image stage failed (run {run_id}): {message}")]
    ImageStage { run_id: String, message: String },
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl PipelineError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::LayoutStage { .. } => Some(Stage::Layout),
            PipelineError::ImageStage { .. } => Some(Stage::Image),
            PipelineError::Store(_) => None,
        }
    }

    pub fn run_id(&self) -> Option<&str> {
        match self {
            PipelineError::LayoutStage { run_id, .. }
            | PipelineError::ImageStage { run_id, .. } => Some(run_id),
            PipelineError::Store(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: RunRecord,
    pub image: LatentImage,
    pub png: Vec<u8>,
    pub dir: PathBuf,
}

/// Asks the backend for a layout; returns the raw completion and its parse.
pub async fn layout_from_caption(
    backend: &dyn LlmBackend,
    template: &PromptTemplate,
    role: PromptRole,
    caption: &str,
    canvas: Canvas,
) -> Result<(String, Layout), String> {
    let messages = initial_messages(template, caption, role).map_err(|e| e.to_string())?;
    let completion = backend
        .complete(&messages)
        .await
        .map_err(|e| e.to_string())?;
    let layout = parse_completion(&completion, canvas)
        .map_err(|d| format!("could not parse completion: {d}"))?;
    Ok((completion, layout))
}

fn fail(store: &RunStore, record: &mut RunRecord, stage: Stage, message: String) -> PipelineError {
    log::error!("run {}: {stage:?} stage failed: {message}", record.id);
    let persisted = record
        .fail(stage, message.clone())
        .and_then(|_| store.store_run(record));
    if let Err(e) = persisted {
        return PipelineError::Store(e);
    }
    let run_id = record.id.clone();
    match stage {
        Stage::Layout => PipelineError::LayoutStage { run_id, message },
        Stage::Image => PipelineError::ImageStage { run_id, message },
    }
}

/// Records the layout on the run and persists `layout.json` and `layout.svg`.
pub fn accept_layout(
    store: &RunStore,
    record: &mut RunRecord,
    layout: Layout,
) -> Result<(), PipelineError> {
    let report = validate_layout(&layout);
    if !report.is_clean {
        log::warn!(
            "run {}: layout has {} out-of-bounds boxes and {} overlapping pairs",
            record.id,
            report.out_of_bounds.len(),
            report.overlapping_pairs.len()
        );
    }
    store.write_artifact(record, "layout.json", layout.to_json().as_bytes())?;
    store.write_artifact(record, "layout.svg", render_layout_svg(&layout).as_bytes())?;
    record.validation = Some(report);
    record.layout = Some(layout);
    record.advance(RunStatus::LayoutDone)?;
    store.store_run(record)?;
    Ok(())
}

fn dump(trajectory: &Trajectory, config: &GenerationConfig) -> Vec<u8> {
    let mut bytes = Vec::new();
    write_trajectory_dump(&mut bytes, trajectory, config.schedule.steps, config.seed)
        .expect("dump into memory");
    bytes
}

/// Image stage for a run whose layout is accepted: assets, composition and
/// every artifact, then `image_done`.
pub fn generate_image(store: &RunStore, mut record: RunRecord) -> Result<RunOutput, PipelineError> {
    let config = record.config.clone();
    let Some(layout) = record.layout.clone() else {
        return Err(fail(
            store,
            &mut record,
            Stage::Image,
            "run has no layout".into(),
        ));
    };
    let latent_layout = scale_layout(&layout, config.latent_canvas());
    let generated = build_assets(&latent_layout, &config, &FloodFillRefiner).and_then(|assets| {
        compose_and_generate(&latent_layout, &assets, &config).map(|out| (assets, out))
    });
    let (assets, (image, compose)) = match generated {
        Ok(v) => v,
        Err(e) => return Err(fail(store, &mut record, Stage::Image, e.to_string())),
    };

    for (i, asset) in assets.iter().enumerate() {
        store.write_artifact(
            &mut record,
            &format!("asset_{i}_inversion.bin"),
            &dump(&asset.trajectory, &config),
        )?;
        store.write_artifact(
            &mut record,
            &format!("asset_{i}_mask.pbm"),
            asset.mask.to_pbm().as_bytes(),
        )?;
    }
    let final_latent = Trajectory {
        timesteps: vec![0],
        latents: vec![image.clone()],
    };
    store.write_artifact(&mut record, "latent.bin", &dump(&final_latent, &config))?;
    let scale = (layout.canvas.width as usize / config.latent_shape.width).max(1);
    let png = encode_png(&image, scale);
    store.write_artifact(&mut record, "image.png", &png)?;
    record.compose = Some(compose);
    record.advance(RunStatus::ImageDone)?;
    store.store_run(&record)?;
    let dir = store.run_dir(&record.id)?;
    Ok(RunOutput {
        record,
        image,
        png,
        dir,
    })
}

/// Starts a run for an existing layout (no LLM involved).
pub fn generate_from_layout(
    store: &RunStore,
    layout: Layout,
    config: &GenerationConfig,
) -> Result<RunOutput, PipelineError> {
    let record = RunRecord::new(None, config.clone());
    store.store_run(&record)?;
    generate_for_record(store, record, layout)
}

/// [`generate_from_layout`] for a record the caller already stored.
pub fn generate_for_record(
    store: &RunStore,
    mut record: RunRecord,
    layout: Layout,
) -> Result<RunOutput, PipelineError> {
    if let Err(e) = record.config.validate() {
        return Err(fail(store, &mut record, Stage::Image, e.to_string()));
    }
    accept_layout(store, &mut record, layout)?;
    generate_image(store, record)
}

/// The whole pipeline. A layout-stage failure stops before any diffusion work.
pub async fn run_pipeline(
    backend: &dyn LlmBackend,
    template: &PromptTemplate,
    role: PromptRole,
    caption: &str,
    config: &GenerationConfig,
    store: &RunStore,
) -> Result<RunOutput, PipelineError> {
    let record = RunRecord::new(Some(caption.to_string()), config.clone());
    store.store_run(&record)?;
    run_pipeline_for_record(backend, template, role, store, record).await
}

/// [`run_pipeline`] for a record the caller already stored; the caption
/// comes from the record.
pub async fn run_pipeline_for_record(
    backend: &dyn LlmBackend,
    template: &PromptTemplate,
    role: PromptRole,
    store: &RunStore,
    mut record: RunRecord,
) -> Result<RunOutput, PipelineError> {
    let config = record.config.clone();
    if let Err(e) = config.validate() {
        return Err(fail(store, &mut record, Stage::Image, e.to_string()));
    }
    let caption = record.caption.clone().unwrap_or_default();
    let (completion, layout) =
        match layout_from_caption(backend, template, role, &caption, config.canvas).await {
            Ok(v) => v,
            Err(message) => return Err(fail(store, &mut record, Stage::Layout, message)),
        };
    store.write_artifact(&mut record, "completion.txt", completion.as_bytes())?;
    accept_layout(store, &mut record, layout)?;
    let store = store.clone();
    tokio::task::spawn_blocking(move || generate_image(&store, record))
        .await
        .expect("image worker panicked")
}
