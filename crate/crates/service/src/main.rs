use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use lmd_core::benchmark::TaskKind;
use lmd_core::Layout;
use lmd_llm::fixtures::demo_mock;
use lmd_llm::{
    oracle_mock, parse_completion, run_benchmark, scripted_failure_mock, BenchmarkRun, HttpLlm,
    LlmBackend, PromptTemplate,
};
use lmd_service::pipeline::layout_from_caption;
use lmd_service::render::render_layout_svg;
use lmd_service::{
    generate_from_layout, run_pipeline, AppConfig, RunOutput, RunStore, ServiceError,
};

#[derive(Debug, Parser)]
#[command(name = "lmd", version, about = "Layout-grounded text-to-image toolkit")]
struct Cli {
    /// Use the offline mock LLM; no network access.
    #[arg(long, global = true)]
    mock: bool,
    /// Generation seed (also samples benchmark tasks).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Log at info level (debug with -vv).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ask the LLM for a layout and print it as JSON.
    Layout { caption: String },
    /// Generate an image from a layout file (JSON, or the tuple format).
    Generate {
        #[arg(long)]
        layout: PathBuf,
    },
    /// Caption to image in one go.
    Pipeline { caption: String },
    /// Score layouts on the synthetic benchmark.
    Benchmark {
        /// negation, numeracy, attribute, spatial or all.
        #[arg(long, default_value = "all")]
        kind: String,
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// With --mock, fail 7 numeracy and 2 spatial tasks on purpose.
        #[arg(long)]
        scripted: bool,
        #[arg(long)]
        json: bool,
    },
    /// Draw a layout file as SVG.
    Render {
        #[arg(long)]
        layout: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Stage(String),
}

impl From<ServiceError> for Failure {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Stage(e.to_string()),
        }
    }
}

fn load_config(cli: &Cli) -> Result<AppConfig, Failure> {
    let mut config = match &cli.config {
        Some(p) => AppConfig::from_file(p)?,
        None => AppConfig::default(),
    }
    .with_env();
    if let Some(d) = &cli.data_dir {
        config.data_dir = d.clone();
    }
    if let Some(s) = cli.seed {
        config.generation.seed = s;
    }
    config.mock |= cli.mock;
    config.validate()?;
    Ok(config)
}

fn backend(config: &AppConfig) -> Result<Arc<dyn LlmBackend>, Failure> {
    if config.mock {
        return Ok(Arc::new(demo_mock()));
    }
    HttpLlm::new(config.llm.clone())
        .map(|b| Arc::new(b) as Arc<dyn LlmBackend>)
        .map_err(|e| Failure::Usage(e.to_string()))
}

fn read_layout(path: &PathBuf, config: &AppConfig) -> Result<Layout, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    match Layout::from_json(&text) {
        Ok(l) => Ok(l),
        Err(json_err) => parse_completion(&text, config.generation.canvas).map_err(|d| {
            Failure::Usage(format!(
                "{}: neither layout JSON ({json_err}) nor tuple format ({d})",
                path.display()
            ))
        }),
    }
}

fn print_run(out: &RunOutput) {
    let summary = serde_json::json!({
        "id": out.record.id,
        "status": out.record.status,
        "dir": out.dir,
        "artifacts": out.record.artifacts,
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).expect("summary serializes")
    );
}

async fn run(cli: Cli) -> Result<(), Failure> {
    let config = load_config(&cli)?;
    let template = PromptTemplate::default();
    match cli.command {
        Command::Layout { caption } => {
            let backend = backend(&config)?;
            let (_, layout) = layout_from_caption(
                backend.as_ref(),
                &template,
                config.llm.prompt_role,
                &caption,
                config.generation.canvas,
            )
            .await
            .map_err(Failure::Stage)?;
            println!("{}", layout.to_json());
        }
        Command::Generate { layout } => {
            let layout = read_layout(&layout, &config)?;
            config.prepare_data_dir()?;
            let store = RunStore::open(&config.data_dir).map_err(ServiceError::from)?;
            let generation = config.generation.clone();
            let out = tokio::task::spawn_blocking(move || {
                generate_from_layout(&store, layout, &generation)
            })
            .await
            .expect("generation worker panicked")
            .map_err(ServiceError::from)?;
            print_run(&out);
        }
        Command::Pipeline { caption } => {
            let backend = backend(&config)?;
            config.prepare_data_dir()?;
            let store = RunStore::open(&config.data_dir).map_err(ServiceError::from)?;
            let out = run_pipeline(
                backend.as_ref(),
                &template,
                config.llm.prompt_role,
                &caption,
                &config.generation,
                &store,
            )
            .await
            .map_err(ServiceError::from)?;
            print_run(&out);
        }
        Command::Benchmark {
            kind,
            n,
            scripted,
            json,
        } => {
            let kinds = if kind == "all" {
                TaskKind::ALL.to_vec()
            } else {
                vec![kind.parse::<TaskKind>().map_err(Failure::Usage)?]
            };
            let bench = BenchmarkRun {
                kinds,
                n,
                seed: cli.seed.unwrap_or(0),
                parallelism: config.parallelism,
                role: config.llm.prompt_role,
            };
            let tasks = bench.tasks();
            let backend: Arc<dyn LlmBackend> = match (config.mock, scripted) {
                (true, false) => Arc::new(oracle_mock(&tasks)),
                (true, true) => Arc::new(
                    scripted_failure_mock(&tasks, 7, 2)
                        .map_err(|e| Failure::Usage(e.to_string()))?,
                ),
                (false, true) => return Err(Failure::Usage("--scripted needs --mock".into())),
                (false, false) => backend(&config)?,
            };
            let report = run_benchmark(backend, &template, &bench)
                .await
                .map_err(|e| Failure::Stage(e.to_string()))?;
            if json {
                println!("{}", report.to_json());
            } else {
                print!("{}", report.to_table());
            }
        }
        Command::Render { layout, out } => {
            let layout = read_layout(&layout, &config)?;
            std::fs::write(&out, render_layout_svg(&layout))
                .map_err(|e| Failure::Stage(format!("{}: {e}", out.display())))?;
        }
        Command::Serve { bind } => {
            let mut config = config;
            if let Some(b) = bind {
                config.bind = b;
            }
            lmd_service::server::serve(config).await?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Stage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
