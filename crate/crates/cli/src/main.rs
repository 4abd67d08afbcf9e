//! `terrafuse`: run the classification workflow stage by stage.
//!
//! Failures print one JSON line on stderr naming the error category and the
//! stage, and exit with 2 (configuration), 3 (data) or 4 (internal).

use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use terrafuse::config::Config;
use terrafuse::pipeline::Source;
use terrafuse::stages::{layout, Runner, Stage, StageOptions};
use terrafuse::Error;

#[derive(Parser)]
#[command(
    name = "terrafuse",
    version,
    about = "Optical + SAR fusion land-cover classification"
)]
struct Cli {
    /// Configuration document (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory holding every artifact and the run manifest.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Override the scene seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct SourceArg {
    /// Only this composite (optical or fused); both when omitted.
    #[arg(long)]
    source: Option<Source>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the truth map, both time series and the sample draws.
    Simulate,
    /// Filter and reduce the series to optical, SAR and fused composites.
    Composite,
    /// Fit CART models on training pins.
    Train {
        #[command(flatten)]
        source: SourceArg,
        /// GeoJSON pins to train on instead of the simulated training draw.
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Apply the models to their composites.
    Classify {
        #[command(flatten)]
        source: SourceArg,
    },
    /// Score the models against validation pins.
    Validate {
        #[command(flatten)]
        source: SourceArg,
        /// GeoJSON pins to validate against instead of the simulated draw.
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Compare the optical and fused reports.
    Compare,
    /// Write PPM previews of the truth, the composite and the class maps.
    Render,
    /// Every stage from simulate to render.
    Run,
    /// Start the local HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
    },
}

struct Failure {
    stage: String,
    category: &'static str,
    code: i32,
    message: String,
}

impl Failure {
    fn core(stage: impl Into<String>, e: Error) -> Self {
        Failure {
            stage: stage.into(),
            category: e.category(),
            code: e.class().exit_code(),
            message: e.to_string(),
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config, Error> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.scene.seed = seed;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn print_outputs(runner: &Runner, stage: Stage, produced: &[String]) {
    for rel in produced {
        println!("{stage}: {}", runner.path(rel).display());
    }
    let show = |rel: &str| {
        if let Ok(text) = std::fs::read_to_string(runner.path(rel)) {
            print!("{text}");
        }
    };
    match stage {
        Stage::Validate => produced
            .iter()
            .filter(|r| r.ends_with(".txt"))
            .for_each(|r| show(r)),
        Stage::Compare => show(layout::COMPARE_TEXT),
        _ => {}
    }
}

fn run_stage(runner: &Runner, stage: Stage, opts: &StageOptions) -> Result<(), Failure> {
    log::info!("running {stage}");
    let produced = runner
        .run(stage, opts)
        .map_err(|e| Failure::core(stage.as_str(), e))?;
    print_outputs(runner, stage, &produced);
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli).map_err(|e| Failure::core("config", e))?;
    if let Command::Serve { port, host } = cli.command {
        let rt = tokio::runtime::Runtime::new().map_err(|e| Failure {
            stage: "serve".into(),
            category: "IoError",
            code: 4,
            message: e.to_string(),
        })?;
        return rt
            .block_on(terrafuse_service::serve(
                cfg,
                cli.out,
                SocketAddr::new(host, port),
            ))
            .map_err(|e| Failure {
                stage: "serve".into(),
                category: e.category(),
                code: e.exit_code(),
                message: e.to_string(),
            });
    }
    let runner = Runner::new(cfg, &cli.out).map_err(|e| Failure::core("config", e))?;
    let mut opts = StageOptions::default();
    let stage = match cli.command {
        Command::Simulate => Stage::Simulate,
        Command::Composite => Stage::Composite,
        Command::Train { source, samples } => {
            opts.source = source.source;
            opts.samples = samples;
            Stage::Train
        }
        Command::Classify { source } => {
            opts.source = source.source;
            Stage::Classify
        }
        Command::Validate { source, samples } => {
            opts.source = source.source;
            opts.samples = samples;
            Stage::Validate
        }
        Command::Compare => Stage::Compare,
        Command::Render => Stage::Render,
        Command::Run => {
            for stage in Stage::ALL {
                run_stage(&runner, stage, &opts)?;
            }
            return Ok(());
        }
        Command::Serve { .. } => unreachable!("handled above"),
    };
    run_stage(&runner, stage, &opts)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let line = json!({
                "error": f.category,
                "stage": f.stage,
                "exit_code": f.code,
                "message": f.message,
            });
            eprintln!("{line}");
            ExitCode::from(f.code as u8)
        }
    }
}
