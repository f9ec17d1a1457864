//! Command-line front end for the glacier mapping pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use glacier_mapper::pipeline::{self, PipelineConfig, Stage};
use glacier_mapper::Error;

#[derive(Debug, Parser)]
#[command(name = "glacier-mapper", version, about = "Glacier outline post-processing: terrain, hydrology, terminus refinement and accumulation zones")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Pipeline configuration (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,

    /// Worker threads. Results do not depend on this value.
    #[arg(long, value_name = "N", env = "GLACIER_MAPPER_THREADS")]
    threads: Option<usize>,

    /// Log progress (-vv for debug output).
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Slope, curvatures, unsphericity and slope-azimuth divergence.
    Terrain(Common),
    /// Filled DEM, D8 flow directions, accumulation and drainage basins.
    Hydro(Common),
    /// Post-processed D-1 and D-2 ablation masks.
    Segment(Common),
    /// Terminus-refined ablation mask.
    RefineTermini(Common),
    /// Full glacier extent including the snow-covered accumulation zone.
    Scaz(Common),
    /// Metrics for previously written masks against the references.
    Evaluate(Common),
    /// Every stage in order.
    Pipeline(Common),
}

impl Command {
    fn split(&self) -> (Stage, &Common) {
        match self {
            Command::Terrain(c) => (Stage::Terrain, c),
            Command::Hydro(c) => (Stage::Hydro, c),
            Command::Segment(c) => (Stage::Segment, c),
            Command::RefineTermini(c) => (Stage::RefineTermini, c),
            Command::Scaz(c) => (Stage::Scaz, c),
            Command::Evaluate(c) => (Stage::Evaluate, c),
            Command::Pipeline(c) => (Stage::Pipeline, c),
        }
    }
}

fn run(stage: Stage, common: &Common) -> Result<(), Error> {
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let cfg = PipelineConfig::load(&common.config)?;
    let products = pipeline::run(&cfg, stage)?;
    let written = products.manifest.map_or(0, |m| m.outputs.len());
    println!("{}: wrote {written} artifacts to {}", stage.name(), cfg.output_dir.display());
    for (label, report) in [("ablation", &products.ablation_metrics), ("glacier", &products.glacier_metrics)] {
        if let Some(r) = report {
            let show = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.4}"));
            println!(
                "{label}: iou {} rc {} pc {} fm {}",
                show(r.aggregate.iou),
                show(r.aggregate.rc),
                show(r.aggregate.pc),
                show(r.aggregate.fm)
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (stage, common) = cli.command.split();
    let level = match common.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(stage, common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
