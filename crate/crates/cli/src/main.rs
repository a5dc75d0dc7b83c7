use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cellprompt_core::pipeline::{self, Overrides, RunConfig, StageRecord};
use cellprompt_core::synth::PlateSpec;
use cellprompt_core::{BackendSpec, Error};

#[derive(Parser)]
#[command(name = "cellprompt", version, about = "Zero-shot cell segmentation and hit validation")]
struct Cli {
    #[command(flatten)]
    run: RunArgs,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `oracle` or `graph:PATH`; applies to every stage.
    #[arg(long, global = true)]
    backend: Option<BackendSpec>,
    /// Worker threads; outputs do not depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Nuclei, cells and subcellular entities for every input image.
    Segment,
    /// Feature table from segmented images.
    Features,
    /// Z' ranking, composite read-out and dose-response fits.
    Hitval,
    /// Dice and IoU against ground-truth label images.
    Eval,
    /// Segment, features, then hitval and eval when configured.
    All,
    /// Writes a synthetic plate with ground truth, layout and config.
    Synth {
        /// Target directory.
        dir: PathBuf,
        #[arg(long, default_value_t = 20)]
        images: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
    },
}

fn load_config(args: &RunArgs) -> Result<RunConfig> {
    let Some(path) = &args.config else {
        return Err(Error::Config("--config is required for this command".into()).into());
    };
    let mut cfg = RunConfig::load(path)?;
    cfg.apply(&Overrides {
        seed: args.seed,
        backend: args.backend.clone(),
        workers: args.workers,
        output_dir: args.out.clone(),
    })?;
    Ok(cfg)
}

fn report(stage: &StageRecord) {
    let failed = stage.failures();
    println!("{}: {} item(s), {} failed", stage.stage, stage.images.len(), failed);
    for i in stage.images.iter().filter(|i| !i.is_ok()) {
        eprintln!("  {}: {}", i.image_id, i.error.as_deref().unwrap_or("failed"));
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Synth { dir, images, size } = &cli.command {
        let spec = PlateSpec {
            images: *images,
            width: *size,
            height: *size,
            seed: cli.run.seed.unwrap_or(0),
            ..Default::default()
        };
        let cfg = pipeline::write_synthetic_plate(dir, &spec)
            .with_context(|| format!("writing synthetic plate to {}", dir.display()))?;
        println!("wrote {}", cfg.display());
        return Ok(());
    }
    let cfg = load_config(&cli.run)?;
    log::info!("config hash {}", cfg.hash());
    match cli.command {
        Command::Segment => report(&pipeline::cmd_segment(&cfg)?),
        Command::Features => report(&pipeline::cmd_features(&cfg)?),
        Command::Hitval => report(&pipeline::cmd_hitval(&cfg)?),
        Command::Eval => {
            let (stage, eval) = pipeline::cmd_eval(&cfg)?;
            report(&stage);
            print!("{}", eval.summary());
        }
        Command::All => {
            let stages = pipeline::cmd_all(&cfg)?;
            if stages.is_empty() {
                bail!("no stages ran");
            }
            stages.iter().for_each(report);
            if stages.iter().any(|s| s.stage == "eval") {
                let summary = cfg.output_dir().join("eval/summary.txt");
                print!("{}", std::fs::read_to_string(&summary)?);
            }
        }
        Command::Synth { .. } => unreachable!(),
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
