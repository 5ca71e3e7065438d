use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use hybridgen::cli::{self, Overrides, PipelineConfig, SimulationSpec};
use hybridgen::encoding::Strategy;
use hybridgen::{Error, Result};

#[derive(Parser)]
#[command(
    name = "hybridgen",
    version,
    about = "Image-guided radar point densification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Pipeline config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global seed; overrides `generation.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// concat | differentiable | separate
    #[arg(long)]
    strategy: Option<Strategy>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate hybrid point sets for every frame.
    Generate(Common),
    /// Encode hybrid point sets into pillar grids.
    Encode(Common),
    /// Run the dual-sync block on feature maps and check its invariants.
    FuseCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        radar: Option<PathBuf>,
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        boxes: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic dataset from a scene file.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Scene file: `{"frames": N, "scene": {...}}`.
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize hybrid point sets.
    Stats(Common),
}

fn load(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.apply(&overrides(common));
    Ok(cfg)
}

fn overrides(common: &Common) -> Overrides {
    Overrides {
        seed: common.seed,
        jobs: common.jobs,
        strategy: common.strategy,
    }
}

fn run(command: Command) -> Result<()> {
    let start = Instant::now();
    match command {
        Command::Generate(common) => {
            let r = cli::cmd_generate(&load(&common)?)?;
            let shortfall: usize = r
                .frames
                .iter()
                .map(|f| f.gaussian_shortfall + f.uniform_shortfall)
                .sum();
            println!(
                "generated {} points over {} frames (shortfall {shortfall}) in {:.3} s",
                r.total_generated,
                r.frames.len(),
                r.elapsed.as_secs_f64()
            );
        }
        Command::Encode(common) => {
            let r = cli::cmd_encode(&load(&common)?)?;
            let dropped: usize = r.frames.iter().map(|f| f.dropped).sum();
            println!(
                "encoded {} frames into {}×{}×{} grids ({} strategy, {dropped} points outside range) in {:.3} s",
                r.frames.len(),
                r.nx,
                r.ny,
                r.feature_len,
                r.strategy,
                r.elapsed.as_secs_f64()
            );
        }
        Command::FuseCheck {
            common,
            radar,
            image,
            weights,
            boxes,
            out,
        } => {
            let mut cfg = load(&common)?;
            let cwd = std::env::current_dir().map_err(|e| Error::Config(e.to_string()))?;
            let abs = |p: PathBuf| if p.is_relative() { cwd.join(p) } else { p };
            cfg.fuse.radar = radar.map(abs).or(cfg.fuse.radar);
            cfg.fuse.image = image.map(abs).or(cfg.fuse.image);
            cfg.fuse.weights = weights.map(abs).or(cfg.fuse.weights);
            cfg.fuse.boxes = boxes.map(abs).or(cfg.fuse.boxes);
            if let Some(o) = out {
                cfg.paths.output_dir = abs(o);
            }
            let r = cli::cmd_fuse_check(&cfg);
            if let Ok(r) = &r {
                for i in &r.invariants {
                    println!("{:<40} {}", i.name, if i.passed { "ok" } else { "FAILED" });
                }
                if let Some(l) = r.focal_loss {
                    println!("focal loss {l}");
                }
            }
            r?;
        }
        Command::Simulate { common, scene, out } => {
            let text = std::fs::read_to_string(&scene)
                .map_err(|e| Error::Config(format!("{}: {e}", scene.display())))?;
            let spec: SimulationSpec = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", scene.display())))?;
            let r = cli::cmd_simulate(&spec, &out, &overrides(&common))?;
            println!(
                "wrote {} frames to {} in {:.3} s",
                r.frames.len(),
                out.display(),
                start.elapsed().as_secs_f64()
            );
        }
        Command::Stats(common) => {
            let r = cli::cmd_stats(&load(&common)?)?;
            for (class, kinds) in &r.counts {
                for (kind, n) in kinds {
                    println!("{class:<12} {kind:<11} {n}");
                }
            }
            println!("{} frames, {} masks", r.frames, r.density.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HYBRIDGEN_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
