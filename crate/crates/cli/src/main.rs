use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use hypergrid::evalreport::{classify_full_image, paired_row, write_summary_csv};
use hypergrid::experiment::{
    finetune_seed, pretrain_seed, run_experiment, select_seed, sweep, ExperimentConfig, Layout,
    SweepAxis,
};
use hypergrid::hsdata::{export_map_image, load_labelmap, save_cube, save_labelmap};
use hypergrid::models::ModelState;
use hypergrid::synth::{generate, SynthParams};
use hypergrid::tensor::gradcheck::layer_suite;
use hypergrid::Error;

#[derive(Parser)]
#[command(
    name = "hypergrid",
    version,
    about = "Grid-label pretraining for hyperspectral CNNs"
)]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Overrides {
    #[arg(long)]
    config: PathBuf,
    /// Runs only this seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

impl Overrides {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut c = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            c.seeds = Some(vec![seed]);
        }
        if let Some(scale) = self.scale {
            c.scale = scale;
        }
        if let Some(out) = &self.out {
            c.out = out.clone();
        }
        if let Some(w) = self.workers {
            c.workers = w;
        }
        c.validate()?;
        c.check_files()?;
        Ok(c)
    }

    /// The single seed for `pretrain` / `finetune`.
    fn single_seed(c: &ExperimentConfig) -> u64 {
        c.seed_list()[0]
    }
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain on the configured artificial labels.
    Pretrain(Overrides),
    /// Fine-tune a checkpoint (transferring its head) or a fresh model, and
    /// evaluate it on the held-out pixels.
    Finetune {
        #[command(flatten)]
        overrides: Overrides,
        /// Pretrained checkpoint; without it the model starts from scratch.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Pretrained and scratch arms for every seed, with summary statistics.
    Experiment(Overrides),
    /// One experiment per value along an axis.
    Sweep {
        #[command(flatten)]
        overrides: Overrides,
        /// grid-density, stripes or n-per-class
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
    },
    /// Render a label map, or a checkpoint's full-image classification, as PPM.
    ExportMap {
        /// Label map (HSL1) to render.
        #[arg(long, conflicts_with_all = ["config", "checkpoint"])]
        labels: Option<PathBuf>,
        #[arg(long, requires = "checkpoint")]
        config: Option<PathBuf>,
        #[arg(long, requires = "config")]
        checkpoint: Option<PathBuf>,
        /// Output image; a classification is also saved next to it as .hsl.
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every layer's gradients in 64-bit.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
    /// Generate a synthetic scene (cube.hsc, gt.hsl, gt.ppm).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        bands: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        blob_radius: Option<f64>,
        #[arg(long)]
        noise_std: Option<f64>,
    },
}

/// Exit status: 1 for configuration problems, 2 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>().map(Error::root) {
        Some(Error::Config(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = ["warn", "info", "debug"][cli.verbose.min(2) as usize];
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Pretrain(o) => {
            let c = o.load()?;
            let seed = Overrides::single_seed(&c);
            let data = c.load_data()?;
            let labels = c.labels.build(&data.ground_truth)?;
            let layout = Layout::new(&c);
            layout.create_dirs()?;
            let run = pretrain_seed(&c, &data, &labels, seed)?;
            layout.record(seed, "pretrain", &run)?;
            println!(
                "pretrained {} on {} classes for {} iterations, final loss {:.4}",
                c.arch,
                labels.classes().len(),
                run.iterations,
                run.loss_trace.last().map_or(f64::NAN, |t| t.loss)
            );
            println!("log {}", layout.log(seed, "pretrain").display());
        }
        Command::Finetune {
            overrides,
            checkpoint,
        } => {
            let c = overrides.load()?;
            let seed = Overrides::single_seed(&c);
            let pretrained = checkpoint
                .as_ref()
                .map(|p| ModelState::load(p).with_context(|| format!("loading {}", p.display())))
                .transpose()?;
            let data = c.load_data()?;
            let layout = Layout::new(&c);
            layout.create_dirs()?;
            let selection = select_seed(&c, &data, seed)?;
            let arm = finetune_seed(&c, &data, &selection, pretrained.as_ref(), seed)?;
            let stage = if pretrained.is_some() {
                "pretrained"
            } else {
                "scratch"
            };
            layout.record(seed, stage, &arm.run)?;
            let m = &arm.metrics;
            println!(
                "{stage} seed {seed}: OA {:.4} AA {:.4} kappa {:.4}",
                m.oa, m.aa, m.kappa
            );
        }
        Command::Experiment(o) => {
            let c = o.load()?;
            let outcome = run_experiment(&c)?;
            write_summary_csv(&mut std::io::stdout(), &outcome.summary)?;
            println!(
                "OA {}",
                paired_row(&outcome.pretrained.oa, &outcome.scratch.oa, outcome.p_value)
            );
        }
        Command::Sweep {
            overrides,
            axis,
            values,
        } => {
            let c = overrides.load()?;
            let rows = sweep(&c, axis, &values)?;
            println!(
                "{:>10}  OA pretrained / scratch ({})",
                axis.to_string(),
                c.arch
            );
            for r in &rows {
                println!(
                    "{:>10}  {}",
                    r.label(),
                    paired_row(&r.pretrained.oa, &r.scratch.oa, r.p_value)
                );
            }
            println!("table {}", c.out.join("sweep.csv").display());
        }
        Command::ExportMap {
            labels,
            config,
            checkpoint,
            out,
        } => export_map(labels, config, checkpoint, &out)?,
        Command::Gradcheck {
            seed,
            instances,
            eps,
            tolerance,
        } => {
            let reports = layer_suite(seed, instances, eps)?;
            let mut failed = 0;
            for r in &reports {
                let ok = r.max_rel_error < tolerance;
                failed += usize::from(!ok);
                println!(
                    "{:<24} {:>3} instances  max rel error {:.3e}  {}",
                    r.layer,
                    r.instances,
                    r.max_rel_error,
                    if ok { "ok" } else { "FAIL" }
                );
            }
            if failed > 0 {
                anyhow::bail!("{failed} layer types exceed relative error {tolerance:e}");
            }
        }
        Command::Synth {
            out,
            seed,
            height,
            width,
            bands,
            classes,
            blob_radius,
            noise_std,
        } => {
            let d = SynthParams::default();
            let params = SynthParams {
                height: height.unwrap_or(d.height),
                width: width.unwrap_or(d.width),
                bands: bands.unwrap_or(d.bands),
                classes: classes.unwrap_or(d.classes),
                blob_radius: blob_radius.unwrap_or(d.blob_radius),
                noise_std: noise_std.unwrap_or(d.noise_std),
                ..d
            };
            let scene = generate(&params, seed)?;
            fs::create_dir_all(&out)?;
            save_cube(&scene.cube, out.join("cube.hsc"))?;
            save_labelmap(&scene.ground_truth, out.join("gt.hsl"))?;
            export_map_image(&scene.ground_truth, out.join("gt.ppm"))?;
            println!(
                "{}x{}x{} scene with {} classes in {}",
                params.height,
                params.width,
                params.bands,
                scene.ground_truth.classes().len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn export_map(
    labels: Option<PathBuf>,
    config: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    out: &Path,
) -> anyhow::Result<()> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let map = match (labels, config, checkpoint) {
        (Some(path), _, _) => load_labelmap(&path)?,
        (None, Some(config), Some(ckpt)) => {
            let c = ExperimentConfig::load(&config)?;
            c.check_files()?;
            let model =
                ModelState::load(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
            let data = c.load_data()?;
            let map = classify_full_image(&model, &data.cube, model.spec().patch_side)?;
            save_labelmap(&map, out.with_extension("hsl"))?;
            map
        }
        _ => {
            return Err(Error::Config(
                "export-map needs --labels or --config with --checkpoint".into(),
            )
            .into())
        }
    };
    export_map_image(&map, out)?;
    println!(
        "{}x{} map written to {}",
        map.height(),
        map.width(),
        out.display()
    );
    Ok(())
}
