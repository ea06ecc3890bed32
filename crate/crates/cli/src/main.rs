mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;

use sempri::io::{self, Split};
use sempri::metrics::{evaluate_dataset, MetricConfig};
use sempri::pipeline::{self, InferOutputs, TrainedModel};
use sempri::synth;

use config::{ConfigError, FileConfig};

#[derive(Debug, Parser)]
#[command(name = "sempri", version, about = "Salient object detection with semantic priors")]
struct Cli {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Shared {
    /// TOML file with `[pipeline]` and `[synth]` tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Also write `<stem>_explicit.png` and `<stem>_implicit.png`.
    #[arg(long, global = true)]
    save_intermediates: bool,
    /// Write superpixel label maps (16-bit PNG) to this directory.
    #[arg(long, global = true, value_name = "DIR")]
    save_superpixels: Option<PathBuf>,
    #[arg(long, global = true)]
    n_classes: Option<usize>,
    /// Target superpixel count.
    #[arg(long, global = true)]
    superpixels: Option<usize>,
    #[arg(long, global = true)]
    compactness: Option<f64>,
    #[arg(long, global = true)]
    trees: Option<usize>,
    #[arg(long, global = true)]
    epsilon: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Learn the prior table, texton dictionary and forest.
    Train {
        /// Training manifest; every entry needs a mask.
        #[arg(long)]
        manifest: PathBuf,
        /// Where artifacts and `train.log` are written.
        #[arg(long)]
        model_dir: PathBuf,
        /// Dump the region training set as CSV.
        #[arg(long, value_name = "FILE")]
        training_csv: Option<PathBuf>,
    },
    /// Write a fused saliency map per manifest entry.
    Infer {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score saliency maps (`<maps>/<stem>.png`) against manifest masks.
    Eval {
        #[arg(long)]
        maps: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Report CSV path; printed to stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate a synthetic dataset with planted ground truth.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        count: usize,
        /// Index of the first scene.
        #[arg(long, default_value_t = 0)]
        start: usize,
    },
}

fn effective_config(shared: &Shared) -> anyhow::Result<FileConfig> {
    let mut cfg = FileConfig::load(shared.config.as_deref())?;
    let p = &mut cfg.pipeline;
    if let Some(v) = shared.seed {
        p.seed = v;
    }
    if let Some(v) = shared.jobs {
        p.jobs = Some(v);
    }
    if let Some(v) = shared.n_classes {
        p.n_classes = v;
        cfg.synth.n_classes = v;
    }
    if let Some(v) = shared.superpixels {
        p.superpixel_target = v;
    }
    if let Some(v) = shared.compactness {
        p.compactness = v;
    }
    if let Some(v) = shared.trees {
        p.forest.tree_count = v;
    }
    if let Some(v) = shared.epsilon {
        p.epsilon = v;
    }
    cfg.pipeline.validate()?;
    Ok(cfg)
}

fn model_config(cfg: &FileConfig, model_dir: &Path) -> pipeline::PipelineConfig {
    cfg.pipeline.clone().with_artifact_dir(model_dir)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = effective_config(&cli.shared)?;
    if let Some(jobs) = cfg.pipeline.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring worker pool")?;
    }

    match cli.command {
        Command::Train {
            manifest,
            model_dir,
            training_csv,
        } => {
            let m = io::parse_manifest(&manifest, Split::Train)?;
            let pcfg = model_config(&cfg, &model_dir);
            let (model, report) = pipeline::train(&m, &pcfg)?;
            model.save(&pcfg)?;
            let mut log = report.to_log();
            log.push_str("\n# effective configuration\n");
            log.push_str(&cfg.to_toml());
            io::write_atomic(&model_dir.join("train.log"), log.as_bytes())?;
            if let Some(path) = training_csv {
                let samples = sempri::implicit::build_training_set(&m, &model.textons, &pcfg.slic())?;
                sempri::implicit::write_training_csv(&samples, pcfg.n_classes, &path)?;
            }
            info!(
                "trained on {} images ({} salient / {} background regions), mean alpha {:.4}",
                report.n_images, report.n_salient, report.n_background, report.alpha.mean
            );
        }
        Command::Infer {
            manifest,
            model_dir,
            out_dir,
        } => {
            let m = io::parse_manifest(&manifest, Split::Test)?;
            let pcfg = model_config(&cfg, &model_dir);
            let model = TrainedModel::load(&pcfg)?;
            let outputs = InferOutputs {
                save_intermediates: cli.shared.save_intermediates,
                superpixels_dir: cli.shared.save_superpixels.clone(),
            };
            let written = pipeline::infer_manifest(&model, &m, &pcfg, &out_dir, &outputs)?;
            info!("wrote {} saliency maps to {}", written.len(), out_dir.display());
        }
        Command::Eval {
            maps,
            manifest,
            output,
        } => {
            let m = io::parse_manifest(&manifest, Split::Test)?;
            let report = evaluate_dataset(&maps, &m, &MetricConfig::default())?;
            match output {
                Some(path) => {
                    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                    }
                    report.write_csv(&path)?;
                    info!("F {:.4}, MAE {:.4} -> {}", report.f_measure, report.mae, path.display());
                }
                None => print!("{}", report.to_csv()),
            }
        }
        Command::Synth { out_dir, count, start } => {
            if count == 0 {
                return Err(sempri::Error::InvalidArgument("--count must be at least 1".into()).into());
            }
            let seed = cfg.pipeline.seed;
            let m = synth::write_dataset(&out_dir, &cfg.synth, start..start + count, seed)?;
            info!("wrote {} scenes to {}", m.len(), out_dir.display());
        }
    }
    Ok(())
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return EXIT_USAGE;
    }
    match err.downcast_ref::<sempri::Error>() {
        Some(e) if e.is_internal() => EXIT_INTERNAL,
        Some(sempri::Error::InvalidArgument(_)) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SEMPRI_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
