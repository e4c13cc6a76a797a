use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cstr::ablation::{ablate, read_results, AblationData, Grid};
use cstr::data::{build_dataset, Dataset, GrayImage, Manifest, Split, MANIFEST_FILE};
use cstr::gradcheck::{run_suite, SuiteOptions};
use cstr::report::report;
use cstr::train::{evaluate, load_params, RunOptions, Trainer, LATEST_CHECKPOINT};
use cstr::{Cstr, Ini, RunConfig};

/// Gradient checks above this relative error fail `gradcheck`.
const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(name = "cstr", version, about = "Classification-perspective scene text recognition toolkit")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Configuration file (`[section]` headers, `key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed override (training seed; data seed for gen-data).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override one key, e.g. `--set train.steps=500`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Dataset directory (overrides data.dir).
    #[arg(long, global = true)]
    data: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the synthetic train/eval splits to disk.
    GenData,
    /// Train a model; writes checkpoints and metrics.csv to --out.
    Train {
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
        /// Continue from out/latest.ckpt if present.
        #[arg(long)]
        resume: bool,
        /// Stop after this step (the schedule is unchanged).
        #[arg(long)]
        stop_after: Option<u64>,
    },
    /// Word accuracy and edit distance of a checkpoint on the eval split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Recognise one PGM image.
    Decode {
        image: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Finite-difference checks of every op family.
    Gradcheck {
        /// Random shapes per primitive family.
        #[arg(long, default_value_t = 40)]
        cases: usize,
    },
    /// Train every cell of an ablation grid for each seed.
    Ablate {
        /// heads, backbone, augment or single.
        #[arg(long, default_value = "single")]
        grid: String,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long, default_value = "results")]
        results: PathBuf,
    },
    /// Summarise a results store as markdown and CSV.
    Report {
        #[arg(long, default_value = "results")]
        results: PathBuf,
        /// Write report.md and report.csv here (default: the results dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut ini = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Ini::parse(&text)?
        }
        None => Ini::default(),
    };
    for o in &common.overrides {
        let (key, value) = o
            .split_once('=')
            .with_context(|| format!("override `{o}` must look like section.key=value"))?;
        ini.set(key.trim(), value.trim())?;
    }
    let mut cfg = RunConfig::from_ini(&ini)?;
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    if let Some(dir) = &common.data {
        cfg.data.dir = dir.clone();
    }
    Ok(cfg)
}

/// Loads the manifest, generating the dataset first if the directory has none.
fn ensure_dataset(cfg: &RunConfig) -> Result<Manifest> {
    let dir = &cfg.data.dir;
    if !dir.join(MANIFEST_FILE).exists() {
        log::info!("no dataset in {}; generating", dir.display());
        build_dataset(&cfg.data.spec, dir)?;
    }
    Ok(Manifest::load(dir)?)
}

fn load_split(cfg: &RunConfig, manifest: &Manifest, model: &Cstr, split: Split) -> Result<Dataset> {
    let (h, w) = model.input_size();
    Ok(Dataset::load(&cfg.data.dir, manifest, split, h, w)?)
}

/// Rebuilds the model from the configuration text stored in a checkpoint.
fn model_from_checkpoint(path: &Path) -> Result<(Cstr, cstr::ParameterStore<f32>)> {
    let ckpt = cstr::train::Checkpoint::load(path)?;
    let cfg = RunConfig::from_ini(&Ini::parse(&ckpt.config)?)
        .with_context(|| format!("{} carries an unreadable configuration", path.display()))?;
    let model = Cstr::new(cfg.train.model)?;
    let (_, store) = load_params(&model, path)?;
    Ok((model, store))
}

fn run(cli: Cli) -> Result<ExitCode> {
    let common = &cli.common;
    match cli.command {
        Command::GenData => {
            let mut cfg = load_config(common)?;
            if let Some(seed) = common.seed {
                cfg.data.spec.seed = seed;
            }
            let t = Instant::now();
            let manifest = build_dataset(&cfg.data.spec, &cfg.data.dir)?;
            println!(
                "wrote {} train / {} eval images to {} in {:.1}s (digest {})",
                manifest.split(Split::Train).count(),
                manifest.split(Split::Eval).count(),
                cfg.data.dir.display(),
                t.elapsed().as_secs_f64(),
                manifest.digest()
            );
        }
        Command::Train { out, resume, stop_after } => {
            let cfg = load_config(common)?;
            let manifest = ensure_dataset(&cfg)?;
            let trainer = Trainer::new(cfg.train.clone(), cfg.train_text())?;
            let train = load_split(&cfg, &manifest, trainer.model(), Split::Train)?;
            let eval = load_split(&cfg, &manifest, trainer.model(), Split::Eval)?;
            let latest = out.join(LATEST_CHECKPOINT);
            let opts = RunOptions {
                resume: (resume && latest.exists()).then_some(latest),
                stop_after,
            };
            let outcome = trainer.run(&train, Some(&eval), &out, &opts)?;
            let m = outcome.last_eval.unwrap_or_default();
            println!(
                "step {} word_acc {:.4} edit_dist {:.4} wall {:.1}s checkpoint {}",
                outcome.step,
                m.word_accuracy,
                m.mean_normalized_edit_distance,
                outcome.wall_seconds,
                outcome.checkpoint.display()
            );
        }
        Command::Eval { checkpoint } => {
            let (model, store) = model_from_checkpoint(&checkpoint)?;
            let cfg = load_config(common)?;
            let manifest = Manifest::load(&cfg.data.dir)?;
            let eval = load_split(&cfg, &manifest, &model, Split::Eval)?;
            let m = evaluate(&model, &store, &eval, 64)?;
            println!(
                "eval images {} word_acc {:.4} edit_dist {:.4}",
                eval.len(),
                m.word_accuracy,
                m.mean_normalized_edit_distance
            );
        }
        Command::Decode { image, checkpoint } => {
            let (model, store) = model_from_checkpoint(&checkpoint)?;
            let (h, w) = model.input_size();
            let img = GrayImage::read_pgm(&image)?.resize(h, w)?;
            let batch = img.to_tensor::<f32>().reshape(&[1, 1, h, w])?;
            let words = model.predict(&store, &batch)?;
            println!("{}", words[0]);
        }
        Command::Gradcheck { cases } => {
            let opts = SuiteOptions {
                primitive_cases: cases,
                seed: common.seed.unwrap_or(0),
                ..SuiteOptions::default()
            };
            let t = Instant::now();
            let reports = run_suite(&opts)?;
            let mut ok = true;
            println!("{:<18} {:>6} {:>8} {:>12}  status", "family", "cases", "entries", "max_rel_err");
            for r in &reports {
                let pass = r.max_rel_error < GRADCHECK_TOLERANCE;
                ok &= pass;
                println!(
                    "{:<18} {:>6} {:>8} {:>12.3e}  {}",
                    r.family,
                    r.cases,
                    r.entries_checked,
                    r.max_rel_error,
                    if pass { "ok" } else { "FAIL" }
                );
                if !pass {
                    if let Some(w) = &r.worst {
                        println!("    worst: {w}");
                    }
                }
            }
            println!("{} families in {:.1}s, tolerance {GRADCHECK_TOLERANCE:e}", reports.len(), t.elapsed().as_secs_f64());
            return Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) });
        }
        Command::Ablate { grid, seeds, results } => {
            let grid: Grid = grid.parse()?;
            if seeds.is_empty() {
                bail!("at least one seed is required");
            }
            let cfg = load_config(common)?;
            let manifest = ensure_dataset(&cfg)?;
            let mut data = AblationData::new(&cfg.data.dir, &manifest);
            let s = ablate(&grid.cells(), &seeds, &cfg, &mut data, &results)?;
            println!(
                "grid {grid}: {} trained, {} skipped, {} failed (results in {})",
                s.trained,
                s.skipped,
                s.failed,
                results.display()
            );
            if s.failed > 0 {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Report { results, out } => {
            let rows = read_results(&results)?;
            let r = report(&rows)?;
            let out = out.unwrap_or(results);
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            fs::write(out.join("report.md"), &r.markdown)?;
            fs::write(out.join("report.csv"), &r.csv)?;
            print!("{}", r.markdown);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
