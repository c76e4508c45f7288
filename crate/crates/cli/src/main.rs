//! `derain`: synthesize rain corpora, train and run the deraining network,
//! score restorations, verify gradients and compare module counts.
//!
//! Worker threads are capped by `DERAIN_THREADS` (default: all cores).

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use derain_core::ablate::run_ablation;
use derain_core::datagen::{generate_dataset, DatasetManifest};
use derain_core::gradcheck::op_suite;
use derain_core::io::{read_image, write_png, write_raw};
use derain_core::metrics::evaluate_corpus;
use derain_core::rain::RainScene;
use derain_core::smrnet::{
    build_network, build_thread_pool, derain, grad_check_scene, load_checkpoint, network_grad_check,
    save_checkpoint, train, LightMode, NetworkConfig, NetworkParams,
};

use config::{resolved, write_echo, ConfigFile};

#[derive(Parser)]
#[command(name = "derain", version, about = "Single-image deraining laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OnOff {
    On,
    Off,
}

impl From<OnOff> for bool {
    fn from(v: OnOff) -> bool {
        matches!(v, OnOff::On)
    }
}

#[derive(Args)]
struct ConfigArg {
    /// TOML file with [network], [scene] and [train] tables.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic corpus with full ground truth.
    Render {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        /// Master seed; each scene derives its own seed from it.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        veil: Option<OnOff>,
        /// Image size as HxW, e.g. 64x64.
        #[arg(long)]
        size: Option<String>,
    },
    /// Train the network on a rendered corpus.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        /// Training corpus (directory or manifest file).
        #[arg(long)]
        data: PathBuf,
        /// Held-out corpus scored after every epoch.
        #[arg(long)]
        holdout: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Seed of the weight initialization.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        veil: Option<OnOff>,
        /// Continue from a checkpoint instead of a fresh initialization.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Restore one image, or every scene of a corpus.
    Derain {
        #[command(flatten)]
        config: ConfigArg,
        /// Checkpoint written by `train`.
        #[arg(long, conflicts_with = "zero_params", required_unless_present = "zero_params")]
        model: Option<PathBuf>,
        /// Use all-zero weights (the identity restorer) for the configured network.
        #[arg(long)]
        zero_params: bool,
        /// PNG or .drf image, or a corpus directory.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Atmospheric light: a number, `brightest`, or `known` (corpus input only).
        #[arg(long, default_value = "brightest")]
        light: String,
    },
    /// Score restored images against a corpus's clean backgrounds.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        /// Directory holding `<id>.drf` or `<id>.png` per scene.
        #[arg(long)]
        restored: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference verification of every operation and the full network.
    Gradcheck {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 8)]
        size: usize,
        /// Sampled elements per parameter tensor.
        #[arg(long, default_value_t = 3)]
        per_tensor: usize,
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Train networks with different recurrent-module counts on the same data.
    Ablate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        holdout: PathBuf,
        /// Comma-separated module counts.
        #[arg(long, default_value = "0,3", value_delimiter = ',')]
        modules: Vec<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = match build_thread_pool(None) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    match pool.install(|| run(cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Render { config, count, out, seed, veil, size } => {
            let file = ConfigFile::load(config.config.as_deref())?;
            let mut file = file;
            if let Some(s) = seed {
                file.scene.seed = Some(s);
            }
            if let Some(v) = veil {
                file.scene.veil = Some(v.into());
            }
            if let Some(size) = size {
                let (h, w) = parse_size(&size)?;
                file.scene.height = Some(h);
                file.scene.width = Some(w);
            }
            let spec = file.scene()?;
            let manifest = generate_dataset(&spec, count, &out)
                .with_context(|| format!("cannot render corpus into {}", out.display()))?;
            manifest.check()?;
            write_echo(&out, &resolved(&file.network()?, &spec, &file.train()?))?;
            println!("{}", manifest.path().display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Train {
            config,
            data,
            holdout,
            out,
            epochs,
            lr,
            batch_size,
            seed,
            veil,
            resume,
        } => {
            let mut file = ConfigFile::load(config.config.as_deref())?;
            if let Some(v) = epochs {
                file.train.epochs = Some(v);
            }
            if let Some(v) = lr {
                file.train.learning_rate = Some(v);
            }
            if let Some(v) = batch_size {
                file.train.batch_size = Some(v);
            }
            if let Some(v) = seed {
                file.network.seed = Some(v);
            }
            if let Some(v) = veil {
                file.network.veil = Some(v.into());
            }
            let (net, params) = match resume {
                Some(path) => load_checkpoint(&path)?,
                None => {
                    let net = file.network()?;
                    let params = build_network(&net)?;
                    (net, params)
                }
            };
            let mut options = file.train()?;
            options.checkpoint_dir = Some(out.clone());
            let train_set = load_corpus(&data, &net)?;
            let holdout_set = match &holdout {
                Some(p) => load_corpus(p, &net)?,
                None => Vec::new(),
            };
            write_echo(&out, &resolved(&net, &file.scene()?, &options))?;
            println!(
                "training {} scenes ({} held out), {} parameters",
                train_set.len(),
                holdout_set.len(),
                params.scalar_count()
            );
            let outcome = train(params, &net, &train_set, &holdout_set, &options, |r| {
                println!(
                    "epoch {:>3}  loss {:.6}  holdout psnr {:.3} dB  ssim {:.4}  {:.1}s",
                    r.epoch, r.train_loss, r.holdout_psnr, r.holdout_ssim, r.wall_seconds
                );
            })?;
            if !holdout_set.is_empty() {
                println!("holdout psnr of the rainy input: {:.3} dB", outcome.log.identity_psnr);
            }
            let model = out.join("model.smrc");
            save_checkpoint(&model, &net, &outcome.params)?;
            println!("{}", model.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Derain {
            config,
            model,
            zero_params,
            input,
            out,
            light,
        } => {
            let (net, params) = match model {
                Some(path) => load_checkpoint(&path)?,
                None => {
                    debug_assert!(zero_params);
                    let net = ConfigFile::load(config.config.as_deref())?.network()?;
                    let params = NetworkParams::zeros(&net)?;
                    (net, params)
                }
            };
            std::fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
            if input.is_dir() || input.file_name().is_some_and(|n| n == "manifest.txt") {
                let manifest = DatasetManifest::load(&input)?;
                for e in &manifest.entries {
                    let scene = e.load_scene(&manifest.root)?;
                    let mode = match light.as_str() {
                        "known" => LightMode::Known(scene.atmospheric_light),
                        other => parse_light(other)?,
                    };
                    let d = derain(&params, &net, &scene.observed, mode)?;
                    write_restored(&out, &e.id, &d.restored)?;
                }
                println!("restored {} scenes into {}", manifest.len(), out.display());
            } else {
                if light == "known" {
                    bail!("--light known needs a corpus input; pass a number or `brightest`");
                }
                let observed = read_image(&input)?;
                let d = derain(&params, &net, &observed, parse_light(&light)?)?;
                let stem = input
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .context("input path has no file name")?;
                write_restored(&out, stem, &d.restored)?;
                println!("{}", out.join(format!("{stem}.png")).display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Evaluate { data, restored, out } => {
            let manifest = DatasetManifest::load(&data)?;
            let report = evaluate_corpus(&manifest, &restored)?;
            std::fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
            report.write(&out.join("report.csv"), &out.join("summary.csv"))?;
            print!("{}", report.summary_csv());
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck {
            config,
            seeds,
            size,
            per_tensor,
            step,
            tol,
        } => {
            let file = ConfigFile::load(config.config.as_deref())?;
            let mut failed = false;
            for seed in 0..seeds {
                for (name, r) in op_suite(seed, step, tol)? {
                    failed |= !r.passed();
                    println!(
                        "{} seed {seed} {name}: checked {} max rel err {:.3e}",
                        if r.passed() { "PASS" } else { "FAIL" },
                        r.checked,
                        r.max_rel_err
                    );
                }
                let mut net = file.network()?;
                net.veil = file.network.veil.unwrap_or(true);
                net.seed = seed;
                let params = build_network(&net)?;
                let mut scene = grad_check_scene(size, size, seed)?;
                fit_bins(&mut scene, &net);
                let r = network_grad_check(&net, &params, &scene, per_tensor, seed, step, tol)?;
                failed |= !r.passed();
                println!(
                    "{} seed {seed} network loss at {size}x{size}: checked {} max rel err {:.3e} (refined {})",
                    if r.passed() { "PASS" } else { "FAIL" },
                    r.checked,
                    r.max_rel_err,
                    r.refined
                );
                for f in &r.failures {
                    println!(
                        "  tensor {} element {}: analytic {:.6e} numeric {:.6e}",
                        f.input, f.element, f.analytic, f.numeric
                    );
                }
            }
            Ok(if failed { ExitCode::from(2) } else { ExitCode::SUCCESS })
        }
        Command::Ablate {
            config,
            data,
            holdout,
            modules,
            epochs,
            out,
        } => {
            let mut file = ConfigFile::load(config.config.as_deref())?;
            if let Some(v) = epochs {
                file.train.epochs = Some(v);
            }
            let net = file.network()?;
            let options = file.train()?;
            if modules.is_empty() {
                bail!("--modules needs at least one count");
            }
            let max_k = modules.iter().copied().max().unwrap_or(0);
            let probe = NetworkConfig { scale_bins: max_k, ..net.clone() };
            let train_set = load_corpus(&data, &probe)?;
            let holdout_set = load_corpus(&holdout, &probe)?;
            write_echo(&out, &resolved(&net, &file.scene()?, &options))?;
            let report = run_ablation(&net, &modules, &train_set, &holdout_set, &options, |variant, r| {
                println!("{variant} epoch {:>3}  holdout psnr {:.3} dB", r.epoch, r.holdout_psnr);
            })?;
            let path = out.join("ablation.csv");
            std::fs::write(&path, report.to_csv()).with_context(|| format!("cannot write {}", path.display()))?;
            for (variant, psnr) in report.final_psnr() {
                println!("{variant}: final holdout psnr {psnr:.3} dB");
            }
            println!("rainy input: {:.3} dB", report.identity_psnr);
            println!("{}", path.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .with_context(|| format!("--size expects HxW, got {s:?}"))?;
    Ok((
        h.trim().parse().with_context(|| format!("bad height in {s:?}"))?,
        w.trim().parse().with_context(|| format!("bad width in {s:?}"))?,
    ))
}

fn parse_light(s: &str) -> Result<LightMode> {
    if s == "brightest" {
        return Ok(LightMode::BrightestPixel);
    }
    let a: f64 = s
        .parse()
        .with_context(|| format!("--light expects a number in [0, 1] or `brightest`, got {s:?}"))?;
    if !(0.0..=1.0).contains(&a) {
        bail!("--light {a} is outside [0, 1]");
    }
    Ok(LightMode::Known(a))
}

fn write_restored(dir: &Path, id: &str, image: &derain_core::Tensor) -> Result<()> {
    write_raw(&dir.join(format!("{id}.drf")), image)?;
    write_png(&dir.join(format!("{id}.png")), image)?;
    Ok(())
}

/// Drops trailing streak layers so the scene has as many as the network has
/// scale bins.
fn fit_bins(scene: &mut RainScene, net: &NetworkConfig) {
    if net.scale_bins == 0 {
        scene.streaks.clear();
        scene.bins.clear();
    } else {
        scene.streaks.truncate(net.scale_bins);
        scene.bins.truncate(net.scale_bins);
    }
}

/// Loads every scene and checks that its bins match the network.
fn load_corpus(path: &Path, net: &NetworkConfig) -> Result<Vec<RainScene>> {
    let manifest =
        DatasetManifest::load(path).with_context(|| format!("cannot open corpus {}", path.display()))?;
    let scenes = manifest.load_all()?;
    if net.scale_bins > 0 {
        if let Some(s) = scenes.iter().find(|s| s.streaks.len() != net.scale_bins) {
            bail!(
                "corpus {} has {} streak bins per scene but the network expects {}; \
                 set [network] scale_bins or re-render with matching [scene] bins",
                path.display(),
                s.streaks.len(),
                net.scale_bins
            );
        }
    }
    Ok(scenes)
}
