use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use latentmark::began::BeganTrainState;
use latentmark::diffcore::{DType, Element, Tensor};
use latentmark::inversion::{invert, InversionConfig, LatentExport};
use latentmark::lgen::{lgen_train, LGenConfig};
use latentmark::pipeline::checkpoint::checkpoint_dtype;
use latentmark::pipeline::corpus::manifest_root;
use latentmark::pipeline::gradsuite::{gradient_suite, GRAD_TOLERANCE};
use latentmark::pipeline::io::{read_png, write_atomic};
use latentmark::pipeline::{
    annotate_corpus, build_corpus, generate_annotated, interpolation_experiment, load_began,
    load_lgen, read_pair_csv, render_corpus, save_began, save_lgen, CorpusManifest, PipelineConfig,
};
use latentmark::{Error, Result};
use tracing::info;

#[derive(Parser)]
#[command(
    name = "latentmark",
    version,
    about = "Face synthesis with generated landmark annotations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a seeded toy-face corpus.
    Corpus {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the BEGAN pair.
    GanTrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Train on this corpus instead of rendering one from the config.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Log every this many steps.
        #[arg(long, default_value_t = 100)]
        log_every: u64,
    },
    /// Recover the latent code of one image.
    Invert {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Invert every corpus image and write training pairs.
    Annotate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the manifest with latents and final errors.
        #[arg(long)]
        annotated_manifest: Option<PathBuf>,
    },
    /// Train the landmark network on a pair CSV.
    LgenTrain {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate images with landmarks from shared latents.
    Sample {
        #[arg(long)]
        gan: PathBuf,
        #[arg(long)]
        lgen: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Interpolate between an image's latent code and its mirror's.
    Interp {
        #[arg(long)]
        gan: PathBuf,
        #[arg(long)]
        lgen: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 14)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient checks of every layer and both networks.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Coordinates probed per tensor of the full networks.
        #[arg(long, default_value_t = 12)]
        per_tensor: usize,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Corpus { n, size, seed, out } => {
            let m = build_corpus(n, size, seed, &out)?;
            info!(images = m.entries.len(), dir = %out.display(), "corpus written");
            Ok(())
        }
        Command::GanTrain {
            config,
            out,
            resume,
            manifest,
            log_every,
        } => {
            let cfg = PipelineConfig::load(&config)?;
            match cfg.began.precision {
                DType::F32 => gan_train::<f32>(
                    &cfg,
                    &out,
                    resume.as_deref(),
                    manifest.as_deref(),
                    log_every,
                ),
                DType::F64 => gan_train::<f64>(
                    &cfg,
                    &out,
                    resume.as_deref(),
                    manifest.as_deref(),
                    log_every,
                ),
            }
        }
        Command::Invert {
            ckpt,
            image,
            steps,
            seed,
            out,
        } => match checkpoint_dtype(&ckpt)? {
            DType::F32 => invert_one::<f32>(&ckpt, &image, steps, seed, &out),
            DType::F64 => invert_one::<f64>(&ckpt, &image, steps, seed, &out),
        },
        Command::Annotate {
            ckpt,
            manifest,
            out,
            config,
            seed,
            annotated_manifest,
        } => {
            let inv = optional_config(config.as_deref())?.inversion;
            match checkpoint_dtype(&ckpt)? {
                DType::F32 => annotate::<f32>(
                    &ckpt,
                    &manifest,
                    &out,
                    &inv,
                    seed,
                    annotated_manifest.as_deref(),
                ),
                DType::F64 => annotate::<f64>(
                    &ckpt,
                    &manifest,
                    &out,
                    &inv,
                    seed,
                    annotated_manifest.as_deref(),
                ),
            }
        }
        Command::LgenTrain { pairs, config, out } => {
            let cfg = PipelineConfig::load(&config)?.lgen;
            match cfg.precision {
                DType::F32 => train_lgen::<f32>(&pairs, &cfg, &out),
                DType::F64 => train_lgen::<f64>(&pairs, &cfg, &out),
            }
        }
        Command::Sample {
            gan,
            lgen,
            n,
            seed,
            out,
        } => match (checkpoint_dtype(&gan)?, checkpoint_dtype(&lgen)?) {
            (DType::F32, DType::F32) => sample::<f32, f32>(&gan, &lgen, n, seed, &out),
            (DType::F32, DType::F64) => sample::<f32, f64>(&gan, &lgen, n, seed, &out),
            (DType::F64, DType::F32) => sample::<f64, f32>(&gan, &lgen, n, seed, &out),
            (DType::F64, DType::F64) => sample::<f64, f64>(&gan, &lgen, n, seed, &out),
        },
        Command::Interp {
            gan,
            lgen,
            image,
            points,
            seed,
            config,
            out,
        } => {
            let inv = optional_config(config.as_deref())?.inversion;
            let args = InterpArgs {
                gan: &gan,
                lgen: &lgen,
                image: &image,
                points,
                seed,
                inv: &inv,
                out: &out,
            };
            match (checkpoint_dtype(&gan)?, checkpoint_dtype(&lgen)?) {
                (DType::F32, DType::F32) => interp::<f32, f32>(args),
                (DType::F32, DType::F64) => interp::<f32, f64>(args),
                (DType::F64, DType::F32) => interp::<f64, f32>(args),
                (DType::F64, DType::F64) => interp::<f64, f64>(args),
            }
        }
        Command::Gradcheck { seed, per_tensor } => {
            let entries = gradient_suite(seed, per_tensor)?;
            let mut worst = 0.0f64;
            for e in &entries {
                println!(
                    "{:<20} {:>10.3e}  {:>5} coords  {}",
                    e.name,
                    e.max_relative_error,
                    e.coordinates,
                    if e.passed() { "ok" } else { "FAIL" }
                );
                worst = worst.max(e.max_relative_error);
            }
            if worst > GRAD_TOLERANCE {
                return Err(Error::Numeric {
                    step: 0,
                    what: format!(
                        "gradient check max relative error {worst:.3e} exceeds {GRAD_TOLERANCE:e}"
                    ),
                });
            }
            Ok(())
        }
    }
}

fn optional_config(path: Option<&Path>) -> Result<PipelineConfig> {
    path.map_or_else(|| Ok(PipelineConfig::default()), PipelineConfig::load)
}

fn gan_train<T: Element>(
    cfg: &PipelineConfig,
    out: &Path,
    resume: Option<&Path>,
    manifest: Option<&Path>,
    log_every: u64,
) -> Result<()> {
    let mut state = match resume {
        Some(path) => {
            // architecture was checked on load; the new config governs the rest of the run
            let mut s = load_began::<T>(path, Some(&cfg.began))?;
            s.cfg = cfg.began.clone();
            s
        }
        None => BeganTrainState::<T>::new(cfg.began.clone())?,
    };
    let images: Vec<Tensor<T>> = match manifest {
        Some(path) => {
            let m = CorpusManifest::load(path)?;
            if m.image_size != cfg.began.image_size {
                return Err(Error::Config(format!(
                    "corpus images are {0}x{0}, config expects {1}x{1}",
                    m.image_size, cfg.began.image_size
                )));
            }
            m.load_images(&manifest_root(path), cfg.began.image_channels)?
        }
        None => render_corpus::<T>(cfg.corpus.n, cfg.corpus.image_size, cfg.corpus.seed)?
            .into_iter()
            .map(|(x, _)| x)
            .collect(),
    };
    info!(
        images = images.len(),
        from = state.step,
        to = cfg.began.total_steps,
        "training"
    );
    state.train(&images, cfg.began.total_steps, |s| {
        if log_every > 0 && (s.step + 1) % log_every == 0 {
            info!(
                step = s.step + 1,
                loss_real = s.losses.loss_real,
                loss_fake = s.losses.loss_fake_g,
                k = s.k,
                convergence = s.convergence,
            );
        }
    })?;
    save_began(&state, out)
}

fn invert_one<T: Element>(
    ckpt: &Path,
    image: &Path,
    steps: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let state = load_began::<T>(ckpt, None)?;
    let x = read_png::<T>(image, state.cfg.image_channels)?;
    let cfg = InversionConfig {
        max_steps: steps,
        ..Default::default()
    };
    let r = invert(&x, &state.gen, &cfg, seed)?;
    info!(
        initial = r.initial_err(),
        r#final = r.final_err(),
        steps = r.steps_run,
        "inverted"
    );
    let export = LatentExport::new(image.display().to_string(), &r);
    let mut text = serde_json::to_string_pretty(&export).expect("export serializes");
    text.push('\n');
    write_atomic(out, text.as_bytes())
}

fn annotate<T: Element>(
    ckpt: &Path,
    manifest: &Path,
    out: &Path,
    inv: &InversionConfig,
    seed: u64,
    annotated: Option<&Path>,
) -> Result<()> {
    let state = load_began::<T>(ckpt, None)?;
    let m = CorpusManifest::load(manifest)?;
    let ann = annotate_corpus(
        &m,
        &manifest_root(manifest),
        &state.gen,
        inv,
        seed,
        out,
        annotated,
    )?;
    let mean = |f: fn(&latentmark::inversion::InversionResult) -> f64| {
        ann.results.iter().map(f).sum::<f64>() / ann.results.len().max(1) as f64
    };
    info!(
        pairs = ann.pairs.len(),
        mean_initial_err = mean(|r| r.initial_err()),
        mean_final_err = mean(|r| r.final_err()),
        "annotated"
    );
    Ok(())
}

fn train_lgen<T: Element>(pairs: &Path, cfg: &LGenConfig, out: &Path) -> Result<()> {
    let (pairs, _, _) = read_pair_csv(pairs)?;
    let r = lgen_train::<T>(&pairs, cfg)?;
    info!(
        epochs = r.loss_trace.len(),
        final_loss = r.loss_trace.last().copied().unwrap_or(f64::NAN),
        "landmark network trained"
    );
    save_lgen(&r.model, cfg, cfg.epochs as u64, out)
}

fn sample<T: Element, U: Element>(
    gan: &Path,
    lgen: &Path,
    n: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let state = load_began::<T>(gan, None)?;
    let (model, _) = load_lgen::<U>(lgen)?;
    let m = generate_annotated(&state.gen, &model, n, seed, out)?;
    info!(images = m.entries.len(), dir = %out.display(), "samples written");
    Ok(())
}

struct InterpArgs<'a> {
    gan: &'a Path,
    lgen: &'a Path,
    image: &'a Path,
    points: usize,
    seed: u64,
    inv: &'a InversionConfig,
    out: &'a Path,
}

fn interp<T: Element, U: Element>(a: InterpArgs) -> Result<()> {
    let state = load_began::<T>(a.gan, None)?;
    let (model, _) = load_lgen::<U>(a.lgen)?;
    let x = read_png::<T>(a.image, state.cfg.image_channels)?;
    let r = interpolation_experiment(&x, &state.gen, &model, a.points, a.inv, a.seed, Some(a.out))?;
    info!(
        frames = r.report.frames,
        max_over_mean = r.report.max_over_mean,
        "interpolation written"
    );
    Ok(())
}
