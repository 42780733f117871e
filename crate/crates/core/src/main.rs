use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use hazeforge::checkpoint::{file_hash, Checkpoint, NET_NAMES};
use hazeforge::config::{ConfigError, RunConfig};
use hazeforge::dataset::{load_sample, DatasetLayout, TrainingData};
use hazeforge::gradcheck;
use hazeforge::hazesynth::{generate_paired_set, refine_depth};
use hazeforge::io::{list_images, read_depth, read_image, write_image, write_pfm};
use hazeforge::matting::MattingCache;
use hazeforge::metrics::{cycle_report, MetricReport};
use hazeforge::networks::NetworkParams;
use hazeforge::toy::{generate_toy_dataset, ToyCounts};
use hazeforge::trainer;

/// Raised for bad arguments; reported with exit status 1.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Usage(String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

#[derive(Parser)]
#[command(name = "hazeforge", version, about = "Cycle-structured GAN dehazing toolkit")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Seed for every random choice the command makes
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// key=value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (or file, for refine-depth)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override one configuration key, e.g. --set lambda2=0 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Build a paired hazy/clean set from images/ and depth/ under a source directory
    Synthesize {
        #[arg(long)]
        source: PathBuf,
        /// Resize every image to SIZE×SIZE before synthesis
        #[arg(long)]
        size: Option<usize>,
    },
    /// Refine a depth map with soft matting guided by an image
    RefineDepth {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        depth: PathBuf,
    },
    /// Precompute Matting Laplacians for the training images
    BuildMattingCache {
        /// Image directories; defaults to the unpaired training pools
        #[arg(long)]
        input: Vec<PathBuf>,
    },
    /// Train all four networks
    Train {
        /// Continue from this checkpoint
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Print a progress line every N iterations (0 disables)
        #[arg(long, default_value_t = 50)]
        log_every: u64,
    },
    /// Run the dehazing generator on every image in a directory
    Dehaze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Run the haze-adding generator on every image in a directory
    Addhaze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// PSNR/SSIM of results against ground truth, or of cycle reconstructions
    Evaluate {
        #[arg(long, required_unless_present = "cycle")]
        results: Option<PathBuf>,
        #[arg(long, required_unless_present = "cycle")]
        gt: Option<PathBuf>,
        /// Score G_X(G_Y(x)) against x for every hazy image in --input
        #[arg(long, requires_all = ["checkpoint", "input"], conflicts_with_all = ["results", "gt"])]
        cycle: bool,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Finite-difference gradient checks of the autodiff engine and networks
    Gradcheck,
    /// Print the contents of a checkpoint
    InspectCheckpoint { path: PathBuf },
    /// Generate a procedural toy dataset in the standard layout
    ToyData {
        #[arg(long, default_value_t = 16)]
        unpaired: usize,
        #[arg(long, default_value_t = 8)]
        paired: usize,
        #[arg(long, default_value_t = 4)]
        test: usize,
    },
    /// Print the effective configuration
    DumpConfig,
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RunConfig::parse(&text).with_context(|| path.display().to_string())?
        }
        None => RunConfig::default(),
    };
    for o in &common.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = common.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn require_dir(path: &Path) -> Result<()> {
    if !path.is_dir() {
        return Err(usage(format!("{} is not a directory", path.display())));
    }
    Ok(())
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn translate_dir(net: &NetworkParams, input: &Path, out: &Path) -> Result<usize> {
    require_dir(input)?;
    let paths = list_images(input)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for p in &paths {
        let image = read_image(p)?;
        let result = net.translate(&image).with_context(|| p.display().to_string())?;
        write_image(&result, out.join(file_name(p)))?;
    }
    Ok(paths.len())
}

/// Writes to stdout; a reader that closed the pipe early is not an error.
fn emit(text: &str) -> Result<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn write_report(report: &MetricReport, out: Option<&Path>, name: &str) -> Result<()> {
    let tsv = report.to_tsv();
    emit(&tsv)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(name), tsv)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    let explicit_out = cli.common.out.as_deref();
    match cli.command {
        Command::Synthesize { source, size } => {
            require_dir(&source)?;
            let mut opts = cfg.synth_options();
            opts.resize_to = size;
            let manifest = generate_paired_set(&source, &cfg.out_dir, &opts, cfg.seed)?;
            println!(
                "wrote {} of {} pairs to {}",
                manifest.written_count(),
                manifest.entries.len(),
                cfg.out_dir.display()
            );
        }
        Command::RefineDepth { image, depth } => {
            let out = explicit_out.ok_or_else(|| usage("refine-depth needs --out <file.pfm>"))?;
            let guide = read_image(&image)?;
            let coarse = read_depth(&depth)?;
            let refined = refine_depth(
                &coarse,
                &guide,
                cfg.refine_lambda,
                cfg.matting_eps,
                cfg.window_radius,
                cfg.cg_options(),
            )?;
            write_pfm(&refined, out)?;
        }
        Command::BuildMattingCache { input } => {
            let cache = match explicit_out {
                Some(dir) => MattingCache::new(dir),
                None => MattingCache::from_env()
                    .ok_or_else(|| usage("no cache directory: pass --out or set HAZEFORGE_CACHE"))?,
            };
            let dirs = if input.is_empty() {
                let layout = DatasetLayout::new(&cfg.data_dir);
                vec![layout.unpaired_hazy(), layout.unpaired_clean()]
            } else {
                input
            };
            let settings = cfg.matting_settings();
            let mut count = 0;
            for dir in &dirs {
                require_dir(dir)?;
                for p in list_images(dir)? {
                    let sample = load_sample(&p, cfg.arch.image_size)?;
                    cache
                        .get_or_build(&sample.image, settings.eps, settings.window_radius)
                        .with_context(|| p.display().to_string())?;
                    count += 1;
                }
            }
            println!("cached {count} matrices in {}", cache.dir().display());
        }
        Command::Train { resume, log_every } => {
            require_dir(&cfg.data_dir)?;
            let cache = MattingCache::from_env();
            let data = TrainingData::load(
                &DatasetLayout::new(&cfg.data_dir),
                cfg.arch.image_size,
                &cfg.matting_settings(),
                cache.as_ref(),
            )?;
            fs::create_dir_all(&cfg.out_dir)?;
            fs::write(cfg.out_dir.join("config.txt"), cfg.dump())?;
            let outcome = trainer::train(&cfg.train, cfg.arch, &data, &cfg.out_dir, resume.as_deref(), |it, r| {
                if log_every > 0 && it % log_every == 0 {
                    eprintln!("iter {it} {:?} total {:.4}", r.phase, r.total());
                }
            })?;
            println!(
                "trained {} iterations; checkpoint {}; log {}",
                outcome.iterations,
                outcome.final_checkpoint.display(),
                outcome.log.display()
            );
        }
        Command::Dehaze { checkpoint, input } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let n = translate_dir(&ck.g_y, &input, &cfg.out_dir)?;
            println!("wrote {n} images to {}", cfg.out_dir.display());
        }
        Command::Addhaze { checkpoint, input } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let n = translate_dir(&ck.g_x, &input, &cfg.out_dir)?;
            println!("wrote {n} images to {}", cfg.out_dir.display());
        }
        Command::Evaluate {
            cycle: true,
            checkpoint: Some(checkpoint),
            input: Some(input),
            ..
        } => {
            require_dir(&input)?;
            let ck = Checkpoint::load(&checkpoint)?;
            let images = list_images(&input)?
                .iter()
                .map(|p| Ok((file_name(p), read_image(p)?)))
                .collect::<Result<Vec<_>>>()?;
            let report = cycle_report(&ck.g_y, &ck.g_x, &images)?;
            write_report(&report, explicit_out, "cycle.tsv")?;
        }
        Command::Evaluate {
            results: Some(results),
            gt: Some(gt),
            ..
        } => {
            require_dir(&results)?;
            require_dir(&gt)?;
            let mut report = MetricReport::default();
            for p in list_images(&gt)? {
                let name = file_name(&p);
                let candidate = results.join(&name);
                if !candidate.exists() {
                    bail!(usage(format!("{} has no result in {}", name, results.display())));
                }
                let truth = read_image(&p)?.to_rgb();
                let result = read_image(&candidate)?.to_rgb();
                report
                    .push(name, &result, &truth)
                    .with_context(|| p.display().to_string())?;
            }
            if report.count() == 0 {
                return Err(usage(format!("{}: no images", gt.display())));
            }
            write_report(&report, explicit_out, "metrics.tsv")?;
        }
        Command::Evaluate { .. } => return Err(usage("evaluate needs --results and --gt, or --cycle")),
        Command::Gradcheck => {
            let report = gradcheck::run_all(cfg.seed)?;
            emit(&(report.lines().join("\n") + "\n"))?;
            if !report.passed() {
                bail!("gradient check failed");
            }
        }
        Command::InspectCheckpoint { path } => {
            let ck = Checkpoint::load(&path)?;
            let arch = ck.arch();
            let mut text = format!(
                "sha256\t{}\niteration\t{}\nsampler_seed\t{}\nbase_channels\t{}\nnum_residual_blocks\t{}\nimage_size\t{}\n",
                file_hash(&path)?,
                ck.iteration,
                ck.sampler_seed,
                arch.base_channels,
                arch.num_residual_blocks,
                arch.image_size
            );
            text.push_str("tensor\tshape\tcount\tmean\tstd\n");
            for (prefix, net) in NET_NAMES.iter().zip(ck.nets()) {
                for (name, t) in net.params() {
                    let d = t.data();
                    let n = d.len() as f64;
                    let mean = d.iter().map(|&v| v as f64).sum::<f64>() / n;
                    let var = d.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
                    writeln!(
                        text,
                        "{prefix}.{name}\t{:?}\t{}\t{mean:.6e}\t{:.6e}",
                        t.shape(),
                        d.len(),
                        var.sqrt()
                    )?;
                }
            }
            for (name, opt) in NET_NAMES.iter().zip(&ck.optimizers) {
                writeln!(text, "optimizer.{name}.step\t{}", opt.step)?;
            }
            emit(&text)?;
        }
        Command::ToyData { unpaired, paired, test } => {
            let counts = ToyCounts { unpaired, paired, test };
            if unpaired == 0 || paired == 0 {
                return Err(usage("toy-data needs at least one unpaired and one paired image"));
            }
            generate_toy_dataset(
                &cfg.out_dir,
                cfg.arch.image_size,
                counts,
                &cfg.synth_options(),
                cfg.seed,
            )?;
            println!("toy dataset written to {}", cfg.out_dir.display());
        }
        Command::DumpConfig => emit(&cfg.dump())?,
    }
    Ok(())
}

/// The error chain on one line, skipping causes already quoted by their parent.
fn one_line(err: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !parts.last().is_some_and(|p| p.contains(&msg)) {
            parts.push(msg);
        }
    }
    parts.join(": ").replace('\n', " ")
}

fn is_validation(err: &anyhow::Error) -> bool {
    err.chain().any(|e| e.is::<Usage>() || e.is::<ConfigError>())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", first.trim());
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            if is_validation(&e) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
