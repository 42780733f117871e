//! Alternating unpaired/paired adversarial training of the two generators and
//! two discriminators.
//!
//! Each step updates the discriminators first (on detached fakes) and the
//! generators second (against the freshly updated, frozen discriminators).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::dataset::{sample_index, Stream, TrainingData};
use crate::losses::{
    cycle_loss, lsgan_d_loss, lsgan_g_loss, paired_l1_loss, photorealism_loss, DirectionReport, LossError, LossReport,
    LossWeights, Phase,
};
use crate::matting::SparseMatrix;
use crate::networks::{build_discriminator, build_generator, ArchConfig, NetworkError, NetworkParams};
use crate::optim::{adam_step, AdamConfig, OptimError, OptimizerState};
use crate::tensor::{Tape, Tensor, TensorError, Var};

pub const LOG_FILE: &str = "loss_log.tsv";
pub const FINAL_CHECKPOINT: &str = "final.scgn";
pub const CRASH_CHECKPOINT: &str = "crash.scgn";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhotoMode {
    /// Photorealism term on both cycle reconstructions.
    Both,
    /// Only on the clean → hazy → clean reconstruction.
    BackwardOnly,
}

impl PhotoMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PhotoMode::Both => "both",
            PhotoMode::BackwardOnly => "backward_only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "both" => Some(PhotoMode::Both),
            "backward_only" => Some(PhotoMode::BackwardOnly),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f32,
    pub adam: AdamConfig,
    pub epochs_constant: u64,
    pub epochs_decay: u64,
    /// Total iterations (unpaired + paired). 0 derives it from the epoch counts.
    pub iterations: u64,
    pub seed: u64,
    pub batch_size: usize,
    pub weights: LossWeights,
    pub photorealism_mode: PhotoMode,
    /// Also train G_X/D_X on the paired set (clean → hazy direction).
    pub paired_backward: bool,
    /// Write a checkpoint every this many iterations; 0 disables.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-5,
            adam: AdamConfig::default(),
            epochs_constant: 50,
            epochs_decay: 50,
            iterations: 0,
            seed: 0,
            batch_size: 1,
            weights: LossWeights::default(),
            photorealism_mode: PhotoMode::Both,
            paired_backward: true,
            checkpoint_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        self.adam.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        self.weights.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        Ok(())
    }

    /// Configured iteration count, or two iterations (one unpaired, one paired)
    /// per unpaired batch over all epochs.
    pub fn total_iterations(&self, unpaired_len: usize) -> u64 {
        if self.iterations > 0 {
            return self.iterations;
        }
        let per_epoch = (unpaired_len as u64).div_ceil(self.batch_size as u64);
        2 * (self.epochs_constant + self.epochs_decay) * per_epoch
    }
}

/// Constant for `epochs_constant` epochs, then linear decay reaching 0 at
/// `epochs_constant + epochs_decay`.
pub fn lr_schedule(cfg: &TrainConfig, epoch: u64) -> f32 {
    if epoch < cfg.epochs_constant {
        return cfg.lr;
    }
    if cfg.epochs_decay == 0 {
        return 0.0;
    }
    let into = (epoch - cfg.epochs_constant).min(cfg.epochs_decay);
    let frac = 1.0 - into as f64 / cfg.epochs_decay as f64;
    (cfg.lr as f64 * frac).max(0.0) as f32
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("dataset is empty: {0}")]
    EmptyDataset(&'static str),
    #[error("non-finite {term} at iteration {iteration} ({phase:?} phase)")]
    NonFinite {
        iteration: u64,
        phase: Phase,
        term: &'static str,
        report: LossReport,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Fresh networks, drawn from a ChaCha stream seeded by `seed` in the order
/// G_Y, G_X, D_Y, D_X, with zeroed optimizer state.
pub fn init_state(arch: ArchConfig, seed: u64) -> Result<Checkpoint, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g_y = build_generator(arch, &mut rng)?;
    let g_x = build_generator(arch, &mut rng)?;
    let d_y = build_discriminator(arch, &mut rng)?;
    let d_x = build_discriminator(arch, &mut rng)?;
    let optimizers = [&g_y, &g_x, &d_y, &d_x].map(OptimizerState::new);
    Ok(Checkpoint {
        g_y,
        g_x,
        d_y,
        d_x,
        optimizers,
        iteration: 0,
        sampler_seed: seed,
    })
}

fn non_finite(
    state: &Checkpoint,
    phase: Phase,
    term: &'static str,
    fwd: DirectionReport,
    bwd: DirectionReport,
) -> TrainError {
    TrainError::NonFinite {
        iteration: state.iteration + 1,
        phase,
        term,
        report: LossReport {
            phase,
            forward: fwd,
            backward: bwd,
        },
    }
}

/// One least-squares update of a discriminator on `real` vs detached `fake`.
/// Returns the loss before the update, or `None` (and no update) if it is not finite.
fn update_discriminator(
    d: &mut NetworkParams,
    opt: &mut OptimizerState,
    real: &Tensor,
    fake: &Tensor,
    lr: f32,
    adam: &AdamConfig,
) -> Result<Option<f32>, TrainError> {
    let mut tape = Tape::new();
    let bound = d.bind(&mut tape, true);
    let (r, f) = (tape.constant(real), tape.constant(fake));
    let dr = d.forward(&mut tape, &bound, r)?;
    let df = d.forward(&mut tape, &bound, f)?;
    let loss = lsgan_d_loss(&mut tape, dr, df)?;
    let value = tape.scalar_value(loss);
    if !value.is_finite() {
        return Ok(None);
    }
    tape.backward(loss)?;
    d.pull_grads(&tape, &bound)?;
    adam_step(d, opt, lr, adam)?;
    Ok(Some(value))
}

fn weighted_sum(tape: &mut Tape, terms: &[(Var, f32)]) -> Result<Var, TensorError> {
    let mut acc: Option<Var> = None;
    for &(v, w) in terms {
        if w == 0.0 {
            continue;
        }
        let scaled = if w == 1.0 { v } else { tape.scalar_mul(v, w) };
        acc = Some(match acc {
            Some(a) => tape.add(a, scaled)?,
            None => scaled,
        });
    }
    // all-zero weights still need a scalar on the tape
    Ok(match acc {
        Some(a) => a,
        None => tape.scalar_mul(terms[0].0, 0.0),
    })
}

/// Unpaired iteration. `batch_x` holds hazy images, `batch_y` clean ones;
/// `m_x[n]` / `m_y[n]` are the Laplacians of the corresponding originals.
pub fn train_step_unpaired(
    state: &mut Checkpoint,
    batch_x: &Tensor,
    batch_y: &Tensor,
    m_x: &[&SparseMatrix],
    m_y: &[&SparseMatrix],
    cfg: &TrainConfig,
    lr: f32,
) -> Result<LossReport, TrainError> {
    let w = cfg.weights;
    let phase = Phase::Unpaired;
    let mut tape = Tape::new();
    let gy = state.g_y.bind(&mut tape, true);
    let gx = state.g_x.bind(&mut tape, true);
    let x = tape.constant(batch_x);
    let y = tape.constant(batch_y);
    let fake_y = state.g_y.forward(&mut tape, &gy, x)?;
    let rec_x = state.g_x.forward(&mut tape, &gx, fake_y)?;
    let fake_x = state.g_x.forward(&mut tape, &gx, y)?;
    let rec_y = state.g_y.forward(&mut tape, &gy, fake_x)?;

    let mut fwd = DirectionReport::default();
    let mut bwd = DirectionReport::default();
    let [_, _, opt_dy, opt_dx] = &mut state.optimizers;
    match update_discriminator(&mut state.d_y, opt_dy, batch_y, &tape.to_tensor(fake_y), lr, &cfg.adam)? {
        Some(v) => fwd.adv_d = v,
        None => return Err(non_finite(state, phase, "D_Y loss", fwd, bwd)),
    }
    match update_discriminator(&mut state.d_x, opt_dx, batch_x, &tape.to_tensor(fake_x), lr, &cfg.adam)? {
        Some(v) => bwd.adv_d = v,
        None => return Err(non_finite(state, phase, "D_X loss", fwd, bwd)),
    }

    let dy = state.d_y.bind(&mut tape, false);
    let dx = state.d_x.bind(&mut tape, false);
    let score_y = state.d_y.forward(&mut tape, &dy, fake_y)?;
    let score_x = state.d_x.forward(&mut tape, &dx, fake_x)?;
    let adv_f = lsgan_g_loss(&mut tape, score_y)?;
    let adv_b = lsgan_g_loss(&mut tape, score_x)?;
    let cyc_f = cycle_loss(&mut tape, x, rec_x)?;
    let cyc_b = cycle_loss(&mut tape, y, rec_y)?;
    let mut terms = vec![(adv_f, 1.0), (adv_b, 1.0), (cyc_f, w.lambda1), (cyc_b, w.lambda1)];
    let photo_f = if w.lambda2 > 0.0 && cfg.photorealism_mode == PhotoMode::Both {
        Some(photorealism_loss(&mut tape, m_x, rec_x)?)
    } else {
        None
    };
    let photo_b = if w.lambda2 > 0.0 {
        Some(photorealism_loss(&mut tape, m_y, rec_y)?)
    } else {
        None
    };
    terms.extend(photo_f.iter().chain(&photo_b).map(|&p| (p, w.lambda2)));
    let total = weighted_sum(&mut tape, &terms)?;

    let value = |v: Option<Var>| v.map_or(0.0, |v| tape.scalar_value(v));
    fwd = DirectionReport::unpaired(
        tape.scalar_value(adv_f),
        fwd.adv_d,
        tape.scalar_value(cyc_f),
        value(photo_f),
        &w,
    );
    bwd = DirectionReport::unpaired(
        tape.scalar_value(adv_b),
        bwd.adv_d,
        tape.scalar_value(cyc_b),
        value(photo_b),
        &w,
    );
    if !tape.scalar_value(total).is_finite() || !fwd.is_finite() || !bwd.is_finite() {
        return Err(non_finite(state, phase, "generator objective", fwd, bwd));
    }
    tape.backward(total)?;
    state.g_y.pull_grads(&tape, &gy)?;
    state.g_x.pull_grads(&tape, &gx)?;
    let [opt_gy, opt_gx, _, _] = &mut state.optimizers;
    adam_step(&mut state.g_y, opt_gy, lr, &cfg.adam)?;
    adam_step(&mut state.g_x, opt_gx, lr, &cfg.adam)?;
    Ok(LossReport {
        phase,
        forward: fwd,
        backward: bwd,
    })
}

/// Paired iteration on aligned (hazy, clean) batches. With λ3 = λ4 = 0 the
/// paired branch is disabled and nothing is updated.
pub fn train_step_paired(
    state: &mut Checkpoint,
    batch_x: &Tensor,
    batch_y_gt: &Tensor,
    cfg: &TrainConfig,
    lr: f32,
) -> Result<LossReport, TrainError> {
    let w = cfg.weights;
    let phase = Phase::Paired;
    let mut fwd = DirectionReport::default();
    let mut bwd = DirectionReport::default();
    if w.lambda3 == 0.0 && w.lambda4 == 0.0 {
        return Ok(LossReport {
            phase,
            forward: fwd,
            backward: bwd,
        });
    }
    let mut tape = Tape::new();
    let gy = state.g_y.bind(&mut tape, true);
    let x = tape.constant(batch_x);
    let y = tape.constant(batch_y_gt);
    let fake_y = state.g_y.forward(&mut tape, &gy, x)?;
    let backward = if cfg.paired_backward {
        let gx = state.g_x.bind(&mut tape, true);
        let fake_x = state.g_x.forward(&mut tape, &gx, y)?;
        Some((gx, fake_x))
    } else {
        None
    };

    let [_, _, opt_dy, opt_dx] = &mut state.optimizers;
    match update_discriminator(
        &mut state.d_y,
        opt_dy,
        batch_y_gt,
        &tape.to_tensor(fake_y),
        lr,
        &cfg.adam,
    )? {
        Some(v) => fwd.adv_d = v,
        None => return Err(non_finite(state, phase, "D_Y loss", fwd, bwd)),
    }
    if let Some((_, fake_x)) = &backward {
        match update_discriminator(&mut state.d_x, opt_dx, batch_x, &tape.to_tensor(*fake_x), lr, &cfg.adam)? {
            Some(v) => bwd.adv_d = v,
            None => return Err(non_finite(state, phase, "D_X loss", fwd, bwd)),
        }
    }

    let dy = state.d_y.bind(&mut tape, false);
    let score_y = state.d_y.forward(&mut tape, &dy, fake_y)?;
    let adv_f = lsgan_g_loss(&mut tape, score_y)?;
    let l1_f = paired_l1_loss(&mut tape, fake_y, y)?;
    let mut terms = vec![(adv_f, w.lambda3), (l1_f, w.lambda4)];
    fwd = DirectionReport::paired(tape.scalar_value(adv_f), fwd.adv_d, tape.scalar_value(l1_f), &w);
    if let Some((_, fake_x)) = &backward {
        let dx = state.d_x.bind(&mut tape, false);
        let score_x = state.d_x.forward(&mut tape, &dx, *fake_x)?;
        let adv_b = lsgan_g_loss(&mut tape, score_x)?;
        let l1_b = paired_l1_loss(&mut tape, *fake_x, x)?;
        terms.extend([(adv_b, w.lambda3), (l1_b, w.lambda4)]);
        bwd = DirectionReport::paired(tape.scalar_value(adv_b), bwd.adv_d, tape.scalar_value(l1_b), &w);
    }
    let total = weighted_sum(&mut tape, &terms)?;
    if !tape.scalar_value(total).is_finite() || !fwd.is_finite() || !bwd.is_finite() {
        return Err(non_finite(state, phase, "generator objective", fwd, bwd));
    }
    tape.backward(total)?;
    state.g_y.pull_grads(&tape, &gy)?;
    let [opt_gy, opt_gx, _, _] = &mut state.optimizers;
    adam_step(&mut state.g_y, opt_gy, lr, &cfg.adam)?;
    if let Some((gx, _)) = &backward {
        state.g_x.pull_grads(&tape, gx)?;
        adam_step(&mut state.g_x, opt_gx, lr, &cfg.adam)?;
    }
    Ok(LossReport {
        phase,
        forward: fwd,
        backward: bwd,
    })
}

/// Phase of 1-based iteration `it`: odd iterations are unpaired, even paired.
pub fn phase_of(it: u64) -> Phase {
    if it % 2 == 1 {
        Phase::Unpaired
    } else {
        Phase::Paired
    }
}

/// Zero-based index of the unpaired (or paired) step that iteration `it` runs.
fn step_index(it: u64) -> u64 {
    (it - 1) / 2
}

pub fn epoch_of(it: u64, batch_size: usize, unpaired_len: usize) -> u64 {
    step_index(it) * batch_size as u64 / unpaired_len as u64
}

fn batch(
    pool: &[crate::dataset::Sample],
    stream: Stream,
    seed: u64,
    step: u64,
    batch_size: usize,
) -> (Vec<usize>, Result<Tensor, TensorError>) {
    let idx: Vec<usize> = (0..batch_size as u64)
        .map(|j| sample_index(seed, stream, step * batch_size as u64 + j, pool.len()))
        .collect();
    let tensors: Vec<Tensor> = idx.iter().map(|&i| pool[i].tensor.clone()).collect();
    (idx, Tensor::stack(&tensors))
}

/// Runs iteration `state.iteration + 1` and advances the counter.
pub fn run_iteration(
    state: &mut Checkpoint,
    data: &TrainingData,
    cfg: &TrainConfig,
) -> Result<(LossReport, f32), TrainError> {
    let it = state.iteration + 1;
    let step = step_index(it);
    let lr = lr_schedule(cfg, epoch_of(it, cfg.batch_size, data.unpaired_len()));
    let seed = state.sampler_seed;
    let report = match phase_of(it) {
        Phase::Unpaired => {
            let (ix, bx) = batch(&data.hazy, Stream::UnpairedHazy, seed, step, cfg.batch_size);
            let (iy, by) = batch(&data.clean, Stream::UnpairedClean, seed, step, cfg.batch_size);
            let m_x: Vec<&SparseMatrix> = ix.iter().map(|&i| &data.hazy_laplacians[i]).collect();
            let m_y: Vec<&SparseMatrix> = iy.iter().map(|&i| &data.clean_laplacians[i]).collect();
            train_step_unpaired(state, &bx?, &by?, &m_x, &m_y, cfg, lr)?
        }
        Phase::Paired => {
            let idx: Vec<usize> = (0..cfg.batch_size as u64)
                .map(|j| sample_index(seed, Stream::Paired, step * cfg.batch_size as u64 + j, data.pairs.len()))
                .collect();
            let bx = Tensor::stack(&idx.iter().map(|&i| data.pairs[i].0.tensor.clone()).collect::<Vec<_>>())?;
            let by = Tensor::stack(&idx.iter().map(|&i| data.pairs[i].1.tensor.clone()).collect::<Vec<_>>())?;
            train_step_paired(state, &bx, &by, cfg, lr)?
        }
    };
    state.iteration = it;
    Ok((report, lr))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub log: PathBuf,
    pub iterations: u64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn log_preamble(cfg: &TrainConfig) -> String {
    format!(
        "# update_order=discriminator_then_generator schedule=unpaired_paired_alternating seed={} photorealism_mode={} paired_backward={}\n{}\n",
        cfg.seed,
        cfg.photorealism_mode.as_str(),
        cfg.paired_backward,
        LossReport::tsv_header()
    )
}

/// Keeps the preamble and rows up to `iteration` of an existing log.
fn truncated_log(existing: &str, cfg: &TrainConfig, iteration: u64) -> String {
    let mut out = log_preamble(cfg);
    for line in existing
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("iteration"))
    {
        match line.split('\t').next().and_then(|v| v.parse::<u64>().ok()) {
            Some(i) if i <= iteration => {
                out.push_str(line);
                out.push('\n');
            }
            _ => {}
        }
    }
    out
}

/// Full training run into `out_dir`, optionally continuing from a checkpoint.
///
/// Writes `loss_log.tsv`, periodic `checkpoints/iter_NNNNNN.scgn` and
/// `final.scgn`. On a non-finite loss the state from before the failing
/// iteration is saved to `crash.scgn` and the error is returned.
pub fn train(
    cfg: &TrainConfig,
    arch: ArchConfig,
    data: &TrainingData,
    out_dir: &Path,
    resume: Option<&Path>,
    mut progress: impl FnMut(u64, &LossReport),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    arch.validate()?;
    if data.hazy.is_empty() {
        return Err(TrainError::EmptyDataset("unpaired hazy (trainA)"));
    }
    if data.clean.is_empty() {
        return Err(TrainError::EmptyDataset("unpaired clean (trainB)"));
    }
    if data.pairs.is_empty() {
        return Err(TrainError::EmptyDataset("paired"));
    }
    let mut state = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.arch() != arch {
                return Err(TrainError::Config(format!(
                    "checkpoint architecture {:?} differs from configured {:?}",
                    ck.arch(),
                    arch
                )));
            }
            ck
        }
        None => init_state(arch, cfg.seed)?,
    };
    let total = cfg.total_iterations(data.unpaired_len());
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let log_path = out_dir.join(LOG_FILE);
    let initial = match resume {
        Some(_) => truncated_log(&fs::read_to_string(&log_path).unwrap_or_default(), cfg, state.iteration),
        None => log_preamble(cfg),
    };
    fs::write(&log_path, initial).map_err(io_err(&log_path))?;
    let mut log = fs::OpenOptions::new()
        .append(true)
        .open(&log_path)
        .map_err(io_err(&log_path))?;

    while state.iteration < total {
        let before = state.clone();
        match run_iteration(&mut state, data, cfg) {
            Ok((report, lr)) => {
                writeln!(log, "{}", report.tsv_row(state.iteration, lr)).map_err(io_err(&log_path))?;
                progress(state.iteration, &report);
            }
            Err(e @ TrainError::NonFinite { .. }) => {
                before.save(out_dir.join(CRASH_CHECKPOINT))?;
                return Err(e);
            }
            Err(e) => return Err(e),
        }
        if cfg.checkpoint_every > 0 && state.iteration % cfg.checkpoint_every == 0 {
            state.save(
                out_dir
                    .join(CHECKPOINT_DIR)
                    .join(format!("iter_{:06}.scgn", state.iteration)),
            )?;
        }
    }
    log.flush().map_err(io_err(&log_path))?;
    let final_checkpoint = out_dir.join(FINAL_CHECKPOINT);
    state.save(&final_checkpoint)?;
    Ok(TrainOutcome {
        final_checkpoint,
        log: log_path,
        iterations: state.iteration,
    })
}
