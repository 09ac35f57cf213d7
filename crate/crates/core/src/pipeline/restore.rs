//! Denoiser training on (original, baseline) pairs and per-frame restoration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bitstream::CompressedVideo;
use crate::diffusion::{
    denormalize, normalize, restore, sample_noise, Architecture, Checkpoint, DenoiserParams, DiffusionBatch, DiffusionExample,
    NoiseSchedule, Real, ScheduleParams, SigmaMode, Trainer,
};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::frame::{FloatPlanes, Frame, VideoSequence};

use super::codec::baseline_frames;

/// Clean target and its condition, both normalized to `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair<R> {
    pub x0: FloatPlanes<R>,
    pub c: FloatPlanes<R>,
}

/// Pairs every original frame with the baseline reconstruction from its own container.
pub fn training_pairs<R: Real>(originals: &VideoSequence, video: &CompressedVideo, exec: Exec) -> Result<Vec<TrainingPair<R>>> {
    let base = baseline_frames(video, exec)?;
    if base.len() != originals.len() {
        return Err(Error::Shape(format!("{} originals vs {} encoded frames", originals.len(), base.len())));
    }
    originals
        .frames()
        .iter()
        .zip(&base)
        .map(|(o, b)| {
            if o.dims() != b.dims() {
                return Err(Error::Shape("original and decoded frame dims differ".into()));
            }
            Ok(TrainingPair { x0: normalize(o), c: normalize(b) })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub arch: Architecture,
    pub schedule: ScheduleParams,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Decay of the exponential moving average of the weights returned for sampling;
    /// `0` returns the raw final weights.
    pub ema_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { arch: Architecture::REFERENCE, schedule: ScheduleParams::scaled(50), steps: 3000, batch_size: 16, lr: 1e-3, seed: 0, ema_decay: 0.0 }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<R> {
    pub params: DenoiserParams<R>,
    /// Pre-update loss of every step.
    pub losses: Vec<f64>,
}

/// A symmetry of the degradation: downscaling, palette fitting and upscaling all
/// commute with the dihedral group of the frame, with permuting color channels and
/// with negating values, so applying one to both target and condition yields
/// another valid training pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Augment {
    pub transpose: bool,
    pub flip_x: bool,
    pub flip_y: bool,
    pub channels: [usize; 3],
    pub negate: bool,
}

const CHANNEL_ORDERS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

impl Augment {
    pub const IDENTITY: Augment = Augment { transpose: false, flip_x: false, flip_y: false, channels: [0, 1, 2], negate: false };

    pub fn random(rng: &mut impl Rng) -> Self {
        Augment {
            transpose: rng.random(),
            flip_x: rng.random(),
            flip_y: rng.random(),
            channels: CHANNEL_ORDERS[rng.random_range(0..CHANNEL_ORDERS.len())],
            negate: rng.random(),
        }
    }

    /// Output channel `k` is input channel `channels[k]`; the flips act after the transpose.
    pub fn apply<R: Real>(&self, p: &FloatPlanes<R>) -> FloatPlanes<R> {
        let (w, h) = (p.width, p.height);
        let (ow, oh) = if self.transpose { (h, w) } else { (w, h) };
        let mut out = FloatPlanes::zeros(p.channels, oh, ow);
        for k in 0..p.channels {
            let src = p.plane(self.channels.get(k).copied().unwrap_or(k));
            let dst = out.plane_mut(k);
            for y in 0..oh {
                for x in 0..ow {
                    let (tx, ty) = (if self.flip_x { ow - 1 - x } else { x }, if self.flip_y { oh - 1 - y } else { y });
                    let (sx, sy) = if self.transpose { (ty, tx) } else { (tx, ty) };
                    let v = src[sy * w + sx];
                    dst[y * ow + x] = if self.negate { -v } else { v };
                }
            }
        }
        out
    }
}

/// Draws one batch: uniform pair index, uniform step, a random [`Augment`] applied to
/// target and condition alike, and fresh noise.
fn draw_batch<R: Real>(pairs: &[TrainingPair<R>], size: usize, steps: usize, rng: &mut ChaCha8Rng) -> DiffusionBatch<R> {
    let examples = (0..size)
        .map(|_| {
            let pair = &pairs[rng.random_range(0..pairs.len())];
            let t = rng.random_range(1..=steps);
            let aug = Augment::random(rng);
            let (x0, c) = (aug.apply(&pair.x0), aug.apply(&pair.c));
            let eps = sample_noise(&x0, rng);
            DiffusionExample { x0, c, t, eps }
        })
        .collect();
    DiffusionBatch { examples }
}

/// Trains a fresh denoiser. Parameters are initialized from `cfg.seed` and batches are
/// drawn from a separate stream of the same seed. `on_step(step, loss)` is called after
/// every update.
pub fn train_denoiser<R: Real>(
    pairs: &[TrainingPair<R>],
    cfg: &TrainConfig,
    exec: Exec,
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainOutcome<R>> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no training pairs"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate {} must be positive", cfg.lr)));
    }
    let schedule = cfg.schedule.build()?;
    let mut trainer = Trainer::new(DenoiserParams::init(cfg.arch, cfg.seed).with_schedule(&schedule), cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut ema = (cfg.ema_decay > 0.0).then(|| trainer.params.clone());
    let decay = R::from_f64(cfg.ema_decay);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = draw_batch(pairs, cfg.batch_size, schedule.steps(), &mut rng);
        let loss = trainer.training_step(&batch, &schedule, exec)?;
        if let Some(avg) = &mut ema {
            for (a, &p) in avg.as_mut_slice().iter_mut().zip(trainer.params.as_slice()) {
                *a = decay * *a + (R::one() - decay) * p;
            }
        }
        losses.push(loss);
        on_step(step, loss);
    }
    Ok(TrainOutcome { params: ema.unwrap_or(trainer.params), losses })
}

/// Seed for frame `index` of a restore run.
pub fn frame_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Restores each condition frame independently; frame `i` uses `frame_seed(seed, i)`.
pub fn restore_frames<R: Real>(
    params: &DenoiserParams<R>,
    schedule: &NoiseSchedule,
    conditions: &[Frame],
    seed: u64,
    sigma_mode: SigmaMode,
    exec: Exec,
) -> Result<Vec<Frame>> {
    exec.map_range(conditions.len(), |i| {
        let c = normalize::<R>(&conditions[i]);
        restore(params, &c, schedule, frame_seed(seed, i), sigma_mode).map(|x| denormalize(&x))
    })
    .into_iter()
    .collect()
}

/// Decodes `video` with a checkpoint: baseline conditions, then diffusion restoration.
pub fn restore_video<R: Real>(video: &CompressedVideo, checkpoint: &Checkpoint, seed: u64, sigma_mode: SigmaMode, exec: Exec) -> Result<Vec<Frame>> {
    let h = &video.header;
    if (checkpoint.s, checkpoint.n) != (h.s, h.n) {
        return Err(Error::ConditionMismatch { ckpt_s: checkpoint.s, ckpt_n: checkpoint.n, s: h.s, n: h.n });
    }
    let params = checkpoint.denoiser::<R>()?;
    let schedule = checkpoint.schedule.build()?;
    let conditions = baseline_frames(video, exec)?;
    restore_frames(&params, &schedule, &conditions, seed, sigma_mode, exec)
}
