use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::frame::FloatPlanes;

use super::net::NoisePredictor;
use super::schedule::NoiseSchedule;
use super::Real;

/// Variance of the fresh noise injected at each reverse step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SigmaMode {
    /// `σ_t² = (1−ᾱ_{t−1})/(1−ᾱ_t) · (1−α_t)/α_{t−1}`.
    Paper,
    /// `σ_t² = (1−ᾱ_{t−1})/(1−ᾱ_t) · (1−α_t)` (DDPM posterior variance).
    Standard,
    /// `σ_t = 0`: deterministic sampling.
    #[default]
    Zero,
}

impl SigmaMode {
    pub fn variance(self, schedule: &NoiseSchedule, t: usize) -> f64 {
        let (ab, ab_prev) = (schedule.alpha_bar(t), schedule.alpha_bar(t - 1));
        let ratio = (1.0 - ab_prev) / (1.0 - ab);
        match self {
            SigmaMode::Paper => ratio * (1.0 - schedule.alpha(t)) / schedule.alpha(t - 1),
            SigmaMode::Standard => ratio * (1.0 - schedule.alpha(t)),
            SigmaMode::Zero => 0.0,
        }
    }
}

impl fmt::Display for SigmaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SigmaMode::Paper => "paper",
            SigmaMode::Standard => "standard",
            SigmaMode::Zero => "zero",
        })
    }
}

impl FromStr for SigmaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(SigmaMode::Paper),
            "standard" => Ok(SigmaMode::Standard),
            "zero" => Ok(SigmaMode::Zero),
            other => Err(Error::InvalidArgument(format!("unknown sigma mode {other:?} (paper|standard|zero)"))),
        }
    }
}

/// Standard-normal planes with the given shape.
pub fn sample_noise<R: Real>(like: &FloatPlanes<R>, rng: &mut impl Rng) -> FloatPlanes<R> {
    let data = (0..like.data.len()).map(|_| R::from_f64(StandardNormal.sample(rng))).collect();
    FloatPlanes { width: like.width, height: like.height, channels: like.channels, data }
}

/// Runs the reverse process from a given `x_T`, drawing step noise from `rng`.
///
/// Each step computes
/// `x_{t−1} = √ᾱ_{t−1}·(x_t − √(1−ᾱ_t)·ε̂)/√ᾱ_t + √(1−ᾱ_{t−1}−σ_t²)·ε̂ + σ_t·z`.
/// The result is not clamped.
pub fn restore_from<R: Real, P: NoisePredictor<R> + ?Sized>(
    predictor: &P,
    condition: &FloatPlanes<R>,
    schedule: &NoiseSchedule,
    x_start: FloatPlanes<R>,
    rng: &mut impl Rng,
    sigma_mode: SigmaMode,
) -> Result<FloatPlanes<R>> {
    if !x_start.same_shape(condition) {
        return Err(Error::Shape("x_T and condition must share a shape".into()));
    }
    let mut x = x_start;
    for t in (1..=schedule.steps()).rev() {
        let eps = predictor.predict(&x, t, condition)?;
        let (ab, ab_prev) = (schedule.alpha_bar(t), schedule.alpha_bar(t - 1));
        let sigma2 = sigma_mode.variance(schedule, t);
        let radicand = 1.0 - ab_prev - sigma2;
        if radicand < 0.0 || !radicand.is_finite() {
            return Err(Error::Scheduler { t });
        }
        let x0_gain = R::from_f64(ab_prev.sqrt() / ab.sqrt());
        let eps_in_x0 = R::from_f64((1.0 - ab).sqrt());
        let dir = R::from_f64(radicand.sqrt());
        let sigma = R::from_f64(sigma2.sqrt());
        let z = (sigma2 > 0.0).then(|| sample_noise(&x, rng));
        for (i, (xv, &e)) in x.data.iter_mut().zip(&eps.data).enumerate() {
            let mut next = x0_gain * (*xv - eps_in_x0 * e) + dir * e;
            if let Some(z) = &z {
                next = next + sigma * z.data[i];
            }
            *xv = next;
        }
    }
    Ok(x)
}

/// Restores one frame: `x_T ~ N(0, I)` from `seed`, reverse process, clamp to `[-1, 1]`.
pub fn restore<R: Real, P: NoisePredictor<R> + ?Sized>(
    predictor: &P,
    condition: &FloatPlanes<R>,
    schedule: &NoiseSchedule,
    seed: u64,
    sigma_mode: SigmaMode,
) -> Result<FloatPlanes<R>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x_start = sample_noise(condition, &mut rng);
    let mut out = restore_from(predictor, condition, schedule, x_start, &mut rng, sigma_mode)?;
    let (lo, hi) = (-R::one(), R::one());
    out.data.iter_mut().for_each(|v| *v = v.max(lo).min(hi));
    Ok(out)
}
