//! Reference noise predictor: four 3×3 "same" convolutions over `[x_t ‖ c]`,
//! SiLU between layers, a sinusoidal timestep embedding projected to per-channel
//! biases after the first layer, and a learnable per-channel skip from `x_t` to
//! the output.
//!
//! When a noise schedule is attached, the skip carries `k_t·(x_t − √ᾱ_t·c)` instead
//! of `x_t`, where `k_t = √(1−ᾱ_t) / (ᾱ_t·σ_r² + 1−ᾱ_t)` is the least-squares noise
//! estimate under the prior `x0 ~ N(c, σ_r²)`, and the convolution output is scaled
//! by `o_t = √ᾱ_t·σ_r / √(ᾱ_t·σ_r² + 1−ᾱ_t)`. The convolutions then only model what
//! the condition does not already explain, and their error cannot swamp the clean
//! estimate at high noise levels.
//!
//! All parameters live in one flat vector (see [`ParamLayout`]) so the optimizer
//! and the checkpoint format can treat them uniformly.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::frame::FloatPlanes;

use super::schedule::NoiseSchedule;
use super::{gemm, Op, Real};

pub const IN_CHANNELS: usize = 6;
pub const OUT_CHANNELS: usize = 3;
const TAPS: usize = 9;
const LAYERS: usize = 4;

/// Width of the hidden layers and of the timestep embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub hidden: usize,
    pub emb_dim: usize,
}

impl Architecture {
    pub const REFERENCE: Architecture = Architecture { hidden: 32, emb_dim: 32 };

    fn channels(&self) -> [(usize, usize); LAYERS] {
        let h = self.hidden;
        [(IN_CHANNELS, h), (h, h), (h, h), (h, OUT_CHANNELS)]
    }

    pub fn layout(&self) -> ParamLayout {
        let mut at = 0;
        let mut take = |len: usize| {
            let r = at..at + len;
            at += len;
            r
        };
        let mut weights: [Range<usize>; LAYERS] = Default::default();
        let mut biases: [Range<usize>; LAYERS] = Default::default();
        for (l, (cin, cout)) in self.channels().into_iter().enumerate() {
            weights[l] = take(cout * cin * TAPS);
            biases[l] = take(cout);
        }
        let time_proj = take(self.hidden * self.emb_dim);
        let skip = take(OUT_CHANNELS);
        ParamLayout { weights, biases, time_proj, skip, total: at }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

/// Offsets of each tensor inside the flat parameter vector.
///
/// Conv weights are `[cout][cin][ky][kx]`, the time projection is
/// `[hidden][emb_dim]`, and `skip` holds one gain per output channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub weights: [Range<usize>; LAYERS],
    pub biases: [Range<usize>; LAYERS],
    pub time_proj: Range<usize>,
    pub skip: Range<usize>,
    pub total: usize,
}

/// Sinusoidal embedding of a step index: `[sin(t·f_i)…, cos(t·f_i)…]` with
/// `f_i = 10000^(-i/half)`; odd dimensions get a trailing zero.
pub fn sinusoidal_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let freqs: Vec<f64> = (0..half).map(|i| (-(10000f64.ln()) * i as f64 / half as f64).exp()).collect();
    let mut emb: Vec<f64> = freqs.iter().map(|f| (t as f64 * f).sin()).collect();
    emb.extend(freqs.iter().map(|f| (t as f64 * f).cos()));
    emb.resize(dim, 0.0);
    emb
}

/// Anything that can estimate the noise in `x_t` given the step and condition.
pub trait NoisePredictor<R: Real> {
    fn predict(&self, x_t: &FloatPlanes<R>, t: usize, c: &FloatPlanes<R>) -> Result<FloatPlanes<R>>;
}

#[inline]
fn sigmoid<R: Real>(z: R) -> R {
    R::one() / (R::one() + (-z).exp())
}

/// Unrolls 3×3 zero-padded neighbourhoods: row `ci*9 + ky*3 + kx`, column `y*w + x`.
fn im2col<R: Real>(input: &[R], ch: usize, h: usize, w: usize) -> Vec<R> {
    let hw = h * w;
    let mut col = vec![R::zero(); ch * TAPS * hw];
    for ci in 0..ch {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[(ci * TAPS + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input planes.
fn col2im<R: Real>(col: &[R], ch: usize, h: usize, w: usize) -> Vec<R> {
    let hw = h * w;
    let mut out = vec![R::zero(); ch * hw];
    for ci in 0..ch {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[(ci * TAPS + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..][..w];
                    let src = &row[y * w..][..w];
                    let (d, s) = match kx {
                        0 => (&mut dst[..w - 1], &src[1..]),
                        1 => (&mut dst[..], src),
                        _ => (&mut dst[1..], &src[..w - 1]),
                    };
                    d.iter_mut().zip(s).for_each(|(a, &b)| *a = *a + b);
                }
            }
        }
    }
    out
}

/// Activations kept from a forward pass for backpropagation.
pub(crate) struct Tape<R> {
    cols: Vec<Vec<R>>,
    pre: Vec<Vec<R>>,
    emb: Vec<R>,
    skip_in: Vec<R>,
    out_scale: R,
}

/// Learnable parameters θ of the reference denoiser.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserParams<R> {
    arch: Architecture,
    layout: ParamLayout,
    data: Vec<R>,
    /// `(k_t, √ᾱ_t, o_t)` for `t = 0..=T` when a schedule is attached.
    skip_table: Option<Vec<(f64, f64, f64)>>,
}

/// Prior variance `σ_r²` of the clean frame around its condition, in normalized units.
pub const RESIDUAL_VARIANCE: f64 = 0.01;

impl<R: Real> DenoiserParams<R> {
    pub fn zeros(arch: Architecture) -> Self {
        let layout = arch.layout();
        DenoiserParams { arch, data: vec![R::zero(); layout.total], layout, skip_table: None }
    }

    /// He-normal conv and projection weights, zero biases, unit skip gains.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut p = Self::zeros(arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (l, (cin, _)) in arch.channels().into_iter().enumerate() {
            let std = (2.0 / (cin * TAPS) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            let range = p.layout.weights[l].clone();
            p.data[range].iter_mut().for_each(|w| *w = R::from_f64(normal.sample(&mut rng)));
        }
        let normal = Normal::new(0.0, (2.0 / arch.emb_dim.max(1) as f64).sqrt()).expect("positive std");
        let range = p.layout.time_proj.clone();
        p.data[range].iter_mut().for_each(|w| *w = R::from_f64(normal.sample(&mut rng)));
        let range = p.layout.skip.clone();
        p.data[range].iter_mut().for_each(|g| *g = R::one());
        p
    }

    pub fn from_flat(arch: Architecture, data: Vec<R>) -> Result<Self> {
        let layout = arch.layout();
        if data.len() != layout.total {
            return Err(Error::Shape(format!("architecture needs {} parameters, got {}", layout.total, data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::CorruptData("non-finite parameter".into()));
        }
        Ok(DenoiserParams { arch, layout, data, skip_table: None })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn as_slice(&self) -> &[R] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [R] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts to another precision.
    pub fn cast<S: Real>(&self) -> DenoiserParams<S> {
        DenoiserParams {
            arch: self.arch,
            layout: self.layout.clone(),
            data: self.data.iter().map(|v| S::from_f64(v.as_f64())).collect(),
            skip_table: self.skip_table.clone(),
        }
    }

    /// Switches the skip to the condition-aware form for `schedule`.
    pub fn with_schedule(mut self, schedule: &NoiseSchedule) -> Self {
        let table = (0..=schedule.steps())
            .map(|t| {
                let ab = schedule.alpha_bar(t);
                let prior = ab * RESIDUAL_VARIANCE + 1.0 - ab;
                ((1.0 - ab).sqrt() / prior, ab.sqrt(), (ab * RESIDUAL_VARIANCE / prior).sqrt())
            })
            .collect();
        self.skip_table = Some(table);
        self
    }

    pub fn has_schedule(&self) -> bool {
        self.skip_table.is_some()
    }

    fn check_inputs(&self, x_t: &FloatPlanes<R>, c: &FloatPlanes<R>) -> Result<()> {
        if x_t.channels != OUT_CHANNELS || c.channels != OUT_CHANNELS {
            return Err(Error::Shape(format!("x_t and c need 3 channels, got {} and {}", x_t.channels, c.channels)));
        }
        if x_t.width != c.width || x_t.height != c.height {
            return Err(Error::Shape(format!("x_t is {}x{} but c is {}x{}", x_t.width, x_t.height, c.width, c.height)));
        }
        Ok(())
    }

    /// Forward pass; with `keep`, also returns the activations backprop needs.
    pub(crate) fn forward(&self, x_t: &FloatPlanes<R>, t: usize, c: &FloatPlanes<R>, keep: bool) -> Result<(FloatPlanes<R>, Option<Tape<R>>)> {
        self.check_inputs(x_t, c)?;
        let (h, w) = (x_t.height, x_t.width);
        let hw = h * w;
        let emb: Vec<R> = sinusoidal_embedding(t, self.arch.emb_dim).into_iter().map(R::from_f64).collect();
        let (skip_in, out_scale) = match &self.skip_table {
            None => (x_t.data.clone(), R::one()),
            Some(table) => {
                let &(k, a, o) = table
                    .get(t)
                    .ok_or_else(|| Error::InvalidArgument(format!("step {t} outside the attached schedule (T = {})", table.len() - 1)))?;
                let (k, a) = (R::from_f64(k), R::from_f64(a));
                (x_t.data.iter().zip(&c.data).map(|(&x, &cv)| k * (x - a * cv)).collect(), R::from_f64(o))
            }
        };
        let mut tape = Tape { cols: Vec::with_capacity(LAYERS), pre: Vec::with_capacity(LAYERS - 1), emb, skip_in, out_scale };

        let mut act: Vec<R> = Vec::with_capacity(IN_CHANNELS * hw);
        act.extend_from_slice(&x_t.data);
        act.extend_from_slice(&c.data);

        for (l, (cin, cout)) in self.arch.channels().into_iter().enumerate() {
            let col = im2col(&act, cin, h, w);
            let mut z = vec![R::zero(); cout * hw];
            gemm(cout, cin * TAPS, hw, R::one(), &self.data[self.layout.weights[l].clone()], Op::N, &col, Op::N, R::zero(), &mut z);
            let bias = &self.data[self.layout.biases[l].clone()];
            let mut shift: Vec<R> = bias.to_vec();
            if l == 0 {
                let proj = &self.data[self.layout.time_proj.clone()];
                for (o, s) in shift.iter_mut().enumerate() {
                    *s = *s + proj[o * self.arch.emb_dim..][..self.arch.emb_dim].iter().zip(&tape.emb).map(|(&a, &b)| a * b).sum();
                }
            }
            for (o, s) in shift.iter().enumerate() {
                z[o * hw..(o + 1) * hw].iter_mut().for_each(|v| *v = *v + *s);
            }
            if keep {
                tape.cols.push(col);
            }
            if l + 1 < LAYERS {
                act = z.iter().map(|&v| v * sigmoid(v)).collect();
                if keep {
                    tape.pre.push(z);
                }
            } else {
                let skip = &self.data[self.layout.skip.clone()];
                for ch in 0..OUT_CHANNELS {
                    let g = skip[ch];
                    z[ch * hw..(ch + 1) * hw].iter_mut().zip(&tape.skip_in[ch * hw..(ch + 1) * hw]).for_each(|(o, &x)| *o = out_scale * *o + g * x);
                }
                act = z;
            }
        }
        let out = FloatPlanes { width: w, height: h, channels: OUT_CHANNELS, data: act };
        Ok((out, keep.then_some(tape)))
    }

    /// Accumulates `∂L/∂θ` into `grad` given `∂L/∂output`.
    pub(crate) fn backward(&self, tape: &Tape<R>, x_t: &FloatPlanes<R>, d_out: &[R], grad: &mut [R]) {
        let (h, w) = (x_t.height, x_t.width);
        let hw = h * w;
        let lay = &self.layout;

        let skip_grad = &mut grad[lay.skip.clone()];
        for ch in 0..OUT_CHANNELS {
            let d = &d_out[ch * hw..(ch + 1) * hw];
            let x = &tape.skip_in[ch * hw..(ch + 1) * hw];
            skip_grad[ch] = skip_grad[ch] + d.iter().zip(x).map(|(&a, &b)| a * b).sum();
        }

        let mut dz: Vec<R> = d_out.iter().map(|&d| d * tape.out_scale).collect();
        for (l, (cin, cout)) in self.arch.channels().into_iter().enumerate().rev() {
            let k = cin * TAPS;
            gemm(cout, hw, k, R::one(), &dz, Op::N, &tape.cols[l], Op::T, R::one(), &mut grad[lay.weights[l].clone()]);
            let bias_grad: Vec<R> = (0..cout).map(|o| dz[o * hw..(o + 1) * hw].iter().copied().sum()).collect();
            grad[lay.biases[l].clone()].iter_mut().zip(&bias_grad).for_each(|(g, &d)| *g = *g + d);
            if l == 0 {
                let e = self.arch.emb_dim;
                let proj_grad = &mut grad[lay.time_proj.clone()];
                for (o, &d) in bias_grad.iter().enumerate() {
                    proj_grad[o * e..(o + 1) * e].iter_mut().zip(&tape.emb).for_each(|(g, &v)| *g = *g + d * v);
                }
                break;
            }
            let mut dcol = vec![R::zero(); k * hw];
            gemm(k, cout, hw, R::one(), &self.data[lay.weights[l].clone()], Op::T, &dz, Op::N, R::zero(), &mut dcol);
            let da = col2im(&dcol, cin, h, w);
            let pre = &tape.pre[l - 1];
            dz = da
                .iter()
                .zip(pre)
                .map(|(&g, &z)| {
                    let s = sigmoid(z);
                    g * s * (R::one() + z * (R::one() - s))
                })
                .collect();
        }
    }
}

impl<R: Real> NoisePredictor<R> for DenoiserParams<R> {
    fn predict(&self, x_t: &FloatPlanes<R>, t: usize, c: &FloatPlanes<R>) -> Result<FloatPlanes<R>> {
        Ok(self.forward(x_t, t, c, false)?.0)
    }
}
