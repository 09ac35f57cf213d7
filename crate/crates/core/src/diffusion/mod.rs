//! Conditioned denoising-diffusion restoration.
//!
//! Pixels live in `[-1, 1]` inside this module; conversion to and from u8 frames
//! happens only through [`normalize`] and [`denormalize`].

mod checkpoint;
mod net;
mod sample;
mod schedule;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use net::{sinusoidal_embedding, Architecture, DenoiserParams, NoisePredictor, ParamLayout};
pub use sample::{restore, restore_from, sample_noise, SigmaMode};
pub use schedule::{forward_diffuse, make_schedule, NoiseSchedule, ScheduleParams};
pub use train::{loss_and_grad, Adam, DiffusionBatch, DiffusionExample, Trainer};

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

use crate::frame::{FloatPlanes, Frame};

/// Conditioning signal: the bilinear-upscaled degraded frame in `[-1, 1]`.
pub type ConditionTensor<R> = FloatPlanes<R>;

/// Floating-point precision of the diffusion math (f32 or f64).
pub trait Real: Float + Default + Debug + Send + Sync + Sum + 'static {
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;

    fn as_f64(self) -> f64;

    /// `C = alpha·A·B + beta·C` on strided row/column layouts.
    ///
    /// # Safety
    /// Every index reachable through the given dimensions and strides must be in
    /// bounds of the respective pointer's allocation, and `c` must not alias `a`/`b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize, k: usize, n: usize, alpha: Self,
        a: *const Self, rsa: isize, csa: isize,
        b: *const Self, rsb: isize, csb: isize,
        beta: Self, c: *mut Self, rsc: isize, csc: isize,
    );
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        f64::from(self)
    }

    unsafe fn gemm_raw(
        m: usize, k: usize, n: usize, alpha: Self,
        a: *const Self, rsa: isize, csa: isize,
        b: *const Self, rsb: isize, csb: isize,
        beta: Self, c: *mut Self, rsc: isize, csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    unsafe fn gemm_raw(
        m: usize, k: usize, n: usize, alpha: Self,
        a: *const Self, rsa: isize, csa: isize,
        b: *const Self, rsb: isize, csb: isize,
        beta: Self, c: *mut Self, rsc: isize, csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Transpose flags for [`gemm`].
#[derive(Clone, Copy)]
pub(crate) enum Op {
    N,
    T,
}

/// `C (m×n) = alpha·op(A)·op(B) + beta·C` for dense row-major buffers, where `A`
/// is stored as `m×k` (or `k×m` when transposed) and likewise for `B`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<R: Real>(m: usize, k: usize, n: usize, alpha: R, a: &[R], ta: Op, b: &[R], tb: Op, beta: R, c: &mut [R]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too small");
    let (rsa, csa) = match ta {
        Op::N => (k as isize, 1),
        Op::T => (1, m as isize),
    };
    let (rsb, csb) = match tb {
        Op::N => (n as isize, 1),
        Op::T => (1, k as isize),
    };
    // SAFETY: dense layouts checked above; `c` is a unique borrow.
    unsafe { R::gemm_raw(m, k, n, alpha, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1) }
}

/// Maps u8 samples to planar `[-1, 1]`: `v / 127.5 - 1`.
pub fn normalize<R: Real>(frame: &Frame) -> FloatPlanes<R> {
    let (w, h) = frame.dims();
    let n = w * h;
    let mut out = FloatPlanes::zeros(3, h, w);
    for (i, px) in frame.pixels().enumerate() {
        for c in 0..3 {
            out.data[c * n + i] = R::from_f64(f64::from(px[c]) / 127.5 - 1.0);
        }
    }
    out
}

/// Clamps to `[-1, 1]` and maps back to u8 with round-half-up.
pub fn denormalize<R: Real>(planes: &FloatPlanes<R>) -> Frame {
    assert_eq!(planes.channels, 3, "denormalize needs 3 channels");
    let n = planes.width * planes.height;
    let mut data = vec![0u8; n * 3];
    for i in 0..n {
        for c in 0..3 {
            let v = planes.data[c * n + i].as_f64().clamp(-1.0, 1.0);
            data[i * 3 + c] = crate::frame::round_half_up_u8((v + 1.0) * 127.5);
        }
    }
    Frame::new(planes.width, planes.height, data).expect("planes have positive dims")
}
