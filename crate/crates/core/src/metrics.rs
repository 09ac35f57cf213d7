//! Full-reference quality metrics: MSE, PSNR and SSIM over 8-bit RGB frames.

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::frame::{FloatPlanes, Frame};

/// PSNR reported for identical frames.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
pub const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

fn check_dims(a: &Frame, b: &Frame) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("frames are {}x{} and {}x{}", a.width(), a.height(), b.width(), b.height())));
    }
    Ok(())
}

/// Mean squared error over all samples, in u8 units.
pub fn mse(a: &Frame, b: &Frame) -> Result<f64> {
    check_dims(a, b)?;
    let sse: u64 = a.data().iter().zip(b.data()).map(|(&x, &y)| (i64::from(x) - i64::from(y)).pow(2) as u64).sum();
    Ok(sse as f64 / a.data().len() as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (255.0 * 255.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as i64;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Valid-mode separable filtering of one plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = src[x..x + n].iter().zip(k).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|j| rows[(y + j) * ow + x] * k[j]).sum();
        }
    }
    out
}

/// Mean SSIM: 11×11 Gaussian window (σ = 1.5), K₁ = 0.01, K₂ = 0.03, valid windows
/// only, averaged over windows and then over the three channels.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    check_dims(a, b)?;
    let (w, h) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Shape(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}")));
    }
    let k = gaussian_window();
    let (pa, pb) = (FloatPlanes::from_frame(a), FloatPlanes::from_frame(b));
    let mut total = 0.0;
    for c in 0..3 {
        let (x, y) = (pa.plane(c), pb.plane(c));
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(u, v)| u * v).collect();
        let [mx, my, sxx, syy, sxy] = [x, y, &xx[..], &yy[..], &xy[..]].map(|p| filter_valid(p, w, h, &k));
        let windows = mx.len();
        let sum: f64 = (0..windows)
            .map(|i| {
                let (ux, uy) = (mx[i], my[i]);
                let vx = sxx[i] - ux * ux;
                let vy = syy[i] - uy * uy;
                let cov = sxy[i] - ux * uy;
                ((2.0 * ux * uy + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2))
            })
            .sum();
        total += sum / windows as f64;
    }
    Ok(total / 3.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameQuality {
    pub mse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Per-frame metrics and their means over the sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct QualityReport {
    pub frames: Vec<FrameQuality>,
    pub mean_mse: f64,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
}

impl QualityReport {
    pub fn from_frames(frames: Vec<FrameQuality>) -> Self {
        let n = frames.len().max(1) as f64;
        QualityReport {
            mean_mse: frames.iter().map(|f| f.mse).sum::<f64>() / n,
            mean_psnr_db: frames.iter().map(|f| f.psnr_db).sum::<f64>() / n,
            mean_ssim: frames.iter().map(|f| f.ssim).sum::<f64>() / n,
            frames,
        }
    }

    /// Per-frame CSV: `frame,mse,psnr_db,ssim`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,mse,psnr_db,ssim\n");
        for (i, f) in self.frames.iter().enumerate() {
            out.push_str(&format!("{i},{:.6},{:.6},{:.6}\n", f.mse, f.psnr_db, f.ssim));
        }
        out
    }
}

pub fn frame_quality(reference: &Frame, test: &Frame) -> Result<FrameQuality> {
    let m = mse(reference, test)?;
    Ok(FrameQuality { mse: m, psnr_db: psnr_from_mse(m), ssim: ssim(reference, test)? })
}

pub fn evaluate(reference: &[Frame], test: &[Frame], exec: Exec) -> Result<QualityReport> {
    if reference.len() != test.len() {
        return Err(Error::Shape(format!("{} reference frames vs {} test frames", reference.len(), test.len())));
    }
    let pairs: Vec<_> = reference.iter().zip(test).collect();
    let frames = exec.map(&pairs, |(r, t)| frame_quality(r, t)).into_iter().collect::<Result<Vec<_>>>()?;
    Ok(QualityReport::from_frames(frames))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame_from(w: usize, h: usize, f: impl Fn(usize, usize, usize) -> u8) -> Frame {
        let mut data = Vec::with_capacity(w * h * 3);
        for y in 0..h {
            for x in 0..w {
                (0..3).for_each(|c| data.push(f(x, y, c)));
            }
        }
        Frame::new(w, h, data).unwrap()
    }

    /// Direct 2-D windowed SSIM with explicit window loops and two-pass moments.
    fn ssim_direct(a: &Frame, b: &Frame) -> f64 {
        let (w, h) = a.dims();
        let r = 5i64;
        let mut win = [[0.0; 11]; 11];
        let mut norm = 0.0;
        for (j, row) in win.iter_mut().enumerate() {
            for (i, v) in row.iter_mut().enumerate() {
                let (dy, dx) = (j as i64 - r, i as i64 - r);
                *v = (-((dx * dx + dy * dy) as f64) / (2.0 * 1.5 * 1.5)).exp();
                norm += *v;
            }
        }
        let mut total = 0.0;
        for c in 0..3 {
            let mut acc = 0.0;
            let mut count = 0;
            for y0 in 0..=h - 11 {
                for x0 in 0..=w - 11 {
                    let px = |f: &Frame, i: usize, j: usize| f64::from(f.pixel(x0 + i, y0 + j)[c]);
                    let (mut ux, mut uy) = (0.0, 0.0);
                    for j in 0..11 {
                        for i in 0..11 {
                            ux += win[j][i] / norm * px(a, i, j);
                            uy += win[j][i] / norm * px(b, i, j);
                        }
                    }
                    let (mut vx, mut vy, mut cv) = (0.0, 0.0, 0.0);
                    for j in 0..11 {
                        for i in 0..11 {
                            let wt = win[j][i] / norm;
                            vx += wt * (px(a, i, j) - ux).powi(2);
                            vy += wt * (px(b, i, j) - uy).powi(2);
                            cv += wt * (px(a, i, j) - ux) * (px(b, i, j) - uy);
                        }
                    }
                    acc += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cv + SSIM_C2)) / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
                    count += 1;
                }
            }
            total += acc / count as f64;
        }
        total / 3.0
    }

    #[test]
    fn psnr_cases() {
        let a = frame_from(8, 8, |x, y, c| (x * 30 + y * 3 + c) as u8);
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
        let b = frame_from(8, 8, |x, y, c| (x * 30 + y * 3 + c) as u8 + 1);
        assert!((psnr(&a, &b).unwrap() - 48.1308).abs() < 1e-3);
        assert!(matches!(psnr(&a, &Frame::filled(8, 7, [0; 3])), Err(Error::Shape(_))));
    }

    #[test]
    fn psnr_matches_two_pass_mse() {
        let a = frame_from(13, 9, |x, y, c| ((x * 97 + y * 31 + c * 7) % 256) as u8);
        let b = frame_from(13, 9, |x, y, c| ((x * 13 + y * 71 + c * 3) % 256) as u8);
        let diffs: Vec<f64> = a.data().iter().zip(b.data()).map(|(&x, &y)| f64::from(x) - f64::from(y)).collect();
        let mut sse = 0.0;
        for d in &diffs {
            sse += d * d;
        }
        let want = 10.0 * (255.0f64.powi(2) / (sse / diffs.len() as f64)).log10();
        assert!((psnr(&a, &b).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn ssim_identity_and_constant_closed_form() {
        let a = frame_from(20, 16, |x, y, c| ((x * x + 3 * y + 50 * c) % 256) as u8);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let (mx, my) = (60.0, 200.0);
        let want = (2.0 * mx * my + SSIM_C1) / (mx * mx + my * my + SSIM_C1);
        let got = ssim(&Frame::filled(16, 16, [60; 3]), &Frame::filled(16, 16, [200; 3])).unwrap();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn ssim_inverted_high_contrast() {
        let a = frame_from(24, 24, |x, y, _| if (x / 3 + y / 3) % 2 == 0 { 250 } else { 5 });
        let inv = frame_from(24, 24, |x, y, c| 255 - a.pixel(x, y)[c]);
        let fast = ssim(&a, &inv).unwrap();
        let slow = ssim_direct(&a, &inv);
        assert!((fast - slow).abs() < 1e-6, "{fast} vs {slow}");
        assert!(fast < 0.2);
    }

    #[test]
    fn ssim_matches_direct_on_natural_pair() {
        let a = frame_from(17, 14, |x, y, c| ((x * 11 + y * 7 + c * 40) % 256) as u8);
        let b = frame_from(17, 14, |x, y, c| ((x * 11 + y * 7 + c * 40 + (x * y) % 9) % 256) as u8);
        assert!((ssim(&a, &b).unwrap() - ssim_direct(&a, &b)).abs() < 1e-6);
    }

    #[test]
    fn ssim_rejects_small_frames() {
        let f = Frame::filled(10, 30, [1; 3]);
        assert!(matches!(ssim(&f, &f), Err(Error::Shape(_))));
    }

    #[test]
    fn report_means() {
        let a = Frame::filled(12, 12, [10; 3]);
        let b = Frame::filled(12, 12, [12; 3]);
        let r = evaluate(&[a.clone(), a.clone()], &[a.clone(), b], Exec::Parallel).unwrap();
        assert_eq!(r.frames[0].psnr_db, 100.0);
        assert_eq!(r.mean_mse, 2.0);
        assert!(r.to_csv().starts_with("frame,mse,psnr_db,ssim\n0,"));
    }

    proptest! {
        #[test]
        fn symmetric(seed in any::<u64>()) {
            let a = frame_from(12, 12, |x, y, c| (seed.rotate_left((x + y * 12 + c) as u32) & 0xFF) as u8);
            let b = frame_from(12, 12, |x, y, c| (seed.rotate_right((3 * x + y + c) as u32) & 0xFF) as u8);
            prop_assert_eq!(psnr(&a, &b).unwrap().to_bits(), psnr(&b, &a).unwrap().to_bits());
            prop_assert_eq!(ssim(&a, &b).unwrap().to_bits(), ssim(&b, &a).unwrap().to_bits());
            prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn psnr_decreases_with_error(base in 0u8..100, e in 1u8..100) {
            let f = Frame::filled(4, 4, [base; 3]);
            let g1 = Frame::filled(4, 4, [base + e; 3]);
            let g2 = Frame::filled(4, 4, [base + e + 1; 3]);
            prop_assert!(psnr(&f, &g2).unwrap() < psnr(&f, &g1).unwrap());
        }
    }
}
