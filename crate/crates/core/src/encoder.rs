//! Patch-wise resolution downscaling.
//!
//! A frame is (optionally) zero-padded to a multiple of the scale factor `s`,
//! smoothed with a separable Gaussian, and then every non-overlapping `s`×`s`
//! patch is replaced by its per-channel mean.

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::frame::{round_half_up_u8, zero_pad, FloatPlanes, Frame};

/// Scale factor, color bit-depth and anti-alias blur width.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderConfig {
    pub s: u32,
    pub n: u8,
    pub blur_sigma: f64,
}

impl EncoderConfig {
    /// Validated config with the default blur width `s / 2`.
    pub fn new(s: u32, n: u8) -> Result<Self> {
        Self::with_sigma(s, n, f64::from(s) / 2.0)
    }

    pub fn with_sigma(s: u32, n: u8, blur_sigma: f64) -> Result<Self> {
        if s == 0 || s > 255 {
            return Err(Error::InvalidScale(s));
        }
        if !(1..=8).contains(&n) {
            return Err(Error::InvalidConfig(format!("bit-depth {n} outside [1, 8]")));
        }
        if !(blur_sigma >= 0.0 && blur_sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("blur sigma {blur_sigma} must be finite and >= 0")));
        }
        Ok(EncoderConfig { s, n, blur_sigma })
    }

    /// Downscaled dimensions for a `width`×`height` source.
    pub fn scaled_dims(&self, width: usize, height: usize) -> (usize, usize) {
        let s = self.s as usize;
        (width.div_ceil(s), height.div_ceil(s))
    }
}

/// Size reduction versus 24-bit full-resolution frames, `24·s²/bits`.
pub fn compression_ratio_for(s: u32, bits: u32) -> f64 {
    24.0 * f64::from(s) * f64::from(s) / f64::from(bits)
}

pub fn compression_ratio(config: &EncoderConfig) -> f64 {
    compression_ratio_for(config.s, u32::from(config.n))
}

/// Where the source frame sits inside its padded, `s`-aligned canvas.
///
/// The alignment slack `aligned - original` is split between both sides, with the
/// extra pixel (if any) on the right/bottom.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Alignment {
    pub aligned_width: usize,
    pub aligned_height: usize,
    pub offset_x: usize,
    pub offset_y: usize,
}

impl Alignment {
    pub fn new(width: usize, height: usize, s: u32) -> Self {
        let s = s as usize;
        let (aw, ah) = (width.div_ceil(s) * s, height.div_ceil(s) * s);
        Alignment { aligned_width: aw, aligned_height: ah, offset_x: (aw - width) / 2, offset_y: (ah - height) / 2 }
    }

    pub fn is_identity(&self, width: usize, height: usize) -> bool {
        self.aligned_width == width && self.aligned_height == height
    }
}

/// Pads `frame` by `⌈s/2⌉` black pixels and crops to the next multiple of `s`.
/// Returns the frame untouched when both dimensions are already multiples of `s`.
pub fn align_to_scale(frame: &Frame, s: u32) -> Frame {
    let (w, h) = frame.dims();
    let a = Alignment::new(w, h, s);
    if a.is_identity(w, h) {
        return frame.clone();
    }
    let pad = (s as usize).div_ceil(2);
    zero_pad(frame, pad)
        .crop(pad - a.offset_x, pad - a.offset_y, a.aligned_width, a.aligned_height)
        .expect("alignment slack never exceeds the padding")
}

/// Normalized Gaussian taps for offsets `-r..=r`, `r = ⌈3σ⌉`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= sum);
    k
}

fn convolve_1d(src: &[f64], dst: &mut [f64], len: usize, stride: usize, lines: usize, line_stride: usize, kernel: &[f64]) {
    let r = (kernel.len() / 2) as isize;
    let last = len as isize - 1;
    for line in 0..lines {
        let base = line * line_stride;
        for i in 0..len as isize {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let j = (i + k as isize - r).clamp(0, last) as usize;
                acc += w * src[base + j * stride];
            }
            dst[base + i as usize * stride] = acc;
        }
    }
}

/// Separable Gaussian blur per channel with clamp-to-edge borders.
pub fn gaussian_blur(frame: &Frame, sigma: f64) -> FloatPlanes {
    let mut planes = FloatPlanes::from_frame(frame);
    if sigma <= 0.0 {
        return planes;
    }
    let kernel = gaussian_kernel(sigma);
    let (w, h) = frame.dims();
    let mut tmp = vec![0.0; w * h];
    for c in 0..3 {
        let plane = planes.plane_mut(c);
        convolve_1d(plane, &mut tmp, w, 1, h, w, &kernel);
        convolve_1d(&tmp, plane, h, w, w, 1, &kernel);
    }
    planes
}

/// Per output sample along one axis: the clamped source taps of "blur, then average
/// `s` neighbours" merged into one weight list.
fn fused_taps(len: usize, s: usize, kernel: &[f64]) -> Vec<Vec<(usize, f64)>> {
    let r = (kernel.len() / 2) as isize;
    let last = len as isize - 1;
    let inv = 1.0 / s as f64;
    (0..len / s)
        .map(|o| {
            let mut taps: Vec<(usize, f64)> = Vec::new();
            for i in (o * s) as isize..((o + 1) * s) as isize {
                for (k, w) in kernel.iter().enumerate() {
                    let j = (i + k as isize - r).clamp(0, last) as usize;
                    match taps.iter_mut().find(|t| t.0 == j) {
                        Some(t) => t.1 += w * inv,
                        None => taps.push((j, w * inv)),
                    }
                }
            }
            taps
        })
        .collect()
}

/// Blur-then-decimate to `(⌈w/s⌉, ⌈h/s⌉)`.
///
/// Without blur the patch mean is summed exactly. With blur, the Gaussian and the
/// `s×s` average are applied as one separable filter evaluated only at the kept samples.
pub fn downscale(frame: &Frame, config: &EncoderConfig) -> Frame {
    let s = config.s as usize;
    let aligned = align_to_scale(frame, config.s);
    let (w, h) = aligned.dims();
    let (ow, oh) = (w / s, h / s);
    let mut data = vec![0u8; ow * oh * 3];
    let planes = FloatPlanes::from_frame(&aligned);
    if config.blur_sigma <= 0.0 {
        let area = (s * s) as f64;
        for c in 0..3 {
            let plane = planes.plane(c);
            for py in 0..oh {
                for px in 0..ow {
                    let mut acc = 0.0;
                    for y in py * s..(py + 1) * s {
                        acc += plane[y * w + px * s..y * w + (px + 1) * s].iter().sum::<f64>();
                    }
                    data[(py * ow + px) * 3 + c] = round_half_up_u8(acc / area);
                }
            }
        }
        return Frame::new(ow, oh, data).expect("output dims are positive");
    }
    let kernel = gaussian_kernel(config.blur_sigma);
    let (tx, ty) = (fused_taps(w, s, &kernel), fused_taps(h, s, &kernel));
    let mut rows = vec![0.0; h * ow];
    for c in 0..3 {
        let plane = planes.plane(c);
        for y in 0..h {
            let line = &plane[y * w..(y + 1) * w];
            for (px, taps) in tx.iter().enumerate() {
                rows[y * ow + px] = taps.iter().map(|&(j, wt)| wt * line[j]).sum();
            }
        }
        for (py, taps) in ty.iter().enumerate() {
            for px in 0..ow {
                let acc: f64 = taps.iter().map(|&(j, wt)| wt * rows[j * ow + px]).sum();
                data[(py * ow + px) * 3 + c] = round_half_up_u8(acc);
            }
        }
    }
    Frame::new(ow, oh, data).expect("output dims are positive")
}

pub fn downscale_all(frames: &[Frame], config: &EncoderConfig, exec: Exec) -> Vec<Frame> {
    exec.map(frames, |f| downscale(f, config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Integer patch mean over the implicitly zero-bordered, centered source.
    fn brute_force_patch_mean(frame: &Frame, s: usize) -> Frame {
        let (w, h) = frame.dims();
        let (ow, oh) = (w.div_ceil(s), h.div_ceil(s));
        let (ox, oy) = ((ow * s - w) / 2, (oh * s - h) / 2);
        let mut out = Frame::filled(ow, oh, [0; 3]);
        for py in 0..oh {
            for px in 0..ow {
                let mut sums = [0u64; 3];
                for y in 0..s {
                    for x in 0..s {
                        let (sx, sy) = ((px * s + x) as isize - ox as isize, (py * s + y) as isize - oy as isize);
                        if sx >= 0 && sy >= 0 && (sx as usize) < w && (sy as usize) < h {
                            let p = frame.pixel(sx as usize, sy as usize);
                            (0..3).for_each(|c| sums[c] += u64::from(p[c]));
                        }
                    }
                }
                let area = (s * s) as u64;
                out.set_pixel(px, py, sums.map(|v| ((2 * v + area) / (2 * area)) as u8));
            }
        }
        out
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(compression_ratio(&EncoderConfig::new(4, 4).unwrap()), 96.0);
        assert_eq!(compression_ratio(&EncoderConfig::new(2, 8).unwrap()), 12.0);
        assert_eq!(compression_ratio_for(1, 24), 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(EncoderConfig::new(0, 4).is_err());
        assert!(EncoderConfig::new(2, 0).is_err());
        assert!(EncoderConfig::new(2, 9).is_err());
        assert!(EncoderConfig::with_sigma(2, 4, -1.0).is_err());
        assert_eq!(EncoderConfig::new(4, 4).unwrap().blur_sigma, 2.0);
    }

    #[test]
    fn kernel_center_weight_for_unit_sigma() {
        // exp(-k^2/2) for k = -3..=3, normalized; evaluated independently.
        let raw: Vec<f64> = [-3.0f64, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0].iter().map(|k| (-k * k / 2.0).exp()).collect();
        let w0 = 1.0 / raw.iter().sum::<f64>();
        assert!((w0 - 0.399_050_279_652_454_9).abs() < 1e-12);
        let k = gaussian_kernel(1.0);
        assert_eq!(k.len(), 7);
        assert!((k[3] - w0).abs() < 1e-15);

        let mut data = vec![0u8; 15];
        data[6..9].copy_from_slice(&[255; 3]);
        let blurred = gaussian_blur(&Frame::new(5, 1, data).unwrap(), 1.0);
        assert!((blurred.plane(0)[2] - 255.0 * w0).abs() < 1e-9);
    }

    #[test]
    fn blur_identity_and_constant() {
        let f = Frame::new(3, 2, (0..18).map(|v| v * 13).collect()).unwrap();
        assert_eq!(gaussian_blur(&f, 0.0), FloatPlanes::from_frame(&f));
        let c = gaussian_blur(&Frame::filled(9, 7, [77, 0, 255]), 1.7);
        for (ch, v) in [77.0, 0.0, 255.0].into_iter().enumerate() {
            assert!(c.plane(ch).iter().all(|x| (x - v).abs() < 1e-9));
        }
    }

    #[test]
    fn downscale_examples() {
        let cfg = EncoderConfig::new(4, 4).unwrap();
        assert_eq!(downscale(&Frame::filled(8, 8, [50, 60, 70]), &cfg), Frame::filled(2, 2, [50, 60, 70]));

        let patch = Frame::new(2, 2, vec![0, 0, 0, 2, 2, 2, 4, 4, 4, 6, 6, 6]).unwrap();
        let cfg = EncoderConfig::with_sigma(2, 4, 0.0).unwrap();
        assert_eq!(downscale(&patch, &cfg).data(), &[3, 3, 3]);

        assert_eq!(downscale(&Frame::filled(5, 5, [1; 3]), &EncoderConfig::new(2, 4).unwrap()).dims(), (3, 3));
    }

    #[test]
    fn alignment_keeps_source_inside() {
        for s in 1..9u32 {
            for w in 1..20usize {
                let f = Frame::filled(w, 3, [200; 3]);
                let a = align_to_scale(&f, s);
                let al = Alignment::new(w, 3, s);
                assert_eq!(a.dims(), (al.aligned_width, al.aligned_height));
                let inner = a.crop(al.offset_x, al.offset_y, w, 3).unwrap();
                assert_eq!(inner, f, "s={s} w={w}");
            }
        }
    }

    proptest! {
        #[test]
        fn unblurred_matches_patch_mean_oracle(
            (w, h, data) in (1usize..14, 1usize..14).prop_flat_map(|(w, h)| (Just(w), Just(h), proptest::collection::vec(any::<u8>(), w * h * 3))),
            s in 1u32..6,
        ) {
            let f = Frame::new(w, h, data).unwrap();
            let cfg = EncoderConfig::with_sigma(s, 4, 0.0).unwrap();
            prop_assert_eq!(downscale(&f, &cfg), brute_force_patch_mean(&f, s as usize));
        }

        #[test]
        fn blurred_matches_blur_then_patch_mean(
            (w, h, data) in (1usize..20, 1usize..20).prop_flat_map(|(w, h)| (Just(w), Just(h), proptest::collection::vec(any::<u8>(), w * h * 3))),
            s in 1u32..6,
            sigma in 0.1f64..3.0,
        ) {
            let f = Frame::new(w, h, data).unwrap();
            let cfg = EncoderConfig::with_sigma(s, 4, sigma).unwrap();
            let out = downscale(&f, &cfg);
            let aligned = align_to_scale(&f, s);
            let blurred = gaussian_blur(&aligned, sigma);
            let s = s as usize;
            let aw = aligned.width();
            for py in 0..out.height() {
                for px in 0..out.width() {
                    for c in 0..3 {
                        let mut acc = 0.0;
                        for y in py * s..(py + 1) * s {
                            for x in px * s..(px + 1) * s {
                                acc += blurred.plane(c)[y * aw + x];
                            }
                        }
                        let mean = acc / (s * s) as f64;
                        let got = f64::from(out.pixel(px, py)[c]);
                        prop_assert!((got - mean).abs() <= 0.5 + 1e-9, "{got} vs {mean}");
                    }
                }
            }
        }

        #[test]
        fn output_dims(w in 1usize..40, h in 1usize..40, s in 1u32..9) {
            let cfg = EncoderConfig::new(s, 4).unwrap();
            let out = downscale(&Frame::filled(w, h, [3; 3]), &cfg);
            prop_assert_eq!(out.dims(), (w.div_ceil(s as usize), h.div_ceil(s as usize)));
        }

        #[test]
        fn constant_survives_aligned_downscale(k in 1usize..5, s in 1u32..6, v in any::<u8>(), sigma in 0.0f64..4.0) {
            let side = k * s as usize;
            let cfg = EncoderConfig::with_sigma(s, 4, sigma).unwrap();
            let out = downscale(&Frame::filled(side, side, [v; 3]), &cfg);
            prop_assert!(out.data().iter().all(|&x| x == v));
        }

        #[test]
        fn ratio_monotone(s in 1u32..16, n in 1u8..8) {
            let r = |s, n| compression_ratio(&EncoderConfig::new(s, n).unwrap());
            prop_assert!(r(s + 1, n) > r(s, n));
            prop_assert!(r(s, n + 1) < r(s, n));
        }
    }
}
