//! Encode, decode and the bilinear baseline path.

use crate::bitstream::{bitrate_kbps, CompressedVideo, ContainerHeader};
use crate::encoder::{compression_ratio, downscale_all, Alignment, EncoderConfig};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::frame::{bilinear_upscale, Frame, VideoSequence};
use crate::quant::{dequantize_frame, fit_codebook_with, quantize_frame, sample_pixels, DEFAULT_MAX_ITERS, DEFAULT_SAMPLE_COUNT, DEFAULT_TOL};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncodeSettings {
    pub config: EncoderConfig,
    pub sample_count: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl EncodeSettings {
    pub fn new(config: EncoderConfig, seed: u64) -> Self {
        EncodeSettings { config, sample_count: DEFAULT_SAMPLE_COUNT, max_iters: DEFAULT_MAX_ITERS, tol: DEFAULT_TOL, seed }
    }
}

/// Downscales, fits a codebook on sampled low-resolution pixels, quantizes and packs.
pub fn encode_sequence(seq: &VideoSequence, settings: &EncodeSettings, exec: Exec) -> Result<CompressedVideo> {
    let (w, h) = seq.dims().ok_or(Error::EmptyInput("sequence has no frames"))?;
    let (orig_width, orig_height) = match (u16::try_from(w), u16::try_from(h)) {
        (Ok(w), Ok(h)) => (w, h),
        _ => return Err(Error::Input(format!("{w}x{h} exceeds the container's 65535 limit"))),
    };
    let frame_count = u32::try_from(seq.len()).map_err(|_| Error::Input("too many frames".into()))?;
    let cfg = settings.config;
    let small = downscale_all(seq.frames(), &cfg, exec);
    let samples = sample_pixels(&small, settings.sample_count, settings.seed)?;
    let codebook = fit_codebook_with(&samples, cfg.n, settings.seed, settings.max_iters, settings.tol, exec)?;
    let quantized = exec.map(&small, |f| quantize_frame(f, &codebook));
    let header = ContainerHeader { orig_width, orig_height, s: cfg.s as u8, n: cfg.n, fps: seq.fps, frame_count, codebook };
    CompressedVideo::from_frames(header, &quantized, exec)
}

/// Sizes and rates of one container.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SizeReport {
    pub raw_bytes: usize,
    pub payload_bytes: usize,
    pub total_bytes: usize,
    pub bitrate_kbps: f64,
    /// `24s²/n`.
    pub nominal_ratio: f64,
    pub payload_ratio: f64,
    pub total_ratio: f64,
}

impl SizeReport {
    pub fn of(video: &CompressedVideo) -> Result<Self> {
        let h = &video.header;
        let cfg = EncoderConfig::new(u32::from(h.s), h.n)?;
        let raw_bytes = 3 * usize::from(h.orig_width) * usize::from(h.orig_height) * h.frame_count as usize;
        let (payload, total) = (video.payload_bytes(), video.total_bytes());
        Ok(SizeReport {
            raw_bytes,
            payload_bytes: payload,
            total_bytes: total,
            bitrate_kbps: bitrate_kbps(h),
            nominal_ratio: compression_ratio(&cfg),
            payload_ratio: raw_bytes as f64 / payload as f64,
            total_ratio: raw_bytes as f64 / total as f64,
        })
    }
}

/// Dequantized low-resolution frames.
pub fn decode_frames(video: &CompressedVideo, exec: Exec) -> Result<Vec<Frame>> {
    let q = video.quantized_frames()?;
    exec.map(&q, |f| dequantize_frame(f, &video.header.codebook)).into_iter().collect()
}

/// Upscales a decoded frame by `s` and undoes the encoder's alignment crop.
pub fn upscale_to_original(small: &Frame, header: &ContainerHeader) -> Result<Frame> {
    let (w, h) = (usize::from(header.orig_width), usize::from(header.orig_height));
    let a = Alignment::new(w, h, u32::from(header.s));
    let big = bilinear_upscale(small, u32::from(header.s))?;
    if big.dims() == (w, h) {
        return Ok(big);
    }
    big.crop(a.offset_x, a.offset_y, w, h)
}

/// The non-neural reference: dequantize and bilinear-upscale to the original dimensions.
pub fn baseline_frames(video: &CompressedVideo, exec: Exec) -> Result<Vec<Frame>> {
    let small = decode_frames(video, exec)?;
    exec.map(&small, |f| upscale_to_original(f, &video.header)).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitstream::{deserialize, serialize};
    use crate::encoder::downscale;
    use crate::frame::Fps;
    use crate::metrics::psnr;

    fn seq(frames: usize, w: usize, h: usize) -> VideoSequence {
        let f = |k: usize| {
            let mut data = Vec::with_capacity(w * h * 3);
            for y in 0..h {
                for x in 0..w {
                    data.extend([(x * 7 + k) as u8, (y * 5) as u8, ((x + y) * 3) as u8]);
                }
            }
            Frame::new(w, h, data).unwrap()
        };
        VideoSequence::new((0..frames).map(f).collect(), Fps::default()).unwrap()
    }

    #[test]
    fn payload_formula_and_ratio() {
        let v = encode_sequence(&seq(8, 256, 256), &EncodeSettings::new(EncoderConfig::new(4, 4).unwrap(), 1), Exec::Parallel).unwrap();
        assert_eq!(v.payload_bytes(), 16384);
        let r = SizeReport::of(&v).unwrap();
        assert_eq!(r.payload_ratio, 96.0);
        assert_eq!(r.nominal_ratio, 96.0);
    }

    #[test]
    fn lossless_settings_reproduce_downscaled_frames() {
        // Eight distinct colors, all representable by an 8-bit codebook.
        let palette: Vec<[u8; 3]> = (0..8u8).map(|i| [i * 30, 255 - i * 20, i * 11]).collect();
        let mut data = Vec::new();
        for y in 0..16 {
            for x in 0..16 {
                data.extend(palette[(x / 4 + y / 8) % 8]);
            }
        }
        let s = VideoSequence::new(vec![Frame::new(16, 16, data).unwrap()], Fps::default()).unwrap();
        let cfg = EncoderConfig::with_sigma(1, 8, 0.0).unwrap();
        let v = encode_sequence(&s, &EncodeSettings::new(cfg, 3), Exec::Sequential).unwrap();
        let small = downscale(&s.frames()[0], &cfg);
        let cb = v.header.codebook.centroids();
        assert!(small.pixels().all(|p| cb.contains(&p)));
        let back = deserialize(&serialize(&v)).unwrap();
        assert_eq!(decode_frames(&back, Exec::Sequential).unwrap()[0], small);
        assert_eq!(baseline_frames(&back, Exec::Sequential).unwrap()[0], small);
    }

    #[test]
    fn baseline_has_original_dims() {
        let s = seq(2, 37, 22);
        for scale in [1, 2, 3, 4] {
            let v = encode_sequence(&s, &EncodeSettings::new(EncoderConfig::new(scale, 5).unwrap(), 0), Exec::Parallel).unwrap();
            let b = baseline_frames(&v, Exec::Parallel).unwrap();
            assert!(b.iter().all(|f| f.dims() == (37, 22)));
            assert!(psnr(&b[0], &s.frames()[0]).unwrap() <= 100.0);
        }
    }

    #[test]
    fn rejects_empty_and_oversized() {
        let cfg = EncodeSettings::new(EncoderConfig::new(2, 4).unwrap(), 0);
        let empty = VideoSequence::new(vec![], Fps::default()).unwrap();
        assert!(matches!(encode_sequence(&empty, &cfg, Exec::Sequential), Err(Error::EmptyInput(_))));
        let wide = VideoSequence::new(vec![Frame::filled(70_000, 1, [0; 3])], Fps::default()).unwrap();
        assert!(matches!(encode_sequence(&wide, &cfg, Exec::Sequential), Err(Error::Input(_))));
    }
}
