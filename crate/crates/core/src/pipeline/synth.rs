//! Synthetic test footage: anti-aliased rectangles drifting over gradient backgrounds.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::frame::{round_half_up_u8, write_sequence_dir, Fps, Frame, VideoSequence};

pub const MIN_SIZE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthConfig {
    pub count: usize,
    pub frames: usize,
    pub size: usize,
    pub seed: u64,
}

struct Rect {
    w: f64,
    h: f64,
    x0: f64,
    y0: f64,
    vx: f64,
    vy: f64,
    color: [f64; 3],
}

/// Reflects `p` into `[0, len]` (triangle wave), giving bouncing motion.
fn bounce(p: f64, len: f64) -> f64 {
    if len <= 0.0 {
        return 0.0;
    }
    let m = p.rem_euclid(2.0 * len);
    if m > len {
        2.0 * len - m
    } else {
        m
    }
}

fn overlap(lo: f64, hi: f64, a: f64, b: f64) -> f64 {
    (hi.min(b) - lo.max(a)).max(0.0)
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [0; 3].map(|_: u8| f64::from(rng.random::<u8>()))
}

/// Signed speed in pixels per frame, bounded away from zero so every sequence moves.
fn speed(rng: &mut ChaCha8Rng) -> f64 {
    let v = rng.random_range(0.3..1.5);
    if rng.random::<bool>() {
        v
    } else {
        -v
    }
}

/// Renders one sequence. Each sequence index gets its own ChaCha stream of `seed`.
pub fn synth_sequence(frames: usize, size: usize, seed: u64, index: u64) -> Result<Vec<Frame>> {
    if size < MIN_SIZE {
        return Err(Error::InvalidArgument(format!("synthetic frame size must be at least {MIN_SIZE}, got {size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let side = size as f64;
    let (c0, c1) = (random_color(&mut rng), random_color(&mut rng));
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos() / side, angle.sin() / side);
    let drift = rng.random_range(-0.02..0.02);
    let rects: Vec<Rect> = (0..rng.random_range(2..=4))
        .map(|_| {
            let w = rng.random_range(side / 6.0..side / 2.0);
            let h = rng.random_range(side / 6.0..side / 2.0);
            Rect {
                w,
                h,
                x0: rng.random_range(0.0..side - w),
                y0: rng.random_range(0.0..side - h),
                vx: speed(&mut rng),
                vy: speed(&mut rng),
                color: random_color(&mut rng),
            }
        })
        .collect();

    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        let ft = f as f64;
        let boxes: Vec<(f64, f64, &Rect)> =
            rects.iter().map(|r| (bounce(r.x0 + r.vx * ft, side - r.w), bounce(r.y0 + r.vy * ft, side - r.h), r)).collect();
        let mut data = Vec::with_capacity(size * size * 3);
        for y in 0..size {
            for x in 0..size {
                let (px, py) = (x as f64, y as f64);
                let u = bounce(0.5 + (px + 0.5 - side / 2.0) * dx + (py + 0.5 - side / 2.0) * dy + drift * ft, 1.0);
                let mut rgb: [f64; 3] = std::array::from_fn(|c| c0[c] + (c1[c] - c0[c]) * u);
                for &(rx, ry, r) in &boxes {
                    let cover = overlap(px, px + 1.0, rx, rx + r.w) * overlap(py, py + 1.0, ry, ry + r.h);
                    if cover > 0.0 {
                        (0..3).for_each(|c| rgb[c] += (r.color[c] - rgb[c]) * cover);
                    }
                }
                data.extend(rgb.map(round_half_up_u8));
            }
        }
        out.push(Frame::new(size, size, data)?);
    }
    Ok(out)
}

pub fn synth_sequences(cfg: &SynthConfig) -> Result<Vec<VideoSequence>> {
    (0..cfg.count).map(|i| VideoSequence::new(synth_sequence(cfg.frames, cfg.size, cfg.seed, i as u64)?, Fps::default())).collect()
}

pub fn sequence_dir_name(index: usize) -> String {
    format!("seq_{index:03}")
}

/// Writes `count` sequences as `root/seq_XXX/frame_XXXXXX.ppm` and returns the sequence directories.
pub fn gen_synthetic_dataset(root: impl AsRef<Path>, cfg: &SynthConfig) -> Result<Vec<PathBuf>> {
    let root = root.as_ref();
    let mut dirs = Vec::with_capacity(cfg.count);
    for (i, seq) in synth_sequences(cfg)?.iter().enumerate() {
        let dir = root.join(sequence_dir_name(i));
        write_sequence_dir(&dir, seq.frames())?;
        dirs.push(dir);
    }
    Ok(dirs)
}

/// Subdirectories of `root`, sorted by name.
pub fn list_sequence_dirs(root: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::list_frame_files;

    #[test]
    fn deterministic_and_counted() {
        let cfg = SynthConfig { count: 2, frames: 8, size: 32, seed: 5 };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let da = gen_synthetic_dataset(a.path(), &cfg).unwrap();
        gen_synthetic_dataset(b.path(), &cfg).unwrap();
        assert_eq!(list_sequence_dirs(a.path()).unwrap(), da);
        let mut files = 0;
        for d in &da {
            for f in list_frame_files(d).unwrap() {
                let other = b.path().join(d.file_name().unwrap()).join(f.file_name().unwrap());
                assert_eq!(fs::read(&f).unwrap(), fs::read(other).unwrap());
                files += 1;
            }
        }
        assert_eq!(files, 16);
    }

    #[test]
    fn motion_present_and_sequences_differ() {
        let cfg = SynthConfig { count: 3, frames: 6, size: 24, seed: 1 };
        let seqs = synth_sequences(&cfg).unwrap();
        for seq in &seqs {
            for pair in seq.frames().windows(2) {
                let delta: u64 = pair[0].data().iter().zip(pair[1].data()).map(|(&a, &b)| u64::from(a.abs_diff(b))).sum();
                assert!(delta > 0);
            }
        }
        assert_ne!(seqs[0].frames()[0], seqs[1].frames()[0]);
    }

    #[test]
    fn rejects_tiny_frames() {
        assert!(synth_sequence(1, 15, 0, 0).is_err());
    }
}
