//! Color bit-depth reduction by K-means vector quantization.
//!
//! A codebook of `2^n` RGB centroids is fitted once per video on a uniform pixel
//! sample; each pixel is then replaced by the index of its nearest centroid.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::frame::{round_half_up_u8, Frame};

pub type Rgb = [u8; 3];

pub const DEFAULT_SAMPLE_COUNT: usize = 4096;
pub const DEFAULT_MAX_ITERS: usize = 50;
pub const DEFAULT_TOL: f64 = 0.5;

/// `2^n` centroid colors; index `i` decodes to `centroids[i]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Codebook {
    n: u8,
    centroids: Vec<Rgb>,
    /// Centroids with their indices, sorted by red, for pruned nearest-neighbour search.
    by_red: Vec<(Rgb, u8)>,
    /// SHA-256 of the sample bytes the codebook was fitted on; absent when the
    /// codebook was read back from a container.
    pub source_hash: Option<[u8; 32]>,
}

impl Codebook {
    pub fn new(n: u8, centroids: Vec<Rgb>) -> Result<Self> {
        if !(1..=8).contains(&n) {
            return Err(Error::InvalidConfig(format!("bit-depth {n} outside [1, 8]")));
        }
        if centroids.len() != 1usize << n {
            return Err(Error::CorruptData(format!("codebook for n={n} needs {} colors, got {}", 1usize << n, centroids.len())));
        }
        let mut by_red: Vec<(Rgb, u8)> = centroids.iter().enumerate().map(|(i, &c)| (c, i as u8)).collect();
        by_red.sort_unstable();
        Ok(Codebook { n, centroids, by_red, source_hash: None })
    }

    pub fn n(&self) -> u8 {
        self.n
    }

    pub fn centroids(&self) -> &[Rgb] {
        &self.centroids
    }

    /// Index of the closest centroid; ties resolve to the lowest index.
    ///
    /// Scans outward from the pixel's red value and stops on each side once the red
    /// gap alone exceeds the best distance found, so the result equals a full scan.
    #[inline]
    pub fn nearest(&self, px: Rgb) -> u8 {
        let start = self.by_red.partition_point(|e| e.0[0] < px[0]);
        let mut best = (u32::MAX, u8::MAX);
        let mut visit = |&(c, i): &(Rgb, u8)| {
            let gap = (i32::from(c[0]) - i32::from(px[0])).pow(2) as u32;
            if gap > best.0 {
                return false;
            }
            let d = sq_dist_u8(px, c);
            if d < best.0 || (d == best.0 && i < best.1) {
                best = (d, i);
            }
            true
        };
        for e in &self.by_red[start..] {
            if !visit(e) {
                break;
            }
        }
        for e in self.by_red[..start].iter().rev() {
            if !visit(e) {
                break;
            }
        }
        best.1
    }
}

#[inline]
fn sq_dist_u8(a: Rgb, b: Rgb) -> u32 {
    (0..3).map(|c| (i32::from(a[c]) - i32::from(b[c])).pow(2) as u32).sum()
}

#[inline]
fn sq_dist(a: Rgb, b: &[f64; 3]) -> f64 {
    (0..3).map(|c| (f64::from(a[c]) - b[c]).powi(2)).sum()
}

/// Row-major centroid indices of one (downscaled) frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedFrame {
    pub width: usize,
    pub height: usize,
    pub n: u8,
    pub indices: Vec<u8>,
}

/// Uniform sample of `count` pixel positions without replacement across all frames.
///
/// Positions are returned in scan order (frame, row, column). When the video holds
/// no more than `count` pixels, every pixel is returned.
pub fn sample_pixels(frames: &[Frame], count: usize, seed: u64) -> Result<Vec<Rgb>> {
    let per_frame = frames.first().map(|f| f.width() * f.height()).ok_or(Error::EmptyInput("video has no frames"))?;
    let total = per_frame * frames.len();
    let pixel = |i: usize| {
        let f = &frames[i / per_frame];
        let j = i % per_frame;
        f.pixel(j % f.width(), j / f.width())
    };
    if total <= count {
        return Ok((0..total).map(pixel).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = index::sample(&mut rng, total, count).into_vec();
    picks.sort_unstable();
    Ok(picks.into_iter().map(pixel).collect())
}

/// k-means++ seeding. Consumes the RNG as: one `random_range(0..len)` for the first
/// center, then per extra center one `random::<f64>()` scaled by the total squared
/// distance (or a fresh `random_range` when every sample coincides with a center).
pub fn kmeans_plus_plus(samples: &[Rgb], k: usize, rng: &mut impl Rng) -> Vec<[f64; 3]> {
    let to_f = |p: Rgb| p.map(f64::from);
    let first = samples[rng.random_range(0..samples.len())];
    let mut centers = vec![to_f(first)];
    let mut d2: Vec<f64> = samples.iter().map(|&p| f64::from(sq_dist_u8(p, first))).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = Some(i);
                    break;
                }
            }
            chosen.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).expect("total > 0"))
        } else {
            rng.random_range(0..samples.len())
        };
        let c = samples[pick];
        for (d, &p) in d2.iter_mut().zip(samples) {
            *d = d.min(f64::from(sq_dist_u8(p, c)));
        }
        centers.push(to_f(c));
    }
    centers
}

/// Outcome of a Lloyd run, before rounding.
#[derive(Clone, Debug, PartialEq)]
pub struct KMeansFit {
    pub centroids: Vec<[f64; 3]>,
    /// Cluster of each sample under the final centroids.
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares at every assignment step, final one included.
    pub inertia: Vec<f64>,
    pub iterations: usize,
}

fn assign(samples: &[Rgb], centroids: &[[f64; 3]], exec: Exec) -> (Vec<usize>, f64) {
    let best: Vec<(usize, f64)> = exec.map(samples, |&p| {
        let mut best = (0usize, f64::INFINITY);
        for (i, c) in centroids.iter().enumerate() {
            let d = sq_dist(p, c);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    });
    let inertia = best.iter().map(|b| b.1).sum();
    (best.into_iter().map(|b| b.0).collect(), inertia)
}

/// Lloyd iterations from `init` until the largest centroid move is below `tol` or
/// `max_iters` updates have run. Empty clusters are re-seeded with the samples
/// farthest from their own updated centroid.
pub fn lloyd(samples: &[Rgb], init: Vec<[f64; 3]>, max_iters: usize, tol: f64, exec: Exec) -> KMeansFit {
    let k = init.len();
    let mut centroids = init;
    let mut inertia = Vec::new();
    let mut iterations = 0;
    while iterations < max_iters {
        let (assignments, sse) = assign(samples, &centroids, exec);
        inertia.push(sse);
        iterations += 1;

        let mut sums = vec![[0u64; 3]; k];
        let mut counts = vec![0u64; k];
        for (&a, p) in assignments.iter().zip(samples) {
            counts[a] += 1;
            (0..3).for_each(|c| sums[a][c] += u64::from(p[c]));
        }
        let mut next: Vec<[f64; 3]> = (0..k)
            .map(|j| if counts[j] > 0 { sums[j].map(|s| s as f64 / counts[j] as f64) } else { centroids[j] })
            .collect();

        let empty: Vec<usize> = (0..k).filter(|&j| counts[j] == 0).collect();
        if !empty.is_empty() {
            let mut far: Vec<(f64, usize)> =
                samples.iter().zip(&assignments).enumerate().map(|(i, (&p, &a))| (sq_dist(p, &next[a]), i)).collect();
            far.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for (j, (_, i)) in empty.into_iter().zip(far) {
                next[j] = samples[i].map(f64::from);
            }
        }

        let movement = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if movement < tol {
            break;
        }
    }
    let (assignments, sse) = assign(samples, &centroids, exec);
    inertia.push(sse);
    KMeansFit { centroids, assignments, inertia, iterations }
}

/// k-means++ seeded Lloyd clustering into `k` groups.
pub fn fit_centroids(samples: &[Rgb], k: usize, seed: u64, max_iters: usize, tol: f64, exec: Exec) -> Result<KMeansFit> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no samples to cluster"));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("cluster count must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = kmeans_plus_plus(samples, k, &mut rng);
    Ok(lloyd(samples, init, max_iters, tol, exec))
}

/// Fits a `2^n`-color codebook; centroids are rounded to u8 and sorted (R, G, B).
pub fn fit_codebook(samples: &[Rgb], n: u8, seed: u64, max_iters: usize, tol: f64) -> Result<Codebook> {
    fit_codebook_with(samples, n, seed, max_iters, tol, Exec::Sequential)
}

pub fn fit_codebook_with(samples: &[Rgb], n: u8, seed: u64, max_iters: usize, tol: f64, exec: Exec) -> Result<Codebook> {
    if !(1..=8).contains(&n) {
        return Err(Error::InvalidConfig(format!("bit-depth {n} outside [1, 8]")));
    }
    let fit = fit_centroids(samples, 1 << n, seed, max_iters, tol, exec)?;
    let mut centroids: Vec<Rgb> = fit.centroids.iter().map(|c| c.map(round_half_up_u8)).collect();
    centroids.sort_unstable();
    let mut codebook = Codebook::new(n, centroids)?;
    let mut hasher = Sha256::new();
    samples.iter().for_each(|p| hasher.update(p));
    codebook.source_hash = Some(hasher.finalize().into());
    Ok(codebook)
}

pub fn quantize_frame(frame: &Frame, codebook: &Codebook) -> QuantizedFrame {
    QuantizedFrame {
        width: frame.width(),
        height: frame.height(),
        n: codebook.n,
        indices: frame.pixels().map(|p| codebook.nearest(p)).collect(),
    }
}

pub fn dequantize_frame(qframe: &QuantizedFrame, codebook: &Codebook) -> Result<Frame> {
    let mut data = Vec::with_capacity(qframe.indices.len() * 3);
    for &i in &qframe.indices {
        let c = codebook
            .centroids
            .get(usize::from(i))
            .ok_or_else(|| Error::CorruptData(format!("index {i} outside {}-color codebook", codebook.centroids.len())))?;
        data.extend_from_slice(c);
    }
    Frame::new(qframe.width, qframe.height, data)
}

/// Mean squared per-sample error of replacing each pixel with its nearest centroid.
pub fn quantization_mse(pixels: &[Rgb], codebook: &Codebook) -> f64 {
    let total: u64 = pixels.iter().map(|&p| u64::from(sq_dist_u8(p, codebook.centroids[usize::from(codebook.nearest(p))]))).sum();
    total as f64 / (pixels.len() * 3) as f64
}
