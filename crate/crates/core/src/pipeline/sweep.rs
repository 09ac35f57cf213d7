//! Rate–distortion sweeps over (s, n) and the uplink feasibility check.

use std::time::Instant;

use crate::bitstream::{bitrate_kbps, payload_kbps, serialize, ContainerHeader};
use crate::diffusion::{Checkpoint, Real, SigmaMode};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::frame::{Frame, VideoSequence};
use crate::metrics::evaluate;

use super::codec::{baseline_frames, encode_sequence, EncodeSettings};
use super::restore::{restore_video, train_denoiser, training_pairs, TrainConfig, TrainingPair};

pub const SWEEP_CSV_HEADER: &str = "s,n,bitrate_kbps,file_bytes,psnr_baseline,ssim_baseline,psnr_restored,ssim_restored,train_seconds";

/// Marker written in the restored columns when training diverged.
pub const DIVERGED: &str = "diverged";

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub s_values: Vec<u32>,
    pub n_values: Vec<u8>,
    pub train: TrainConfig,
    pub encode_seed: u64,
    pub restore_seed: u64,
    pub sigma_mode: SigmaMode,
    /// Number of trailing sequences held out for evaluation.
    pub holdout: usize,
    /// Run grid cells concurrently instead of one after another.
    pub parallel_cells: bool,
}

impl SweepConfig {
    pub fn validate(&self, sequences: usize) -> Result<()> {
        if self.s_values.is_empty() || self.n_values.is_empty() {
            return Err(Error::InvalidConfig("sweep grid needs at least one s and one n".into()));
        }
        for &s in &self.s_values {
            for &n in &self.n_values {
                EncoderConfig::new(s, n)?;
            }
        }
        if self.holdout == 0 || self.holdout >= sequences {
            return Err(Error::InvalidConfig(format!("holdout {} must leave training data among {sequences} sequences", self.holdout)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub s: u32,
    pub n: u8,
    pub bitrate_kbps: f64,
    /// Sum of the held-out container sizes.
    pub file_bytes: usize,
    pub psnr_baseline: f64,
    pub ssim_baseline: f64,
    /// `None` when training diverged.
    pub restored: Option<(f64, f64)>,
    pub train_seconds: f64,
}

impl SweepRow {
    pub fn csv_line(&self) -> String {
        let restored = match self.restored {
            Some((p, s)) => format!("{p:.6},{s:.6}"),
            None => format!("{DIVERGED},{DIVERGED}"),
        };
        format!(
            "{},{},{:.3},{},{:.6},{:.6},{restored},{:.3}",
            self.s, self.n, self.bitrate_kbps, self.file_bytes, self.psnr_baseline, self.ssim_baseline, self.train_seconds
        )
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

/// Everything one grid cell produces.
#[derive(Clone, Debug)]
pub struct CellResult {
    pub row: SweepRow,
    pub checkpoint: Option<Checkpoint>,
    pub containers: Vec<Vec<u8>>,
    pub restored: Vec<Frame>,
}

/// Trains on the leading sequences and evaluates on the trailing `cfg.holdout` ones.
pub fn run_cell<R: Real>(sequences: &[VideoSequence], s: u32, n: u8, cfg: &SweepConfig, exec: Exec) -> Result<CellResult> {
    cfg.validate(sequences.len())?;
    let settings = EncodeSettings::new(EncoderConfig::new(s, n)?, cfg.encode_seed);
    let (train_seqs, eval_seqs) = sequences.split_at(sequences.len() - cfg.holdout);

    let mut pairs: Vec<TrainingPair<R>> = Vec::new();
    for seq in train_seqs {
        let video = encode_sequence(seq, &settings, exec)?;
        pairs.extend(training_pairs(seq, &video, exec)?);
    }
    let started = Instant::now();
    let trained = match train_denoiser(&pairs, &cfg.train, exec, |_, _| {}) {
        Ok(t) => Some(t),
        Err(Error::NumericalDivergence(_)) => None,
        Err(e) => return Err(e),
    };
    let train_seconds = started.elapsed().as_secs_f64();
    let checkpoint = trained.map(|t| Checkpoint::from_params(&t.params, cfg.train.schedule, s as u8, n));

    let mut originals = Vec::new();
    let mut baseline = Vec::new();
    let mut restored = Vec::new();
    let mut containers = Vec::new();
    let mut bitrate = 0.0;
    for seq in eval_seqs {
        let video = encode_sequence(seq, &settings, exec)?;
        bitrate = bitrate_kbps(&video.header);
        containers.push(serialize(&video));
        originals.extend_from_slice(seq.frames());
        baseline.extend(baseline_frames(&video, exec)?);
        if let Some(ck) = &checkpoint {
            restored.extend(restore_video::<R>(&video, ck, cfg.restore_seed, cfg.sigma_mode, exec)?);
        }
    }
    let base_q = evaluate(&originals, &baseline, exec)?;
    let restored_q = match checkpoint {
        Some(_) => {
            let q = evaluate(&originals, &restored, exec)?;
            Some((q.mean_psnr_db, q.mean_ssim))
        }
        None => None,
    };
    let row = SweepRow {
        s,
        n,
        bitrate_kbps: bitrate,
        file_bytes: containers.iter().map(Vec::len).sum(),
        psnr_baseline: base_q.mean_psnr_db,
        ssim_baseline: base_q.mean_ssim,
        restored: restored_q,
        train_seconds,
    };
    Ok(CellResult { row, checkpoint, containers, restored })
}

/// Runs every `(s, n)` cell in row-major order (`s` outer).
pub fn run_sweep<R: Real>(sequences: &[VideoSequence], cfg: &SweepConfig, exec: Exec) -> Result<Vec<SweepRow>> {
    cfg.validate(sequences.len())?;
    let cells: Vec<(u32, u8)> = cfg.s_values.iter().flat_map(|&s| cfg.n_values.iter().map(move |&n| (s, n))).collect();
    let results = if cfg.parallel_cells {
        exec.map(&cells, |&(s, n)| run_cell::<R>(sequences, s, n, cfg, Exec::Sequential))
    } else {
        cells.iter().map(|&(s, n)| run_cell::<R>(sequences, s, n, cfg, exec)).collect()
    };
    results.into_iter().map(|r| r.map(|c| c.row)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UplinkBudget {
    capacity_kbps: f64,
}

impl UplinkBudget {
    pub fn new(capacity_kbps: f64) -> Result<Self> {
        if !(capacity_kbps > 0.0 && capacity_kbps.is_finite()) {
            return Err(Error::InvalidArgument(format!("uplink capacity {capacity_kbps} kbps must be positive")));
        }
        Ok(UplinkBudget { capacity_kbps })
    }

    pub fn capacity_kbps(&self) -> f64 {
        self.capacity_kbps
    }
}

/// Scale factors and bit-depths enumerated by [`uplink_check`].
pub const STANDARD_S: [u32; 8] = [1, 2, 3, 4, 5, 6, 7, 8];
pub const STANDARD_N: [u8; 5] = [4, 5, 6, 7, 8];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPoint {
    pub s: u32,
    pub n: u8,
    pub bitrate_kbps: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UplinkVerdict {
    pub bitrate_kbps: f64,
    pub capacity_kbps: f64,
    pub feasible: bool,
    /// Standard-grid settings within budget for the header's source dims and fps.
    pub feasible_grid: Vec<GridPoint>,
}

pub fn uplink_check(header: &ContainerHeader, budget: &UplinkBudget) -> UplinkVerdict {
    let bitrate = bitrate_kbps(header);
    let (w, h) = (usize::from(header.orig_width), usize::from(header.orig_height));
    let feasible_grid = STANDARD_S
        .iter()
        .flat_map(|&s| STANDARD_N.iter().map(move |&n| (s, n)))
        .map(|(s, n)| {
            let su = s as usize;
            GridPoint { s, n, bitrate_kbps: payload_kbps(w.div_ceil(su), h.div_ceil(su), n, header.fps) }
        })
        .filter(|g| g.bitrate_kbps <= budget.capacity_kbps)
        .collect();
    UplinkVerdict { bitrate_kbps: bitrate, capacity_kbps: budget.capacity_kbps, feasible: bitrate <= budget.capacity_kbps, feasible_grid }
}
