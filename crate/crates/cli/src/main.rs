use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cadm_core::bitstream::{self, reference_kbps, reduction_vs_reference, CompressedVideo, HEADER_BYTES, MAGIC};
use cadm_core::diffusion::{Architecture, Checkpoint, Real, ScheduleParams, SigmaMode, CHECKPOINT_MAGIC};
use cadm_core::encoder::EncoderConfig;
use cadm_core::exec::{init_threads, Exec};
use cadm_core::frame::{list_frame_files, read_sequence_dir, write_sequence_dir, Fps, Frame, VideoSequence};
use cadm_core::metrics::evaluate;
use cadm_core::pipeline::{
    baseline_frames, decode_frames, encode_sequence, gen_synthetic_dataset, list_sequence_dirs, run_sweep, sweep_csv, train_denoiser,
    training_pairs, uplink_check, EncodeSettings, SizeReport, SweepConfig, SynthConfig, TrainConfig, UplinkBudget,
};
use cadm_core::{Error, Result};

#[derive(Parser)]
#[command(name = "cadm", version, about = "Resolution/color-depth video codec with diffusion restoration")]
struct Cli {
    /// Seed for every random choice (codebook sampling, initialization, batches, sampling noise).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 1 runs everything on the calling thread, 0 picks automatically.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Arithmetic precision for training and restoration.
    #[arg(long, global = true, value_enum, default_value_t = Precision::F32)]
    precision: Precision,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic sequences as DIR/seq_XXX/frame_XXXXXX.ppm.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 16)]
        frames: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
    },
    /// Encode a directory of frames into a container and print its size report.
    Encode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        enc: EncodeArgs,
        #[arg(long, default_value = "30/1")]
        fps: String,
    },
    /// Write the dequantized low-resolution frames stored in a container.
    Decode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train a denoiser on originals paired with their own encoded baselines.
    Train {
        /// A sequence directory or a root of sequence directories.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        enc: EncodeArgs,
        #[command(flatten)]
        diffusion: DiffusionArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Restore a container with a trained checkpoint.
    Restore {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = SigmaMode::Paper)]
        sigma_mode: SigmaMode,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Dequantize and bilinearly upscale a container (no neural restoration).
    Baseline {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Rate-distortion sweep over (s, n); one CSV row per cell.
    Sweep {
        /// Root of sequence directories; synthetic data is generated when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [2, 4])]
        s_values: Vec<u32>,
        #[arg(long, value_delimiter = ',', default_values_t = [4, 6, 8])]
        n_values: Vec<u8>,
        #[arg(long, default_value_t = 2)]
        holdout: usize,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = SigmaMode::Paper)]
        sigma_mode: SigmaMode,
        /// Run grid cells concurrently.
        #[arg(long)]
        parallel_cells: bool,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 16)]
        frames: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[command(flatten)]
        diffusion: DiffusionArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Print the header of a container or checkpoint.
    Inspect {
        #[arg(long)]
        input: PathBuf,
    },
    /// Check a container's bitrate against an uplink budget.
    UplinkCheck {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        budget_kbps: f64,
    },
}

#[derive(Args, Clone, Copy)]
struct EncodeArgs {
    /// Spatial scale factor.
    #[arg(short = 's', long = "scale", default_value_t = 2)]
    s: u32,
    /// Color bit-depth (codebook of 2^n entries).
    #[arg(short = 'n', long = "bits", default_value_t = 4)]
    n: u8,
    /// Anti-alias blur sigma; defaults to s/2.
    #[arg(long)]
    blur_sigma: Option<f64>,
}

impl EncodeArgs {
    fn config(&self) -> Result<EncoderConfig> {
        match self.blur_sigma {
            Some(sigma) => EncoderConfig::with_sigma(self.s, self.n, sigma),
            None => EncoderConfig::new(self.s, self.n),
        }
    }
}

#[derive(Args, Clone, Copy)]
struct DiffusionArgs {
    /// Diffusion steps T.
    #[arg(long, default_value_t = 50)]
    steps: usize,
    /// First beta; defaults to the reference 1e-4 rescaled by 1000/T.
    #[arg(long)]
    beta_start: Option<f64>,
    /// Last beta; defaults to the reference 0.02 rescaled by 1000/T.
    #[arg(long)]
    beta_end: Option<f64>,
}

impl DiffusionArgs {
    fn schedule(&self) -> Result<ScheduleParams> {
        let d = ScheduleParams::scaled(self.steps);
        let p = ScheduleParams { steps: self.steps, beta_start: self.beta_start.unwrap_or(d.beta_start), beta_end: self.beta_end.unwrap_or(d.beta_end) };
        p.build()?;
        Ok(p)
    }
}

#[derive(Args, Clone, Copy)]
struct TrainArgs {
    /// Optimizer updates.
    #[arg(long, default_value_t = 3000)]
    iters: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Weight EMA decay for the saved model (0 keeps the raw weights).
    #[arg(long, default_value_t = 0.0)]
    ema: f64,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
}

impl TrainArgs {
    fn config(&self, schedule: ScheduleParams, seed: u64) -> TrainConfig {
        TrainConfig {
            arch: Architecture { hidden: self.hidden, emb_dim: Architecture::REFERENCE.emb_dim },
            schedule,
            steps: self.iters,
            batch_size: self.batch,
            lr: self.lr,
            seed,
            ema_decay: self.ema,
        }
    }
}

#[derive(Args)]
struct ReportArgs {
    /// Original frames to score against.
    #[arg(long)]
    originals: Option<PathBuf>,
    /// Per-frame metrics CSV (requires --originals).
    #[arg(long, requires = "originals")]
    metrics: Option<PathBuf>,
}

fn parse_fps(s: &str) -> Result<Fps> {
    let (num, den) = s.split_once('/').unwrap_or((s, "1"));
    let parse = |v: &str| v.trim().parse::<u16>().map_err(|_| Error::InvalidArgument(format!("bad fps {s:?}")));
    Fps::new(parse(num)?, parse(den)?)
}

/// A directory of frames is one sequence; otherwise each subdirectory is.
fn load_sequences(dir: &Path, fps: Fps) -> Result<Vec<VideoSequence>> {
    if !list_frame_files(dir)?.is_empty() {
        return Ok(vec![read_sequence_dir(dir, fps)?]);
    }
    let dirs = list_sequence_dirs(dir)?;
    if dirs.is_empty() {
        return Err(Error::Input(format!("no frames or sequence directories in {}", dir.display())));
    }
    dirs.iter().map(|d| read_sequence_dir(d, fps)).collect()
}

fn read_container(path: &Path) -> Result<CompressedVideo> {
    bitstream::deserialize(&fs::read(path)?)
}

fn report(frames: &[Frame], args: &ReportArgs, fps: Fps, exec: Exec) -> Result<()> {
    let Some(dir) = &args.originals else { return Ok(()) };
    let originals = read_sequence_dir(dir, fps)?;
    let q = evaluate(originals.frames(), frames, exec)?;
    println!("mean psnr_db={:.4} ssim={:.4} mse={:.4}", q.mean_psnr_db, q.mean_ssim, q.mean_mse);
    if let Some(path) = &args.metrics {
        fs::write(path, q.to_csv())?;
    }
    Ok(())
}

fn train<R: Real>(data: &Path, output: &Path, enc: EncodeArgs, schedule: ScheduleParams, cfg: TrainConfig, seed: u64, exec: Exec) -> Result<()> {
    let settings = EncodeSettings::new(enc.config()?, seed);
    let mut pairs = Vec::new();
    for seq in load_sequences(data, Fps::default())? {
        let video = encode_sequence(&seq, &settings, exec)?;
        pairs.extend(training_pairs::<R>(&seq, &video, exec)?);
    }
    eprintln!("training on {} frame pairs, {} updates", pairs.len(), cfg.steps);
    let every = (cfg.steps / 20).max(1);
    let out = train_denoiser(&pairs, &cfg, exec, |i, loss| {
        if (i + 1) % every == 0 {
            eprintln!("  step {:>6}  loss {loss:.4}", i + 1);
        }
    })?;
    Checkpoint::from_params(&out.params, schedule, enc.s as u8, enc.n).save(output)?;
    println!("saved {}", output.display());
    Ok(())
}

fn restore<R: Real>(video: &CompressedVideo, ck: &Checkpoint, seed: u64, mode: SigmaMode, exec: Exec) -> Result<Vec<Frame>> {
    cadm_core::pipeline::restore_video::<R>(video, ck, seed, mode, exec)
}

fn run(cli: Cli) -> Result<()> {
    init_threads(cli.threads);
    let exec = Exec::from_threads(cli.threads);
    let seed = cli.seed;
    match cli.command {
        Command::GenData { out, count, frames, size } => {
            let dirs = gen_synthetic_dataset(&out, &SynthConfig { count, frames, size, seed })?;
            println!("wrote {} sequences of {frames} frames to {}", dirs.len(), out.display());
        }
        Command::Encode { input, output, enc, fps } => {
            let seq = read_sequence_dir(&input, parse_fps(&fps)?)?;
            let video = encode_sequence(&seq, &EncodeSettings::new(enc.config()?, seed), exec)?;
            fs::write(&output, bitstream::serialize(&video))?;
            let r = SizeReport::of(&video)?;
            println!("payload_bytes={}", r.payload_bytes);
            println!("total_bytes={}", r.total_bytes);
            println!("bitrate_kbps={:.3}", r.bitrate_kbps);
            println!("compression_ratio_payload={:.4}", r.payload_ratio);
            println!("compression_ratio_total={:.4}", r.total_ratio);
        }
        Command::Decode { input, output } => {
            let frames = decode_frames(&read_container(&input)?, exec)?;
            write_sequence_dir(&output, &frames)?;
            println!("wrote {} frames to {}", frames.len(), output.display());
        }
        Command::Train { data, output, enc, diffusion, train: t } => {
            let schedule = diffusion.schedule()?;
            let cfg = t.config(schedule, seed);
            match cli.precision {
                Precision::F32 => train::<f32>(&data, &output, enc, schedule, cfg, seed, exec)?,
                Precision::F64 => train::<f64>(&data, &output, enc, schedule, cfg, seed, exec)?,
            }
        }
        Command::Restore { input, checkpoint, output, sigma_mode, report: rep } => {
            let video = read_container(&input)?;
            let ck = Checkpoint::load(&checkpoint)?;
            let frames = match cli.precision {
                Precision::F32 => restore::<f32>(&video, &ck, seed, sigma_mode, exec)?,
                Precision::F64 => restore::<f64>(&video, &ck, seed, sigma_mode, exec)?,
            };
            write_sequence_dir(&output, &frames)?;
            println!("restored {} frames to {}", frames.len(), output.display());
            report(&frames, &rep, video.header.fps, exec)?;
        }
        Command::Baseline { input, output, report: rep } => {
            let video = read_container(&input)?;
            let frames = baseline_frames(&video, exec)?;
            write_sequence_dir(&output, &frames)?;
            println!("wrote {} frames to {}", frames.len(), output.display());
            report(&frames, &rep, video.header.fps, exec)?;
        }
        Command::Sweep { data, s_values, n_values, holdout, output, sigma_mode, parallel_cells, count, frames, size, diffusion, train: t } => {
            let sequences = match data {
                Some(dir) => load_sequences(&dir, Fps::default())?,
                None => cadm_core::pipeline::synth_sequences(&SynthConfig { count, frames, size, seed })?,
            };
            let cfg = SweepConfig {
                s_values,
                n_values,
                train: t.config(diffusion.schedule()?, seed),
                encode_seed: seed,
                restore_seed: seed,
                sigma_mode,
                holdout,
                parallel_cells,
            };
            let rows = match cli.precision {
                Precision::F32 => run_sweep::<f32>(&sequences, &cfg, exec)?,
                Precision::F64 => run_sweep::<f64>(&sequences, &cfg, exec)?,
            };
            fs::write(&output, sweep_csv(&rows))?;
            for r in &rows {
                let refs: Vec<String> =
                    reference_kbps::ALL.iter().map(|(name, kbps)| format!("{name}={:.1}x", reduction_vs_reference(r.bitrate_kbps, *kbps).unwrap_or(f64::NAN))).collect();
                println!("s={} n={} bitrate={:.3} kbps  vs reference: {}", r.s, r.n, r.bitrate_kbps, refs.join(" "));
            }
            println!("wrote {} rows to {}", rows.len(), output.display());
        }
        Command::Inspect { input } => {
            let bytes = fs::read(&input)?;
            if bytes.starts_with(&MAGIC) {
                let video = bitstream::deserialize(&bytes)?;
                let h = &video.header;
                let (dw, dh) = h.decoded_dims();
                println!("container v{}", bitstream::VERSION);
                println!("original={}x{} decoded={dw}x{dh} s={} n={}", h.orig_width, h.orig_height, h.s, h.n);
                println!("fps={}/{} frames={}", h.fps.num, h.fps.den, h.frame_count);
                println!("header_bytes={HEADER_BYTES} codebook_bytes={}", 3 << h.n);
                let r = SizeReport::of(&video)?;
                println!("payload_bytes={} total_bytes={} bitrate_kbps={:.3}", r.payload_bytes, r.total_bytes, r.bitrate_kbps);
            } else if bytes.starts_with(&CHECKPOINT_MAGIC) {
                let ck = Checkpoint::from_bytes(&bytes)?;
                println!("checkpoint hidden={} emb_dim={} params={}", ck.arch.hidden, ck.arch.emb_dim, ck.params.len());
                println!("schedule T={} beta_start={} beta_end={}", ck.schedule.steps, ck.schedule.beta_start, ck.schedule.beta_end);
                println!("conditioned on s={} n={}", ck.s, ck.n);
            } else {
                return Err(Error::NotACadmFile);
            }
        }
        Command::UplinkCheck { input, budget_kbps } => {
            let header = bitstream::deserialize_header(&fs::read(&input)?)?;
            let v = uplink_check(&header, &UplinkBudget::new(budget_kbps)?);
            println!("bitrate_kbps={:.3} capacity_kbps={:.3} feasible={}", v.bitrate_kbps, v.capacity_kbps, v.feasible);
            if v.feasible_grid.is_empty() {
                println!("no standard (s, n) setting fits this budget");
            }
            for g in &v.feasible_grid {
                println!("  s={} n={} bitrate_kbps={:.3}", g.s, g.n, g.bitrate_kbps);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
