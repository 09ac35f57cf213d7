//! End-to-end orchestration used by the command-line tool and the acceptance suite.

pub mod codec;
pub mod restore;
pub mod sweep;
pub mod synth;

pub use codec::{baseline_frames, decode_frames, encode_sequence, upscale_to_original, EncodeSettings, SizeReport};
pub use restore::{frame_seed, restore_frames, restore_video, train_denoiser, Augment, training_pairs, TrainConfig, TrainOutcome, TrainingPair};
pub use sweep::{
    run_cell, run_sweep, sweep_csv, uplink_check, CellResult, GridPoint, SweepConfig, SweepRow, UplinkBudget, UplinkVerdict, STANDARD_N,
    STANDARD_S, SWEEP_CSV_HEADER,
};
pub use synth::{gen_synthetic_dataset, list_sequence_dirs, sequence_dir_name, synth_sequence, synth_sequences, SynthConfig};
