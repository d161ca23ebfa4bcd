//! Student/teacher training: configuration, steps, checkpoints and the
//! epoch loop.

pub mod checkpoint;
pub mod config;
pub mod ops;
pub mod step;
pub mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{AdamWConfig, Mode, TrainConfig};
pub use ops::{
    adamw_step, deterministic_teacher_target, ema_update, mc_teacher_target, mc_teacher_target_paired, mix_probs,
    mixup, sample_mix_coefficient, unlabeled_pairing, Moments,
};
pub use step::{prepare_step, step_rng, train_step, PreparedStep, StepBatch, StepLog, TrainState};
pub use train::{evaluate_state, train, HistoryRow, TrainData};
