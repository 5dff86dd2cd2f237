//! Data, optimization, training and persistence.

mod checkpoint;
mod config;
mod corpus;
mod optim;
mod train;

pub use checkpoint::{
    decode_records, encode_records, load_checkpoint, load_checkpoint_for, save_checkpoint, sidecar_path, Checkpoint,
    Model, MAGIC, VERSION,
};
pub use config::{LrSchedule, Stage, TrainConfig};
pub use corpus::{load_corpus, pair_styles, synth_corpus, Corpus};
pub use optim::Adam;
pub(crate) use train::csv_err;
pub use train::{train_stage1, train_stage2, TrainLog, MONOTONE_WINDOW};
