//! Matched subsampling and the two-network training loop, with the ERM and
//! oracle baselines.

mod buffer;
mod train;

pub use buffer::{MatchBuffer, MatchedBatch, DEFAULT_CAPACITY, DEFAULT_THRESHOLD};
pub use train::{
    train_erm, train_fmi, train_oracle, FmiConfig, FmiObserver, FmiOutcome, Strategy, Trace, TraceRow, TrainConfig,
};
