//! A small decoder-only transformer language model trained from scratch on
//! word-level token streams, with greedy decoding and a finite-difference
//! gradient check.

mod checkpoint;
mod config;
mod decode;
mod error;
mod gradcheck;
mod model;
mod scalar;
mod train;
mod vocab;

pub use checkpoint::{load_checkpoint, save_checkpoint, FORMAT_VERSION};
pub use config::LmConfig;
pub use decode::{argmax, decode_greedy, decode_greedy_batch, Session};
pub use error::{LmError, Result};
pub use gradcheck::{grad_check, relative_error, tiny_config, GradCheckReport, FD_STEP};
pub use model::{Example, Layout, ModelParams};
pub use scalar::Scalar;
pub use train::{evaluate_loss, train_from, train_lm, Adam, TrainReport};
pub use vocab::Vocab;
