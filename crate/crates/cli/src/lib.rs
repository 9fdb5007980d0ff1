//! Library surface of the command-line driver, exposed so integration
//! tests can call commands in-process.

pub mod commands;
pub mod config;

pub use commands::{cmd_eval, cmd_generate, cmd_predict, cmd_train, load_model_set};
pub use config::{CorpusSource, ExperimentConfig, KindTrain};
