//! Pipeline commands behind the `trackctl` binary: dataset generation,
//! trajectory preprocessing, training, sampling, evaluation and attention dumps.

pub mod config;
pub mod eval;
pub mod gen_data;
pub mod infer;
pub mod preprocess;
pub mod train;

pub use config::RunConfig;
