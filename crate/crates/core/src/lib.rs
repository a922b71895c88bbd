pub mod benchmark;
pub mod config;
pub mod error;
pub mod gem;
pub mod generator;
pub mod matrix_ops;
pub mod metrics;
pub mod model_selection;
pub mod responsibilities;
pub mod rng;
pub mod shape;
pub mod simdata;
pub mod sparse_kmedian;
