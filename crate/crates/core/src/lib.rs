pub mod cart;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod linalg;
pub mod operator;
pub mod rng;
pub mod spectral;
pub mod mlp;
pub mod distill;
pub mod metrics;
pub mod model_io;
pub mod experiment;
