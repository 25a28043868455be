pub mod check;
pub mod config;
pub mod dist;
pub mod eem;
pub mod experiment;
pub mod error;
pub mod io;
pub mod lam;
pub mod lcm;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod semantics;
pub mod synth;
pub mod tensor;
