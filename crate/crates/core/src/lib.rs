pub mod analysis;
pub mod config;
pub mod detector;
pub mod error;
pub mod grid;
pub mod io;
pub mod pipeline;
pub mod pm;
pub mod rng;
pub mod synth;
