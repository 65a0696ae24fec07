//! Experiment server, campaign runner, file formats and CLI for closed-loop
//! droplet shaping. Numerics live in [`ferroshape_core`].

pub mod protocol;
pub mod formats;
pub mod campaign;
pub mod report;
