//! Numerical core for closed-loop droplet shaping on a ferrofluid interface.
//!
//! Everything here is pure computation over owned values and builds without
//! `std` (it needs `alloc`). IO, the experiment protocol and the CLI live in
//! the `ferroshape` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod acquisition;
pub mod actuation;
pub mod codec;
pub mod design;
pub mod gp;
pub mod linalg;
pub mod plant;
pub mod rng;

pub use actuation::{Actuation, SolenoidMask, SOLENOIDS};
pub use codec::{
    encode_contour, generate_target, radii_error_mm, rmse_objective, CodecError, Contour, Point,
    SegmentMask, ShapeDescriptor, TargetKind, TargetSpec, SEGMENTS,
};
