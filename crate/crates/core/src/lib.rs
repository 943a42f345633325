#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod appearance;
pub mod cache;
pub mod camera;
pub mod carve;
pub mod error;
pub mod grid;
pub mod image;
pub mod linalg;
mod math;
pub mod loss;
pub mod model;
pub mod nn;
pub mod optim;
pub mod par;
pub mod render;
pub mod scene;
pub mod sh;
pub mod train;

pub use camera::{Camera, Projection, RadiusLimits};
pub use error::{Error, Result};
pub use linalg::{Mat3, Vec3};
