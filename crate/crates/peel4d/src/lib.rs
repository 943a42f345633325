//! Dataset IO, training, cached rendering and the frame-streaming service
//! built on `peel4d-core`.

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod frames;
pub mod pipeline;
pub mod pngio;
pub mod prefetch;
pub mod protocol;
pub mod serve;
pub mod synthetic;
