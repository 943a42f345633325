//! Small synthetic dataset and briefly trained checkpoint shared by the
//! integration tests.

#![allow(dead_code)]

use std::path::Path;

use peel4d::checkpoint::Checkpoint;
use peel4d::dataset::{self, Dataset};
use peel4d::pipeline::{self, Recipe, TrainOutputs};
use peel4d::synthetic::{self, SyntheticSpec};
use peel4d_core::grid::GridConfig;

pub const SMALL: SyntheticSpec = SyntheticSpec { views: 4, frames: 3, resolution: 32, seed: 11 };

pub fn small_dataset(root: &Path) -> Dataset {
    synthetic::generate(&SMALL, root).unwrap();
    dataset::load_dataset(root).unwrap()
}

/// A reduced model that trains in well under a second per iteration.
pub fn small_recipe(ds: &Dataset, iterations: u64) -> Recipe {
    let mut r = Recipe::for_dataset(ds);
    r.model.grid = GridConfig { spatial_res: 16, time_res: 3, channels: 4 };
    r.model.heads.hidden_width = 16;
    r.carve_resolution = 24;
    r.train.iterations = iterations;
    r
}

pub fn small_checkpoint(root: &Path, iterations: u64) -> Checkpoint {
    let ds = small_dataset(root);
    pipeline::train(&ds, &small_recipe(&ds, iterations), &TrainOutputs::default(), |_| {}).unwrap()
}
