//! Dataset → initial point clouds → trained model.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use peel4d_core::carve::{carve_volume, DEFAULT_CARVE_RESOLUTION};
use peel4d_core::image::Mask;
use peel4d_core::model::{ModelConfig, SceneModel};
use peel4d_core::scene::{PointCloudFrame, SceneSequence};
use peel4d_core::train::{StepReport, TrainConfig, Trainer};
use peel4d_core::Vec3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checkpoint::{Checkpoint, SourceSet};
use crate::dataset::Dataset;

/// Everything that determines a training run besides the data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Recipe {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub carve_resolution: usize,
    /// Initial splat radius as a multiple of the carving voxel size.
    pub initial_radius_voxels: f64,
    pub seed: u64,
}

impl Recipe {
    pub fn for_dataset(ds: &Dataset) -> Self {
        let mut model = ModelConfig::for_frames(ds.num_frames());
        model.background = ds.background();
        Self {
            model,
            train: TrainConfig::default(),
            carve_resolution: DEFAULT_CARVE_RESOLUTION,
            initial_radius_voxels: 1.0,
            seed: 0,
        }
    }
}

fn or_masks(per_frame: impl Iterator<Item = Mask>) -> Option<Mask> {
    per_frame.reduce(|mut a, b| {
        a.data.iter_mut().zip(&b.data).for_each(|(x, y)| *x |= y);
        a
    })
}

/// Static points from the scene masks minus the dynamic masks, united over
/// frames; dynamic points carved per frame from the dynamic masks.
pub fn initial_scene(ds: &Dataset, res: usize) -> peel4d_core::Result<SceneSequence> {
    let static_points = match &ds.scene_masks {
        Some(scene) => {
            let masks: Vec<Mask> = (0..ds.num_views())
                .map(|v| {
                    or_masks((0..ds.num_frames()).map(|f| {
                        let mut m = scene[f][v].clone();
                        m.data.iter_mut().zip(&ds.masks[f][v].data).for_each(|(s, &d)| *s &= 1 - d);
                        m
                    }))
                    .unwrap()
                })
                .collect();
            carve_volume(&masks, &ds.cameras, &ds.bbox, res)?.surface_points()
        }
        None => Vec::new(),
    };
    let mut frames = Vec::with_capacity(ds.num_frames());
    for f in 0..ds.num_frames() {
        let dynamic = carve_volume(&ds.masks[f], &ds.cameras, &ds.bbox, res)?.surface_points();
        let mut positions: Vec<Vec3> = static_points.clone();
        let mut flags = vec![false; positions.len()];
        positions.extend(&dynamic);
        flags.extend(std::iter::repeat_n(true, dynamic.len()));
        frames.push(PointCloudFrame::new(f, positions, flags)?);
    }
    SceneSequence::new(ds.bbox, frames)
}

pub fn build_model(ds: &Dataset, recipe: &Recipe) -> peel4d_core::Result<SceneModel> {
    let scene = initial_scene(ds, recipe.carve_resolution)?;
    let e = ds.bbox.extent();
    let voxel = e.x.max(e.y).max(e.z) / recipe.carve_resolution as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let mut model = SceneModel::new(scene, recipe.model, &mut rng);
    model.heads.set_initial_radius(recipe.initial_radius_voxels * voxel);
    Ok(model)
}

#[derive(Debug, Serialize)]
pub struct MetricsRecord {
    pub iter: u64,
    #[serde(rename = "L_img")]
    pub l_img: f64,
    #[serde(rename = "L_lpips")]
    pub l_lpips: f64,
    #[serde(rename = "L_msk")]
    pub l_msk: f64,
    #[serde(rename = "L_total")]
    pub l_total: f64,
    pub wallclock_ms: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    pub metrics: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Also save the checkpoint every this many iterations.
    pub checkpoint_every: Option<u64>,
}

pub fn sources_of(ds: &Dataset) -> SourceSet {
    SourceSet { cameras: ds.cameras.clone(), images: ds.images.clone() }
}

pub fn train(
    ds: &Dataset,
    recipe: &Recipe,
    outputs: &TrainOutputs,
    mut on_step: impl FnMut(&StepReport),
) -> anyhow::Result<Checkpoint> {
    let model = build_model(ds, recipe)?;
    let data = ds.training_set();
    let mut trainer = Trainer::new(model, recipe.train, &data);
    let mut metrics = match &outputs.metrics {
        Some(p) => Some(BufWriter::new(File::create(p).map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))?)),
        None => None,
    };
    let sources = sources_of(ds);
    let start = Instant::now();
    let snapshot = |trainer: &Trainer| Checkpoint { model: trainer.model.clone(), sources: sources.clone(), iteration: trainer.iteration };
    for _ in 0..recipe.train.iterations {
        let report = trainer.step(&data)?;
        if let Some(m) = &mut metrics {
            let rec = MetricsRecord {
                iter: report.iteration,
                l_img: report.loss.img,
                l_lpips: report.loss.lpips,
                l_msk: report.loss.msk,
                l_total: report.loss.total,
                wallclock_ms: start.elapsed().as_secs_f64() * 1e3,
            };
            serde_json::to_writer(&mut *m, &rec)?;
            m.write_all(b"\n")?;
        }
        on_step(&report);
        if let (Some(every), Some(path)) = (outputs.checkpoint_every, &outputs.checkpoint) {
            if every > 0 && trainer.iteration % every == 0 {
                snapshot(&trainer).save(path)?;
            }
        }
    }
    if let Some(m) = &mut metrics {
        m.flush()?;
    }
    let ckpt = snapshot(&trainer);
    if let Some(path) = &outputs.checkpoint {
        ckpt.save(path)?;
    }
    Ok(ckpt)
}
