//! End-to-end optimization over (frame, view) pairs.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::loss::{self, LossTerms, LossWeights, MaskLossMode};
use crate::model::{FrameForward, SceneModel, SourceViews};
use crate::nn::{EncodedImage, ImageEncoder};
use crate::optim::{AdamConfig, AdamState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_positions: f64,
    pub adam: AdamConfig,
    pub iterations: u64,
    pub weights: LossWeights,
    pub mask_mode: MaskLossMode,
    pub seed: u64,
    pub prune: PruneConfig,
}

/// Periodic removal of points whose density has collapsed. Such points
/// add nothing to the image but still take peeling slots in front of the
/// surfaces behind them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneConfig {
    /// Points with predicted density below this are removed.
    pub density_below: f64,
    /// Prune after every this many iterations; 0 disables pruning.
    pub every: u64,
    /// First iteration count at which pruning may happen.
    pub start: u64,
}

impl PruneConfig {
    pub const DISABLED: PruneConfig = PruneConfig { density_below: 0.0, every: 0, start: 0 };

    fn due(&self, iterations_done: u64) -> bool {
        self.every > 0 && iterations_done >= self.start && iterations_done % self.every == 0
    }
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self { density_below: 1e-3, every: 500, start: 1000 }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-3,
            lr_positions: 1e-5,
            adam: AdamConfig::default(),
            iterations: 5000,
            weights: LossWeights::default(),
            mask_mode: MaskLossMode::Complement,
            seed: 0,
            prune: PruneConfig::default(),
        }
    }
}

/// Multi-view video supervision: `images[frame][view]` and the matching
/// dynamic-region masks as `0.0 / 1.0` maps.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub cameras: Vec<Camera>,
    pub images: Vec<Vec<Image>>,
    pub masks: Vec<Vec<Vec<f64>>>,
}

impl TrainingSet {
    pub fn num_frames(&self) -> usize {
        self.images.len()
    }

    pub fn num_views(&self) -> usize {
        self.cameras.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub iteration: u64,
    pub frame: usize,
    pub view: usize,
    pub loss: LossTerms,
    /// Points removed by pruning after this step.
    pub pruned: usize,
}

/// Visits every (frame, view) pair once per epoch, in an order shuffled
/// from the seed.
#[derive(Debug, Clone)]
pub struct Schedule {
    frames: usize,
    views: usize,
    rng: ChaCha8Rng,
    order: Vec<u32>,
    next: usize,
}

impl Schedule {
    pub fn new(frames: usize, views: usize, seed: u64) -> Self {
        Self { frames, views, rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15)), order: Vec::new(), next: 0 }
    }

    pub fn next_pair(&mut self) -> (usize, usize) {
        if self.next == self.order.len() {
            self.order = (0..(self.frames * self.views) as u32).collect();
            self.order.shuffle(&mut self.rng);
            self.next = 0;
        }
        let p = self.order[self.next] as usize;
        self.next += 1;
        (p % self.frames, p / self.frames)
    }
}

pub struct Trainer {
    pub model: SceneModel,
    pub config: TrainConfig,
    pub iteration: u64,
    schedule: Schedule,
    adam_planes: AdamState,
    adam_heads: AdamState,
    adam_positions: Vec<AdamState>,
    /// Encoded source images per frame; only kept when encoding has no
    /// trainable parameters.
    encoded: Vec<Option<Vec<EncodedImage>>>,
}

impl Trainer {
    pub fn new(model: SceneModel, config: TrainConfig, data: &TrainingSet) -> Self {
        let adam_planes = AdamState::new(model.planes.num_params());
        let adam_heads = AdamState::new(model.heads.num_params());
        let adam_positions = model.scene.frames.iter().map(|f| AdamState::new(3 * f.len())).collect();
        let schedule = Schedule::new(data.num_frames(), data.num_views(), config.seed);
        let encoded = (0..data.num_frames()).map(|_| None).collect();
        Self { model, config, iteration: 0, schedule, adam_planes, adam_heads, adam_positions, encoded }
    }

    fn sources_for(&mut self, data: &TrainingSet, frame: usize) -> Vec<EncodedImage> {
        if let ImageEncoder::Passthrough = self.model.heads.encoder {
            if let Some(e) = &self.encoded[frame] {
                return e.clone();
            }
            let e: Vec<EncodedImage> = data.images[frame].iter().map(|im| self.model.encode(im)).collect();
            self.encoded[frame] = Some(e.clone());
            e
        } else {
            data.images[frame].iter().map(|im| self.model.encode(im)).collect()
        }
    }

    /// Forward, loss and gradients for one pair without updating anything.
    pub fn evaluate(&mut self, data: &TrainingSet, frame: usize, view: usize) -> (FrameForward, LossTerms, crate::model::ModelGrad) {
        let encoded = self.sources_for(data, frame);
        let sources = SourceViews { cameras: &data.cameras, images: &encoded };
        let target = &data.cameras[view];
        let fwd = self.model.forward(frame, target, &sources);
        let gt = data.images[frame][view].to_f64();
        let (w, h) = (target.width as usize, target.height as usize);
        let mask = Some((fwd.mask.as_slice(), data.masks[frame][view].as_slice()));
        let (terms, dc, dm) = loss::total_loss_with_grad(&fwd.image.color, &gt, w, h, mask, self.config.weights, self.config.mask_mode);
        let grad = self.model.backward(&fwd, &dc, Some(&dm), &sources);
        (fwd, terms, grad)
    }

    pub fn step(&mut self, data: &TrainingSet) -> Result<StepReport> {
        let (frame, view) = self.schedule.next_pair();
        let iteration = self.iteration;
        let (_, terms, grad) = self.evaluate(data, frame, view);
        if !terms.total.is_finite() {
            return Err(Error::NonFinite { iteration, tensor: "loss" });
        }
        if let Some(tensor) = grad.is_finite() {
            return Err(Error::NonFinite { iteration, tensor });
        }
        let cfg = self.config;
        self.adam_planes.step(self.model.planes.params_mut(), grad.planes.params().copied(), cfg.lr, &cfg.adam);
        self.adam_heads.step(self.model.heads.params_mut(), grad.heads.params().copied(), cfg.lr, &cfg.adam);
        let positions = &mut self.model.scene.frames[frame].positions;
        self.adam_positions[frame].step(
            positions.iter_mut().flat_map(|p| [&mut p.x, &mut p.y, &mut p.z]),
            grad.positions.iter().flat_map(|g| [g.x, g.y, g.z]),
            cfg.lr_positions,
            &cfg.adam,
        );
        self.model.clamp_frame(frame);
        if let Some(tensor) = self.model.is_finite() {
            return Err(Error::NonFinite { iteration, tensor });
        }
        self.iteration += 1;
        let pruned = if cfg.prune.due(self.iteration) { self.prune(cfg.prune.density_below) } else { 0 };
        Ok(StepReport { iteration, frame, view, loss: terms, pruned })
    }

    /// Removes points whose density is below `threshold` from every frame,
    /// along with their optimizer state. A frame is never emptied. Returns
    /// the number of points removed.
    pub fn prune(&mut self, threshold: f64) -> usize {
        let mut removed = 0;
        for f in 0..self.model.scene.num_frames() {
            let keep: Vec<bool> = self.model.point_attributes(f).density.iter().map(|&d| d >= threshold).collect();
            let kept = keep.iter().filter(|&&k| k).count();
            if kept == keep.len() || kept == 0 {
                continue;
            }
            removed += keep.len() - kept;
            let frame = &mut self.model.scene.frames[f];
            retain_by(&mut frame.positions, &keep, 1);
            retain_by(&mut frame.dynamic, &keep, 1);
            let adam = &mut self.adam_positions[f];
            retain_by(&mut adam.m, &keep, 3);
            retain_by(&mut adam.v, &keep, 3);
        }
        removed
    }
}

/// Keeps the `stride`-sized chunks of `v` whose flag in `keep` is set.
fn retain_by<T>(v: &mut Vec<T>, keep: &[bool], stride: usize) {
    let mut i = 0;
    v.retain(|_| {
        let k = keep[i / stride];
        i += 1;
        k
    });
}
