//! Frame-time measurements of the cached render path.

use std::time::Instant;

use peel4d_core::cache::{CachedRenderer, FrameCache};
use peel4d_core::Camera;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionReport {
    pub width: u32,
    pub height: u32,
    pub repetitions: usize,
    pub total_seconds: f64,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub fps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub frame_index: usize,
    pub num_points: usize,
    pub k: usize,
    pub precision: String,
    pub threads: usize,
    pub resolutions: Vec<ResolutionReport>,
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Times `repetitions` renders cycling through `cameras`, after one untimed
/// warm-up pass over every camera.
pub fn time_renders(cache: &FrameCache, cameras: &[Camera], repetitions: usize, k: usize) -> ResolutionReport {
    assert!(!cameras.is_empty(), "benchmark needs at least one camera");
    let mut renderer = CachedRenderer::new();
    for c in cameras {
        renderer.render(cache, c, k);
    }
    let mut samples = Vec::with_capacity(repetitions);
    let start = Instant::now();
    for i in 0..repetitions {
        let t = Instant::now();
        renderer.render(cache, &cameras[i % cameras.len()], k);
        samples.push(t.elapsed().as_secs_f64());
    }
    let total = start.elapsed().as_secs_f64();
    samples.sort_by(f64::total_cmp);
    let mean = samples.iter().sum::<f64>() / repetitions.max(1) as f64;
    ResolutionReport {
        width: cameras[0].width,
        height: cameras[0].height,
        repetitions,
        total_seconds: total,
        mean_ms: mean * 1e3,
        p50_ms: percentile(&samples, 50.0) * 1e3,
        p99_ms: percentile(&samples, 99.0) * 1e3,
        fps: if total > 0.0 { repetitions as f64 / total } else { f64::INFINITY },
    }
}

/// Runs [`time_renders`] at every resolution, rescaling `cameras`.
pub fn benchmark(cache: &FrameCache, cameras: &[Camera], resolutions: &[u32], repetitions: usize, k: usize) -> BenchmarkReport {
    let resolutions = resolutions
        .iter()
        .map(|&r| {
            let cams: Vec<Camera> = cameras.iter().map(|c| c.with_resolution(r, r)).collect();
            time_renders(cache, &cams, repetitions, k)
        })
        .collect();
    BenchmarkReport {
        frame_index: cache.frame_index,
        num_points: cache.num_points,
        k,
        precision: format!("{:?}", cache.precision),
        threads: rayon::current_num_threads(),
        resolutions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        let s: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&s, 50.0), 50.0);
        assert_eq!(percentile(&s, 99.0), 99.0);
        assert_eq!(percentile(&[3.0], 99.0), 3.0);
    }
}
