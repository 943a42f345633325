//! Visual-hull space carving from silhouette masks.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::Mask;
use crate::linalg::Vec3;
use crate::par;
use crate::scene::Aabb;

pub const DEFAULT_CARVE_RESOLUTION: usize = 64;
pub const MIN_CARVE_RESOLUTION: usize = 8;

/// Occupancy over a regular grid of voxels spanning a bounding box,
/// x fastest, then y, then z.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub bbox: Aabb,
    pub res: usize,
    pub occupied: Vec<bool>,
}

impl VoxelGrid {
    pub fn full(bbox: Aabb, res: usize) -> Self {
        Self { bbox, res, occupied: vec![true; res * res * res] }
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.res + j) * self.res + i
    }

    #[inline]
    pub fn center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let e = self.bbox.extent();
        let n = self.res as f64;
        Vec3::new(
            self.bbox.min.x + (i as f64 + 0.5) * e.x / n,
            self.bbox.min.y + (j as f64 + 0.5) * e.y / n,
            self.bbox.min.z + (k as f64 + 0.5) * e.z / n,
        )
    }

    #[inline]
    pub fn get(&self, i: isize, j: isize, k: isize) -> bool {
        let n = self.res as isize;
        (0..n).contains(&i) && (0..n).contains(&j) && (0..n).contains(&k) && self.occupied[self.index(i as usize, j as usize, k as usize)]
    }

    pub fn count(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }

    /// Occupied voxels with at least one empty (or out-of-grid) 6-neighbor.
    pub fn is_surface(&self, i: usize, j: usize, k: usize) -> bool {
        let (i, j, k) = (i as isize, j as isize, k as isize);
        self.get(i, j, k)
            && [(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)]
                .iter()
                .any(|&(di, dj, dk)| !self.get(i + di, j + dj, k + dk))
    }

    /// Centers of surface voxels in index order.
    pub fn surface_points(&self) -> Vec<Vec3> {
        let n = self.res;
        let mut out = Vec::new();
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    if self.is_surface(i, j, k) {
                        out.push(self.center(i, j, k));
                    }
                }
            }
        }
        out
    }
}

/// Keeps voxels whose centers land inside the mask of every view that sees
/// them; voxels outside a view's frustum are not constrained by it.
pub fn carve_volume(masks: &[Mask], cameras: &[Camera], bbox: &Aabb, res: usize) -> Result<VoxelGrid> {
    if cameras.len() < 2 {
        return Err(Error::CarveTooFewViews(cameras.len()));
    }
    if masks.len() != cameras.len() {
        return Err(Error::Shape(format!("{} masks for {} cameras", masks.len(), cameras.len())));
    }
    if res < MIN_CARVE_RESOLUTION {
        return Err(Error::Shape(format!("carve resolution {res} below {MIN_CARVE_RESOLUTION}")));
    }
    for (v, (m, c)) in masks.iter().zip(cameras).enumerate() {
        if m.width != c.width as usize || m.height != c.height as usize {
            return Err(Error::Shape(format!("mask {v} is {}x{}, camera is {}x{}", m.width, m.height, c.width, c.height)));
        }
    }
    let mut grid = VoxelGrid::full(*bbox, res);
    let probe = grid.clone();
    for (view, (mask, cam)) in masks.iter().zip(cameras).enumerate() {
        par::for_each_chunk_mut(&mut grid.occupied, res * res, |k, slab| {
            for j in 0..res {
                for i in 0..res {
                    let o = &mut slab[j * res + i];
                    if !*o {
                        continue;
                    }
                    let p = cam.project(probe.center(i, j, k));
                    if cam.is_visible(&p, 0.0) && !mask.contains_point(p.u, p.v) {
                        *o = false;
                    }
                }
            }
        });
        if grid.count() == 0 {
            return Err(Error::CarveEmpty { view });
        }
    }
    Ok(grid)
}

/// Surface voxel centers of the visual hull.
pub fn space_carve(masks: &[Mask], cameras: &[Camera], bbox: &Aabb, res: usize) -> Result<Vec<Vec3>> {
    Ok(carve_volume(masks, cameras, bbox, res)?.surface_points())
}
