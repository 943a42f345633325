//! On-disk multi-view video datasets.
//!
//! ```text
//! manifest.json
//! cameras/{view}.json
//! images/{view}/{frame:06}.png
//! masks/{view}/{frame:06}.png        dynamic foreground, 0 or 255
//! scene_masks/{view}/{frame:06}.png  optional, everything that is not background
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use peel4d_core::image::{Image, Mask};
use peel4d_core::scene::Aabb;
use peel4d_core::train::TrainingSet;
use peel4d_core::{Camera, Mat3, Vec3};
use serde::{Deserialize, Serialize};

use crate::pngio;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: file not found")]
    Missing { path: PathBuf },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: invalid PNG: {message}")]
    Png { path: PathBuf, message: String },
    #[error("{path}: invalid JSON: {message}")]
    Json { path: PathBuf, message: String },
    #[error("{path}: image is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    Dimensions { path: PathBuf, got_w: usize, got_h: usize, want_w: usize, want_h: usize },
    #[error("{path}: mask is not binary, pixel ({x}, {y}) has value {value} (expected 0 or 255)")]
    NonBinaryMask { path: PathBuf, x: usize, y: usize, value: u8 },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

impl DatasetError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::NotFound {
            DatasetError::Missing { path: path.to_owned() }
        } else {
            DatasetError::Io { path: path.to_owned(), source: e }
        }
    }

    fn png(path: &Path, e: pngio::PngError) -> Self {
        match e {
            pngio::PngError::Io(e) => Self::io(path, e),
            e => DatasetError::Png { path: path.to_owned(), message: e.to_string() },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BboxJson {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub views: usize,
    pub frames: usize,
    pub fps: f64,
    pub bbox: BboxJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraJson {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
}

impl From<&Camera> for CameraJson {
    fn from(c: &Camera) -> Self {
        Self {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            r: c.rotation.to_row_major(),
            t: c.translation.to_array(),
            width: c.width,
            height: c.height,
            near: c.near,
            far: c.far,
        }
    }
}

impl CameraJson {
    pub fn to_camera(&self) -> peel4d_core::Result<Camera> {
        Camera::new(
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            Mat3::from_row_major(&self.r),
            Vec3::from_array(self.t),
            self.width,
            self.height,
            self.near,
            self.far,
        )
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub bbox: Aabb,
    pub cameras: Vec<Camera>,
    /// `images[frame][view]`
    pub images: Vec<Vec<Image>>,
    /// Dynamic-region masks, `masks[frame][view]`.
    pub masks: Vec<Vec<Mask>>,
    pub scene_masks: Option<Vec<Vec<Mask>>>,
}

impl Dataset {
    pub fn num_views(&self) -> usize {
        self.cameras.len()
    }

    pub fn num_frames(&self) -> usize {
        self.images.len()
    }

    pub fn background(&self) -> [f64; 3] {
        self.manifest.background.unwrap_or([0.0; 3])
    }

    pub fn training_set(&self) -> TrainingSet {
        TrainingSet {
            cameras: self.cameras.clone(),
            images: self.images.clone(),
            masks: self.masks.iter().map(|f| f.iter().map(Mask::as_f64).collect()).collect(),
        }
    }
}

pub fn camera_path(root: &Path, view: usize) -> PathBuf {
    root.join("cameras").join(format!("{view}.json"))
}

pub fn image_path(root: &Path, view: usize, frame: usize) -> PathBuf {
    root.join("images").join(view.to_string()).join(format!("{frame:06}.png"))
}

pub fn mask_path(root: &Path, view: usize, frame: usize) -> PathBuf {
    root.join("masks").join(view.to_string()).join(format!("{frame:06}.png"))
}

pub fn scene_mask_path(root: &Path, view: usize, frame: usize) -> PathBuf {
    root.join("scene_masks").join(view.to_string()).join(format!("{frame:06}.png"))
}

pub fn create_layout(root: &Path, manifest: &Manifest) -> Result<(), DatasetError> {
    let mut dirs = vec![root.join("cameras")];
    for v in 0..manifest.views {
        for sub in ["images", "masks", "scene_masks"] {
            dirs.push(root.join(sub).join(v.to_string()));
        }
    }
    for d in dirs {
        fs::create_dir_all(&d).map_err(|e| DatasetError::io(&d, e))?;
    }
    Ok(())
}

pub fn write_camera(root: &Path, view: usize, cam: &Camera) -> Result<(), DatasetError> {
    let p = camera_path(root, view);
    let json = serde_json::to_string_pretty(&CameraJson::from(cam)).unwrap();
    fs::write(&p, json).map_err(|e| DatasetError::io(&p, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DatasetError> {
    let text = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Json { path: path.to_owned(), message: e.to_string() })
}

fn check_dims(path: &Path, w: usize, h: usize, cam: &Camera) -> Result<(), DatasetError> {
    let (want_w, want_h) = (cam.width as usize, cam.height as usize);
    if (w, h) != (want_w, want_h) {
        return Err(DatasetError::Dimensions { path: path.to_owned(), got_w: w, got_h: h, want_w, want_h });
    }
    Ok(())
}

fn read_mask(path: &Path, cam: &Camera) -> Result<Mask, DatasetError> {
    let (w, h, data) = pngio::read_gray(path).map_err(|e| DatasetError::png(path, e))?;
    check_dims(path, w, h, cam)?;
    if let Some(i) = data.iter().position(|&v| v != 0 && v != 255) {
        return Err(DatasetError::NonBinaryMask { path: path.to_owned(), x: i % w, y: i / w, value: data[i] });
    }
    Ok(Mask { width: w, height: h, data: data.iter().map(|&v| (v >= 128) as u8).collect() })
}

/// Loads and validates a dataset. Every file is checked before returning.
pub fn load_dataset(root: &Path) -> Result<Dataset, DatasetError> {
    let manifest_path = root.join("manifest.json");
    let manifest: Manifest = read_json(&manifest_path)?;
    let invalid = |message: String| DatasetError::Invalid { path: manifest_path.clone(), message };
    if manifest.views == 0 || manifest.frames == 0 {
        return Err(invalid(format!("needs at least one view and frame, got {} and {}", manifest.views, manifest.frames)));
    }
    let bbox = Aabb::new(Vec3::from_array(manifest.bbox.min), Vec3::from_array(manifest.bbox.max)).map_err(|e| invalid(e.to_string()))?;
    let mut cameras = Vec::with_capacity(manifest.views);
    for v in 0..manifest.views {
        let p = camera_path(root, v);
        let cj: CameraJson = read_json(&p)?;
        cameras.push(cj.to_camera().map_err(|e| DatasetError::Invalid { path: p, message: e.to_string() })?);
    }
    let has_scene_masks = root.join("scene_masks").is_dir();
    let mut images = Vec::with_capacity(manifest.frames);
    let mut masks = Vec::with_capacity(manifest.frames);
    let mut scene_masks = Vec::with_capacity(manifest.frames);
    for f in 0..manifest.frames {
        let mut fi = Vec::with_capacity(manifest.views);
        let mut fm = Vec::with_capacity(manifest.views);
        let mut fs_ = Vec::with_capacity(manifest.views);
        for (v, cam) in cameras.iter().enumerate() {
            let p = image_path(root, v, f);
            let img = pngio::read_rgb(&p).map_err(|e| DatasetError::png(&p, e))?;
            check_dims(&p, img.width, img.height, cam)?;
            fi.push(img);
            fm.push(read_mask(&mask_path(root, v, f), cam)?);
            if has_scene_masks {
                fs_.push(read_mask(&scene_mask_path(root, v, f), cam)?);
            }
        }
        images.push(fi);
        masks.push(fm);
        scene_masks.push(fs_);
    }
    Ok(Dataset {
        root: root.to_owned(),
        manifest,
        bbox,
        cameras,
        images,
        masks,
        scene_masks: has_scene_masks.then_some(scene_masks),
    })
}
