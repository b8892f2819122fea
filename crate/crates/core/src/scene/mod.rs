//! Point clouds, pinhole cameras, ground-truth views and their file formats.

mod camera;
mod image;
mod ply;
mod synth;

pub use camera::{Camera, Projection};
pub use image::{read_png, write_gray_png, write_png, Image};
pub use ply::{load_ply, read_ply, save_ply, write_ply, PlyFormat};
pub use synth::{add_point_noise, make_synthetic_scene, paint_reference, SceneKind, SyntheticScene};

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Mat3, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Vec<[f32; 3]>,
    colors: Option<Vec<[f32; 3]>>,
}

impl PointCloud {
    pub fn new(positions: Vec<[f32; 3]>, colors: Option<Vec<[f32; 3]>>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::invalid("point cloud must contain at least one point"));
        }
        if let Some(i) = positions
            .iter()
            .position(|p| p.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::invalid(format!("point {i} has a non-finite coordinate")));
        }
        if let Some(c) = &colors {
            if c.len() != positions.len() {
                return Err(Error::invalid(format!(
                    "{} colors for {} points",
                    c.len(),
                    positions.len()
                )));
            }
            if let Some(i) = c
                .iter()
                .position(|rgb| rgb.iter().any(|v| !(0.0..=1.0).contains(v)))
            {
                return Err(Error::invalid(format!("color {i} outside [0, 1]")));
            }
        }
        Ok(PointCloud { positions, colors })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[f32; 3]] {
        &self.positions
    }

    pub fn colors(&self) -> Option<&[[f32; 3]]> {
        self.colors.as_deref()
    }

    pub fn position(&self, i: usize) -> Vec3 {
        Vec3::from_f32(self.positions[i])
    }

    /// Centroid and radius of a sphere enclosing every point.
    pub fn bounding_sphere(&self) -> (Vec3, f64) {
        let n = self.len() as f64;
        let center = self
            .positions
            .iter()
            .fold(Vec3::ZERO, |acc, p| acc + Vec3::from_f32(*p))
            * (1.0 / n);
        let radius = self
            .positions
            .iter()
            .map(|p| (Vec3::from_f32(*p) - center).norm())
            .fold(0.0, f64::max);
        (center, radius)
    }

    /// Order-sensitive FNV-1a fingerprint of positions and colors.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |v: f32| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for p in &self.positions {
            p.iter().for_each(|v| eat(*v));
        }
        if let Some(c) = &self.colors {
            for rgb in c {
                rgb.iter().for_each(|v| eat(*v));
            }
        }
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub camera: Camera,
    pub image: Image,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ViewSet {
    views: Vec<View>,
}

impl ViewSet {
    pub fn new(views: Vec<View>) -> Result<Self> {
        for (i, v) in views.iter().enumerate() {
            if v.image.width != v.camera.width || v.image.height != v.camera.height {
                return Err(Error::shape(format!(
                    "view {i}: image {}x{} does not match camera {}x{}",
                    v.image.width, v.image.height, v.camera.width, v.camera.height
                )));
            }
        }
        Ok(ViewSet { views })
    }

    pub fn views(&self) -> &[View] {
        &self.views
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&View> {
        self.views.get(i)
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.views.len())
            .filter(|&i| self.views[i].split == split)
            .collect()
    }

    pub fn cameras(&self) -> Vec<Camera> {
        self.views.iter().map(|v| v.camera.clone()).collect()
    }
}

/// One entry of `cameras.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Vec<f64>,
    pub translation: Vec<f64>,
    pub image_path: String,
    #[serde(default = "default_split")]
    pub split: Split,
}

fn default_split() -> Split {
    Split::Train
}

impl CameraRecord {
    pub fn from_camera(cam: &Camera, image_path: String, split: Split) -> Self {
        let t = cam.translation();
        CameraRecord {
            width: cam.width,
            height: cam.height,
            focal: cam.focal,
            cx: cam.cx,
            cy: cam.cy,
            rotation: cam.rotation().row_major().to_vec(),
            translation: vec![t.x, t.y, t.z],
            image_path,
            split,
        }
    }

    pub fn to_camera(&self) -> Result<Camera> {
        let rot = Mat3::from_row_major(&self.rotation)
            .ok_or_else(|| Error::invalid("rotation must have 9 entries"))?;
        if self.translation.len() != 3 {
            return Err(Error::invalid("translation must have 3 entries"));
        }
        let t = Vec3::new(self.translation[0], self.translation[1], self.translation[2]);
        Camera::new(self.width, self.height, self.focal, self.cx, self.cy, rot, t)
    }
}

/// Writes `cloud.ply`, `cameras.json` and `gt/NNN.png` into `dir`.
pub fn save_scene(dir: &Path, cloud: &PointCloud, views: &ViewSet) -> Result<()> {
    fs::create_dir_all(dir.join("gt"))?;
    save_ply(&dir.join("cloud.ply"), cloud, PlyFormat::BinaryLittleEndian)?;
    let mut records = Vec::with_capacity(views.len());
    for (i, v) in views.views().iter().enumerate() {
        let rel = format!("gt/{i:03}.png");
        write_png(&dir.join(&rel), &v.image)?;
        records.push(CameraRecord::from_camera(&v.camera, rel, v.split));
    }
    fs::write(
        dir.join("cameras.json"),
        serde_json::to_string_pretty(&records)?,
    )?;
    Ok(())
}

/// Inverse of [`save_scene`].
pub fn load_scene(dir: &Path) -> Result<(PointCloud, ViewSet)> {
    let cloud = load_ply(&dir.join("cloud.ply"))?;
    let views = load_views(&dir.join("cameras.json"))?;
    Ok((cloud, views))
}

pub fn load_views(path: &Path) -> Result<ViewSet> {
    let records: Vec<CameraRecord> = serde_json::from_slice(&fs::read(path)?)?;
    let base: PathBuf = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut views = Vec::with_capacity(records.len());
    for r in &records {
        let camera = r.to_camera()?;
        let image = read_png(&base.join(&r.image_path))?;
        views.push(View {
            camera,
            image,
            split: r.split,
        });
    }
    ViewSet::new(views)
}
