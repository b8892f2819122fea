//! Procedural fixture scenes with reference-painted ground truth.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::kraster::screen_radius;
use crate::scene::{Camera, Image, PointCloud, Split, View, ViewSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneKind {
    TexturedSphere,
    CheckerCube,
    TwoPlane,
}

impl SceneKind {
    pub const ALL: [SceneKind; 3] = [
        SceneKind::TexturedSphere,
        SceneKind::CheckerCube,
        SceneKind::TwoPlane,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SceneKind::TexturedSphere => "textured-sphere",
            SceneKind::CheckerCube => "checker-cube",
            SceneKind::TwoPlane => "two-plane",
        }
    }

    fn surface_area(self) -> f64 {
        match self {
            SceneKind::TexturedSphere => 4.0 * PI * SPHERE_RADIUS * SPHERE_RADIUS,
            SceneKind::CheckerCube => 6.0 * (2.0 * CUBE_HALF).powi(2),
            SceneKind::TwoPlane => (2.0 * FRONT_HALF).powi(2) + (2.0 * BACK_HALF).powi(2),
        }
    }

    /// Splat radius giving roughly hole-free coverage for `n_points` samples.
    pub fn default_tau(self, n_points: usize) -> f64 {
        (self.surface_area() / n_points.max(1) as f64).sqrt()
    }
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SceneKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SceneKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown scene kind '{s}'")))
    }
}

const SPHERE_RADIUS: f64 = 1.0;
const CUBE_HALF: f64 = 0.7;
const FRONT_HALF: f64 = 0.8;
const BACK_HALF: f64 = 0.6;
const FRONT_Z: f64 = 0.4;
const BACK_Z: f64 = -0.4;
const ORBIT_RADIUS: f64 = 3.0;
const FOCAL_PER_PIXEL: f64 = 1.2;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub kind: SceneKind,
    pub cloud: PointCloud,
    pub views: ViewSet,
    /// Splat radius used by the reference painter.
    pub tau: f64,
}

fn quantize_color(rgb: [f64; 3]) -> [f32; 3] {
    rgb.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as f32 / 255.0)
}

fn checker(a: f64, b: f64, cells: f64) -> bool {
    ((a * cells).floor() as i64 + (b * cells).floor() as i64).rem_euclid(2) == 0
}

fn sphere_color(p: Vec3) -> [f64; 3] {
    let theta = p.z.clamp(-1.0, 1.0).acos();
    let phi = p.y.atan2(p.x);
    let check = checker(theta / PI, (phi + PI) / (2.0 * PI), 6.0);
    [
        0.5 + 0.35 * (4.0 * phi).sin(),
        0.5 + 0.35 * (6.0 * theta).cos(),
        if check { 0.85 } else { 0.15 },
    ]
}

fn cube_color(p: Vec3, face: usize) -> [f64; 3] {
    let tint = [
        [0.9, 0.3, 0.3],
        [0.3, 0.9, 0.3],
        [0.3, 0.3, 0.9],
        [0.9, 0.9, 0.3],
        [0.3, 0.9, 0.9],
        [0.9, 0.3, 0.9],
    ][face];
    let (a, b) = match face / 2 {
        0 => (p.y, p.z),
        1 => (p.x, p.z),
        _ => (p.x, p.y),
    };
    let s = if checker((a + CUBE_HALF) / (2.0 * CUBE_HALF), (b + CUBE_HALF) / (2.0 * CUBE_HALF), 4.0) {
        1.0
    } else {
        0.35
    };
    tint.map(|t| t * s)
}

fn plane_color(p: Vec3, front: bool) -> [f64; 3] {
    if front {
        let on = checker((p.x + FRONT_HALF) / (2.0 * FRONT_HALF), (p.y + FRONT_HALF) / (2.0 * FRONT_HALF), 6.0);
        if on {
            [0.95, 0.55, 0.2]
        } else {
            [0.55, 0.15, 0.1]
        }
    } else {
        let stripe = (p.x * 12.0).sin() > 0.0;
        if stripe {
            [0.2, 0.4, 0.95]
        } else {
            [0.1, 0.8, 0.7]
        }
    }
}

fn sample_surface(kind: SceneKind, rng: &mut ChaCha8Rng) -> (Vec3, [f64; 3]) {
    match kind {
        SceneKind::TexturedSphere => loop {
            let v = Vec3::new(
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            );
            let n = v.norm();
            if n > 1e-9 {
                let p = v * (SPHERE_RADIUS / n);
                return (p, sphere_color(p));
            }
        },
        SceneKind::CheckerCube => {
            let face = rng.random_range(0..6usize);
            let a = rng.random_range(-CUBE_HALF..CUBE_HALF);
            let b = rng.random_range(-CUBE_HALF..CUBE_HALF);
            let s = if face % 2 == 0 { CUBE_HALF } else { -CUBE_HALF };
            let p = match face / 2 {
                0 => Vec3::new(s, a, b),
                1 => Vec3::new(a, s, b),
                _ => Vec3::new(a, b, s),
            };
            (p, cube_color(p, face))
        }
        SceneKind::TwoPlane => {
            let front_area = (2.0 * FRONT_HALF).powi(2);
            let front = rng.random::<f64>() * kind.surface_area() < front_area;
            let (half, z) = if front {
                (FRONT_HALF, FRONT_Z)
            } else {
                (BACK_HALF, BACK_Z)
            };
            let p = Vec3::new(
                rng.random_range(-half..half),
                rng.random_range(-half..half),
                z,
            );
            (p, plane_color(p, front))
        }
    }
}

fn orbit_camera(kind: SceneKind, i: usize, n: usize, res: usize) -> Result<Camera> {
    let t = i as f64 / n as f64;
    let (azimuth, elevation) = match kind {
        // Frontal arc; view 0 is head-on.
        SceneKind::TwoPlane => {
            let az = if i == 0 {
                0.0
            } else {
                0.6 * ((i as f64 / (n - 1).max(1) as f64) * 2.0 - 1.0)
            };
            let el = if i == 0 { 0.0 } else { 0.15 * (2.0 * PI * t).sin() };
            (az, el)
        }
        _ => (2.0 * PI * t, 0.35 * (4.0 * PI * t).sin()),
    };
    let eye = Vec3::new(
        elevation.cos() * azimuth.sin(),
        elevation.sin(),
        elevation.cos() * azimuth.cos(),
    ) * ORBIT_RADIUS;
    Camera::look_at(
        eye,
        Vec3::ZERO,
        Vec3::new(0.0, 1.0, 0.0),
        res,
        res,
        FOCAL_PER_PIXEL * res as f64,
    )
}

/// Brute-force reference painter: every pixel takes the color of the nearest
/// point whose splat disk covers its center; uncovered pixels stay black.
pub fn paint_reference(cloud: &PointCloud, camera: &Camera, tau: f64) -> Image {
    let (w, h) = (camera.width, camera.height);
    let mut best: Vec<(f64, usize)> = vec![(f64::INFINITY, usize::MAX); w * h];
    for i in 0..cloud.len() {
        let pr = camera.project(cloud.position(i));
        if !pr.visible {
            continue;
        }
        let r = screen_radius(tau, camera.focal, pr.dist);
        let x0 = (pr.u - r - 0.5).ceil().max(0.0);
        let x1 = (pr.u + r - 0.5).floor().min(w as f64 - 1.0);
        let y0 = (pr.v - r - 0.5).ceil().max(0.0);
        let y1 = (pr.v + r - 0.5).floor().min(h as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        for py in y0 as usize..=y1 as usize {
            for px in x0 as usize..=x1 as usize {
                let dx = px as f64 + 0.5 - pr.u;
                let dy = py as f64 + 0.5 - pr.v;
                if dx * dx + dy * dy > r * r {
                    continue;
                }
                let slot = &mut best[py * w + px];
                if (pr.dist, i) < *slot {
                    *slot = (pr.dist, i);
                }
            }
        }
    }
    let mut img = Image::black(w, h);
    for py in 0..h {
        for px in 0..w {
            let (_, i) = best[py * w + px];
            if i != usize::MAX {
                let rgb = cloud.colors().map_or([1.0; 3], |c| c[i]);
                img.set_pixel(px, py, rgb);
            }
        }
    }
    img
}

pub fn make_synthetic_scene(
    kind: SceneKind,
    n_points: usize,
    n_views: usize,
    resolution: usize,
    seed: u64,
) -> Result<SyntheticScene> {
    if n_points < 100 {
        return Err(Error::invalid("synthetic scenes need at least 100 points"));
    }
    if n_views < 2 {
        return Err(Error::invalid("synthetic scenes need at least 2 views"));
    }
    if resolution == 0 {
        return Err(Error::invalid("resolution must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = Vec::with_capacity(n_points);
    let mut colors = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let (p, c) = sample_surface(kind, &mut rng);
        positions.push([p.x as f32, p.y as f32, p.z as f32]);
        colors.push(quantize_color(c));
    }
    let cloud = PointCloud::new(positions, Some(colors))?;
    let tau = kind.default_tau(n_points);
    let mut any_test = false;
    let mut views = Vec::with_capacity(n_views);
    for i in 0..n_views {
        let camera = orbit_camera(kind, i, n_views, resolution)?;
        let image = paint_reference(&cloud, &camera, tau);
        let split = if (i + 1) % 4 == 0 {
            any_test = true;
            Split::Test
        } else {
            Split::Train
        };
        views.push(View {
            camera,
            image,
            split,
        });
    }
    if !any_test {
        views.last_mut().unwrap().split = Split::Test;
    }
    Ok(SyntheticScene {
        kind,
        cloud,
        views: ViewSet::new(views)?,
        tau,
    })
}

/// Gaussian position jitter plus Bernoulli point dropout, deterministic in `seed`.
///
/// Always keeps at least one point.
pub fn add_point_noise(cloud: &PointCloud, sigma: f64, dropout: f64, seed: u64) -> Result<PointCloud> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("sigma must be non-negative"));
    }
    if !(0.0..1.0).contains(&dropout) {
        return Err(Error::invalid("dropout must lie in [0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = Vec::with_capacity(cloud.len());
    let mut colors = cloud.colors().map(|_| Vec::with_capacity(cloud.len()));
    for (i, p) in cloud.positions().iter().enumerate() {
        let drop = rng.random::<f64>() < dropout;
        let jitter: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        if drop {
            continue;
        }
        let q = if sigma == 0.0 {
            *p
        } else {
            [
                (p[0] as f64 + sigma * jitter[0]) as f32,
                (p[1] as f64 + sigma * jitter[1]) as f32,
                (p[2] as f64 + sigma * jitter[2]) as f32,
            ]
        };
        positions.push(q);
        if let (Some(out), Some(src)) = (colors.as_mut(), cloud.colors()) {
            out.push(src[i]);
        }
    }
    if positions.is_empty() {
        positions.push(cloud.positions()[0]);
        if let (Some(out), Some(src)) = (colors.as_mut(), cloud.colors()) {
            out.push(src[0]);
        }
    }
    PointCloud::new(positions, colors)
}
