//! Queried points from K-deep buffers, redundancy pruning, and the scatter of
//! per-slot features back into K pixel-wise feature maps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::kraster::{KZBuffer, OccupancyMap};
use crate::par;
use crate::radiance::VolumeSamples;
use crate::real::Real;
use crate::scene::Camera;

/// How a pruned point picks its single direction `d_m` among the rays of the
/// pixels it occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy", content = "seed")]
pub enum DmPolicy {
    /// Ray of the smallest occupied pixel id.
    Minimum,
    /// Ray of a uniformly chosen occupied pixel; deterministic per (seed, point).
    Random(u64),
    /// Normalized mean of the occupied rays; falls back to `Minimum` when the
    /// mean vanishes.
    Average,
}

impl DmPolicy {
    pub fn name(self) -> &'static str {
        match self {
            DmPolicy::Minimum => "minimum",
            DmPolicy::Random(_) => "random",
            DmPolicy::Average => "average",
        }
    }
}

/// One retained fragment of the buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub layer: usize,
    pub pixel: usize,
    /// Row of the query feeding this slot.
    pub query: usize,
    /// Row of [`QuerySet::pixel_dirs`] holding this slot's `d_j`.
    pub dir: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    pub origin: Vec3,
    pub width: usize,
    pub height: usize,
    pub k: usize,
    pub pruned: bool,
    /// Per query: position `o + z·d`, direction and camera distance.
    pub xs: Vec<Vec3>,
    pub ds: Vec<Vec3>,
    pub z: Vec<f64>,
    pub query_point: Vec<u32>,
    /// Ordered by pixel, then layer.
    pub slots: Vec<Slot>,
    /// Distinct occupied pixels (ascending) and their ray directions.
    pub pixel_ids: Vec<usize>,
    pub pixel_dirs: Vec<Vec3>,
}

impl QuerySet {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn slot_queries(&self) -> Vec<usize> {
        self.slots.iter().map(|s| s.query).collect()
    }

    pub fn slot_dirs(&self) -> Vec<usize> {
        self.slots.iter().map(|s| s.dir).collect()
    }

    /// Flat `layer · H · W + pixel` targets, one per slot.
    pub fn slot_targets(&self) -> Vec<usize> {
        let hw = self.width * self.height;
        self.slots.iter().map(|s| s.layer * hw + s.pixel).collect()
    }

    /// Occupied pixels with each pixel's slots as one ascending-depth sample
    /// run; needs an unpruned set so every slot has its own query.
    pub fn volume_samples(&self, far: f64) -> Result<VolumeSamples> {
        if self.pruned {
            return Err(Error::invalid("volume samples need per-slot queries"));
        }
        let mut pixels = Vec::with_capacity(self.pixel_ids.len());
        let mut start = 0;
        while start < self.slots.len() {
            let px = self.slots[start].pixel;
            let mut end = start;
            while end < self.slots.len() && self.slots[end].pixel == px {
                end += 1;
            }
            pixels.push((start, end - start));
            start = end;
        }
        Ok(VolumeSamples {
            xs: self.xs.clone(),
            ds: self.ds.clone(),
            z: self.z.clone(),
            far: vec![far; pixels.len()],
            pixels,
        })
    }
}

/// `o + z·d`.
pub fn reconstruct_x(o: Vec3, z: f64, d: Vec3) -> Vec3 {
    o + d * z
}

fn point_rng_index(seed: u64, point: u32, n: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (point as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.random_range(0..n)
}

/// Builds queried points for one view. With `prune`, one query per visible
/// point (its `d_m` chosen by `policy`); without, one query per slot.
pub fn build_queries(
    buf: &KZBuffer,
    occ: &OccupancyMap,
    camera: &Camera,
    prune: bool,
    policy: DmPolicy,
) -> Result<QuerySet> {
    if buf.width() != camera.width || buf.height() != camera.height {
        return Err(Error::shape("build_queries: buffer and camera sizes differ"));
    }
    if !occ.consistent_with(buf) {
        return Err(Error::invalid("build_queries: occupancy map does not match the buffer"));
    }
    let w = buf.width();
    let o = camera.origin();
    let pixel_ids: Vec<usize> = (0..buf.pixel_count()).filter(|&p| !buf.slot(p).is_empty()).collect();
    let pixel_dirs: Vec<Vec3> = par::map_slice(&pixel_ids, |&p| {
        camera.ray_direction(p % w, p / w).expect("pixel inside the image")
    });
    let dir_of = |pixel: usize| pixel_ids.binary_search(&pixel).expect("occupied pixel");

    let mut q = QuerySet {
        origin: o,
        width: w,
        height: buf.height(),
        k: buf.k(),
        pruned: prune,
        xs: Vec::new(),
        ds: Vec::new(),
        z: Vec::new(),
        query_point: Vec::new(),
        slots: Vec::with_capacity(buf.total_fragments()),
        pixel_ids: Vec::new(),
        pixel_dirs: Vec::new(),
    };

    if prune {
        let per_point: Vec<(Vec3, f64)> = par::map_range(occ.len(), |i| {
            let pid = occ.point_ids()[i];
            let pixels = occ.pixels_at(i);
            let ray = |px: u32| pixel_dirs[dir_of(px as usize)];
            let min_dir = ray(pixels[0]);
            let d = match policy {
                DmPolicy::Minimum => min_dir,
                DmPolicy::Random(seed) => ray(pixels[point_rng_index(seed, pid, pixels.len())]),
                DmPolicy::Average => {
                    let sum = pixels.iter().fold(Vec3::ZERO, |acc, &px| acc + ray(px));
                    if sum.norm() > 1e-12 {
                        sum.normalized()
                    } else {
                        min_dir
                    }
                }
            };
            let frag = buf.slot(pixels[0] as usize).iter().find(|f| f.point_id == pid).expect("consistent occupancy");
            (d, frag.dist as f64)
        });
        for (i, (d, z)) in per_point.into_iter().enumerate() {
            q.xs.push(reconstruct_x(o, z, d));
            q.ds.push(d);
            q.z.push(z);
            q.query_point.push(occ.point_ids()[i]);
        }
        for &p in &pixel_ids {
            for (layer, f) in buf.slot(p).iter().enumerate() {
                let query = occ.index_of(f.point_id).expect("consistent occupancy");
                q.slots.push(Slot { layer, pixel: p, query, dir: dir_of(p) });
            }
        }
    } else {
        for (di, &p) in pixel_ids.iter().enumerate() {
            let d = pixel_dirs[di];
            for (layer, f) in buf.slot(p).iter().enumerate() {
                let z = f.dist as f64;
                q.slots.push(Slot { layer, pixel: p, query: q.xs.len(), dir: di });
                q.xs.push(reconstruct_x(o, z, d));
                q.ds.push(d);
                q.z.push(z);
                q.query_point.push(f.point_id);
            }
        }
    }
    q.pixel_ids = pixel_ids;
    q.pixel_dirs = pixel_dirs;
    Ok(q)
}

/// K pixel-wise feature maps stored channel-major as a `[K·C, H, W]` node
/// (channel `k·C + c`), plus the `K·H·W` occupancy mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub var: Var,
    pub mask: Vec<bool>,
    pub k: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl FeatureStack {
    pub fn occupied(&self, layer: usize, px: usize, py: usize) -> bool {
        self.mask[(layer * self.height + py) * self.width + px]
    }

    /// Feature vector at `(layer, px, py)`.
    pub fn feature<T: Real>(&self, g: &Graph<T>, layer: usize, px: usize, py: usize) -> Vec<T> {
        let hw = self.height * self.width;
        let v = g.value(self.var).data();
        (0..self.channels)
            .map(|c| v[(layer * self.channels + c) * hw + py * self.width + px])
            .collect()
    }
}

/// Scatters per-slot features `[M, C]` into the stack; unoccupied cells stay 0.
pub fn reorganize<T: Real>(g: &mut Graph<T>, q: &QuerySet, features: Var) -> Result<FeatureStack> {
    let shape = g.shape(features).to_vec();
    if shape.len() != 2 || shape[0] != q.slots.len() {
        return Err(Error::shape(format!("reorganize: features {shape:?} for {} slots", q.slots.len())));
    }
    let targets = q.slot_targets();
    let var = g.scatter_stack(features, &targets, q.k, q.height, q.width)?;
    let mut mask = vec![false; q.k * q.width * q.height];
    for t in targets {
        mask[t] = true;
    }
    Ok(FeatureStack {
        var,
        mask,
        k: q.k,
        height: q.height,
        width: q.width,
        channels: shape[1],
    })
}
