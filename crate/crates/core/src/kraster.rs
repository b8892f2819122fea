//! K-deep point splatting: every pixel keeps the K nearest fragments.

use std::cmp::Ordering;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::par;
use crate::scene::{Camera, PointCloud};

/// One `(point, distance)` record of a pixel's depth list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fragment {
    pub point_id: u32,
    /// Euclidean distance from the camera origin.
    pub dist: f32,
}

impl Fragment {
    /// Depth-test order: ascending distance, ties by ascending point id.
    pub fn depth_cmp(&self, other: &Fragment) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.point_id.cmp(&other.point_id))
    }
}

/// Row-major pixel id `W * row + col`.
pub fn pixel_id(width: usize, px: usize, py: usize) -> Result<usize> {
    if px >= width {
        return Err(Error::invalid(format!("column {px} outside width {width}")));
    }
    Ok(width * py + px)
}

/// Perspective splat radius in pixels, floored at half a pixel.
pub fn screen_radius(tau: f64, focal: f64, dist: f64) -> f64 {
    (tau * focal / dist).max(0.5)
}

/// Inserts into a sorted fixed-capacity list `slot[..*len]`; drops the farthest
/// entry when full.
fn insert_bounded(slot: &mut [Fragment], len: &mut usize, frag: Fragment) {
    let k = slot.len();
    let n = *len;
    let mut i = n;
    while i > 0 && frag.depth_cmp(&slot[i - 1]) == Ordering::Less {
        i -= 1;
    }
    if i >= k {
        return;
    }
    let end = if n < k { n } else { k - 1 };
    let mut j = end;
    while j > i {
        slot[j] = slot[j - 1];
        j -= 1;
    }
    slot[i] = frag;
    *len = (n + 1).min(k);
}

/// Sorted insertion keeping at most `k` entries.
pub fn depth_insert(slot: &mut Vec<Fragment>, frag: Fragment, k: usize) {
    let pos = slot.partition_point(|f| f.depth_cmp(&frag) == Ordering::Less);
    if pos >= k {
        return;
    }
    slot.insert(pos, frag);
    slot.truncate(k);
}

/// Per-pixel sorted lists of up to `K` fragments.
#[derive(Debug, Clone, PartialEq)]
pub struct KZBuffer {
    width: usize,
    height: usize,
    k: usize,
    counts: Vec<u8>,
    frags: Vec<Fragment>,
}

const EMPTY: Fragment = Fragment {
    point_id: u32::MAX,
    dist: f32::INFINITY,
};

impl KZBuffer {
    pub fn empty(width: usize, height: usize, k: usize) -> Result<Self> {
        if k == 0 || k > u8::MAX as usize {
            return Err(Error::invalid(format!("K = {k} outside 1..=255")));
        }
        Ok(KZBuffer {
            width,
            height,
            k,
            counts: vec![0; width * height],
            frags: vec![EMPTY; width * height * k],
        })
    }

    /// Builds a buffer from explicit per-pixel lists, validating every invariant.
    pub fn from_slots(width: usize, height: usize, k: usize, slots: &[Vec<Fragment>]) -> Result<Self> {
        let mut buf = KZBuffer::empty(width, height, k)?;
        if slots.len() != width * height {
            return Err(Error::shape("slot count does not match image size"));
        }
        for (p, s) in slots.iter().enumerate() {
            if s.len() > k {
                return Err(Error::invalid(format!("pixel {p} holds more than K fragments")));
            }
            buf.counts[p] = s.len() as u8;
            buf.frags[p * k..p * k + s.len()].copy_from_slice(s);
        }
        buf.validate()?;
        Ok(buf)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn slot(&self, pixel: usize) -> &[Fragment] {
        let n = self.counts[pixel] as usize;
        &self.frags[pixel * self.k..pixel * self.k + n]
    }

    /// Total retained fragments over all pixels and layers.
    pub fn total_fragments(&self) -> usize {
        self.counts.iter().map(|&c| c as usize).sum()
    }

    /// Fragment at layer `layer` of `pixel`, if occupied.
    pub fn layer(&self, pixel: usize, layer: usize) -> Option<&Fragment> {
        self.slot(pixel).get(layer)
    }

    /// Checks sortedness, capacity and per-pixel point uniqueness.
    pub fn validate(&self) -> Result<()> {
        for p in 0..self.pixel_count() {
            let s = self.slot(p);
            if s.len() > self.k {
                return Err(Error::invalid(format!("pixel {p} exceeds K")));
            }
            for f in s {
                if !(f.dist > 0.0 && f.dist.is_finite()) {
                    return Err(Error::invalid(format!("pixel {p} has invalid distance {}", f.dist)));
                }
            }
            for w in s.windows(2) {
                if w[0].depth_cmp(&w[1]) != Ordering::Less {
                    return Err(Error::invalid(format!("pixel {p} not strictly sorted")));
                }
            }
            let mut ids: Vec<u32> = s.iter().map(|f| f.point_id).collect();
            ids.sort_unstable();
            if ids.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::invalid(format!("pixel {p} repeats a point")));
            }
        }
        Ok(())
    }

    /// Binary dump: `"KZB1"`, `u32` W, H, K, then per pixel a `u8` count and
    /// `count x (u32 point_id, f32 dist)`, all little-endian.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"KZB1")?;
        for v in [self.width, self.height, self.k] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.pixel_count() + self.total_fragments() * 8);
        for p in 0..self.pixel_count() {
            let s = self.slot(p);
            buf.push(s.len() as u8);
            for f in s {
                buf.extend_from_slice(&f.point_id.to_le_bytes());
                buf.extend_from_slice(&f.dist.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format {
            what: "KZB file",
            message: m.to_string(),
        };
        if bytes.len() < 16 || &bytes[..4] != b"KZB1" {
            return Err(bad("missing KZB1 header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let (w, h, k) = (u32_at(4), u32_at(8), u32_at(12));
        let mut buf = KZBuffer::empty(w, h, k)?;
        let mut pos = 16;
        for p in 0..w * h {
            let n = *bytes.get(pos).ok_or_else(|| bad("truncated body"))? as usize;
            pos += 1;
            if n > k {
                return Err(bad("pixel count exceeds K"));
            }
            if pos + n * 8 > bytes.len() {
                return Err(bad("truncated body"));
            }
            for i in 0..n {
                let id = u32_at(pos) as u32;
                let dist = f32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap());
                buf.frags[p * k + i] = Fragment { point_id: id, dist };
                pos += 8;
            }
            buf.counts[p] = n as u8;
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        buf.validate()?;
        Ok(buf)
    }

    /// Depth of one layer as a grayscale image: near = white, far = dim, empty
    /// = black, min-max normalized over occupied pixels.
    pub fn layer_depth_image(&self, layer: usize) -> Vec<f32> {
        let depths: Vec<Option<f32>> = (0..self.pixel_count())
            .map(|p| self.layer(p, layer).map(|f| f.dist))
            .collect();
        let (lo, hi) = depths
            .iter()
            .flatten()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &d| (lo.min(d), hi.max(d)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        depths
            .iter()
            .map(|d| match d {
                Some(d) => 1.0 - 0.9 * (d - lo) / span,
                None => 0.0,
            })
            .collect()
    }
}

/// For every visible point, the sorted pixel ids it occupies in any layer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OccupancyMap {
    point_ids: Vec<u32>,
    offsets: Vec<usize>,
    pixels: Vec<u32>,
}

impl OccupancyMap {
    pub fn from_buffer(buf: &KZBuffer) -> Self {
        let mut pairs: Vec<(u32, u32)> = Vec::with_capacity(buf.total_fragments());
        for p in 0..buf.pixel_count() {
            for f in buf.slot(p) {
                pairs.push((f.point_id, p as u32));
            }
        }
        pairs.sort_unstable();
        let mut map = OccupancyMap {
            point_ids: Vec::new(),
            offsets: vec![0],
            pixels: Vec::with_capacity(pairs.len()),
        };
        for (i, &(pt, px)) in pairs.iter().enumerate() {
            if i > 0 && pairs[i - 1].0 != pt {
                map.offsets.push(map.pixels.len());
            }
            if i == 0 || pairs[i - 1].0 != pt {
                map.point_ids.push(pt);
            }
            map.pixels.push(px);
        }
        if !map.point_ids.is_empty() {
            map.offsets.push(map.pixels.len());
        }
        map
    }

    /// Number of distinct visible points.
    pub fn len(&self) -> usize {
        self.point_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point_ids.is_empty()
    }

    /// Visible point ids in ascending order.
    pub fn point_ids(&self) -> &[u32] {
        &self.point_ids
    }

    /// Pixels of the `i`-th visible point (ordering of [`Self::point_ids`]).
    pub fn pixels_at(&self, i: usize) -> &[u32] {
        &self.pixels[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn get(&self, point_id: u32) -> Option<&[u32]> {
        self.point_ids
            .binary_search(&point_id)
            .ok()
            .map(|i| self.pixels_at(i))
    }

    pub fn index_of(&self, point_id: u32) -> Option<usize> {
        self.point_ids.binary_search(&point_id).ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &[u32])> + '_ {
        (0..self.len()).map(move |i| (self.point_ids[i], self.pixels_at(i)))
    }

    /// Bidirectional agreement with the buffer's fragments.
    pub fn consistent_with(&self, buf: &KZBuffer) -> bool {
        let mut count = 0usize;
        for (pt, pixels) in self.iter() {
            if pixels.windows(2).any(|w| w[0] >= w[1]) {
                return false;
            }
            for &px in pixels {
                if px as usize >= buf.pixel_count()
                    || !buf.slot(px as usize).iter().any(|f| f.point_id == pt)
                {
                    return false;
                }
                count += 1;
            }
        }
        count == buf.total_fragments()
    }
}

/// Projected splat of one point.
#[derive(Debug, Clone, Copy)]
struct Splat {
    u: f64,
    v: f64,
    radius: f64,
    dist: f32,
}

const TILE: usize = 16;

/// Inclusive pixel bounding box of a splat clipped to the image.
fn splat_bounds(s: &Splat, w: usize, h: usize) -> Option<(usize, usize, usize, usize)> {
    let x0 = (s.u - s.radius - 0.5).ceil().max(0.0);
    let x1 = (s.u + s.radius - 0.5).floor().min(w as f64 - 1.0);
    let y0 = (s.v - s.radius - 0.5).ceil().max(0.0);
    let y1 = (s.v + s.radius - 0.5).floor().min(h as f64 - 1.0);
    if x0 > x1 || y0 > y1 {
        None
    } else {
        Some((x0 as usize, x1 as usize, y0 as usize, y1 as usize))
    }
}

fn covers(s: &Splat, px: usize, py: usize) -> bool {
    let dx = px as f64 + 0.5 - s.u;
    let dy = py as f64 + 0.5 - s.v;
    dx * dx + dy * dy <= s.radius * s.radius
}

/// Splats every visible point as a disk of world radius `tau` and keeps the K
/// nearest fragments per pixel.
pub fn rasterize_k(cloud: &PointCloud, camera: &Camera, tau: f64, k: usize) -> Result<(KZBuffer, OccupancyMap)> {
    let (w, h) = (camera.width, camera.height);
    let mut buf = KZBuffer::empty(w, h, k)?;
    let splats: Vec<Option<Splat>> = par::map_range(cloud.len(), |i| {
        let pr = camera.project(cloud.position(i));
        if !pr.visible {
            return None;
        }
        let dist = pr.dist as f32;
        if !(dist > 0.0 && dist.is_finite()) {
            return None;
        }
        Some(Splat {
            u: pr.u,
            v: pr.v,
            radius: screen_radius(tau, camera.focal, pr.dist),
            dist,
        })
    });

    let tiles_x = w.div_ceil(TILE);
    let tiles_y = h.div_ceil(TILE);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (i, s) in splats.iter().enumerate() {
        let Some(s) = s else { continue };
        let Some((x0, x1, y0, y1)) = splat_bounds(s, w, h) else {
            continue;
        };
        for ty in y0 / TILE..=y1 / TILE {
            for tx in x0 / TILE..=x1 / TILE {
                bins[ty * tiles_x + tx].push(i as u32);
            }
        }
    }

    // Each tile owns its pixels exclusively.
    let tiles: Vec<(Vec<u8>, Vec<Fragment>)> = par::map_range(bins.len(), |t| {
        let (tx, ty) = (t % tiles_x, t / tiles_x);
        let (ox, oy) = (tx * TILE, ty * TILE);
        let tw = TILE.min(w - ox);
        let th = TILE.min(h - oy);
        let mut counts = vec![0usize; tw * th];
        let mut frags = vec![EMPTY; tw * th * k];
        for &i in &bins[t] {
            let s = splats[i as usize].as_ref().unwrap();
            let (x0, x1, y0, y1) = splat_bounds(s, w, h).unwrap();
            for py in y0.max(oy)..=y1.min(oy + th - 1) {
                for px in x0.max(ox)..=x1.min(ox + tw - 1) {
                    if !covers(s, px, py) {
                        continue;
                    }
                    let local = (py - oy) * tw + (px - ox);
                    insert_bounded(
                        &mut frags[local * k..(local + 1) * k],
                        &mut counts[local],
                        Fragment {
                            point_id: i,
                            dist: s.dist,
                        },
                    );
                }
            }
        }
        (counts.into_iter().map(|c| c as u8).collect(), frags)
    });

    for (t, (counts, frags)) in tiles.into_iter().enumerate() {
        let (ox, oy) = ((t % tiles_x) * TILE, (t / tiles_x) * TILE);
        let tw = TILE.min(w - ox);
        let th = TILE.min(h - oy);
        for ly in 0..th {
            for lx in 0..tw {
                let local = ly * tw + lx;
                let pixel = (oy + ly) * w + ox + lx;
                buf.counts[pixel] = counts[local];
                buf.frags[pixel * k..(pixel + 1) * k]
                    .copy_from_slice(&frags[local * k..(local + 1) * k]);
            }
        }
    }
    let occ = OccupancyMap::from_buffer(&buf);
    Ok((buf, occ))
}
