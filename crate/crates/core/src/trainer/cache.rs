use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kraster::{rasterize_k, KZBuffer, OccupancyMap};
use crate::par;
use crate::scene::{Camera, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheKey {
    pub k: usize,
    pub tau_bits: u64,
    pub cloud: u64,
    pub cameras: u64,
}

impl CacheKey {
    pub fn new(cloud: &PointCloud, cameras: &[Camera], tau: f64, k: usize) -> Self {
        // FNV-1a over the exact camera parameters.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |v: u64| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for c in cameras {
            eat(c.width as u64);
            eat(c.height as u64);
            for v in [c.focal, c.cx, c.cy].into_iter().chain(c.rotation().row_major()).chain(c.translation().to_array()) {
                eat(v.to_bits());
            }
        }
        CacheKey { k, tau_bits: tau.to_bits(), cloud: cloud.fingerprint(), cameras: h }
    }
}

/// Rasterized fragments of a fixed view set, reused across training steps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FragmentCache {
    key: Option<CacheKey>,
    entries: Vec<(KZBuffer, OccupancyMap)>,
}

impl FragmentCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn key(&self) -> Option<CacheKey> {
        self.key
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, view: usize) -> Option<&(KZBuffer, OccupancyMap)> {
        self.entries.get(view)
    }

    pub fn entries(&self) -> &[(KZBuffer, OccupancyMap)] {
        &self.entries
    }

    /// Rasterizes every view unless the cache already holds exactly these
    /// inputs. Returns whether it rebuilt.
    pub fn ensure(&mut self, cloud: &PointCloud, cameras: &[Camera], tau: f64, k: usize) -> Result<bool> {
        let key = CacheKey::new(cloud, cameras, tau, k);
        if self.key == Some(key) {
            return Ok(false);
        }
        let built: Vec<Result<(KZBuffer, OccupancyMap)>> =
            par::map_slice(cameras, |cam| rasterize_k(cloud, cam, tau, k));
        self.entries = built.into_iter().collect::<Result<_>>()?;
        self.key = Some(key);
        Ok(true)
    }

    /// Writes `key.json` plus one KZB file per view into `dir`.
    pub fn spill(&self, dir: &Path) -> Result<()> {
        let key = self.key.ok_or_else(|| Error::invalid("cannot spill an empty fragment cache"))?;
        fs::create_dir_all(dir)?;
        fs::write(dir.join("key.json"), serde_json::to_vec_pretty(&key)?)?;
        for (i, (buf, _)) in self.entries.iter().enumerate() {
            fs::write(dir.join(format!("view_{i:03}.kzb")), buf.to_bytes())?;
        }
        Ok(())
    }

    /// Loads a spilled cache if its key matches the given inputs; otherwise
    /// rasterizes afresh. Returns the cache and whether it rebuilt.
    pub fn load_or_build(dir: &Path, cloud: &PointCloud, cameras: &[Camera], tau: f64, k: usize) -> Result<(Self, bool)> {
        let want = CacheKey::new(cloud, cameras, tau, k);
        if let Ok(bytes) = fs::read(dir.join("key.json")) {
            let key: CacheKey = serde_json::from_slice(&bytes)?;
            if key == want {
                let mut entries = Vec::with_capacity(cameras.len());
                for i in 0..cameras.len() {
                    let buf = KZBuffer::from_bytes(&fs::read(dir.join(format!("view_{i:03}.kzb")))?)?;
                    let occ = OccupancyMap::from_buffer(&buf);
                    entries.push((buf, occ));
                }
                return Ok((FragmentCache { key: Some(key), entries }, false));
            }
        }
        let mut cache = FragmentCache::new();
        cache.ensure(cloud, cameras, tau, k)?;
        Ok((cache, true))
    }
}

/// Rasterizes `cameras` into a fresh cache.
pub fn precompute_fragments(cloud: &PointCloud, cameras: &[Camera], tau: f64, k: usize) -> Result<FragmentCache> {
    let mut cache = FragmentCache::new();
    cache.ensure(cloud, cameras, tau, k)?;
    Ok(cache)
}
