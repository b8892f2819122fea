use serde::{Deserialize, Serialize};

use crate::decoder::UNetConfig;
use crate::encoders::HashGridConfig;
use crate::error::{Error, Result};
use crate::kfn::KfnConfig;
use crate::querygen::DmPolicy;
use crate::radiance::{RadianceConfig, RectifierConfig};
use crate::scene::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DmKind {
    Minimum,
    Random,
    Average,
}

impl std::str::FromStr for DmKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minimum" => Ok(DmKind::Minimum),
            "random" => Ok(DmKind::Random),
            "average" => Ok(DmKind::Average),
            _ => Err(Error::invalid(format!("unknown d_m policy {s:?}"))),
        }
    }
}

/// Every knob of a training run. Serialized as a flat JSON object; missing
/// keys take the defaults below and unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub k: usize,
    pub channels: usize,
    /// World splat radius; `None` derives one from the cloud's density.
    pub tau: Option<f64>,
    pub lr_radiance: f64,
    pub lr_rectifier: f64,
    pub lr_kfn: f64,
    pub lr_decoder: f64,
    pub lr_decay: f64,
    pub steps: u64,
    pub seed: u64,
    pub prune: bool,
    pub rect: bool,
    pub kfn: bool,
    pub naive_baseline: bool,
    pub dm_policy: DmKind,
    pub dm_seed: u64,
    pub radiance_widths: [usize; 4],
    pub kfn_hidden: usize,
    pub kfn_per_channel: bool,
    pub unet_widths: Vec<usize>,
    pub unet_width_mult: f64,
    pub hash_levels: usize,
    pub hash_features: usize,
    pub hash_log2_table: u32,
    pub hash_base_resolution: usize,
    pub hash_growth: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let hash = HashGridConfig::default();
        TrainConfig {
            k: 8,
            channels: 8,
            tau: None,
            lr_radiance: 5e-4,
            lr_rectifier: 1e-4,
            lr_kfn: 1.5e-4,
            lr_decoder: 1.5e-4,
            lr_decay: 0.9999,
            steps: 1000,
            seed: 0,
            prune: true,
            rect: true,
            kfn: true,
            naive_baseline: false,
            dm_policy: DmKind::Minimum,
            dm_seed: 0,
            radiance_widths: [256, 256, 256, 128],
            kfn_hidden: 64,
            kfn_per_channel: false,
            unet_widths: vec![16, 32, 64, 128, 256],
            unet_width_mult: 1.0,
            hash_levels: hash.levels,
            hash_features: hash.features_per_level,
            hash_log2_table: hash.log2_table_size,
            hash_base_resolution: hash.base_resolution,
            hash_growth: hash.growth_factor,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if self.k == 0 || self.k > 255 {
            return bad("k must lie in 1..=255");
        }
        if self.channels == 0 {
            return bad("channels must be positive");
        }
        let rates = [self.lr_radiance, self.lr_rectifier, self.lr_kfn, self.lr_decoder];
        if rates.iter().any(|&r| !(r >= 0.0 && r.is_finite())) {
            return bad("learning rates must be finite and non-negative");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        if let Some(t) = self.tau {
            if !(t >= 0.0 && t.is_finite()) {
                return bad("tau must be finite and non-negative");
            }
        }
        if self.naive_baseline && self.prune {
            return bad("the naive baseline integrates every slot; set prune to false");
        }
        self.unet().validate()?;
        Ok(())
    }

    pub fn dm(&self) -> DmPolicy {
        match self.dm_policy {
            DmKind::Minimum => DmPolicy::Minimum,
            DmKind::Random => DmPolicy::Random(self.dm_seed),
            DmKind::Average => DmPolicy::Average,
        }
    }

    /// Splat radius: explicit `tau`, or the spacing of `n` points spread over
    /// the bounding sphere's surface.
    pub fn resolve_tau(&self, cloud: &PointCloud) -> f64 {
        self.tau.unwrap_or_else(|| {
            let (_, r) = cloud.bounding_sphere();
            (4.0 * std::f64::consts::PI * r * r / cloud.len() as f64).sqrt()
        })
    }

    pub fn radiance(&self) -> RadianceConfig {
        RadianceConfig {
            widths: self.radiance_widths,
            out: if self.naive_baseline { 4 } else { self.channels },
        }
    }

    pub fn hash(&self) -> HashGridConfig {
        HashGridConfig {
            levels: self.hash_levels,
            features_per_level: self.hash_features,
            log2_table_size: self.hash_log2_table,
            base_resolution: self.hash_base_resolution,
            growth_factor: self.hash_growth,
        }
    }

    pub fn rectifier(&self) -> RectifierConfig {
        RectifierConfig {
            hash: self.hash(),
            ..RectifierConfig::new(self.channels)
        }
    }

    pub fn kfn_config(&self) -> KfnConfig {
        KfnConfig {
            hidden: self.kfn_hidden,
            per_channel: self.kfn_per_channel,
            ..KfnConfig::new(self.k, self.channels)
        }
    }

    pub fn unet(&self) -> UNetConfig {
        UNetConfig {
            widths: self.unet_widths.clone(),
            width_mult: self.unet_width_mult,
            ..UNetConfig::new(self.channels)
        }
    }

    /// Fields that change parameter shapes, with both values, where `self`
    /// and `other` disagree.
    pub fn architecture_diff(&self, other: &TrainConfig) -> Vec<String> {
        let a = serde_json::to_value(self).expect("config serializes");
        let b = serde_json::to_value(other).expect("config serializes");
        const FIELDS: [&str; 15] = [
            "k",
            "channels",
            "rect",
            "kfn",
            "naive_baseline",
            "radiance_widths",
            "kfn_hidden",
            "kfn_per_channel",
            "unet_widths",
            "unet_width_mult",
            "hash_levels",
            "hash_features",
            "hash_log2_table",
            "hash_base_resolution",
            "hash_growth",
        ];
        FIELDS
            .iter()
            .filter(|f| a[**f] != b[**f])
            .map(|f| format!("{f}: {} vs {}", a[*f], b[*f]))
            .collect()
    }

    pub fn check_compatible(&self, other: &TrainConfig) -> Result<()> {
        let diff = self.architecture_diff(other);
        if diff.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigMismatch(diff))
        }
    }
}
