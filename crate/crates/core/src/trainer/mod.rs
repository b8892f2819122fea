//! End-to-end training: model assembly, the optimization loop, evaluation,
//! checkpoints and ablation sweeps.

mod ablation;
mod cache;
mod checkpoint;
mod config;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Bound, Graph, ParamGroup, Params, Var};
use crate::decoder::{unet_forward, UNet};
use crate::encoders::DomainBox;
use crate::error::{Error, Result};
use crate::kfn::{front_layer, fuse, kfn_mask, KfnParams};
use crate::metrics::{psnr_from_mse, ssim};
use crate::querygen::{build_queries, reorganize, QuerySet};
use crate::radiance::{naive_volume_baseline, radiance_features, rectified_features, RadianceMlp, RectifierMlp};
use crate::real::Real;
use crate::scene::{Image, PointCloud, Split, ViewSet};

pub use ablation::{ablate_dm, ablate_k, ablate_modules, module_variants, run_ablation_row, write_ablation_csv, AblationRow};
pub use cache::{precompute_fragments, CacheKey, FragmentCache};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use config::{DmKind, TrainConfig};

/// All learnable modules of one configuration, registered in a fixed order
/// so equal seeds give equal initial weights.
#[derive(Debug, Clone)]
pub struct Model<T: Real> {
    pub config: TrainConfig,
    pub params: Params<T>,
    pub domain: DomainBox,
    pub radiance: RadianceMlp,
    pub rect: Option<RectifierMlp>,
    pub kfn: Option<KfnParams>,
    pub unet: Option<UNet>,
}

impl<T: Real> Model<T> {
    /// `domain` bounds the camera origins fed to the hash grid.
    pub fn new(config: &TrainConfig, domain: DomainBox) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = Params::new();
        let radiance = RadianceMlp::new(&mut params, &mut rng, "f", ParamGroup::Radiance, config.radiance());
        let naive = config.naive_baseline;
        let rect = if config.rect && !naive {
            Some(RectifierMlp::new(&mut params, &mut rng, "rect", config.rectifier(), domain)?)
        } else {
            None
        };
        let kfn = if config.kfn && !naive {
            Some(KfnParams::new(&mut params, &mut rng, "kfn", config.kfn_config())?)
        } else {
            None
        };
        let unet = if naive { None } else { Some(UNet::new(&mut params, &mut rng, "unet", config.unet())?) };
        Ok(Model { config: config.clone(), params, domain, radiance, rect, kfn, unet })
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Renders `[3, H, W]` for one view's queries. `far` closes the last
    /// interval of the naive baseline and is ignored otherwise.
    pub fn forward(&self, g: &mut Graph<T>, b: &Bound, q: &QuerySet, far: f64) -> Result<Var> {
        let Some(unet) = &self.unet else {
            return self.forward_naive(g, b, q, far);
        };
        let feats = radiance_features(g, b, &self.radiance, &q.xs, &q.ds)?;
        let slots = rectified_features(
            g,
            b,
            feats,
            &q.slot_queries(),
            self.rect.as_ref(),
            q.origin,
            &q.pixel_dirs,
            &q.slot_dirs(),
        )?;
        let stack = reorganize(g, q, slots)?;
        let fused = match &self.kfn {
            Some(kfn) => {
                let mask = kfn_mask(g, b, kfn, &stack)?;
                fuse(g, &stack, mask)?
            }
            None => front_layer(g, &stack)?,
        };
        unet_forward(g, b, unet, fused)
    }

    fn forward_naive(&self, g: &mut Graph<T>, b: &Bound, q: &QuerySet, far: f64) -> Result<Var> {
        let samples = q.volume_samples(far)?;
        let rgb = naive_volume_baseline(g, b, &self.radiance, &samples)?;
        let targets: Vec<usize> = samples.pixels.iter().map(|&(s, _)| q.slots[s].pixel).collect();
        // One "layer" of three channels: lands as `[3, H, W]`, background black.
        g.scatter_stack(rgb, &targets, 1, q.height, q.width)
    }

    pub fn render(&self, q: &QuerySet, far: f64) -> Result<Image> {
        let mut g = Graph::new();
        let b = g.bind(&self.params);
        let y = self.forward(&mut g, &b, q, far)?;
        Image::from_chw(q.width, q.height, g.value(y).data())
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: u64,
    pub split: Split,
    pub view: usize,
    pub psnr: f64,
    pub ssim: f64,
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from("step,split,view,psnr,ssim\n");
    for r in rows {
        let split = match r.split {
            Split::Train => "train",
            Split::Test => "test",
        };
        s.push_str(&format!("{},{},{},{:.6},{:.6}\n", r.step, split, r.view, r.psnr, r.ssim));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub view: usize,
    pub loss: f64,
    pub psnr: f64,
}

/// Camera distance to the far side of the cloud's bounding sphere.
fn far_bound(cloud: &PointCloud, origin: crate::geom::Vec3) -> f64 {
    let (c, r) = cloud.bounding_sphere();
    (origin - c).norm() + r
}

/// Per-group learning rate after `step` updates: `lr₀ · decay^step`.
pub fn scheduled_lr(config: &TrainConfig, group: ParamGroup, step: u64) -> f64 {
    let base = match group {
        ParamGroup::Radiance => config.lr_radiance,
        ParamGroup::Rectifier => config.lr_rectifier,
        ParamGroup::Kfn => config.lr_kfn,
        ParamGroup::Decoder => config.lr_decoder,
    };
    base * config.lr_decay.powf(step as f64)
}

pub struct Trainer<T: Real> {
    pub model: Model<T>,
    views: ViewSet,
    queries: Vec<QuerySet>,
    far: Vec<f64>,
    adam: Adam<T>,
    step: u64,
    history: Vec<MetricRow>,
    order: Vec<usize>,
    order_pos: usize,
    order_rng: ChaCha8Rng,
    /// Record SSIM on every training step (costs one extra image pass).
    pub train_ssim: bool,
}

impl<T: Real> Trainer<T> {
    /// Rasterizes every view and builds a fresh model.
    pub fn new(config: &TrainConfig, cloud: &PointCloud, views: &ViewSet) -> Result<Self> {
        let tau = config.resolve_tau(cloud);
        let cache = precompute_fragments(cloud, &views.cameras(), tau, config.k)?;
        Self::with_cache(config, cloud, views, &cache)
    }

    /// Reuses fragments rasterized at this config's `k` and `tau`.
    pub fn with_cache(config: &TrainConfig, cloud: &PointCloud, views: &ViewSet, cache: &FragmentCache) -> Result<Self> {
        config.validate()?;
        let cams = views.cameras();
        let want = CacheKey::new(cloud, &cams, config.resolve_tau(cloud), config.k);
        if cache.key() != Some(want) {
            return Err(Error::invalid("fragment cache was built for different inputs"));
        }
        let origins: Vec<_> = cams.iter().map(|c| c.origin()).collect();
        let domain = DomainBox::enclosing(&origins)?;
        let model = Model::new(config, domain)?;
        Self::assemble(model, cloud, views, cache)
    }

    fn assemble(model: Model<T>, cloud: &PointCloud, views: &ViewSet, cache: &FragmentCache) -> Result<Self> {
        let cfg = &model.config;
        if views.indices(Split::Train).is_empty() {
            return Err(Error::invalid("no training views"));
        }
        let prune = cfg.prune && !cfg.naive_baseline;
        let queries = views
            .views()
            .iter()
            .zip(cache.entries())
            .map(|(v, (buf, occ))| build_queries(buf, occ, &v.camera, prune, cfg.dm()))
            .collect::<Result<Vec<_>>>()?;
        let far = views.views().iter().map(|v| far_bound(cloud, v.camera.origin())).collect();
        let adam = Adam::new(&model.params, AdamConfig::default());
        let order_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_7a1e);
        Ok(Trainer {
            model,
            views: views.clone(),
            queries,
            far,
            adam,
            step: 0,
            history: Vec::new(),
            order: Vec::new(),
            order_pos: 0,
            order_rng,
            train_ssim: true,
        })
    }

    /// Continues from a checkpoint. The checkpoint's architecture must match
    /// `config`; optimizer moments restart from zero.
    pub fn resume(config: &TrainConfig, ckpt: Checkpoint<T>, cloud: &PointCloud, views: &ViewSet) -> Result<Self> {
        ckpt.config.check_compatible(config)?;
        let mut model = ckpt.model;
        model.config = config.clone();
        let tau = config.resolve_tau(cloud);
        let cache = precompute_fragments(cloud, &views.cameras(), tau, config.k)?;
        let mut t = Self::assemble(model, cloud, views, &cache)?;
        t.history = ckpt.history;
        // Replay the view order so resumed runs visit views as an
        // uninterrupted run would.
        for _ in 0..ckpt.step {
            t.next_view();
        }
        t.step = ckpt.step;
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.model.config
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn history(&self) -> &[MetricRow] {
        &self.history
    }

    pub fn views(&self) -> &ViewSet {
        &self.views
    }

    pub fn queries(&self, view: usize) -> &QuerySet {
        &self.queries[view]
    }

    /// Mean number of queried points per view.
    pub fn queries_per_view(&self) -> f64 {
        self.queries.iter().map(|q| q.len() as f64).sum::<f64>() / self.queries.len().max(1) as f64
    }

    /// Training views in a fresh seeded permutation every epoch.
    fn next_view(&mut self) -> usize {
        if self.order_pos == self.order.len() {
            self.order = self.views.indices(Split::Train);
            self.order.shuffle(&mut self.order_rng);
            self.order_pos = 0;
        }
        self.order_pos += 1;
        self.order[self.order_pos - 1]
    }

    pub fn train_step(&mut self) -> Result<StepReport> {
        let view = self.next_view();
        let q = &self.queries[view];
        let mut g = Graph::new();
        let b = g.bind(&self.model.params);
        let y = self.model.forward(&mut g, &b, q, self.far[view])?;
        let target: Vec<T> = self.views.views()[view].image.to_chw();
        let loss = g.mse(y, &target)?;
        let loss_v = g.value(loss).data()[0].as_f64();
        g.backward(loss)?;
        let grads: Vec<Option<&[T]>> = self.model.params.ids().map(|id| g.grad(b[id])).collect();
        let max_grad = grads
            .iter()
            .flatten()
            .flat_map(|s| s.iter())
            .map(|v| v.as_f64().abs())
            .fold(0.0, |m: f64, v| if v.is_nan() || m.is_nan() { f64::NAN } else { m.max(v) });
        if !loss_v.is_finite() || !max_grad.is_finite() {
            return Err(Error::NonFinite { step: self.step, view, max_grad });
        }
        let rates: Vec<f64> = self
            .model
            .params
            .ids()
            .map(|id| scheduled_lr(&self.model.config, self.model.params.group(id), self.step))
            .collect();
        let ssim_v = if self.train_ssim {
            let img = Image::from_chw(q.width, q.height, g.value(y).data())?;
            ssim(&img, &self.views.views()[view].image)?
        } else {
            f64::NAN
        };
        self.adam.step(&mut self.model.params, &grads, |id| rates[id.index()]);
        let psnr = psnr_from_mse(loss_v);
        self.history.push(MetricRow { step: self.step, split: Split::Train, view, psnr, ssim: ssim_v });
        let report = StepReport { step: self.step, view, loss: loss_v, psnr };
        self.step += 1;
        Ok(report)
    }

    /// Runs until `config.steps` updates have been taken.
    pub fn train(&mut self, mut on_step: impl FnMut(&StepReport)) -> Result<()> {
        while self.step < self.model.config.steps {
            let r = self.train_step()?;
            on_step(&r);
        }
        Ok(())
    }

    pub fn render(&self, view: usize) -> Result<Image> {
        let q = self.queries.get(view).ok_or_else(|| Error::invalid(format!("no view {view}")))?;
        self.model.render(q, self.far[view])
    }

    /// Training loss (MSE against the ground truth) of one view under the
    /// current weights, without touching gradients or optimizer state.
    pub fn view_loss(&self, view: usize) -> Result<f64> {
        let q = self.queries.get(view).ok_or_else(|| Error::invalid(format!("no view {view}")))?;
        let mut g = Graph::new();
        let b = g.bind(&self.model.params);
        let y = self.model.forward(&mut g, &b, q, self.far[view])?;
        let target: Vec<T> = self.views.views()[view].image.to_chw();
        let loss = g.mse(y, &target)?;
        Ok(g.value(loss).data()[0].as_f64())
    }

    /// Scores every view of `split`, appending the rows to the history.
    pub fn evaluate(&mut self, split: Split) -> Result<Vec<MetricRow>> {
        let idx = self.views.indices(split);
        let model = &self.model;
        let rows = crate::par::map_slice(&idx, |&v| -> Result<MetricRow> {
            let img = model.render(&self.queries[v], self.far[v])?;
            let gt = &self.views.views()[v].image;
            Ok(MetricRow {
                step: self.step,
                split,
                view: v,
                psnr: crate::metrics::psnr(&img, gt)?,
                ssim: ssim(&img, gt)?,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        self.history.extend(rows.iter().cloned());
        Ok(rows)
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            config: self.model.config.clone(),
            step: self.step,
            history: self.history.clone(),
            model: self.model.clone(),
        }
    }
}

/// Mean PSNR and SSIM of a set of rows.
pub fn mean_scores(rows: &[MetricRow]) -> (f64, f64) {
    let n = rows.len().max(1) as f64;
    (rows.iter().map(|r| r.psnr).sum::<f64>() / n, rows.iter().map(|r| r.ssim).sum::<f64>() / n)
}
