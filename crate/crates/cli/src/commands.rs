use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, ensure, Context, Result};
use serde_json::json;

use kbuffers::kraster::rasterize_k;
use kbuffers::scene::{
    add_point_noise, load_scene, make_synthetic_scene, save_scene, write_gray_png, write_png, PointCloud, SceneKind,
    Split, ViewSet,
};
use kbuffers::trainer::{
    ablate_dm, ablate_k, ablate_modules, load_checkpoint, mean_scores, metrics_csv, save_checkpoint,
    write_ablation_csv, MetricRow, TrainConfig, Trainer,
};

use crate::manifest::write_manifest;
use crate::plot::bar_chart;
use crate::{AblateArgs, CkptArgs, RasterizeArgs, Sweep, SynthArgs, TrainArgs};

const SCENE_META: &str = "scene.json";

fn out_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).with_context(|| format!("cannot create output directory {}", p.display()))
}

fn open_scene(dir: &Path) -> Result<(PointCloud, ViewSet)> {
    load_scene(dir).with_context(|| format!("cannot load scene from {}", dir.display()))
}

/// Splat radius recorded by `synth`, if the scene came from there.
fn recorded_tau(scene: &Path) -> Option<f64> {
    let bytes = fs::read(scene.join(SCENE_META)).ok()?;
    let v: serde_json::Value = serde_json::from_slice(&bytes).ok()?;
    v["tau"].as_f64()
}

/// Config file (or defaults) with `tau` pinned to a concrete value.
fn resolve_config(path: Option<&PathBuf>, scene: &Path, cloud: &PointCloud) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = match path {
        Some(p) => serde_json::from_slice(&fs::read(p).with_context(|| format!("cannot read {}", p.display()))?)
            .with_context(|| format!("invalid config {}", p.display()))?,
        None => TrainConfig::default(),
    };
    if cfg.tau.is_none() {
        cfg.tau = Some(recorded_tau(scene).unwrap_or_else(|| cfg.resolve_tau(cloud)));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_finite(rows: &[MetricRow]) -> Result<()> {
    if let Some(r) = rows.iter().find(|r| !r.psnr.is_finite() || !r.ssim.is_finite()) {
        bail!("non-finite metric for view {} at step {}", r.view, r.step);
    }
    Ok(())
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let kind = SceneKind::from_str(&a.kind)?;
    let scene = make_synthetic_scene(kind, a.points, a.views, a.res, a.seed)?;
    let cloud = if a.noise_sigma > 0.0 || a.dropout > 0.0 {
        add_point_noise(&scene.cloud, a.noise_sigma, a.dropout, a.seed ^ 0x6e6f_6973_65)?
    } else {
        scene.cloud.clone()
    };
    out_dir(&a.out)?;
    save_scene(&a.out, &cloud, &scene.views)?;
    let meta = json!({ "kind": kind.name(), "points": cloud.len(), "tau": scene.tau });
    fs::write(a.out.join(SCENE_META), serde_json::to_string_pretty(&meta)?)?;
    let mut outputs = vec!["cloud.ply".into(), "cameras.json".into(), SCENE_META.into()];
    outputs.extend((0..a.views).map(|i| format!("gt/{i:03}.png")));
    write_manifest(&a.out, "synth", a, None, &outputs)?;
    eprintln!("wrote {} points and {} views to {}", cloud.len(), a.views, a.out.display());
    Ok(())
}

pub fn rasterize(a: &RasterizeArgs) -> Result<()> {
    let (cloud, views) = open_scene(&a.scene)?;
    let Some(view) = views.get(a.view) else {
        bail!("view {} out of range (scene has {})", a.view, views.len());
    };
    let tau = a
        .tau
        .or_else(|| recorded_tau(&a.scene))
        .unwrap_or_else(|| TrainConfig::default().resolve_tau(&cloud));
    let (buf, _) = rasterize_k(&cloud, &view.camera, tau, a.k)?;
    out_dir(&a.out)?;
    let kzb = format!("view_{:03}.kzb", a.view);
    fs::write(a.out.join(&kzb), buf.to_bytes())?;
    let mut outputs = vec![kzb];
    for layer in 0..a.k {
        let name = format!("depth_layer_{layer}.png");
        write_gray_png(&a.out.join(&name), buf.width(), buf.height(), &buf.layer_depth_image(layer))?;
        outputs.push(name);
    }
    write_manifest(&a.out, "rasterize", a, Some(json!({ "tau": tau, "k": a.k })), &outputs)?;
    eprintln!("{} fragments over {} pixels", buf.total_fragments(), buf.pixel_count());
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let (cloud, views) = open_scene(&a.scene)?;
    let mut cfg = resolve_config(a.config.as_ref(), &a.scene, &cloud)?;
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let mut t: Trainer<f32> = match &a.ckpt {
        Some(p) => {
            let ck = load_checkpoint(p).with_context(|| format!("cannot load checkpoint {}", p.display()))?;
            Trainer::resume(&cfg, ck, &cloud, &views)?
        }
        None => Trainer::new(&cfg, &cloud, &views)?,
    };
    eprintln!(
        "training {} parameters, {:.0} queries per view, {} steps",
        t.model.param_count(),
        t.queries_per_view(),
        cfg.steps
    );
    let every = a.log_every;
    t.train(|r| {
        if every > 0 && (r.step % every == 0 || r.step + 1 == cfg.steps) {
            eprintln!("step {:>6}  view {:>3}  loss {:.6}  psnr {:.2}", r.step, r.view, r.loss, r.psnr);
        }
    })?;
    out_dir(&a.out)?;
    let train_rows: Vec<MetricRow> = t.history().iter().filter(|r| r.split == Split::Train).cloned().collect();
    ensure_finite(&train_rows)?;
    fs::write(a.out.join("metrics.csv"), metrics_csv(&train_rows))?;
    save_checkpoint(&a.out.join("checkpoint.kbck"), &t.checkpoint())?;
    fs::write(a.out.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
    let config = json!({ "train": cfg, "loss": "mse", "augmentation": false });
    write_manifest(&a.out, "train", a, Some(config), &["checkpoint.kbck".into(), "metrics.csv".into(), "config.json".into()])?;
    Ok(())
}

fn trainer_from_checkpoint(a: &CkptArgs) -> Result<(Trainer<f32>, TrainConfig)> {
    let (cloud, views) = open_scene(&a.scene)?;
    let ck = load_checkpoint::<f32>(&a.ckpt).with_context(|| format!("cannot load checkpoint {}", a.ckpt.display()))?;
    let cfg = ck.config.clone();
    if let Some(p) = &a.config {
        let user = resolve_config(Some(p), &a.scene, &cloud)?;
        user.check_compatible(&cfg).context("config does not match the checkpoint")?;
    }
    Ok((Trainer::resume(&cfg, ck, &cloud, &views)?, cfg))
}

pub fn render(a: &CkptArgs) -> Result<()> {
    let (t, cfg) = trainer_from_checkpoint(a)?;
    out_dir(&a.out.join("render"))?;
    let mut outputs = Vec::new();
    for v in t.views().indices(Split::Test) {
        let img = t.render(v)?;
        ensure!(img.data.iter().all(|x| x.is_finite()), "non-finite pixels in view {v}");
        let name = format!("render/{v:03}.png");
        write_png(&a.out.join(&name), &img)?;
        outputs.push(name);
    }
    write_manifest(&a.out, "render", a, Some(serde_json::to_value(&cfg)?), &outputs)?;
    Ok(())
}

pub fn eval(a: &CkptArgs) -> Result<()> {
    let (mut t, cfg) = trainer_from_checkpoint(a)?;
    let rows = t.evaluate(Split::Test)?;
    ensure_finite(&rows)?;
    out_dir(&a.out)?;
    fs::write(a.out.join("metrics.csv"), metrics_csv(&rows))?;
    let (p, s) = mean_scores(&rows);
    eprintln!("test PSNR {p:.3} dB  SSIM {s:.4} over {} views", rows.len());
    write_manifest(&a.out, "eval", a, Some(serde_json::to_value(&cfg)?), &["metrics.csv".into()])?;
    Ok(())
}

pub fn ablate(a: &AblateArgs) -> Result<()> {
    let (cloud, views) = open_scene(&a.scene)?;
    let mut cfg = resolve_config(a.config.as_ref(), &a.scene, &cloud)?;
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    let rows = match a.sweep {
        Sweep::K => ablate_k(&cfg, &a.ks, &cloud, &views)?,
        Sweep::Modules => ablate_modules(&cfg, &cloud, &views)?,
        Sweep::Dm => ablate_dm(&cfg, &cloud, &views)?,
    };
    if let Some(r) = rows.iter().find(|r| !r.psnr.is_finite() || !r.ssim.is_finite()) {
        bail!("non-finite metric in row {}", r.label);
    }
    out_dir(&a.out)?;
    write_ablation_csv(&a.out.join("ablation.csv"), &rows)?;
    let psnrs: Vec<f64> = rows.iter().map(|r| r.psnr).collect();
    write_png(&a.out.join("ablation.png"), &bar_chart(&psnrs, 320, 200))?;
    for r in &rows {
        eprintln!(
            "{:<18} K={}  PSNR {:.3}  SSIM {:.4}  params {}  queries/view {:.0}",
            r.label, r.k, r.psnr, r.ssim, r.param_count, r.queries_per_view
        );
    }
    write_manifest(&a.out, "ablate", a, Some(serde_json::to_value(&cfg)?), &["ablation.csv".into(), "ablation.png".into()])?;
    Ok(())
}
