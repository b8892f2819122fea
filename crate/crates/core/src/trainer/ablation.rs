use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::scene::{PointCloud, Split, ViewSet};

use super::{mean_scores, precompute_fragments, DmKind, FragmentCache, TrainConfig, Trainer};

/// One trained-and-evaluated configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub label: String,
    pub k: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub param_count: usize,
    pub queries_per_view: f64,
    pub final_loss: f64,
}

/// Trains `config.steps` steps at f32 and scores the test split.
pub fn run_ablation_row(
    label: &str,
    config: &TrainConfig,
    cloud: &PointCloud,
    views: &ViewSet,
    cache: Option<&FragmentCache>,
) -> Result<AblationRow> {
    let mut t: Trainer<f32> = match cache {
        Some(c) => Trainer::with_cache(config, cloud, views, c)?,
        None => Trainer::new(config, cloud, views)?,
    };
    t.train_ssim = false;
    let mut final_loss = f64::NAN;
    t.train(|r| final_loss = r.loss)?;
    let rows = t.evaluate(Split::Test)?;
    let (psnr, ssim) = mean_scores(&rows);
    Ok(AblationRow {
        label: label.to_string(),
        k: config.k,
        psnr,
        ssim,
        param_count: t.model.param_count(),
        queries_per_view: t.queries_per_view(),
        final_loss,
    })
}

/// One run per K with everything else (seed, schedule, widths) shared.
pub fn ablate_k(base: &TrainConfig, ks: &[usize], cloud: &PointCloud, views: &ViewSet) -> Result<Vec<AblationRow>> {
    ks.iter()
        .map(|&k| run_ablation_row(&format!("K={k}"), &TrainConfig { k, ..base.clone() }, cloud, views, None))
        .collect()
}

/// The four module-ablation rows: a single-layer baseline with the front
/// layer passed straight through, then KFN, pruning and rectification added
/// one at a time at `base.k`.
pub fn module_variants(base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    let common = TrainConfig { naive_baseline: false, ..base.clone() };
    vec![
        ("baseline".into(), TrainConfig { k: 1, kfn: false, prune: false, rect: false, ..common.clone() }),
        ("+KFN".into(), TrainConfig { kfn: true, prune: false, rect: false, ..common.clone() }),
        ("+KFN+prune".into(), TrainConfig { kfn: true, prune: true, rect: false, ..common.clone() }),
        ("+KFN+prune+rect".into(), TrainConfig { kfn: true, prune: true, rect: true, ..common }),
    ]
}

pub fn ablate_modules(base: &TrainConfig, cloud: &PointCloud, views: &ViewSet) -> Result<Vec<AblationRow>> {
    let mut cache: Option<FragmentCache> = None;
    let mut rows = Vec::new();
    for (label, cfg) in module_variants(base) {
        // Rows at the same K share one rasterization.
        let tau = cfg.resolve_tau(cloud);
        match &mut cache {
            Some(c) => {
                c.ensure(cloud, &views.cameras(), tau, cfg.k)?;
            }
            None => cache = Some(precompute_fragments(cloud, &views.cameras(), tau, cfg.k)?),
        }
        rows.push(run_ablation_row(&label, &cfg, cloud, views, cache.as_ref())?);
    }
    Ok(rows)
}

/// Minimum / random / average choice of `d_m` under the full pipeline.
pub fn ablate_dm(base: &TrainConfig, cloud: &PointCloud, views: &ViewSet) -> Result<Vec<AblationRow>> {
    let tau = base.resolve_tau(cloud);
    let cache = precompute_fragments(cloud, &views.cameras(), tau, base.k)?;
    [DmKind::Minimum, DmKind::Random, DmKind::Average]
        .into_iter()
        .map(|dm| {
            let cfg = TrainConfig { dm_policy: dm, prune: true, ..base.clone() };
            run_ablation_row(cfg.dm().name(), &cfg, cloud, views, Some(&cache))
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("label,k,psnr,ssim,param_count,queries_per_view,final_loss\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{},{:.1},{:.8}",
            r.label, r.k, r.psnr, r.ssim, r.param_count, r.queries_per_view, r.final_loss
        );
    }
    s
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    std::fs::write(path, ablation_csv(rows))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{make_synthetic_scene, SceneKind};
    use crate::trainer::tests::tiny_config;

    #[test]
    fn module_rows_follow_the_table_structure() {
        let rows = module_variants(&TrainConfig::default());
        let labels: Vec<_> = rows.iter().map(|r| r.0.as_str()).collect();
        assert_eq!(labels, ["baseline", "+KFN", "+KFN+prune", "+KFN+prune+rect"]);
        assert_eq!((rows[0].1.k, rows[0].1.kfn, rows[0].1.rect), (1, false, false));
        assert_eq!(rows[1].1.k, 8);
        assert!(!rows[2].1.rect && rows[3].1.rect);
    }

    #[test]
    fn small_sweep_runs_and_counts_queries() {
        let s = make_synthetic_scene(SceneKind::TexturedSphere, 600, 4, 12, 3).unwrap();
        let base = TrainConfig { steps: 2, ..tiny_config() };
        let rows = ablate_modules(&base, &s.cloud, &s.views).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.psnr.is_finite()));
        // Pruning can only merge slots.
        assert!(rows[2].queries_per_view <= rows[1].queries_per_view);
        assert_eq!(rows[2].queries_per_view, rows[3].queries_per_view);
        assert!(rows[3].param_count > rows[2].param_count);

        let csv = ablation_csv(&rows);
        assert_eq!(csv.lines().count(), 5);

        let dm = ablate_dm(&base, &s.cloud, &s.views).unwrap();
        assert_eq!(dm.iter().map(|r| r.label.as_str()).collect::<Vec<_>>(), ["minimum", "random", "average"]);
    }
}
