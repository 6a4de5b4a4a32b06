use serde::{Deserialize, Serialize};

use super::config::{Ablation, RunConfig};
use super::metrics::MetricReport;
use super::run::{baseline_images, make_session, render_test_views, score_views};
use crate::error::Result;
use crate::optim::{train_stage1, train_stage2, StageResult};

/// Test-view scores of one ablation variant on one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub seed: u64,
    pub variant: String,
    pub stage1_psnr: f64,
    pub psnr: f64,
    pub ssim: f64,
    /// Blurred-input baseline on the same session.
    pub baseline_psnr: f64,
}

/// Runs every variant on every seed in memory. Per seed one session is
/// captured, and variants whose Stage-1 inputs coincide share one Stage-1 fit.
pub fn run_study(
    base: &RunConfig,
    seeds: &[u64],
    variants: &[Ablation],
    progress: &mut dyn FnMut(&StudyRow),
) -> Result<Vec<StudyRow>> {
    let mut rows = Vec::new();
    for &seed in seeds {
        let mut cfg = base.clone();
        cfg.seed = seed;
        let session = make_session(&cfg)?;
        let cap = cfg.eval.psnr_cap;
        let baseline = MetricReport::new("", "blurred_input", None, "", score_views(&session, &baseline_images(&session)?, cap)?);
        let mut stage1_cache: Vec<(String, StageResult, f64)> = Vec::new();
        for &ablation in variants {
            cfg.ablation = ablation;
            cfg.validate()?;
            let (obj, schedule) = cfg.effective();
            let opts = obj.render_options();
            let w = &obj.weights;
            let key = serde_json::to_string(&(&schedule, w.lambda_blur, w.alpha_blur, obj.alpha_min))?;
            let idx = match stage1_cache.iter().position(|(k, _, _)| *k == key) {
                Some(i) => i,
                None => {
                    let s1 = train_stage1(&session, &schedule, &obj, &mut ())?;
                    let (imgs, _) = render_test_views(&session, &s1.state, cfg.eval.align_iters, &opts)?;
                    let p = MetricReport::new("", "stage1", Some(1), "", score_views(&session, &imgs, cap)?).mean_psnr;
                    stage1_cache.push((key, s1, p));
                    stage1_cache.len() - 1
                }
            };
            let (_, s1, stage1_psnr) = &stage1_cache[idx];
            let s2 = train_stage2(&session, &s1.state, &schedule, &obj, &mut ())?;
            let (imgs, _) = render_test_views(&session, &s2.state, cfg.eval.align_iters, &opts)?;
            let r = MetricReport::new("", "stage2", Some(2), "", score_views(&session, &imgs, cap)?);
            let row = StudyRow {
                seed,
                variant: ablation.tag(),
                stage1_psnr: *stage1_psnr,
                psnr: r.mean_psnr,
                ssim: r.mean_ssim,
                baseline_psnr: baseline.mean_psnr,
            };
            progress(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

/// The variants of the ordering experiment, full method first.
pub fn ordering_variants() -> Vec<Ablation> {
    let off = Ablation::default();
    vec![
        off,
        Ablation { rgb_only: true, ..off },
        Ablation { disable_struct: true, ..off },
        Ablation { disable_reg_r: true, ..off },
        Ablation { disable_reg_e: true, ..off },
        Ablation { no_pose_refine: true, ..off },
    ]
}
