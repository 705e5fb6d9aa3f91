//! End-to-end stages with on-disk artifacts: speed policy, trait dataset,
//! trait model, residual policies, comparison report.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dti::{
    collect_dataset, evaluate_dti, read_dataset, split_indices, train_dti, write_dataset, write_dti_log,
    write_latent_csv, DtiEvaluation, DtiModel, TraitWindow,
};
use crate::error::{PerpError, Result};
use crate::eval::{compare, ArtifactLayout, ComparisonReport};
use crate::pcp::{train_pcp, write_train_log, PcpPolicy, PcpTrainResult};
use crate::perp::{train_perp, PerpTrainResult, Variant};
use crate::rng::derive_seed;

const STAGE_PCP: u64 = 61;
const STAGE_COLLECT: u64 = 62;
const STAGE_DTI: u64 = 63;
const STAGE_RESIDUAL: u64 = 64;

/// Seed of one stage at one `(δ, master seed)` cell.
pub fn stage_seed(master: u64, stage: Stage, delta: usize) -> u64 {
    let id = match stage {
        Stage::Pcp => STAGE_PCP,
        Stage::Collect => STAGE_COLLECT,
        Stage::Dti => STAGE_DTI,
        Stage::Residual(v) => STAGE_RESIDUAL * 10 + v as u64,
    };
    derive_seed(master, &[id, delta as u64])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Pcp,
    Collect,
    Dti,
    Residual(Variant),
}

pub(crate) fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| PerpError::io(dir, e))?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    create_parent(path)?;
    Ok(BufWriter::new(File::create(path).map_err(|e| PerpError::io(path, e))?))
}

pub fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(PerpError::MissingArtifact(path.to_path_buf()))
    }
}

pub fn pcp_stage(cfg: &RunConfig, seed: u64, out: &Path, log: Option<&Path>) -> Result<PcpTrainResult> {
    let res = train_pcp(&cfg.env, &cfg.idm, &cfg.pcp, seed)?;
    create_parent(out)?;
    res.policy.save(out)?;
    if let Some(log) = log {
        write_train_log(&res.log, create(log)?)?;
    }
    Ok(res)
}

pub fn collect_stage(cfg: &RunConfig, pcp_path: &Path, seed: u64, out: &Path) -> Result<Vec<TraitWindow>> {
    require(pcp_path)?;
    let pcp = PcpPolicy::load(pcp_path)?;
    let data = collect_dataset(&pcp, &cfg.env, &cfg.idm, &cfg.dti.collect, seed)?;
    create_parent(out)?;
    write_dataset(out, &data)?;
    Ok(data)
}

pub fn dti_stage(
    cfg: &RunConfig,
    data_path: &Path,
    seed: u64,
    out: &Path,
    log: Option<&Path>,
    latents: Option<&Path>,
) -> Result<DtiEvaluation> {
    require(data_path)?;
    let data = read_dataset(data_path)?;
    let res = train_dti(&data, &cfg.dti.train, seed)?;
    create_parent(out)?;
    res.model.save(out)?;
    if let Some(log) = log {
        write_dti_log(&res.log, create(log)?)?;
    }
    let ev = evaluate_dti(&res.model, &data, &res.train_idx, &res.eval_idx)?;
    if let Some(latents) = latents {
        write_latent_csv(&ev.points, create(latents)?)?;
    }
    Ok(ev)
}

/// Re-evaluates a saved trait model on the split it was trained with.
pub fn dti_eval_stage(cfg: &RunConfig, model_path: &Path, data_path: &Path, seed: u64, latents: Option<&Path>) -> Result<DtiEvaluation> {
    require(model_path)?;
    require(data_path)?;
    let model = DtiModel::load(model_path)?;
    let data = read_dataset(data_path)?;
    let (train_idx, eval_idx) = split_indices(data.len(), cfg.dti.train.train_fraction, seed);
    let ev = evaluate_dti(&model, &data, &train_idx, &eval_idx)?;
    if let Some(latents) = latents {
        write_latent_csv(&ev.points, create(latents)?)?;
    }
    Ok(ev)
}

pub fn residual_stage(
    cfg: &RunConfig,
    variant: Variant,
    pcp_path: &Path,
    dti_path: Option<&Path>,
    seed: u64,
    out: &Path,
    log: Option<&Path>,
) -> Result<PerpTrainResult> {
    require(pcp_path)?;
    let pcp = PcpPolicy::load(pcp_path)?;
    let dti = match (variant, dti_path) {
        (Variant::Perp, None) => {
            return Err(PerpError::Config("the personalized residual needs a trait model path".into()));
        }
        (Variant::Perp, Some(p)) => {
            require(p)?;
            Some(DtiModel::load(p)?)
        }
        _ => None,
    };
    let res = train_perp(&pcp, dti.as_ref(), variant, &cfg.env, &cfg.idm, &cfg.perp, seed)?;
    create_parent(out)?;
    res.policy.save(out)?;
    if let Some(log) = log {
        write_train_log(&res.log, create(log)?)?;
    }
    Ok(res)
}

pub fn compare_stage(cfg: &RunConfig) -> Result<ComparisonReport> {
    let layout = ArtifactLayout::new(&cfg.paths.artifacts);
    let report = compare(
        &layout,
        &cfg.compare.policies,
        &cfg.compare.deltas,
        &cfg.compare.seeds,
        &cfg.env,
        &cfg.idm,
        &cfg.eval,
    )?;
    report.write_csv(create(&cfg.report_path())?)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub delta: usize,
    pub seed: u64,
    pub pcp_best_score: Option<f64>,
    pub dti_accuracy: Option<f64>,
    /// Wall-clock seconds of trait-model training and evaluation.
    pub dti_seconds: Option<f64>,
    pub residual_best_scores: Vec<(Variant, Option<f64>)>,
}

pub struct PipelineOutcome {
    pub cells: Vec<CellSummary>,
    pub report: ComparisonReport,
}

/// Residual variants the pipeline trains, derived from the compared policies.
pub fn pipeline_variants(cfg: &RunConfig) -> Vec<Variant> {
    let mut v: Vec<Variant> = cfg.compare.policies.iter().filter_map(|p| p.residual_variant()).collect();
    v.sort();
    v.dedup();
    v
}

/// Trains every stage for each `(δ, seed)` in `cfg.compare`, then writes the
/// comparison report.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutcome> {
    let layout = ArtifactLayout::new(&cfg.paths.artifacts);
    let variants = pipeline_variants(cfg);
    let mut cells = Vec::new();
    for &delta in &cfg.compare.deltas {
        let mut c = cfg.clone();
        c.set_delta(delta);
        for &seed in &cfg.compare.seeds {
            log::info!("pipeline cell delta={delta} seed={seed}");
            let pcp = pcp_stage(&c, stage_seed(seed, Stage::Pcp, delta), &layout.pcp(delta, seed), Some(&layout.pcp_log(delta, seed)))?;
            let needs_dti = variants.contains(&Variant::Perp);
            let (dti_accuracy, dti_seconds) = if needs_dti {
                collect_stage(&c, &layout.pcp(delta, seed), stage_seed(seed, Stage::Collect, delta), &layout.dataset(delta, seed))?;
                let t0 = std::time::Instant::now();
                let ev = dti_stage(
                    &c,
                    &layout.dataset(delta, seed),
                    stage_seed(seed, Stage::Dti, delta),
                    &layout.dti(delta, seed),
                    Some(&layout.dti_log(delta, seed)),
                    Some(&layout.latents(delta, seed)),
                )?;
                (Some(ev.accuracy), Some(t0.elapsed().as_secs_f64()))
            } else {
                (None, None)
            };
            let mut residual_best_scores = Vec::new();
            for &v in &variants {
                let res = residual_stage(
                    &c,
                    v,
                    &layout.pcp(delta, seed),
                    (v == Variant::Perp).then(|| layout.dti(delta, seed)).as_deref(),
                    stage_seed(seed, Stage::Residual(v), delta),
                    &layout.residual(v, delta, seed),
                    Some(&layout.residual_log(v, delta, seed)),
                )?;
                residual_best_scores.push((v, res.best_score));
            }
            cells.push(CellSummary {
                delta,
                seed,
                pcp_best_score: pcp.best_score,
                dti_accuracy,
                dti_seconds,
                residual_best_scores,
            });
        }
    }
    let report = compare_stage(cfg)?;
    Ok(PipelineOutcome { cells, report })
}
