//! End-to-end drivers shared by the command-line tool and the bindings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::dataio::augment;
use crate::hierarchy::{interpolate, run_hierarchy, teacher_forced_levels};
use crate::metrics::{evaluate, EvalReport};
use crate::mpnn::{train, ModelParams, MpnnConfig, TrainReport};
use crate::stage1::{track_sequence, Stage1Config};
use crate::tgraph::TrackletGraph;
use crate::types::{GtRecord, SequenceBundle, Tracklet, Trajectory};
use crate::{Error, Result};

/// Maps `f` over `items` on up to `jobs` threads, keeping input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let jobs = jobs.max(1).min(items.len().max(1));
    if jobs == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| {
                let f = &f;
                s.spawn(move || c.iter().map(f).collect::<Vec<R>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

/// First-stage tracklets of one sequence.
pub fn track(bundle: &SequenceBundle, cfg: &RunConfig) -> Result<Vec<Tracklet>> {
    track_sequence(bundle, &cfg.stage1)
}

fn ground_truth(bundle: &SequenceBundle) -> Result<&[GtRecord]> {
    bundle
        .ground_truth
        .as_deref()
        .ok_or_else(|| Error::Invalid(format!("sequence {} has no ground truth", bundle.name)))
}

/// Augmented, teacher-forced training graphs for a set of labeled sequences.
pub fn training_graphs(bundles: &[SequenceBundle], cfg: &RunConfig, jobs: usize) -> Result<Vec<Vec<TrackletGraph>>> {
    let thresholds = if cfg.augment.tracklet_level {
        cfg.augment.thresholds.clone()
    } else {
        vec![cfg.stage1.th_c]
    };
    let indexed: Vec<(usize, &SequenceBundle)> = bundles.iter().enumerate().collect();
    let per_bundle = par_map(&indexed, jobs, |&(i, bundle)| -> Result<Vec<Vec<TrackletGraph>>> {
        ground_truth(bundle)?;
        let sets = thresholds
            .iter()
            .map(|&th| {
                let s1 = Stage1Config { th_c: th, ..cfg.stage1.clone() };
                Ok((th, track_sequence(bundle, &s1)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let samples = augment(bundle, &sets, &cfg.augment, cfg.seed.wrapping_add(i as u64))?;
        samples
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let gt = s.bundle.ground_truth.as_deref().unwrap_or_default();
                let seed = cfg.seed ^ ((i as u64) << 32 | j as u64);
                teacher_forced_levels(
                    &s.tracklets,
                    gt,
                    &cfg.graph,
                    cfg.model.levels,
                    s.bundle.fps,
                    cfg.train.iou_gate,
                    cfg.train.teacher_merge_prob,
                    seed,
                )
            })
            .collect()
    });
    let mut out = Vec::new();
    for r in per_bundle {
        out.extend(r?);
    }
    Ok(out)
}

/// Trains a fresh model on labeled sequences.
pub fn train_model(bundles: &[SequenceBundle], cfg: &RunConfig, jobs: usize) -> Result<(ModelParams, TrainReport)> {
    let dim = bundles
        .iter()
        .find_map(SequenceBundle::embedding_dim)
        .ok_or_else(|| Error::MissingEmbedding("no training sequence carries embeddings".into()))?;
    let graphs = training_graphs(bundles, cfg, jobs)?;
    log::info!("training on {} samples", graphs.len());
    let mut model = ModelParams::new(cfg.model.clone(), dim, cfg.seed)?;
    let report = train(&mut model, &graphs, &cfg.train, cfg.seed)?;
    Ok((model, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Association {
    pub trajectories: Vec<Trajectory>,
    /// Tracklet count before and after each hierarchy level.
    pub level_counts: Vec<usize>,
}

/// Second stage: hierarchical merging followed by gap interpolation.
pub fn associate(tracklets: &[Tracklet], model: &ModelParams, cfg: &RunConfig, fps: f64) -> Result<Association> {
    let out = run_hierarchy(tracklets, model, &cfg.graph, &cfg.hierarchy, fps)?;
    Ok(Association {
        trajectories: out
            .trajectories
            .iter()
            .map(|t| interpolate(t, cfg.postprocess.max_gap))
            .collect(),
        level_counts: out.counts,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub tracklets: Vec<Tracklet>,
    pub association: Association,
    pub report: Option<EvalReport>,
}

/// Both stages on one sequence, evaluated when ground truth is present.
pub fn run_pipeline(bundle: &SequenceBundle, model: &ModelParams, cfg: &RunConfig) -> Result<PipelineOutput> {
    let tracklets = track(bundle, cfg)?;
    let association = associate(&tracklets, model, cfg, bundle.fps)?;
    let report = bundle
        .ground_truth
        .as_deref()
        .map(|gt| evaluate(gt, &association.trajectories, cfg.train.iou_gate));
    Ok(PipelineOutput {
        tracklets,
        association,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelHyperparameters {
    model: MpnnConfig,
    appearance_dim: usize,
}

pub fn save_model(path: &Path, model: &ModelParams) -> Result<()> {
    let hp = ModelHyperparameters {
        model: model.config.clone(),
        appearance_dim: model.appearance_dim,
    };
    save_checkpoint(path, &model.params, serde_json::to_value(hp).expect("serializable"))
}

pub fn load_model(path: &Path) -> Result<ModelParams> {
    let (params, manifest) = load_checkpoint(path)?;
    let hp: ModelHyperparameters = serde_json::from_value(manifest.hyperparameters)
        .map_err(|e| Error::Checkpoint(format!("{}: bad hyperparameters: {e}", path.display())))?;
    ModelParams::from_params(hp.model, hp.appearance_dim, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_map_keeps_order() {
        let v: Vec<u32> = (0..23).collect();
        assert_eq!(par_map(&v, 4, |x| x * 2), v.iter().map(|x| x * 2).collect::<Vec<_>>());
        assert_eq!(par_map(&v, 1, |x| x + 1)[22], 23);
    }

    #[test]
    fn model_round_trips_through_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let m = ModelParams::new(MpnnConfig::default(), 16, 4).unwrap();
        save_model(&p, &m).unwrap();
        assert_eq!(load_model(&p).unwrap(), m);
    }
}
