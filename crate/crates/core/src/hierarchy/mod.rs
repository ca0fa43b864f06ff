//! Hierarchical association: score graph edges, round the scores to a
//! consistent set of merges, merge chains of tracklets, rebuild the graph
//! and repeat; then fill short gaps by linear interpolation.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mpnn::{score_edges, ModelParams};
use crate::tgraph::{build_graph, label_edges, GraphConfig, TrackletGraph};
use crate::types::{BBox, Detection, GtRecord, Tracklet, Trajectory};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HierarchyConfig {
    /// Levels run at inference; may be fewer than the model was trained for.
    pub levels: usize,
    /// Edges scoring strictly above this are merge candidates.
    pub threshold: f64,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        HierarchyConfig {
            levels: 3,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostprocessConfig {
    /// Longest run of missing frames filled by interpolation.
    pub max_gap: u32,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig { max_gap: 20 }
    }
}

/// Accepted `(earlier, later)` node-index pairs with their scores.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MergeDecision {
    pub accepted: Vec<(usize, usize)>,
    pub scores: Vec<f64>,
}

/// Greedy rounding: edges above `threshold` in descending score order (ties
/// by earlier then later tracklet id) are accepted while both the earlier
/// node's successor slot and the later node's predecessor slot are free.
/// Since every edge points forward in time, the resulting chains never
/// overlap themselves.
pub fn round_edges(graph: &TrackletGraph, scores: &[f64], threshold: f64) -> Result<MergeDecision> {
    if scores.len() != graph.edge_count() {
        return Err(Error::DimensionMismatch {
            expected: graph.edge_count(),
            got: scores.len(),
            context: "edge scores".into(),
        });
    }
    let id = |i: usize| graph.nodes[i].id();
    let mut order: Vec<usize> = (0..scores.len()).filter(|&e| scores[e] > threshold).collect();
    order.sort_by(|&x, &y| {
        let (a, b) = (graph.edges[x], graph.edges[y]);
        scores[y]
            .partial_cmp(&scores[x])
            .unwrap_or(Ordering::Equal)
            .then(id(a.0).cmp(&id(b.0)))
            .then(id(a.1).cmp(&id(b.1)))
            .then(x.cmp(&y))
    });
    let n = graph.node_count();
    let mut has_succ = vec![false; n];
    let mut has_pred = vec![false; n];
    let mut out = MergeDecision::default();
    for e in order {
        let (a, b) = graph.edges[e];
        if has_succ[a] || has_pred[b] || graph.nodes[a].end() >= graph.nodes[b].start() {
            continue;
        }
        has_succ[a] = true;
        has_pred[b] = true;
        out.accepted.push((a, b));
        out.scores.push(scores[e]);
    }
    Ok(out)
}

/// Concatenates each accepted chain into one tracklet. Output ids are
/// 1-based and ordered by (start frame, position of the chain head).
pub fn merge_tracklets(tracklets: &[Tracklet], decision: &MergeDecision) -> Result<Vec<Tracklet>> {
    let n = tracklets.len();
    let mut succ = vec![None; n];
    let mut has_pred = vec![false; n];
    for &(a, b) in &decision.accepted {
        if a >= n || b >= n {
            return Err(Error::Invalid(format!("merge edge ({a}, {b}) outside {n} tracklets")));
        }
        if succ[a].is_some() || has_pred[b] {
            return Err(Error::Invalid(format!("tracklet in edge ({a}, {b}) merged twice")));
        }
        succ[a] = Some(b);
        has_pred[b] = true;
    }
    let mut chains: Vec<(u32, usize, Vec<Detection>)> = Vec::new();
    let mut visited = 0;
    for head in (0..n).filter(|&i| !has_pred[i]) {
        let mut dets = Vec::new();
        let mut cur = Some(head);
        while let Some(i) = cur {
            let t = &tracklets[i];
            if let Some(last) = dets.last().map(|d: &Detection| d.frame) {
                if t.start() <= last {
                    return Err(Error::TemporalOverlap {
                        end: last,
                        start: t.start(),
                    });
                }
            }
            dets.extend_from_slice(t.detections());
            visited += 1;
            cur = succ[i];
        }
        chains.push((tracklets[head].start(), head, dets));
    }
    if visited != n {
        return Err(Error::Invalid("merge decision contains a cycle".into()));
    }
    chains.sort_by_key(|c| (c.0, c.1));
    chains
        .into_iter()
        .enumerate()
        .map(|(i, (_, _, dets))| Tracklet::new(i + 1, dets))
        .collect()
}

/// Source of edge scores for one hierarchy level.
pub trait EdgeScorer {
    fn score(&self, graph: &TrackletGraph, level: usize) -> Result<Vec<f64>>;
}

impl EdgeScorer for ModelParams {
    fn score(&self, graph: &TrackletGraph, level: usize) -> Result<Vec<f64>> {
        score_edges(self, graph, level)
    }
}

/// Scores every edge with its ground-truth label.
#[derive(Debug, Clone, Copy)]
pub struct OracleScorer<'a> {
    pub ground_truth: &'a [GtRecord],
    pub iou_gate: f64,
}

impl EdgeScorer for OracleScorer<'_> {
    fn score(&self, graph: &TrackletGraph, _level: usize) -> Result<Vec<f64>> {
        let labeled = label_edges(graph.clone(), self.ground_truth, self.iou_gate);
        Ok(labeled.labels.unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyOutput {
    pub trajectories: Vec<Trajectory>,
    /// Tracklet count before the first level and after each level run.
    pub counts: Vec<usize>,
}

/// Runs `cfg.levels` rounds of build, score, round and merge.
pub fn run_hierarchy(
    tracklets: &[Tracklet],
    scorer: &dyn EdgeScorer,
    graph_cfg: &GraphConfig,
    cfg: &HierarchyConfig,
    fps: f64,
) -> Result<HierarchyOutput> {
    let mut current = tracklets.to_vec();
    let mut counts = vec![current.len()];
    for level in 0..cfg.levels {
        if current.len() >= 2 {
            let graph = build_graph(&current, graph_cfg, fps)?;
            let scores = scorer.score(&graph, level)?;
            let decision = round_edges(&graph, &scores, cfg.threshold)?;
            log::debug!(
                "level {level}: {} nodes, {} edges, {} merges",
                graph.node_count(),
                graph.edge_count(),
                decision.accepted.len()
            );
            current = merge_tracklets(&current, &decision)?;
        }
        counts.push(current.len());
    }
    Ok(HierarchyOutput {
        trajectories: current,
        counts,
    })
}

/// Labeled graphs for each training level. The next level's tracklets come
/// from merging along ground-truth positive edges, each kept with
/// probability `merge_prob`, so that later levels still see positives the
/// way they do after an imperfect classifier.
#[allow(clippy::too_many_arguments)]
pub fn teacher_forced_levels(
    tracklets: &[Tracklet],
    gt: &[GtRecord],
    graph_cfg: &GraphConfig,
    levels: usize,
    fps: f64,
    iou_gate: f64,
    merge_prob: f64,
    seed: u64,
) -> Result<Vec<TrackletGraph>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current = tracklets.to_vec();
    let mut out = Vec::with_capacity(levels);
    for _ in 0..levels {
        if current.is_empty() {
            break;
        }
        let graph = label_edges(build_graph(&current, graph_cfg, fps)?, gt, iou_gate);
        let kept: Vec<f64> = graph
            .labels
            .iter()
            .flatten()
            .map(|&y| if y > 0.5 && rng.random_bool(merge_prob) { 1.0 } else { 0.0 })
            .collect();
        let decision = round_edges(&graph, &kept, 0.5)?;
        current = merge_tracklets(&current, &decision)?;
        out.push(graph);
    }
    Ok(out)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Fills every internal gap of at most `max_gap` missing frames with boxes
/// interpolated linearly per coordinate. Filled detections carry the lower
/// flanking confidence, no embedding and `usize::MAX` as detection index.
pub fn interpolate(trajectory: &Trajectory, max_gap: u32) -> Trajectory {
    let dets = trajectory.detections();
    let mut out = Vec::with_capacity(dets.len());
    for (i, d) in dets.iter().enumerate() {
        if i > 0 {
            let p = &dets[i - 1];
            let missing = d.frame - p.frame - 1;
            if missing >= 1 && missing <= max_gap {
                let span = f64::from(d.frame - p.frame);
                for f in p.frame + 1..d.frame {
                    let t = f64::from(f - p.frame) / span;
                    let bbox = BBox {
                        x: lerp(p.bbox.x, d.bbox.x, t),
                        y: lerp(p.bbox.y, d.bbox.y, t),
                        w: lerp(p.bbox.w, d.bbox.w, t),
                        h: lerp(p.bbox.h, d.bbox.h, t),
                    };
                    out.push(Detection::new(f, bbox, p.confidence.min(d.confidence), usize::MAX));
                }
            }
        }
        out.push(d.clone());
    }
    Tracklet::new(trajectory.id(), out).expect("interpolation preserves frame order")
}
