//! Sparse tracklet graph: candidate edge selection, raw edge features and
//! ground-truth edge labels.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::geometry::{relative_geometry, time_difference};
use crate::metrics::{attribute, majority_identity};
use crate::motion::{fit_backward, fit_forward, midframe_from_states, KalmanConfig, KalmanState};
use crate::types::{GtRecord, Tracklet};
use crate::{Error, Result};

/// Length of a raw edge feature vector.
pub const EDGE_FEATURE_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphConfig {
    /// Neighbors kept per node on each temporal side.
    pub k: usize,
    /// Detections per side compared by the local appearance similarity.
    pub l_app: usize,
    /// Weights of the time, space and appearance terms of the neighbor score.
    pub neighbor_score_weights: [f64; 3],
    pub kalman: KalmanConfig,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            k: 10,
            l_app: 5,
            neighbor_score_weights: [0.4, 0.3, 0.3],
            kalman: KalmanConfig::default(),
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.l_app == 0 {
            return Err(Error::Config(format!(
                "graph.k and graph.l_app must be at least 1, got {} and {}",
                self.k, self.l_app
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackletGraph {
    pub nodes: Vec<Tracklet>,
    /// `(earlier, later)` node indices, sorted and unique.
    pub edges: Vec<(usize, usize)>,
    pub raw_edge_features: Vec<[f64; EDGE_FEATURE_DIM]>,
    pub node_inputs: Vec<Vec<f64>>,
    /// 1.0 when both endpoints belong to the same identity.
    pub labels: Option<Vec<f64>>,
}

impl TrackletGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn appearance_dim(&self) -> usize {
        self.node_inputs.first().map_or(0, Vec::len)
    }
}

fn embeddings(t: &Tracklet) -> Result<Vec<&[f64]>> {
    t.detections()
        .iter()
        .map(|d| {
            d.embedding
                .as_deref()
                .ok_or_else(|| Error::MissingEmbedding(format!("tracklet {} at frame {}", t.id(), d.frame)))
        })
        .collect()
}

fn mean_of(rows: &[&[f64]]) -> Vec<f64> {
    let mut m = vec![0.0; rows[0].len()];
    for r in rows {
        for (a, b) in m.iter_mut().zip(r.iter()) {
            *a += b;
        }
    }
    let n = rows.len() as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mean embedding of a tracklet.
pub fn node_input(t: &Tracklet) -> Result<Vec<f64>> {
    Ok(mean_of(&embeddings(t)?))
}

/// `[distance between mean embeddings, mean pairwise cosine]`, the latter
/// over the `l_app` detections of each side nearest to the gap.
pub fn appearance_features(a: &Tracklet, b: &Tracklet, l_app: usize) -> Result<[f64; 2]> {
    if b.start() <= a.end() {
        return Err(Error::TemporalOverlap {
            end: a.end(),
            start: b.start(),
        });
    }
    let (ea, eb) = (embeddings(a)?, embeddings(b)?);
    if ea[0].len() != eb[0].len() {
        return Err(Error::DimensionMismatch {
            expected: ea[0].len(),
            got: eb[0].len(),
            context: "appearance features".into(),
        });
    }
    let dist = mean_of(&ea)
        .iter()
        .zip(mean_of(&eb))
        .map(|(x, y)| (y - x) * (y - x))
        .sum::<f64>()
        .sqrt();
    let la = l_app.max(1).min(ea.len());
    let lb = l_app.max(1).min(eb.len());
    let mut sim = 0.0;
    for x in &ea[ea.len() - la..] {
        for y in &eb[..lb] {
            sim += cosine(x, y);
        }
    }
    Ok([dist, sim / (la * lb) as f64])
}

/// Per-node Kalman fits reused by every edge touching the node.
struct NodeCache {
    forward: KalmanState,
    backward: KalmanState,
}

fn edge_feature(
    a: &Tracklet,
    b: &Tracklet,
    ca: &NodeCache,
    cb: &NodeCache,
    cfg: &GraphConfig,
    fps: f64,
) -> Result<[f64; EDGE_FEATURE_DIM]> {
    let g = relative_geometry(&a.last().bbox, &b.first().bbox);
    let dt = time_difference(a.end(), b.start(), fps)?;
    let app = appearance_features(a, b, cfg.l_app)?;
    let (_, _, motion) = midframe_from_states(&ca.forward, a.end(), &cb.backward, b.start(), &cfg.kalman)?;
    let f = [g[0], g[1], g[2], g[3], dt, app[0], app[1], motion];
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("raw edge feature"));
    }
    Ok(f)
}

/// Raw feature of the edge from `a` to the later tracklet `b`:
/// relative geometry (4), time difference (1), appearance (2), mid-frame GIoU (1).
pub fn raw_edge_feature(a: &Tracklet, b: &Tracklet, cfg: &GraphConfig, fps: f64) -> Result<[f64; EDGE_FEATURE_DIM]> {
    if b.start() <= a.end() {
        return Err(Error::TemporalOverlap {
            end: a.end(),
            start: b.start(),
        });
    }
    let ca = NodeCache {
        forward: fit_forward(a, &cfg.kalman),
        backward: fit_backward(a, &cfg.kalman),
    };
    let cb = NodeCache {
        forward: fit_forward(b, &cfg.kalman),
        backward: fit_backward(b, &cfg.kalman),
    };
    edge_feature(a, b, &ca, &cb, cfg, fps)
}

/// Scales of the neighbor score: sequence length in frames and the diagonal
/// of the region covered by all boxes.
fn score_scales(tracklets: &[Tracklet]) -> (f64, f64) {
    let start = tracklets.iter().map(Tracklet::start).min().unwrap_or(1);
    let end = tracklets.iter().map(Tracklet::end).max().unwrap_or(1);
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for d in tracklets.iter().flat_map(Tracklet::detections) {
        x0 = x0.min(d.bbox.x);
        y0 = y0.min(d.bbox.y);
        x1 = x1.max(d.bbox.right());
        y1 = y1.max(d.bbox.bottom());
    }
    let diag = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt().max(1.0);
    (f64::from(end - start + 1), diag)
}

/// Composite neighbor score of `a` followed by `b`; smaller is closer.
fn neighbor_score(a: &Tracklet, b: &Tracklet, ma: &[f64], mb: &[f64], w: &[f64; 3], scales: (f64, f64)) -> f64 {
    let gap = f64::from(b.start() - a.end()) / scales.0;
    let (xa, ya) = a.last().bbox.center();
    let (xb, yb) = b.first().bbox.center();
    let space = ((xb - xa).powi(2) + (yb - ya).powi(2)).sqrt() / scales.1;
    let app = (1.0 - cosine(ma, mb)) / 2.0;
    w[0] * gap + w[1] * space + w[2] * app
}

/// For each node, the indices of its `k` nearest successors and `k` nearest
/// predecessors under the composite score (ties by index).
pub fn select_neighbors(tracklets: &[Tracklet], cfg: &GraphConfig) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    let means: Vec<Vec<f64>> = tracklets.iter().map(node_input).collect::<Result<_>>()?;
    let scales = score_scales(tracklets);
    let w = &cfg.neighbor_score_weights;
    let n = tracklets.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut succ = Vec::new();
        let mut pred = Vec::new();
        for j in 0..n {
            let (a, b) = (&tracklets[i], &tracklets[j]);
            if a.end() < b.start() {
                succ.push((neighbor_score(a, b, &means[i], &means[j], w, scales), j));
            } else if b.end() < a.start() {
                pred.push((neighbor_score(b, a, &means[j], &means[i], w, scales), j));
            }
        }
        let top = |mut v: Vec<(f64, usize)>| -> Vec<usize> {
            v.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            v.into_iter().take(cfg.k).map(|(_, j)| j).collect()
        };
        out.push((top(succ), top(pred)));
    }
    Ok(out)
}

/// Builds the graph over `tracklets` (node order = input order).
pub fn build_graph(tracklets: &[Tracklet], cfg: &GraphConfig, fps: f64) -> Result<TrackletGraph> {
    cfg.validate()?;
    let node_inputs: Vec<Vec<f64>> = tracklets.iter().map(node_input).collect::<Result<_>>()?;
    if let Some(first) = node_inputs.first() {
        if let Some(bad) = node_inputs.iter().find(|v| v.len() != first.len()) {
            return Err(Error::DimensionMismatch {
                expected: first.len(),
                got: bad.len(),
                context: "tracklet embeddings".into(),
            });
        }
    }
    let mut edges = BTreeSet::new();
    for (i, (succ, pred)) in select_neighbors(tracklets, cfg)?.into_iter().enumerate() {
        edges.extend(succ.into_iter().map(|j| (i, j)));
        edges.extend(pred.into_iter().map(|j| (j, i)));
    }
    let edges: Vec<(usize, usize)> = edges.into_iter().collect();
    let mut used = vec![false; tracklets.len()];
    for &(a, b) in &edges {
        used[a] = true;
        used[b] = true;
    }
    let caches: Vec<Option<NodeCache>> = tracklets
        .iter()
        .zip(&used)
        .map(|(t, &u)| {
            u.then(|| NodeCache {
                forward: fit_forward(t, &cfg.kalman),
                backward: fit_backward(t, &cfg.kalman),
            })
        })
        .collect();
    let raw_edge_features = edges
        .iter()
        .map(|&(a, b)| {
            edge_feature(
                &tracklets[a],
                &tracklets[b],
                caches[a].as_ref().expect("endpoint cached"),
                caches[b].as_ref().expect("endpoint cached"),
                cfg,
                fps,
            )
        })
        .collect::<Result<_>>()?;
    Ok(TrackletGraph {
        nodes: tracklets.to_vec(),
        edges,
        raw_edge_features,
        node_inputs,
        labels: None,
    })
}

/// Ground-truth identity per node (`None` for background majorities).
pub fn node_identities(tracklets: &[Tracklet], gt: &[GtRecord], iou_gate: f64) -> Vec<Option<u32>> {
    attribute(tracklets, gt, iou_gate)
        .iter()
        .map(|a| majority_identity(a).0)
        .collect()
}

/// Labels an edge 1 when both endpoints share a non-background identity.
pub fn label_edges(mut graph: TrackletGraph, gt: &[GtRecord], iou_gate: f64) -> TrackletGraph {
    let ids = node_identities(&graph.nodes, gt, iou_gate);
    let labels = graph
        .edges
        .iter()
        .map(|&(a, b)| match (ids[a], ids[b]) {
            (Some(x), Some(y)) if x == y => 1.0,
            _ => 0.0,
        })
        .collect();
    graph.labels = Some(labels);
    graph
}

#[cfg(test)]
mod tests;
