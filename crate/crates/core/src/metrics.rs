//! Identity metrics: IDF1, ID switches and the high purity rate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::iou;
use crate::stage1::{solve_assignment, CostMatrix};
use crate::types::{BBox, Frame, GtRecord, Tracklet};
use crate::{Error, Result};

/// Share a tracklet's modal identity must strictly exceed to count as pure.
pub const HIGH_PURITY_SHARE: f64 = 0.8;

fn active_gt(gt: &[GtRecord]) -> impl Iterator<Item = &GtRecord> {
    gt.iter().filter(|r| r.flag != 0)
}

fn gt_by_frame(gt: &[GtRecord]) -> BTreeMap<Frame, Vec<&GtRecord>> {
    let mut m: BTreeMap<Frame, Vec<&GtRecord>> = BTreeMap::new();
    for r in active_gt(gt) {
        m.entry(r.frame).or_default().push(r);
    }
    m
}

/// Per-frame `(track index, box)` lists for a set of tracks.
fn boxes_by_frame(tracks: &[Tracklet]) -> BTreeMap<Frame, Vec<(usize, BBox)>> {
    let mut m: BTreeMap<Frame, Vec<(usize, BBox)>> = BTreeMap::new();
    for (ti, t) in tracks.iter().enumerate() {
        for d in t.detections() {
            m.entry(d.frame).or_default().push((ti, d.bbox));
        }
    }
    m
}

/// Attributes every detection of every tracklet to a ground-truth identity
/// by per-frame optimal assignment on `1 - IoU`, gated at `iou_gate`.
/// `None` marks a detection matched to no identity.
pub fn attribute(tracklets: &[Tracklet], gt: &[GtRecord], iou_gate: f64) -> Vec<Vec<Option<u32>>> {
    let mut out: Vec<Vec<Option<u32>>> = tracklets.iter().map(|t| vec![None; t.len()]).collect();
    let gt = gt_by_frame(gt);
    let mut per_frame: BTreeMap<Frame, Vec<(usize, usize)>> = BTreeMap::new();
    for (ti, t) in tracklets.iter().enumerate() {
        for (k, d) in t.detections().iter().enumerate() {
            per_frame.entry(d.frame).or_default().push((ti, k));
        }
    }
    for (frame, dets) in per_frame {
        let Some(records) = gt.get(&frame) else { continue };
        let mut costs = CostMatrix::new(dets.len(), records.len());
        for (i, &(ti, k)) in dets.iter().enumerate() {
            let b = tracklets[ti].detections()[k].bbox;
            for (j, r) in records.iter().enumerate() {
                let v = iou(&b, &r.bbox);
                if v >= iou_gate {
                    costs.set(i, j, 1.0 - v);
                }
            }
        }
        for (i, j) in solve_assignment(&costs).matches {
            let (ti, k) = dets[i];
            out[ti][k] = Some(records[j].id);
        }
    }
    out
}

/// Majority identity of a tracklet's attributions. Ties go to the smaller
/// identity; `None` when unattributed detections hold the (strict) plurality.
/// Also returns the winning share.
pub fn majority_identity(attributions: &[Option<u32>]) -> (Option<u32>, f64) {
    let mut counts: BTreeMap<Option<u32>, usize> = BTreeMap::new();
    for a in attributions {
        *counts.entry(*a).or_default() += 1;
    }
    let background = counts.remove(&None).unwrap_or(0);
    let best = counts
        .iter()
        .fold(None::<(u32, usize)>, |best, (&id, &c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((id.expect("None removed"), c)),
        });
    let n = attributions.len().max(1) as f64;
    match best {
        Some((id, c)) if c >= background => (Some(id), c as f64 / n),
        _ => (None, background as f64 / n),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdScores {
    pub idf1: f64,
    pub idtp: u64,
    pub idfp: u64,
    pub idfn: u64,
}

/// Identity-level F1 under the best one-to-one mapping between ground-truth
/// and predicted identities.
///
/// A (gt, prediction) pair scores one point per frame in which both are
/// present with IoU at least `iou_gate`; the mapping maximizing the total is
/// found by linear assignment.
pub fn idf1(gt: &[GtRecord], predicted: &[Tracklet], iou_gate: f64) -> IdScores {
    let (gt_ids, pred_ids, overlap) = identity_overlap(gt, predicted, iou_gate);
    let total_gt = active_gt(gt).count() as u64;
    let total_pred: u64 = predicted.iter().map(|t| t.len() as u64).sum();
    let idtp = if gt_ids.is_empty() || pred_ids.is_empty() {
        0
    } else {
        // Every pair stays allowed (zero-overlap pairs add nothing), so the
        // full-cardinality minimum of `max - count` is the maximum overlap.
        let max = overlap.iter().flatten().copied().max().unwrap_or(0) as f64;
        let mut costs = CostMatrix::new(gt_ids.len(), pred_ids.len());
        for (i, row) in overlap.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                costs.set(i, j, max - c as f64);
            }
        }
        solve_assignment(&costs)
            .matches
            .iter()
            .map(|&(i, j)| overlap[i][j])
            .sum()
    };
    id_scores(idtp, total_gt, total_pred)
}

pub(crate) fn id_scores(idtp: u64, total_gt: u64, total_pred: u64) -> IdScores {
    let idfn = total_gt - idtp;
    let idfp = total_pred - idtp;
    let denom = 2 * idtp + idfp + idfn;
    let idf1 = if denom == 0 { 1.0 } else { 2.0 * idtp as f64 / denom as f64 };
    IdScores { idf1, idtp, idfp, idfn }
}

/// Gated co-occurrence counts between every ground-truth identity and every
/// predicted track. Returns sorted gt ids, prediction indices and the
/// `gt x prediction` count table.
pub fn identity_overlap(
    gt: &[GtRecord],
    predicted: &[Tracklet],
    iou_gate: f64,
) -> (Vec<u32>, Vec<usize>, Vec<Vec<u64>>) {
    let gt_frames = gt_by_frame(gt);
    let mut gt_ids: Vec<u32> = active_gt(gt).map(|r| r.id).collect();
    gt_ids.sort_unstable();
    gt_ids.dedup();
    let row: BTreeMap<u32, usize> = gt_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut table = vec![vec![0u64; predicted.len()]; gt_ids.len()];
    for (frame, preds) in boxes_by_frame(predicted) {
        let Some(records) = gt_frames.get(&frame) else { continue };
        for r in records {
            for &(pi, b) in &preds {
                if iou(&r.bbox, &b) >= iou_gate {
                    table[row[&r.id]][pi] += 1;
                }
            }
        }
    }
    (gt_ids, (0..predicted.len()).collect(), table)
}

/// Cost reduction for re-matching the previously matched pair, emulating
/// CLEAR-style track continuity.
const CONTINUITY_BONUS: f64 = 0.01;

/// Counts identity switches: frames where a ground-truth identity is matched
/// to a different predicted track than the one it was last matched to.
pub fn id_switches(gt: &[GtRecord], predicted: &[Tracklet], iou_gate: f64) -> u64 {
    let gt_frames = gt_by_frame(gt);
    let pred_frames = boxes_by_frame(predicted);
    let mut last: BTreeMap<u32, usize> = BTreeMap::new();
    let mut switches = 0;
    for (frame, records) in &gt_frames {
        let Some(preds) = pred_frames.get(frame) else { continue };
        let mut costs = CostMatrix::new(records.len(), preds.len());
        for (i, r) in records.iter().enumerate() {
            for (j, &(pi, b)) in preds.iter().enumerate() {
                let v = iou(&r.bbox, &b);
                if v >= iou_gate {
                    let bonus = if last.get(&r.id) == Some(&pi) { CONTINUITY_BONUS } else { 0.0 };
                    costs.set(i, j, (1.0 - v - bonus).max(0.0));
                }
            }
        }
        for (i, j) in solve_assignment(&costs).matches {
            let id = records[i].id;
            let pi = preds[j].0;
            if let Some(prev) = last.insert(id, pi) {
                if prev != pi {
                    switches += 1;
                }
            }
        }
    }
    switches
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Purity {
    /// Winning identity, `None` for background-majority tracklets.
    pub identity: Option<u32>,
    pub share: f64,
    pub high_purity: bool,
}

/// High purity rate: the fraction of tracklets whose modal identity covers
/// strictly more than 80% of their detections.
pub fn hpr(tracklets: &[Tracklet], gt: &[GtRecord], iou_gate: f64) -> Result<(f64, Vec<Purity>)> {
    if tracklets.is_empty() {
        return Err(Error::Invalid("high purity rate of an empty tracklet set".into()));
    }
    let purities: Vec<Purity> = attribute(tracklets, gt, iou_gate)
        .iter()
        .map(|a| purity_of(a))
        .collect();
    let high = purities.iter().filter(|p| p.high_purity).count();
    Ok((high as f64 / tracklets.len() as f64, purities))
}

pub fn purity_of(attributions: &[Option<u32>]) -> Purity {
    let (identity, share) = majority_identity(attributions);
    Purity {
        identity,
        share,
        high_purity: identity.is_some() && share > HIGH_PURITY_SHARE,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub idf1: f64,
    pub id_switches: u64,
    pub hpr: f64,
    pub tracklet_count: usize,
    pub idtp: u64,
    pub idfp: u64,
    pub idfn: u64,
}

pub fn evaluate(gt: &[GtRecord], predicted: &[Tracklet], iou_gate: f64) -> EvalReport {
    let ids = idf1(gt, predicted, iou_gate);
    let hpr = hpr(predicted, gt, iou_gate).map(|(h, _)| h).unwrap_or(0.0);
    EvalReport {
        idf1: ids.idf1,
        id_switches: id_switches(gt, predicted, iou_gate),
        hpr,
        tracklet_count: predicted.len(),
        idtp: ids.idtp,
        idfp: ids.idfp,
        idfn: ids.idfn,
    }
}

impl EvalReport {
    /// Aligned two-column plain-text rendering.
    pub fn to_table(&self) -> String {
        let rows = [
            ("IDF1", format!("{:.2}", self.idf1 * 100.0)),
            ("IDs", self.id_switches.to_string()),
            ("HPR", format!("{:.2}", self.hpr * 100.0)),
            ("#Tracklets", self.tracklet_count.to_string()),
            ("IDTP", self.idtp.to_string()),
            ("IDFP", self.idfp.to_string()),
            ("IDFN", self.idfn.to_string()),
        ];
        let mut s = String::new();
        for (k, v) in rows {
            s.push_str(&format!("{k:<12}{v:>12}\n"));
        }
        s
    }
}
