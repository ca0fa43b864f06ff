//! First-stage association: frame-by-frame linking of detections into
//! short, high-purity tracklets.
//!
//! Each frame, active tracks are predicted one step with a Kalman filter, a
//! cost matrix against the frame's detections is built and gated at `th_c`,
//! and the assignment is solved optimally. Lowering `th_c` rejects more
//! borderline matches: tracklets get shorter but purer.

mod assignment;

pub use assignment::{solve_assignment, Assignment, CostMatrix, FORBIDDEN};

use serde::{Deserialize, Serialize};

use crate::geometry::iou;
use crate::motion::{kf_init, kf_predict, kf_update, KalmanConfig, KalmanState};
use crate::types::{BBox, Detection, Frame, SequenceBundle, Tracklet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    /// `1 - IoU` between predicted track box and detection.
    Iou,
    /// Elementwise minimum of the IoU cost and the appearance cost.
    FusedMin,
    /// `w * iou_cost + (1 - w) * appearance_cost`.
    FusedWeighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage1Config {
    /// Matching cost threshold; pairs costing more are never matched.
    pub th_c: f64,
    /// Frames a track may go unmatched before it is closed.
    pub max_age: u32,
    /// Detections below this confidence are ignored; without two-round
    /// matching every other unmatched detection starts a track.
    pub min_confidence: f64,
    pub cost_mode: CostMode,
    pub fuse_weight: f64,
    /// Match high-confidence detections first, then the rest against the
    /// still-unmatched tracks. Only high-confidence detections start tracks.
    pub byte_two_round: bool,
    pub high_confidence: f64,
    /// Exponential smoothing factor for track appearance.
    pub embedding_momentum: f64,
    pub kalman: KalmanConfig,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config {
            th_c: 0.2,
            max_age: 30,
            min_confidence: 0.1,
            cost_mode: CostMode::Iou,
            fuse_weight: 0.5,
            byte_two_round: true,
            high_confidence: 0.6,
            embedding_momentum: 0.9,
            kalman: KalmanConfig::default(),
        }
    }
}

impl Stage1Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.th_c > 0.0 && self.th_c <= 1.0) {
            return Err(Error::Config(format!("stage1.th_c must lie in (0, 1], got {}", self.th_c)));
        }
        if !(0.0..=1.0).contains(&self.fuse_weight) {
            return Err(Error::Config(format!(
                "stage1.fuse_weight must lie in [0, 1], got {}",
                self.fuse_weight
            )));
        }
        Ok(())
    }
}

/// What the cost matrix needs to know about an active track.
#[derive(Debug, Clone, Copy)]
pub struct TrackCandidate<'a> {
    /// Box predicted to the current frame.
    pub predicted: BBox,
    pub embedding: Option<&'a [f64]>,
}

/// Cosine distance mapped to `[0, 1]` as `(1 - cos) / 2`.
pub fn appearance_cost(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    ((1.0 - dot / (na * nb)) / 2.0).clamp(0.0, 1.0)
}

pub fn build_cost_matrix(
    tracks: &[TrackCandidate<'_>],
    dets: &[&Detection],
    mode: CostMode,
    cfg: &Stage1Config,
) -> Result<CostMatrix> {
    let mut m = CostMatrix::new(tracks.len(), dets.len());
    for (i, t) in tracks.iter().enumerate() {
        for (j, d) in dets.iter().enumerate() {
            let motion = 1.0 - iou(&t.predicted, &d.bbox);
            let cost = match mode {
                CostMode::Iou => motion,
                CostMode::FusedMin | CostMode::FusedWeighted => {
                    let (Some(te), Some(de)) = (t.embedding, d.embedding.as_deref()) else {
                        return Err(Error::MissingEmbedding(format!(
                            "fused cost needs embeddings (track {i}, detection frame {} index {})",
                            d.frame, d.det_index
                        )));
                    };
                    if te.len() != de.len() {
                        return Err(Error::DimensionMismatch {
                            expected: te.len(),
                            got: de.len(),
                            context: "track vs detection embedding".into(),
                        });
                    }
                    let app = appearance_cost(te, de);
                    if mode == CostMode::FusedMin {
                        motion.min(app)
                    } else {
                        cfg.fuse_weight * motion + (1.0 - cfg.fuse_weight) * app
                    }
                }
            };
            m.set(i, j, cost);
        }
    }
    m.gate(cfg.th_c);
    Ok(m)
}

struct ActiveTrack {
    detections: Vec<Detection>,
    state: KalmanState,
    embedding: Option<Vec<f64>>,
    last_matched: Frame,
}

impl ActiveTrack {
    fn start(det: &Detection) -> Self {
        ActiveTrack {
            state: kf_init(&det.bbox),
            embedding: det.embedding.as_ref().map(|e| normalized(e)),
            last_matched: det.frame,
            detections: vec![det.clone()],
        }
    }

    fn extend(&mut self, det: &Detection, cfg: &Stage1Config) {
        self.state = kf_update(&self.state, &det.bbox, &cfg.kalman);
        if let Some(de) = &det.embedding {
            let de = normalized(de);
            self.embedding = Some(match self.embedding.take() {
                Some(te) if te.len() == de.len() => {
                    let a = cfg.embedding_momentum;
                    normalized(&te.iter().zip(&de).map(|(t, d)| a * t + (1.0 - a) * d).collect::<Vec<_>>())
                }
                _ => de,
            });
        }
        self.last_matched = det.frame;
        self.detections.push(det.clone());
    }
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter().map(|x| x / n).collect()
    } else {
        v.to_vec()
    }
}

/// Matches `tracks[track_ids]` against `dets`, returning matched pairs and
/// the indices left over on both sides.
fn associate(
    tracks: &[ActiveTrack],
    track_ids: &[usize],
    dets: &[&Detection],
    mode: CostMode,
    cfg: &Stage1Config,
) -> Result<(Vec<(usize, usize)>, Vec<usize>, Vec<usize>)> {
    let candidates: Vec<TrackCandidate<'_>> = track_ids
        .iter()
        .map(|&i| TrackCandidate {
            predicted: tracks[i].state.bbox(),
            embedding: tracks[i].embedding.as_deref(),
        })
        .collect();
    let costs = build_cost_matrix(&candidates, dets, mode, cfg)?;
    let a = solve_assignment(&costs);
    Ok((
        a.matches.iter().map(|&(r, c)| (track_ids[r], c)).collect(),
        a.unmatched_rows.iter().map(|&r| track_ids[r]).collect(),
        a.unmatched_cols,
    ))
}

/// Runs the frame-by-frame tracker over a whole sequence.
///
/// Output tracklets are ordered by `(start frame, first detection index)`
/// and numbered from 1 in that order.
pub fn track_sequence(bundle: &SequenceBundle, cfg: &Stage1Config) -> Result<Vec<Tracklet>> {
    cfg.validate()?;
    let mut active: Vec<ActiveTrack> = Vec::new();
    let mut finished: Vec<Vec<Detection>> = Vec::new();

    for frame in 1..=bundle.frame_count {
        for t in &mut active {
            t.state = kf_predict(&t.state, 1, &cfg.kalman);
        }
        let dets: Vec<&Detection> = bundle
            .frame(frame)
            .iter()
            .filter(|d| d.confidence >= cfg.min_confidence)
            .collect();
        let (high, low): (Vec<&Detection>, Vec<&Detection>) = if cfg.byte_two_round {
            dets.iter().copied().partition(|d| d.confidence >= cfg.high_confidence)
        } else {
            (dets.clone(), Vec::new())
        };

        let all: Vec<usize> = (0..active.len()).collect();
        let (m1, left_tracks, left_high) = associate(&active, &all, &high, cfg.cost_mode, cfg)?;
        let mut matches: Vec<(usize, &Detection)> = m1.iter().map(|&(t, d)| (t, high[d])).collect();
        let mut unmatched: Vec<&Detection> = left_high.iter().map(|&d| high[d]).collect();
        // leftover low-confidence detections never start a track
        if !low.is_empty() {
            let (m2, _, _) = associate(&active, &left_tracks, &low, CostMode::Iou, cfg)?;
            matches.extend(m2.iter().map(|&(t, d)| (t, low[d])));
        }
        for (t, d) in matches {
            active[t].extend(d, cfg);
        }
        unmatched.sort_by_key(|d| d.det_index);
        active.extend(unmatched.into_iter().map(ActiveTrack::start));

        let (keep, closed): (Vec<ActiveTrack>, Vec<ActiveTrack>) = active
            .into_iter()
            .partition(|t| frame - t.last_matched <= cfg.max_age);
        finished.extend(closed.into_iter().map(|t| t.detections));
        active = keep;
    }
    finished.extend(active.into_iter().map(|t| t.detections));
    finished.sort_by_key(|d| (d[0].frame, d[0].det_index));
    finished
        .into_iter()
        .enumerate()
        .map(|(i, dets)| Tracklet::new(i + 1, dets))
        .collect()
}
