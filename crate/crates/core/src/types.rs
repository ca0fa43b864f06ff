//! Domain types shared by every stage.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Frame index. Sequences number frames from 1.
pub type Frame = u32;

/// Axis-aligned box in pixels, `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = BBox { x, y, w, h };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::InvalidBox(format!("({x}, {y}, {w}, {h})")))
        }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox {
            x: cx - w / 2.0,
            y: cy - h / 2.0,
            w,
            h,
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) && self.w > 0.0 && self.h > 0.0
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// One observed box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: Frame,
    pub bbox: BBox,
    pub confidence: f64,
    pub embedding: Option<Vec<f64>>,
    /// Position within its frame's detection list.
    pub det_index: usize,
}

impl Detection {
    pub fn new(frame: Frame, bbox: BBox, confidence: f64, det_index: usize) -> Self {
        Detection {
            frame,
            bbox,
            confidence,
            embedding: None,
            det_index,
        }
    }

    pub fn with_embedding(mut self, embedding: Vec<f64>) -> Self {
        self.embedding = Some(embedding);
        self
    }
}

/// A temporally ordered run of detections hypothesized to share one identity.
///
/// Construction rejects empty input, out-of-order frames and duplicate
/// frames instead of repairing them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracklet {
    id: usize,
    detections: Vec<Detection>,
}

/// Trajectories have the same shape and invariants as tracklets.
pub type Trajectory = Tracklet;

impl Tracklet {
    pub fn new(id: usize, detections: Vec<Detection>) -> Result<Self> {
        if detections.is_empty() {
            return Err(Error::InvalidTracklet(format!("tracklet {id} is empty")));
        }
        for pair in detections.windows(2) {
            if pair[1].frame <= pair[0].frame {
                return Err(Error::InvalidTracklet(format!(
                    "tracklet {id}: frame {} follows frame {}",
                    pair[1].frame, pair[0].frame
                )));
            }
        }
        Ok(Tracklet { id, detections })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn with_id(mut self, id: usize) -> Self {
        self.id = id;
        self
    }

    pub fn detections(&self) -> &[Detection] {
        &self.detections
    }

    pub fn into_detections(self) -> Vec<Detection> {
        self.detections
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn start(&self) -> Frame {
        self.detections[0].frame
    }

    pub fn end(&self) -> Frame {
        self.detections[self.detections.len() - 1].frame
    }

    pub fn first(&self) -> &Detection {
        &self.detections[0]
    }

    pub fn last(&self) -> &Detection {
        &self.detections[self.detections.len() - 1]
    }

    /// True when the frame ranges `[start, end]` intersect.
    pub fn overlaps(&self, other: &Tracklet) -> bool {
        self.start() <= other.end() && other.start() <= self.end()
    }

    pub fn has_embeddings(&self) -> bool {
        self.detections.iter().all(|d| d.embedding.is_some())
    }
}

/// One ground-truth annotation line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtRecord {
    pub frame: Frame,
    pub id: u32,
    pub bbox: BBox,
    /// MOTChallenge "consider" flag; zero marks an ignored record.
    pub flag: i64,
    pub class: i64,
    pub visibility: f64,
}

/// Detections, optional ground truth and metadata for one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceBundle {
    pub name: String,
    pub fps: f64,
    pub frame_count: Frame,
    /// `detections[f - 1]` holds the detections of frame `f`.
    pub detections: Vec<Vec<Detection>>,
    pub ground_truth: Option<Vec<GtRecord>>,
}

impl SequenceBundle {
    /// Builds a bundle from a flat detection list, grouping by frame.
    pub fn from_detections(
        name: impl Into<String>,
        fps: f64,
        frame_count: Frame,
        detections: Vec<Detection>,
    ) -> Self {
        let mut per_frame = vec![Vec::new(); frame_count as usize];
        for d in detections {
            if d.frame >= 1 && d.frame <= frame_count {
                per_frame[d.frame as usize - 1].push(d);
            }
        }
        SequenceBundle {
            name: name.into(),
            fps,
            frame_count,
            detections: per_frame,
            ground_truth: None,
        }
    }

    pub fn frame(&self, frame: Frame) -> &[Detection] {
        match (frame as usize).checked_sub(1) {
            Some(i) if i < self.detections.len() => &self.detections[i],
            _ => &[],
        }
    }

    pub fn detection_count(&self) -> usize {
        self.detections.iter().map(Vec::len).sum()
    }

    /// Appearance dimension of the first embedded detection, if any.
    pub fn embedding_dim(&self) -> Option<usize> {
        self.detections
            .iter()
            .flatten()
            .find_map(|d| d.embedding.as_ref().map(Vec::len))
    }
}

/// Lists every invariant violation of a bundle; empty means well-formed.
pub fn validate_bundle(bundle: &SequenceBundle) -> Vec<String> {
    let mut out = Vec::new();
    if !(bundle.fps.is_finite() && bundle.fps > 0.0) {
        out.push(format!("fps must be positive, got {}", bundle.fps));
    }
    if bundle.detections.len() > bundle.frame_count as usize {
        out.push(format!(
            "{} per-frame detection lists for a {}-frame sequence",
            bundle.detections.len(),
            bundle.frame_count
        ));
    }
    let mut dim: Option<usize> = None;
    let mut mismatched = Vec::new();
    for (slot, frame_dets) in bundle.detections.iter().enumerate() {
        for d in frame_dets {
            let name = format!("detection (frame {}, index {})", d.frame, d.det_index);
            if d.frame < 1 || d.frame > bundle.frame_count {
                out.push(format!(
                    "{name}: frame outside [1, {}]",
                    bundle.frame_count
                ));
            } else if d.frame as usize != slot + 1 {
                out.push(format!("{name}: stored under frame {}", slot + 1));
            }
            if !d.bbox.is_valid() {
                out.push(format!("{name}: invalid box {:?}", d.bbox));
            }
            if !(0.0..=1.0).contains(&d.confidence) {
                out.push(format!("{name}: confidence {} outside [0, 1]", d.confidence));
            }
            if let Some(e) = &d.embedding {
                match dim {
                    None => dim = Some(e.len()),
                    Some(k) if k != e.len() => mismatched.push((name, e.len())),
                    _ => {}
                }
            }
        }
    }
    if let (Some(k), Some((first, got))) = (dim, mismatched.first()) {
        out.push(format!(
            "D_app mismatch: sequence dimension {k}, but {} detection(s) differ (first: {first} has {got})",
            mismatched.len()
        ));
    }
    if let Some(gt) = &bundle.ground_truth {
        for r in gt {
            if r.frame < 1 || r.frame > bundle.frame_count {
                out.push(format!(
                    "ground truth (frame {}, id {}): frame outside [1, {}]",
                    r.frame, r.id, bundle.frame_count
                ));
            }
            if !r.bbox.is_valid() {
                out.push(format!(
                    "ground truth (frame {}, id {}): invalid box",
                    r.frame, r.id
                ));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(frame: Frame, i: usize) -> Detection {
        Detection::new(frame, BBox::new(0.0, 0.0, 10.0, 20.0).unwrap(), 0.9, i)
    }

    fn bundle() -> SequenceBundle {
        SequenceBundle::from_detections("s", 25.0, 3, vec![det(1, 0), det(2, 0), det(3, 0)])
    }

    #[test]
    fn well_formed_bundle_has_no_violations() {
        assert!(validate_bundle(&bundle()).is_empty());
    }

    #[test]
    fn frame_zero_is_reported() {
        let mut b = bundle();
        b.detections[0].push(det(0, 1));
        let v = validate_bundle(&b);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].contains("frame 0, index 1"));
    }

    #[test]
    fn frame_zero_only_violation_when_slot_consistent() {
        let mut b = bundle();
        b.detections[0][0].frame = 0;
        let v = validate_bundle(&b);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].contains("frame 0"));
    }

    #[test]
    fn mixed_embedding_dims_give_one_violation() {
        let mut b = bundle();
        b.detections[0][0].embedding = Some(vec![0.0; 8]);
        b.detections[1][0].embedding = Some(vec![0.0; 16]);
        b.detections[2][0].embedding = Some(vec![0.0; 16]);
        let v = validate_bundle(&b);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].contains("D_app"));
    }

    #[test]
    fn tracklet_rejects_unsorted_and_duplicate_frames() {
        assert!(Tracklet::new(0, vec![det(2, 0), det(1, 0)]).is_err());
        assert!(Tracklet::new(0, vec![det(1, 0), det(1, 1)]).is_err());
        assert!(Tracklet::new(0, vec![]).is_err());
        let t = Tracklet::new(4, vec![det(1, 0), det(3, 0)]).unwrap();
        assert_eq!((t.start(), t.end(), t.len()), (1, 3, 2));
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(BBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BBox::new(0.0, f64::NAN, 1.0, 1.0).is_err());
        assert!(BBox::new(-5.0, -5.0, 1.0, 1.0).is_ok());
    }
}
