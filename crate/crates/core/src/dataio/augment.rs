//! Training-sample augmentation.
//!
//! Video level: clips anchored every `stride` frames with a random start
//! jitter and a random length. Tracklet level: each first-stage cost
//! threshold contributes its own tracklet set. Samples are the cross product
//! of clips and tracklet sets; tracklets are cropped to each clip.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::types::{Frame, SequenceBundle, Tracklet};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub video_level: bool,
    pub tracklet_level: bool,
    pub stride: Frame,
    pub jitter: Frame,
    pub min_fraction: f64,
    pub max_fraction: f64,
    /// Clips shorter than this after clamping are dropped.
    pub min_clip_len: Frame,
    /// First-stage thresholds used for tracklet-level augmentation.
    pub thresholds: Vec<f64>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            video_level: true,
            tracklet_level: true,
            stride: 50,
            jitter: 15,
            min_fraction: 0.25,
            max_fraction: 1.0,
            min_clip_len: 10,
            thresholds: vec![0.1, 0.2, 0.3, 0.4, 0.5],
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_fraction > 0.0 && self.min_fraction <= self.max_fraction && self.max_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "augment fractions must satisfy 0 < min <= max <= 1, got {} and {}",
                self.min_fraction, self.max_fraction
            )));
        }
        if self.stride == 0 {
            return Err(Error::Config("augment.stride must be positive".into()));
        }
        Ok(())
    }
}

/// One training sample: a (possibly cropped) sequence and a tracklet set.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub bundle: SequenceBundle,
    pub tracklets: Vec<Tracklet>,
    pub th_c: f64,
    pub window: (Frame, Frame),
}

/// Inclusive clip windows. Each anchor's window is shifted back inside the
/// sequence when it would run past the end.
pub fn clip_windows(frame_count: Frame, cfg: &AugmentConfig, rng: &mut impl Rng) -> Vec<(Frame, Frame)> {
    let n = i64::from(frame_count);
    let mut out = Vec::new();
    let mut anchor = 0i64;
    while anchor < n {
        let j = i64::from(cfg.jitter);
        let offset = if j > 0 { rng.random_range(-j..=j) } else { 0 };
        let frac = if cfg.max_fraction > cfg.min_fraction {
            rng.random_range(cfg.min_fraction..=cfg.max_fraction)
        } else {
            cfg.max_fraction
        };
        let len = ((frac * n as f64).round() as i64).clamp(1, n);
        let mut start = (1 + anchor + offset).clamp(1, n);
        if start + len - 1 > n {
            start = n - len + 1;
        }
        let end = start + len - 1;
        if len >= i64::from(cfg.min_clip_len) {
            out.push((start as Frame, end as Frame));
        }
        anchor += i64::from(cfg.stride);
    }
    out
}

/// Restricts tracklets to an inclusive frame window, dropping those left
/// empty. Ids are kept so cropped pieces remain traceable to their source.
pub fn crop_tracklets(tracklets: &[Tracklet], window: (Frame, Frame)) -> Vec<Tracklet> {
    tracklets
        .iter()
        .filter_map(|t| {
            let dets: Vec<_> = t
                .detections()
                .iter()
                .filter(|d| d.frame >= window.0 && d.frame <= window.1)
                .cloned()
                .collect();
            (!dets.is_empty()).then(|| Tracklet::new(t.id(), dets).expect("sub-sequence of a valid tracklet"))
        })
        .collect()
}

fn crop_bundle(bundle: &SequenceBundle, window: (Frame, Frame)) -> SequenceBundle {
    let detections = bundle
        .detections
        .iter()
        .enumerate()
        .map(|(i, dets)| {
            let f = i as Frame + 1;
            if f >= window.0 && f <= window.1 {
                dets.clone()
            } else {
                Vec::new()
            }
        })
        .collect();
    let ground_truth = bundle.ground_truth.as_ref().map(|gt| {
        gt.iter()
            .filter(|r| r.frame >= window.0 && r.frame <= window.1)
            .cloned()
            .collect()
    });
    SequenceBundle {
        name: format!("{}[{}-{}]", bundle.name, window.0, window.1),
        fps: bundle.fps,
        frame_count: bundle.frame_count,
        detections,
        ground_truth,
    }
}

/// Builds the sample list from pre-computed tracklet sets (one per
/// threshold). Without video-level augmentation the only clip is the whole
/// sequence.
pub fn augment(
    bundle: &SequenceBundle,
    tracklet_sets: &[(f64, Vec<Tracklet>)],
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<Vec<TrainingSample>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let windows = if cfg.video_level {
        clip_windows(bundle.frame_count, cfg, &mut rng)
    } else {
        vec![(1, bundle.frame_count)]
    };
    let mut out = Vec::with_capacity(windows.len() * tracklet_sets.len());
    for &w in &windows {
        let cropped = crop_bundle(bundle, w);
        for (th, set) in tracklet_sets {
            out.push(TrainingSample {
                bundle: cropped.clone(),
                tracklets: crop_tracklets(set, w),
                th_c: *th,
                window: w,
            });
        }
    }
    Ok(out)
}
