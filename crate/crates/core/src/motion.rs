//! Constant-velocity Kalman filter over `(cx, cy, w, h)` and their per-frame
//! velocities.
//!
//! Noise standard deviations scale with the current box height, the usual
//! SORT-family convention. The filter is used twice: to predict tracks in
//! the frame-by-frame tracker, and to extrapolate two tracklets towards the
//! middle of the gap between them.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::geometry::giou;
use crate::types::{BBox, Frame, Tracklet};
use crate::{Error, Result};

type Vec8 = SVector<f64, 8>;
type Mat8 = SMatrix<f64, 8, 8>;
type Mat4 = SMatrix<f64, 4, 4>;
type Mat48 = SMatrix<f64, 4, 8>;

const MIN_SIZE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KalmanConfig {
    /// Process noise on position/size, as a fraction of box height.
    pub std_weight_position: f64,
    /// Process noise on velocities, as a fraction of box height.
    pub std_weight_velocity: f64,
    /// Measurement noise, as a fraction of box height.
    pub std_weight_measurement: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        KalmanConfig {
            std_weight_position: 1.0 / 20.0,
            std_weight_velocity: 1.0 / 160.0,
            std_weight_measurement: 1.0 / 20.0,
        }
    }
}

impl KalmanConfig {
    /// A filter that trusts its measurements and model exactly.
    pub fn noiseless() -> Self {
        KalmanConfig {
            std_weight_position: 0.0,
            std_weight_velocity: 0.0,
            std_weight_measurement: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: Vec8,
    pub covariance: Mat8,
}

impl KalmanState {
    pub fn bbox(&self) -> BBox {
        BBox::from_center(
            self.mean[0],
            self.mean[1],
            self.mean[2].max(MIN_SIZE),
            self.mean[3].max(MIN_SIZE),
        )
    }

    fn height(&self) -> f64 {
        self.mean[3].max(MIN_SIZE)
    }
}

fn observation() -> Mat48 {
    let mut h = Mat48::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    h
}

fn measurement(b: &BBox) -> SVector<f64, 4> {
    let (cx, cy) = b.center();
    SVector::<f64, 4>::new(cx, cy, b.w, b.h)
}

fn symmetrize(m: &mut Mat8) {
    *m = (*m + m.transpose()) * 0.5;
}

pub fn kf_init(b: &BBox) -> KalmanState {
    // Init covariance uses fixed floor weights, so even a noiseless
    // configuration starts with an invertible innovation covariance.
    let (cx, cy) = b.center();
    let mean = Vec8::from_column_slice(&[cx, cy, b.w, b.h, 0.0, 0.0, 0.0, 0.0]);
    let pos = 2.0 * b.h / 20.0;
    let vel = 10.0 * b.h / 160.0;
    let mut diag = Vec8::zeros();
    for i in 0..4 {
        diag[i] = pos * pos;
        diag[i + 4] = vel * vel;
    }
    KalmanState {
        mean,
        covariance: Mat8::from_diagonal(&diag),
    }
}

/// Extrapolates `steps` frames ahead, adding process noise per step.
pub fn kf_predict(state: &KalmanState, steps: u32, cfg: &KalmanConfig) -> KalmanState {
    let mut f = Mat8::identity();
    for i in 0..4 {
        f[(i, i + 4)] = 1.0;
    }
    let mut s = state.clone();
    for _ in 0..steps {
        let h = s.height();
        let p = cfg.std_weight_position * h;
        let v = cfg.std_weight_velocity * h;
        let mut q = Vec8::zeros();
        for i in 0..4 {
            q[i] = p * p;
            q[i + 4] = v * v;
        }
        s.mean = f * s.mean;
        s.covariance = f * s.covariance * f.transpose() + Mat8::from_diagonal(&q);
        symmetrize(&mut s.covariance);
    }
    s
}

/// Kalman correction with a Joseph-form covariance update.
pub fn kf_update(state: &KalmanState, meas: &BBox, cfg: &KalmanConfig) -> KalmanState {
    let hm = observation();
    let r_std = cfg.std_weight_measurement * state.height();
    let r = Mat4::identity() * (r_std * r_std);
    let innovation_cov = hm * state.covariance * hm.transpose() + r;
    let inv = innovation_cov
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .unwrap_or_else(|| {
            innovation_cov
                .pseudo_inverse(1e-15)
                .unwrap_or_else(|_| Mat4::zeros())
        });
    let gain = state.covariance * hm.transpose() * inv;
    let residual = measurement(meas) - hm * state.mean;
    let mut mean = state.mean + gain * residual;
    mean[2] = mean[2].max(MIN_SIZE);
    mean[3] = mean[3].max(MIN_SIZE);
    let ikh = Mat8::identity() - gain * hm;
    let mut covariance = ikh * state.covariance * ikh.transpose() + gain * r * gain.transpose();
    symmetrize(&mut covariance);
    KalmanState { mean, covariance }
}

/// Runs a filter over `(frame, box)` observations in the given order and
/// returns the state at the last observation. Frames must be strictly
/// monotone in the direction of travel.
fn fit<'a>(obs: impl Iterator<Item = (Frame, &'a BBox)>, cfg: &KalmanConfig) -> Option<(Frame, KalmanState)> {
    let mut cur: Option<(Frame, KalmanState)> = None;
    for (frame, b) in obs {
        cur = Some(match cur {
            None => (frame, kf_init(b)),
            Some((last, s)) => {
                let steps = frame.abs_diff(last);
                (frame, kf_update(&kf_predict(&s, steps, cfg), b, cfg))
            }
        });
    }
    cur
}

/// Filter state after a forward pass over the tracklet, at its last frame.
pub fn fit_forward(t: &Tracklet, cfg: &KalmanConfig) -> KalmanState {
    fit(t.detections().iter().map(|d| (d.frame, &d.bbox)), cfg)
        .expect("tracklets are non-empty")
        .1
}

/// Filter state after a time-reversed pass, at the tracklet's first frame.
/// Velocities are expressed per reversed frame.
pub fn fit_backward(t: &Tracklet, cfg: &KalmanConfig) -> KalmanState {
    fit(t.detections().iter().rev().map(|d| (d.frame, &d.bbox)), cfg)
        .expect("tracklets are non-empty")
        .1
}

/// Middle frame of the gap, rounded to the nearest frame with ties towards
/// the end of the earlier tracklet.
pub fn mid_frame(end_a: Frame, start_b: Frame) -> Frame {
    end_a + (start_b - end_a) / 2
}

/// Extrapolates pre-fitted forward/backward states to the gap's middle frame
/// and scores their agreement with GIoU.
pub fn midframe_from_states(
    forward_a: &KalmanState,
    end_a: Frame,
    backward_b: &KalmanState,
    start_b: Frame,
    cfg: &KalmanConfig,
) -> Result<(BBox, BBox, f64)> {
    if start_b <= end_a {
        return Err(Error::TemporalOverlap {
            end: end_a,
            start: start_b,
        });
    }
    let mid = mid_frame(end_a, start_b);
    let pa = if mid > end_a {
        kf_predict(forward_a, mid - end_a, cfg)
    } else {
        forward_a.clone()
    };
    let pb = kf_predict(backward_b, start_b - mid, cfg);
    let (ba, bb) = (pa.bbox(), pb.bbox());
    Ok((ba, bb, giou(&ba, &bb)))
}

/// Predicts both tracklets to the middle of the gap between them (forward
/// for the earlier one, backward for the later one) and returns the two
/// boxes with their GIoU as a motion-consistency score.
pub fn predict_to_midframe(a: &Tracklet, b: &Tracklet, cfg: &KalmanConfig) -> Result<(BBox, BBox, f64)> {
    if b.start() <= a.end() {
        return Err(Error::TemporalOverlap {
            end: a.end(),
            start: b.start(),
        });
    }
    midframe_from_states(&fit_forward(a, cfg), a.end(), &fit_backward(b, cfg), b.start(), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Detection;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn track(frames: impl Iterator<Item = Frame>, f: impl Fn(Frame) -> BBox) -> Tracklet {
        let dets = frames.map(|t| Detection::new(t, f(t), 1.0, 0)).collect();
        Tracklet::new(0, dets).unwrap()
    }

    fn sym_err(m: &Mat8) -> f64 {
        (m - m.transpose()).abs().max()
    }

    #[test]
    fn init_examples() {
        let s = kf_init(&BBox::new(0.0, 0.0, 2.0, 2.0).unwrap());
        assert_eq!(s.mean.as_slice(), &[1.0, 1.0, 2.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(sym_err(&s.covariance), 0.0);
        assert_eq!(s, kf_init(&BBox::new(0.0, 0.0, 2.0, 2.0).unwrap()));
    }

    #[test]
    fn predict_is_linear_extrapolation() {
        let cfg = KalmanConfig::default();
        let s = kf_init(&BBox::from_center(0.0, 5.0, 2.0, 4.0));
        assert_eq!(kf_predict(&s, 9, &cfg).mean, s.mean);
        let mut moving = s.clone();
        moving.mean[4] = 1.0;
        assert_eq!(kf_predict(&moving, 7, &cfg).mean[0], 7.0);
        let twice = kf_predict(&kf_predict(&moving, 1, &cfg), 1, &cfg);
        assert_eq!(twice.mean, kf_predict(&moving, 2, &cfg).mean);
    }

    #[test]
    fn update_with_tiny_noise_tracks_measurement() {
        let cfg = KalmanConfig {
            std_weight_measurement: 1e-9,
            ..KalmanConfig::default()
        };
        let s = kf_init(&BBox::from_center(10.0, 10.0, 4.0, 8.0));
        let meas = BBox::from_center(12.0, 9.0, 4.5, 8.5);
        let post = kf_update(&s, &meas, &cfg);
        let b = post.bbox();
        let (cx, cy) = b.center();
        for (a, e) in [(cx, 12.0), (cy, 9.0), (b.w, 4.5), (b.h, 8.5)] {
            assert!((a - e).abs() < 1e-6, "{a} vs {e}");
        }
        assert!(post.covariance.trace() <= s.covariance.trace());
        assert!(sym_err(&post.covariance) < 1e-9);
    }

    #[test]
    fn constant_measurement_drives_velocity_to_zero() {
        let cfg = KalmanConfig::default();
        let b = BBox::from_center(50.0, 60.0, 10.0, 20.0);
        let mut s = kf_init(&b);
        s.mean[4] = 3.0;
        for _ in 0..300 {
            s = kf_update(&kf_predict(&s, 1, &cfg), &b, &cfg);
        }
        for i in 4..8 {
            assert!(s.mean[i].abs() < 1e-3, "velocity {i} = {}", s.mean[i]);
        }
    }

    #[test]
    fn noiseless_filter_is_exact_after_warmup() {
        let cfg = KalmanConfig::noiseless();
        let truth = |t: Frame| {
            let t = f64::from(t);
            BBox::from_center(3.0 + 1.5 * t, 7.0 - 0.5 * t, 10.0 + 0.1 * t, 20.0 + 0.2 * t)
        };
        let mut s = kf_init(&truth(1));
        for t in 2..=3 {
            s = kf_update(&kf_predict(&s, 1, &cfg), &truth(t), &cfg);
        }
        for ahead in [1, 5, 40] {
            let p = kf_predict(&s, ahead, &cfg).bbox();
            let g = truth(3 + ahead);
            for (a, e) in [(p.x, g.x), (p.y, g.y), (p.w, g.w), (p.h, g.h)] {
                assert!((a - e).abs() < 1e-9, "{ahead}: {a} vs {e}");
            }
        }
    }

    #[test]
    fn covariance_stays_symmetric_psd() {
        let cfg = KalmanConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = kf_init(&BBox::from_center(100.0, 100.0, 30.0, 60.0));
        for _ in 0..1000 {
            s = kf_predict(&s, rng.random_range(1..4), &cfg);
            if rng.random_bool(0.8) {
                let meas = BBox::from_center(
                    100.0 + rng.random_range(-20.0..20.0),
                    100.0 + rng.random_range(-20.0..20.0),
                    rng.random_range(20.0..40.0),
                    rng.random_range(40.0..80.0),
                );
                s = kf_update(&s, &meas, &cfg);
            }
            assert!(sym_err(&s.covariance) < 1e-9);
            let eig = s.covariance.symmetric_eigenvalues();
            assert!(eig.iter().all(|&e| e >= -1e-9), "{eig}");
        }
    }

    #[test]
    fn midframe_split_constant_velocity_track() {
        let truth = |t: Frame| BBox::from_center(f64::from(t), 0.0, 2.0, 2.0);
        let a = track(0..=4, truth);
        let b = track(10..=14, truth);
        let (pa, pb, g) = predict_to_midframe(&a, &b, &KalmanConfig::noiseless()).unwrap();
        assert!((pa.center().0 - 7.0).abs() < 1e-6);
        assert!((pb.center().0 - 7.0).abs() < 1e-6);
        assert!((g - 1.0).abs() < 1e-6);
    }

    #[test]
    fn midframe_diverging_tracks_score_negative() {
        let a = track(1..=10, |t| BBox::from_center(100.0 + 5.0 * f64::from(t), 50.0, 10.0, 20.0));
        let b = track(20..=30, |t| BBox::from_center(500.0 + 5.0 * f64::from(t), 50.0, 10.0, 20.0));
        let (_, _, g) = predict_to_midframe(&a, &b, &KalmanConfig::default()).unwrap();
        assert!(g < 0.0, "{g}");
    }

    #[test]
    fn midframe_adjacent_static_tracks_agree() {
        let still = |_| BBox::from_center(40.0, 40.0, 10.0, 20.0);
        let a = track(1..=5, still);
        let b = track(6..=9, still);
        let (_, _, g) = predict_to_midframe(&a, &b, &KalmanConfig::default()).unwrap();
        assert!(g >= 0.9, "{g}");
    }

    #[test]
    fn midframe_rejects_overlap() {
        let still = |_| BBox::from_center(40.0, 40.0, 10.0, 20.0);
        let a = track(1..=5, still);
        let b = track(5..=9, still);
        assert!(predict_to_midframe(&a, &b, &KalmanConfig::default()).is_err());
    }

    #[test]
    fn mid_frame_rounding_ties_down() {
        assert_eq!(mid_frame(4, 10), 7);
        assert_eq!(mid_frame(4, 9), 6);
        assert_eq!(mid_frame(4, 5), 4);
    }
}
