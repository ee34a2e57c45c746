//! Camera registration accuracy (mAA) and reconstruction merging.
//!
//! For a threshold `t`, every triplet of corresponding camera centers seeds a
//! similarity fit. The fit is scored by the number of cameras it brings within
//! `t` of their ground-truth centers, refit once on those cameras plus the seed
//! triplet, and rescored. The candidate registering the most cameras wins.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::{Pose, Scene};
use crate::horn::{fit_points, SimilarityTransform};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaaError {
    #[error("need at least 3 cameras posed in both scenes, found {found}")]
    TooFewCameras { found: usize },
    #[error("every camera triplet is degenerate")]
    NoFeasibleTriplet,
    #[error("invalid threshold list: {0}")]
    InvalidThresholds(&'static str),
}

/// Best alignment of a predicted scene onto ground truth at one threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    pub transform: SimilarityTransform,
    /// Registered image ids, in ground-truth scene order.
    pub registered_ids: Vec<String>,
    pub residual_sum: f64,
    pub threshold: f64,
    /// Indices (into the list of commonly posed cameras) of the winning seed triplet.
    pub seed_triplet: [usize; 3],
}

impl RegistrationResult {
    pub fn registered_count(&self) -> usize {
        self.registered_ids.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdAccuracy {
    pub threshold: f64,
    pub registered: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaaReport {
    pub per_threshold: Vec<ThresholdAccuracy>,
    pub maa: f64,
    pub n_cameras: usize,
}

/// Ten thresholds spaced geometrically from 0.002 to 0.2.
pub fn default_thresholds() -> Vec<f64> {
    (0..10).map(|k| 0.002 * 100f64.powf(k as f64 / 9.0)).collect()
}

/// Copy of `gt` rescaled so its camera centers have unit RMS distance from their centroid.
pub fn normalized(gt: &Scene) -> Scene {
    match gt.rms_radius() {
        Some(r) if r > 0.0 => gt.scaled(1.0 / r),
        _ => gt.clone(),
    }
}

/// Centers of cameras posed in both scenes, ordered as in `gt`.
struct Matched<'a> {
    ids: Vec<&'a str>,
    pred: Vec<Vector3<f64>>,
    gt: Vec<Vector3<f64>>,
}

fn match_centers<'a>(pred: &Scene, gt: &'a Scene) -> Matched<'a> {
    let mut m = Matched {
        ids: Vec::new(),
        pred: Vec::new(),
        gt: Vec::new(),
    };
    for im in gt.images() {
        if let (Some(g), Some(p)) = (im.pose.as_ref(), pred.pose(&im.image_id)) {
            m.ids.push(&im.image_id);
            m.pred.push(p.center());
            m.gt.push(g.center());
        }
    }
    m
}

#[derive(Debug, Clone)]
struct Candidate {
    transform: SimilarityTransform,
    registered: Vec<usize>,
    residual_sum: f64,
    triplet: [usize; 3],
}

impl Candidate {
    /// Strict preference: more cameras, then smaller residual sum, then earlier triplet.
    fn beats(&self, other: &Candidate) -> bool {
        other
            .registered
            .len()
            .cmp(&self.registered.len())
            .then(self.residual_sum.total_cmp(&other.residual_sum))
            .then(self.triplet.cmp(&other.triplet))
            .is_lt()
    }
}

fn count_registered(
    t: &SimilarityTransform,
    pred: &[Vector3<f64>],
    gt: &[Vector3<f64>],
    threshold: f64,
) -> (Vec<usize>, f64) {
    let mut registered = Vec::new();
    let mut sum = 0.0;
    for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
        let r = (g - t.apply(p)).norm();
        if r < threshold {
            registered.push(i);
            sum += r;
        }
    }
    (registered, sum)
}

fn evaluate_triplet(
    triplet: [usize; 3],
    pred: &[Vector3<f64>],
    gt: &[Vector3<f64>],
    threshold: f64,
) -> Option<Candidate> {
    let src: Vec<_> = triplet.iter().map(|&i| pred[i]).collect();
    let dst: Vec<_> = triplet.iter().map(|&i| gt[i]).collect();
    let initial = fit_points(&src, &dst).ok()?;
    let (registered, residual_sum) = count_registered(&initial, pred, gt, threshold);

    let mut support = registered.clone();
    support.extend_from_slice(&triplet);
    support.sort_unstable();
    support.dedup();
    let src: Vec<_> = support.iter().map(|&i| pred[i]).collect();
    let dst: Vec<_> = support.iter().map(|&i| gt[i]).collect();

    Some(match fit_points(&src, &dst) {
        Ok(refined) => {
            let (registered, residual_sum) = count_registered(&refined, pred, gt, threshold);
            Candidate {
                transform: refined,
                registered,
                residual_sum,
                triplet,
            }
        }
        Err(_) => Candidate {
            transform: initial,
            registered,
            residual_sum,
            triplet,
        },
    })
}

fn triplets(n: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) * n.saturating_sub(2) / 6);
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                out.push([i, j, k]);
            }
        }
    }
    out
}

fn best_candidate(pred: &[Vector3<f64>], gt: &[Vector3<f64>], threshold: f64) -> Result<Candidate, MaaError> {
    if pred.len() < 3 {
        return Err(MaaError::TooFewCameras { found: pred.len() });
    }
    // The reduction picks the maximum under a total order, so the winner does not
    // depend on how rayon splits the work.
    triplets(pred.len())
        .into_par_iter()
        .with_min_len(64)
        .filter_map(|t| evaluate_triplet(t, pred, gt, threshold))
        .reduce_with(|a, b| if b.beats(&a) { b } else { a })
        .ok_or(MaaError::NoFeasibleTriplet)
}

/// Best similarity registration of `pred` onto `gt` at `threshold`.
///
/// Cameras are paired by image id; only ids posed in both scenes take part.
pub fn best_registration(pred: &Scene, gt: &Scene, threshold: f64) -> Result<RegistrationResult, MaaError> {
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(MaaError::InvalidThresholds("thresholds must be positive and finite"));
    }
    let m = match_centers(pred, gt);
    let best = best_candidate(&m.pred, &m.gt, threshold)?;
    Ok(RegistrationResult {
        transform: best.transform,
        registered_ids: best.registered.iter().map(|&i| m.ids[i].to_owned()).collect(),
        residual_sum: best.residual_sum,
        threshold,
        seed_triplet: best.triplet,
    })
}

fn check_thresholds(thresholds: &[f64]) -> Result<(), MaaError> {
    if thresholds.is_empty() {
        return Err(MaaError::InvalidThresholds("list is empty"));
    }
    if thresholds.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(MaaError::InvalidThresholds("thresholds must be positive and finite"));
    }
    if thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MaaError::InvalidThresholds("thresholds must be strictly ascending"));
    }
    Ok(())
}

/// Mean registration accuracy of `pred` against `gt` over `thresholds`.
///
/// The denominator is the number of images in `gt`; images lacking a pose on
/// either side never register.
pub fn maa(pred: &Scene, gt: &Scene, thresholds: &[f64]) -> Result<MaaReport, MaaError> {
    check_thresholds(thresholds)?;
    let m = match_centers(pred, gt);
    let n_cameras = gt.len();
    let per_threshold = thresholds
        .iter()
        .map(|&threshold| {
            let best = best_candidate(&m.pred, &m.gt, threshold)?;
            let registered = best.registered.len();
            Ok(ThresholdAccuracy {
                threshold,
                registered,
                accuracy: registered as f64 / n_cameras as f64,
            })
        })
        .collect::<Result<Vec<_>, MaaError>>()?;
    let maa = per_threshold.iter().map(|a| a.accuracy).sum::<f64>() / per_threshold.len() as f64;
    Ok(MaaReport {
        per_threshold,
        maa,
        n_cameras,
    })
}

/// Maps every pose of `other` missing from `base` into `base`'s frame.
///
/// Returns the merged scene together with the registration used for the mapping.
/// Poses already present in `base` are left untouched.
pub fn merge_with_registration(
    base: &Scene,
    other: &Scene,
    threshold: f64,
) -> Result<(Scene, RegistrationResult), MaaError> {
    let reg = best_registration(other, base, threshold)?;
    let s = &reg.transform;
    let mut merged = base.clone();
    for im in other.images() {
        let Some(pose) = im.pose else { continue };
        let mapped = Pose::from_center(pose.rotation * s.rotation().transpose(), &s.apply(&pose.center()));
        match merged.position(&im.image_id) {
            Some(i) if merged.images()[i].pose.is_some() => {}
            Some(i) => merged.set_pose(i, mapped),
            None => merged
                .push(im.image_id.clone(), Some(mapped))
                .expect("id absent from merged scene"),
        }
    }
    Ok((merged, reg))
}

pub fn merge_reconstructions(base: &Scene, other: &Scene, threshold: f64) -> Result<Scene, MaaError> {
    merge_with_registration(base, other, threshold).map(|(scene, _)| scene)
}
