//! Closed-form least-squares similarity alignment between corresponding 3D point sets.
//!
//! The solver works on the cross-covariance of the centered point sets. Its SVD
//! gives the rotation (with the reflection case folded back to a proper rotation),
//! and the scale is the value minimizing the squared residuals for that rotation.

use nalgebra::{DMatrix, Matrix3, Vector3};
use thiserror::Error;

use crate::geometry::RotationMatrix;

/// Relative singular-value floor below which a source set counts as collinear.
pub const COLLINEARITY_RATIO: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlignError {
    #[error("source and target lengths differ ({source_len} vs {target_len})")]
    LengthMismatch { source_len: usize, target_len: usize },
    #[error("correspondences contain non-finite coordinates")]
    NonFinite,
    #[error("degenerate configuration: points are too few, coincident or collinear")]
    DegenerateConfiguration,
    #[error("invalid similarity transform: {0}")]
    InvalidTransform(&'static str),
}

/// `p ↦ scale·R·p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    scale: f64,
    rotation: RotationMatrix,
    translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn new(scale: f64, rotation: RotationMatrix, translation: Vector3<f64>) -> Result<Self, AlignError> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(AlignError::InvalidTransform("scale must be positive and finite"));
        }
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(AlignError::InvalidTransform("translation must be finite"));
        }
        Ok(Self {
            scale,
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: RotationMatrix::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn rotation(&self) -> &RotationMatrix {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.matrix() * p * self.scale + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        let inv_scale = 1.0 / self.scale;
        Self {
            scale: inv_scale,
            rotation: rt,
            translation: -(rt.matrix() * self.translation) * inv_scale,
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.apply(&other.translation),
        }
    }
}

/// Paired source and target points, at least three of them.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondences {
    source: Vec<Vector3<f64>>,
    target: Vec<Vector3<f64>>,
}

impl Correspondences {
    pub fn new(source: Vec<Vector3<f64>>, target: Vec<Vector3<f64>>) -> Result<Self, AlignError> {
        if source.len() != target.len() {
            return Err(AlignError::LengthMismatch {
                source_len: source.len(),
                target_len: target.len(),
            });
        }
        if source.len() < 3 {
            return Err(AlignError::DegenerateConfiguration);
        }
        if source.iter().chain(&target).any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(AlignError::NonFinite);
        }
        Ok(Self { source, target })
    }

    pub fn source(&self) -> &[Vector3<f64>] {
        &self.source
    }

    pub fn target(&self) -> &[Vector3<f64>] {
        &self.target
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }
}

/// Least-squares similarity mapping `c.source` onto `c.target`.
pub fn fit_similarity(c: &Correspondences) -> Result<SimilarityTransform, AlignError> {
    fit_points(&c.source, &c.target)
}

fn centroid(points: &[Vector3<f64>]) -> Vector3<f64> {
    points.iter().fold(Vector3::zeros(), |acc, p| acc + p) / points.len() as f64
}

/// Slice-level solver shared with the scoring loop; callers guarantee equal,
/// finite inputs.
pub(crate) fn fit_points(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> Result<SimilarityTransform, AlignError> {
    debug_assert_eq!(source.len(), target.len());
    let n = source.len();
    if n < 3 {
        return Err(AlignError::DegenerateConfiguration);
    }
    let mu_s = centroid(source);
    let mu_t = centroid(target);

    let centered = DMatrix::from_fn(n, 3, |i, j| source[i][j] - mu_s[j]);
    let sv = centered.singular_values();
    let largest = sv.max();
    let second = {
        let mut v: Vec<f64> = sv.iter().copied().collect();
        v.sort_by(|a, b| b.total_cmp(a));
        v[1]
    };
    if largest.is_nan() || largest <= 0.0 || second < COLLINEARITY_RATIO * largest {
        return Err(AlignError::DegenerateConfiguration);
    }

    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, t) in source.iter().zip(target) {
        let ds = s - mu_s;
        cov += (t - mu_t) * ds.transpose();
        var_s += ds.norm_squared();
    }
    cov /= n as f64;
    var_s /= n as f64;

    let svd = cov.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let d = svd.singular_values;

    // Flip the weakest axis when the unconstrained optimum is a reflection.
    let mut signs = Vector3::new(1.0, 1.0, 1.0);
    if u.determinant() * v_t.determinant() < 0.0 {
        signs[d.imin()] = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&signs) * v_t;
    let scale = d.component_mul(&signs).sum() / var_s;
    if !(scale.is_finite() && scale > 0.0) {
        return Err(AlignError::DegenerateConfiguration);
    }
    let translation = mu_t - rotation * mu_s * scale;
    Ok(SimilarityTransform {
        scale,
        rotation: RotationMatrix::from_trusted(rotation),
        translation,
    })
}

/// `‖targetᵢ − t(sourceᵢ)‖` for every pair.
pub fn residuals(t: &SimilarityTransform, c: &Correspondences) -> Vec<f64> {
    c.source
        .iter()
        .zip(&c.target)
        .map(|(s, g)| (g - t.apply(s)).norm())
        .collect()
}
