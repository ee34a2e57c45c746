//! Camera parameterization and scene containers.
//!
//! Poses follow the world-to-camera convention `x_cam = R·x_world + T`, so the
//! camera center in world coordinates is `C = -Rᵀ·T`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Tolerance applied to rotations built in memory.
pub const ROTATION_TOL: f64 = 1e-9;

pub type CameraCenter = Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("matrix is not a proper rotation within tolerance {tol:e}")]
    InvalidRotation { tol: f64 },
    #[error("translation has non-finite components")]
    NonFiniteTranslation,
    #[error("duplicate image id `{0}` in scene")]
    DuplicateImage(String),
}

/// Returns true iff `m` is orthonormal and has determinant +1, both within `tol`.
///
/// Orthonormality is measured as the largest absolute entry of `mᵀm − I`.
pub fn validate_rotation(m: &Matrix3<f64>, tol: f64) -> bool {
    if m.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let gram = m.transpose() * m - Matrix3::identity();
    gram.amax() <= tol && (m.determinant() - 1.0).abs() <= tol
}

/// A proper rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn new(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        Self::with_tolerance(m, ROTATION_TOL)
    }

    /// Accepts `m` under a caller-chosen tolerance. Used when reading
    /// serialized poses, whose decimals carry less precision.
    pub fn with_tolerance(m: Matrix3<f64>, tol: f64) -> Result<Self, GeometryError> {
        if validate_rotation(&m, tol) {
            Ok(Self(m))
        } else {
            Err(GeometryError::InvalidRotation { tol })
        }
    }

    /// Wraps a matrix known to be a rotation by construction.
    pub(crate) fn from_trusted(m: Matrix3<f64>) -> Self {
        debug_assert!(validate_rotation(&m, 1e-6));
        Self(m)
    }

    /// Rotation by `angle` radians about the z axis.
    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// Row-major entries.
    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }
}

impl std::ops::Mul for RotationMatrix {
    type Output = RotationMatrix;

    fn mul(self, rhs: RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * rhs.0)
    }
}

/// Uniformly distributed random rotation.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> RotationMatrix {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let u3: f64 = rng.random();
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let q = nalgebra::Quaternion::new(
        b * (2.0 * PI * u3).cos(),
        a * (2.0 * PI * u2).sin(),
        a * (2.0 * PI * u2).cos(),
        b * (2.0 * PI * u3).sin(),
    );
    let r = UnitQuaternion::from_quaternion(q).to_rotation_matrix();
    RotationMatrix::from_trusted(r.into_inner())
}

/// Extrinsics of one camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: RotationMatrix,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: RotationMatrix, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFiniteTranslation);
        }
        Ok(Self { rotation, translation })
    }

    /// Pose whose camera sits at `center` with the given orientation.
    pub fn from_center(rotation: RotationMatrix, center: &CameraCenter) -> Self {
        Self {
            rotation,
            translation: -(rotation.matrix() * center),
        }
    }

    pub fn center(&self) -> CameraCenter {
        camera_center(self)
    }
}

/// `C = -Rᵀ·T`.
pub fn camera_center(pose: &Pose) -> CameraCenter {
    -(pose.rotation.matrix().transpose() * pose.translation)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneImage {
    pub image_id: String,
    pub pose: Option<Pose>,
}

/// Named images of one scene, kept in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub dataset_id: String,
    pub scene_id: String,
    images: Vec<SceneImage>,
}

impl Scene {
    pub fn new(dataset_id: impl Into<String>, scene_id: impl Into<String>) -> Self {
        Self {
            dataset_id: dataset_id.into(),
            scene_id: scene_id.into(),
            images: Vec::new(),
        }
    }

    pub fn with_images(
        dataset_id: impl Into<String>,
        scene_id: impl Into<String>,
        images: impl IntoIterator<Item = SceneImage>,
    ) -> Result<Self, GeometryError> {
        let mut scene = Self::new(dataset_id, scene_id);
        for image in images {
            scene.push(image.image_id, image.pose)?;
        }
        Ok(scene)
    }

    pub fn push(&mut self, image_id: impl Into<String>, pose: Option<Pose>) -> Result<(), GeometryError> {
        let image_id = image_id.into();
        if self.position(&image_id).is_some() {
            return Err(GeometryError::DuplicateImage(image_id));
        }
        self.images.push(SceneImage { image_id, pose });
        Ok(())
    }

    pub fn images(&self) -> &[SceneImage] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn position(&self, image_id: &str) -> Option<usize> {
        self.images.iter().position(|im| im.image_id == image_id)
    }

    pub fn get(&self, image_id: &str) -> Option<&SceneImage> {
        self.images.iter().find(|im| im.image_id == image_id)
    }

    pub fn pose(&self, image_id: &str) -> Option<&Pose> {
        self.get(image_id).and_then(|im| im.pose.as_ref())
    }

    pub(crate) fn set_pose(&mut self, index: usize, pose: Pose) {
        self.images[index].pose = Some(pose);
    }

    /// Centers of all posed images, in scene order.
    pub fn centers(&self) -> Vec<(&str, CameraCenter)> {
        self.images
            .iter()
            .filter_map(|im| im.pose.as_ref().map(|p| (im.image_id.as_str(), p.center())))
            .collect()
    }

    /// Same scene with every camera center multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Scene {
        let images = self
            .images
            .iter()
            .map(|im| SceneImage {
                image_id: im.image_id.clone(),
                pose: im.pose.map(|p| Pose {
                    rotation: p.rotation,
                    translation: p.translation * factor,
                }),
            })
            .collect();
        Scene {
            dataset_id: self.dataset_id.clone(),
            scene_id: self.scene_id.clone(),
            images,
        }
    }

    /// Root-mean-square distance of the posed centers from their centroid.
    pub fn rms_radius(&self) -> Option<f64> {
        let centers: Vec<_> = self.centers().into_iter().map(|(_, c)| c).collect();
        if centers.is_empty() {
            return None;
        }
        let n = centers.len() as f64;
        let centroid = centers.iter().fold(Vector3::zeros(), |acc, c| acc + c) / n;
        let ms = centers.iter().map(|c| (c - centroid).norm_squared()).sum::<f64>() / n;
        Some(ms.sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Evenly spaced on the unit circle in the xy-plane, looking at the origin.
    Circle,
    /// Centers uniform in `[-1, 1]³` with uniformly random orientations.
    Random,
}

/// Camera rotation looking from `center` toward the origin, with world +z as up.
fn look_at_origin(center: &CameraCenter) -> RotationMatrix {
    let forward = (-center).normalize();
    let up = Vector3::z();
    let right = forward.cross(&up).normalize();
    let down = forward.cross(&right);
    RotationMatrix::from_trusted(Matrix3::from_rows(&[
        right.transpose(),
        down.transpose(),
        forward.transpose(),
    ]))
}

/// Deterministic synthetic scene of `n` posed cameras named `img_000`, `img_001`, ...
pub fn synthesize_scene(n: usize, layout: Layout, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = Scene::new("synthetic", format!("scene_{seed}"));
    for k in 0..n {
        let pose = match layout {
            Layout::Circle => {
                let angle = 2.0 * PI * k as f64 / n as f64;
                let center = Vector3::new(angle.cos(), angle.sin(), 0.0);
                Pose::from_center(look_at_origin(&center), &center)
            }
            Layout::Random => {
                let center = Vector3::new(
                    rng.random_range(-1.0..=1.0),
                    rng.random_range(-1.0..=1.0),
                    rng.random_range(-1.0..=1.0),
                );
                Pose::from_center(random_rotation(&mut rng), &center)
            }
        };
        scene
            .push(format!("img_{k:03}"), Some(pose))
            .expect("generated ids are unique");
    }
    scene
}
