//! Ellipsoid scenes extracted from Gaussian splats.
//!
//! A splat primitive is a Gaussian with mean `μ`, rotation `R` and 1σ
//! semi-axes `S`. Its collision geometry is the ellipsoid
//! `{x : (x − μ)ᵀ Σ⁻¹ (x − μ) ≤ 1}` with `Σ = R S̄ S̄ᵀ Rᵀ`, where
//! `S̄ = scale_multiplier · S`. The multiplier lives on the scene so one file
//! can be re-read at a different confidence level (see [`confidence_scale`]).

mod chi2;
mod index;
mod json;
mod ply;
pub mod roster;
mod synthetic;

use std::collections::BTreeMap;
use std::path::PathBuf;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

pub use chi2::confidence_scale;
pub use index::SceneIndex;
pub use json::{load_scene_json, save_scene_json, scene_from_json_str, scene_to_json_string};
pub use ply::{load_gsplat_ply, read_gsplat_ply, write_gsplat_ply, PlyIngest, PlySplat};
pub use synthetic::{generate_synthetic, Axis, Generator, SyntheticSpec};

/// Semi-axes below this length are clamped so that `Σ` stays invertible.
pub const MIN_SEMI_AXIS: f64 = 1e-6;

/// Default sigmoid-opacity cutoff for treating a splat as an obstacle.
pub const DEFAULT_OPACITY_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed PLY header: {0}")]
    Header(String),
    #[error("PLY vertex element is missing required property `{0}`")]
    MissingProperty(String),
    #[error("PLY vertex {index}: {reason}")]
    Element { index: usize, reason: String },
    #[error("scene document invalid at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("ellipsoid {index}: {reason}")]
    InvalidEllipsoid { index: usize, reason: String },
    #[error("unknown scene generator `{0}`")]
    UnknownGenerator(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// One Gaussian primitive's collision-relevant attributes.
///
/// `scales` are the raw 1σ semi-axes; the owning scene's multiplier is
/// applied on top of them by [`Ellipsoid::semi_axes`].
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    pub id: usize,
    pub mean: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub scales: Vector3<f64>,
    pub opacity: f64,
}

impl Ellipsoid {
    /// Validates and normalises raw attributes.
    ///
    /// `rotation` is scalar-first `[w, x, y, z]` and need not be unit length.
    /// Already-unit quaternions (within 1e-12) are kept bit-for-bit so that
    /// JSON round trips are lossless.
    pub fn new(
        id: usize,
        mean: [f64; 3],
        rotation: [f64; 4],
        scales: [f64; 3],
        opacity: f64,
    ) -> Result<Self, SceneError> {
        let bad = |reason: String| SceneError::InvalidEllipsoid { index: id, reason };
        if mean.iter().chain(&rotation).chain(&scales).any(|v| !v.is_finite()) || !opacity.is_finite() {
            return Err(bad("non-finite value".into()));
        }
        if !(0.0..=1.0).contains(&opacity) {
            return Err(bad(format!("opacity {opacity} outside [0, 1]")));
        }
        if scales.iter().any(|&s| s <= 0.0) {
            return Err(bad(format!("non-positive scale {scales:?}")));
        }
        let q = Quaternion::new(rotation[0], rotation[1], rotation[2], rotation[3]);
        let norm = q.norm();
        if norm < 1e-12 {
            return Err(bad("zero-length quaternion".into()));
        }
        let rotation = if (norm - 1.0).abs() <= 1e-12 {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::from_quaternion(q)
        };
        Ok(Self {
            id,
            mean: Vector3::from(mean),
            rotation,
            scales: Vector3::from(scales).map(|s| s.max(MIN_SEMI_AXIS)),
            opacity,
        })
    }

    /// Unit sphere of radius `r` at `center`.
    pub fn sphere(id: usize, center: [f64; 3], r: f64) -> Self {
        Self::new(id, center, [1.0, 0.0, 0.0, 0.0], [r, r, r], 1.0).expect("valid sphere")
    }

    /// Effective semi-axes `S̄ = multiplier · S`.
    pub fn semi_axes(&self, multiplier: f64) -> Vector3<f64> {
        self.scales * multiplier
    }

    /// `Σ = R diag(S̄²) Rᵀ`.
    pub fn covariance(&self, multiplier: f64) -> Matrix3<f64> {
        let r = self.rotation.to_rotation_matrix().into_inner();
        let s2 = self.semi_axes(multiplier).map(|s| s * s);
        let cov = r * Matrix3::from_diagonal(&s2) * r.transpose();
        0.5 * (cov + cov.transpose())
    }

    /// Conservative bounding sphere: the mean and the longest semi-axis.
    pub fn bounding_sphere(&self, multiplier: f64) -> (Vector3<f64>, f64) {
        (self.mean, self.semi_axes(multiplier).max())
    }

    /// Precomputed collision geometry.
    pub fn obstacle(&self, multiplier: f64) -> Obstacle {
        Obstacle {
            id: self.id,
            center: self.mean,
            rotation: self.rotation.to_rotation_matrix().into_inner(),
            semi_axes: self.semi_axes(multiplier),
        }
    }

    pub fn volume(&self, multiplier: f64) -> f64 {
        let s = self.semi_axes(multiplier);
        4.0 / 3.0 * std::f64::consts::PI * s.x * s.y * s.z
    }
}

/// Collision ellipsoid with the rotation expanded to a matrix and the scene
/// multiplier folded into `semi_axes`. Columns of `rotation` are the
/// principal directions.
#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    pub id: usize,
    pub center: Vector3<f64>,
    pub rotation: Matrix3<f64>,
    pub semi_axes: Vector3<f64>,
}

impl Obstacle {
    pub fn new(id: usize, center: Vector3<f64>, rotation: Matrix3<f64>, semi_axes: Vector3<f64>) -> Self {
        Self { id, center, rotation, semi_axes }
    }

    pub fn bounding_radius(&self) -> f64 {
        self.semi_axes.max()
    }

    /// `Σ⁻¹`, the shape matrix of the implicit form.
    pub fn shape_matrix(&self) -> Matrix3<f64> {
        let inv = self.semi_axes.map(|s| 1.0 / (s * s));
        self.rotation * Matrix3::from_diagonal(&inv) * self.rotation.transpose()
    }

    /// `(x − μ)ᵀ Σ⁻¹ (x − μ)`; equals 1 on the surface.
    pub fn implicit(&self, x: &Vector3<f64>) -> f64 {
        let local = self.rotation.transpose() * (x - self.center);
        local.component_div(&self.semi_axes).norm_squared()
    }

    /// Surface point for a direction `w` in the unit-sphere parameterisation.
    pub fn surface_point(&self, w: &Vector3<f64>) -> Vector3<f64> {
        self.center + self.rotation * w.normalize().component_mul(&self.semi_axes)
    }
}

/// Where a scene came from and with which ingest parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Provenance {
    pub source: Option<String>,
    pub parameters: BTreeMap<String, serde_json::Value>,
}

/// An ordered set of ellipsoids with dense ids `0..K`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScene {
    pub name: String,
    pub scale_multiplier: f64,
    pub ellipsoids: Vec<Ellipsoid>,
    pub provenance: Provenance,
}

impl GaussianScene {
    /// Builds a scene, re-assigning ids to match list order.
    pub fn new(name: impl Into<String>, scale_multiplier: f64, mut ellipsoids: Vec<Ellipsoid>) -> Result<Self, SceneError> {
        if !(scale_multiplier.is_finite() && scale_multiplier >= 1.0) {
            return Err(SceneError::InvalidParameter(format!(
                "scale_multiplier must be >= 1, got {scale_multiplier}"
            )));
        }
        for (i, e) in ellipsoids.iter_mut().enumerate() {
            e.id = i;
        }
        Ok(Self {
            name: name.into(),
            scale_multiplier,
            ellipsoids,
            provenance: Provenance::default(),
        })
    }

    pub fn empty(name: impl Into<String>) -> Self {
        Self::new(name, 1.0, Vec::new()).expect("valid empty scene")
    }

    pub fn len(&self) -> usize {
        self.ellipsoids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ellipsoids.is_empty()
    }

    pub fn covariance(&self, id: usize) -> Matrix3<f64> {
        self.ellipsoids[id].covariance(self.scale_multiplier)
    }

    pub fn bounding_sphere(&self, id: usize) -> (Vector3<f64>, f64) {
        self.ellipsoids[id].bounding_sphere(self.scale_multiplier)
    }

    pub fn obstacles(&self) -> Vec<Obstacle> {
        self.ellipsoids.iter().map(|e| e.obstacle(self.scale_multiplier)).collect()
    }

    pub fn max_bounding_radius(&self) -> f64 {
        self.ellipsoids
            .iter()
            .map(|e| e.semi_axes(self.scale_multiplier).max())
            .fold(0.0, f64::max)
    }

    /// Axis-aligned bounds of the ellipsoid bounding spheres, `None` when empty.
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let mut it = self.ellipsoids.iter().map(|e| e.bounding_sphere(self.scale_multiplier));
        let (c, r) = it.next()?;
        let rv = Vector3::repeat(r);
        let init = (c - rv, c + rv);
        Some(it.fold(init, |(lo, hi), (c, r)| {
            let rv = Vector3::repeat(r);
            (lo.inf(&(c - rv)), hi.sup(&(c + rv)))
        }))
    }
}

/// A scene with its collision geometry and broad-phase index precomputed.
///
/// Immutable once built; share it behind an `Arc` between workers.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub scene: GaussianScene,
    pub obstacles: Vec<Obstacle>,
    pub index: SceneIndex,
}

impl PreparedScene {
    /// Indexes `scene` with the default cell size (twice the largest
    /// bounding radius), or `cell_size` when given.
    pub fn new(scene: GaussianScene, cell_size: Option<f64>) -> Self {
        let obstacles = scene.obstacles();
        let cell = cell_size.unwrap_or_else(|| SceneIndex::default_cell_size(&obstacles));
        let index = SceneIndex::build(&obstacles, cell);
        Self { scene, obstacles, index }
    }

    pub fn len(&self) -> usize {
        self.obstacles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obstacles.is_empty()
    }
}
