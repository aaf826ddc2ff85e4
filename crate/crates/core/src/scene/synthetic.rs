//! Deterministic synthetic scenes standing in for trained splats.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Ellipsoid, GaussianScene, SceneError};
use crate::rng::{substream, Substream};

const GENERATORS: [&str; 5] = ["plane-wall", "corridor", "ring-of-pillars", "random-clutter", "composite"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    #[default]
    Z,
}

/// Generator name and parameters. Serialised with a `generator` tag, e.g.
/// `{"generator": "plane-wall", "nx": 10, "ny": 10, ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Generator {
    /// `nx × ny` grid with spacing `spacing`, centred on `center`, thin axis
    /// along `normal`.
    PlaneWall {
        nx: usize,
        ny: usize,
        spacing: f64,
        scales: [f64; 3],
        #[serde(default)]
        center: [f64; 3],
        #[serde(default)]
        normal: Axis,
    },
    /// Two walls at `y = ±width/2` spanning `x ∈ [−length/2, length/2]`,
    /// `z ∈ [0, height]`, with `count` splats scattered uniformly over them.
    Corridor {
        count: usize,
        length: f64,
        width: f64,
        height: f64,
        scales: [f64; 3],
        #[serde(default)]
        center: [f64; 3],
    },
    /// Cylindrical pillars on a ring, splats on each pillar's surface.
    RingOfPillars {
        pillars: usize,
        per_pillar: usize,
        ring_radius: f64,
        pillar_radius: f64,
        height: f64,
        scales: [f64; 3],
        #[serde(default)]
        center: [f64; 3],
    },
    /// Uniform means in a box, uniformly random rotations, log-uniform axes.
    RandomClutter {
        count: usize,
        box_min: [f64; 3],
        box_max: [f64; 3],
        scale_min: f64,
        scale_max: f64,
    },
    /// Concatenation of other generators.
    Composite { parts: Vec<Generator> },
}

impl Generator {
    pub fn count(&self) -> usize {
        match self {
            Generator::PlaneWall { nx, ny, .. } => nx * ny,
            Generator::Corridor { count, .. } | Generator::RandomClutter { count, .. } => *count,
            Generator::RingOfPillars { pillars, per_pillar, .. } => pillars * per_pillar,
            Generator::Composite { parts } => parts.iter().map(Generator::count).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub scale_multiplier: f64,
    pub scene: Generator,
}

fn one() -> f64 {
    1.0
}

impl SyntheticSpec {
    pub fn new(scene: Generator, seed: u64) -> Self {
        Self { name: None, seed, scale_multiplier: 1.0, scene }
    }

    /// Parses a spec document, reporting unknown generator names distinctly.
    pub fn from_json(value: &serde_json::Value) -> Result<Self, SceneError> {
        fn check(g: &serde_json::Value) -> Result<(), SceneError> {
            if let Some(name) = g.get("generator").and_then(|v| v.as_str()) {
                if !GENERATORS.contains(&name) {
                    return Err(SceneError::UnknownGenerator(name.to_string()));
                }
            }
            if let Some(parts) = g.get("parts").and_then(|p| p.as_array()) {
                parts.iter().try_for_each(check)?;
            }
            Ok(())
        }
        if let Some(g) = value.get("scene") {
            check(g)?;
        }
        serde_path_to_error::deserialize(value).map_err(|e| SceneError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }
}

fn rotation_from_columns(c0: Vector3<f64>, c1: Vector3<f64>, c2: Vector3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[c0, c1, c2])))
}

fn quat_array(q: &UnitQuaternion<f64>) -> [f64; 4] {
    let q = q.quaternion();
    [q.w, q.i, q.j, q.k]
}

fn jitter(rng: &mut impl Rng, scales: [f64; 3]) -> [f64; 3] {
    scales.map(|s| s * (rng.random_range(-0.3f64..0.3)).exp())
}

fn validate(g: &Generator) -> Result<(), SceneError> {
    let bad = |m: &str| Err(SceneError::InvalidParameter(m.to_string()));
    let pos = |s: &[f64; 3]| s.iter().all(|&v| v > 0.0 && v.is_finite());
    if g.count() == 0 {
        return bad("ellipsoid count must be positive");
    }
    match g {
        Generator::PlaneWall { spacing, scales, .. } if !(*spacing > 0.0) || !pos(scales) => {
            bad("plane-wall needs positive spacing and scales")
        }
        Generator::Corridor { length, width, height, scales, .. }
            if !(*length > 0.0 && *width > 0.0 && *height > 0.0) || !pos(scales) =>
        {
            bad("corridor needs positive dimensions and scales")
        }
        Generator::RingOfPillars { ring_radius, pillar_radius, height, scales, .. }
            if !(*ring_radius >= 0.0 && *pillar_radius > 0.0 && *height > 0.0) || !pos(scales) =>
        {
            bad("ring-of-pillars needs positive dimensions and scales")
        }
        Generator::RandomClutter { box_min, box_max, scale_min, scale_max, .. }
            if (0..3).any(|k| !(box_max[k] > box_min[k])) || !(*scale_min > 0.0 && scale_max >= scale_min) =>
        {
            bad("random-clutter needs a non-empty box and 0 < scale_min <= scale_max")
        }
        Generator::Composite { parts } => parts.iter().try_for_each(validate),
        _ => Ok(()),
    }
}

fn emit(g: &Generator, seed: u64, part: u64, out: &mut Vec<Ellipsoid>) -> Result<(), SceneError> {
    let mut rng = substream(seed, Substream::Scene, part);
    let push = |out: &mut Vec<Ellipsoid>, mean: Vector3<f64>, q: &UnitQuaternion<f64>, s: [f64; 3]| {
        Ellipsoid::new(out.len(), mean.into(), quat_array(q), s, 1.0).map(|e| out.push(e))
    };
    match g {
        Generator::PlaneWall { nx, ny, spacing, scales, center, normal } => {
            let (ex, ey, ez) = match normal {
                Axis::Z => (Vector3::x(), Vector3::y(), Vector3::z()),
                Axis::X => (Vector3::y(), Vector3::z(), Vector3::x()),
                Axis::Y => (Vector3::z(), Vector3::x(), Vector3::y()),
            };
            let q = rotation_from_columns(ex, ey, ez);
            let c = Vector3::from(*center);
            let (ox, oy) = ((*nx as f64 - 1.0) * spacing / 2.0, (*ny as f64 - 1.0) * spacing / 2.0);
            for j in 0..*ny {
                for i in 0..*nx {
                    let mean = c + ex * (i as f64 * spacing - ox) + ey * (j as f64 * spacing - oy);
                    push(out, mean, &q, *scales)?;
                }
            }
        }
        Generator::Corridor { count, length, width, height, scales, center } => {
            let c = Vector3::from(*center);
            for k in 0..*count {
                let side = if k % 2 == 0 { 1.0 } else { -1.0 };
                let x = rng.random_range(-length / 2.0..length / 2.0);
                let z = rng.random_range(0.0..*height);
                let mean = c + Vector3::new(x, side * width / 2.0, z);
                // Thin axis faces into the corridor.
                let q = rotation_from_columns(Vector3::x() * side, Vector3::z(), -Vector3::y() * side);
                push(out, mean, &q, jitter(&mut rng, *scales))?;
            }
        }
        Generator::RingOfPillars { pillars, per_pillar, ring_radius, pillar_radius, height, scales, center } => {
            let c = Vector3::from(*center);
            for p in 0..*pillars {
                let phi = std::f64::consts::TAU * p as f64 / *pillars as f64;
                let axis = c + Vector3::new(ring_radius * phi.cos(), ring_radius * phi.sin(), 0.0);
                for _ in 0..*per_pillar {
                    let theta = rng.random_range(0.0..std::f64::consts::TAU);
                    let n = Vector3::new(theta.cos(), theta.sin(), 0.0);
                    let t = Vector3::new(-theta.sin(), theta.cos(), 0.0);
                    let z = rng.random_range(0.0..*height);
                    let mean = axis + n * *pillar_radius + Vector3::z() * z;
                    let q = rotation_from_columns(t, Vector3::z(), n);
                    push(out, mean, &q, jitter(&mut rng, *scales))?;
                }
            }
        }
        Generator::RandomClutter { count, box_min, box_max, scale_min, scale_max } => {
            let (lmin, lmax) = (scale_min.ln(), scale_max.ln());
            for _ in 0..*count {
                let mean = Vector3::from_fn(|k, _| rng.random_range(box_min[k]..box_max[k]));
                let raw: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
                let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                let q = raw.map(|v| v / norm);
                let s: [f64; 3] = std::array::from_fn(|_| {
                    if lmax > lmin {
                        rng.random_range(lmin..lmax).exp()
                    } else {
                        *scale_min
                    }
                });
                Ellipsoid::new(out.len(), mean.into(), q, s, 1.0).map(|e| out.push(e))?;
            }
        }
        Generator::Composite { parts } => {
            for (i, g) in parts.iter().enumerate() {
                emit(g, seed, part * 1000 + i as u64 + 1, out)?;
            }
        }
    }
    Ok(())
}

/// Generates the scene described by `spec`; identical specs give identical
/// scenes.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<GaussianScene, SceneError> {
    validate(&spec.scene)?;
    let mut ellipsoids = Vec::with_capacity(spec.scene.count());
    emit(&spec.scene, spec.seed, 0, &mut ellipsoids)?;
    let name = spec.name.clone().unwrap_or_else(|| {
        serde_json::to_value(&spec.scene)
            .ok()
            .and_then(|v| v.get("generator").and_then(|g| g.as_str()).map(str::to_string))
            .unwrap_or_else(|| "synthetic".into())
    });
    let mut scene = GaussianScene::new(name, spec.scale_multiplier, ellipsoids)?;
    scene.provenance.source = Some("synthetic".into());
    scene.provenance.parameters.insert("spec".into(), json!(spec));
    Ok(scene)
}
