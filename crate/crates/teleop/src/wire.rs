//! JSON wire protocol. Every frame is one object with `type`, `session`
//! and `tick` keys plus the fields of its variant; see `PROTOCOL.md`.

use gsplat_cbf::filter::CBFConfig;
use gsplat_cbf::scene::GaussianScene;
use gsplat_cbf::Vector3;
use serde::{Deserialize, Serialize};

/// Largest number of ellipsoids sent to a client.
pub const MAX_TRANSMITTED: usize = 20_000;
pub const CHUNK_SIZE: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub session: String,
    /// Server frames carry the simulation tick; client frames carry the
    /// client's own sequence number. Both never decrease.
    pub tick: u64,
    #[serde(flatten)]
    pub body: Body,
}

impl WireMessage {
    pub fn new(session: impl Into<String>, tick: u64, body: Body) -> Self {
        Self { session: session.into(), tick, body }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("wire messages always serialize")
    }

    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Body {
    Hello(Hello),
    SceneChunk(SceneChunk),
    State(StatePayload),
    Input(InputCommand),
    ConfigUpdate(ConfigPatch),
    /// Server acknowledgement of a config update, with the full result.
    Config { config: CBFConfig },
    Ping { nonce: u64 },
    Pong { nonce: u64 },
    Error { message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Pilot,
    Observer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub role: Role,
    pub scene: SceneMeta,
    pub config: CBFConfig,
    pub dt: f64,
    pub filter_hz: f64,
    pub broadcast_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub name: String,
    /// Ellipsoids the filter uses.
    pub total: usize,
    /// Ellipsoids the client will receive.
    pub transmitted: usize,
    pub chunks: usize,
    pub bounds: Option<([f64; 3], [f64; 3])>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireEllipsoid {
    pub id: usize,
    pub mean: [f64; 3],
    /// Unit quaternion `[w, x, y, z]`.
    pub rotation: [f64; 4],
    /// Semi-axes in metres, scale multiplier applied.
    pub scales: [f64; 3],
    pub opacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneChunk {
    pub index: usize,
    pub of: usize,
    pub ellipsoids: Vec<WireEllipsoid>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatePayload {
    pub t: f64,
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub h_min: Option<f64>,
    pub u_des: Vector3<f64>,
    pub u: Vector3<f64>,
    pub was_modified: bool,
    pub fallback_used: bool,
    pub kept: usize,
    pub latency_ms: f64,
    /// Tick whose filter solve produced `u`.
    pub filter_tick: u64,
    pub filter_active: bool,
}

/// Desired acceleration in m/s², or stick deflections in `[-1, 1]` that
/// the server scales by `a_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputCommand {
    Accel { accel: Vector3<f64> },
    Axes { axes: [f64; 3] },
}

impl InputCommand {
    /// Acceleration this command asks for, with norm at most `a_max`;
    /// `None` for non-finite input.
    pub fn to_accel(&self, a_max: f64) -> Option<Vector3<f64>> {
        let u = match self {
            InputCommand::Accel { accel } => *accel,
            InputCommand::Axes { axes } => Vector3::from(axes.map(|x| x.clamp(-1.0, 1.0))) * a_max,
        };
        if !u.iter().all(|x| x.is_finite()) {
            return None;
        }
        let n = u.norm();
        Some(if n > a_max { u * (a_max / n) } else { u })
    }
}

/// Partial update of the filter configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigPatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buffer: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pruning_enabled: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity_barrier: Option<bool>,
}

impl ConfigPatch {
    pub fn apply(&self, base: &CBFConfig) -> CBFConfig {
        CBFConfig {
            alpha: self.alpha.unwrap_or(base.alpha),
            beta: self.beta.unwrap_or(base.beta),
            kappa: self.kappa.unwrap_or(base.kappa),
            robot_radius: self.robot_radius.unwrap_or(base.robot_radius),
            buffer: self.buffer.unwrap_or(base.buffer),
            pruning_enabled: self.pruning_enabled.unwrap_or(base.pruning_enabled),
            velocity_barrier: self.velocity_barrier.unwrap_or(base.velocity_barrier),
            ..*base
        }
    }
}

/// The `limit` largest ellipsoids by volume, largest first, ties by id.
pub fn decimate(scene: &GaussianScene, limit: usize) -> Vec<WireEllipsoid> {
    let m = scene.scale_multiplier;
    let mut order: Vec<(f64, usize)> = scene.ellipsoids.iter().enumerate().map(|(i, e)| (e.volume(m), i)).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    order
        .into_iter()
        .take(limit)
        .map(|(_, i)| {
            let e = &scene.ellipsoids[i];
            let q = e.rotation.quaternion();
            WireEllipsoid {
                id: e.id,
                mean: e.mean.into(),
                rotation: [q.w, q.i, q.j, q.k],
                scales: e.semi_axes(m).into(),
                opacity: e.opacity,
            }
        })
        .collect()
}

/// Hello frame body plus the scene chunks that follow it.
pub fn scene_transfer(scene: &GaussianScene, limit: usize) -> (SceneMeta, Vec<SceneChunk>) {
    let sent = decimate(scene, limit);
    let of = sent.len().div_ceil(CHUNK_SIZE);
    let chunks: Vec<SceneChunk> = sent
        .chunks(CHUNK_SIZE)
        .enumerate()
        .map(|(index, c)| SceneChunk { index, of, ellipsoids: c.to_vec() })
        .collect();
    let meta = SceneMeta {
        name: scene.name.clone(),
        total: scene.len(),
        transmitted: sent.len(),
        chunks: of,
        bounds: scene.bounds().map(|(lo, hi)| (lo.into(), hi.into())),
    };
    (meta, chunks)
}
