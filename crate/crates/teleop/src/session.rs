//! The authoritative simulation loop, driven by a virtual clock.
//!
//! Time only moves when [`TeleopSession::step`] is called, so the same loop
//! serves the live WebSocket endpoint and deterministic headless replays.

use std::collections::VecDeque;
use std::sync::Arc;

use gsplat_cbf::filter::{filter, CBFConfig, FilterError, FilterResult, Method, RobotState};
use gsplat_cbf::rng::{substream, Substream};
use gsplat_cbf::scene::PreparedScene;
use gsplat_cbf::sim::step_dynamics;
use gsplat_cbf::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::wire::{ConfigPatch, InputCommand, StatePayload};

/// Inputs younger than this are applied unchanged.
pub const STALE_HOLD: f64 = 0.2;
/// Length of the linear fade to zero that follows the hold.
pub const STALE_DECAY: f64 = 0.3;

/// Scale applied to the last input once it is `age` seconds old.
pub fn stale_input_factor(age: f64) -> f64 {
    if age <= STALE_HOLD {
        1.0
    } else {
        (1.0 - (age - STALE_HOLD) / STALE_DECAY).clamp(0.0, 1.0)
    }
}

/// The last input after the stale-input policy.
pub fn stale_input_policy(last: &Vector3<f64>, age: f64) -> Vector3<f64> {
    let k = stale_input_factor(age);
    if k == 1.0 {
        *last
    } else {
        last * k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionConfig {
    /// Dynamics step.
    pub dt: f64,
    pub filter_hz: f64,
    /// Upper bound on the telemetry rate.
    pub broadcast_hz: f64,
    pub accel_noise_std: f64,
    pub seed: u64,
    /// The filter stays off for this long after start, standing in for the
    /// mapping warm-up of a live system.
    pub warmup: f64,
    /// Server-side input budget: sustained rate and burst.
    pub input_rate_hz: f64,
    pub input_burst: f64,
    pub telemetry_capacity: usize,
    pub start: Vector3<f64>,
    pub method: Method,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            filter_hz: 15.0,
            broadcast_hz: 30.0,
            accel_noise_std: 0.0,
            seed: 0,
            warmup: 0.0,
            input_rate_hz: 60.0,
            input_burst: 10.0,
            telemetry_capacity: 1024,
            start: Vector3::zeros(),
            method: Method::Exact,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [("dt", self.dt), ("filter_hz", self.filter_hz), ("broadcast_hz", self.broadcast_hz), ("input_rate_hz", self.input_rate_hz)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.input_burst >= 1.0) {
            return Err("input_burst must be at least 1".into());
        }
        if !(self.accel_noise_std >= 0.0 && self.warmup >= 0.0) {
            return Err("accel_noise_std and warmup must be non-negative".into());
        }
        if self.telemetry_capacity == 0 {
            return Err("telemetry_capacity must be at least 1".into());
        }
        if !self.start.iter().all(|x| x.is_finite()) {
            return Err("start must be finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InputRejected {
    #[error("input rate limit exceeded")]
    RateLimited,
    #[error("input must be finite")]
    NonFinite,
    #[error("tick {got} does not follow {last}")]
    OutOfOrder { got: u64, last: u64 },
}

/// Token bucket in session time.
#[derive(Debug, Clone)]
struct Bucket {
    tokens: f64,
    at: f64,
}

#[derive(Debug, Clone)]
struct LastInput {
    accel: Vector3<f64>,
    received: f64,
    client_tick: u64,
}

pub struct TeleopSession {
    scene: Arc<PreparedScene>,
    cbf: CBFConfig,
    cfg: SessionConfig,
    state: RobotState,
    tick: u64,
    input: Option<LastInput>,
    bucket: Bucket,
    noise: ChaCha8Rng,
    /// Latest filter output, held between filter runs.
    held: Option<(u64, Vector3<f64>, FilterResult)>,
    next_filter: f64,
    next_broadcast: f64,
    telemetry: VecDeque<StatePayload>,
}

impl TeleopSession {
    pub fn new(scene: Arc<PreparedScene>, cbf: CBFConfig, cfg: SessionConfig) -> Result<Self, String> {
        cbf.validate().map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(Self {
            scene,
            cbf,
            state: RobotState::at_rest(cfg.start),
            tick: 0,
            input: None,
            bucket: Bucket { tokens: cfg.input_burst, at: 0.0 },
            noise: substream(cfg.seed, Substream::Noise, 0),
            held: None,
            next_filter: 0.0,
            next_broadcast: 0.0,
            telemetry: VecDeque::with_capacity(cfg.telemetry_capacity),
            cfg,
        })
    }

    pub fn scene(&self) -> &Arc<PreparedScene> {
        &self.scene
    }

    pub fn cbf(&self) -> &CBFConfig {
        &self.cbf
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn state(&self) -> &RobotState {
        &self.state
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Session time in seconds.
    pub fn time(&self) -> f64 {
        self.tick as f64 * self.cfg.dt
    }

    pub fn filter_active(&self) -> bool {
        self.time() >= self.cfg.warmup
    }

    pub fn telemetry(&self) -> impl Iterator<Item = &StatePayload> {
        self.telemetry.iter()
    }

    /// Desired acceleration after the stale-input policy, clipped to `a_max`.
    pub fn desired(&self) -> Vector3<f64> {
        let Some(last) = &self.input else { return Vector3::zeros() };
        let u = stale_input_policy(&last.accel, self.time() - last.received);
        let n = u.norm();
        if n > self.cbf.a_max {
            u * (self.cbf.a_max / n)
        } else {
            u
        }
    }

    /// Accepts a pilot input stamped with the current session time.
    /// `client_tick` must increase across accepted inputs.
    pub fn submit_input(&mut self, cmd: &InputCommand, client_tick: u64) -> Result<(), InputRejected> {
        let accel = cmd.to_accel(self.cbf.a_max).ok_or(InputRejected::NonFinite)?;
        if let Some(last) = &self.input {
            if client_tick <= last.client_tick {
                return Err(InputRejected::OutOfOrder { got: client_tick, last: last.client_tick });
            }
        }
        let now = self.time();
        let b = &mut self.bucket;
        b.tokens = (b.tokens + (now - b.at) * self.cfg.input_rate_hz).min(self.cfg.input_burst);
        b.at = now;
        if b.tokens < 1.0 {
            return Err(InputRejected::RateLimited);
        }
        b.tokens -= 1.0;
        self.input = Some(LastInput { accel, received: now, client_tick });
        Ok(())
    }

    /// Applies a partial configuration change; the session keeps its old
    /// configuration when the result would be invalid.
    pub fn update_config(&mut self, patch: &ConfigPatch) -> Result<CBFConfig, FilterError> {
        let next = patch.apply(&self.cbf);
        next.validate()?;
        self.cbf = next;
        // Force a fresh filter solve under the new configuration.
        self.next_filter = self.time();
        Ok(next)
    }

    /// Advances one dynamics step. Returns the telemetry frame for this tick
    /// when one is due.
    pub fn step(&mut self) -> Result<Option<StatePayload>, FilterError> {
        let t = self.time();
        let u_des = self.desired();
        let eps = 1e-9 * self.cfg.dt;
        if self.held.is_none() || t + eps >= self.next_filter {
            let res = if self.filter_active() {
                filter(&self.scene, &self.state, &u_des, &self.cbf, self.cfg.method)?
            } else {
                filter(&self.scene, &self.state, &u_des, &self.cbf, Method::Unfiltered)?
            };
            self.held = Some((self.tick, u_des, res));
            while self.next_filter <= t + eps {
                self.next_filter += 1.0 / self.cfg.filter_hz;
            }
        }
        let (filter_tick, held_des, res) = self.held.as_ref().expect("filter ran above");
        let frame = if t + eps >= self.next_broadcast {
            while self.next_broadcast <= t + eps {
                self.next_broadcast += 1.0 / self.cfg.broadcast_hz;
            }
            let f = StatePayload {
                t,
                p: self.state.p,
                v: self.state.v,
                h_min: res.h_min,
                u_des: *held_des,
                u: res.u,
                was_modified: res.was_modified,
                fallback_used: res.fallback_used,
                kept: res.counts.kept,
                latency_ms: res.timing.total() * 1e3,
                filter_tick: *filter_tick,
                filter_active: self.filter_active(),
            };
            if self.telemetry.len() == self.cfg.telemetry_capacity {
                self.telemetry.pop_front();
            }
            self.telemetry.push_back(f.clone());
            Some(f)
        } else {
            None
        };
        let w = if self.cfg.accel_noise_std > 0.0 {
            Vector3::from_fn(|_, _| self.noise.sample::<f64, _>(StandardNormal)) * self.cfg.accel_noise_std
        } else {
            Vector3::zeros()
        };
        self.state = step_dynamics(&self.state, &res.u, self.cfg.dt, &w);
        self.tick += 1;
        Ok(frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use gsplat_cbf::scene::GaussianScene;

    fn empty() -> Arc<PreparedScene> {
        Arc::new(PreparedScene::new(GaussianScene::empty("e"), None))
    }

    #[test]
    fn stale_policy_examples() {
        let u = Vector3::new(2.0, -4.0, 1.0);
        assert_eq!(stale_input_policy(&u, 0.0), u);
        assert_eq!(stale_input_policy(&u, 0.2), u);
        assert!((stale_input_policy(&u, 0.35) - u * 0.5).norm() < 1e-12);
        assert_eq!(stale_input_policy(&u, 0.5), Vector3::zeros());
        assert_eq!(stale_input_policy(&u, 7.0), Vector3::zeros());
    }

    #[test]
    fn hovering_without_input() {
        let mut s = TeleopSession::new(empty(), CBFConfig::default(), SessionConfig { start: Vector3::new(1.0, 2.0, 3.0), ..Default::default() }).unwrap();
        for _ in 0..300 {
            s.step().unwrap();
        }
        assert_eq!(s.state().p, Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(s.state().v, Vector3::zeros());
    }

    #[test]
    fn filter_and_broadcast_rates() {
        let mut s = TeleopSession::new(empty(), CBFConfig::default(), SessionConfig::default()).unwrap();
        let mut frames = Vec::new();
        let mut filter_ticks = std::collections::BTreeSet::new();
        for _ in 0..300 {
            if let Some(f) = s.step().unwrap() {
                frames.push(f);
            }
            filter_ticks.insert(s.held.as_ref().unwrap().0);
        }
        // Three seconds at 15 Hz and at most 30 Hz.
        assert_eq!(filter_ticks.len(), 45);
        assert!(frames.len() <= 90 && frames.len() >= 89, "{}", frames.len());
        assert!(frames.windows(2).all(|w| w[1].t > w[0].t));
        assert!(frames.iter().all(|f| f.filter_tick as f64 * 0.01 <= f.t + 1e-12));
    }

    #[test]
    fn inputs_are_ordered_and_rate_limited() {
        let mut s = TeleopSession::new(empty(), CBFConfig::default(), SessionConfig::default()).unwrap();
        let cmd = InputCommand::Accel { accel: Vector3::x() };
        assert!(s.submit_input(&cmd, 1).is_ok());
        assert_eq!(s.submit_input(&cmd, 1), Err(InputRejected::OutOfOrder { got: 1, last: 1 }));
        let mut accepted = 1;
        for k in 2..50 {
            if s.submit_input(&cmd, k).is_ok() {
                accepted += 1;
            }
        }
        assert_eq!(accepted, 10);
        for _ in 0..10 {
            s.step().unwrap();
        }
        assert!(s.submit_input(&cmd, 100).is_ok());
        let bad = InputCommand::Accel { accel: Vector3::new(f64::NAN, 0.0, 0.0) };
        assert_eq!(s.submit_input(&bad, 101), Err(InputRejected::NonFinite));
    }

    #[test]
    fn input_decays_after_silence() {
        let mut s = TeleopSession::new(empty(), CBFConfig::default(), SessionConfig::default()).unwrap();
        s.submit_input(&InputCommand::Accel { accel: Vector3::new(0.0, 3.0, 0.0) }, 1).unwrap();
        for _ in 0..35 {
            s.step().unwrap();
        }
        assert!((s.desired() - Vector3::new(0.0, 1.5, 0.0)).norm() < 1e-9);
        for _ in 0..15 {
            s.step().unwrap();
        }
        assert_eq!(s.desired(), Vector3::zeros());
    }

    #[test]
    fn warmup_delays_the_filter() {
        let cfg = SessionConfig { warmup: 0.5, ..Default::default() };
        let mut s = TeleopSession::new(empty(), CBFConfig::default(), cfg).unwrap();
        let first = s.step().unwrap().unwrap();
        assert!(!first.filter_active);
        for _ in 0..60 {
            s.step().unwrap();
        }
        assert!(s.filter_active());
        assert!(s.telemetry().last().unwrap().filter_active);
    }

    #[test]
    fn bad_config_update_is_refused() {
        let mut s = TeleopSession::new(empty(), CBFConfig::default(), SessionConfig::default()).unwrap();
        let before = *s.cbf();
        assert!(s.update_config(&ConfigPatch { alpha: Some(-1.0), ..Default::default() }).is_err());
        assert_eq!(*s.cbf(), before);
        let after = s.update_config(&ConfigPatch { alpha: Some(2.0), ..Default::default() }).unwrap();
        assert_eq!(after.alpha, 2.0);
    }
}
