//! Closed-loop double-integrator simulation and trajectory metrics.

mod campaign;

pub use campaign::{
    sample_start_goal, run_campaign, write_campaign_csv, write_summary_json, CampaignConfig, CampaignResult,
    CampaignScene, SamplerError, SummaryRow, TrajectoryRow,
};

use std::io::Write;
use std::time::Instant;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::filter::{exact_h_min, filter, CBFConfig, FilterError, Method, RobotState};
use crate::rng::{substream, Substream};
use crate::scene::PreparedScene;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdGains {
    pub kp: f64,
    pub kd: f64,
    /// Caps the position error so that the steady cruise speed
    /// `(k_p/k_d)‖e‖` stays at or below this value. `None` is the plain PD law.
    #[serde(default)]
    pub speed_limit: Option<f64>,
}

impl PdGains {
    pub fn plain(kp: f64, kd: f64) -> Self {
        Self { kp, kd, speed_limit: None }
    }
}

impl Default for PdGains {
    fn default() -> Self {
        Self { kp: 1.0, kd: 2.0, speed_limit: Some(0.8) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub dt: f64,
    pub steps: usize,
    /// The filter runs every `control_decimation` steps; the control is held
    /// in between.
    pub control_decimation: usize,
    pub accel_noise_std: f64,
    pub seed: u64,
    pub start: Vector3<f64>,
    pub goal: Vector3<f64>,
    pub pd_gains: PdGains,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            steps: 2000,
            control_decimation: 1,
            accel_noise_std: 0.0,
            seed: 0,
            start: Vector3::zeros(),
            goal: Vector3::zeros(),
            pd_gains: PdGains::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(format!("dt must be positive, got {}", self.dt));
        }
        if self.steps == 0 {
            return Err("steps must be at least 1".into());
        }
        if self.control_decimation == 0 {
            return Err("control_decimation must be at least 1".into());
        }
        if !(self.accel_noise_std >= 0.0 && self.accel_noise_std.is_finite()) {
            return Err(format!("accel_noise_std must be non-negative, got {}", self.accel_noise_std));
        }
        if !self.start.iter().chain(self.goal.iter()).all(|x| x.is_finite()) {
            return Err("start and goal must be finite".into());
        }
        if !(self.pd_gains.kp >= 0.0 && self.pd_gains.kd >= 0.0) {
            return Err("PD gains must be non-negative".into());
        }
        if self.pd_gains.speed_limit.is_some_and(|s| !(s > 0.0)) {
            return Err("speed_limit must be positive".into());
        }
        Ok(())
    }
}

/// Exact zero-order-hold step of `p̈ = u + w`.
pub fn step_dynamics(state: &RobotState, u: &Vector3<f64>, dt: f64, w: &Vector3<f64>) -> RobotState {
    let a = u + w;
    RobotState { p: state.p + state.v * dt + a * (0.5 * dt * dt), v: state.v + a * dt }
}

/// `k_p(goal − p) − k_d v`, clipped to `a_max`.
pub fn nominal_pd(state: &RobotState, goal: &Vector3<f64>, gains: &PdGains, a_max: f64) -> Vector3<f64> {
    let mut e = goal - state.p;
    if let Some(limit) = gains.speed_limit.filter(|_| gains.kp > 0.0 && gains.kd > 0.0) {
        let cap = limit * gains.kd / gains.kp;
        let n = e.norm();
        if n > cap {
            e *= cap / n;
        }
    }
    let u = e * gains.kp - state.v * gains.kd;
    let n = u.norm();
    if n > a_max {
        u * (a_max / n)
    } else {
        u
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub tick: usize,
    pub t: f64,
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub u_des: Vector3<f64>,
    pub u: Vector3<f64>,
    /// Whether the filter ran on this step (otherwise `u` is held).
    pub filtered: bool,
    pub h_min: Option<f64>,
    pub was_modified: bool,
    pub fallback_used: bool,
    pub candidates: usize,
    pub kept: usize,
    pub active: usize,
    /// Filter wall time in seconds; `None` when not measured.
    pub latency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub method: Method,
    pub start: Vector3<f64>,
    pub goal: Vector3<f64>,
    pub records: Vec<StepRecord>,
    pub final_state: RobotState,
    /// Set when the episode stopped early on a filter error.
    pub error: Option<String>,
}

impl TrajectoryLog {
    /// Positions visited, including the state after the last step.
    pub fn positions(&self) -> impl Iterator<Item = &Vector3<f64>> {
        self.records.iter().map(|r| &r.p).chain(std::iter::once(&self.final_state.p))
    }

    /// Drops wall-clock measurements so that reruns serialize identically.
    pub fn strip_timing(&mut self) {
        for r in &mut self.records {
            r.latency = None;
        }
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Runs `sim.steps` steps of PD tracking through the filter.
pub fn run_episode(scene: &PreparedScene, sim: &SimConfig, cbf: &CBFConfig, method: Method) -> TrajectoryLog {
    let mut noise = substream(sim.seed, Substream::Noise, 0);
    let mut state = RobotState::at_rest(sim.start);
    let mut log = TrajectoryLog {
        method,
        start: sim.start,
        goal: sim.goal,
        records: Vec::with_capacity(sim.steps),
        final_state: state,
        error: None,
    };
    let mut held: Option<StepRecord> = None;
    for tick in 0..sim.steps {
        let mut rec = if tick % sim.control_decimation == 0 || held.is_none() {
            let u_des = nominal_pd(&state, &sim.goal, &sim.pd_gains, cbf.a_max);
            let t0 = Instant::now();
            let res = match filter(scene, &state, &u_des, cbf, method) {
                Ok(r) => r,
                Err(e) => {
                    log.error = Some(e.to_string());
                    break;
                }
            };
            StepRecord {
                tick,
                t: 0.0,
                p: state.p,
                v: state.v,
                u_des,
                u: res.u,
                filtered: true,
                h_min: res.h_min,
                was_modified: res.was_modified,
                fallback_used: res.fallback_used,
                candidates: res.counts.candidates,
                kept: res.counts.kept,
                active: res.counts.active,
                latency: Some(t0.elapsed().as_secs_f64()),
            }
        } else {
            let mut r = held.clone().unwrap();
            r.filtered = false;
            r.latency = None;
            r.p = state.p;
            r.v = state.v;
            r
        };
        rec.tick = tick;
        rec.t = tick as f64 * sim.dt;
        let w = if sim.accel_noise_std > 0.0 {
            Vector3::from_fn(|_, _| noise.sample::<f64, _>(StandardNormal)) * sim.accel_noise_std
        } else {
            Vector3::zeros()
        };
        state = step_dynamics(&state, &rec.u, sim.dt, &w);
        held = Some(rec.clone());
        log.records.push(rec);
    }
    log.final_state = state;
    log
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Smallest exact barrier value along the trajectory against the
    /// reference scene; `None` when the reference scene is empty.
    pub min_h: Option<f64>,
    pub mean_control_difference: f64,
    pub progress: f64,
    pub mean_latency_ms: Option<f64>,
    pub p50_latency_ms: Option<f64>,
    pub p99_latency_ms: Option<f64>,
    pub steps: usize,
    pub modified_steps: usize,
    pub fallback_steps: usize,
}

/// `1 − min_t ‖p(t) − goal‖ / ‖goal − start‖`, or 1 when start and goal
/// coincide.
pub fn progress(log: &TrajectoryLog) -> f64 {
    let span = (log.goal - log.start).norm();
    if span == 0.0 {
        return 1.0;
    }
    let closest = log.positions().map(|p| (p - log.goal).norm()).fold(f64::INFINITY, f64::min);
    1.0 - closest / span
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((q / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

pub fn compute_metrics(log: &TrajectoryLog, reference: &PreparedScene, cbf: &CBFConfig) -> Result<Metrics, FilterError> {
    let mut min_h: Option<f64> = None;
    for p in log.positions() {
        if let Some(h) = exact_h_min(reference, p, cbf, Method::Exact)? {
            min_h = Some(min_h.map_or(h, |m| m.min(h)));
        }
    }
    let n = log.records.len().max(1) as f64;
    let mean_control_difference = log.records.iter().map(|r| (r.u - r.u_des).norm_squared()).sum::<f64>() / n;
    let mut lat: Vec<f64> = log.records.iter().filter_map(|r| r.latency).map(|s| s * 1e3).collect();
    lat.sort_by(f64::total_cmp);
    let mean_latency_ms = (!lat.is_empty()).then(|| lat.iter().sum::<f64>() / lat.len() as f64);
    Ok(Metrics {
        min_h,
        mean_control_difference,
        progress: progress(log),
        mean_latency_ms,
        p50_latency_ms: percentile(&lat, 50.0),
        p99_latency_ms: percentile(&lat, 99.0),
        steps: log.records.len(),
        modified_steps: log.records.iter().filter(|r| r.filtered && r.was_modified).count(),
        fallback_steps: log.records.iter().filter(|r| r.filtered && r.fallback_used).count(),
    })
}
