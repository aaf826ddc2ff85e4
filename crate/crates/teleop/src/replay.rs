//! Headless replay of pilot input streams through the session loop.

use std::io::BufRead;
use std::sync::Arc;

use gsplat_cbf::filter::{exact_h_min, CBFConfig, FilterError, Method};
use gsplat_cbf::scene::PreparedScene;
use gsplat_cbf::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::session::{SessionConfig, TeleopSession};
use crate::wire::InputCommand;

/// One recorded pilot input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedInput {
    pub t: f64,
    #[serde(flatten)]
    pub command: InputCommand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputScript {
    Constant { accel: Vector3<f64> },
    /// Square wave between `+amplitude` and `−amplitude`.
    Square { amplitude: Vector3<f64>, period: f64 },
    /// `amplitude[k]·sin(2πt/period + k·π/2)` per axis.
    Sine { amplitude: Vector3<f64>, period: f64 },
    /// Uniform in the `magnitude` ball, redrawn every `hold` seconds; with
    /// probability `dropout` the pilot goes silent for that interval.
    Random { seed: u64, hold: f64, magnitude: f64, dropout: f64 },
    Recorded { inputs: Vec<TimedInput> },
}

impl InputScript {
    /// Reads a recording: one [`TimedInput`] JSON object per line.
    pub fn read_recording(r: impl BufRead) -> Result<Self, std::io::Error> {
        let mut inputs = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            inputs.push(serde_json::from_str(&line).map_err(std::io::Error::other)?);
        }
        Ok(InputScript::Recorded { inputs })
    }

    /// The inputs a client would send at `send_hz` over `duration` seconds.
    pub fn expand(&self, duration: f64, send_hz: f64) -> Vec<TimedInput> {
        if let InputScript::Recorded { inputs } = self {
            return inputs.iter().filter(|i| i.t < duration).cloned().collect();
        }
        let n = (duration * send_hz).ceil() as usize;
        let mut rng = match self {
            InputScript::Random { seed, .. } => ChaCha8Rng::seed_from_u64(*seed),
            _ => ChaCha8Rng::seed_from_u64(0),
        };
        let mut slot = usize::MAX;
        let mut current: Option<Vector3<f64>> = None;
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            let t = k as f64 / send_hz;
            let accel = match self {
                InputScript::Constant { accel } => Some(*accel),
                InputScript::Square { amplitude, period } => {
                    Some(if (t / period).fract() < 0.5 { *amplitude } else { -amplitude })
                }
                InputScript::Sine { amplitude, period } => {
                    let w = std::f64::consts::TAU * t / period;
                    Some(Vector3::from_fn(|i, _| amplitude[i] * (w + i as f64 * std::f64::consts::FRAC_PI_2).sin()))
                }
                InputScript::Random { hold, magnitude, dropout, .. } => {
                    let s = (t / hold) as usize;
                    if s != slot {
                        slot = s;
                        current = if rng.random_bool(*dropout) {
                            None
                        } else {
                            let dir = loop {
                                let d = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
                                let n = d.norm();
                                if n > 1e-3 && n <= 1.0 {
                                    break d / n;
                                }
                            };
                            Some(dir * *magnitude * rng.random_range(0.0f64..1.0).cbrt())
                        };
                    }
                    current
                }
                InputScript::Recorded { .. } => unreachable!(),
            };
            if let Some(accel) = accel {
                out.push(TimedInput { t, command: InputCommand::Accel { accel } });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    /// Smallest exact barrier value over every dynamics tick.
    pub h_min: Option<f64>,
    pub h_min_tick: u64,
    pub ticks: u64,
    pub frames: usize,
    pub modified_frames: usize,
    pub rejected_inputs: usize,
    pub max_speed: f64,
    pub final_position: Vector3<f64>,
}

/// Runs `script` for `duration` seconds of session time, sending inputs at
/// `send_hz`.
pub fn replay(
    scene: Arc<PreparedScene>,
    cbf: CBFConfig,
    cfg: SessionConfig,
    script: &InputScript,
    duration: f64,
    send_hz: f64,
) -> Result<ReplayReport, FilterError> {
    let inputs = script.expand(duration, send_hz);
    let mut session = TeleopSession::new(scene.clone(), cbf, cfg).map_err(FilterError::Config)?;
    let ticks = (duration / cfg.dt).round() as u64;
    let mut next = 0;
    let mut report = ReplayReport {
        h_min: None,
        h_min_tick: 0,
        ticks,
        frames: 0,
        modified_frames: 0,
        rejected_inputs: 0,
        max_speed: 0.0,
        final_position: cfg.start,
    };
    let observe = |report: &mut ReplayReport, session: &TeleopSession| -> Result<(), FilterError> {
        if let Some(h) = exact_h_min(&scene, &session.state().p, session.cbf(), Method::Exact)? {
            if report.h_min.is_none_or(|m| h < m) {
                report.h_min = Some(h);
                report.h_min_tick = session.tick();
            }
        }
        report.max_speed = report.max_speed.max(session.state().v.norm());
        Ok(())
    };
    for _ in 0..ticks {
        let now = session.time();
        while next < inputs.len() && inputs[next].t <= now + 1e-9 {
            if session.submit_input(&inputs[next].command, next as u64 + 1).is_err() {
                report.rejected_inputs += 1;
            }
            next += 1;
        }
        observe(&mut report, &session)?;
        if let Some(f) = session.step()? {
            report.frames += 1;
            report.modified_frames += f.was_modified as usize;
        }
    }
    observe(&mut report, &session)?;
    report.final_position = session.state().p;
    Ok(report)
}

/// Ten adversarial pilots for the `hall-300k` roster scene, all starting at
/// `HALL_START`: five ram walls or pillars, two oscillate between the walls
/// and three are random.
pub const HALL_START: [f64; 3] = [-5.0, 0.0, 2.0];

pub fn hall_streams(a_max: f64) -> Vec<(&'static str, InputScript)> {
    let dir = |x: f64, y: f64, z: f64| Vector3::new(x, y, z).normalize() * a_max;
    let to_pillar = |px: f64, py: f64| dir(px - HALL_START[0], py - HALL_START[1], 0.0);
    vec![
        ("ram-left-wall", InputScript::Constant { accel: dir(0.0, 1.0, 0.0) }),
        ("ram-right-wall-oblique", InputScript::Constant { accel: dir(0.6, -0.8, 0.0) }),
        ("ram-centre-pillar", InputScript::Constant { accel: to_pillar(0.0, 1.0) }),
        ("ram-rear-pillar", InputScript::Constant { accel: to_pillar(-10.0, 0.0) }),
        ("ram-wall-climbing", InputScript::Constant { accel: dir(0.0, 1.0, 0.15) }),
        ("square-wall-to-wall", InputScript::Square { amplitude: dir(0.0, 1.0, 0.0), period: 6.0 }),
        ("sine-sweep", InputScript::Sine { amplitude: Vector3::new(0.3 * a_max, a_max, 0.0), period: 8.0 }),
        ("random-slow", InputScript::Random { seed: 1, hold: 0.2, magnitude: a_max, dropout: 0.0 }),
        ("random-fast", InputScript::Random { seed: 2, hold: 0.05, magnitude: a_max, dropout: 0.0 }),
        ("random-dropouts", InputScript::Random { seed: 3, hold: 0.4, magnitude: a_max, dropout: 0.3 }),
    ]
}
