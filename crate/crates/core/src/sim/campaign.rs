use std::io::Write;
use std::sync::Arc;

use nalgebra::Vector3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{compute_metrics, run_episode, SimConfig, TrajectoryLog};
use crate::filter::{exact_h_min, CBFConfig, FilterError, Method};
use crate::rng::{substream, Substream};
use crate::scene::PreparedScene;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("scene '{0}' is empty; no region to sample")]
    EmptyScene(String),
    #[error("no admissible start/goal pair after {0} attempts")]
    Exhausted(usize),
    #[error(transparent)]
    Filter(#[from] FilterError),
}

/// A scene to fly in plus the scene that safety is measured against.
#[derive(Debug, Clone)]
pub struct CampaignScene {
    pub name: String,
    pub scene: Arc<PreparedScene>,
    /// Defaults to `scene`.
    pub reference: Option<Arc<PreparedScene>>,
}

impl CampaignScene {
    pub fn new(name: impl Into<String>, scene: Arc<PreparedScene>) -> Self {
        Self { name: name.into(), scene, reference: None }
    }

    pub fn reference(&self) -> &PreparedScene {
        self.reference.as_deref().unwrap_or(&self.scene)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CampaignConfig {
    pub trajectories: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    /// Template episode; `start`, `goal` and `seed` are replaced per
    /// trajectory.
    pub sim: SimConfig,
    /// Margin added around the scene bounds when sampling start and goal.
    pub sampler_padding: f64,
    /// Record wall-clock latencies. Off makes outputs byte-identical across
    /// reruns.
    pub include_timing: bool,
    pub keep_logs: bool,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            trajectories: 100,
            methods: Method::ALL.to_vec(),
            seed: 0,
            sim: SimConfig::default(),
            sampler_padding: 1.0,
            include_timing: true,
            keep_logs: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub scene: String,
    pub method: String,
    pub trajectory: usize,
    pub seed: u64,
    pub min_h: Option<f64>,
    pub mean_control_diff: f64,
    pub progress: f64,
    pub mean_latency_ms: Option<f64>,
    pub p99_latency_ms: Option<f64>,
    pub modified_steps: usize,
    pub fallback_steps: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scene: String,
    pub method: String,
    pub trajectories: usize,
    pub min_h: Option<f64>,
    pub mean_min_h: Option<f64>,
    /// Trajectories whose `min_h` dropped below zero.
    pub unsafe_trajectories: usize,
    pub mean_control_diff: f64,
    pub mean_progress: f64,
    pub mean_latency_ms: Option<f64>,
    pub p99_latency_ms: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CampaignResult {
    pub rows: Vec<TrajectoryRow>,
    pub summary: Vec<SummaryRow>,
    /// Parallel to `rows` when `keep_logs` is set.
    pub logs: Vec<TrajectoryLog>,
}

/// Uniform start/goal pair in the padded scene bounds with both endpoints at
/// `h_min ≥ 2(r+ε)²` and separated by at least half the region diagonal.
pub fn sample_start_goal(
    scene: &PreparedScene,
    cbf: &CBFConfig,
    padding: f64,
    rng: &mut impl Rng,
) -> Result<(Vector3<f64>, Vector3<f64>), SamplerError> {
    const ATTEMPTS: usize = 100_000;
    let (lo, hi) = scene.scene.bounds().ok_or_else(|| SamplerError::EmptyScene(scene.scene.name.clone()))?;
    let (lo, hi) = (lo.add_scalar(-padding), hi.add_scalar(padding));
    let min_sep = 0.5 * (hi - lo).norm();
    let floor = 2.0 * cbf.clearance().powi(2);
    let free = |rng: &mut dyn rand::RngCore| -> Result<Option<Vector3<f64>>, SamplerError> {
        let p = Vector3::from_fn(|i, _| rng.random_range(lo[i]..=hi[i]));
        Ok(exact_h_min(scene, &p, cbf, Method::Exact)?.is_none_or(|h| h >= floor).then_some(p))
    };
    for _ in 0..ATTEMPTS {
        let Some(start) = free(rng)? else { continue };
        for _ in 0..64 {
            let Some(goal) = free(rng)? else { continue };
            if (goal - start).norm() >= min_sep {
                return Ok((start, goal));
            }
        }
    }
    Err(SamplerError::Exhausted(ATTEMPTS))
}

fn episode_seed(seed: u64, trajectory: usize) -> u64 {
    seed.wrapping_add((trajectory as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Paired campaign: every method flies the same start/goal pairs and noise
/// sequences.
pub fn run_campaign(scenes: &[CampaignScene], cfg: &CampaignConfig, cbf: &CBFConfig) -> Result<CampaignResult, SamplerError> {
    struct Job<'a> {
        scene: &'a CampaignScene,
        trajectory: usize,
        method: Method,
        sim: SimConfig,
    }
    let mut jobs = Vec::new();
    for sc in scenes {
        for t in 0..cfg.trajectories {
            let mut rng = substream(cfg.seed, Substream::Campaign, t as u64);
            let (start, goal) = sample_start_goal(&sc.scene, cbf, cfg.sampler_padding, &mut rng)?;
            let sim = SimConfig { start, goal, seed: episode_seed(cfg.seed, t), ..cfg.sim };
            for &method in &cfg.methods {
                jobs.push(Job { scene: sc, trajectory: t, method, sim });
            }
        }
    }
    let out: Vec<(TrajectoryRow, Option<TrajectoryLog>)> = jobs
        .par_iter()
        .map(|j| {
            let mut log = run_episode(&j.scene.scene, &j.sim, cbf, j.method);
            if !cfg.include_timing {
                log.strip_timing();
            }
            let (metrics, metric_err) = match compute_metrics(&log, j.scene.reference(), cbf) {
                Ok(m) => (Some(m), None),
                Err(e) => (None, Some(e.to_string())),
            };
            let row = TrajectoryRow {
                scene: j.scene.name.clone(),
                method: j.method.name().to_string(),
                trajectory: j.trajectory,
                seed: j.sim.seed,
                min_h: metrics.as_ref().and_then(|m| m.min_h),
                mean_control_diff: metrics.as_ref().map_or(f64::NAN, |m| m.mean_control_difference),
                progress: metrics.as_ref().map_or(f64::NAN, |m| m.progress),
                mean_latency_ms: metrics.as_ref().and_then(|m| m.mean_latency_ms),
                p99_latency_ms: metrics.as_ref().and_then(|m| m.p99_latency_ms),
                modified_steps: metrics.as_ref().map_or(0, |m| m.modified_steps),
                fallback_steps: metrics.as_ref().map_or(0, |m| m.fallback_steps),
                error: log.error.clone().or(metric_err),
            };
            (row, cfg.keep_logs.then_some(log))
        })
        .collect();
    let (rows, logs): (Vec<_>, Vec<_>) = out.into_iter().unzip();
    let summary = summarize(&rows, scenes, &cfg.methods);
    Ok(CampaignResult { rows, summary, logs: logs.into_iter().flatten().collect() })
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn summarize(rows: &[TrajectoryRow], scenes: &[CampaignScene], methods: &[Method]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for sc in scenes {
        for m in methods {
            let sel: Vec<&TrajectoryRow> = rows.iter().filter(|r| r.scene == sc.name && r.method == m.name()).collect();
            let hs = || sel.iter().filter_map(|r| r.min_h);
            out.push(SummaryRow {
                scene: sc.name.clone(),
                method: m.name().to_string(),
                trajectories: sel.len(),
                min_h: hs().min_by(f64::total_cmp),
                mean_min_h: mean(hs()),
                unsafe_trajectories: hs().filter(|h| *h < 0.0).count(),
                mean_control_diff: mean(sel.iter().map(|r| r.mean_control_diff)).unwrap_or(f64::NAN),
                mean_progress: mean(sel.iter().map(|r| r.progress)).unwrap_or(f64::NAN),
                mean_latency_ms: mean(sel.iter().filter_map(|r| r.mean_latency_ms)),
                p99_latency_ms: sel.iter().filter_map(|r| r.p99_latency_ms).max_by(f64::total_cmp),
            });
        }
    }
    out
}

pub fn write_campaign_csv(rows: &[TrajectoryRow], out: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_json(summary: &[SummaryRow], out: impl Write) -> serde_json::Result<()> {
    serde_json::to_writer_pretty(out, summary)
}
