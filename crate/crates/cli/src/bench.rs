//! Filter-step latency across scene sizes, with and without pruning, and on
//! point-cloud stand-ins.

use std::time::Instant;

use anyhow::bail;
use gsplat_cbf::filter::{exact_h_min, filter, CBFConfig, FilterResult, Method, RobotState};
use gsplat_cbf::rng::{substream, Substream};
use gsplat_cbf::scene::roster::{pillar_ring, point_cloud};
use gsplat_cbf::scene::{generate_synthetic, GaussianScene, PreparedScene, SyntheticSpec};
use gsplat_cbf::sim::percentile;
use gsplat_cbf::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruningMode {
    On,
    Off,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    /// Pillar-ring sizes benchmarked when no scene is named.
    pub sizes: Vec<usize>,
    pub states: usize,
    /// Untimed calls before measuring.
    pub warmup: usize,
    pub pruning: PruningMode,
    /// Sizes that also get a point-cloud run (six points per ellipsoid,
    /// point variant).
    pub point_cloud_sizes: Vec<usize>,
    /// Margin around the scene bounds for state sampling.
    pub padding: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![15_000, 100_000, 200_000, 300_000, 500_000],
            states: 200,
            warmup: 10,
            pruning: PruningMode::Both,
            point_cloud_sizes: vec![15_000, 100_000],
            padding: 1.0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.states == 0 {
            bail!("states must be at least 1");
        }
        if self.sizes.contains(&0) {
            bail!("sizes must be positive");
        }
        if !(self.padding >= 0.0 && self.padding.is_finite()) {
            bail!("padding must be non-negative");
        }
        Ok(())
    }
}

/// One filter query: state plus desired control.
#[derive(Debug, Clone, Copy)]
pub struct Query {
    pub state: RobotState,
    pub u_des: Vector3<f64>,
}

fn in_ball(rng: &mut impl Rng, radius: f64, surface: bool) -> Vector3<f64> {
    loop {
        let d = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let n = d.norm();
        if n > 1e-3 && n <= 1.0 {
            let len = if surface { 1.0 } else { rng.random_range(0.0f64..1.0).cbrt() };
            return d / n * radius * len;
        }
    }
}

/// Queries in typical free space: positions uniform in the padded bounds
/// with `h_min ≥ 2(r+ε)²`, velocities uniform in the `v_max` ball, desired
/// controls of norm `a_max` in a uniform direction.
pub fn free_space_queries(scene: &PreparedScene, cbf: &CBFConfig, n: usize, padding: f64, seed: u64) -> anyhow::Result<Vec<Query>> {
    let Some((lo, hi)) = scene.scene.bounds() else { bail!("scene '{}' is empty", scene.scene.name) };
    let (lo, hi) = (lo.add_scalar(-padding), hi.add_scalar(padding));
    let floor = 2.0 * cbf.clearance().powi(2);
    let mut rng = substream(seed, Substream::Bench, 0);
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        attempts += 1;
        if attempts > 1000 * n + 10_000 {
            bail!("could not find {n} free-space states in '{}'", scene.scene.name);
        }
        let p = Vector3::from_fn(|i, _| rng.random_range(lo[i]..=hi[i]));
        if exact_h_min(scene, &p, cbf, Method::Exact)?.is_some_and(|h| h < floor) {
            continue;
        }
        let v = in_ball(&mut rng, cbf.v_max, false);
        let u_des = in_ball(&mut rng, cbf.a_max, true);
        out.push(Query { state: RobotState::new(p, v), u_des });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub scene: String,
    /// Primitives in the benchmarked scene (points in point-cloud mode).
    pub size: usize,
    pub mode: String,
    pub method: String,
    pub pruning: bool,
    pub states: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub mean_candidates: f64,
    pub mean_evaluated: f64,
    pub mean_kept: f64,
    /// Mean of kept / size.
    pub kept_fraction: f64,
    pub modified_fraction: f64,
    /// Largest control difference to the pruned run on the same states.
    pub max_diff_to_pruned: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Least-squares slope of log p50 against log size over the pruned
    /// ellipsoid rows; 1 is linear.
    pub scaling_exponent: Option<f64>,
    /// Pruning-off p50 over pruning-on p50, per scene.
    pub pruning_speedup: Vec<(String, f64)>,
    /// Point-cloud p50 over ellipsoid p50, per scene.
    pub point_cloud_ratio: Vec<(String, f64)>,
}

fn measure(
    scene: &PreparedScene,
    queries: &[Query],
    cbf: &CBFConfig,
    method: Method,
    warmup: usize,
) -> anyhow::Result<(Vec<f64>, Vec<FilterResult>)> {
    for q in queries.iter().cycle().take(warmup.min(queries.len())) {
        filter(scene, &q.state, &q.u_des, cbf, method)?;
    }
    let mut lat = Vec::with_capacity(queries.len());
    let mut results = Vec::with_capacity(queries.len());
    for q in queries {
        let t0 = Instant::now();
        let r = filter(scene, &q.state, &q.u_des, cbf, method)?;
        lat.push(t0.elapsed().as_secs_f64() * 1e3);
        results.push(r);
    }
    Ok((lat, results))
}

fn row(scene: &PreparedScene, mode: &str, method: Method, pruning: bool, mut lat: Vec<f64>, res: &[FilterResult]) -> BenchRow {
    let n = res.len() as f64;
    let size = scene.len();
    let mean = |f: &dyn Fn(&FilterResult) -> f64| res.iter().map(f).sum::<f64>() / n;
    let mean_ms = lat.iter().sum::<f64>() / n;
    lat.sort_by(f64::total_cmp);
    BenchRow {
        scene: scene.scene.name.clone(),
        size,
        mode: mode.into(),
        method: method.name().into(),
        pruning,
        states: res.len(),
        mean_ms,
        p50_ms: percentile(&lat, 50.0).unwrap_or(f64::NAN),
        p99_ms: percentile(&lat, 99.0).unwrap_or(f64::NAN),
        mean_candidates: mean(&|r| r.counts.candidates as f64),
        mean_evaluated: mean(&|r| r.counts.evaluated as f64),
        mean_kept: mean(&|r| r.counts.kept as f64),
        kept_fraction: mean(&|r| r.counts.kept as f64 / size.max(1) as f64),
        modified_fraction: mean(&|r| r.was_modified as u8 as f64),
        max_diff_to_pruned: None,
    }
}

/// Benchmarks one scene; `point_cloud_mode` adds the point-variant run.
pub fn bench_scene(
    scene: &GaussianScene,
    cbf: &CBFConfig,
    cfg: &BenchConfig,
    seed: u64,
    point_cloud_mode: bool,
) -> anyhow::Result<Vec<BenchRow>> {
    let prepared = PreparedScene::new(scene.clone(), None);
    let queries = free_space_queries(&prepared, cbf, cfg.states, cfg.padding, seed)?;
    let on = CBFConfig { pruning_enabled: true, ..*cbf };
    let off = CBFConfig { pruning_enabled: false, ..*cbf };
    let mut rows = Vec::new();
    let (lat, pruned) = measure(&prepared, &queries, &on, Method::Exact, cfg.warmup)?;
    if cfg.pruning != PruningMode::Off {
        rows.push(row(&prepared, "ellipsoids", Method::Exact, true, lat, &pruned));
    }
    if cfg.pruning != PruningMode::On {
        let (lat, res) = measure(&prepared, &queries, &off, Method::Exact, cfg.warmup)?;
        let diff = res.iter().zip(&pruned).map(|(a, b)| (a.u - b.u).norm()).fold(0.0, f64::max);
        let mut r = row(&prepared, "ellipsoids", Method::Exact, false, lat, &res);
        r.max_diff_to_pruned = Some(diff);
        rows.push(r);
    }
    if point_cloud_mode {
        let pc = PreparedScene::new(point_cloud(scene)?, None);
        let cfg_pc = if cfg.pruning == PruningMode::Off { off } else { on };
        let (lat, res) = measure(&pc, &queries, &cfg_pc, Method::Point, cfg.warmup)?;
        rows.push(row(&pc, "point-cloud", Method::Point, cfg_pc.pruning_enabled, lat, &res));
    }
    Ok(rows)
}

/// Pillar ring with `k` splats.
pub fn pillar_scene(k: usize, seed: u64) -> anyhow::Result<GaussianScene> {
    let mut spec = SyntheticSpec::new(pillar_ring(k), seed);
    spec.name = Some(format!("pillar-ring-{k}"));
    Ok(generate_synthetic(&spec)?)
}

pub fn summarize(rows: Vec<BenchRow>) -> BenchReport {
    let pruned: Vec<&BenchRow> = rows.iter().filter(|r| r.mode == "ellipsoids" && r.pruning).collect();
    let scaling_exponent = (pruned.len() >= 2).then(|| {
        let pts: Vec<(f64, f64)> = pruned.iter().map(|r| ((r.size as f64).ln(), r.p50_ms.ln())).collect();
        let n = pts.len() as f64;
        let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    });
    let find = |scene: &str, mode: &str, pruning: bool| {
        rows.iter().find(|r| r.scene.trim_end_matches("-points") == scene && r.mode == mode && r.pruning == pruning)
    };
    let mut pruning_speedup = Vec::new();
    let mut point_cloud_ratio = Vec::new();
    for r in &pruned {
        if let Some(off) = find(&r.scene, "ellipsoids", false) {
            pruning_speedup.push((r.scene.clone(), off.p50_ms / r.p50_ms));
        }
        if let Some(pc) = find(&r.scene, "point-cloud", true) {
            point_cloud_ratio.push((r.scene.clone(), pc.p50_ms / r.p50_ms));
        }
    }
    BenchReport { rows, scaling_exponent, pruning_speedup, point_cloud_ratio }
}

pub fn print_table(report: &BenchReport, mut out: impl std::io::Write) -> std::io::Result<()> {
    writeln!(
        out,
        "{:<24} {:>9} {:<12} {:<7} {:>9} {:>9} {:>9} {:>10} {:>9} {:>9}",
        "scene", "size", "mode", "pruning", "mean_ms", "p50_ms", "p99_ms", "evaluated", "kept", "kept_%"
    )?;
    for r in &report.rows {
        writeln!(
            out,
            "{:<24} {:>9} {:<12} {:<7} {:>9.3} {:>9.3} {:>9.3} {:>10.1} {:>9.1} {:>9.4}",
            r.scene,
            r.size,
            r.mode,
            if r.pruning { "on" } else { "off" },
            r.mean_ms,
            r.p50_ms,
            r.p99_ms,
            r.mean_evaluated,
            r.mean_kept,
            100.0 * r.kept_fraction
        )?;
    }
    if let Some(e) = report.scaling_exponent {
        writeln!(out, "scaling exponent (p50 vs size): {e:.3}")?;
    }
    for (s, x) in &report.pruning_speedup {
        writeln!(out, "pruning speedup {s}: {x:.2}x")?;
    }
    for (s, x) in &report.point_cloud_ratio {
        writeln!(out, "point cloud / ellipsoids {s}: {x:.2}x")?;
    }
    Ok(())
}
