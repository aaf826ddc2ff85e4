//! CBF safety filter for a double integrator `p̈ = u`.
//!
//! Each ellipsoid contributes the half-space
//! `2φ(p−y*)ᵀ(u + (α+β)v) ≥ −vᵀHv − αβh`. A filter step runs a spatial broad
//! phase, evaluates exact barriers for the candidates, drops constraints no
//! admissible control can violate and projects `ū` onto what is left
//! intersected with `‖u‖ ≤ a_max`.

use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distance::{
    distance_full, point_variant_h, sphere_variant_h, BisectionConfig, DistanceError, DistanceResult,
};
use crate::qp::{self, QPProblem, QpStatus};
use crate::scene::{Obstacle, PreparedScene};

pub use crate::qp::{ConstraintSource, HalfSpace};

/// Slack allowed in the redundancy certificate `−‖a‖ a_max ≥ b`.
pub const PRUNE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Distance(#[from] DistanceError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CBFConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Rate of the velocity barrier `v_max² − ‖v‖²`.
    pub kappa: f64,
    pub robot_radius: f64,
    pub buffer: f64,
    pub v_max: f64,
    pub a_max: f64,
    pub pruning_enabled: bool,
    pub velocity_barrier: bool,
    pub bisection: BisectionConfig,
}

impl Default for CBFConfig {
    fn default() -> Self {
        let (alpha, beta) = (4.0, 4.0);
        Self {
            alpha,
            beta,
            kappa: alpha * beta,
            robot_radius: 0.2,
            buffer: 0.05,
            v_max: 1.0,
            a_max: 8.0,
            pruning_enabled: true,
            velocity_barrier: true,
            bisection: BisectionConfig::default(),
        }
    }
}

impl CBFConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        let err = |m: String| Err(FilterError::Config(m));
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("kappa", self.kappa)] {
            if !(v > 0.0 && v.is_finite()) {
                return err(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("v_max", self.v_max), ("a_max", self.a_max)] {
            if !(v > 0.0 && v.is_finite()) {
                return err(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.robot_radius >= 0.0 && self.buffer >= 0.0) {
            return err("robot_radius and buffer must be non-negative".into());
        }
        // Relative slack so that configurations on the boundary pass.
        if self.alpha + self.beta > self.a_max / self.v_max * (1.0 + 1e-12) {
            return err(format!(
                "alpha + beta = {} exceeds a_max / v_max = {}",
                self.alpha + self.beta,
                self.a_max / self.v_max
            ));
        }
        self.bisection.validate().map_err(FilterError::Config)
    }

    /// `r + ε`.
    pub fn clearance(&self) -> f64 {
        self.robot_radius + self.buffer
    }

    /// Barrier value above which no admissible control can violate an
    /// ellipsoid's constraint at speed `speed`.
    pub fn skip_threshold(&self, speed: f64) -> f64 {
        let k = self.a_max + (self.alpha + self.beta) * speed;
        let ab = self.alpha * self.beta;
        let c = self.clearance().powi(2);
        (2.0 * k * k + 2.0 * k * (k * k + ab * ab * c).sqrt()) / (ab * ab)
    }

    /// Centre distance beyond which a point obstacle is skippable; the
    /// broad-phase query radius for bounding spheres.
    pub fn skip_distance(&self, speed: f64) -> f64 {
        (self.skip_threshold(speed) + self.clearance().powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl RobotState {
    pub fn new(p: Vector3<f64>, v: Vector3<f64>) -> Self {
        Self { p, v }
    }

    pub fn at_rest(p: Vector3<f64>) -> Self {
        Self { p, v: Vector3::zeros() }
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(self.v.iter()).all(|x| x.is_finite())
    }
}

/// Barrier geometry used per ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exact,
    #[serde(rename = "sphere-variant", alias = "sphere")]
    Sphere,
    #[serde(rename = "point-variant", alias = "point")]
    Point,
    Unfiltered,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Exact, Method::Sphere, Method::Point, Method::Unfiltered];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::Sphere => "sphere-variant",
            Method::Point => "point-variant",
            Method::Unfiltered => "unfiltered",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "exact" => Some(Method::Exact),
            "sphere" | "sphere-variant" => Some(Method::Sphere),
            "point" | "point-variant" => Some(Method::Point),
            "unfiltered" | "none" => Some(Method::Unfiltered),
            _ => None,
        }
    }

    pub fn evaluate(&self, o: &Obstacle, p: &Vector3<f64>, cfg: &CBFConfig) -> Result<DistanceResult, DistanceError> {
        let (r, e) = (cfg.robot_radius, cfg.buffer);
        match self {
            Method::Exact | Method::Unfiltered => distance_full(o, p, r, e, &cfg.bisection),
            Method::Sphere => Ok(sphere_variant_h(o, p, r, e)),
            Method::Point => Ok(point_variant_h(o, p, r, e)),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub total: usize,
    pub candidates: usize,
    pub evaluated: usize,
    pub kept: usize,
    pub active: usize,
}

/// Stage durations in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub broad_phase: f64,
    pub distance: f64,
    pub prune: f64,
    pub qp: f64,
}

impl Timing {
    pub fn total(&self) -> f64 {
        self.broad_phase + self.distance + self.prune + self.qp
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterResult {
    pub u: Vector3<f64>,
    pub was_modified: bool,
    /// Smallest barrier value among evaluated ellipsoids; `None` when the
    /// broad phase left nothing to evaluate.
    pub h_min: Option<f64>,
    pub counts: Counts,
    pub timing: Timing,
    pub fallback_used: bool,
    #[serde(skip)]
    pub constraints: Vec<HalfSpace>,
}

/// Half-space contributed by one ellipsoid at `state`.
pub fn assemble_constraint(dr: &DistanceResult, state: &RobotState, cfg: &CBFConfig, source: ConstraintSource) -> HalfSpace {
    let a = dr.gradient;
    let v = state.v;
    let b = -v.dot(&(dr.hessian * v)) - cfg.alpha * cfg.beta * dr.h - (cfg.alpha + cfg.beta) * a.dot(&v);
    HalfSpace { normal: a, offset: b, source, in_collision: dr.in_collision() }
}

/// `u₀ = −(α+β)v`, feasible for every constraint in the safe set.
pub fn feasible_control(state: &RobotState, cfg: &CBFConfig) -> Vector3<f64> {
    -(cfg.alpha + cfg.beta) * state.v
}

/// `−2vᵀu ≥ −κ(v_max² − ‖v‖²)`.
pub fn velocity_constraint(state: &RobotState, cfg: &CBFConfig) -> HalfSpace {
    HalfSpace::new(
        -2.0 * state.v,
        -cfg.kappa * (cfg.v_max * cfg.v_max - state.v.norm_squared()),
        ConstraintSource::Velocity,
    )
}

/// Ids of ellipsoids whose constraint might be violable at this state.
pub fn broad_phase(scene: &PreparedScene, state: &RobotState, cfg: &CBFConfig) -> Vec<u32> {
    let mut out = Vec::new();
    scene.index.query_into(&state.p, cfg.skip_distance(state.v.norm()), &mut out);
    out.sort_unstable();
    out
}

/// Drops candidates whose constraint provably cannot bind, using only the
/// bounding sphere `(μ, s)`.
///
/// With the robot outside the sphere the closest point `y*` lies inside it,
/// so `√d ∈ [ρ − s, ρ + s]` and `(p − y*)·v ≥ (p − μ)·v − s‖v‖`. The
/// curvature term is nonnegative outside a convex set. Binding needs
/// `2√d a_max > αβ(d − c) + 2(α+β)(p − y*)·v`; the left side minus the
/// first right-hand term is concave in `√d`, so its maximum over the
/// interval is cheap.
pub fn prescreen(scene: &PreparedScene, ids: &[u32], state: &RobotState, cfg: &CBFConfig) -> Vec<u32> {
    let ab = cfg.alpha * cfg.beta;
    let c = cfg.clearance().powi(2);
    let speed = state.v.norm();
    let peak = cfg.a_max / ab;
    ids.iter()
        .copied()
        .filter(|&id| {
            let o = &scene.obstacles[id as usize];
            let s = o.bounding_radius();
            let rel = state.p - o.center;
            let rho = rel.norm();
            if rho <= s * (1.0 + 1e-9) + 1e-9 {
                return true;
            }
            let x = peak.clamp(rho - s, rho + s);
            let gain = 2.0 * cfg.a_max * x - ab * (x * x - c);
            let drift = 2.0 * (cfg.alpha + cfg.beta) * (rel.dot(&state.v) - s * speed);
            gain + 1e-9 * (1.0 + gain.abs() + drift.abs()) > drift
        })
        .collect()
}

/// Redundancy test: true when some `‖u‖ ≤ a_max` violates the constraint.
pub fn can_bind(h: &HalfSpace, a_max: f64) -> bool {
    h.in_collision || -h.normal.norm() * a_max < h.offset + PRUNE_TOLERANCE
}

pub fn exact_prune(constraints: Vec<HalfSpace>, cfg: &CBFConfig) -> Vec<HalfSpace> {
    constraints.into_iter().filter(|h| can_bind(h, cfg.a_max)).collect()
}

fn clip(u: &Vector3<f64>, limit: f64) -> Vector3<f64> {
    let n = u.norm();
    if n > limit {
        u * (limit / n)
    } else {
        *u
    }
}

/// One filter step.
pub fn filter(
    scene: &PreparedScene,
    state: &RobotState,
    u_des: &Vector3<f64>,
    cfg: &CBFConfig,
    method: Method,
) -> Result<FilterResult, FilterError> {
    if !state.is_finite() {
        return Err(FilterError::NonFinite("state"));
    }
    if !u_des.iter().all(|x| x.is_finite()) {
        return Err(FilterError::NonFinite("desired control"));
    }
    let mut counts = Counts { total: scene.len(), ..Counts::default() };
    let mut timing = Timing::default();
    let unchanged = |u: Vector3<f64>, counts, timing, h_min| FilterResult {
        was_modified: (u - u_des).norm() > 1e-9,
        u,
        h_min,
        counts,
        timing,
        fallback_used: false,
        constraints: Vec::new(),
    };
    if method == Method::Unfiltered {
        return Ok(unchanged(*u_des, counts, timing, None));
    }
    if scene.is_empty() {
        return Ok(unchanged(clip(u_des, cfg.a_max), counts, timing, None));
    }

    let t0 = Instant::now();
    let ids = broad_phase(scene, state, cfg);
    counts.candidates = ids.len();
    let t1 = Instant::now();
    timing.broad_phase = (t1 - t0).as_secs_f64();

    let ids = if cfg.pruning_enabled { prescreen(scene, &ids, state, cfg) } else { ids };
    let evaluated = evaluate_batch(scene, &ids, &state.p, cfg, method)?;
    counts.evaluated = evaluated.len();
    let h_min = evaluated.iter().map(|(_, d)| d.h).min_by(f64::total_cmp);
    let t2 = Instant::now();
    timing.distance = (t2 - t1).as_secs_f64();

    let mut constraints: Vec<HalfSpace> = evaluated
        .iter()
        .map(|(id, d)| assemble_constraint(d, state, cfg, ConstraintSource::Ellipsoid(*id as usize)))
        .collect();
    if cfg.pruning_enabled {
        constraints = exact_prune(constraints, cfg);
    }
    if cfg.velocity_barrier {
        constraints.push(velocity_constraint(state, cfg));
    }
    counts.kept = constraints.iter().filter(|h| h.source != ConstraintSource::Velocity).count();
    let t3 = Instant::now();
    timing.prune = (t3 - t2).as_secs_f64();

    if u_des.norm() <= cfg.a_max && constraints.iter().all(|h| h.slack(u_des) >= 0.0) {
        let mut r = unchanged(*u_des, counts, timing, h_min);
        r.constraints = constraints;
        return Ok(r);
    }

    let problem = QPProblem { target: *u_des, constraints, norm_limit: Some(cfg.a_max) };
    let sol = qp::solve(&problem, None);
    timing.qp = t3.elapsed().as_secs_f64();
    let (u, fallback_used) = match sol.status {
        QpStatus::Optimal => (sol.u, false),
        QpStatus::FallbackNeeded => {
            let safe = h_min.is_none_or(|h| h > 0.0) && state.v.norm() <= cfg.v_max;
            if safe {
                (feasible_control(state, cfg), true)
            } else {
                (sol.u, true)
            }
        }
    };
    counts.active = sol.active_set.len();
    Ok(FilterResult {
        u,
        was_modified: (u - u_des).norm() > 1e-9,
        h_min,
        counts,
        timing,
        fallback_used,
        constraints: problem.constraints,
    })
}

/// Exact `min_i h_i(p)` over the whole scene, or `None` for an empty scene.
///
/// Walks ellipsoids nearest centre first. Once the centre distance `ρ`
/// exceeds the largest bounding radius `s_max`, every remaining surface is at
/// least `ρ − s_max` away, so the walk ends when `(ρ − s_max)² − (r+ε)²`
/// reaches the best value found.
pub fn exact_h_min(scene: &PreparedScene, p: &Vector3<f64>, cfg: &CBFConfig, method: Method) -> Result<Option<f64>, FilterError> {
    if !p.iter().all(|x| x.is_finite()) {
        return Err(FilterError::NonFinite("position"));
    }
    let c2 = cfg.clearance().powi(2);
    let s_max = scene.index.max_radius();
    let lower_bound = |rho: f64, s: f64| if rho > s { (rho - s).powi(2) - c2 } else { -s * s - c2 };
    let mut best: Option<f64> = None;
    for (id, rho) in scene.index.nearest_centers(p) {
        if let Some(b) = best {
            if rho > s_max && lower_bound(rho, s_max) >= b {
                break;
            }
            if lower_bound(rho, scene.obstacles[id as usize].semi_axes.max()) >= b {
                continue;
            }
        }
        let h = method.evaluate(&scene.obstacles[id as usize], p, cfg)?.h;
        best = Some(best.map_or(h, |b: f64| b.min(h)));
    }
    Ok(best)
}

/// Barrier evaluations for `ids`, in id order.
pub fn evaluate_batch(
    scene: &PreparedScene,
    ids: &[u32],
    p: &Vector3<f64>,
    cfg: &CBFConfig,
    method: Method,
) -> Result<Vec<(u32, DistanceResult)>, FilterError> {
    use rayon::prelude::*;
    let eval = |&id: &u32| method.evaluate(&scene.obstacles[id as usize], p, cfg).map(|d| (id, d));
    let out: Result<Vec<_>, DistanceError> = if ids.len() >= 512 {
        ids.par_iter().map(eval).collect()
    } else {
        ids.iter().map(eval).collect()
    };
    Ok(out?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Ellipsoid, GaussianScene};

    fn unit_sphere_scene(center: [f64; 3]) -> PreparedScene {
        let s = GaussianScene::new("s", 1.0, vec![Ellipsoid::sphere(0, center, 1.0)]).unwrap();
        PreparedScene::new(s, None)
    }

    #[test]
    fn config_enforces_gain_bound() {
        let mut c = CBFConfig::default();
        assert!(c.validate().is_ok());
        c.alpha = 10.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn constraint_examples() {
        let cfg = CBFConfig { alpha: 1.0, beta: 1.0, robot_radius: 0.0, buffer: 0.0, ..CBFConfig::default() };
        let o = Ellipsoid::sphere(0, [0.0; 3], 1.0).obstacle(1.0);
        let state = RobotState::new(Vector3::new(2.0, 0.0, 0.0), Vector3::new(-1.0, 0.0, 0.0));
        let dr = distance_full(&o, &state.p, 0.0, 0.0, &cfg.bisection).unwrap();
        let h = assemble_constraint(&dr, &state, &cfg, ConstraintSource::Ellipsoid(0));
        assert!((h.normal - Vector3::new(2.0, 0.0, 0.0)).norm() < 1e-8);
        assert!((h.offset - 1.0).abs() < 1e-8);

        let rest = RobotState::at_rest(Vector3::new(3.0, 0.0, 0.0));
        let dr = distance_full(&o, &rest.p, 0.0, 0.0, &cfg.bisection).unwrap();
        let h = assemble_constraint(&dr, &rest, &cfg, ConstraintSource::Ellipsoid(0));
        assert!(h.offset < 0.0 && h.slack(&Vector3::zeros()) >= 0.0);
    }

    #[test]
    fn feasible_control_examples() {
        let cfg = CBFConfig { alpha: 1.0, beta: 1.0, ..CBFConfig::default() };
        assert_eq!(feasible_control(&RobotState::at_rest(Vector3::zeros()), &cfg), Vector3::zeros());
        let s = RobotState::new(Vector3::zeros(), Vector3::x());
        assert_eq!(feasible_control(&s, &cfg), Vector3::new(-2.0, 0.0, 0.0));
        let cfg = CBFConfig::default();
        let s = RobotState::new(Vector3::zeros(), Vector3::y() * cfg.v_max);
        assert!((feasible_control(&s, &cfg).norm() - cfg.a_max).abs() < 1e-12);
    }

    #[test]
    fn velocity_constraint_examples() {
        let cfg = CBFConfig::default();
        let h = velocity_constraint(&RobotState::at_rest(Vector3::zeros()), &cfg);
        assert_eq!(h.normal, Vector3::zeros());
        assert!(h.offset < 0.0);
        let h = velocity_constraint(&RobotState::new(Vector3::zeros(), Vector3::x()), &cfg);
        assert_eq!(h.offset, 0.0);
        assert!(h.slack(&Vector3::new(-1.0, 0.0, 0.0)) >= 0.0 && h.slack(&Vector3::x()) < 0.0);
    }

    #[test]
    fn prune_examples() {
        let cfg = CBFConfig { a_max: 5.0, ..CBFConfig::default() };
        let mk = |b| HalfSpace::new(Vector3::new(2.0, 0.0, 0.0), b, ConstraintSource::Ellipsoid(0));
        assert!(!can_bind(&mk(-100.0), cfg.a_max));
        assert!(can_bind(&mk(-5.0), cfg.a_max));
        let mut inside = mk(-100.0);
        inside.in_collision = true;
        assert_eq!(exact_prune(vec![inside], &cfg).len(), 1);
    }

    #[test]
    fn empty_scene_clips() {
        let scene = PreparedScene::new(GaussianScene::empty("e"), None);
        let cfg = CBFConfig { a_max: 2.0, alpha: 1.0, beta: 1.0, ..CBFConfig::default() };
        let s = RobotState::at_rest(Vector3::zeros());
        let r = filter(&scene, &s, &Vector3::x(), &cfg, Method::Exact).unwrap();
        assert_eq!(r.u, Vector3::x());
        assert!(!r.was_modified);
        let r = filter(&scene, &s, &Vector3::new(3.0, 0.0, 0.0), &cfg, Method::Exact).unwrap();
        assert_eq!(r.u, Vector3::new(2.0, 0.0, 0.0));
    }

    #[test]
    fn distant_obstacle_leaves_control_alone() {
        let scene = unit_sphere_scene([10.0, 0.0, 0.0]);
        let cfg = CBFConfig::default();
        let r = filter(&scene, &RobotState::at_rest(Vector3::zeros()), &Vector3::zeros(), &cfg, Method::Exact).unwrap();
        assert_eq!(r.u, Vector3::zeros());
        assert!(!r.was_modified);
        assert_eq!(r.counts.candidates, 0);
        assert_eq!(r.h_min, None);
    }

    #[test]
    fn inward_push_is_corrected() {
        let scene = unit_sphere_scene([0.0; 3]);
        let cfg = CBFConfig::default();
        let s = RobotState::new(Vector3::new(1.6, 0.0, 0.0), Vector3::new(-1.0, 0.0, 0.0));
        let r = filter(&scene, &s, &Vector3::new(-8.0, 0.0, 0.0), &cfg, Method::Exact).unwrap();
        assert!(r.was_modified);
        assert!(r.u.x > 0.0);
        assert!(r.u.norm() <= cfg.a_max + 1e-9);
        for h in &r.constraints {
            assert!(h.slack(&r.u) >= -1e-7);
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()), Some(m));
            let j = serde_json::to_string(&m).unwrap();
            assert_eq!(j, format!("\"{}\"", m.name()));
        }
    }
}
