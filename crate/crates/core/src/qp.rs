//! Dense QP `min ‖u − ū‖²` s.t. `aᵢᵀu ≥ bᵢ` (and optionally `‖u‖ ≤ a_max`)
//! in three variables.
//!
//! Linear constraints are handled by the Goldfarb–Idnani dual active-set
//! method, which starts at the unconstrained optimum `ū` and adds the most
//! violated constraint at each outer step. With an identity Hessian every
//! inner step is a ≤3×3 Gram solve. The norm ball is handled through its
//! multiplier `μ`: `u(μ) = Proj_P(ū / (1 + μ))` has non-increasing norm in
//! `μ`, so one-dimensional bisection finds the active ball constraint.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "id")]
pub enum ConstraintSource {
    Ellipsoid(usize),
    Velocity,
}

/// Half-space `normalᵀ u ≥ offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub normal: Vector3<f64>,
    pub offset: f64,
    pub source: ConstraintSource,
    pub in_collision: bool,
}

impl HalfSpace {
    pub fn new(normal: Vector3<f64>, offset: f64, source: ConstraintSource) -> Self {
        Self { normal, offset, source, in_collision: false }
    }

    /// `aᵀu − b`; negative when violated.
    pub fn slack(&self, u: &Vector3<f64>) -> f64 {
        self.normal.dot(u) - self.offset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QPProblem {
    pub target: Vector3<f64>,
    pub constraints: Vec<HalfSpace>,
    pub norm_limit: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QpStatus {
    Optimal,
    FallbackNeeded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QPSolution {
    pub u: Vector3<f64>,
    /// Indices into `QPProblem::constraints`.
    pub active_set: Vec<usize>,
    /// Multipliers `λᵢ` in the convention `u − ū = ½ Σ λᵢ aᵢ − μ u`.
    pub multipliers: Vec<f64>,
    /// Multiplier of the norm ball (0 when inactive or absent).
    pub norm_multiplier: f64,
    pub status: QpStatus,
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Unit-normal copy of a constraint with its original index.
#[derive(Debug, Clone, Copy)]
struct Row {
    n: Vector3<f64>,
    c: f64,
    index: usize,
}

enum Inner {
    Optimal { x: Vector3<f64>, active: Vec<(usize, f64)>, iterations: usize },
    Infeasible { iterations: usize },
    IterationCap { iterations: usize },
}

const VIOLATION_TOL: f64 = 1e-12;

fn tol(c: f64) -> f64 {
    VIOLATION_TOL * c.abs().max(1.0)
}

/// Normalises rows, drops zero normals and keeps the tightest of each set of
/// parallel normals. Returns `None` if a zero-normal row is infeasible.
fn prepare(constraints: &[HalfSpace]) -> Option<Vec<Row>> {
    const QUANTUM: f64 = (1u64 << 40) as f64;
    let mut rows: Vec<Row> = Vec::with_capacity(constraints.len());
    let mut seen: HashMap<[i64; 3], usize> = HashMap::new();
    for (index, h) in constraints.iter().enumerate() {
        let norm = h.normal.norm();
        if norm == 0.0 {
            if h.offset > 0.0 {
                return None;
            }
            continue;
        }
        let row = Row { n: h.normal / norm, c: h.offset / norm, index };
        let key = row.n.map(|v| (v * QUANTUM).round() as i64).into();
        match seen.get(&key) {
            Some(&slot) => {
                if row.c > rows[slot].c {
                    rows[slot] = row;
                }
            }
            None => {
                seen.insert(key, rows.len());
                rows.push(row);
            }
        }
    }
    Some(rows)
}

/// Goldfarb–Idnani with `G = I`: projection of `target` onto the polyhedron.
fn dual_active_set(target: &Vector3<f64>, rows: &[Row], cap: usize) -> Inner {
    let mut x = *target;
    let mut active: Vec<(usize, f64)> = Vec::with_capacity(3);
    let mut iterations = 0;
    loop {
        let mut pick: Option<(usize, f64)> = None;
        for (j, r) in rows.iter().enumerate() {
            if active.iter().any(|&(a, _)| a == j) {
                continue;
            }
            let s = r.n.dot(&x) - r.c;
            if s < -tol(r.c) && pick.is_none_or(|(_, best)| s < best) {
                pick = Some((j, s));
            }
        }
        let Some((p, _)) = pick else {
            return Inner::Optimal { x, active, iterations };
        };
        let np = rows[p].n;
        let mut up = 0.0;
        loop {
            iterations += 1;
            if iterations > cap {
                return Inner::IterationCap { iterations };
            }
            let k = active.len();
            let r = if k == 0 {
                DVector::zeros(0)
            } else {
                let n = DMatrix::from_fn(3, k, |i, c| rows[active[c].0].n[i]);
                let gram = n.transpose() * &n;
                let rhs = n.transpose() * DVector::from_column_slice(np.as_slice());
                match gram.lu().solve(&rhs) {
                    Some(r) => r,
                    None => return Inner::IterationCap { iterations },
                }
            };
            let mut z = np;
            for (c, &(a, _)) in active.iter().enumerate() {
                z -= rows[a].n * r[c];
            }
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (c, &(_, m)) in active.iter().enumerate() {
                if r[c] > 1e-14 {
                    let ratio = m / r[c];
                    if ratio < t1 {
                        t1 = ratio;
                        drop = Some(c);
                    }
                }
            }
            let zz = z.dot(&np);
            let t2 = if zz > 1e-14 { -(np.dot(&x) - rows[p].c) / zz } else { f64::INFINITY };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Inner::Infeasible { iterations };
            }
            for (c, entry) in active.iter_mut().enumerate() {
                entry.1 -= t * r[c];
            }
            up += t;
            if t2.is_finite() {
                x += z * t;
            }
            if t2 <= t1 {
                active.push((p, up));
                break;
            }
            active.remove(drop.expect("partial step has a blocking constraint"));
        }
    }
}

/// Minimises `½ Σ max(0, cᵢ − nᵢᵀu)²` over the ball (accelerated projected
/// gradient), the best effort when the constraints admit no solution.
fn least_violation(rows: &[Row], start: Vector3<f64>, limit: Option<f64>) -> Vector3<f64> {
    let project = |u: Vector3<f64>| match limit {
        Some(a) if u.norm() > a => u * (a / u.norm()),
        _ => u,
    };
    let grad = |u: &Vector3<f64>| {
        rows.iter().fold(Vector3::zeros(), |g, r| {
            let v = r.c - r.n.dot(u);
            if v > 0.0 {
                g - r.n * v
            } else {
                g
            }
        })
    };
    let lipschitz = rows.len().max(1) as f64;
    let mut x = project(start);
    let mut y = x;
    let mut t: f64 = 1.0;
    for _ in 0..2000 {
        let next = project(y - grad(&y) / lipschitz);
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = next + (next - x) * ((t - 1.0) / tn);
        x = next;
        t = tn;
    }
    x
}

fn kkt_residual(problem: &QPProblem, u: &Vector3<f64>, active: &[usize], lambda: &[f64], mu: f64) -> f64 {
    let mut stat = (u - problem.target) + u * mu;
    let mut worst: f64 = 0.0;
    for (&i, &l) in active.iter().zip(lambda) {
        let h = &problem.constraints[i];
        stat -= h.normal * (0.5 * l);
        worst = worst.max((l * h.slack(u)).abs()).max(-l);
    }
    for h in &problem.constraints {
        worst = worst.max(-h.slack(u) / h.normal.norm().max(1.0));
    }
    if let Some(a) = problem.norm_limit {
        worst = worst.max(u.norm() - a).max(mu * (a - u.norm()).abs()).max(-mu);
    }
    worst.max(stat.norm())
}

pub fn solve(problem: &QPProblem, warm_start: Option<&Vector3<f64>>) -> QPSolution {
    let cap = 10 * problem.constraints.len().max(1);
    let fallback = |rows: &[Row], iterations| {
        let start = warm_start.copied().unwrap_or(problem.target);
        let u = least_violation(rows, start, problem.norm_limit);
        QPSolution {
            u,
            active_set: Vec::new(),
            multipliers: Vec::new(),
            norm_multiplier: 0.0,
            status: QpStatus::FallbackNeeded,
            kkt_residual: f64::INFINITY,
            iterations,
        }
    };
    let Some(rows) = prepare(&problem.constraints) else {
        let rows: Vec<Row> = problem
            .constraints
            .iter()
            .enumerate()
            .filter(|(_, h)| h.normal.norm() > 0.0)
            .map(|(index, h)| Row { n: h.normal / h.normal.norm(), c: h.offset / h.normal.norm(), index })
            .collect();
        return fallback(&rows, 0);
    };

    let finish = |x: Vector3<f64>, active: Vec<(usize, f64)>, mu: f64, iterations| {
        // Unit-normal multipliers m give x − ū/(1+μ) = Σ m n, i.e.
        // λ = 2(1+μ) m / ‖a‖ in the caller's convention.
        let mut pairs: Vec<(usize, f64)> = active
            .iter()
            .map(|&(j, m)| {
                let i = rows[j].index;
                (i, 2.0 * (1.0 + mu) * m / problem.constraints[i].normal.norm())
            })
            .collect();
        pairs.sort_by_key(|&(i, _)| i);
        let active_set: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let multipliers: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let kkt = kkt_residual(problem, &x, &active_set, &multipliers, mu);
        QPSolution {
            u: x,
            active_set,
            multipliers,
            norm_multiplier: mu,
            status: QpStatus::Optimal,
            kkt_residual: kkt,
            iterations,
        }
    };

    let (x, active, mut iterations) = match dual_active_set(&problem.target, &rows, cap) {
        Inner::Optimal { x, active, iterations } => (x, active, iterations),
        Inner::Infeasible { iterations } | Inner::IterationCap { iterations, .. } => return fallback(&rows, iterations),
    };
    let Some(limit) = problem.norm_limit else {
        return finish(x, active, 0.0, iterations);
    };
    if x.norm() <= limit {
        return finish(x, active, 0.0, iterations);
    }

    let mut project = |mu: f64| {
        let r = dual_active_set(&(problem.target / (1.0 + mu)), &rows, cap);
        match r {
            Inner::Optimal { x, active, iterations: it } => {
                iterations += it;
                Some((x, active))
            }
            _ => None,
        }
    };
    // The ball and the polyhedron must intersect.
    match dual_active_set(&Vector3::zeros(), &rows, cap) {
        Inner::Optimal { x, .. } if x.norm() <= limit => {}
        _ => return fallback(&rows, iterations),
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut best = loop {
        match project(hi) {
            Some((x, a)) if x.norm() <= limit => break (x, a),
            Some(_) if hi < 1e300 => {
                lo = hi;
                hi *= 2.0;
            }
            _ => return fallback(&rows, iterations),
        }
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match project(mid) {
            Some((x, a)) if x.norm() <= limit => {
                hi = mid;
                best = (x, a);
            }
            Some(_) => lo = mid,
            None => return fallback(&rows, iterations),
        }
        if hi - lo <= 1e-15 * hi.max(1e-300) {
            break;
        }
    }
    finish(best.0, best.1, hi, iterations)
}
