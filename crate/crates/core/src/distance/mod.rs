//! Signed robot-to-ellipsoid distance and the barrier `h = φ·d − (r+ε)²`.
//!
//! Everything is solved in the canonical frame `p̂ = F Rᵀ (p − μ)`, where the
//! ellipsoid is axis aligned, zero mean and the query lies in the positive
//! orthant. The closest surface point is `ŷᵢ = S̄ᵢ² p̂ᵢ / (λ + S̄ᵢ²)`, with the
//! multiplier `λ` the root of the monotone residual `q`.

mod variants;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::scene::Obstacle;

pub use variants::{ellipsoidal_robot_map, map_obstacle, point_variant_h, sphere_variant_h, RobotMap};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistanceError {
    #[error("residual evaluated on the pole λ = {lambda} (axis {axis})")]
    Domain { lambda: f64, axis: usize },
    #[error("bisection failed after {iterations} iterations, last bracket [{lo}, {hi}]")]
    Solver { lo: f64, hi: f64, iterations: usize },
    #[error("non-finite input")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BisectionConfig {
    /// Stop once `|q| ≤ residual_tolerance`.
    pub residual_tolerance: f64,
    pub max_iterations: usize,
    /// Relative pad above the smallest pole: `δ = pad · max(1, min S̄²)`.
    pub bracket_pad: f64,
}

impl Default for BisectionConfig {
    fn default() -> Self {
        Self { residual_tolerance: 1e-10, max_iterations: 128, bracket_pad: 1e-12 }
    }
}

impl BisectionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.residual_tolerance > 0.0) {
            return Err("residual_tolerance must be positive".into());
        }
        if self.max_iterations == 0 {
            return Err("max_iterations must be at least 1".into());
        }
        if !(self.bracket_pad > 0.0) {
            return Err("bracket_pad must be positive".into());
        }
        Ok(())
    }
}

/// Rigid map from world to the canonical frame of one ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanonicalFrame {
    pub rotation_t: Matrix3<f64>,
    /// Diagonal of `F`.
    pub reflection: Vector3<f64>,
    pub translation: Vector3<f64>,
}

impl CanonicalFrame {
    pub fn to_canonical(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (self.rotation_t * (p - self.translation)).component_mul(&self.reflection)
    }

    pub fn to_world(&self, p_hat: &Vector3<f64>) -> Vector3<f64> {
        self.vector_to_world(p_hat) + self.translation
    }

    pub fn vector_to_world(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_t.tr_mul(&v.component_mul(&self.reflection))
    }

    /// `R F M F Rᵀ`.
    pub fn matrix_to_world(&self, m: &Matrix3<f64>) -> Matrix3<f64> {
        let f = self.reflection;
        let fmf = Matrix3::from_fn(|i, j| m[(i, j)] * f[i] * f[j]);
        self.rotation_t.transpose() * fmf * self.rotation_t
    }
}

pub fn to_canonical(o: &Obstacle, p: &Vector3<f64>) -> (Vector3<f64>, CanonicalFrame) {
    let rotation_t = o.rotation.transpose();
    let local = rotation_t * (p - o.center);
    let reflection = local.map(|x| if x < 0.0 { -1.0 } else { 1.0 });
    let frame = CanonicalFrame { rotation_t, reflection, translation: o.center };
    (local.component_mul(&reflection), frame)
}

/// `q(λ) = Σ S̄ᵢ² p̂ᵢ² / (λ + S̄ᵢ²)² − 1`.
pub fn residual_q(lambda: f64, p_hat: &Vector3<f64>, s: &Vector3<f64>) -> Result<f64, DistanceError> {
    let mut q = -1.0;
    for i in 0..3 {
        if p_hat[i] == 0.0 {
            continue;
        }
        let s2 = s[i] * s[i];
        let den = lambda + s2;
        if den == 0.0 {
            return Err(DistanceError::Domain { lambda, axis: i });
        }
        q += s2 * p_hat[i] * p_hat[i] / (den * den);
    }
    Ok(q)
}

/// Root of the residual, stored as a shift so `λ + S̄ᵢ²` keeps full relative
/// precision next to the smallest pole.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaRoot {
    pub lambda: f64,
    /// `λ + S̄ᵢ²` per axis.
    pub denominators: Vector3<f64>,
    pub iterations: usize,
    /// Set when the optimum sits on the pole of an axis whose closest-point
    /// component is free (interior queries near the smallest axis' plane).
    pub degenerate_axis: Option<usize>,
}

impl LambdaRoot {
    pub fn closest_point(&self, p_hat: &Vector3<f64>, s: &Vector3<f64>) -> Vector3<f64> {
        let mut y = Vector3::zeros();
        for i in 0..3 {
            if Some(i) != self.degenerate_axis && p_hat[i] != 0.0 {
                y[i] = s[i] * s[i] * p_hat[i] / self.denominators[i];
            }
        }
        if let Some(k) = self.degenerate_axis {
            let rest: f64 = (0..3).filter(|&i| i != k).map(|i| (y[i] / s[i]).powi(2)).sum();
            let mag = s[k] * (1.0 - rest).max(0.0).sqrt();
            y[k] = if p_hat[k] < 0.0 { -mag } else { mag };
        }
        y
    }
}

fn q_shifted(tau: f64, offsets: &Vector3<f64>, num: &Vector3<f64>) -> f64 {
    let mut q = -1.0;
    for i in 0..3 {
        if num[i] != 0.0 {
            let den = tau + offsets[i];
            q += num[i] / (den * den);
        }
    }
    q
}

/// Finds `λ*` with `q(λ*) = 0` on the branch admissible for a global
/// minimiser.
pub fn solve_lambda(p_hat: &Vector3<f64>, s: &Vector3<f64>, cfg: &BisectionConfig) -> Result<LambdaRoot, DistanceError> {
    if !p_hat.iter().chain(s.iter()).all(|v| v.is_finite()) {
        return Err(DistanceError::NonFinite);
    }
    let s2 = s.component_mul(s);
    let num = Vector3::from_fn(|i, _| if p_hat[i] != 0.0 { s2[i] * p_hat[i] * p_hat[i] } else { 0.0 });

    let argmin = |pred: &dyn Fn(usize) -> bool| {
        (0..3).filter(|&i| pred(i)).fold(None, |best: Option<usize>, i| match best {
            Some(b) if s2[b] <= s2[i] => Some(b),
            _ => Some(i),
        })
    };
    let Some(k_nz) = argmin(&|i| p_hat[i] != 0.0) else {
        // Query at the centre: closest point along the smallest axis.
        let k = argmin(&|_| true).unwrap();
        return Ok(LambdaRoot {
            lambda: -s2[k],
            denominators: s2.add_scalar(-s2[k]),
            iterations: 0,
            degenerate_axis: Some(k),
        });
    };

    // A zero component on an axis shorter than every populated one can hold
    // the optimum on its own pole.
    if let Some(k) = argmin(&|i| p_hat[i] == 0.0).filter(|&k| s2[k] < s2[k_nz]) {
        let offsets = s2.add_scalar(-s2[k]);
        if q_shifted(0.0, &offsets, &num) <= 0.0 {
            return Ok(LambdaRoot { lambda: -s2[k], denominators: offsets, iterations: 0, degenerate_axis: Some(k) });
        }
        return bracketed_root(&offsets, &num, s2[k], 0.0, cfg);
    }

    let shift = s2[k_nz];
    let offsets = s2.add_scalar(-shift);
    let mut pad = cfg.bracket_pad * shift.max(1.0);
    for _ in 0..2 {
        if q_shifted(pad, &offsets, &num) > 0.0 {
            return bracketed_root(&offsets, &num, shift, pad, cfg);
        }
        pad *= 1e-3;
    }
    // The populated pole is numerically indistinguishable from zero.
    Ok(LambdaRoot { lambda: -shift, denominators: offsets, iterations: 0, degenerate_axis: Some(k_nz) })
}

/// Root of `q` in the shifted variable `τ = λ + shift`, starting from a
/// bracket `[lo, hi]` with `q(lo) ≥ 0 ≥ q(hi)`.
///
/// Every populated offset is non-negative, so `q` is convex and decreasing on
/// the bracket and Newton steps taken from the left never pass the root. A
/// step that leaves the bracket or shrinks it too slowly is replaced by
/// bisection.
fn bracketed_root(
    offsets: &Vector3<f64>,
    num: &Vector3<f64>,
    shift: f64,
    pad: f64,
    cfg: &BisectionConfig,
) -> Result<LambdaRoot, DistanceError> {
    let populated = || (0..3).filter(|&i| num[i] != 0.0);
    let total: f64 = populated().map(|i| num[i]).sum();
    let o_max = populated().map(|i| offsets[i]).fold(0.0, f64::max);
    // q(τ) ≥ numᵢ/(τ+oᵢ)² − 1 and q(τ) ≥ Σnum/(τ+o_max)² − 1 bound the root
    // from below; q(τ) ≤ Σnum/τ² − 1 bounds it from above.
    let mut lo = populated().map(|i| num[i].sqrt() - offsets[i]).fold(pad.max(total.sqrt() - o_max), f64::max);
    let mut hi = total.sqrt().max(lo);
    let mut iterations = 0;
    while q_shifted(hi, offsets, num) > 0.0 {
        lo = hi;
        hi = 2.0 * hi.max(f64::MIN_POSITIVE);
        iterations += 1;
        if iterations > 2100 {
            return Err(DistanceError::Solver { lo: lo - shift, hi: hi - shift, iterations });
        }
    }
    let done = |tau: f64, iterations| LambdaRoot {
        lambda: tau - shift,
        denominators: offsets.add_scalar(tau),
        iterations,
        degenerate_axis: None,
    };
    let mut tau = lo;
    let mut q = q_shifted(tau, offsets, num);
    if q < 0.0 {
        // Rounding put the lower bound past the root.
        lo = pad.min(lo);
        tau = 0.5 * (lo + hi);
        q = q_shifted(tau, offsets, num);
    }
    let mut last_step = hi - lo;
    for it in 1..=cfg.max_iterations {
        if q.abs() <= cfg.residual_tolerance || lo == hi {
            return Ok(done(polish(tau, q, offsets, num), it));
        }
        if q > 0.0 {
            lo = tau;
        } else {
            hi = tau;
        }
        let slope: f64 = populated().map(|i| -2.0 * num[i] / (tau + offsets[i]).powi(3)).sum();
        let newton = tau - q / slope;
        let next = if slope < 0.0 && newton > lo && newton < hi && (2.0 * q).abs() <= (last_step * slope).abs() {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if next <= lo || next >= hi {
            // Bracket at floating-point resolution.
            return Ok(done(next.clamp(lo, hi), it));
        }
        last_step = (next - tau).abs();
        tau = next;
        q = q_shifted(tau, offsets, num);
    }
    Err(DistanceError::Solver { lo: lo - shift, hi: hi - shift, iterations: cfg.max_iterations })
}

/// One more Newton step once within tolerance, kept only if it shrinks the
/// residual. Cheap, and it leaves `h` smooth enough to difference twice.
fn polish(tau: f64, q: f64, offsets: &Vector3<f64>, num: &Vector3<f64>) -> f64 {
    let slope: f64 = (0..3).filter(|&i| num[i] != 0.0).map(|i| -2.0 * num[i] / (tau + offsets[i]).powi(3)).sum();
    if q == 0.0 || slope >= 0.0 {
        return tau;
    }
    let next = tau - q / slope;
    if next.is_finite() && q_shifted(next, offsets, num).abs() < q.abs() {
        next
    } else {
        tau
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistanceResult {
    /// Squared distance to the surface (penetration depth² when inside).
    pub d: f64,
    pub phi: f64,
    pub h: f64,
    pub lambda: f64,
    pub closest_point: Vector3<f64>,
    pub gradient: Vector3<f64>,
    pub hessian: Matrix3<f64>,
    pub iterations: usize,
}

impl DistanceResult {
    pub fn in_collision(&self) -> bool {
        self.phi < 0.0
    }
}

/// Projection Jacobian `∂ŷ/∂p̂` on the degenerate branch, from the bordered
/// stationarity system.
pub fn bordered_jacobian(denominators: &Vector3<f64>, y: &Vector3<f64>, s: &Vector3<f64>) -> Matrix3<f64> {
    let s2 = s.component_mul(s);
    let mut k = Matrix4::zeros();
    for i in 0..3 {
        k[(i, i)] = denominators[i];
        k[(i, 3)] = y[i];
        k[(3, i)] = y[i] / s2[i];
    }
    let mut j = Matrix3::zeros();
    let svd = k.svd(true, true);
    for c in 0..3 {
        let mut rhs = Vector4::zeros();
        rhs[c] = s2[c];
        if let Ok(x) = svd.solve(&rhs, 1e-14) {
            for r in 0..3 {
                j[(r, c)] = x[r];
            }
        }
    }
    j
}

pub fn distance_full(
    o: &Obstacle,
    p: &Vector3<f64>,
    r: f64,
    eps: f64,
    cfg: &BisectionConfig,
) -> Result<DistanceResult, DistanceError> {
    if !p.iter().all(|v| v.is_finite()) {
        return Err(DistanceError::NonFinite);
    }
    let s = o.semi_axes;
    let (p_hat, frame) = to_canonical(o, p);
    let root = solve_lambda(&p_hat, &s, cfg)?;
    let y_hat = root.closest_point(&p_hat, &s);

    let m = p_hat.component_div(&s).norm_squared();
    let phi = if m > 1.0 { 1.0 } else { -1.0 };
    let diff = p_hat - y_hat;
    let d = diff.norm_squared();
    let clearance = r + eps;
    let h = phi * d - clearance * clearance;

    let jac = match root.degenerate_axis {
        None => {
            // I − ∂ŷ/∂p̂ = diag(λ/(λ+S̄²)) + (1/q_λ) ∂ŷ/∂λ ⊗ ∂q/∂p̂
            let s2 = s.component_mul(&s);
            let den = root.denominators;
            let w = Vector3::from_fn(|i, _| s2[i] * p_hat[i] / (den[i] * den[i]));
            let q_lambda: f64 = -2.0 * (0..3).map(|i| w[i] * p_hat[i] / den[i]).sum::<f64>();
            let dy_dlambda = -w;
            let dq_dp = 2.0 * w;
            let mut m = Matrix3::from_diagonal(&Vector3::from_fn(|i, _| root.lambda / den[i]));
            m += dy_dlambda * dq_dp.transpose() / q_lambda;
            m
        }
        Some(_) => Matrix3::identity() - bordered_jacobian(&root.denominators, &y_hat, &s),
    };
    let h_hat = 2.0 * phi * jac;
    let hessian = frame.matrix_to_world(&h_hat);
    let hessian = 0.5 * (hessian + hessian.transpose());

    let closest_point = frame.to_world(&y_hat);
    Ok(DistanceResult {
        d,
        phi,
        h,
        lambda: root.lambda,
        closest_point,
        gradient: 2.0 * phi * frame.vector_to_world(&diff),
        hessian,
        iterations: root.iterations,
    })
}

/// Evaluates [`distance_full`] for every id, in parallel for large batches.
pub fn distance_batch(
    obstacles: &[Obstacle],
    ids: &[u32],
    p: &Vector3<f64>,
    r: f64,
    eps: f64,
    cfg: &BisectionConfig,
) -> Vec<Result<DistanceResult, DistanceError>> {
    let eval = |&id: &u32| distance_full(&obstacles[id as usize], p, r, eps, cfg);
    if ids.len() >= 512 {
        ids.par_iter().map(eval).collect()
    } else {
        ids.iter().map(eval).collect()
    }
}
