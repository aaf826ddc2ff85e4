//! Brute-force reference computations for the test suites.
//!
//! Nothing here shares code with the library under test: distances come from
//! sampling the surface, derivatives from finite differences and QPs from a
//! general conic interior-point solver.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, SecondOrderConeT, SolverStatus,
    SupportedConeT,
};
use nalgebra::{Matrix3, Vector3};

/// Roughly uniform directions on the unit sphere.
pub fn fibonacci_sphere(n: usize) -> Vec<Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let t = golden * i as f64;
            Vector3::new(r * t.cos(), r * t.sin(), z)
        })
        .collect()
}

fn pattern_search(f: &impl Fn(&Vector3<f64>) -> f64, start: Vector3<f64>) -> (f64, Vector3<f64>) {
    let mut dirs = Vec::new();
    for i in 0..3 {
        for s in [-1.0, 1.0] {
            dirs.push(Vector3::ith(i, s));
            for j in i + 1..3 {
                for t in [-1.0, 1.0] {
                    dirs.push((Vector3::ith(i, s) + Vector3::ith(j, t)) / 2f64.sqrt());
                }
            }
        }
    }
    let mut w = start.normalize();
    let mut fw = f(&w);
    let mut step = 0.05;
    let mut evals = 0;
    while step > 1e-14 && evals < 200_000 {
        let mut improved = false;
        for d in &dirs {
            let c = (w + d * step).normalize();
            let fc = f(&c);
            evals += 1;
            if fc < fw {
                w = c;
                fw = fc;
                improved = true;
            }
        }
        step = if improved { (step * 1.5).min(0.5) } else { step * 0.5 };
    }
    (fw, w)
}

/// Global minimum of `f` over the unit sphere: dense sampling, then pattern
/// search from the best few samples.
pub fn minimize_on_sphere(f: impl Fn(&Vector3<f64>) -> f64, samples: usize, starts: usize) -> (f64, Vector3<f64>) {
    let mut scored: Vec<(f64, Vector3<f64>)> = fibonacci_sphere(samples).into_iter().map(|w| (f(&w), w)).collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    scored
        .iter()
        .take(starts)
        .map(|&(_, w)| pattern_search(&f, w))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap()
}

/// Squared distance from `p` to the surface `{μ + R diag(s) w : ‖w‖ = 1}`.
pub fn surface_distance_sq(center: &Vector3<f64>, rotation: &Matrix3<f64>, semi_axes: &Vector3<f64>, p: &Vector3<f64>) -> f64 {
    let point = |w: &Vector3<f64>| center + rotation * w.normalize().component_mul(semi_axes);
    minimize_on_sphere(|w| (p - point(w)).norm_squared(), 4000, 6).0
}

/// Minimum of the implicit function `(x−μ)ᵀΣ⁻¹(x−μ)` of ellipsoid `b` over
/// the surface of ellipsoid `a`. Below 1 the two overlap, above 1 they are
/// apart (for `a`'s centre outside `b`).
pub fn min_implicit_over_surface(
    a: (&Vector3<f64>, &Matrix3<f64>, &Vector3<f64>),
    b: (&Vector3<f64>, &Matrix3<f64>, &Vector3<f64>),
) -> f64 {
    let (ca, ra, sa) = a;
    let (cb, rb, sb) = b;
    minimize_on_sphere(
        |w| {
            let x = ca + ra * w.normalize().component_mul(sa);
            (rb.transpose() * (x - cb)).component_div(sb).norm_squared()
        },
        4000,
        6,
    )
    .0
}

pub fn central_gradient(f: impl Fn(&Vector3<f64>) -> f64, p: &Vector3<f64>, step: f64) -> Vector3<f64> {
    Vector3::from_fn(|i, _| {
        let e = Vector3::ith(i, step);
        (f(&(p + e)) - f(&(p - e))) / (2.0 * step)
    })
}

/// Second differences of `f` with one Richardson extrapolation step.
pub fn central_hessian(f: impl Fn(&Vector3<f64>) -> f64, p: &Vector3<f64>, step: f64) -> Matrix3<f64> {
    let raw = |h: f64| {
        Matrix3::from_fn(|i, j| {
            let (ei, ej) = (Vector3::ith(i, h), Vector3::ith(j, h));
            if i == j {
                (f(&(p + ei)) - 2.0 * f(p) + f(&(p - ei))) / (h * h)
            } else {
                (f(&(p + ei + ej)) - f(&(p + ei - ej)) - f(&(p - ei + ej)) + f(&(p - ei - ej))) / (4.0 * h * h)
            }
        })
    };
    let m = (4.0 * raw(step / 2.0) - raw(step)) / 3.0;
    0.5 * (m + m.transpose())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QpOutcome {
    Solved(Vector3<f64>),
    Infeasible,
    Failed,
}

/// `min ‖u − target‖²` s.t. `aᵢᵀu ≥ bᵢ` and optionally `‖u‖ ≤ norm_limit`.
pub fn convex_qp(target: &Vector3<f64>, normals: &[Vector3<f64>], offsets: &[f64], norm_limit: Option<f64>) -> QpOutcome {
    assert_eq!(normals.len(), offsets.len());
    let p = CscMatrix::from(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    let q: Vec<f64> = (-target).iter().copied().collect();
    let mut rows: Vec<[f64; 3]> = normals.iter().map(|a| [-a.x, -a.y, -a.z]).collect();
    let mut b: Vec<f64> = offsets.iter().map(|v| -v).collect();
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    if !normals.is_empty() {
        cones.push(NonnegativeConeT(normals.len()));
    }
    if let Some(limit) = norm_limit {
        rows.push([0.0; 3]);
        b.push(limit);
        for i in 0..3 {
            let mut r = [0.0; 3];
            r[i] = -1.0;
            rows.push(r);
            b.push(0.0);
        }
        cones.push(SecondOrderConeT(4));
    }
    if rows.is_empty() {
        return QpOutcome::Solved(*target);
    }
    let a = CscMatrix::from(rows.iter());
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(500)
        .tol_gap_abs(1e-12)
        .tol_gap_rel(1e-12)
        .tol_feas(1e-12)
        .tol_ktratio(1e-10)
        .build()
        .unwrap();
    let Ok(mut solver) = DefaultSolver::new(&p, &q, &a, &b, &cones, settings) else {
        return QpOutcome::Failed;
    };
    solver.solve();
    match solver.solution.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {
            let x = &solver.solution.x;
            let x = Vector3::new(x[0], x[1], x[2]);
            QpOutcome::Solved(polish(target, normals, offsets, norm_limit, x).unwrap_or(x))
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => QpOutcome::Infeasible,
        _ => QpOutcome::Failed,
    }
}

/// Interior-point iterates stop short of degenerate boundaries by about the
/// square root of the gap. Guess the active set from `x`, solve the
/// equality-constrained projection exactly and keep it only if it is
/// feasible and no worse.
fn polish(
    target: &Vector3<f64>,
    normals: &[Vector3<f64>],
    offsets: &[f64],
    norm_limit: Option<f64>,
    x: Vector3<f64>,
) -> Option<Vector3<f64>> {
    let tol = 1e-6;
    let active: Vec<usize> =
        (0..normals.len()).filter(|&i| normals[i].dot(&x) - offsets[i] <= tol * normals[i].norm().max(1.0)).collect();
    let on_sphere = norm_limit.filter(|l| x.norm() >= l - tol * l.max(1.0));
    if active.is_empty() && on_sphere.is_none() {
        return None;
    }
    // Affine set {x0 + N z}: x0 is the least-norm solution of the active rows.
    let (x0, basis) = if active.is_empty() {
        (Vector3::zeros(), Matrix3::identity())
    } else {
        let a = nalgebra::DMatrix::from_fn(active.len(), 3, |r, c| normals[active[r]][c]);
        let b = nalgebra::DVector::from_iterator(active.len(), active.iter().map(|&i| offsets[i]));
        let svd = a.clone().svd(true, true);
        let x0 = svd.solve(&b, 1e-10).ok()?;
        let x0 = Vector3::new(x0[0], x0[1], x0[2]);
        if (&a * nalgebra::DVector::from_column_slice(x0.as_slice()) - &b).amax() > 1e-9 * b.amax().max(1.0) {
            return None;
        }
        let v_t = svd.v_t?;
        let smax = svd.singular_values.max();
        let rank = svd.singular_values.iter().filter(|s| **s > 1e-10 * smax).count();
        let mut n = Matrix3::identity();
        for r in 0..rank {
            let row = Vector3::new(v_t[(r, 0)], v_t[(r, 1)], v_t[(r, 2)]);
            n -= row * row.transpose();
        }
        // x0 from the pseudo-inverse already lies in the row space.
        (x0, n)
    };
    let free = basis * (target - x0);
    let u = match on_sphere {
        None => x0 + free,
        Some(l) => {
            let rho2 = l * l - x0.norm_squared();
            if rho2 < 0.0 {
                return None;
            }
            if free.norm() <= 1e-14 {
                if rho2 > 1e-14 * l * l {
                    return None;
                }
                x0
            } else {
                x0 + free * (rho2.sqrt() / free.norm())
            }
        }
    };
    let feasible = normals.iter().zip(offsets).all(|(a, b)| a.dot(&u) - b >= -1e-12 * (1.0 + b.abs() + a.norm() * u.norm()))
        && norm_limit.is_none_or(|l| u.norm() <= l * (1.0 + 1e-12));
    (feasible && (u - target).norm_squared() <= (x - target).norm_squared() * (1.0 + 1e-12)).then_some(u)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constraint_and_norm_ball_both_active() {
        let u = convex_qp(&Vector3::new(2.0, 2.0, 0.0), &[Vector3::x()], &[0.8], Some(1.0));
        let QpOutcome::Solved(u) = u else { panic!("{u:?}") };
        assert!((u - Vector3::new(0.8, 0.6, 0.0)).norm() < 1e-12, "{u}");
    }

    #[test]
    fn sphere_distance() {
        let d = surface_distance_sq(&Vector3::zeros(), &Matrix3::identity(), &Vector3::repeat(1.0), &Vector3::new(3.0, 0.0, 0.0));
        assert!((d - 4.0).abs() < 1e-10);
    }

    #[test]
    fn projection_qp() {
        let u = convex_qp(&Vector3::zeros(), &[Vector3::x()], &[1.0], None);
        match u {
            QpOutcome::Solved(u) => assert!((u - Vector3::x()).norm() < 1e-8),
            o => panic!("{o:?}"),
        }
        let u = convex_qp(&Vector3::new(3.0, 4.0, 0.0), &[], &[], Some(1.0));
        match u {
            QpOutcome::Solved(u) => assert!((u - Vector3::new(0.6, 0.8, 0.0)).norm() < 1e-8),
            o => panic!("{o:?}"),
        }
        let u = convex_qp(&Vector3::zeros(), &[Vector3::x(), -Vector3::x()], &[1.0, 1.0], None);
        assert_eq!(u, QpOutcome::Infeasible);
    }

    #[test]
    fn hessian_of_quadratic() {
        let h = central_hessian(|p| p.x * p.x + 3.0 * p.x * p.y + p.z.powi(3), &Vector3::new(1.0, 2.0, 0.5), 1e-4);
        let want = Matrix3::new(2.0, 3.0, 0.0, 3.0, 0.0, 0.0, 0.0, 0.0, 3.0);
        assert!((h - want).norm() < 1e-5);
    }
}

/// Random test geometry as raw `(centre, rotation, semi-axes)` triples.
pub mod sample {
    use nalgebra::{Matrix3, UnitQuaternion, Vector3};
    use rand::Rng;

    pub type Geometry = (Vector3<f64>, Matrix3<f64>, Vector3<f64>);

    pub fn rotation(rng: &mut impl Rng) -> UnitQuaternion<f64> {
        // Shoemake's uniform quaternion.
        let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
        let tau = std::f64::consts::TAU;
        let q = nalgebra::Quaternion::new(
            (1.0 - u1).sqrt() * (tau * u2).cos(),
            (1.0 - u1).sqrt() * (tau * u2).sin(),
            u1.sqrt() * (tau * u3).sin(),
            u1.sqrt() * (tau * u3).cos(),
        );
        UnitQuaternion::from_quaternion(q)
    }

    pub fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
        rng.random_range(lo.ln()..hi.ln()).exp()
    }

    pub fn ellipsoid(rng: &mut impl Rng, scale_lo: f64, scale_hi: f64) -> (Vector3<f64>, UnitQuaternion<f64>, Vector3<f64>) {
        let c = Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0));
        let s = Vector3::from_fn(|_, _| log_uniform(rng, scale_lo, scale_hi));
        (c, rotation(rng), s)
    }

    pub fn unit_vector(rng: &mut impl Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                return v / n;
            }
        }
    }

    /// Point strictly inside: `μ + R diag(s) u` with `‖u‖ ≤ 0.98`.
    pub fn interior_point(rng: &mut impl Rng, g: &Geometry) -> Vector3<f64> {
        let u = unit_vector(rng) * rng.random_range(0.0f64..0.98).cbrt();
        g.0 + g.1 * u.component_mul(&g.2)
    }

    /// Surface point and outward unit normal for direction `w`.
    pub fn surface_with_normal(g: &Geometry, w: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
        let w = w.normalize();
        let local = w.component_mul(&g.2);
        let n_local = w.component_div(&g.2).normalize();
        (g.0 + g.1 * local, g.1 * n_local)
    }

    /// Point outside at a normal offset in `[lo, hi]` from a random surface point.
    pub fn exterior_point(rng: &mut impl Rng, g: &Geometry, lo: f64, hi: f64) -> Vector3<f64> {
        let (y, n) = surface_with_normal(g, &unit_vector(rng));
        y + n * log_uniform(rng, lo, hi)
    }
}
