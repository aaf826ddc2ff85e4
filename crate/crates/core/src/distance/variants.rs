//! Baseline barrier variants and the ellipsoidal-robot reduction.

use nalgebra::{Matrix3, SymmetricEigen, UnitQuaternion, Vector3};

use super::DistanceResult;
use crate::scene::Obstacle;

/// Treats the obstacle as its bounding sphere of radius `max S̄`.
pub fn sphere_variant_h(o: &Obstacle, p: &Vector3<f64>, r: f64, eps: f64) -> DistanceResult {
    let s = o.bounding_radius();
    let rel = p - o.center;
    let rho = rel.norm();
    let c = (r + eps) * (r + eps);
    if rho == 0.0 {
        // No direction at the centre; use the shortest principal axis.
        let k = o.semi_axes.imin();
        let n: Vector3<f64> = o.rotation.column(k).into();
        let y = o.center + n * s;
        return DistanceResult {
            d: s * s,
            phi: -1.0,
            h: -s * s - c,
            lambda: 0.0,
            closest_point: y,
            gradient: -2.0 * (p - y),
            hessian: -2.0 * n * n.transpose(),
            iterations: 0,
        };
    }
    let n = rel / rho;
    let gap = rho - s;
    let phi = if gap > 0.0 { 1.0 } else { -1.0 };
    let d = gap * gap;
    let y = o.center + n * s;
    let k = s / rho;
    let hessian = 2.0 * phi * (Matrix3::identity() * (1.0 - k) + n * n.transpose() * k);
    DistanceResult {
        d,
        phi,
        h: phi * d - c,
        lambda: 0.0,
        closest_point: y,
        gradient: 2.0 * phi * (p - y),
        hessian,
        iterations: 0,
    }
}

/// Treats the obstacle as its mean point.
pub fn point_variant_h(o: &Obstacle, p: &Vector3<f64>, r: f64, eps: f64) -> DistanceResult {
    let rel = p - o.center;
    let d = rel.norm_squared();
    DistanceResult {
        d,
        phi: 1.0,
        h: d - (r + eps) * (r + eps),
        lambda: 0.0,
        closest_point: o.center,
        gradient: 2.0 * rel,
        hessian: Matrix3::identity() * 2.0,
        iterations: 0,
    }
}

/// Linear map taking an ellipsoidal robot to the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotMap {
    pub a: Matrix3<f64>,
    pub a_inv: Matrix3<f64>,
}

impl RobotMap {
    pub fn map_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.a * p
    }

    /// Velocities and accelerations map like points (the map is linear).
    pub fn map_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.a * v
    }

    pub fn unmap_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.a_inv * v
    }
}

/// `A = diag(1/a) Rᵀ` for robot semi-axes `a` and orientation `R`.
pub fn ellipsoidal_robot_map(semi_axes: &Vector3<f64>, rotation: &UnitQuaternion<f64>) -> RobotMap {
    assert!(semi_axes.iter().all(|&a| a > 0.0), "robot semi-axes must be positive");
    let r = rotation.to_rotation_matrix().into_inner();
    RobotMap {
        a: Matrix3::from_diagonal(&semi_axes.map(|a| 1.0 / a)) * r.transpose(),
        a_inv: r * Matrix3::from_diagonal(semi_axes),
    }
}

/// Image of an obstacle under the robot map: mean `Aμ`, covariance `AΣAᵀ`.
pub fn map_obstacle(map: &RobotMap, o: &Obstacle) -> Obstacle {
    let sigma = o.rotation * Matrix3::from_diagonal(&o.semi_axes.map(|s| s * s)) * o.rotation.transpose();
    let mapped = map.a * sigma * map.a.transpose();
    let eig = SymmetricEigen::new(0.5 * (mapped + mapped.transpose()));
    let mut rot = eig.eigenvectors;
    if rot.determinant() < 0.0 {
        rot.column_mut(2).neg_mut();
    }
    Obstacle::new(o.id, map.a * o.center, rot, eig.eigenvalues.map(|l| l.max(0.0).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::{distance_full, BisectionConfig};
    use crate::scene::Ellipsoid;

    fn obstacle(scales: [f64; 3]) -> Obstacle {
        Ellipsoid::new(0, [0.0; 3], [1.0, 0.0, 0.0, 0.0], scales, 1.0).unwrap().obstacle(1.0)
    }

    #[test]
    fn sphere_variant_examples() {
        let o = obstacle([1.0, 2.0, 3.0]);
        let r = sphere_variant_h(&o, &Vector3::new(0.0, 5.0, 0.0), 0.0, 0.0);
        assert_eq!(r.d, 4.0);
        let round = obstacle([0.8; 3]);
        let p = Vector3::new(1.0, -2.0, 0.5);
        let a = sphere_variant_h(&round, &p, 0.2, 0.05);
        let b = distance_full(&round, &p, 0.2, 0.05, &BisectionConfig::default()).unwrap();
        assert!((a.h - b.h).abs() < 1e-9);
        assert!((a.hessian - b.hessian).norm() < 1e-8);
    }

    #[test]
    fn point_variant_examples() {
        let o = obstacle([1.0, 2.0, 3.0]);
        assert_eq!(point_variant_h(&o, &Vector3::zeros(), 0.2, 0.1).h, -0.09000000000000002);
        let r = point_variant_h(&o, &Vector3::new(0.3, 0.0, 0.0), 0.2, 0.1);
        assert!(r.h.abs() < 1e-15);
    }

    #[test]
    fn robot_map_examples() {
        let m = ellipsoidal_robot_map(&Vector3::repeat(0.5), &UnitQuaternion::identity());
        assert!((m.a - Matrix3::identity() * 2.0).norm() < 1e-15);
        let m = ellipsoidal_robot_map(&Vector3::new(2.0, 1.0, 1.0), &UnitQuaternion::identity());
        let o = map_obstacle(&m, &obstacle([4.0, 4.0, 4.0]));
        let mut s: Vec<f64> = o.semi_axes.iter().copied().collect();
        s.sort_by(f64::total_cmp);
        assert!((s[0] - 2.0).abs() < 1e-12 && (s[1] - 4.0).abs() < 1e-12 && (s[2] - 4.0).abs() < 1e-12);
        assert!((m.a * m.a_inv - Matrix3::identity()).norm() < 1e-15);
    }
}
