//! Named synthetic scenes used by campaigns, benchmarks and the acceptance
//! suite.
//!
//! Splats sit on surfaces, as in a reconstruction: thin discs a few
//! centimetres across, dense enough to leave no gap a robot could slip
//! through.

use super::{Axis, Ellipsoid, GaussianScene, Generator, SceneError, SyntheticSpec, MIN_SEMI_AXIS};

/// Scene names accepted by [`roster_spec`].
pub const ROSTER: [&str; 5] = ["gates-15k", "pillars-100k", "statues-200k", "hall-300k", "gates-coarse"];

const DISC: [f64; 3] = [0.05, 0.05, 0.012];

fn bar(center: [f64; 3], along_y: f64, along_z: f64, spacing: f64) -> Generator {
    Generator::PlaneWall {
        nx: (along_y / spacing).round().max(1.0) as usize,
        ny: (along_z / spacing).round().max(1.0) as usize,
        spacing,
        scales: [spacing, spacing, 0.01],
        center,
        normal: Axis::X,
    }
}

/// Square gate in the `x = x0` plane: a 2 m opening framed by 0.4 m bars.
fn gate(x0: f64, y0: f64, spacing: f64) -> Generator {
    let (half, w, zc) = (1.2, 0.4, 2.0);
    let span = 2.0 * half + w;
    Generator::Composite {
        parts: vec![
            bar([x0, y0, zc + half], span, w, spacing),
            bar([x0, y0, zc - half], span, w, spacing),
            bar([x0, y0 + half, zc], w, 2.0 * half - w, spacing),
            bar([x0, y0 - half, zc], w, 2.0 * half - w, spacing),
        ],
    }
}

fn pillars(count: usize, per_pillar: usize, ring_radius: f64, pillar_radius: f64, height: f64, center: [f64; 3]) -> Generator {
    Generator::RingOfPillars {
        pillars: count,
        per_pillar,
        ring_radius,
        pillar_radius,
        height,
        scales: DISC,
        center,
    }
}

/// Ring of 20 pillars, `k` splats in total.
pub fn pillar_ring(k: usize) -> Generator {
    pillars(20, k.div_ceil(20), 8.0, 0.7, 4.0, [0.0; 3])
}

/// The generator behind a roster name.
pub fn roster_spec(name: &str) -> Option<SyntheticSpec> {
    let g = match name {
        // Four gates staggered along x plus six slim posts: 15 000 splats.
        "gates-15k" => {
            let mut parts: Vec<Generator> =
                [(-6.0, 1.0), (-2.0, -1.0), (2.0, 1.0), (6.0, -1.0)].iter().map(|&(x, y)| gate(x, y, 0.04)).collect();
            parts.push(pillars(6, 900, 4.5, 0.3, 3.5, [0.0, 0.0, 0.0]));
            Generator::Composite { parts }
        }
        "pillars-100k" => pillar_ring(100_000),
        // Ten squat columns on a 5 × 2 grid.
        "statues-200k" => Generator::Composite {
            parts: (0..10)
                .map(|i| {
                    let (x, y) = ((i % 5) as f64 * 5.0 - 10.0, (i / 5) as f64 * 6.0 - 3.0);
                    pillars(1, 20_000, 0.0, 0.9, 2.5, [x, y, 0.0])
                })
                .collect(),
        },
        "hall-300k" => Generator::Composite {
            parts: vec![
                Generator::Corridor {
                    count: 240_000,
                    length: 40.0,
                    width: 6.0,
                    height: 4.0,
                    scales: DISC,
                    center: [0.0; 3],
                },
                pillars(1, 20_000, 0.0, 0.5, 4.0, [-10.0, 0.0, 0.0]),
                pillars(1, 20_000, 0.0, 0.5, 4.0, [0.0, 1.0, 0.0]),
                pillars(1, 20_000, 0.0, 0.5, 4.0, [10.0, -1.0, 0.0]),
            ],
        },
        // Same layout as gates-15k from far fewer, elongated splats.
        "gates-coarse" => {
            let mut parts: Vec<Generator> =
                [(-6.0, 1.0), (-2.0, -1.0), (2.0, 1.0), (6.0, -1.0)].iter().map(|&(x, y)| coarse_gate(x, y)).collect();
            parts.push(Generator::RingOfPillars {
                pillars: 6,
                per_pillar: 40,
                ring_radius: 4.5,
                pillar_radius: 0.3,
                height: 3.5,
                scales: [0.12, 0.45, 0.02],
                center: [0.0; 3],
            });
            Generator::Composite { parts }
        }
        _ => return None,
    };
    let mut spec = SyntheticSpec::new(g, 0);
    spec.name = Some(name.to_string());
    Some(spec)
}

fn coarse_gate(x0: f64, y0: f64) -> Generator {
    let (half, w, zc) = (1.2, 0.4, 2.0);
    let long = |center: [f64; 3], horizontal: bool| Generator::PlaneWall {
        nx: if horizontal { 4 } else { 1 },
        ny: if horizontal { 1 } else { 3 },
        spacing: 0.7,
        scales: if horizontal { [0.45, w / 2.0, 0.02] } else { [w / 2.0, 0.45, 0.02] },
        center,
        normal: Axis::X,
    };
    Generator::Composite {
        parts: vec![
            long([x0, y0, zc + half], true),
            long([x0, y0, zc - half], true),
            long([x0, y0 + half, zc], false),
            long([x0, y0 - half, zc], false),
        ],
    }
}

/// Six points per ellipsoid, at the ends of its principal axes, each as a
/// vanishingly small ellipsoid.
pub fn point_cloud(scene: &GaussianScene) -> Result<GaussianScene, SceneError> {
    let mut pts = Vec::with_capacity(6 * scene.len());
    for e in &scene.ellipsoids {
        let o = e.obstacle(scene.scale_multiplier);
        for k in 0..3 {
            for sign in [-1.0, 1.0] {
                let p = o.center + o.rotation.column(k) * (sign * o.semi_axes[k]);
                pts.push(Ellipsoid::new(pts.len(), p.into(), [1.0, 0.0, 0.0, 0.0], [MIN_SEMI_AXIS; 3], e.opacity)?);
            }
        }
    }
    GaussianScene::new(format!("{}-points", scene.name), 1.0, pts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::generate_synthetic;

    #[test]
    fn roster_counts() {
        for (name, k) in [("gates-15k", 15_000), ("pillars-100k", 100_000), ("statues-200k", 200_000), ("hall-300k", 300_000)] {
            assert_eq!(roster_spec(name).unwrap().scene.count(), k, "{name}");
        }
        assert!(roster_spec("nope").is_none());
    }

    #[test]
    fn point_cloud_has_six_points_each() {
        let s = generate_synthetic(&roster_spec("gates-coarse").unwrap()).unwrap();
        let pc = point_cloud(&s).unwrap();
        assert_eq!(pc.len(), 6 * s.len());
        let o = s.ellipsoids[0].obstacle(s.scale_multiplier);
        for e in &pc.ellipsoids[..6] {
            assert!((o.implicit(&e.mean) - 1.0).abs() < 1e-9);
        }
    }
}
