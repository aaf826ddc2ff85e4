//! Uniform grid over ellipsoid bounding spheres, plus an R-tree over their
//! centres for nearest-first scans.
//!
//! Each ellipsoid is binned once, in the cell holding its centre, and cell
//! contents are stored contiguously in CSR form together with their centres
//! and radii. A ball query widens its cell range by the largest bounding
//! radius and then tests every entry in range exactly, so results carry no
//! duplicates.

use nalgebra::Vector3;
use rstar::primitives::GeomWithData;
use rstar::RTree;

use super::Obstacle;

/// Upper bound on the number of grid cells; the cell size grows to fit.
const MAX_CELLS: usize = 1 << 22;

type CentrePoint = GeomWithData<[f64; 3], u32>;

#[derive(Debug, Clone)]
pub struct SceneIndex {
    origin: Vector3<f64>,
    cell_size: f64,
    dims: [usize; 3],
    cell_start: Vec<u32>,
    /// Per entry, in cell order: id, centre and bounding radius.
    entries: Vec<u32>,
    entry_centers: Vec<[f64; 3]>,
    entry_radii: Vec<f64>,
    len: usize,
    max_radius: f64,
    tree: RTree<CentrePoint>,
}

impl SceneIndex {
    /// Twice the largest bounding radius.
    pub fn default_cell_size(obstacles: &[Obstacle]) -> f64 {
        let r = obstacles.iter().map(Obstacle::bounding_radius).fold(0.0, f64::max);
        if r > 0.0 {
            2.0 * r
        } else {
            1.0
        }
    }

    pub fn build(obstacles: &[Obstacle], cell_size: f64) -> Self {
        assert!(cell_size > 0.0 && cell_size.is_finite(), "cell size must be positive");
        let radii: Vec<f64> = obstacles.iter().map(Obstacle::bounding_radius).collect();
        let max_radius = radii.iter().copied().fold(0.0, f64::max);
        let tree = RTree::bulk_load(
            obstacles.iter().enumerate().map(|(i, o)| GeomWithData::new(o.center.into(), i as u32)).collect(),
        );
        let mut index = Self {
            origin: Vector3::zeros(),
            cell_size,
            dims: [0; 3],
            cell_start: vec![0],
            entries: Vec::new(),
            entry_centers: Vec::new(),
            entry_radii: Vec::new(),
            len: obstacles.len(),
            max_radius,
            tree,
        };
        if obstacles.is_empty() {
            return index;
        }

        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for o in obstacles {
            lo = lo.inf(&o.center);
            hi = hi.sup(&o.center);
        }
        let extent = hi - lo;
        // Tiny primitives would ask for more cells than fit; start the
        // search near a size the grid can hold.
        let fitting = extent.map(|e| e + cell_size).product().cbrt() / (MAX_CELLS as f64).cbrt();
        let mut cell = cell_size.max(0.5 * fitting);
        let dims = loop {
            let d = extent.map(|e| (e / cell).floor() + 1.0);
            if d.product() <= MAX_CELLS as f64 {
                let d = d.map(|x| x as usize);
                break [d.x, d.y, d.z];
            }
            cell *= 1.25;
        };
        index.origin = lo;
        index.cell_size = cell;
        index.dims = dims;

        let n_cells = dims[0] * dims[1] * dims[2];
        let home: Vec<usize> = obstacles.iter().map(|o| index.home_cell(&o.center)).collect();
        let mut start = vec![0u32; n_cells + 1];
        for &c in &home {
            start[c + 1] += 1;
        }
        for c in 0..n_cells {
            start[c + 1] += start[c];
        }
        let mut fill = start.clone();
        let n = obstacles.len();
        let (mut entries, mut centers, mut rad) = (vec![0u32; n], vec![[0.0; 3]; n], vec![0.0; n]);
        for (i, o) in obstacles.iter().enumerate() {
            let slot = fill[home[i]] as usize;
            fill[home[i]] += 1;
            entries[slot] = i as u32;
            centers[slot] = o.center.into();
            rad[slot] = radii[i];
        }
        index.cell_start = start;
        index.entries = entries;
        index.entry_centers = centers;
        index.entry_radii = rad;
        index
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn max_radius(&self) -> f64 {
        self.max_radius
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Ids binned in the cell containing `point` (test support).
    pub fn cell_ids(&self, point: &Vector3<f64>) -> &[u32] {
        if self.is_empty() {
            return &[];
        }
        let c = self.cell_of(point);
        if (0..3).any(|k| c[k] < 0 || c[k] as usize >= self.dims[k]) {
            return &[];
        }
        let flat = self.flat([c[0] as usize, c[1] as usize, c[2] as usize]);
        &self.entries[self.cell_start[flat] as usize..self.cell_start[flat + 1] as usize]
    }

    /// Appends to `out` every id whose bounding sphere meets the ball
    /// `(center, radius)`.
    pub fn query_into(&self, center: &Vector3<f64>, radius: f64, out: &mut Vec<u32>) {
        if self.is_empty() || !radius.is_finite() || radius < 0.0 {
            return;
        }
        let reach = radius + self.max_radius;
        let qa = self.cell_of(&(center - Vector3::repeat(reach)));
        let qb = self.cell_of(&(center + Vector3::repeat(reach)));
        let mut a = [0usize; 3];
        let mut b = [0usize; 3];
        for k in 0..3 {
            let hi = self.dims[k] as i64 - 1;
            if qb[k] < 0 || qa[k] > hi {
                return;
            }
            a[k] = qa[k].max(0) as usize;
            b[k] = qb[k].min(hi) as usize;
        }
        let [cx, cy, cz] = [center.x, center.y, center.z];
        for z in a[2]..=b[2] {
            for y in a[1]..=b[1] {
                // Cells along x are contiguous, so one row is one slice.
                let lo = self.cell_start[self.flat([a[0], y, z])] as usize;
                let hi = self.cell_start[self.flat([b[0], y, z]) + 1] as usize;
                for j in lo..hi {
                    let [x0, y0, z0] = self.entry_centers[j];
                    let r = radius + self.entry_radii[j];
                    let (dx, dy, dz) = (x0 - cx, y0 - cy, z0 - cz);
                    if dx * dx + dy * dy + dz * dz <= r * r {
                        out.push(self.entries[j]);
                    }
                }
            }
        }
    }

    pub fn query_candidates(&self, center: &Vector3<f64>, radius: f64) -> Vec<u32> {
        let mut out = Vec::new();
        self.query_into(center, radius, &mut out);
        out
    }

    /// Ids with their centre distance to `point`, nearest first.
    pub fn nearest_centers(&self, point: &Vector3<f64>) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.tree.nearest_neighbor_iter_with_distance_2(&[point.x, point.y, point.z]).map(|(g, d2)| (g.data, d2.sqrt()))
    }

    fn cell_of(&self, p: &Vector3<f64>) -> [i64; 3] {
        let rel = (p - self.origin) / self.cell_size;
        [rel.x.floor() as i64, rel.y.floor() as i64, rel.z.floor() as i64]
    }

    fn home_cell(&self, p: &Vector3<f64>) -> usize {
        let c = self.cell_of(p);
        let clamp = |v: i64, k: usize| v.clamp(0, self.dims[k] as i64 - 1) as usize;
        self.flat([clamp(c[0], 0), clamp(c[1], 1), clamp(c[2], 2)])
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }
}
