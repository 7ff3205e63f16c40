use crate::primitives::{Aabb, Vec3};

/// Uniform bucket grid for exact nearest-neighbour queries.
pub struct PointGrid<'a> {
    points: &'a [Vec3],
    min: Vec3,
    h: f64,
    dims: [i64; 3],
    starts: Vec<usize>,
    order: Vec<usize>,
}

impl<'a> PointGrid<'a> {
    pub fn new(points: &'a [Vec3]) -> Self {
        let b = Aabb::from_points(points.iter().copied()).expect("nonempty cloud");
        let ext = b.extent();
        let longest = b.longest_edge().max(1e-12);
        let per_axis = (points.len() as f64).cbrt().ceil().max(1.0);
        let h = longest / per_axis;
        let dims: [i64; 3] = std::array::from_fn(|a| ((ext[a] / h).floor() as i64 + 1).max(1));
        let mut grid = Self { points, min: b.min, h, dims, starts: Vec::new(), order: Vec::new() };
        let ncells = (dims[0] * dims[1] * dims[2]) as usize;
        let keys: Vec<usize> = points.iter().map(|p| grid.key(grid.cell_of(p))).collect();
        let mut counts = vec![0usize; ncells + 1];
        for &k in &keys {
            counts[k + 1] += 1;
        }
        for i in 0..ncells {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut order = vec![0; points.len()];
        for (i, &k) in keys.iter().enumerate() {
            order[fill[k]] = i;
            fill[k] += 1;
        }
        grid.starts = counts;
        grid.order = order;
        grid
    }

    fn cell_of(&self, p: &Vec3) -> [i64; 3] {
        std::array::from_fn(|a| ((p[a] - self.min[a]) / self.h).floor() as i64)
    }

    fn clamp(&self, c: [i64; 3]) -> [i64; 3] {
        std::array::from_fn(|a| c[a].clamp(0, self.dims[a] - 1))
    }

    fn key(&self, c: [i64; 3]) -> usize {
        let c = self.clamp(c);
        (c[0] + self.dims[0] * (c[1] + self.dims[1] * c[2])) as usize
    }

    fn bucket(&self, c: [i64; 3]) -> &[usize] {
        let k = self.key(c);
        &self.order[self.starts[k]..self.starts[k + 1]]
    }

    /// Squared distance from `q` to its nearest point.
    pub fn nearest_sq(&self, q: &Vec3) -> f64 {
        let qc = self.cell_of(q);
        // Shells beyond this radius contain no cells of the grid.
        let reach = (0..3)
            .map(|a| (qc[a]).abs().max((qc[a] - (self.dims[a] - 1)).abs()))
            .max()
            .unwrap();
        let mut best = f64::INFINITY;
        for r in 0..=reach {
            for dz in -r..=r {
                for dy in -r..=r {
                    for dx in -r..=r {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                            continue;
                        }
                        let c = [qc[0] + dx, qc[1] + dy, qc[2] + dz];
                        if (0..3).any(|a| c[a] < 0 || c[a] >= self.dims[a]) {
                            continue;
                        }
                        for &i in self.bucket(c) {
                            best = best.min((q - self.points[i]).norm_squared());
                        }
                    }
                }
            }
            let bound = r as f64 * self.h;
            if best.is_finite() && best <= bound * bound {
                break;
            }
        }
        best
    }
}
