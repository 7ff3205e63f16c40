use nalgebra::{Matrix3, SymmetricEigen};

use crate::error::{Error, Result};
use crate::primitives::{PointCloud, TriMesh, Vec3};

const TIE_GAP: f64 = 1e-9;

struct Moments {
    mean: Vec3,
    cov: Matrix3<f64>,
}

fn point_moments(points: &[Vec3]) -> Moments {
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vec3>() / n;
    let cov = points
        .iter()
        .map(|p| {
            let d = p - mean;
            d * d.transpose()
        })
        .sum::<Matrix3<f64>>()
        / n;
    Moments { mean, cov }
}

/// Degree-3 exact quadrature on a triangle: barycentric nodes and weights.
const QUAD: [([f64; 3], f64); 4] = [
    ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], -27.0 / 48.0),
    ([0.6, 0.2, 0.2], 25.0 / 48.0),
    ([0.2, 0.6, 0.2], 25.0 / 48.0),
    ([0.2, 0.2, 0.6], 25.0 / 48.0),
];

fn surface_integral(mesh: &TriMesh, f: impl Fn(&Vec3) -> f64) -> f64 {
    mesh.triangles()
        .map(|t| {
            let area = 0.5 * (t[1] - t[0]).cross(&(t[2] - t[0])).norm();
            area * QUAD
                .iter()
                .map(|(b, w)| w * f(&(t[0] * b[0] + t[1] * b[1] + t[2] * b[2])))
                .sum::<f64>()
        })
        .sum()
}

fn mesh_moments(mesh: &TriMesh) -> Result<Moments> {
    let area = mesh.area();
    if !(area > 0.0) {
        return Err(Error::DegenerateGeometry("mesh has zero area".into()));
    }
    let mean = Vec3::from_fn(|a, _| surface_integral(mesh, |p| p[a]) / area);
    let cov = Matrix3::from_fn(|a, b| {
        surface_integral(mesh, |p| (p[a] - mean[a]) * (p[b] - mean[b])) / area
    });
    Ok(Moments { mean, cov })
}

fn tied(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= TIE_GAP * scale
}

/// Rows of the returned matrix are the principal axes, largest variance first.
fn principal_axes(
    m: &Moments,
    third_moment: impl Fn(&Vec3) -> f64,
    extreme: impl Fn(&Vec3) -> f64,
) -> Result<Matrix3<f64>> {
    let eig = SymmetricEigen::new(m.cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let scale = vals[0].abs();
    if !(vals[2] > 1e-12 * scale) {
        return Err(Error::DegenerateGeometry("rank-deficient covariance".into()));
    }
    let mut axes: Vec<Vec3> = order.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
    let std_axes = [Vec3::x(), Vec3::y(), Vec3::z()];

    // Tied eigenvalues: replace the degenerate subspace by the input axes projected into it.
    let t01 = tied(vals[0], vals[1], scale);
    let t12 = tied(vals[1], vals[2], scale);
    if t01 && t12 {
        axes = std_axes.to_vec();
    } else if t01 || t12 {
        let unique = if t01 { axes[2] } else { axes[0] };
        let mut plane: Vec<Vec3> = Vec::new();
        for e in std_axes {
            let mut v = e - unique * unique.dot(&e);
            for q in &plane {
                v -= q * q.dot(&v);
            }
            if v.norm() > 1e-6 && plane.len() < 2 {
                plane.push(v.normalize());
            }
        }
        if t01 {
            axes = vec![plane[0], plane[1], unique];
        } else {
            axes = vec![unique, plane[0], plane[1]];
        }
    }

    for a in axes.iter_mut().take(2) {
        let m3 = third_moment(a);
        let flip = if m3.abs() >= 1e-12 { m3 < 0.0 } else { extreme(a) < 0.0 };
        if flip {
            *a = -*a;
        }
    }
    axes[2] = axes[0].cross(&axes[1]).normalize();
    Ok(Matrix3::from_rows(&[axes[0].transpose(), axes[1].transpose(), axes[2].transpose()]))
}

fn extreme_projection(points: &[Vec3], mean: &Vec3, a: &Vec3) -> f64 {
    points
        .iter()
        .map(|p| (p - mean).dot(a))
        .fold(0.0, |best: f64, v| {
            let gap = v.abs() - best.abs();
            if gap > 1e-12 || (gap.abs() <= 1e-12 && v > best) {
                v
            } else {
                best
            }
        })
}

/// Rotates the cloud so its principal axes follow X, Y, Z in decreasing variance.
///
/// The two leading axes are oriented so the third moment of the projected
/// coordinates is nonnegative (falling back to the farthest point's sign); the
/// third axis completes a right-handed frame. Tied eigenvalues keep input axis order.
pub fn pca_align(cloud: &PointCloud) -> Result<(PointCloud, Matrix3<f64>)> {
    if cloud.len() < 4 {
        return Err(Error::DegenerateGeometry("PCA needs at least 4 points".into()));
    }
    let m = point_moments(&cloud.points);
    let n = cloud.len() as f64;
    let r = principal_axes(
        &m,
        |a| cloud.points.iter().map(|p| (p - m.mean).dot(a).powi(3)).sum::<f64>() / n,
        |a| extreme_projection(&cloud.points, &m.mean, a),
    )?;
    Ok((PointCloud::new(cloud.points.iter().map(|p| r * p).collect()), r))
}

/// PCA on the exact area-weighted surface moments of a mesh.
pub fn pca_align_mesh(mesh: &TriMesh) -> Result<(TriMesh, Matrix3<f64>)> {
    let m = mesh_moments(mesh)?;
    let area = mesh.area();
    let r = principal_axes(
        &m,
        |a| surface_integral(mesh, |p| (p - m.mean).dot(a).powi(3)) / area,
        |a| extreme_projection(&mesh.vertices, &m.mean, a),
    )?;
    Ok((
        TriMesh { vertices: mesh.vertices.iter().map(|p| r * p).collect(), faces: mesh.faces.clone() },
        r,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn anisotropic(seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..400)
                .map(|_| {
                    let u: f64 = rng.random_range(-1.0..1.0);
                    Vec3::new(3.0 * u + u * u, 2.0 * rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0f64).powi(3))
                })
                .collect(),
        )
    }

    fn variances(c: &PointCloud) -> Vec<f64> {
        let mut v: Vec<f64> = SymmetricEigen::new(point_moments(&c.points).cov).eigenvalues.iter().copied().collect();
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }

    #[test]
    fn proper_rotation_and_variance_order() {
        let c = anisotropic(1);
        let (out, r) = pca_align(&c).unwrap();
        assert!((r.determinant() - 1.0).abs() < 1e-12);
        assert!((r * r.transpose() - Matrix3::identity()).amax() < 1e-12);
        let cov = point_moments(&out.points).cov;
        assert!(cov[(0, 0)] >= cov[(1, 1)] && cov[(1, 1)] >= cov[(2, 2)]);
        assert!(cov[(0, 1)].abs() < 1e-9 && cov[(0, 2)].abs() < 1e-9 && cov[(1, 2)].abs() < 1e-9);
    }

    #[test]
    fn rotated_input_recovers_orientation() {
        let c = anisotropic(2);
        let (base, _) = pca_align(&c).unwrap();
        let rot = Rotation3::from_euler_angles(0.3, -1.1, 2.0);
        let rotated = PointCloud::new(c.points.iter().map(|p| rot * p).collect());
        let (out, _) = pca_align(&rotated).unwrap();
        for (a, b) in base.points.iter().zip(&out.points) {
            assert!((a - b).amax() < 1e-9);
        }
        let (va, vb) = (variances(&c), variances(&out));
        for k in 0..3 {
            assert!((va[k] - vb[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn symmetric_shapes_keep_identity() {
        let cube = crate::primitives::TriMesh::axis_box(Vec3::zeros(), Vec3::repeat(1.0));
        let (_, r) = pca_align_mesh(&cube).unwrap();
        assert_eq!(r, Matrix3::identity());
        let slab = crate::primitives::TriMesh::axis_box(Vec3::zeros(), Vec3::new(2.0, 2.0, 1.0));
        let (_, r) = pca_align_mesh(&slab).unwrap();
        assert!((r - Matrix3::identity()).amax() < 1e-12);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        let flat = PointCloud::new(vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
        ]);
        assert!(matches!(pca_align(&flat), Err(Error::DegenerateGeometry(_))));
        assert!(pca_align(&PointCloud::new(vec![Vec3::zeros(); 3])).is_err());
    }
}
