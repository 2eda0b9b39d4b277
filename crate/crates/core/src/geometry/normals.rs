use nalgebra::{Matrix3, SymmetricEigen};

use super::cloud::{PointCloud, Vec3};
use super::kdtree::SpatialIndex;
use crate::error::{Error, Result};

pub const DEFAULT_NORMAL_NEIGHBORS: usize = 16;

/// Relative eigenvalue below which a neighborhood is treated as rank-deficient.
const RANK_EPS: f64 = 1e-12;

/// Result of [`estimate_normals`]: the cloud with normals plus the points that
/// needed the fallback because their neighborhood did not span a plane.
#[derive(Debug, Clone)]
pub struct NormalEstimate {
    pub cloud: PointCloud,
    pub fallback: Vec<usize>,
}

/// PCA normals: for each point, the eigenvector of the smallest eigenvalue of
/// the covariance of the point and its `k` nearest neighbors. Signs are arbitrary.
pub fn estimate_normals(pc: &PointCloud, k: usize) -> Result<NormalEstimate> {
    if k < 3 {
        return Err(Error::InvalidArgument(format!("normal neighborhood k={k} must be >= 3")));
    }
    pc.require_len(k + 1)?;
    let index = SpatialIndex::build(pc.points());
    let mut normals = Vec::with_capacity(pc.len());
    let mut fallback = Vec::new();
    for (i, p) in pc.points().iter().enumerate() {
        let neighborhood: Vec<Vec3> = index
            .knn(p, k + 1)
            .iter()
            .map(|nb| pc.points()[nb.index])
            .collect();
        match plane_normal(&neighborhood) {
            Some(n) => normals.push(n),
            None => {
                fallback.push(i);
                normals.push(fallback_normal(&neighborhood));
            }
        }
    }
    if !fallback.is_empty() {
        log::warn!(
            "{} of {} points had rank-deficient neighborhoods; used fallback normals",
            fallback.len(),
            pc.len()
        );
    }
    let cloud = PointCloud::with_normals(pc.points().to_vec(), normals)?;
    Ok(NormalEstimate { cloud, fallback })
}

/// Returns `pc` unchanged when it already has normals, otherwise estimates them.
pub fn ensure_normals(pc: &PointCloud, k: usize) -> Result<PointCloud> {
    if pc.normals().is_some() {
        Ok(pc.clone())
    } else {
        Ok(estimate_normals(pc, k)?.cloud)
    }
}

fn covariance(points: &[Vec3]) -> (Vec3, Matrix3<f64>) {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let cov = points.iter().fold(Matrix3::zeros(), |acc, p| {
        let d = p - mean;
        acc + d * d.transpose()
    }) / n;
    (mean, cov)
}

/// Smallest-eigenvalue eigenvector, or `None` if the points do not span a plane.
fn plane_normal(points: &[Vec3]) -> Option<Vec3> {
    let (_, cov) = covariance(points);
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (mid, max) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if !(max > 0.0) || mid <= RANK_EPS * max {
        return None;
    }
    let n: Vec3 = eig.eigenvectors.column(order[0]).into_owned();
    Some(n.normalize())
}

/// Deterministic normal for a degenerate neighborhood: perpendicular to the
/// principal direction (or +z if all points coincide).
fn fallback_normal(points: &[Vec3]) -> Vec3 {
    let (_, cov) = covariance(points);
    let eig = SymmetricEigen::new(cov);
    let principal = if eig.eigenvalues.max() > 0.0 {
        eig.eigenvectors.column(eig.eigenvalues.imax()).into_owned()
    } else {
        return Vec3::z();
    };
    let axis = Vec3::ith(principal.iamin(), 1.0);
    principal.cross(&axis).normalize()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn plane_z0_normals() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec3> = (0..300)
            .map(|_| Vec3::new(rng.random(), rng.random(), 0.0))
            .collect();
        for k in [3, 8, 16] {
            let est = estimate_normals(&PointCloud::new(pts.clone()), k).unwrap();
            assert!(est.fallback.is_empty());
            for n in est.cloud.normals().unwrap() {
                assert!((n.z.abs() - 1.0).abs() < 1e-6, "{n:?}");
            }
        }
    }

    #[test]
    fn tilted_plane_normals() {
        // plane x + y + z = 0 spanned by (1,-1,0) and (1,1,-2)
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (u, v) = (Vec3::new(1.0, -1.0, 0.0), Vec3::new(1.0, 1.0, -2.0));
        let pts: Vec<Vec3> = (0..400)
            .map(|_| u * rng.random::<f64>() + v * rng.random::<f64>())
            .collect();
        let expected = Vec3::new(1.0, 1.0, 1.0) / 3f64.sqrt();
        let est = estimate_normals(&PointCloud::new(pts), DEFAULT_NORMAL_NEIGHBORS).unwrap();
        for n in est.cloud.normals().unwrap() {
            assert!((n.dot(&expected).abs() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn collinear_points_fall_back() {
        let pts: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        let est = estimate_normals(&PointCloud::new(pts), 3).unwrap();
        assert_eq!(est.fallback, vec![0, 1, 2, 3, 4]);
        let dir = Vec3::new(1.0, 2.0, 0.0).normalize();
        for n in est.cloud.normals().unwrap() {
            assert!(n.dot(&dir).abs() < 1e-12);
            assert!((n.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn too_few_points() {
        let pc = PointCloud::from_slice(&[[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        assert!(matches!(estimate_normals(&pc, 3), Err(Error::TooFewPoints { .. })));
        assert!(matches!(estimate_normals(&pc, 2), Err(Error::InvalidArgument(_))));
    }
}
