//! Point-cloud data model, file IO, spatial indexing and per-cloud measures.

mod cloud;
pub mod io;
mod kdtree;
mod normals;

pub use cloud::{normalize_unit_cube, PointCloud, RefEdgeLength, Vec3};
pub use io::{load_cloud, load_cloud_auto, save_cloud, CloudFormat};
pub use kdtree::{Neighbor, SpatialIndex};
pub use normals::{ensure_normals, estimate_normals, NormalEstimate, DEFAULT_NORMAL_NEIGHBORS};

use crate::error::{Error, Result};

/// Mean nearest-neighbor edge length `l_r` (excluding each point itself).
pub fn ref_edge_length(pc: &PointCloud) -> Result<RefEdgeLength> {
    pc.require_len(2)?;
    let index = SpatialIndex::build(pc.points());
    ref_edge_length_indexed(&index)
}

pub fn ref_edge_length_indexed(index: &SpatialIndex) -> Result<RefEdgeLength> {
    if index.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: index.len(),
        });
    }
    let total: f64 = index
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            index
                .knn(p, 2)
                .into_iter()
                .find(|nb| nb.index != i)
                .map_or(0.0, |nb| nb.distance())
        })
        .sum();
    RefEdgeLength::new(total / index.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use proptest::prelude::*;

    fn brute_edge_length(points: &[Vec3]) -> f64 {
        let total: f64 = points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                points
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, q)| (p - q).norm())
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        total / points.len() as f64
    }

    #[test]
    fn two_points() {
        let pc = PointCloud::from_slice(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        assert_eq!(ref_edge_length(&pc).unwrap().get(), 1.0);
    }

    #[test]
    fn collinear_three() {
        let pc = PointCloud::from_slice(&[[0.0; 3], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        assert!((ref_edge_length(&pc).unwrap().get() - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn unit_grid() {
        let pts: Vec<Vec3> = (0..100)
            .map(|i| Vec3::new((i % 10) as f64, (i / 10) as f64, 0.0))
            .collect();
        assert_eq!(brute_edge_length(&pts), 1.0);
        assert_eq!(ref_edge_length(&PointCloud::new(pts)).unwrap().get(), 1.0);
    }

    #[test]
    fn single_point_is_error() {
        let pc = PointCloud::from_slice(&[[0.0; 3]]);
        assert!(ref_edge_length(&pc).is_err());
    }

    proptest! {
        #[test]
        fn edge_length_invariances(
            coords in prop::collection::vec(-10.0f64..10.0, 6..120),
            s in 0.01f64..100.0,
            angles in prop::array::uniform3(-3.0f64..3.0),
            t in prop::array::uniform3(-50.0f64..50.0),
        ) {
            let pts: Vec<Vec3> = coords.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
            let pc = PointCloud::new(pts.clone());
            let base = ref_edge_length(&pc).unwrap().get();
            prop_assert!((base - brute_edge_length(&pts)).abs() <= 1e-12 * base);

            let rot = Rotation3::from_euler_angles(angles[0], angles[1], angles[2]);
            let shift = Vec3::new(t[0], t[1], t[2]);
            let moved = pc.transformed(|p| rot * p + shift, |n| rot * n);
            let lr = ref_edge_length(&moved).unwrap().get();
            prop_assert!((lr - base).abs() <= 1e-9 * base.max(1.0));

            let scaled = pc.transformed(|p| p * s, |n| *n);
            let ls = ref_edge_length(&scaled).unwrap().get();
            prop_assert!((ls - s * base).abs() <= 1e-12 * s * base.max(1.0));
        }

        #[test]
        fn normalization_idempotent(coords in prop::collection::vec(-10.0f64..10.0, 6..60)) {
            let pts: Vec<Vec3> = coords.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
            let pc = PointCloud::new(pts);
            prop_assume!(pc.bounds().map(|(lo, hi)| (hi - lo).max() > 1e-6).unwrap_or(false));
            let (once, _) = normalize_unit_cube(&pc).unwrap();
            let (lo, hi) = once.bounds().unwrap();
            prop_assert!(lo.min() >= 0.0 && hi.max() <= 1.0);
            prop_assert!(((hi - lo).max() - 1.0).abs() < 1e-12);
            let (twice, scale) = normalize_unit_cube(&once).unwrap();
            prop_assert!((scale - 1.0).abs() < 1e-12);
            for (a, b) in once.points().iter().zip(twice.points()) {
                prop_assert!((a - b).norm() < 1e-12);
            }
        }
    }
}
