use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// An ordered set of 3D positions with optional per-point unit normals.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
    normals: Option<Vec<Vec3>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self {
            points,
            normals: None,
        }
    }

    /// Builds a cloud with normals; every normal must be unit length.
    pub fn with_normals(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        if normals.len() != points.len() {
            return Err(Error::Shape(format!(
                "{} normals for {} points",
                normals.len(),
                points.len()
            )));
        }
        if let Some(index) = normals
            .iter()
            .position(|n| (n.norm() - 1.0).abs() > UNIT_NORM_TOLERANCE)
        {
            return Err(Error::DegenerateNormal { index });
        }
        Ok(Self {
            points,
            normals: Some(normals),
        })
    }

    pub fn from_slice(points: &[[f64; 3]]) -> Self {
        Self::new(points.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect())
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Drops the normals, e.g. after the positions have been perturbed.
    pub fn without_normals(mut self) -> Self {
        self.normals = None;
        self
    }

    pub fn into_points(self) -> Vec<Vec3> {
        self.points
    }

    pub(crate) fn require_len(&self, needed: usize) -> Result<()> {
        if self.len() < needed {
            return Err(Error::TooFewPoints {
                needed,
                got: self.len(),
            });
        }
        Ok(())
    }

    /// Axis-aligned bounding box as (min, max).
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        bounds_of(&self.points)
    }

    /// Length of the bounding-box diagonal (0 for an empty cloud).
    pub fn bbox_diagonal(&self) -> f64 {
        self.bounds().map(|(lo, hi)| (hi - lo).norm()).unwrap_or(0.0)
    }

    pub fn centroid(&self) -> Option<Vec3> {
        if self.is_empty() {
            return None;
        }
        let sum = self.points.iter().fold(Vec3::zeros(), |acc, p| acc + p);
        Some(sum / self.len() as f64)
    }

    /// Applies `f` to every position, carrying `rotate` over the normals when present.
    pub fn transformed(&self, f: impl Fn(&Vec3) -> Vec3, rotate: impl Fn(&Vec3) -> Vec3) -> Self {
        Self {
            points: self.points.iter().map(&f).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| rotate(n).normalize()).collect()),
        }
    }

    /// Keeps the points at `indices` (and their normals), in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| indices.iter().map(|&i| ns[i]).collect()),
        }
    }
}

pub(crate) fn bounds_of(points: &[Vec3]) -> Option<(Vec3, Vec3)> {
    let first = points.first()?;
    Some(points.iter().fold((*first, *first), |(lo, hi), p| {
        (lo.inf(p), hi.sup(p))
    }))
}

/// Rescales a cloud uniformly so its bounding box fits in `[0,1]^3` with longest side 1.
///
/// Returns the normalized cloud and the applied scale factor.
pub fn normalize_unit_cube(pc: &PointCloud) -> Result<(PointCloud, f64)> {
    let (lo, hi) = pc.bounds().ok_or(Error::TooFewPoints { needed: 2, got: 0 })?;
    let side = (hi - lo).max();
    if !(side > 0.0) {
        return Err(Error::DegenerateExtent);
    }
    let scale = 1.0 / side;
    let out = pc.transformed(|p| (p - lo) * scale, |n| *n);
    Ok((out, scale))
}

/// Mean distance from each point to its nearest other point.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct RefEdgeLength(f64);

impl RefEdgeLength {
    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value.is_finite() {
            Ok(Self(value))
        } else {
            Err(Error::InvalidArgument(format!(
                "reference edge length must be positive, got {value}"
            )))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_two_points() {
        let pc = PointCloud::from_slice(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let (out, scale) = normalize_unit_cube(&pc).unwrap();
        assert_eq!(scale, 0.5);
        assert_eq!(out.points()[1], Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn normalize_coincident_is_degenerate() {
        let pc = PointCloud::from_slice(&[[5.0, 5.0, 5.0], [5.0, 5.0, 5.0]]);
        assert!(matches!(
            normalize_unit_cube(&pc),
            Err(Error::DegenerateExtent)
        ));
    }

    #[test]
    fn normalize_unit_side_is_translation_only() {
        let pc = PointCloud::from_slice(&[[0.5, 0.2, 0.1], [1.5, 0.7, 0.3]]);
        let (out, scale) = normalize_unit_cube(&pc).unwrap();
        assert_eq!(scale, 1.0);
        assert_eq!(out.points()[0], Vec3::zeros());
        assert!((out.points()[1] - Vec3::new(1.0, 0.5, 0.2)).norm() < 1e-15);
    }

    #[test]
    fn with_normals_rejects_non_unit() {
        let pts = vec![Vec3::zeros()];
        assert!(PointCloud::with_normals(pts.clone(), vec![Vec3::new(0.0, 0.0, 2.0)]).is_err());
        assert!(PointCloud::with_normals(pts, vec![Vec3::z()]).is_ok());
    }
}
