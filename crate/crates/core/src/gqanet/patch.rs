use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{ref_edge_length_indexed, PointCloud, SpatialIndex, Vec3};
use crate::seed;

/// A center and exactly `n` member points in center-relative coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub center: Vec3,
    pub rel_points: Vec<Vec3>,
    /// Number of distinct points found within the radius before trimming or padding.
    pub gathered: usize,
    /// Set when no point fell within the radius; `rel_points` are then all zero.
    pub empty: bool,
}

/// A cloud with its spatial index and reference edge length, built once and reused.
#[derive(Debug, Clone)]
pub struct IndexedCloud {
    pub index: SpatialIndex,
    pub lr: f64,
}

impl IndexedCloud {
    pub fn new(pc: &PointCloud) -> Result<Self> {
        let index = SpatialIndex::build(pc.points());
        let lr = ref_edge_length_indexed(&index)?.get();
        Ok(Self { index, lr })
    }

    pub fn points(&self) -> &[Vec3] {
        self.index.points()
    }
}

/// How patches are sampled from a cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchConfig {
    /// Number of patches `N`.
    pub count: usize,
    /// Points per patch `n`.
    pub points: usize,
    /// Fixed neighborhood radius; when absent, `l_r * sqrt(n / pi)` of the center cloud.
    pub radius: Option<f64>,
    /// Replace patching by one patch of `n` farthest-point samples around the centroid.
    pub whole_cloud: bool,
}

impl PatchConfig {
    pub const TRAIN_COUNT: usize = 64;
    pub const TEST_COUNT: usize = 112;
    pub const POINTS: usize = 512;

    pub fn new(count: usize, points: usize) -> Self {
        Self {
            count,
            points,
            radius: None,
            whole_cloud: false,
        }
    }

    pub fn radius_for(&self, lr: f64) -> f64 {
        self.radius.unwrap_or_else(|| default_radius(lr, self.points))
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 || self.points == 0 {
            return Err(Error::InvalidArgument("patch count and size must be positive".into()));
        }
        if let Some(r) = self.radius {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::InvalidArgument(format!("radius must be positive, got {r}")));
            }
        }
        Ok(())
    }
}

/// Radius whose disc holds about `n` points at surface density `1 / l_r^2`.
pub fn default_radius(lr: f64, n: usize) -> f64 {
    lr * (n as f64 / PI).sqrt()
}

/// Patches plus the factor that maps relative coordinates to network input.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub patches: Vec<Patch>,
    pub scale: f64,
}

impl PatchSet {
    pub fn points_per_patch(&self) -> usize {
        self.patches.first().map_or(0, |p| p.rel_points.len())
    }
}

/// Greedy farthest point sampling from a seeded random start.
pub fn farthest_point_sample(points: &[Vec3], count: usize, seed: u64) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Err(Error::TooFewPoints { needed: count.max(1), got: 0 });
    }
    let start = seed::rng(seed).random_range(0..points.len());
    farthest_point_sample_from(points, count, start)
}

/// Farthest point sampling from a given start index; ties go to the lowest index.
pub fn farthest_point_sample_from(points: &[Vec3], count: usize, start: usize) -> Result<Vec<usize>> {
    if count == 0 || count > points.len() {
        return Err(Error::TooFewPoints { needed: count.max(1), got: points.len() });
    }
    if start >= points.len() {
        return Err(Error::InvalidArgument(format!("start index {start} out of range")));
    }
    let mut selected = Vec::with_capacity(count);
    let mut min_d2 = vec![f64::INFINITY; points.len()];
    let mut current = start;
    for _ in 0..count {
        selected.push(current);
        let c = points[current];
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (i, (p, d)) in points.iter().zip(min_d2.iter_mut()).enumerate() {
            let d2 = (p - c).norm_squared();
            if d2 < *d {
                *d = d2;
            }
            if *d > best.0 {
                best = (*d, i);
            }
        }
        current = best.1;
    }
    Ok(selected)
}

/// Radius-neighborhood patches around `centers`. Overfull neighborhoods keep the
/// `n` nearest members; underfull ones are padded by seeded resampling.
pub fn make_patches(index: &SpatialIndex, centers: &[Vec3], r: f64, n: usize, seed: u64) -> Vec<Patch> {
    centers
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut found = index.radius(c, r);
            let gathered = found.len();
            if gathered == 0 {
                return Patch {
                    center: *c,
                    rel_points: vec![Vec3::zeros(); n],
                    gathered,
                    empty: true,
                };
            }
            found.truncate(n);
            let pts = index.points();
            let mut rel: Vec<Vec3> = found.iter().map(|nb| pts[nb.index] - c).collect();
            if rel.len() < n {
                let mut rng = seed::rng(seed::derive(seed, &[i as u64]));
                let have = rel.len();
                while rel.len() < n {
                    let pick = rel[rng.random_range(0..have)];
                    rel.push(pick);
                }
            }
            Patch {
                center: *c,
                rel_points: rel,
                gathered,
                empty: false,
            }
        })
        .collect()
}

/// Patches on both clouds around the same farthest-point centers drawn from `a`.
pub fn paired_patches(
    a: &SpatialIndex,
    b: &SpatialIndex,
    count: usize,
    r: f64,
    n: usize,
    seed: u64,
) -> Result<(Vec<Patch>, Vec<Patch>)> {
    if b.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    let idx = farthest_point_sample(a.points(), count, seed::derive(seed, &[0]))?;
    let centers: Vec<Vec3> = idx.iter().map(|&i| a.points()[i]).collect();
    let pad_seed = seed::derive(seed, &[1]);
    Ok((make_patches(a, &centers, r, n, pad_seed), make_patches(b, &centers, r, n, pad_seed)))
}

/// One patch of `n` farthest-point samples relative to `center`; clouds with
/// fewer than `n` points are padded by seeded resampling.
fn whole_cloud_patch(points: &[Vec3], center: Vec3, n: usize, seed: u64) -> Result<Patch> {
    let take = n.min(points.len());
    let idx = farthest_point_sample(points, take, seed::derive(seed, &[0]))?;
    let mut rel: Vec<Vec3> = idx.iter().map(|&i| points[i] - center).collect();
    let mut rng = seed::rng(seed::derive(seed, &[1]));
    while rel.len() < n {
        let pick = rel[rng.random_range(0..take)];
        rel.push(pick);
    }
    Ok(Patch {
        center,
        rel_points: rel,
        gathered: points.len(),
        empty: false,
    })
}

fn centroid(points: &[Vec3]) -> Vec3 {
    points.iter().fold(Vec3::zeros(), |acc, p| acc + p) / points.len() as f64
}

fn whole_cloud_scale(points: &[Vec3], center: &Vec3) -> f64 {
    let r = points.iter().map(|p| (p - center).norm()).fold(0.0, f64::max);
    if r > 0.0 {
        1.0 / r
    } else {
        1.0
    }
}

/// Patches for scoring a single cloud on its own.
pub fn sample_patches(cloud: &IndexedCloud, cfg: &PatchConfig, seed: u64) -> Result<PatchSet> {
    cfg.validate()?;
    let pts = cloud.points();
    if cfg.whole_cloud {
        let c = centroid(pts);
        return Ok(PatchSet {
            patches: vec![whole_cloud_patch(pts, c, cfg.points, seed)?],
            scale: whole_cloud_scale(pts, &c),
        });
    }
    let r = cfg.radius_for(cloud.lr);
    let idx = farthest_point_sample(pts, cfg.count.min(pts.len()), seed::derive(seed, &[0]))?;
    let centers: Vec<Vec3> = idx.iter().map(|&i| pts[i]).collect();
    Ok(PatchSet {
        patches: make_patches(&cloud.index, &centers, r, cfg.points, seed::derive(seed, &[1])),
        scale: 1.0 / r,
    })
}

/// Corresponding patch sets for a pair; centers, radius and scale come from `a`.
pub fn sample_paired(a: &IndexedCloud, b: &IndexedCloud, cfg: &PatchConfig, seed: u64) -> Result<(PatchSet, PatchSet)> {
    cfg.validate()?;
    if cfg.whole_cloud {
        let c = centroid(a.points());
        let scale = whole_cloud_scale(a.points(), &c);
        let pa = whole_cloud_patch(a.points(), c, cfg.points, seed::derive(seed, &[2]))?;
        let pb = whole_cloud_patch(b.points(), c, cfg.points, seed::derive(seed, &[3]))?;
        return Ok((
            PatchSet { patches: vec![pa], scale },
            PatchSet { patches: vec![pb], scale },
        ));
    }
    let r = cfg.radius_for(a.lr);
    let count = cfg.count.min(a.points().len());
    let (pa, pb) = paired_patches(&a.index, &b.index, count, r, cfg.points, seed)?;
    Ok((
        PatchSet { patches: pa, scale: 1.0 / r },
        PatchSet { patches: pb, scale: 1.0 / r },
    ))
}
