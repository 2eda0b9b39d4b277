//! The seven geometric distortion generators, each with five severity levels.
//!
//! Noise and grid parameters are multiples of the reference edge length `l_r`;
//! octree resolutions are absolute and assume a unit-cube-normalized cloud.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RefEdgeLength, Vec3};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DistortionKind {
    /// Gaussian noise
    Gn,
    /// Uniform noise
    Un,
    /// Impulse noise
    In,
    /// Exponential noise
    En,
    /// Octree-based compression
    Oc,
    /// Random downsampling
    Rs,
    /// Grid downsampling
    Gs,
}

impl DistortionKind {
    pub const ALL: [DistortionKind; 7] = [
        DistortionKind::Gn,
        DistortionKind::Un,
        DistortionKind::In,
        DistortionKind::En,
        DistortionKind::Oc,
        DistortionKind::Rs,
        DistortionKind::Gs,
    ];

    pub fn code(self) -> &'static str {
        match self {
            DistortionKind::Gn => "GN",
            DistortionKind::Un => "UN",
            DistortionKind::In => "IN",
            DistortionKind::En => "EN",
            DistortionKind::Oc => "OC",
            DistortionKind::Rs => "RS",
            DistortionKind::Gs => "GS",
        }
    }

    pub fn is_noise(self) -> bool {
        matches!(
            self,
            DistortionKind::Gn | DistortionKind::Un | DistortionKind::In | DistortionKind::En
        )
    }

    /// Per-level parameter: a multiple of `l_r` except for OC (absolute
    /// resolution) and RS (removed fraction).
    pub fn level_parameter(self, level: Level) -> f64 {
        let table: [f64; 5] = match self {
            DistortionKind::Gn | DistortionKind::En => [0.1, 0.2, 0.35, 0.5, 0.7],
            DistortionKind::Un | DistortionKind::In => [0.3, 0.6, 1.05, 1.5, 2.1],
            DistortionKind::Oc => [0.01, 0.0116, 0.014, 0.019, 0.025],
            DistortionKind::Rs => [0.15, 0.25, 0.40, 0.55, 0.70],
            DistortionKind::Gs => [1.2, 1.4, 1.65, 2.0, 2.5],
        };
        table[level.index()]
    }
}

impl fmt::Display for DistortionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for DistortionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DistortionKind::ALL
            .into_iter()
            .find(|k| k.code().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown distortion kind {s:?}")))
    }
}

/// Distortion severity, 1 (mildest) through 5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Level(u8);

impl Level {
    pub const ALL: [Level; 5] = [Level(1), Level(2), Level(3), Level(4), Level(5)];

    pub fn new(level: u8) -> Result<Self> {
        if (1..=5).contains(&level) {
            Ok(Level(level))
        } else {
            Err(Error::InvalidArgument(format!("distortion level {level} outside 1..=5")))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    fn index(self) -> usize {
        self.0 as usize - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DistortionSpec {
    pub kind: DistortionKind,
    pub level: Level,
    pub seed: u64,
}

/// How impulse noise turns uniform candidates into sparse offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ImpulseMode {
    /// Keep a per-axis candidate only when its magnitude exceeds the threshold.
    #[default]
    ZeroBelowThreshold,
    /// Move the whole point by its candidate vector only when some axis exceeds the threshold.
    PointGate,
    /// Raise every per-axis magnitude to at least the threshold, keeping the sign.
    ClampToThreshold,
}

impl FromStr for ImpulseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero-below" => Ok(ImpulseMode::ZeroBelowThreshold),
            "point-gate" => Ok(ImpulseMode::PointGate),
            "clamp" => Ok(ImpulseMode::ClampToThreshold),
            other => Err(Error::InvalidArgument(format!("unknown impulse mode {other:?}"))),
        }
    }
}

/// Impulse threshold as a multiple of `l_r`.
pub const IMPULSE_THRESHOLD: f64 = 0.1;

fn offset_each(pc: &PointCloud, seed: u64, mut draw: impl FnMut(&mut rand_chacha::ChaCha8Rng) -> Vec3) -> PointCloud {
    let mut rng = seed::rng(seed);
    let points = pc.points().iter().map(|p| p + draw(&mut rng)).collect();
    PointCloud::new(points)
}

/// Adds zero-mean Gaussian noise with standard deviation `sigma` on every axis.
pub fn gaussian_noise(pc: &PointCloud, sigma: f64, seed: u64) -> Result<PointCloud> {
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::InvalidArgument(format!("gaussian sigma {sigma}: {e}")))?;
    Ok(offset_each(pc, seed, |rng| {
        Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng))
    }))
}

pub fn apply_gaussian_noise(pc: &PointCloud, lr: RefEdgeLength, level: Level, seed: u64) -> Result<PointCloud> {
    gaussian_noise(pc, DistortionKind::Gn.level_parameter(level) * lr.get(), seed)
}

fn uniform_draw(rng: &mut impl Rng, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.random_range(-half_width..=half_width)
    } else {
        0.0
    }
}

/// Offsets every axis independently by a uniform draw in `[-half_width, half_width]`.
pub fn uniform_noise(pc: &PointCloud, half_width: f64, seed: u64) -> PointCloud {
    offset_each(pc, seed, |rng| {
        Vec3::new(
            uniform_draw(rng, half_width),
            uniform_draw(rng, half_width),
            uniform_draw(rng, half_width),
        )
    })
}

pub fn apply_uniform_noise(pc: &PointCloud, lr: RefEdgeLength, level: Level, seed: u64) -> PointCloud {
    uniform_noise(pc, DistortionKind::Un.level_parameter(level) * lr.get(), seed)
}

/// Sparse uniform noise: candidates in `[-half_width, half_width]`, gated by `threshold`.
pub fn impulse_noise(pc: &PointCloud, half_width: f64, threshold: f64, mode: ImpulseMode, seed: u64) -> PointCloud {
    offset_each(pc, seed, |rng| {
        let v = Vec3::new(
            uniform_draw(rng, half_width),
            uniform_draw(rng, half_width),
            uniform_draw(rng, half_width),
        );
        match mode {
            ImpulseMode::ZeroBelowThreshold => v.map(|c| if c.abs() > threshold { c } else { 0.0 }),
            ImpulseMode::PointGate => {
                if v.amax() > threshold {
                    v
                } else {
                    Vec3::zeros()
                }
            }
            ImpulseMode::ClampToThreshold => {
                if half_width <= threshold {
                    Vec3::zeros()
                } else {
                    v.map(|c| c.signum() * c.abs().max(threshold))
                }
            }
        }
    })
}

pub fn apply_impulse_noise(
    pc: &PointCloud,
    lr: RefEdgeLength,
    level: Level,
    mode: ImpulseMode,
    seed: u64,
) -> PointCloud {
    impulse_noise(
        pc,
        DistortionKind::In.level_parameter(level) * lr.get(),
        IMPULSE_THRESHOLD * lr.get(),
        mode,
        seed,
    )
}

/// Per-axis offsets with exponential magnitude of the given mean and a random sign.
pub fn exponential_noise(pc: &PointCloud, mean: f64, seed: u64) -> Result<PointCloud> {
    let exp = Exp::new(1.0 / mean)
        .map_err(|e| Error::InvalidArgument(format!("exponential mean {mean}: {e}")))?;
    Ok(offset_each(pc, seed, |rng| {
        let mut axis = || {
            let magnitude: f64 = exp.sample(rng);
            if rng.random::<bool>() {
                magnitude
            } else {
                -magnitude
            }
        };
        Vec3::new(axis(), axis(), axis())
    }))
}

pub fn apply_exponential_noise(pc: &PointCloud, lr: RefEdgeLength, level: Level, seed: u64) -> Result<PointCloud> {
    exponential_noise(pc, DistortionKind::En.level_parameter(level) * lr.get(), seed)
}

fn cell_key(p: &Vec3, origin: &Vec3, size: f64) -> [i64; 3] {
    let c = (p - origin) / size;
    [c.x.floor() as i64, c.y.floor() as i64, c.z.floor() as i64]
}

/// Groups point indices by grid cell, cells in order of first occupancy.
fn group_cells(points: &[Vec3], origin: &Vec3, size: f64) -> Vec<([i64; 3], Vec<usize>)> {
    let mut slot: HashMap<[i64; 3], usize> = HashMap::new();
    let mut cells: Vec<([i64; 3], Vec<usize>)> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let key = cell_key(p, origin, size);
        let s = *slot.entry(key).or_insert_with(|| {
            cells.push((key, Vec::new()));
            cells.len() - 1
        });
        cells[s].1.push(i);
    }
    cells
}

/// Snaps points to the centers of cubic cells of side `resolution` anchored at the
/// origin and removes duplicates, as an octree codec reconstruction would.
pub fn octree_compression(pc: &PointCloud, resolution: f64) -> Result<PointCloud> {
    if !(resolution > 0.0) {
        return Err(Error::InvalidArgument(format!("octree resolution {resolution} must be positive")));
    }
    let (lo, hi) = pc.bounds().ok_or(Error::TooFewPoints { needed: 1, got: 0 })?;
    let side = (hi - lo).max();
    if side > 1.0 + 1e-9 || lo.min() < -1e-9 || hi.max() > 1.0 + 1e-9 {
        return Err(Error::NotNormalized { side });
    }
    let origin = Vec3::zeros();
    let points = group_cells(pc.points(), &origin, resolution)
        .into_iter()
        .map(|(key, _)| Vec3::new(key[0] as f64 + 0.5, key[1] as f64 + 0.5, key[2] as f64 + 0.5) * resolution)
        .collect();
    Ok(PointCloud::new(points))
}

pub fn apply_octree_compression(pc: &PointCloud, level: Level) -> Result<PointCloud> {
    octree_compression(pc, DistortionKind::Oc.level_parameter(level))
}

/// Number of points kept when removing `fraction` of `n` (round half up).
pub fn downsample_count(n: usize, fraction: f64) -> usize {
    (n as f64 * (1.0 - fraction) + 0.5).floor() as usize
}

/// Keeps a uniformly random subset of points (original order preserved).
pub fn random_downsample(pc: &PointCloud, fraction: f64, seed: u64) -> Result<PointCloud> {
    let keep = downsample_count(pc.len(), fraction);
    if keep < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: keep });
    }
    let mut rng = seed::rng(seed);
    let mut chosen = sample(&mut rng, pc.len(), keep).into_vec();
    chosen.sort_unstable();
    Ok(pc.select(&chosen).without_normals())
}

pub fn apply_random_downsample(pc: &PointCloud, level: Level, seed: u64) -> Result<PointCloud> {
    random_downsample(pc, DistortionKind::Rs.level_parameter(level), seed)
}

/// Replaces the points in each occupied cell (side `cell`, grid anchored at the
/// bounding-box minimum) by their centroid.
pub fn grid_downsample(pc: &PointCloud, cell: f64) -> Result<PointCloud> {
    if !(cell > 0.0) {
        return Err(Error::InvalidArgument(format!("grid cell {cell} must be positive")));
    }
    let (lo, _) = pc.bounds().ok_or(Error::TooFewPoints { needed: 1, got: 0 })?;
    let points = group_cells(pc.points(), &lo, cell)
        .into_iter()
        .map(|(_, members)| {
            let sum = members.iter().fold(Vec3::zeros(), |acc, &i| acc + pc.points()[i]);
            sum / members.len() as f64
        })
        .collect();
    Ok(PointCloud::new(points))
}

pub fn apply_grid_downsample(pc: &PointCloud, lr: RefEdgeLength, level: Level) -> Result<PointCloud> {
    grid_downsample(pc, DistortionKind::Gs.level_parameter(level) * lr.get())
}

/// Applies one distortion. `pc` must already be normalized to the unit cube for OC.
pub fn apply(pc: &PointCloud, lr: RefEdgeLength, spec: &DistortionSpec, impulse: ImpulseMode) -> Result<PointCloud> {
    let DistortionSpec { kind, level, seed } = *spec;
    match kind {
        DistortionKind::Gn => apply_gaussian_noise(pc, lr, level, seed),
        DistortionKind::Un => Ok(apply_uniform_noise(pc, lr, level, seed)),
        DistortionKind::In => Ok(apply_impulse_noise(pc, lr, level, impulse, seed)),
        DistortionKind::En => apply_exponential_noise(pc, lr, level, seed),
        DistortionKind::Oc => apply_octree_compression(pc, level),
        DistortionKind::Rs => apply_random_downsample(pc, level, seed),
        DistortionKind::Gs => apply_grid_downsample(pc, lr, level),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ref_edge_length;
    use crate::synth::{sample_surface, Shape};

    fn zeros(n: usize) -> PointCloud {
        PointCloud::new(vec![Vec3::zeros(); n])
    }

    fn unit_lr() -> RefEdgeLength {
        RefEdgeLength::new(1.0).unwrap()
    }

    fn offsets(pc: &PointCloud) -> Vec<f64> {
        pc.points().iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    #[test]
    fn level_tables() {
        let l = |n| Level::new(n).unwrap();
        assert_eq!(DistortionKind::Gn.level_parameter(l(5)), 0.7);
        assert_eq!(DistortionKind::En.level_parameter(l(3)), 0.35);
        assert_eq!(DistortionKind::Un.level_parameter(l(1)), 0.3);
        assert_eq!(DistortionKind::In.level_parameter(l(5)), 2.1);
        assert_eq!(DistortionKind::Oc.level_parameter(l(2)), 0.0116);
        assert_eq!(DistortionKind::Rs.level_parameter(l(4)), 0.55);
        assert_eq!(DistortionKind::Gs.level_parameter(l(3)), 1.65);
        assert!(Level::new(0).is_err() && Level::new(6).is_err());
    }

    #[test]
    fn gaussian_std_level_one() {
        let out = apply_gaussian_noise(&zeros(100_000), unit_lr(), Level(1), 11).unwrap();
        let v = offsets(&out);
        let m = mean(&v);
        let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
        assert!((sd - 0.1).abs() < 0.003, "sd {sd}");
    }

    #[test]
    fn gaussian_is_deterministic() {
        let pc = sample_surface(&Shape::Sphere, 500, 1);
        let a = apply_gaussian_noise(&pc, unit_lr(), Level(3), 5).unwrap();
        let b = apply_gaussian_noise(&pc, unit_lr(), Level(3), 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, apply_gaussian_noise(&pc, unit_lr(), Level(3), 6).unwrap());
    }

    #[test]
    fn uniform_bounds_and_mean() {
        let out = apply_uniform_noise(&zeros(100_000), unit_lr(), Level(1), 3);
        let v = offsets(&out);
        assert!(v.iter().all(|x| x.abs() <= 0.3));
        let tol = 3.0 * 0.3 / (3.0f64 * 100_000.0).sqrt();
        assert!(mean(&v).abs() < tol);
    }

    #[test]
    fn uniform_zero_width_is_identity() {
        let pc = sample_surface(&Shape::Sphere, 100, 2).without_normals();
        assert_eq!(uniform_noise(&pc, 0.0, 9), pc);
    }

    #[test]
    fn impulse_threshold_and_zero_fraction() {
        let w = 0.6;
        let out = impulse_noise(&zeros(100_000), w, 0.1, ImpulseMode::ZeroBelowThreshold, 4);
        let v = offsets(&out);
        assert!(v.iter().filter(|x| **x != 0.0).all(|x| x.abs() > 0.1));
        let zero_frac = v.iter().filter(|x| **x == 0.0).count() as f64 / v.len() as f64;
        let p = 0.1 / w;
        let tol = 4.0 * (p * (1.0 - p) / v.len() as f64).sqrt();
        assert!((zero_frac - p).abs() < tol, "{zero_frac} vs {p}");
    }

    #[test]
    fn impulse_below_threshold_width_is_identity() {
        let pc = sample_surface(&Shape::Sphere, 100, 2).without_normals();
        for mode in [ImpulseMode::ZeroBelowThreshold, ImpulseMode::PointGate, ImpulseMode::ClampToThreshold] {
            assert_eq!(impulse_noise(&pc, 0.1, 0.1, mode, 1), pc);
        }
    }

    #[test]
    fn impulse_alternative_modes() {
        let clamp = impulse_noise(&zeros(1000), 0.6, 0.1, ImpulseMode::ClampToThreshold, 4);
        assert!(offsets(&clamp).iter().all(|x| x.abs() >= 0.1));
        let gate = impulse_noise(&zeros(1000), 0.6, 0.1, ImpulseMode::PointGate, 4);
        assert!(gate.points().iter().all(|p| *p == Vec3::zeros() || p.amax() > 0.1));
    }

    #[test]
    fn exponential_mean_magnitude() {
        let out = exponential_noise(&zeros(100_000), 0.1, 8).unwrap();
        let v = offsets(&out);
        let m: f64 = v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64;
        assert!((m - 0.1).abs() < 0.003, "mean |offset| {m}");
        assert!(mean(&v).abs() < 0.003, "signs balance");
    }

    #[test]
    fn octree_same_cell_merges() {
        let pc = PointCloud::from_slice(&[[0.001, 0.002, 0.003], [0.009, 0.001, 0.0], [1.0, 1.0, 1.0]]);
        let out = octree_compression(&pc, 0.01).unwrap();
        assert_eq!(out.len(), 2);
        assert!((out.points()[0] - Vec3::new(0.005, 0.005, 0.005)).norm() < 1e-15);
    }

    #[test]
    fn octree_adjacent_cells() {
        let pc = PointCloud::from_slice(&[[0.004, 0.0, 0.0], [0.014, 0.0, 0.0]]);
        let out = octree_compression(&pc, 0.01).unwrap();
        assert_eq!(out.len(), 2);
        assert!((out.points()[0].x - 0.005).abs() < 1e-15);
        assert!((out.points()[1].x - 0.015).abs() < 1e-15);
    }

    #[test]
    fn octree_tiny_resolution_keeps_distinct_points() {
        let pc = sample_surface(&Shape::Sphere, 300, 4);
        let (pc, _) = crate::geometry::normalize_unit_cube(&pc).unwrap();
        let out = octree_compression(&pc, 1e-9).unwrap();
        assert_eq!(out.len(), pc.len());
    }

    #[test]
    fn octree_rejects_unnormalized() {
        let pc = PointCloud::from_slice(&[[0.0; 3], [2.0, 0.0, 0.0]]);
        assert!(matches!(octree_compression(&pc, 0.01), Err(Error::NotNormalized { .. })));
    }

    #[test]
    fn random_downsample_counts_and_subset() {
        let pc = PointCloud::new((0..1000).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect());
        let l1 = apply_random_downsample(&pc, Level(1), 1).unwrap();
        let l5 = apply_random_downsample(&pc, Level(5), 1).unwrap();
        assert_eq!(l1.len(), 850);
        assert_eq!(l5.len(), 300);
        for p in l5.points() {
            assert!(pc.points().contains(p));
        }
        assert!(l5.points().windows(2).all(|w| w[0].x < w[1].x), "order preserved");
    }

    #[test]
    fn random_downsample_too_small() {
        let pc = PointCloud::from_slice(&[[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        assert!(random_downsample(&pc, 0.7, 1).is_err());
    }

    #[test]
    fn grid_centroid() {
        let pc = PointCloud::from_slice(&[[0.0; 3], [0.1, 0.0, 0.0]]);
        let out = grid_downsample(&pc, 1.0).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out.points()[0] - Vec3::new(0.05, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn grid_one_point_per_cell_is_identity() {
        let pc = PointCloud::from_slice(&[[0.0; 3], [1.5, 0.0, 0.0], [0.0, 3.2, 0.0], [0.0, 0.0, 4.9]]);
        assert_eq!(grid_downsample(&pc, 1.0).unwrap(), pc);
    }

    #[test]
    fn grid_count_is_occupied_cells() {
        let pc = sample_surface(&Shape::Torus { major: 1.0, minor: 0.3 }, 2000, 6);
        let (lo, _) = pc.bounds().unwrap();
        let cells: std::collections::HashSet<[i64; 3]> =
            pc.points().iter().map(|p| cell_key(p, &lo, 0.1)).collect();
        assert_eq!(grid_downsample(&pc, 0.1).unwrap().len(), cells.len());
    }

    #[test]
    fn downsampled_outputs_stay_near_input_bbox() {
        let pc = sample_surface(&Shape::Sphere, 3000, 8);
        let (pc, _) = crate::geometry::normalize_unit_cube(&pc).unwrap();
        let lr = ref_edge_length(&pc).unwrap();
        let (lo, hi) = pc.bounds().unwrap();
        for level in Level::ALL {
            let oc = apply_octree_compression(&pc, level).unwrap();
            let res = DistortionKind::Oc.level_parameter(level);
            for p in oc.points() {
                assert!(p.iter().zip(lo.iter().zip(hi.iter())).all(|(c, (a, b))| *c >= a - res && *c <= b + res));
            }
            let gs = apply_grid_downsample(&pc, lr, level).unwrap();
            for p in gs.points() {
                assert!(p.iter().zip(lo.iter().zip(hi.iter())).all(|(c, (a, b))| *c >= a - 1e-12 && *c <= b + 1e-12));
            }
        }
    }

    #[test]
    fn noise_magnitude_increases_with_level() {
        let base = sample_surface(&Shape::Sphere, 10_000, 1).without_normals();
        let lr = ref_edge_length(&base).unwrap();
        for seed in 0..20u64 {
            for kind in [DistortionKind::Gn, DistortionKind::Un, DistortionKind::En] {
                let mut prev = 0.0;
                for level in Level::ALL {
                    let spec = DistortionSpec { kind, level, seed };
                    let out = apply(&base, lr, &spec, ImpulseMode::default()).unwrap();
                    assert_eq!(out.len(), base.len());
                    let disp = base
                        .points()
                        .iter()
                        .zip(out.points())
                        .map(|(a, b)| (a - b).norm())
                        .sum::<f64>()
                        / base.len() as f64;
                    assert!(disp > prev, "{kind} level {} seed {seed}", level.get());
                    prev = disp;
                }
            }
        }
    }
}
