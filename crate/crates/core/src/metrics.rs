//! Full-reference geometry metrics: point-to-point, point-to-plane and
//! plane-to-plane angular similarity, each pooled by MSE, Hausdorff or PSNR.
//!
//! Per-point errors are computed in both directions (degraded to reference
//! and reference to degraded) and the symmetric value is the worse of the two.
//! Correspondences are exact nearest neighbors. All reductions run in point
//! order, so results are reproducible bit for bit.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{ensure_normals, estimate_normals, PointCloud, SpatialIndex, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricFamily {
    Po2Po,
    Po2Pl,
    Pl2Pl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pooling {
    Mse,
    Hausdorff,
    Psnr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MetricKind {
    pub family: MetricFamily,
    pub pooling: Pooling,
}

impl MetricKind {
    pub const ALL: [MetricKind; 9] = {
        use MetricFamily::*;
        use Pooling::*;
        [
            MetricKind { family: Po2Po, pooling: Mse },
            MetricKind { family: Po2Po, pooling: Hausdorff },
            MetricKind { family: Po2Po, pooling: Psnr },
            MetricKind { family: Po2Pl, pooling: Mse },
            MetricKind { family: Po2Pl, pooling: Hausdorff },
            MetricKind { family: Po2Pl, pooling: Psnr },
            MetricKind { family: Pl2Pl, pooling: Mse },
            MetricKind { family: Pl2Pl, pooling: Hausdorff },
            MetricKind { family: Pl2Pl, pooling: Psnr },
        ]
    };

    pub fn name(&self) -> &'static str {
        use MetricFamily::*;
        use Pooling::*;
        match (self.family, self.pooling) {
            (Po2Po, Mse) => "po2po_mse",
            (Po2Po, Hausdorff) => "po2po_hausdorff",
            (Po2Po, Psnr) => "po2po_psnr",
            (Po2Pl, Mse) => "po2pl_mse",
            (Po2Pl, Hausdorff) => "po2pl_hausdorff",
            (Po2Pl, Psnr) => "po2pl_psnr",
            (Pl2Pl, Mse) => "pl2pl_mse",
            (Pl2Pl, Hausdorff) => "pl2pl_hausdorff",
            (Pl2Pl, Psnr) => "pl2pl_psnr",
        }
    }

    pub fn orientation(&self) -> Orientation {
        match self.pooling {
            Pooling::Psnr => Orientation::HigherBetter,
            Pooling::Mse | Pooling::Hausdorff => Orientation::LowerBetter,
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown metric {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Orientation {
    LowerBetter,
    HigherBetter,
}

impl Orientation {
    pub fn name(self) -> &'static str {
        match self {
            Orientation::LowerBetter => "lower-better",
            Orientation::HigherBetter => "higher-better",
        }
    }

    /// Maps a value so that larger always means better quality.
    pub fn as_quality(self, value: f64) -> f64 {
        match self {
            Orientation::LowerBetter => -value,
            Orientation::HigherBetter => value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricResult {
    pub value: f64,
    pub orientation: Orientation,
    /// Set when the degraded cloud matches the reference exactly (PSNR is then `+inf`).
    pub perfect: bool,
}

impl MetricResult {
    /// Quality-oriented value: larger is better for every metric.
    pub fn quality(&self) -> f64 {
        self.orientation.as_quality(self.value)
    }
}

/// Per-point values in both correspondence directions.
#[derive(Debug, Clone, PartialEq)]
pub struct Directional {
    pub deg_to_ref: Vec<f64>,
    pub ref_to_deg: Vec<f64>,
}

fn nonempty(pc: &PointCloud) -> Result<()> {
    if pc.is_empty() {
        Err(Error::TooFewPoints { needed: 1, got: 0 })
    } else {
        Ok(())
    }
}

fn correspondences(from: &PointCloud, to: &SpatialIndex) -> Vec<usize> {
    from.points()
        .iter()
        .map(|p| to.nearest(p).expect("index is non-empty").index)
        .collect()
}

/// Nearest-neighbor correspondences in both directions, shared by all families.
struct Matching {
    deg_to_ref: Vec<usize>,
    ref_to_deg: Vec<usize>,
}

impl Matching {
    fn new(reference: &PointCloud, degraded: &PointCloud) -> Result<Self> {
        nonempty(reference)?;
        nonempty(degraded)?;
        let ref_index = SpatialIndex::build(reference.points());
        let deg_index = SpatialIndex::build(degraded.points());
        Ok(Self {
            deg_to_ref: correspondences(degraded, &ref_index),
            ref_to_deg: correspondences(reference, &deg_index),
        })
    }
}

/// Squared point-to-point distances to the nearest point of the other cloud.
pub fn po2po_error(reference: &PointCloud, degraded: &PointCloud) -> Result<Directional> {
    let m = Matching::new(reference, degraded)?;
    Ok(po2po_with(&m, reference, degraded))
}

fn po2po_with(m: &Matching, reference: &PointCloud, degraded: &PointCloud) -> Directional {
    let (r, d) = (reference.points(), degraded.points());
    Directional {
        deg_to_ref: d.iter().zip(&m.deg_to_ref).map(|(p, &j)| (p - r[j]).norm_squared()).collect(),
        ref_to_deg: r.iter().zip(&m.ref_to_deg).map(|(q, &j)| (q - d[j]).norm_squared()).collect(),
    }
}

fn require_normals(pc: &PointCloud) -> Result<&[Vec3]> {
    let normals = pc.normals().ok_or(Error::MissingNormals)?;
    if let Some(index) = normals.iter().position(|n| !(n.norm() > 1e-12)) {
        return Err(Error::DegenerateNormal { index });
    }
    Ok(normals)
}

/// Squared projections of correspondence vectors onto the reference normals.
///
/// `reference` must carry normals.
pub fn po2pl_error(reference: &PointCloud, degraded: &PointCloud) -> Result<Directional> {
    require_normals(reference)?;
    let m = Matching::new(reference, degraded)?;
    po2pl_with(&m, reference, degraded)
}

fn po2pl_with(m: &Matching, reference: &PointCloud, degraded: &PointCloud) -> Result<Directional> {
    let normals = require_normals(reference)?;
    let (r, d) = (reference.points(), degraded.points());
    Ok(Directional {
        deg_to_ref: d
            .iter()
            .zip(&m.deg_to_ref)
            .map(|(p, &j)| (p - r[j]).dot(&normals[j]).powi(2))
            .collect(),
        ref_to_deg: r
            .iter()
            .zip(&m.ref_to_deg)
            .enumerate()
            .map(|(i, (q, &j))| (q - d[j]).dot(&normals[i]).powi(2))
            .collect(),
    })
}

/// Angular similarity `1 - 2*theta/pi` of two unoriented normals.
pub fn angular_similarity(a: &Vec3, b: &Vec3) -> f64 {
    let theta = a.cross(b).norm().atan2(a.dot(b).abs());
    1.0 - 2.0 * theta / PI
}

/// Angular similarity between each point's normal and its correspondence's normal.
///
/// Both clouds must carry normals.
pub fn pl2pl_similarity(reference: &PointCloud, degraded: &PointCloud) -> Result<Directional> {
    require_normals(reference)?;
    require_normals(degraded)?;
    let m = Matching::new(reference, degraded)?;
    pl2pl_with(&m, reference, degraded)
}

fn pl2pl_with(m: &Matching, reference: &PointCloud, degraded: &PointCloud) -> Result<Directional> {
    let (nr, nd) = (require_normals(reference)?, require_normals(degraded)?);
    Ok(Directional {
        deg_to_ref: nd
            .iter()
            .zip(&m.deg_to_ref)
            .map(|(n, &j)| angular_similarity(n, &nr[j]))
            .collect(),
        ref_to_deg: nr
            .iter()
            .zip(&m.ref_to_deg)
            .map(|(n, &j)| angular_similarity(n, &nd[j]))
            .collect(),
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Pools per-point values into a symmetric score.
///
/// `errors` holds squared distances for Po2Po/Po2PL and similarities for PL2PL
/// (pooled as the angular error `1 - similarity`). `peak` is the PSNR peak
/// value: the reference bounding-box diagonal for the distance families and 1
/// for PL2PL, whose error is bounded by 1.
pub fn pool(errors: &Directional, family: MetricFamily, pooling: Pooling, peak: f64) -> Result<MetricResult> {
    if errors.deg_to_ref.is_empty() || errors.ref_to_deg.is_empty() {
        return Err(Error::InvalidArgument("cannot pool an empty error list".into()));
    }
    let to_error = |v: &[f64]| -> Vec<f64> {
        match family {
            MetricFamily::Pl2Pl => v.iter().map(|s| (1.0 - s).powi(2)).collect(),
            _ => v.to_vec(),
        }
    };
    let raw_distance = |v: &[f64]| -> Vec<f64> {
        match family {
            MetricFamily::Pl2Pl => v.iter().map(|s| 1.0 - s).collect(),
            _ => v.iter().map(|e| e.sqrt()).collect(),
        }
    };
    let (a, b) = (to_error(&errors.deg_to_ref), to_error(&errors.ref_to_deg));
    let mse = mean(&a).max(mean(&b));
    let orientation = MetricKind { family, pooling }.orientation();
    let value = match pooling {
        Pooling::Mse => mse,
        Pooling::Hausdorff => max(&raw_distance(&errors.deg_to_ref)).max(max(&raw_distance(&errors.ref_to_deg))),
        Pooling::Psnr => {
            if mse == 0.0 {
                f64::INFINITY
            } else {
                10.0 * (peak * peak / mse).log10()
            }
        }
    };
    let perfect = mse == 0.0;
    Ok(MetricResult {
        value,
        orientation,
        perfect,
    })
}

/// Neighborhood size used when normals have to be estimated.
#[derive(Debug, Clone, Copy)]
pub struct MetricOptions {
    pub normal_k: usize,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            normal_k: crate::geometry::DEFAULT_NORMAL_NEIGHBORS,
        }
    }
}

/// Computes one metric, estimating normals where the family needs them and the
/// cloud has none.
pub fn compute(kind: MetricKind, reference: &PointCloud, degraded: &PointCloud, opts: MetricOptions) -> Result<MetricResult> {
    let all = MetricSet::compute_families(reference, degraded, opts, &[kind.family])?;
    all.get(kind)
}

/// All nine metrics for one (reference, degraded) pair, sharing correspondences.
#[derive(Debug, Clone)]
pub struct MetricSet {
    results: Vec<(MetricKind, MetricResult)>,
}

impl MetricSet {
    pub fn compute(reference: &PointCloud, degraded: &PointCloud, opts: MetricOptions) -> Result<Self> {
        Self::compute_families(
            reference,
            degraded,
            opts,
            &[MetricFamily::Po2Po, MetricFamily::Po2Pl, MetricFamily::Pl2Pl],
        )
    }

    fn compute_families(
        reference: &PointCloud,
        degraded: &PointCloud,
        opts: MetricOptions,
        families: &[MetricFamily],
    ) -> Result<Self> {
        let m = Matching::new(reference, degraded)?;
        let peak = reference.bbox_diagonal();
        let needs_ref_normals = families.iter().any(|f| *f != MetricFamily::Po2Po);
        let reference_n = if needs_ref_normals {
            Some(ensure_normals(reference, opts.normal_k)?)
        } else {
            None
        };
        let mut results = Vec::new();
        for &family in families {
            let (errors, peak) = match family {
                MetricFamily::Po2Po => (po2po_with(&m, reference, degraded), peak),
                MetricFamily::Po2Pl => (po2pl_with(&m, reference_n.as_ref().expect("normals"), degraded)?, peak),
                MetricFamily::Pl2Pl => {
                    let deg_n = ensure_normals(degraded, opts.normal_k)?;
                    (pl2pl_with(&m, reference_n.as_ref().expect("normals"), &deg_n)?, 1.0)
                }
            };
            for pooling in [Pooling::Mse, Pooling::Hausdorff, Pooling::Psnr] {
                results.push((MetricKind { family, pooling }, pool(&errors, family, pooling, peak)?));
            }
        }
        Ok(Self { results })
    }

    pub fn get(&self, kind: MetricKind) -> Result<MetricResult> {
        self.results
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, r)| *r)
            .ok_or_else(|| Error::InvalidArgument(format!("metric {kind} not computed")))
    }

    pub fn iter(&self) -> impl Iterator<Item = &(MetricKind, MetricResult)> {
        self.results.iter()
    }
}

/// Mean plane-to-plane similarity of the degraded cloud against the reference
/// (degraded-to-reference direction only), in `[0, 1]`.
///
/// Normals are estimated on both clouds with the same neighborhood size, so
/// the score does not depend on whether the input files carried normals.
pub fn pseudo_mos(reference: &PointCloud, degraded: &PointCloud, normal_k: usize) -> Result<f64> {
    let r = estimate_normals(reference, normal_k)?.cloud;
    let d = estimate_normals(degraded, normal_k)?.cloud;
    pseudo_mos_with_normals(&r, &d)
}

/// [`pseudo_mos`] for clouds that already carry normals.
pub fn pseudo_mos_with_normals(reference: &PointCloud, degraded: &PointCloud) -> Result<f64> {
    let (nr, nd) = (require_normals(reference)?, require_normals(degraded)?);
    nonempty(reference)?;
    nonempty(degraded)?;
    let index = SpatialIndex::build(reference.points());
    let sims: Vec<f64> = degraded
        .points()
        .iter()
        .zip(nd)
        .map(|(p, n)| {
            let j = index.nearest(p).expect("non-empty").index;
            angular_similarity(n, &nr[j])
        })
        .collect();
    Ok(mean(&sims).clamp(0.0, 1.0))
}
