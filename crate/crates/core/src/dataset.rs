//! Distorted-dataset construction: the ranked-pair dataset, the pseudo-MOS
//! scored dataset, their on-disk manifest, and source-level train/test splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::distortion::{self, DistortionKind, DistortionSpec, ImpulseMode, Level};
use crate::error::{Error, Result};
use crate::geometry::{self, load_cloud_auto, normalize_unit_cube, save_cloud, CloudFormat, PointCloud};
use crate::metrics;
use crate::seed;

pub const MANIFEST_HEADER: &str = "#source_id\tkind\tlevel\tpath\tpseudo_mos\tseed";
pub const PAIRS_HEADER: &str = "#a\tb\ttarget\tsource_id\tkind";
/// Placeholder for an absent optional field in tab-separated files.
const NONE: &str = "-";

/// One cloud of a dataset: the pristine reference (`kind == None`, level 0)
/// or one of its distorted versions.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub source_id: String,
    pub kind: Option<DistortionKind>,
    pub level: u8,
    /// Path relative to the manifest's directory; unique within a manifest.
    pub path: String,
    pub pseudo_mos: Option<f64>,
    pub seed: u64,
}

impl ManifestRow {
    pub fn is_pristine(&self) -> bool {
        self.kind.is_none()
    }

    fn kind_label(&self) -> &'static str {
        self.kind.map_or("pristine", |k| k.code())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(MANIFEST_HEADER);
        out.push('\n');
        for r in &self.rows {
            let mos = r.pseudo_mos.map_or_else(|| NONE.to_string(), |m| format!("{m}"));
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.source_id,
                r.kind_label(),
                r.level,
                r.path,
                mos,
                r.seed
            );
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let bad = |m: &str| Error::Parse { line: line_no, message: m.to_string() };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 6 {
                return Err(bad("expected 6 tab-separated fields"));
            }
            let kind = match fields[1] {
                "pristine" => None,
                k => Some(k.parse::<DistortionKind>().map_err(|e| bad(&e.to_string()))?),
            };
            let level: u8 = fields[2].parse().map_err(|_| bad("invalid level"))?;
            if kind.is_none() != (level == 0) || level > 5 {
                return Err(bad("level must be 0 for pristine rows and 1..=5 otherwise"));
            }
            let pseudo_mos = match fields[4] {
                NONE | "" => None,
                v => Some(v.parse::<f64>().map_err(|_| bad("invalid pseudo_mos"))?),
            };
            let seed = fields[5].parse().map_err(|_| bad("invalid seed"))?;
            if !seen.insert(fields[3].to_string()) {
                return Err(bad("duplicate path"));
            }
            rows.push(ManifestRow {
                source_id: fields[0].to_string(),
                kind,
                level,
                path: fields[3].to_string(),
                pseudo_mos,
                seed,
            });
        }
        Ok(Self { rows })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn source_ids(&self) -> Vec<String> {
        let ids: BTreeSet<&str> = self.rows.iter().map(|r| r.source_id.as_str()).collect();
        ids.into_iter().map(str::to_string).collect()
    }

    pub fn pristine_of(&self, source_id: &str) -> Option<&ManifestRow> {
        self.rows.iter().find(|r| r.source_id == source_id && r.is_pristine())
    }

    pub fn row(&self, path: &str) -> Option<&ManifestRow> {
        self.rows.iter().find(|r| r.path == path)
    }
}

/// A ranked comparison between two versions of one source cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    /// Manifest path of the first cloud.
    pub a: String,
    pub b: String,
    /// Target probability that `a` has better quality than `b`.
    pub target: f64,
    pub source_id: String,
    pub kind: DistortionKind,
}

impl PairSample {
    /// The same comparison with members swapped.
    pub fn swapped(&self) -> Self {
        Self {
            a: self.b.clone(),
            b: self.a.clone(),
            target: 1.0 - self.target,
            source_id: self.source_id.clone(),
            kind: self.kind,
        }
    }
}

pub fn pairs_to_tsv(pairs: &[PairSample], header_comment: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(c) = header_comment {
        let _ = writeln!(out, "# {c}");
    }
    out.push_str(PAIRS_HEADER);
    out.push('\n');
    for p in pairs {
        let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", p.a, p.b, p.target, p.source_id, p.kind);
    }
    out
}

pub fn parse_pairs(text: &str) -> Result<Vec<PairSample>> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let bad = |m: &str| Error::Parse { line: i + 1, message: m.to_string() };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad("expected 5 tab-separated fields"));
        }
        let target: f64 = f[2].parse().map_err(|_| bad("invalid target"))?;
        if !(0.0..=1.0).contains(&target) {
            return Err(bad("target outside [0, 1]"));
        }
        pairs.push(PairSample {
            a: f[0].to_string(),
            b: f[1].to_string(),
            target,
            source_id: f[3].to_string(),
            kind: f[4].parse().map_err(|e: Error| bad(&e.to_string()))?,
        });
    }
    Ok(pairs)
}

/// Options for dataset generation.
#[derive(Debug, Clone, Copy, Default)]
pub struct GenOptions {
    pub seed: u64,
    pub impulse: ImpulseMode,
}

/// All 35 distorted versions of one already-normalized source, with their specs.
pub fn distort_all(source_id: &str, pristine: &PointCloud, opts: GenOptions) -> Result<Vec<(DistortionSpec, PointCloud)>> {
    let lr = geometry::ref_edge_length(pristine)?;
    let mut out = Vec::with_capacity(35);
    for kind in DistortionKind::ALL {
        for level in Level::ALL {
            let spec = DistortionSpec {
                kind,
                level,
                seed: seed::derive(opts.seed, &[seed::tag(source_id), kind as u64, level.get() as u64]),
            };
            let cloud = distortion::apply(pristine, lr, &spec, opts.impulse)?;
            out.push((spec, cloud));
        }
    }
    Ok(out)
}

fn pristine_path(source_id: &str) -> String {
    format!("{source_id}/pristine.ply")
}

fn distorted_path(source_id: &str, spec: &DistortionSpec) -> String {
    format!("{source_id}/{}_{}.ply", spec.kind, spec.level.get())
}

/// Builds the ranked-pair dataset under `out_dir`: each source is normalized to
/// the unit cube, written as the pristine cloud, and distorted by every kind
/// at every level. Returns the manifest (also written to `out_dir/manifest.tsv`)
/// and all 105 pairs per source.
pub fn build_prld(sources: &[(String, PointCloud)], out_dir: &Path, opts: GenOptions) -> Result<(Manifest, Vec<PairSample>)> {
    let mut ids = BTreeSet::new();
    for (id, _) in sources {
        if id.is_empty() || id.contains(['\t', '/', '\\']) || !ids.insert(id.as_str()) {
            return Err(Error::InvalidArgument(format!("invalid or duplicate source id {id:?}")));
        }
    }
    let per_source: Vec<Result<Vec<ManifestRow>>> = sources
        .par_iter()
        .map(|(id, cloud)| {
            build_source(id, cloud, out_dir, opts).map_err(|e| Error::Source {
                source_id: id.clone(),
                inner: Box::new(e),
            })
        })
        .collect();
    let mut manifest = Manifest::default();
    for rows in per_source {
        manifest.rows.extend(rows?);
    }
    manifest.save(&out_dir.join("manifest.tsv"))?;
    let pairs = prld_pairs(&manifest);
    Ok((manifest, pairs))
}

fn build_source(id: &str, cloud: &PointCloud, out_dir: &Path, opts: GenOptions) -> Result<Vec<ManifestRow>> {
    cloud.require_len(2)?;
    let (pristine, _) = normalize_unit_cube(&cloud.clone().without_normals())?;
    let dir = out_dir.join(id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut rows = Vec::with_capacity(36);
    let path = pristine_path(id);
    save_cloud(out_dir.join(&path), &pristine, CloudFormat::PlyAscii)?;
    rows.push(ManifestRow {
        source_id: id.to_string(),
        kind: None,
        level: 0,
        path,
        pseudo_mos: None,
        seed: opts.seed,
    });
    for (spec, distorted) in distort_all(id, &pristine, opts)? {
        let path = distorted_path(id, &spec);
        save_cloud(out_dir.join(&path), &distorted, CloudFormat::PlyAscii)?;
        rows.push(ManifestRow {
            source_id: id.to_string(),
            kind: Some(spec.kind),
            level: spec.level.get(),
            path,
            pseudo_mos: None,
            seed: spec.seed,
        });
    }
    Ok(rows)
}

/// All unordered level pairs within each (source, kind) over {pristine, 1..5},
/// with the less distorted cloud first and target 1.
pub fn prld_pairs(manifest: &Manifest) -> Vec<PairSample> {
    let mut pairs = Vec::new();
    for source in manifest.source_ids() {
        let Some(pristine) = manifest.pristine_of(&source) else {
            continue;
        };
        for kind in DistortionKind::ALL {
            let mut ladder: Vec<&ManifestRow> = vec![pristine];
            let mut levels: Vec<&ManifestRow> = manifest
                .rows
                .iter()
                .filter(|r| r.source_id == source && r.kind == Some(kind))
                .collect();
            levels.sort_by_key(|r| r.level);
            ladder.extend(levels);
            for i in 0..ladder.len() {
                for j in i + 1..ladder.len() {
                    pairs.push(PairSample {
                        a: ladder[i].path.clone(),
                        b: ladder[j].path.clone(),
                        target: 1.0,
                        source_id: source.clone(),
                        kind,
                    });
                }
            }
        }
    }
    pairs
}

/// A row that could not be scored.
#[derive(Debug)]
pub struct RowError {
    pub path: String,
    pub error: Error,
}

/// Scores every distorted row with the pseudo-MOS (mean plane-to-plane angular
/// similarity against its pristine source). Rows that fail are left unscored
/// and reported.
pub fn build_pcgd_pmos(manifest: &Manifest, root: &Path, normal_k: usize) -> (Manifest, Vec<RowError>) {
    let by_source: BTreeMap<&str, &ManifestRow> = manifest
        .rows
        .iter()
        .filter(|r| r.is_pristine())
        .map(|r| (r.source_id.as_str(), r))
        .collect();
    let mut references: BTreeMap<&str, Result<PointCloud>> = BTreeMap::new();
    for (id, row) in &by_source {
        let r = load_cloud_auto(root.join(&row.path))
            .and_then(|pc| Ok(geometry::estimate_normals(&pc, normal_k)?.cloud));
        references.insert(id, r);
    }
    let scored: Vec<Result<Option<f64>>> = manifest
        .rows
        .par_iter()
        .map(|row| {
            if row.is_pristine() {
                return Ok(None);
            }
            let reference = match references.get(row.source_id.as_str()) {
                Some(Ok(r)) => r,
                Some(Err(e)) => return Err(Error::InvalidArgument(format!("reference unusable: {e}"))),
                None => return Err(Error::InvalidArgument(format!("no pristine row for {}", row.source_id))),
            };
            let degraded = load_cloud_auto(root.join(&row.path))?;
            let degraded = geometry::estimate_normals(&degraded, normal_k)?.cloud;
            Ok(Some(metrics::pseudo_mos_with_normals(reference, &degraded)?))
        })
        .collect();
    let mut out = manifest.clone();
    let mut errors = Vec::new();
    for (row, score) in out.rows.iter_mut().zip(scored) {
        match score {
            Ok(s) => row.pseudo_mos = s.or(row.pseudo_mos),
            Err(error) => errors.push(RowError {
                path: row.path.clone(),
                error,
            }),
        }
    }
    (out, errors)
}

/// Splits source ids into (train, test) sets: shuffled with `seed`, with
/// `round(fraction * count)` sources in the training set.
pub fn split_sources(ids: &[String], train_fraction: f64, seed_value: u64) -> (Vec<String>, Vec<String>) {
    let mut sorted: Vec<String> = ids.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let mut rng = seed::rng(seed_value);
    sorted.shuffle(&mut rng);
    let n_train = ((sorted.len() as f64) * train_fraction).round() as usize;
    let test = sorted.split_off(n_train.min(sorted.len()));
    let (mut train, mut test) = (sorted, test);
    train.sort();
    test.sort();
    (train, test)
}

/// Keeps the pairs whose source is in `sources`.
pub fn pairs_for_sources(pairs: &[PairSample], sources: &[String]) -> Vec<PairSample> {
    let set: BTreeSet<&str> = sources.iter().map(String::as_str).collect();
    pairs.iter().filter(|p| set.contains(p.source_id.as_str())).cloned().collect()
}

/// Resolves a manifest path against the manifest's directory.
pub fn resolve(root: &Path, path: &str) -> PathBuf {
    root.join(path)
}
