//! The evaluation report: pairwise ranking accuracy, level monotonicity and
//! correlation with pseudo-MOS, per distortion kind, for the full-reference
//! metrics and optionally a trained network.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use prl_gqa::dataset::{Manifest, ManifestRow, PairSample};
use prl_gqa::distortion::DistortionKind;
use prl_gqa::geometry::{load_cloud_auto, PointCloud};
use prl_gqa::gqanet::{NetOptions, PatchConfig};
use prl_gqa::metrics::{self, MetricKind, MetricOptions, MetricSet, Orientation};
use prl_gqa::nn::ModelParams;
use prl_gqa::stats::{self, LevelCell};
use prl_gqa::train::{self, CloudStore};
use prl_gqa::{seed, Error, Result};

/// A trained network and how to sample patches for it.
pub struct Model<'a> {
    pub params: &'a ModelParams,
    pub patches: PatchConfig,
    pub opts: NetOptions,
}

pub struct EvalInput<'a> {
    pub manifest: &'a Manifest,
    pub root: &'a Path,
    pub pairs: &'a [PairSample],
    pub metrics: &'a [MetricKind],
    pub normal_k: usize,
    pub model: Option<Model<'a>>,
    pub seed: u64,
}

/// Name of the network row in the report.
pub const MODEL_ROW: &str = "prl_gqa";

/// One scored method: a value per manifest row plus how to read it.
struct Method {
    name: String,
    orientation: Orientation,
    values: BTreeMap<String, f64>,
}

impl Method {
    fn quality(&self, path: &str) -> f64 {
        self.values
            .get(path)
            .map_or(f64::NAN, |v| self.orientation.as_quality(*v))
    }
}

fn metric_values(
    reference: &PointCloud,
    degraded: &PointCloud,
    kinds: &[MetricKind],
    opts: MetricOptions,
    label: &str,
) -> Vec<f64> {
    match MetricSet::compute(reference, degraded, opts) {
        Ok(set) => kinds.iter().map(|k| set.get(*k).map_or(f64::NAN, |r| r.value)).collect(),
        Err(_) => kinds
            .iter()
            .map(|k| match metrics::compute(*k, reference, degraded, opts) {
                Ok(r) => r.value,
                Err(e) => {
                    log::warn!("{k} failed on {label}: {e}");
                    f64::NAN
                }
            })
            .collect(),
    }
}

fn kinds_present(manifest: &Manifest) -> Vec<DistortionKind> {
    DistortionKind::ALL
        .into_iter()
        .filter(|k| manifest.rows.iter().any(|r| r.kind == Some(*k)))
        .collect()
}

fn fmt_value(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.4}"),
        _ => "nan".to_string(),
    }
}

fn accuracy(method: &Method, pairs: &[&PairSample]) -> Option<f64> {
    let decisions: Vec<(bool, bool)> = pairs
        .iter()
        .map(|p| (method.quality(&p.a) > method.quality(&p.b), p.target > 0.5))
        .collect();
    stats::ranking_accuracy(&decisions).ok()
}

fn level_test(method: &Method, rows: &[&ManifestRow]) -> Option<f64> {
    let mut cells: BTreeMap<(&str, DistortionKind), LevelCell> = BTreeMap::new();
    for r in rows {
        let Some(kind) = r.kind else { continue };
        let cell = cells.entry((&r.source_id, kind)).or_insert_with(|| LevelCell {
            content: r.source_id.clone(),
            distortion: kind.code().to_string(),
            levels: Vec::new(),
            scores: Vec::new(),
        });
        cell.levels.push(f64::from(r.level));
        cell.scores.push(method.values.get(&r.path).copied().unwrap_or(f64::NAN));
    }
    let cells: Vec<LevelCell> = cells.into_values().collect();
    match stats::l_test(&cells, method.orientation) {
        Ok(v) => Some(v),
        Err(e) => {
            log::warn!("l_test for {}: {e}", method.name);
            None
        }
    }
}

fn correlations(method: &Method, rows: &[&ManifestRow]) -> [Option<f64>; 3] {
    let (y, q): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter_map(|r| r.pseudo_mos.map(|m| (m, method.quality(&r.path))))
        .unzip();
    [
        stats::plcc(&y, &q).ok(),
        stats::srcc(&y, &q).ok(),
        stats::krcc(&y, &q).ok(),
    ]
}

/// Computes every score and renders the tab-separated report.
pub fn report(input: &EvalInput) -> Result<String> {
    let manifest = input.manifest;
    let opts = MetricOptions { normal_k: input.normal_k };
    let mut methods: Vec<Method> = input
        .metrics
        .iter()
        .map(|k| Method {
            name: k.name().to_string(),
            orientation: k.orientation(),
            values: BTreeMap::new(),
        })
        .collect();

    for source in manifest.source_ids() {
        let pristine_row = manifest
            .pristine_of(&source)
            .ok_or_else(|| Error::InvalidArgument(format!("source {source} has no pristine row")))?;
        let reference = load_cloud_auto(input.root.join(&pristine_row.path))?;
        for row in manifest.rows.iter().filter(|r| r.source_id == source) {
            let degraded = if row.is_pristine() {
                reference.clone()
            } else {
                load_cloud_auto(input.root.join(&row.path))?
            };
            let values = metric_values(&reference, &degraded, input.metrics, opts, &row.path);
            for (m, v) in methods.iter_mut().zip(values) {
                m.values.insert(row.path.clone(), v);
            }
        }
    }

    if let Some(model) = &input.model {
        let mut store = CloudStore::new(input.root);
        store.load(manifest.rows.iter().map(|r| r.path.as_str()))?;
        let mut values = BTreeMap::new();
        for row in &manifest.rows {
            let s = train::predict(
                model.params,
                store.get(&row.path)?,
                &model.patches,
                model.opts,
                seed::derive(input.seed, &[seed::tag(&row.path)]),
            )?;
            values.insert(row.path.clone(), s);
        }
        methods.push(Method {
            name: MODEL_ROW.to_string(),
            orientation: Orientation::HigherBetter,
            values,
        });
    }

    let kinds = kinds_present(manifest);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# sources={} rows={} pairs={} seed={}",
        manifest.source_ids().len(),
        manifest.rows.len(),
        input.pairs.len(),
        input.seed
    );
    let header = |out: &mut String, section: &str, last: &str| {
        let _ = write!(out, "\n[{section}]\nmethod");
        for k in &kinds {
            let _ = write!(out, "\t{k}");
        }
        let _ = writeln!(out, "\t{last}");
    };

    header(&mut out, "ranking_accuracy", "mean");
    for m in &methods {
        let _ = write!(out, "{}", m.name);
        for k in &kinds {
            let ps: Vec<&PairSample> = input.pairs.iter().filter(|p| p.kind == *k).collect();
            let _ = write!(out, "\t{}", fmt_value(accuracy(m, &ps)));
        }
        let all: Vec<&PairSample> = input.pairs.iter().collect();
        let _ = writeln!(out, "\t{}", fmt_value(accuracy(m, &all)));
    }

    header(&mut out, "l_test", "mean");
    for m in &methods {
        let _ = write!(out, "{}", m.name);
        for k in &kinds {
            let rows: Vec<&ManifestRow> = manifest.rows.iter().filter(|r| r.kind == Some(*k)).collect();
            let _ = write!(out, "\t{}", fmt_value(level_test(m, &rows)));
        }
        let rows: Vec<&ManifestRow> = manifest.rows.iter().filter(|r| r.kind.is_some()).collect();
        let _ = writeln!(out, "\t{}", fmt_value(level_test(m, &rows)));
    }

    if manifest.rows.iter().any(|r| r.pseudo_mos.is_some()) {
        for (i, stat) in ["plcc", "srcc", "krcc"].iter().enumerate() {
            header(&mut out, &format!("pseudo_mos_{stat}"), "all");
            for m in &methods {
                let _ = write!(out, "{}", m.name);
                for k in &kinds {
                    let rows: Vec<&ManifestRow> = manifest.rows.iter().filter(|r| r.kind == Some(*k)).collect();
                    let _ = write!(out, "\t{}", fmt_value(correlations(m, &rows)[i]));
                }
                let rows: Vec<&ManifestRow> = manifest.rows.iter().filter(|r| r.kind.is_some()).collect();
                let _ = writeln!(out, "\t{}", fmt_value(correlations(m, &rows)[i]));
            }
        }
    }
    Ok(out)
}
