//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Run with `cargo test -p prl-gqa-cli --test acceptance`. A subset can be
//! selected by listing criterion numbers, e.g. `-- 1 5 9`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::Path;
use std::time::Instant;

use prl_gqa::dataset::{build_prld, pairs_for_sources, prld_pairs, split_sources, GenOptions, Manifest, ManifestRow};
use prl_gqa::distortion::{self, DistortionKind, DistortionSpec, ImpulseMode, Level};
use prl_gqa::geometry::{normalize_unit_cube, ref_edge_length, PointCloud};
use prl_gqa::gqanet::{
    extract_features, forward, patch_input, quality_index, sample_patches, IndexedCloud, NetOptions, PatchConfig,
};
use prl_gqa::metrics::{self, MetricKind, MetricOptions, Orientation};
use prl_gqa::nn::{check_gradient_smooth, BlockSubset, ModelParams};
use prl_gqa::seed;
use prl_gqa::stats::{self, LevelCell};
use prl_gqa::synth::{sample_surface, synthetic_sources, Shape};
use prl_gqa::train::{
    evaluate_pairs, pair_patch_sets, pair_step, rank_loss, rank_loss_from_difference, rank_probability, train_rank,
    CloudStore, TrainConfig,
};
use rand::seq::SliceRandom;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

const PO2PO_MSE: &str = "po2po_mse";

/// Distorted versions of five 5000-point synthetic clouds for the given kinds,
/// scored with po2po_mse: (source, kind, level, value).
fn po2po_ladders(kinds: &[DistortionKind]) -> Vec<(String, DistortionKind, u8, f64)> {
    let kind: MetricKind = PO2PO_MSE.parse().unwrap();
    let mut out = Vec::new();
    for src in synthetic_sources(5, 5000, 21).unwrap() {
        let lr = ref_edge_length(&src.cloud).unwrap();
        for &k in kinds {
            for level in Level::ALL {
                let spec = DistortionSpec {
                    kind: k,
                    level,
                    seed: seed::derive(3, &[seed::tag(&src.id), k as u64, level.get() as u64]),
                };
                let d = distortion::apply(&src.cloud, lr, &spec, ImpulseMode::default()).unwrap();
                let v = metrics::compute(kind, &src.cloud, &d, MetricOptions::default()).unwrap().value;
                out.push((src.id.clone(), k, level.get(), v));
            }
        }
    }
    out
}

fn criterion_1() -> Outcome {
    let kinds = [DistortionKind::Gn, DistortionKind::Un, DistortionKind::En, DistortionKind::Gs];
    let rows = po2po_ladders(&kinds);
    let mut cells: BTreeMap<(String, DistortionKind), LevelCell> = BTreeMap::new();
    for (src, k, level, v) in rows {
        let c = cells.entry((src.clone(), k)).or_insert_with(|| LevelCell {
            content: src,
            distortion: k.code().into(),
            levels: vec![],
            scores: vec![],
        });
        c.levels.push(f64::from(level));
        c.scores.push(v);
    }
    let cells: Vec<LevelCell> = cells.into_values().collect();
    let l = stats::l_test(&cells, Orientation::LowerBetter).unwrap();
    outcome(l >= 0.99, format!("po2po_mse L_Test = {l:.6} over {} cells (need >= 0.99)", cells.len()))
}

fn criterion_2() -> Outcome {
    let noise: Vec<DistortionKind> = DistortionKind::ALL.into_iter().filter(|k| k.is_noise()).collect();
    let rows = po2po_ladders(&noise);
    let mut ladders: BTreeMap<(String, DistortionKind), Vec<(u8, f64)>> = BTreeMap::new();
    for (src, k, level, v) in rows {
        ladders.entry((src, k)).or_default().push((level, v));
    }
    let mut decisions = Vec::new();
    for ladder in ladders.values_mut() {
        ladder.push((0, 0.0));
        ladder.sort_by_key(|x| x.0);
        for i in 0..ladder.len() {
            for j in i + 1..ladder.len() {
                // Less distorted member first: it must have the smaller error.
                decisions.push((ladder[i].1 < ladder[j].1, true));
            }
        }
    }
    let acc = stats::ranking_accuracy(&decisions).unwrap();
    outcome(
        acc == 1.0,
        format!("po2po_mse accuracy = {:.4}% over {} noise pairs (need 100%)", 100.0 * acc, decisions.len()),
    )
}

fn criterion_3() -> Outcome {
    let base = sample_surface(&Shape::Sphere, 1500, 3).without_normals();
    let (pristine, _) = normalize_unit_cube(&base).unwrap();
    let lr = ref_edge_length(&pristine).unwrap().get();
    let noisy = distortion::gaussian_noise(&pristine, 3.0 * lr, 4).unwrap();
    let (a, b) = (IndexedCloud::new(&pristine).unwrap(), IndexedCloud::new(&noisy).unwrap());
    let cfg = PatchConfig::new(4, 16);
    let mut worst: f64 = 0.0;
    let mut redrawn = 0;
    for s in 0..20u64 {
        let (pa, pb) = pair_patch_sets("a", &a, "b", &b, &cfg, s).unwrap();
        let (xa, n) = patch_input(&pa.patches, pa.scale).unwrap();
        let (xb, _) = patch_input(&pb.patches, pb.scale).unwrap();
        let params = ModelParams::init(BlockSubset::ALL, s);
        let target = seed::rng(s).random_range(0.0..=1.0);
        let mut g = params.zeros_like();
        pair_step(&params, &pa, &pb, target, NetOptions::default(), 1.0, &mut g).unwrap();
        let eval = |q: &ModelParams| {
            let fa = forward(q, xa.clone(), n, NetOptions::default()).unwrap();
            let fb = forward(q, xb.clone(), n, NetOptions::default()).unwrap();
            let loss = rank_loss_from_difference(fa.score - fb.score, target).0;
            (loss, (fa.activation_pattern(), fb.activation_pattern()))
        };
        let c = check_gradient_smooth(&params, &g, eval, 6, 1e-5, s);
        worst = worst.max(c.global);
        redrawn += c.redrawn;
    }
    outcome(
        worst < 1e-4,
        format!(
            "max relative gradient error over 20 seeds = {worst:.3e} (need < 1e-4); {redrawn} of 1440 probes redrawn for crossing a ReLU/pooling kink"
        ),
    )
}

fn criterion_4() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (n_train, n_test) = (8, 4);
    let sources: Vec<(String, PointCloud)> = synthetic_sources(n_train + n_test, 2000, 1)
        .unwrap()
        .into_iter()
        .map(|s| (s.id, s.cloud))
        .collect();
    let (manifest, pairs) = build_prld(&sources, dir.path(), GenOptions { seed: 3, ..Default::default() }).unwrap();
    let ids = |r: std::ops::Range<usize>| sources[r].iter().map(|s| s.0.clone()).collect::<Vec<_>>();
    let (train_ids, test_ids) = (ids(0..n_train), ids(n_train..n_train + n_test));
    let trained_kinds = [DistortionKind::Gn, DistortionKind::Un];
    let train_pairs: Vec<_> = pairs_for_sources(&pairs, &train_ids)
        .into_iter()
        .filter(|p| trained_kinds.contains(&p.kind))
        .collect();
    let test_pairs = pairs_for_sources(&pairs, &test_ids);
    let mut store = CloudStore::new(dir.path());
    store.load(manifest.rows.iter().map(|r| r.path.as_str())).unwrap();
    let cfg = TrainConfig {
        patches: PatchConfig::new(16, 64),
        lr: 1e-4,
        epochs: 20,
        seed: 7,
        ..TrainConfig::default()
    };
    let out = train_rank(&train_pairs, &store, &cfg, None).unwrap();
    let eval_cfg = PatchConfig::new(32, 64);
    let mut acc = BTreeMap::new();
    for kind in [DistortionKind::Gn, DistortionKind::Un, DistortionKind::Rs] {
        let fwd: Vec<_> = test_pairs.iter().filter(|p| p.kind == kind).cloned().collect();
        let rev: Vec<_> = fwd.iter().map(|p| p.swapped()).collect();
        let d1 = evaluate_pairs(&out.params, &fwd, &store, &eval_cfg, cfg.net_options(), 5).unwrap();
        let d2 = evaluate_pairs(&out.params, &rev, &store, &eval_cfg, cfg.net_options(), 5).unwrap();
        let decisions: Vec<(bool, bool)> = d1
            .iter()
            .zip(&fwd)
            .chain(d2.iter().zip(&rev))
            .map(|(d, p)| (d.a_better(), p.target > 0.5))
            .collect();
        acc.insert(kind.code(), stats::ranking_accuracy(&decisions).unwrap());
    }
    let (gn, un, rs) = (acc["GN"], acc["UN"], acc["RS"]);
    outcome(
        gn >= 0.85 && un >= 0.85,
        format!(
            "held-out accuracy GN = {:.2}%, UN = {:.2}% (need >= 85%); RS = {:.2}% (reported only); final loss {:.4}",
            100.0 * gn,
            100.0 * un,
            100.0 * rs,
            out.log.last().map_or(f64::NAN, |l| l.mean_loss)
        ),
    )
}

fn criterion_5() -> Outcome {
    let p0 = rank_probability(0.0, 0.0);
    let p3 = rank_probability(3f64.ln(), 0.0);
    let l = rank_loss(0.5, 1.0);
    let errs = [(p0 - 0.5).abs(), (p3 - 0.75).abs(), (l - 2f64.ln()).abs()];
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    outcome(
        worst <= 1e-12,
        format!("P(0) = {p0}, P(ln 3) = {p3}, L(1, 0.5) = {l}; max error {worst:.1e} (need <= 1e-12)"),
    )
}

fn rank_oracle(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|a| {
            let below = x.iter().filter(|b| *b < a).count() as f64;
            let equal = x.iter().filter(|b| *b == a).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

fn kendall_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            let p = (x[i] - x[j]) * (y[i] - y[j]);
            s += if p > 0.0 { 1 } else if p < 0.0 { -1 } else { 0 };
        }
    }
    2.0 * s as f64 / (n * (n - 1)) as f64
}

fn criterion_6() -> Outcome {
    let mut rng = seed::rng(6);
    let (mut srcc_err, mut krcc_err, mut plcc_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut vectors = 0;
    while vectors < 100 {
        let n = rng.random_range(2..=50);
        let levels = rng.random_range(2..=12) as f64;
        let x: Vec<f64> = (0..n).map(|_| (rng.random_range(0.0..1.0) * levels).floor()).collect();
        let y: Vec<f64> = (0..n).map(|_| (rng.random_range(0.0..1.0) * levels).floor()).collect();
        let (rx, ry) = (rank_oracle(&x), rank_oracle(&y));
        let (Ok(s), Ok(p)) = (stats::srcc(&x, &y), stats::plcc(&x, &y)) else {
            continue;
        };
        vectors += 1;
        srcc_err = srcc_err.max((s - pearson_oracle(&rx, &ry)).abs());
        krcc_err = krcc_err.max((stats::krcc(&x, &y).unwrap() - kendall_oracle(&x, &y)).abs());
        let a = rng.random_range(0.1..10.0);
        let b = rng.random_range(-5.0..5.0);
        let xt: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        plcc_err = plcc_err.max((stats::plcc(&xt, &y).unwrap() - p).abs());
    }
    let pass = srcc_err <= 1e-12 && krcc_err <= 1e-12 && plcc_err <= 1e-12;
    outcome(
        pass,
        format!(
            "100 tied vectors: |SRCC - oracle| = {srcc_err:.1e}, |KRCC - oracle| = {krcc_err:.1e}, PLCC affine drift = {plcc_err:.1e} (need <= 1e-12)"
        ),
    )
}

fn synthetic_manifest(n: usize) -> Manifest {
    let mut rows = Vec::new();
    for s in 0..n {
        let id = format!("src{s:03}");
        rows.push(ManifestRow {
            source_id: id.clone(),
            kind: None,
            level: 0,
            path: format!("{id}/pristine.ply"),
            pseudo_mos: None,
            seed: 0,
        });
        for k in DistortionKind::ALL {
            for l in 1..=5u8 {
                rows.push(ManifestRow {
                    source_id: id.clone(),
                    kind: Some(k),
                    level: l,
                    path: format!("{id}/{k}_{l}.ply"),
                    pseudo_mos: None,
                    seed: 0,
                });
            }
        }
    }
    Manifest { rows }
}

fn count_files(dir: &Path, ext: &str) -> usize {
    let mut n = 0;
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            n += count_files(&p, ext);
        } else if p.extension().is_some_and(|x| x == ext) {
            n += 1;
        }
    }
    n
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let k = 2;
    let sources: Vec<(String, PointCloud)> = synthetic_sources(k, 400, 2)
        .unwrap()
        .into_iter()
        .map(|s| (s.id, s.cloud))
        .collect();
    let (manifest, pairs) = build_prld(&sources, dir.path(), GenOptions::default()).unwrap();
    let files = count_files(dir.path(), "ply");
    let distorted = manifest.rows.iter().filter(|r| !r.is_pristine()).count();
    let big = synthetic_manifest(150);
    let big_pairs = prld_pairs(&big);
    let scored = big.rows.iter().filter(|r| !r.is_pristine()).count();
    let (tr, te) = split_sources(&big.source_ids(), 0.8, 0);
    let (ntr, nte) = (pairs_for_sources(&big_pairs, &tr).len(), pairs_for_sources(&big_pairs, &te).len());
    let pass = distorted == 35 * k
        && files == 36 * k
        && pairs.len() == 105 * k
        && big_pairs.len() == 15750
        && scored == 5250
        && ntr == 12600
        && nte == 3150;
    outcome(
        pass,
        format!(
            "K={k}: {distorted} distorted + {} pristine files on disk, {} pairs; 150 sources: {} pairs, {scored} pseudo-MOS rows, split {ntr}/{nte}",
            files - distorted,
            pairs.len(),
            big_pairs.len()
        ),
    )
}

fn criterion_8() -> Outcome {
    let k = MetricOptions::default().normal_k;
    let mut identical_ok = true;
    let mut monotone = 0;
    let mut worst_gap = f64::INFINITY;
    for s in 0..20u64 {
        let shape = Shape::BumpySphere { amp: 0.1, freq: 3.0 };
        let raw = sample_surface(&shape, 10_000, s).without_normals();
        let (pc, _) = normalize_unit_cube(&raw).unwrap();
        identical_ok &= metrics::pseudo_mos(&pc, &pc, k).unwrap() == 1.0;
        let lr = ref_edge_length(&pc).unwrap();
        let scores: Vec<f64> = Level::ALL
            .iter()
            .map(|&level| {
                let noisy = distortion::apply_gaussian_noise(&pc, lr, level, seed::derive(s, &[level.get() as u64])).unwrap();
                metrics::pseudo_mos(&pc, &noisy, k).unwrap()
            })
            .collect();
        let gap = scores.windows(2).map(|w| w[0] - w[1]).fold(f64::INFINITY, f64::min);
        worst_gap = worst_gap.min(gap);
        if gap > 0.0 {
            monotone += 1;
        }
    }
    outcome(
        identical_ok && monotone == 20,
        format!(
            "identical clouds score 1.0: {identical_ok}; strictly decreasing over GN levels in {monotone}/20 seeds (smallest step {worst_gap:.4})"
        ),
    )
}

fn cli(args: &[&str]) -> (i32, String) {
    let mut argv: Vec<OsString> = vec!["prl-gqa".into()];
    argv.extend(args.iter().map(OsString::from));
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = prl_gqa_cli::run(argv, &mut out, &mut err);
    assert_eq!(code, 0, "{args:?}: {}", String::from_utf8_lossy(&err));
    (code, String::from_utf8(out).unwrap())
}

fn gen_and_train(root: &Path) -> (Vec<u8>, Vec<u8>) {
    let p = |s: &str| root.join(s).to_str().unwrap().to_string();
    cli(&["synth", "--count", "2", "--points", "600", "--seed", "5", "--out", &p("src")]);
    cli(&["gen", "--sources", &p("src"), "--out", &p("data"), "--seed", "9"]);
    cli(&["pairs", "--manifest", &p("data/manifest.tsv"), "--train-fraction", "0.5", "--seed", "1"]);
    let (_, model) = cli(&[
        "train",
        "--pairs",
        &p("data/train_pairs.tsv"),
        "--epochs",
        "2",
        "--patches",
        "4",
        "--points",
        "16",
        "--lr",
        "1e-4",
        "--seed",
        "3",
        "--out",
        &p("runs"),
    ]);
    let weights = fs::read(model.trim()).unwrap();
    let manifest = fs::read(root.join("data/manifest.tsv")).unwrap();
    (weights, manifest)
}

fn criterion_9() -> Outcome {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (w1, m1) = gen_and_train(d1.path());
    let (w2, m2) = gen_and_train(d2.path());
    outcome(
        w1 == w2 && m1 == m2,
        format!(
            "weights identical: {} ({} bytes); manifests identical: {}",
            w1 == w2,
            w1.len(),
            m1 == m2
        ),
    )
}

fn criterion_10() -> Outcome {
    let raw = sample_surface(&Shape::Torus { major: 1.0, minor: 0.3 }, 3000, 1).without_normals();
    let (pc, _) = normalize_unit_cube(&raw).unwrap();
    let cloud = IndexedCloud::new(&pc).unwrap();
    let cfg = PatchConfig::new(8, 32);
    let mut features_equal = true;
    let mut worst: f64 = 0.0;
    for s in 0..20u64 {
        let params = ModelParams::init(BlockSubset::ALL, s);
        let set = sample_patches(&cloud, &cfg, s).unwrap();
        let mut rng = seed::rng(s);
        for patch in &set.patches {
            let (x, _) = patch_input(std::slice::from_ref(patch), set.scale).unwrap();
            let mut shuffled = patch.clone();
            shuffled.rel_points.shuffle(&mut rng);
            let (y, _) = patch_input(std::slice::from_ref(&shuffled), set.scale).unwrap();
            features_equal &= extract_features(&params, x.view()).unwrap() == extract_features(&params, y.view()).unwrap();
        }
        let (s0, _) = quality_index(&params, &set, NetOptions::default()).unwrap();
        let mut permuted = set.clone();
        permuted.patches.shuffle(&mut rng);
        let (s1, _) = quality_index(&params, &permuted, NetOptions::default()).unwrap();
        worst = worst.max((s0 - s1).abs());
    }
    outcome(
        features_equal && worst <= 1e-12,
        format!("features bitwise equal under point shuffles: {features_equal}; max |S - S_perm| = {worst:.1e} (need <= 1e-12)"),
    )
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("FR baseline level monotonicity", criterion_1),
        ("FR baseline pairwise accuracy", criterion_2),
        ("gradient correctness", criterion_3),
        ("desk-scale training", criterion_4),
        ("rank probability and loss closed forms", criterion_5),
        ("correlation oracles", criterion_6),
        ("dataset combinatorics", criterion_7),
        ("pseudo-MOS sanity", criterion_8),
        ("determinism", criterion_9),
        ("permutation invariance", criterion_10),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let r = f();
        let verdict = if r.pass { "PASS" } else { "FAIL" };
        println!("{verdict} criterion {id}: {name}: {} [{:.1}s]", r.detail, t.elapsed().as_secs_f64());
        if !r.pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
