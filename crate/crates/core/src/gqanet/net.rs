use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::patch::{Patch, PatchSet};
use crate::error::{Error, Result};
use crate::nn::{maxpool_backward_into, maxpool_segments, relu_backward, relu_inplace, sigmoid, Dense, ModelParams, BLOCK_WIDTHS};

/// Network-level switches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NetOptions {
    /// Replace every patch weight by the constant 1.
    pub equal_weights: bool,
}

/// Per-patch quality and weight, both sigmoid outputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchScore {
    pub s: f64,
    pub w: f64,
}

/// Weighted mean `sum(w s) / sum(w)`, summed in patch order.
pub fn aggregate(scores: &[PatchScore]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for p in scores {
        num += p.w * p.s;
        den += p.w;
    }
    num / den
}

/// Stacks the patches' relative points into one `(N n) x 3` matrix scaled by `scale`.
pub fn patch_input(patches: &[Patch], scale: f64) -> Result<(Array2<f64>, usize)> {
    let n = patches.first().map_or(0, |p| p.rel_points.len());
    if n == 0 {
        return Err(Error::Shape("no patch points".into()));
    }
    let mut x = Array2::zeros((patches.len() * n, 3));
    for (i, p) in patches.iter().enumerate() {
        if p.rel_points.len() != n {
            return Err(Error::Shape(format!("patch {i} has {} points, expected {n}", p.rel_points.len())));
        }
        for (j, r) in p.rel_points.iter().enumerate() {
            let mut row = x.row_mut(i * n + j);
            row[0] = r.x * scale;
            row[1] = r.y * scale;
            row[2] = r.z * scale;
        }
    }
    Ok((x, n))
}

#[derive(Debug, Clone)]
struct HeadCache {
    /// Input to each layer (features, then post-ReLU hidden activations).
    inputs: Vec<Array2<f64>>,
    out: Array1<f64>,
}

/// Activations retained from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct Forward {
    pub points_per_patch: usize,
    input: Array2<f64>,
    /// Post-ReLU output of each evaluated block.
    acts: Vec<Array2<f64>>,
    /// Pooling argmax for each evaluated block (empty for unselected blocks).
    argmax: Vec<Vec<usize>>,
    /// `N x F` concatenated pooled features.
    pub features: Array2<f64>,
    head_s: HeadCache,
    head_w: Option<HeadCache>,
    pub scores: Vec<PatchScore>,
    /// Overall quality index.
    pub score: f64,
}

/// Which smooth piece of the network a forward pass evaluated: every ReLU's
/// on/off state and every pooling argmax.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationPattern {
    pub active: Vec<bool>,
    pub argmax: Vec<usize>,
}

impl Forward {
    pub fn activation_pattern(&self) -> ActivationPattern {
        let heads = std::iter::once(&self.head_s).chain(self.head_w.as_ref());
        let head_acts = heads.flat_map(|h| h.inputs[1..].iter());
        let active = self.acts.iter().chain(head_acts).flat_map(|a| a.iter().map(|v| *v > 0.0)).collect();
        let argmax = self.argmax.iter().flatten().copied().collect();
        ActivationPattern { active, argmax }
    }
}

fn head_forward(layers: &[Dense], features: &Array2<f64>) -> Result<HeadCache> {
    let mut inputs = vec![features.clone()];
    let mut h = features.clone();
    for (j, l) in layers.iter().enumerate() {
        h = l.forward(h.view())?;
        if j + 1 < layers.len() {
            relu_inplace(&mut h);
            inputs.push(h.clone());
        }
    }
    let out = h.column(0).mapv(sigmoid);
    Ok(HeadCache { inputs, out })
}

/// Gradient of the head output logits flows back; returns gradient w.r.t. features.
fn head_backward(layers: &[Dense], cache: &HeadCache, d_logits: Array1<f64>, grads: &mut [Dense]) -> Array2<f64> {
    let mut d = d_logits.insert_axis(Axis(1));
    for j in (0..layers.len()).rev() {
        let x = &cache.inputs[j];
        d = layers[j].backward(x.view(), d.view(), &mut grads[j]);
        if j > 0 {
            relu_backward(x.view(), &mut d);
        }
    }
    d
}

/// Forward pass over stacked patches (`input` rows grouped by `n`).
pub fn forward(params: &ModelParams, input: Array2<f64>, n: usize, opts: NetOptions) -> Result<Forward> {
    if input.ncols() != 3 || n == 0 || input.nrows() == 0 || input.nrows() % n != 0 {
        return Err(Error::Shape(format!("input {:?} is not a stack of {n}-point patches", input.dim())));
    }
    let subset = params.subset;
    let depth = subset.depth();
    let mut acts: Vec<Array2<f64>> = Vec::with_capacity(depth);
    let mut argmax = Vec::with_capacity(depth);
    let mut pooled = Vec::new();
    for b in 0..depth {
        let x = if b == 0 { input.view() } else { acts[b - 1].view() };
        let mut a = params.blocks[b].forward(x)?;
        relu_inplace(&mut a);
        if subset.contains(b) {
            let (p, arg) = maxpool_segments(a.view(), n)?;
            pooled.push(p);
            argmax.push(arg);
        } else {
            argmax.push(Vec::new());
        }
        acts.push(a);
    }
    let views: Vec<ArrayView2<f64>> = pooled.iter().map(|p| p.view()).collect();
    let features = ndarray::concatenate(Axis(1), &views).map_err(|e| Error::Shape(e.to_string()))?;

    let head_s = head_forward(&params.head_s, &features)?;
    let head_w = if opts.equal_weights {
        None
    } else {
        Some(head_forward(&params.head_w, &features)?)
    };
    let scores: Vec<PatchScore> = (0..features.nrows())
        .map(|i| PatchScore {
            s: head_s.out[i],
            w: head_w.as_ref().map_or(1.0, |h| h.out[i]),
        })
        .collect();
    let score = aggregate(&scores);
    Ok(Forward {
        points_per_patch: n,
        input,
        acts,
        argmax,
        features,
        head_s,
        head_w,
        scores,
        score,
    })
}

/// Accumulates `d_score * dS/dtheta` into `grads`.
pub fn backward(params: &ModelParams, fwd: &Forward, d_score: f64, grads: &mut ModelParams) {
    let count = fwd.scores.len();
    let total_w: f64 = fwd.scores.iter().map(|p| p.w).sum();
    let d_s: Array1<f64> = fwd
        .scores
        .iter()
        .map(|p| d_score * p.w / total_w * p.s * (1.0 - p.s))
        .collect();
    let mut d_feat = head_backward(&params.head_s, &fwd.head_s, d_s, &mut grads.head_s);
    if let Some(hw) = &fwd.head_w {
        let d_w: Array1<f64> = fwd
            .scores
            .iter()
            .map(|p| d_score * (p.s - fwd.score) / total_w * p.w * (1.0 - p.w))
            .collect();
        d_feat += &head_backward(&params.head_w, hw, d_w, &mut grads.head_w);
    }

    let subset = params.subset;
    let depth = fwd.acts.len();
    let mut offsets = Vec::with_capacity(4);
    let mut off = 0;
    for b in 0..4 {
        offsets.push(off);
        if subset.contains(b) {
            off += BLOCK_WIDTHS[b];
        }
    }
    debug_assert_eq!(off, d_feat.ncols());
    debug_assert_eq!(count, d_feat.nrows());

    let mut carry: Option<Array2<f64>> = None;
    for b in (0..depth).rev() {
        let a = &fwd.acts[b];
        let mut d = carry.take().unwrap_or_else(|| Array2::zeros(a.dim()));
        if subset.contains(b) {
            let cols = s![.., offsets[b]..offsets[b] + BLOCK_WIDTHS[b]];
            maxpool_backward_into(d_feat.slice(cols), &fwd.argmax[b], &mut d);
        }
        relu_backward(a.view(), &mut d);
        if b == 0 {
            params.blocks[0].accumulate(fwd.input.view(), d.view(), &mut grads.blocks[0]);
        } else {
            carry = Some(params.blocks[b].backward(fwd.acts[b - 1].view(), d.view(), &mut grads.blocks[b]));
        }
    }
}

/// Concatenated pooled block features of one patch's (already scaled) points.
pub fn extract_features(params: &ModelParams, points: ArrayView2<f64>) -> Result<Array1<f64>> {
    let n = points.nrows();
    let f = forward(params, points.to_owned(), n, NetOptions::default())?;
    Ok(f.features.row(0).to_owned())
}

/// Overall quality index of a patch set and the per-patch scores.
pub fn quality_index(params: &ModelParams, set: &PatchSet, opts: NetOptions) -> Result<(f64, Vec<PatchScore>)> {
    let (x, n) = patch_input(&set.patches, set.scale)?;
    let f = forward(params, x, n, opts)?;
    Ok((f.score, f.scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::nn::{check_gradient, BlockSubset, GradCheck, FEATURE_DIM};
    use crate::seed;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn random_input(rows: usize, seed: u64) -> Array2<f64> {
        let mut rng = seed::rng(seed);
        Array2::from_shape_simple_fn((rows, 3), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn feature_length_and_zero_params() {
        let p = ModelParams::init(BlockSubset::ALL, 1);
        let f = extract_features(&p, random_input(16, 2).view()).unwrap();
        assert_eq!(f.len(), FEATURE_DIM);
        let z = ModelParams::zeros(BlockSubset::ALL);
        assert!(extract_features(&z, random_input(16, 2).view()).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_point_patch_pools_to_its_activations() {
        let p = ModelParams::init(BlockSubset::ALL, 3);
        let x = random_input(1, 4);
        let f = extract_features(&p, x.view()).unwrap();
        let mut h = x.clone();
        let mut expect = Vec::new();
        for b in &p.blocks {
            h = b.forward(h.view()).unwrap();
            relu_inplace(&mut h);
            expect.extend(h.row(0).iter().copied());
        }
        assert_eq!(f.to_vec(), expect);
    }

    #[test]
    fn aggregate_examples() {
        let s = [PatchScore { s: 0.2, w: 0.75 }, PatchScore { s: 0.8, w: 0.25 }];
        assert!((aggregate(&s) - 0.35).abs() < 1e-15);
        assert!((aggregate(&s[..1]) - 0.2).abs() < 1e-15);
        let eq = [PatchScore { s: 0.1, w: 0.4 }, PatchScore { s: 0.5, w: 0.4 }, PatchScore { s: 0.6, w: 0.4 }];
        assert!((aggregate(&eq) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn equal_weights_gives_plain_mean() {
        let p = ModelParams::init(BlockSubset::ALL, 5);
        let f = forward(&p, random_input(5 * 8, 6), 8, NetOptions { equal_weights: true }).unwrap();
        let mean = f.scores.iter().map(|s| s.s).sum::<f64>() / 5.0;
        assert!(f.scores.iter().all(|s| s.w == 1.0));
        assert_eq!(f.score, mean);
    }

    #[test]
    fn single_patch_score_is_its_quality() {
        let p = ModelParams::init(BlockSubset::ALL, 7);
        let f = forward(&p, random_input(8, 8), 8, NetOptions::default()).unwrap();
        assert_eq!(f.score, f.scores[0].s);
    }

    #[test]
    fn block_subset_changes_feature_width() {
        let p = ModelParams::init("2,3".parse().unwrap(), 1);
        let f = forward(&p, random_input(24, 1), 8, NetOptions::default()).unwrap();
        assert_eq!(f.features.ncols(), 128 + 256);
        assert_eq!(f.acts.len(), 3);
    }

    fn loss_of(p: &ModelParams, x: &Array2<f64>, n: usize, opts: NetOptions) -> f64 {
        let s = forward(p, x.clone(), n, opts).unwrap().score;
        s * s
    }

    fn gradient_check(p: &ModelParams, opts: NetOptions, seed: u64) -> GradCheck {
        let (patches, n) = (4, 16);
        let x = random_input(patches * n, seed + 100);
        let f = forward(p, x.clone(), n, opts).unwrap();
        let mut g = p.zeros_like();
        backward(p, &f, 2.0 * f.score, &mut g);
        check_gradient(p, &g, |q| loss_of(q, &x, n, opts), 12, 1e-5, seed)
    }

    #[test]
    fn full_network_gradient_matches_finite_differences() {
        for seed in 0..3 {
            let c = gradient_check(&ModelParams::init(BlockSubset::ALL, seed), NetOptions::default(), seed);
            assert!(c.global < 1e-4, "seed {seed}: {c:?}");
        }
        let p = ModelParams::init("1,3".parse().unwrap(), 9);
        let c = gradient_check(&p, NetOptions { equal_weights: true }, 9);
        assert!(c.global < 1e-4, "subset: {c:?}");
    }

    #[test]
    fn every_layer_gradient_matches_when_patch_scores_spread() {
        // Larger output weights spread the patch scores, so the weight head's
        // gradients are far above finite-difference roundoff.
        for seed in 0..3 {
            let mut p = ModelParams::init(BlockSubset::ALL, seed);
            p.head_s[3].weight *= 40.0;
            p.head_w[3].weight *= 40.0;
            let c = gradient_check(&p, NetOptions::default(), seed);
            for (name, e) in &c.per_layer {
                assert!(*e < 1e-4, "seed {seed} layer {name}: {e}");
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = ModelParams::init(BlockSubset::ALL, 1);
        let f = forward(&p, random_input(32, 1), 8, NetOptions::default()).unwrap();
        let mut g = p.zeros_like();
        backward(&p, &f, 0.0, &mut g);
        assert!(g.flat_values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn patch_input_scales_and_checks_sizes() {
        let mk = |n| Patch { center: Vec3::zeros(), rel_points: vec![Vec3::new(1.0, 2.0, 3.0); n], gathered: n, empty: false };
        let (x, n) = patch_input(&[mk(2), mk(2)], 0.5).unwrap();
        assert_eq!(n, 2);
        assert_eq!(x.row(3).to_vec(), vec![0.5, 1.0, 1.5]);
        assert!(patch_input(&[mk(2), mk(3)], 1.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn intra_patch_shuffle_leaves_features_unchanged(seed in 0u64..10_000) {
            let p = ModelParams::init(BlockSubset::ALL, seed % 7);
            let x = random_input(12, seed);
            let mut order: Vec<usize> = (0..12).collect();
            order.shuffle(&mut seed::rng(seed ^ 0x55));
            let shuffled = x.select(Axis(0), &order);
            let a = extract_features(&p, x.view()).unwrap();
            let b = extract_features(&p, shuffled.view()).unwrap();
            prop_assert!(a.iter().zip(b.iter()).all(|(u, v)| u.to_bits() == v.to_bits()));
        }

        #[test]
        fn score_is_bounded_and_patch_order_invariant(seed in 0u64..10_000, patches in 1usize..6) {
            let p = ModelParams::init(BlockSubset::ALL, seed % 5);
            let n = 6;
            let x = random_input(patches * n, seed);
            let f = forward(&p, x.clone(), n, NetOptions::default()).unwrap();
            prop_assert!(f.score > 0.0 && f.score < 1.0);
            let lo = f.scores.iter().map(|s| s.s).fold(f64::INFINITY, f64::min);
            let hi = f.scores.iter().map(|s| s.s).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= f.score + 1e-15 && f.score <= hi + 1e-15);

            let mut order: Vec<usize> = (0..patches).collect();
            order.shuffle(&mut seed::rng(seed + 1));
            let rows: Vec<usize> = order.iter().flat_map(|&i| i * n..(i + 1) * n).collect();
            let g = forward(&p, x.select(Axis(0), &rows), n, NetOptions::default()).unwrap();
            prop_assert!((f.score - g.score).abs() < 1e-12);
        }
    }
}
