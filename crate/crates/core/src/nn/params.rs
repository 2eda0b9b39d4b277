use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layer::Dense;
use crate::error::{Error, Result};

/// Output widths of the four shared-MLP blocks.
pub const BLOCK_WIDTHS: [usize; 4] = [64, 128, 256, 512];
/// Hidden widths of both heads; each ends in a single output unit.
pub const HEAD_WIDTHS: [usize; 3] = [512, 256, 64];
/// Length of the concatenated feature with all blocks enabled.
pub const FEATURE_DIM: usize = 960;
pub const INPUT_DIM: usize = 3;

const MAGIC: &[u8; 4] = b"GQAN";
const FORMAT_VERSION: u32 = 1;
const LAYER_COUNT: usize = 4 + 2 * (HEAD_WIDTHS.len() + 1);

/// Which blocks contribute their pooled features to the head input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockSubset(u8);

impl BlockSubset {
    pub const ALL: BlockSubset = BlockSubset(0b1111);

    /// Blocks are numbered 1 to 4.
    pub fn from_blocks(blocks: &[usize]) -> Result<Self> {
        let mut mask = 0u8;
        for &b in blocks {
            if !(1..=4).contains(&b) {
                return Err(Error::InvalidArgument(format!("block {b} is not in 1..=4")));
            }
            mask |= 1 << (b - 1);
        }
        if mask == 0 {
            return Err(Error::InvalidArgument("block subset must not be empty".into()));
        }
        Ok(Self(mask))
    }

    /// Zero-based block index.
    pub fn contains(&self, block: usize) -> bool {
        block < 4 && self.0 & (1 << block) != 0
    }

    pub fn blocks(&self) -> impl Iterator<Item = usize> + '_ {
        (0..4).filter(|&b| self.contains(b))
    }

    /// Number of blocks that must be evaluated (up to the deepest selected one).
    pub fn depth(&self) -> usize {
        8 - self.0.leading_zeros() as usize
    }

    pub fn feature_dim(&self) -> usize {
        self.blocks().map(|b| BLOCK_WIDTHS[b]).sum()
    }

    /// Inverse of `feature_dim`; unique because the widths are distinct powers of two times 64.
    fn from_feature_dim(dim: usize) -> Option<Self> {
        if dim % 64 != 0 || dim == 0 || dim > FEATURE_DIM {
            return None;
        }
        Some(Self((dim / 64) as u8))
    }
}

impl Default for BlockSubset {
    fn default() -> Self {
        Self::ALL
    }
}

impl fmt::Display for BlockSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: Vec<String> = self.blocks().map(|b| (b + 1).to_string()).collect();
        f.write_str(&s.join(","))
    }
}

impl FromStr for BlockSubset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let blocks = s
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| Error::InvalidArgument(format!("invalid block number {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_blocks(&blocks)
    }
}

/// All network parameters: four point-wise blocks and the score and weight heads.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub subset: BlockSubset,
    pub blocks: Vec<Dense>,
    pub head_s: Vec<Dense>,
    pub head_w: Vec<Dense>,
}

fn head_dims(input: usize) -> Vec<(usize, usize)> {
    let mut dims = Vec::new();
    let mut prev = input;
    for &w in HEAD_WIDTHS.iter().chain(std::iter::once(&1)) {
        dims.push((prev, w));
        prev = w;
    }
    dims
}

fn block_dims() -> Vec<(usize, usize)> {
    let mut prev = INPUT_DIM;
    BLOCK_WIDTHS
        .iter()
        .map(|&w| {
            let d = (prev, w);
            prev = w;
            d
        })
        .collect()
}

impl ModelParams {
    /// Seeded fan-in-scaled uniform initialization.
    pub fn init(subset: BlockSubset, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut make = |dims: Vec<(usize, usize)>| -> Vec<Dense> {
            dims.into_iter().map(|(i, o)| Dense::init(i, o, &mut rng)).collect()
        };
        let blocks = make(block_dims());
        let head_s = make(head_dims(subset.feature_dim()));
        let head_w = make(head_dims(subset.feature_dim()));
        Self { subset, blocks, head_s, head_w }
    }

    pub fn zeros(subset: BlockSubset) -> Self {
        let make = |dims: Vec<(usize, usize)>| -> Vec<Dense> {
            dims.into_iter().map(|(i, o)| Dense::zeros(i, o)).collect()
        };
        Self {
            subset,
            blocks: make(block_dims()),
            head_s: make(head_dims(subset.feature_dim())),
            head_w: make(head_dims(subset.feature_dim())),
        }
    }

    /// Zero-valued parameters of identical shape, used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.subset)
    }

    pub fn layer_names() -> Vec<String> {
        let mut names: Vec<String> = (1..=4).map(|i| format!("block{i}")).collect();
        for head in ["head_s", "head_w"] {
            names.extend((1..=HEAD_WIDTHS.len() + 1).map(|i| format!("{head}.{i}")));
        }
        names
    }

    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.blocks.iter().chain(&self.head_s).chain(&self.head_w)
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.blocks.iter_mut().chain(&mut self.head_s).chain(&mut self.head_w)
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(Dense::param_count).sum()
    }

    /// Name of the first layer holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        Self::layer_names()
            .into_iter()
            .zip(self.layers())
            .find(|(_, l)| !l.is_finite())
            .map(|(n, _)| n)
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, other: &ModelParams, alpha: f64) {
        for (a, b) in self.layers_mut().zip(other.layers()) {
            a.weight.scaled_add(alpha, &b.weight);
            a.bias.scaled_add(alpha, &b.bias);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for l in self.layers_mut() {
            l.weight *= alpha;
            l.bias *= alpha;
        }
    }

    /// Flat view of every parameter in layer order (weights row-major, then biases).
    pub fn flat_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in self.layers() {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    /// Mutable reference to the `index`-th value of `flat_values`.
    pub fn flat_value_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for l in self.layers_mut() {
            let w = l.weight.len();
            if index < w {
                return l.weight.as_slice_mut().map(|s| &mut s[index]);
            }
            index -= w;
            if index < l.bias.len() {
                return Some(&mut l.bias[index]);
            }
            index -= l.bias.len();
        }
        None
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.param_count() + 8 * LAYER_COUNT);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(LAYER_COUNT as u32).to_le_bytes());
        for l in self.layers() {
            out.extend_from_slice(&(l.outputs() as u32).to_le_bytes());
            out.extend_from_slice(&(l.inputs() as u32).to_le_bytes());
            for v in l.weight.iter().chain(l.bias.iter()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Weights("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Weights(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        if count != LAYER_COUNT {
            return Err(Error::Weights(format!("expected {LAYER_COUNT} layers, found {count}")));
        }
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let weight = Array2::from_shape_vec((rows, cols), r.f64s(rows * cols)?)
                .map_err(|e| Error::Weights(e.to_string()))?;
            let bias = Array1::from(r.f64s(rows)?);
            layers.push(Dense { weight, bias });
        }
        if r.pos != bytes.len() {
            return Err(Error::Weights("trailing bytes".into()));
        }
        let head_in = layers[4].inputs();
        let subset = BlockSubset::from_feature_dim(head_in)
            .ok_or_else(|| Error::Weights(format!("head input width {head_in} matches no block subset")))?;
        let head_w = layers.split_off(4 + HEAD_WIDTHS.len() + 1);
        let head_s = layers.split_off(4);
        let params = Self { subset, blocks: layers, head_s, head_w };
        let expected = Self::zeros(subset);
        for ((name, a), b) in Self::layer_names().iter().zip(params.layers()).zip(expected.layers()) {
            if a.weight.dim() != b.weight.dim() {
                return Err(Error::Weights(format!(
                    "layer {name} is {:?}, expected {:?}",
                    a.weight.dim(),
                    b.weight.dim()
                )));
            }
        }
        if let Some(name) = params.first_non_finite() {
            return Err(Error::Weights(format!("non-finite value in {name}")));
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Largest absolute element-wise difference, for tests and diagnostics.
    pub fn max_abs_diff(&self, other: &ModelParams) -> f64 {
        let mut m = 0.0f64;
        for (a, b) in self.layers().zip(other.layers()) {
            Zip::from(&a.weight).and(&b.weight).for_each(|x, y| m = m.max((x - y).abs()));
            Zip::from(&a.bias).and(&b.bias).for_each(|x, y| m = m.max((x - y).abs()));
        }
        m
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Weights("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Weights("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shapes_and_count() {
        let p = ModelParams::init(BlockSubset::ALL, 1);
        let dims: Vec<_> = p.layers().map(|l| (l.inputs(), l.outputs())).collect();
        assert_eq!(
            dims,
            vec![
                (3, 64), (64, 128), (128, 256), (256, 512),
                (960, 512), (512, 256), (256, 64), (64, 1),
                (960, 512), (512, 256), (256, 64), (64, 1),
            ]
        );
        let blocks = 3 * 64 + 64 + 64 * 128 + 128 + 128 * 256 + 256 + 256 * 512 + 512;
        let head = 960 * 512 + 512 + 512 * 256 + 256 + 256 * 64 + 64 + 64 + 1;
        assert_eq!(p.param_count(), blocks + 2 * head);
    }

    #[test]
    fn init_respects_fan_in_bound_and_seed() {
        let p = ModelParams::init(BlockSubset::ALL, 5);
        for l in p.layers() {
            let b = 1.0 / (l.inputs() as f64).sqrt();
            assert!(l.weight.iter().chain(l.bias.iter()).all(|v| v.abs() <= b));
        }
        assert_eq!(p, ModelParams::init(BlockSubset::ALL, 5));
        assert_ne!(p, ModelParams::init(BlockSubset::ALL, 6));
    }

    #[test]
    fn serialization_is_lossless() {
        for subset in ["1,2,3,4", "1", "2,4", "3"] {
            let p = ModelParams::init(subset.parse().unwrap(), 9);
            let bytes = p.to_bytes();
            assert_eq!(&bytes[..4], b"GQAN");
            let q = ModelParams::from_bytes(&bytes).unwrap();
            assert_eq!(q.subset, p.subset);
            assert_eq!(q.flat_values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                p.flat_values().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = ModelParams::init(BlockSubset::ALL, 2).to_bytes();
        assert!(ModelParams::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ModelParams::from_bytes(&bad).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(ModelParams::from_bytes(&extra).is_err());
        let mut nan = bytes;
        let first_weight = 12 + 8;
        nan[first_weight..first_weight + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(ModelParams::from_bytes(&nan).is_err());
    }

    #[test]
    fn subset_parsing_and_dims() {
        let s: BlockSubset = "1,3".parse().unwrap();
        assert_eq!(s.feature_dim(), 64 + 256);
        assert_eq!(s.depth(), 3);
        assert_eq!(s.to_string(), "1,3");
        assert_eq!(BlockSubset::ALL.feature_dim(), FEATURE_DIM);
        assert!("".parse::<BlockSubset>().is_err());
        assert!("5".parse::<BlockSubset>().is_err());
        for mask in 1u8..16 {
            let s = BlockSubset(mask);
            assert_eq!(BlockSubset::from_feature_dim(s.feature_dim()), Some(s));
        }
    }

    #[test]
    fn flat_value_indexing_matches_flat_values() {
        let mut p = ModelParams::init("1".parse().unwrap(), 3);
        let flat = p.flat_values();
        for i in [0, 1, 191, 192, 255, 256, flat.len() - 1] {
            assert_eq!(*p.flat_value_mut(i).unwrap(), flat[i]);
        }
        assert!(p.flat_value_mut(flat.len()).is_none());
    }
}
