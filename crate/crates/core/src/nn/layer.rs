use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};

/// A dense layer applied identically to every row (point) of its input.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out x in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weight.nrows() != bias.len() {
            return Err(Error::Shape(format!(
                "weight has {} rows but bias has {} entries",
                weight.nrows(),
                bias.len()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn init(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Self {
            weight: Array2::from_shape_simple_fn((outputs, inputs), || rng.random_range(-bound..=bound)),
            bias: Array1::from_shape_simple_fn(outputs, || rng.random_range(-bound..=bound)),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Row-wise `x W^T + b`.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.inputs() {
            return Err(Error::Shape(format!(
                "input has {} columns, layer expects {}",
                x.ncols(),
                self.inputs()
            )));
        }
        let mut y = Array2::zeros((x.nrows(), self.outputs()));
        y.rows_mut().into_iter().for_each(|mut r| r.assign(&self.bias));
        general_mat_mul(1.0, &x, &self.weight.t(), 1.0, &mut y);
        Ok(y)
    }

    /// Accumulates parameter gradients into `grad` and returns the input gradient.
    pub fn backward(&self, x: ArrayView2<f64>, dy: ArrayView2<f64>, grad: &mut Dense) -> Array2<f64> {
        self.accumulate(x, dy, grad);
        dy.dot(&self.weight)
    }

    /// Parameter gradients only, for the first layer where the input gradient is unused.
    pub fn accumulate(&self, x: ArrayView2<f64>, dy: ArrayView2<f64>, grad: &mut Dense) {
        general_mat_mul(1.0, &dy.t(), &x, 1.0, &mut grad.weight);
        grad.bias += &dy.sum_axis(Axis(0));
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

pub fn relu_inplace(x: &mut Array2<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

/// Masks `dy` where the activation output was not positive.
pub fn relu_backward(out: ArrayView2<f64>, dy: &mut Array2<f64>) {
    Zip::from(dy).and(out).for_each(|g, &o| {
        if o <= 0.0 {
            *g = 0.0;
        }
    });
}

/// Logistic function without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_vec(x: ArrayView1<f64>) -> Array1<f64> {
    x.mapv(sigmoid)
}

/// Column-wise maximum over rows, with the attaining row (lowest on ties).
pub fn maxpool_points(features: ArrayView2<f64>) -> Result<(Array1<f64>, Vec<usize>)> {
    let (pooled, arg) = maxpool_segments(features, features.nrows())?;
    Ok((pooled.row(0).to_owned(), arg))
}

/// Max-pools consecutive groups of `group` rows. Returns one pooled row per
/// group and the absolute row index of every maximum, group-major.
pub fn maxpool_segments(features: ArrayView2<f64>, group: usize) -> Result<(Array2<f64>, Vec<usize>)> {
    let (rows, cols) = features.dim();
    if group == 0 || rows == 0 || rows % group != 0 {
        return Err(Error::Shape(format!("cannot pool {rows} rows in groups of {group}")));
    }
    let groups = rows / group;
    let mut pooled = Array2::zeros((groups, cols));
    let mut arg = vec![0usize; groups * cols];
    for g in 0..groups {
        let start = g * group;
        let mut best = pooled.row_mut(g);
        best.assign(&features.row(start));
        let idx = &mut arg[g * cols..(g + 1) * cols];
        idx.iter_mut().for_each(|i| *i = start);
        for r in start + 1..start + group {
            for (c, &v) in features.row(r).iter().enumerate() {
                if v > best[c] {
                    best[c] = v;
                    idx[c] = r;
                }
            }
        }
    }
    Ok((pooled, arg))
}

/// Routes pooled gradients back to the argmax rows of a `rows x cols` input.
pub fn maxpool_backward(d_pooled: ArrayView2<f64>, argmax: &[usize], rows: usize) -> Array2<f64> {
    let cols = d_pooled.ncols();
    let mut out = Array2::zeros((rows, cols));
    maxpool_backward_into(d_pooled, argmax, &mut out);
    out
}

/// Adds routed pooled gradients into `out`.
pub fn maxpool_backward_into(d_pooled: ArrayView2<f64>, argmax: &[usize], out: &mut Array2<f64>) {
    let cols = d_pooled.ncols();
    for (g, row) in d_pooled.rows().into_iter().enumerate() {
        for (c, &d) in row.iter().enumerate() {
            out[[argmax[g * cols + c], c]] += d;
        }
    }
}
