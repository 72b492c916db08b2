//! Dense layers and the feedforward stacks built from them.
//!
//! An [`Mlp`] applies ReLU after every layer except the last, which stays
//! linear. One-hot inputs take a gather/scatter fast path so the input
//! layer never materializes the full indicator matrix.

use crate::matrix::Matrix;
use crate::rng::Stream;
use crate::{Error, Result};

use super::ops::relu_assign;

/// Weights are `fan_in x fan_out`; a batch row vector multiplies from the
/// left.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl DenseParams {
    pub fn fan_in(&self) -> usize {
        self.weights.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.cols()
    }

    /// Zero-mean Gaussian weights with the given standard deviation, zero
    /// biases. Draw order is row-major, so layouts are seed-reproducible.
    pub fn init_gaussian(fan_in: usize, fan_out: usize, std: f64, stream: &mut Stream) -> Self {
        let data = (0..fan_in * fan_out).map(|_| std * stream.normal()).collect();
        DenseParams {
            weights: Matrix::from_vec(fan_in, fan_out, data).expect("sized above"),
            bias: vec![0.0; fan_out],
        }
    }
}

/// `input @ weights + bias`, row-batched.
pub fn dense_forward(params: &DenseParams, input: &Matrix) -> Result<Matrix> {
    if input.cols() != params.fan_in() {
        return Err(Error::Config(format!(
            "dense layer expects {} inputs, got {}",
            params.fan_in(),
            input.cols()
        )));
    }
    let mut out = input.mm(&params.weights);
    out.add_row_vector(&params.bias);
    Ok(out)
}

/// Batch input to a stack: either an explicit matrix or one-hot rows given
/// as 0-based indices.
#[derive(Debug, Clone, Copy)]
pub enum MlpInput<'a> {
    Dense(&'a Matrix),
    OneHot { indices: &'a [usize], width: usize },
}

impl MlpInput<'_> {
    pub fn rows(&self) -> usize {
        match self {
            MlpInput::Dense(m) => m.rows(),
            MlpInput::OneHot { indices, .. } => indices.len(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            MlpInput::Dense(m) => m.cols(),
            MlpInput::OneHot { width, .. } => *width,
        }
    }
}

/// Feedforward stack: ReLU between layers, linear final layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseParams>,
}

/// Per-layer parameter gradients, shaped like the layer.
#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub d_weights: Matrix,
    pub d_bias: Vec<f64>,
}

/// Post-activation outputs of every layer, retained for the backward pass.
pub struct MlpCache<'a> {
    input: MlpInput<'a>,
    acts: Vec<Matrix>,
}

impl MlpCache<'_> {
    pub fn output(&self) -> &Matrix {
        self.acts.last().expect("at least one layer")
    }
}

impl Mlp {
    pub fn new(layers: Vec<DenseParams>) -> Self {
        assert!(!layers.is_empty());
        for pair in layers.windows(2) {
            assert_eq!(
                pair[0].fan_out(),
                pair[1].fan_in(),
                "layer widths do not chain"
            );
        }
        Mlp { layers }
    }

    pub fn in_width(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn out_width(&self) -> usize {
        self.layers.last().expect("nonempty").fan_out()
    }

    pub fn forward(&self, input: MlpInput<'_>) -> Matrix {
        let mut cache = self.forward_cached(input);
        cache.acts.pop().expect("at least one layer")
    }

    pub fn forward_cached<'a>(&self, input: MlpInput<'a>) -> MlpCache<'a> {
        assert_eq!(input.cols(), self.in_width(), "input width mismatch");
        let last = self.layers.len() - 1;
        let mut acts: Vec<Matrix> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = match (l, input) {
                (0, MlpInput::OneHot { indices, .. }) => gather_rows(&layer.weights, indices),
                (0, MlpInput::Dense(x)) => x.mm(&layer.weights),
                _ => acts[l - 1].mm(&layer.weights),
            };
            z.add_row_vector(&layer.bias);
            if l != last {
                relu_assign(&mut z);
            }
            acts.push(z);
        }
        MlpCache { input, acts }
    }

    /// Exact gradients of some scalar loss given `d_out` = dL/d(output).
    /// Returns per-layer grads and, when requested, dL/d(input).
    pub fn backward(
        &self,
        cache: &MlpCache<'_>,
        d_out: &Matrix,
        want_d_input: bool,
    ) -> (Vec<DenseGrads>, Option<Matrix>) {
        let n_layers = self.layers.len();
        assert_eq!(cache.acts.len(), n_layers);
        assert_eq!(d_out.rows(), cache.input.rows());
        assert_eq!(d_out.cols(), self.out_width());

        let mut grads: Vec<Option<DenseGrads>> = (0..n_layers).map(|_| None).collect();
        let mut delta = d_out.clone();
        let mut d_input = None;

        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            let (d_weights, d_bias) = if l == 0 {
                match cache.input {
                    MlpInput::Dense(x) => (x.mm_tn(&delta), delta.column_sums()),
                    MlpInput::OneHot { indices, width } => {
                        (scatter_rows(&delta, indices, width), delta.column_sums())
                    }
                }
            } else {
                (cache.acts[l - 1].mm_tn(&delta), delta.column_sums())
            };
            grads[l] = Some(DenseGrads { d_weights, d_bias });

            if l > 0 {
                // ReLU sits between layer l-1 and layer l; its derivative
                // is the positive-output indicator.
                let mut d_prev = delta.mm_nt(&layer.weights);
                let prev_act = &cache.acts[l - 1];
                for (d, &a) in d_prev.as_mut_slice().iter_mut().zip(prev_act.as_slice()) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
                delta = d_prev;
            } else if want_d_input {
                d_input = Some(delta.mm_nt(&layer.weights));
            }
        }

        let grads = grads.into_iter().map(|g| g.expect("filled")).collect();
        (grads, d_input)
    }

    /// Zero-filled gradient buffers shaped like the stack.
    pub fn zero_grads(&self) -> Vec<DenseGrads> {
        self.layers
            .iter()
            .map(|l| DenseGrads {
                d_weights: Matrix::zeros(l.fan_in(), l.fan_out()),
                d_bias: vec![0.0; l.fan_out()],
            })
            .collect()
    }
}

/// One-hot times a matrix is a row gather.
fn gather_rows(weights: &Matrix, indices: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(indices.len(), weights.cols());
    for (r, &m) in indices.iter().enumerate() {
        out.row_mut(r).copy_from_slice(weights.row(m));
    }
    out
}

/// One-hotᵀ times delta is a row scatter-add.
fn scatter_rows(delta: &Matrix, indices: &[usize], width: usize) -> Matrix {
    let mut out = Matrix::zeros(width, delta.cols());
    for (r, &m) in indices.iter().enumerate() {
        let src = delta.row(r);
        let dst = out.row_mut(m);
        for (d, &s) in dst.iter_mut().zip(src) {
            *d += s;
        }
    }
    out
}
