//! Network building blocks with hand-written reverse-mode passes.
//!
//! Every layer exposes a forward that records what its backward needs and a
//! backward that accumulates into parameter gradient buffers and returns (or
//! writes) input gradients. Convolutions are lowered to GEMM via im2col.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::NnError;

/// One trainable tensor with gradient and first/second moment buffers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub w: Vec<f64>,
    /// Gradient accumulator; transient, rebuilt after deserialization.
    #[serde(skip)]
    pub g: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Leading entries pinned to their initial value (the padding row of an
    /// embedding table): gradients are discarded and steps skipped.
    pub frozen_prefix: usize,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, w: Vec<f64>) -> Self {
        let len = w.len();
        assert_eq!(shape.iter().product::<usize>(), len);
        Param {
            name: name.into(),
            shape,
            w,
            g: vec![0.0; len],
            m: vec![0.0; len],
            v: vec![0.0; len],
            frozen_prefix: 0,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Param::new(name, shape, vec![0.0; len])
    }

    pub fn randn(
        name: impl Into<String>,
        shape: Vec<usize>,
        std: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let len: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("valid normal");
        let w: Vec<f64> = (0..len).map(|_| dist.sample(rng)).collect();
        Param::new(name, shape, w)
    }

    pub fn zero_grad(&mut self) {
        if self.g.len() != self.w.len() {
            self.g = vec![0.0; self.w.len()];
        } else {
            self.g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// One Adam update with bias correction; `t` is the 1-based step count.
pub fn adam_step(param: &mut Param, t: usize, lr: f64) {
    let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
    for i in param.frozen_prefix..param.w.len() {
        let g = param.g[i];
        param.m[i] = ADAM_BETA1 * param.m[i] + (1.0 - ADAM_BETA1) * g;
        param.v[i] = ADAM_BETA2 * param.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = param.m[i] / bc1;
        let v_hat = param.v[i] / bc2;
        param.w[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

// ---------------------------------------------------------------------------
// GEMM
// ---------------------------------------------------------------------------

#[derive(Clone, Copy)]
pub enum Layout {
    /// Buffer is the matrix itself, row-major.
    RowMajor,
    /// Buffer is the transpose of the logical matrix, row-major.
    Transposed,
}

/// C := A(m x k) * B(k x n) + beta * C, with either operand optionally
/// stored transposed.
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    la: Layout,
    b: &[f64],
    lb: Layout,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = match la {
        Layout::RowMajor => (k as isize, 1),
        Layout::Transposed => (1, m as isize),
    };
    let (rsb, csb) = match lb {
        Layout::RowMajor => (n as isize, 1),
        Layout::Transposed => (1, k as isize),
    };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

// ---------------------------------------------------------------------------
// Embedding
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Embedding {
    pub table: Param,
}

impl Embedding {
    /// `pad_row` zeroes and freezes row 0 so padding steps stay exactly zero.
    pub fn new(
        name: &str,
        vocab_size: usize,
        dim: usize,
        pad_row: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut table = Param::randn(name, vec![vocab_size, dim], 0.1, rng);
        if pad_row {
            table.w[..dim].iter_mut().for_each(|x| *x = 0.0);
            table.frozen_prefix = dim;
        }
        Embedding { table }
    }

    pub fn dim(&self) -> usize {
        self.table.shape[1]
    }

    pub fn vocab_size(&self) -> usize {
        self.table.shape[0]
    }

    pub fn row(&self, token: usize) -> &[f64] {
        let d = self.dim();
        &self.table.w[token * d..(token + 1) * d]
    }

    pub fn forward(&self, tokens: &[usize]) -> Tensor {
        let d = self.dim();
        let mut out = Tensor::zeros(vec![tokens.len(), d]);
        for (i, &t) in tokens.iter().enumerate() {
            out.row_mut(i).copy_from_slice(self.row(t));
        }
        out
    }

    /// Scatter-adds one row gradient back into the table.
    pub fn accumulate_grad(&mut self, token: usize, grad_row: &[f64]) {
        let d = self.dim();
        if token * d < self.table.frozen_prefix {
            return; // padding row stays constant
        }
        let dst = &mut self.table.g[token * d..(token + 1) * d];
        for (g, &x) in dst.iter_mut().zip(grad_row) {
            *g += x;
        }
    }
}

// ---------------------------------------------------------------------------
// 1-D convolution bank
// ---------------------------------------------------------------------------

/// A bank of 1-D convolutions: for each region size `h` a set of `F` filters
/// of shape `h x in_dim` plus biases, sharing one stride. Outputs are
/// rectified feature maps, one `positions x F` tensor per size.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvBank {
    pub sizes: Vec<usize>,
    pub stride: usize,
    pub in_dim: usize,
    pub filters_per_size: usize,
    /// Per size: weights of shape `[F, h * in_dim]`.
    pub weights: Vec<Param>,
    /// Per size: biases of shape `[F]`.
    pub biases: Vec<Param>,
}

/// Forward record for one region size.
pub struct SizeForward {
    /// im2col matrix, `positions x (h * in_dim)`.
    pub cols: Vec<f64>,
    /// Rectified output, `positions x F`.
    pub out: Vec<f64>,
    pub positions: usize,
}

pub struct BankForward {
    pub per_size: Vec<SizeForward>,
}

impl BankForward {
    pub fn map(&self, size_idx: usize, filters: usize) -> Tensor {
        let s = &self.per_size[size_idx];
        Tensor::new(vec![s.positions, filters], s.out.clone())
    }
}

/// Output length of a valid convolution; below-window inputs fall back to a
/// single zero-padded position.
pub fn conv_output_len(n_valid: usize, h: usize, stride: usize) -> usize {
    if n_valid >= h {
        (n_valid - h) / stride + 1
    } else {
        1
    }
}

impl ConvBank {
    pub fn new(
        name: &str,
        sizes: Vec<usize>,
        stride: usize,
        in_dim: usize,
        filters_per_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for &h in &sizes {
            let fan_in = (h * in_dim) as f64;
            weights.push(Param::randn(
                format!("{name}.w{h}"),
                vec![filters_per_size, h * in_dim],
                (2.0 / fan_in).sqrt(),
                rng,
            ));
            biases.push(Param::zeros(format!("{name}.b{h}"), vec![filters_per_size]));
        }
        ConvBank {
            sizes,
            stride,
            in_dim,
            filters_per_size,
            weights,
            biases,
        }
    }

    fn im2col(&self, input: &Tensor, n_valid: usize, h: usize) -> (Vec<f64>, usize) {
        let k = self.in_dim;
        debug_assert_eq!(input.cols(), k);
        let positions = conv_output_len(n_valid, h, self.stride);
        let mut cols = vec![0.0; positions * h * k];
        if n_valid >= h {
            for p in 0..positions {
                let start = p * self.stride;
                let dst = &mut cols[p * h * k..(p + 1) * h * k];
                dst.copy_from_slice(&input.data()[start * k..(start + h) * k]);
            }
        } else {
            // zero-pad the short input up to one full window
            let dst = &mut cols[..n_valid * k];
            dst.copy_from_slice(&input.data()[..n_valid * k]);
        }
        (cols, positions)
    }

    /// Convolves the first `n_valid` rows of `input`; positions whose window
    /// would overlap rows at or beyond `n_valid` are never produced, which is
    /// what keeps padded batches equivalent to their unpadded trips.
    pub fn forward(&self, input: &Tensor, n_valid: usize) -> BankForward {
        let f = self.filters_per_size;
        let mut per_size = Vec::with_capacity(self.sizes.len());
        for (si, &h) in self.sizes.iter().enumerate() {
            let (cols, positions) = self.im2col(input, n_valid, h);
            let mut out = vec![0.0; positions * f];
            gemm(
                positions,
                h * self.in_dim,
                f,
                &cols,
                Layout::RowMajor,
                &self.weights[si].w,
                Layout::Transposed,
                0.0,
                &mut out,
            );
            let bias = &self.biases[si].w;
            for p in 0..positions {
                let row = &mut out[p * f..(p + 1) * f];
                for (o, &b) in row.iter_mut().zip(bias) {
                    *o = (*o + b).max(0.0);
                }
            }
            per_size.push(SizeForward {
                cols,
                out,
                positions,
            });
        }
        BankForward { per_size }
    }

    /// Accumulates parameter gradients and adds input gradients into
    /// `d_input` (same shape as the forward input). `d_out` holds one
    /// `positions x F` gradient buffer per size.
    pub fn backward(
        &mut self,
        fwd: &BankForward,
        d_out: &[Vec<f64>],
        n_valid: usize,
        d_input: &mut [f64],
        input_cols: usize,
    ) {
        let f = self.filters_per_size;
        for (si, &h) in self.sizes.iter().enumerate() {
            let s = &fwd.per_size[si];
            let positions = s.positions;
            let k = self.in_dim;
            debug_assert_eq!(d_out[si].len(), positions * f);

            // rectifier: pass gradient only where the output was positive
            let mut dc = d_out[si].clone();
            for (d, &o) in dc.iter_mut().zip(&s.out) {
                if o <= 0.0 {
                    *d = 0.0;
                }
            }

            // bias grads
            for p in 0..positions {
                let row = &dc[p * f..(p + 1) * f];
                for (b, &d) in self.biases[si].g.iter_mut().zip(row) {
                    *b += d;
                }
            }

            // dW += dc^T (F x P) . cols (P x hk)
            gemm(
                f,
                positions,
                h * k,
                &dc,
                Layout::Transposed,
                &s.cols,
                Layout::RowMajor,
                1.0,
                &mut self.weights[si].g,
            );

            // d_cols = dc (P x F) . W (F x hk), then col2im scatter
            let mut d_cols = vec![0.0; positions * h * k];
            gemm(
                positions,
                f,
                h * k,
                &dc,
                Layout::RowMajor,
                &self.weights[si].w,
                Layout::RowMajor,
                0.0,
                &mut d_cols,
            );
            debug_assert_eq!(input_cols, k);
            if n_valid >= h {
                for p in 0..positions {
                    let start = p * self.stride;
                    let src = &d_cols[p * h * k..(p + 1) * h * k];
                    let dst = &mut d_input[start * k..(start + h) * k];
                    for (d, &x) in dst.iter_mut().zip(src) {
                        *d += x;
                    }
                }
            } else {
                let src = &d_cols[..n_valid * k];
                for (d, &x) in d_input[..n_valid * k].iter_mut().zip(src) {
                    *d += x;
                }
            }
        }
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.weights.iter_mut().chain(self.biases.iter_mut())
    }
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

/// Channel-wise maximum over positions, with argmax rows for the backward.
pub fn max_pool_with_argmax(
    map: &[f64],
    positions: usize,
    channels: usize,
) -> (Vec<f64>, Vec<usize>) {
    assert!(positions >= 1, "pooling over an empty map");
    let mut values = map[..channels].to_vec();
    let mut argmax = vec![0usize; channels];
    for p in 1..positions {
        let row = &map[p * channels..(p + 1) * channels];
        for (c, &v) in row.iter().enumerate() {
            if v > values[c] {
                values[c] = v;
                argmax[c] = p;
            }
        }
    }
    (values, argmax)
}

/// Public pooling op over a `L x F` feature map.
pub fn global_max_pool(map: &Tensor) -> Tensor {
    let (values, _) = max_pool_with_argmax(map.data(), map.rows(), map.cols());
    Tensor::new(vec![map.cols()], values)
}

// ---------------------------------------------------------------------------
// Linear / MLP
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Linear {
    /// `[out, in]`
    pub w: Param,
    /// `[out]`
    pub b: Param,
}

impl Linear {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = (2.0 / in_dim as f64).sqrt();
        Linear {
            w: Param::randn(format!("{name}.w"), vec![out_dim, in_dim], std, rng),
            b: Param::zeros(format!("{name}.b"), vec![out_dim]),
        }
    }

    pub fn zeros(name: &str, in_dim: usize, out_dim: usize) -> Self {
        Linear {
            w: Param::zeros(format!("{name}.w"), vec![out_dim, in_dim]),
            b: Param::zeros(format!("{name}.b"), vec![out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape[1]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape[0]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let (out_dim, in_dim) = (self.out_dim(), self.in_dim());
        debug_assert_eq!(x.len(), in_dim);
        let mut y = self.b.w.clone();
        for o in 0..out_dim {
            let row = &self.w.w[o * in_dim..(o + 1) * in_dim];
            let mut acc = 0.0;
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            y[o] += acc;
        }
        y
    }

    /// Accumulates dW, db and writes dL/dx into `dx`.
    pub fn backward(&mut self, x: &[f64], dy: &[f64], dx: &mut [f64]) {
        let (out_dim, in_dim) = (self.out_dim(), self.in_dim());
        debug_assert_eq!(dy.len(), out_dim);
        debug_assert_eq!(dx.len(), in_dim);
        dx.iter_mut().for_each(|d| *d = 0.0);
        for o in 0..out_dim {
            let d = dy[o];
            self.b.g[o] += d;
            let wrow = &self.w.w[o * in_dim..(o + 1) * in_dim];
            let grow = &mut self.w.g[o * in_dim..(o + 1) * in_dim];
            for i in 0..in_dim {
                grow[i] += d * x[i];
                dx[i] += d * wrow[i];
            }
        }
    }
}

/// Stack of linear layers with a rectifier after each one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(name: &str, in_dim: usize, widths: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut layers = Vec::new();
        let mut prev = in_dim;
        for (i, &w) in widths.iter().enumerate() {
            layers.push(Linear::new(&format!("{name}.{i}"), prev, w, rng));
            prev = w;
        }
        Mlp { layers }
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::out_dim)
    }

    /// Returns the output and every post-activation (input to the next
    /// layer), which the backward replays.
    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut acts = vec![x.to_vec()];
        for layer in &self.layers {
            let mut y = layer.forward(acts.last().unwrap());
            y.iter_mut().for_each(|v| *v = v.max(0.0));
            acts.push(y);
        }
        (acts.last().unwrap().clone(), acts)
    }

    pub fn backward(&mut self, acts: &[Vec<f64>], d_out: &[f64], d_in: &mut [f64]) {
        let mut dy = d_out.to_vec();
        for (li, layer) in self.layers.iter_mut().enumerate().rev() {
            let post = &acts[li + 1];
            for (d, &o) in dy.iter_mut().zip(post) {
                if o <= 0.0 {
                    *d = 0.0;
                }
            }
            let mut dx = vec![0.0; layer.in_dim()];
            layer.backward(&acts[li], &dy, &mut dx);
            dy = dx;
        }
        d_in.copy_from_slice(&dy);
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b])
    }
}

// ---------------------------------------------------------------------------
// MAPE loss
// ---------------------------------------------------------------------------

/// `(|pred - target| / target, d loss / d pred)`; the subgradient at
/// `pred == target` is 0.
pub fn mape_loss(pred: f64, target: f64) -> Result<(f64, f64), NnError> {
    if !(target.is_finite() && target > 0.0) {
        return Err(NnError::NonPositiveTarget(target));
    }
    let diff = pred - target;
    let loss = diff.abs() / target;
    let grad = if diff == 0.0 {
        0.0
    } else {
        diff.signum() / target
    };
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn gemm_small_known_product() {
        // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(
            2,
            2,
            2,
            &a,
            Layout::RowMajor,
            &b,
            Layout::RowMajor,
            0.0,
            &mut c,
        );
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);

        // A^T path: a stores A^T, logical A = [[1,3],[2,4]]
        let mut c = [0.0; 4];
        gemm(
            2,
            2,
            2,
            &a,
            Layout::Transposed,
            &b,
            Layout::RowMajor,
            0.0,
            &mut c,
        );
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
    }

    #[test]
    fn conv_hand_example() {
        // rows [(1,0),(0,1),(1,1)], one all-ones filter of size 2, bias 0:
        // windows sum to 2 and 3
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut bank = ConvBank::new("t", vec![2], 1, 2, 1, &mut rng);
        bank.weights[0].w = vec![1.0; 4];
        bank.biases[0].w = vec![0.0];
        let input = Tensor::new(vec![3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let fwd = bank.forward(&input, 3);
        assert_eq!(fwd.per_size[0].positions, 2);
        assert_eq!(fwd.per_size[0].out, vec![2.0, 3.0]);
    }

    #[test]
    fn conv_output_lengths() {
        assert_eq!(conv_output_len(10, 3, 1), 8);
        assert_eq!(conv_output_len(10, 3, 2), 4);
        assert_eq!(conv_output_len(2, 5, 1), 1); // zero-pad fallback
    }

    #[test]
    fn pooling_examples() {
        let map = Tensor::new(vec![3, 1], vec![-1.0, 5.0, 3.0]);
        assert_eq!(global_max_pool(&map).data(), &[5.0]);

        let single = Tensor::new(vec![1, 3], vec![4.0, -2.0, 0.5]);
        assert_eq!(global_max_pool(&single).data(), &[4.0, -2.0, 0.5]);

        // permutation invariance
        let a = Tensor::new(vec![3, 2], vec![1.0, 9.0, 7.0, 2.0, 4.0, 5.0]);
        let b = Tensor::new(vec![3, 2], vec![4.0, 5.0, 1.0, 9.0, 7.0, 2.0]);
        assert_eq!(global_max_pool(&a), global_max_pool(&b));
    }

    #[test]
    fn mape_loss_examples() {
        assert_eq!(mape_loss(90.0, 100.0).unwrap().0, 0.10);
        assert_eq!(mape_loss(100.0, 100.0).unwrap(), (0.0, 0.0));
        let (loss, grad) = mape_loss(150.0, 100.0).unwrap();
        assert_eq!(loss, 0.5);
        assert_eq!(grad, 0.01);
        assert!(mape_loss(1.0, 0.0).is_err());
        assert!(mape_loss(1.0, -5.0).is_err());
    }

    #[test]
    fn linear_forward_backward_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut layer = Linear::new("t", 3, 2, &mut rng);
        let x = [1.0, -2.0, 0.5];
        let y = layer.forward(&x);
        assert_eq!(y.len(), 2);
        let mut dx = [0.0; 3];
        layer.backward(&x, &[1.0, -1.0], &mut dx);
        assert!(dx.iter().any(|&d| d != 0.0));
    }

    #[test]
    fn adam_with_zero_lr_keeps_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = Param::randn("t", vec![4], 1.0, &mut rng);
        let before = p.w.clone();
        p.g = vec![1.0; 4];
        adam_step(&mut p, 1, 0.0);
        assert_eq!(p.w, before);
    }
}
