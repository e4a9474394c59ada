//! Minimal reverse-mode differentiable layer stack.
//!
//! Layers operate on T x dim matrices (rows are frames). Forward passes are
//! immutable and return an explicit activation cache; backward passes consume
//! that cache and accumulate parameter gradients into an external
//! [`GradStore`], which keeps data-parallel training deterministic: each lane
//! accumulates privately and lanes are reduced in a fixed order.

mod layers;
mod lstm;

pub use layers::{
    seeded_rng, Affine, BlockComplexAffine, ComplexAffine, LogFloor, MaxPoolGroups, PowPairs, Relu,
};
pub use lstm::{Lstm, LstmCache};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Default floor inside log layers.
pub const DEFAULT_LOG_EPS: f64 = 1e-7;

/// Real-valued n-dimensional array with an associated gradient slot.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
}

impl DiffTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        DiffTensor {
            shape: shape.to_vec(),
            values: vec![0.0; len],
            grad: vec![0.0; len],
        }
    }

    /// Builds a tensor from explicit values; rejects NaN/Inf and shape
    /// mismatches.
    pub fn from_values(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if values.len() != len {
            return Err(Error::dim(len, values.len(), "tensor values"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite tensor value"));
        }
        let grad = vec![0.0; len];
        Ok(DiffTensor {
            shape: shape.to_vec(),
            values,
            grad,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// 2-D view of the values; panics if the tensor is not rank 2.
    pub fn matrix(&self) -> ndarray::ArrayView2<'_, f64> {
        assert_eq!(self.shape.len(), 2, "tensor is not a matrix");
        ndarray::ArrayView2::from_shape((self.shape[0], self.shape[1]), &self.values)
            .expect("shape consistent")
    }
}

/// One differentiable layer. Per-frame layers apply row-wise over the input
/// matrix; the LSTM runs its recursion down the rows.
#[derive(Debug, Clone)]
pub enum Layer {
    Affine(Affine),
    ComplexAffine(ComplexAffine),
    BlockComplexAffine(BlockComplexAffine),
    PowPairs(PowPairs),
    MaxPoolGroups(MaxPoolGroups),
    Relu(Relu),
    LogFloor(LogFloor),
    Lstm(Lstm),
}

/// Activations cached by a forward pass, consumed by the matching backward.
#[derive(Debug, Clone)]
pub enum LayerCache {
    Input { x: Array2<f64> },
    Split { xr: Array2<f64>, xi: Array2<f64> },
    ArgMax { indices: Vec<usize> },
    Lstm(LstmCache),
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Affine(_) => "affine",
            Layer::ComplexAffine(_) => "complex_affine",
            Layer::BlockComplexAffine(_) => "block_complex_affine",
            Layer::PowPairs(_) => "pow_pairs",
            Layer::MaxPoolGroups(_) => "maxpool_groups",
            Layer::Relu(_) => "relu",
            Layer::LogFloor(_) => "log_floor",
            Layer::Lstm(_) => "lstm",
        }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            Layer::Affine(l) => l.in_dim(),
            Layer::ComplexAffine(l) => l.in_dim(),
            Layer::BlockComplexAffine(l) => l.in_dim(),
            Layer::PowPairs(l) => l.in_dim(),
            Layer::MaxPoolGroups(l) => l.in_dim(),
            Layer::Relu(l) => l.dim,
            Layer::LogFloor(l) => l.dim,
            Layer::Lstm(l) => l.input_dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Layer::Affine(l) => l.out_dim(),
            Layer::ComplexAffine(l) => l.out_dim(),
            Layer::BlockComplexAffine(l) => l.out_dim(),
            Layer::PowPairs(l) => l.out_dim(),
            Layer::MaxPoolGroups(l) => l.out_dim(),
            Layer::Relu(l) => l.dim,
            Layer::LogFloor(l) => l.dim,
            Layer::Lstm(l) => l.hidden_dim,
        }
    }

    pub fn params(&self) -> Vec<&DiffTensor> {
        match self {
            Layer::Affine(l) => vec![&l.w, &l.b],
            Layer::ComplexAffine(l) => vec![&l.w_re, &l.w_im, &l.b_re, &l.b_im],
            Layer::BlockComplexAffine(l) => vec![&l.w_re, &l.w_im, &l.b_re, &l.b_im],
            Layer::Lstm(l) => vec![&l.w_x, &l.w_h, &l.b],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut DiffTensor> {
        match self {
            Layer::Affine(l) => vec![&mut l.w, &mut l.b],
            Layer::ComplexAffine(l) => {
                vec![&mut l.w_re, &mut l.w_im, &mut l.b_re, &mut l.b_im]
            }
            Layer::BlockComplexAffine(l) => {
                vec![&mut l.w_re, &mut l.w_im, &mut l.b_re, &mut l.b_im]
            }
            Layer::Lstm(l) => vec![&mut l.w_x, &mut l.w_h, &mut l.b],
            _ => vec![],
        }
    }

    pub fn param_names(&self) -> Vec<&'static str> {
        match self {
            Layer::Affine(_) => vec!["w", "b"],
            Layer::ComplexAffine(_) | Layer::BlockComplexAffine(_) => {
                vec!["w_re", "w_im", "b_re", "b_im"]
            }
            Layer::Lstm(_) => vec!["w_x", "w_h", "b"],
            _ => vec![],
        }
    }

    pub fn n_params(&self) -> usize {
        self.params().len()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, LayerCache)> {
        if x.ncols() != self.in_dim() {
            return Err(Error::dim(self.in_dim(), x.ncols(), "layer input"));
        }
        debug_assert!(x.iter().all(|v| v.is_finite()), "non-finite layer input");
        match self {
            Layer::Affine(l) => l.forward(x),
            Layer::ComplexAffine(l) => l.forward(x),
            Layer::BlockComplexAffine(l) => l.forward(x),
            Layer::PowPairs(l) => l.forward(x),
            Layer::MaxPoolGroups(l) => l.forward(x),
            Layer::Relu(l) => l.forward(x),
            Layer::LogFloor(l) => l.forward(x),
            Layer::Lstm(l) => l.forward(x),
        }
    }

    /// Backpropagates `gy` through the layer. Parameter gradients accumulate
    /// into `sink` (one buffer per parameter tensor, layer-local order);
    /// returns the gradient with respect to the input.
    pub fn backward(
        &self,
        gy: &Array2<f64>,
        cache: &LayerCache,
        sink: &mut [Vec<f64>],
    ) -> Result<Array2<f64>> {
        debug_assert_eq!(sink.len(), self.n_params(), "sink arity");
        match self {
            Layer::Affine(l) => l.backward(gy, cache, sink),
            Layer::ComplexAffine(l) => l.backward(gy, cache, sink),
            Layer::BlockComplexAffine(l) => l.backward(gy, cache, sink),
            Layer::PowPairs(l) => l.backward(gy, cache),
            Layer::MaxPoolGroups(l) => l.backward(gy, cache),
            Layer::Relu(l) => l.backward(gy, cache),
            Layer::LogFloor(l) => l.backward(gy, cache),
            Layer::Lstm(l) => l.backward(gy, cache, sink),
        }
    }
}

/// Ordered stack of layers with a shared parameter numbering.
#[derive(Debug, Clone, Default)]
pub struct LayerStack {
    pub layers: Vec<Layer>,
}

impl LayerStack {
    pub fn new(layers: Vec<Layer>) -> Self {
        LayerStack { layers }
    }

    /// Checks that layer dimensions chain from `in_dim` and returns the
    /// output dimension.
    pub fn validate_chain(&self, in_dim: usize) -> Result<usize> {
        let mut dim = in_dim;
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.in_dim() != dim {
                return Err(Error::invalid(format!(
                    "layer {i} ({}) expects input {} but receives {dim}",
                    layer.name(),
                    layer.in_dim()
                )));
            }
            dim = layer.out_dim();
        }
        Ok(dim)
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, Vec<LayerCache>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let (next, cache) = layer.forward(&cur)?;
            caches.push(cache);
            cur = next;
        }
        Ok((cur, caches))
    }

    /// Full backward pass; parameter gradients accumulate into `store` and
    /// the input gradient is returned.
    pub fn backward(
        &self,
        gy: &Array2<f64>,
        caches: &[LayerCache],
        store: &mut GradStore,
    ) -> Result<Array2<f64>> {
        assert_eq!(caches.len(), self.layers.len(), "cache arity");
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for layer in &self.layers {
            offsets.push(off);
            off += layer.n_params();
        }
        assert_eq!(off, store.bufs.len(), "grad store arity");
        let mut g = gy.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let sink = &mut store.bufs[offsets[i]..offsets[i] + layer.n_params()];
            g = layer.backward(&g, &caches[i], sink)?;
        }
        Ok(g)
    }

    pub fn params(&self) -> Vec<&DiffTensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut DiffTensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    /// Parameter names of the form `layer<i>.<name>`.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            for n in layer.param_names() {
                names.push(format!("layer{i}.{n}"));
            }
        }
        names
    }

    pub fn n_param_tensors(&self) -> usize {
        self.layers.iter().map(|l| l.n_params()).sum()
    }

    pub fn n_scalar_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

/// Gradient buffers aligned with a stack's parameter numbering.
#[derive(Debug, Clone)]
pub struct GradStore {
    pub bufs: Vec<Vec<f64>>,
}

impl GradStore {
    pub fn for_stack(stack: &LayerStack) -> Self {
        GradStore {
            bufs: stack.params().iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn zero(&mut self) {
        for buf in &mut self.bufs {
            buf.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn add(&mut self, other: &GradStore) {
        assert_eq!(self.bufs.len(), other.bufs.len());
        for (a, b) in self.bufs.iter_mut().zip(other.bufs.iter()) {
            for (ai, bi) in a.iter_mut().zip(b.iter()) {
                *ai += bi;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for buf in &mut self.bufs {
            buf.iter_mut().for_each(|g| *g *= s);
        }
    }
}

/// Numerically stabilized softmax cross-entropy for one frame. Returns the
/// loss and the gradient with respect to the logits.
pub fn softmax_xent(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    let c = logits.len();
    if c < 2 {
        return Err(Error::invalid("softmax needs at least two classes"));
    }
    if label >= c {
        return Err(Error::invalid(format!(
            "label {label} out of range for {c} classes"
        )));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (logits[label] - max);
    let mut grad: Vec<f64> = exps.iter().map(|&e| e / sum).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Softmax cross-entropy over a T x C logit matrix. Returns the summed loss
/// and per-frame logit gradients (unscaled).
pub fn softmax_xent_batch(logits: &Array2<f64>, labels: &[u16]) -> Result<(f64, Array2<f64>)> {
    if logits.nrows() != labels.len() {
        return Err(Error::dim(logits.nrows(), labels.len(), "xent labels"));
    }
    let mut total = 0.0;
    let mut grads = Array2::zeros(logits.raw_dim());
    for (t, row) in logits.rows().into_iter().enumerate() {
        let (loss, g) = softmax_xent(row.as_slice().expect("contiguous"), labels[t] as usize)?;
        total += loss;
        for (j, gj) in g.into_iter().enumerate() {
            grads[(t, j)] = gj;
        }
    }
    Ok((total, grads))
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Central finite-difference check of a stack under a fixed random projection
/// loss `L = sum(r . y)`. Returns the max relative error over all parameters
/// and inputs.
pub fn grad_check(
    stack: &mut LayerStack,
    input: &Array2<f64>,
    eps: f64,
    seed: u64,
) -> Result<f64> {
    let (y0, caches) = stack.forward(input)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let proj = Array2::from_shape_fn(y0.raw_dim(), |_| rng.gen_range(-1.0..1.0));

    let mut store = GradStore::for_stack(stack);
    let dx = stack.backward(&proj, &caches, &mut store)?;

    let loss_of = |stack: &LayerStack, x: &Array2<f64>| -> Result<f64> {
        let (y, _) = stack.forward(x)?;
        Ok((&y * &proj).sum())
    };

    let mut worst = 0.0f64;
    // Parameters.
    let n_tensors = stack.n_param_tensors();
    for pi in 0..n_tensors {
        let len = stack.params()[pi].len();
        for j in 0..len {
            let orig = stack.params()[pi].values()[j];
            stack.params_mut()[pi].values_mut()[j] = orig + eps;
            let lp = loss_of(stack, input)?;
            stack.params_mut()[pi].values_mut()[j] = orig - eps;
            let lm = loss_of(stack, input)?;
            stack.params_mut()[pi].values_mut()[j] = orig;
            let numeric = (lp - lm) / (2.0 * eps);
            worst = worst.max(relative_error(store.bufs[pi][j], numeric));
        }
    }
    // Inputs.
    let mut x = input.clone();
    for idx in 0..x.len() {
        let flat = x.as_slice_mut().expect("contiguous input");
        let orig = flat[idx];
        flat[idx] = orig + eps;
        let lp = loss_of(stack, &x)?;
        x.as_slice_mut().unwrap()[idx] = orig - eps;
        let lm = loss_of(stack, &x)?;
        x.as_slice_mut().unwrap()[idx] = orig;
        let numeric = (lp - lm) / (2.0 * eps);
        let analytic = dx.as_slice().unwrap()[idx];
        worst = worst.max(relative_error(analytic, numeric));
    }
    Ok(worst)
}

/// Finite-difference check of a stack followed by mean softmax cross-entropy.
/// Used for full-architecture end-to-end verification.
pub fn grad_check_with_xent(
    stack: &mut LayerStack,
    input: &Array2<f64>,
    labels: &[u16],
    eps: f64,
) -> Result<f64> {
    let inv_n = 1.0 / labels.len() as f64;
    let loss_of = |stack: &LayerStack, x: &Array2<f64>| -> Result<f64> {
        let (logits, _) = stack.forward(x)?;
        let (loss, _) = softmax_xent_batch(&logits, labels)?;
        Ok(loss * inv_n)
    };

    let (logits, caches) = stack.forward(input)?;
    let (_, mut dlogits) = softmax_xent_batch(&logits, labels)?;
    dlogits.mapv_inplace(|g| g * inv_n);
    let mut store = GradStore::for_stack(stack);
    let dx = stack.backward(&dlogits, &caches, &mut store)?;

    let mut worst = 0.0f64;
    let n_tensors = stack.n_param_tensors();
    for pi in 0..n_tensors {
        let len = stack.params()[pi].len();
        for j in 0..len {
            let orig = stack.params()[pi].values()[j];
            stack.params_mut()[pi].values_mut()[j] = orig + eps;
            let lp = loss_of(stack, input)?;
            stack.params_mut()[pi].values_mut()[j] = orig - eps;
            let lm = loss_of(stack, input)?;
            stack.params_mut()[pi].values_mut()[j] = orig;
            let numeric = (lp - lm) / (2.0 * eps);
            worst = worst.max(relative_error(store.bufs[pi][j], numeric));
        }
    }
    let mut x = input.clone();
    for idx in 0..x.len() {
        let orig = x.as_slice().unwrap()[idx];
        x.as_slice_mut().unwrap()[idx] = orig + eps;
        let lp = loss_of(stack, &x)?;
        x.as_slice_mut().unwrap()[idx] = orig - eps;
        let lm = loss_of(stack, &x)?;
        x.as_slice_mut().unwrap()[idx] = orig;
        let numeric = (lp - lm) / (2.0 * eps);
        worst = worst.max(relative_error(dx.as_slice().unwrap()[idx], numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests;
