//! Per-frame layers: real and complex affine transforms, pairwise power,
//! grouped max-pooling, ReLU, and floored log.
//!
//! Complex quantities use the interleaved real layout `[re, im, re, im, ...]`
//! and complex weights are trained as independent real entities.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DiffTensor, LayerCache};
use crate::error::{Error, Result};

/// `y = W x + b` applied row-wise: (T x Q) -> (T x P).
#[derive(Debug, Clone)]
pub struct Affine {
    pub w: DiffTensor, // P x Q
    pub b: DiffTensor, // P
}

impl Affine {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Affine {
            w: DiffTensor::zeros(&[out_dim, in_dim]),
            b: DiffTensor::zeros(&[out_dim]),
        }
    }

    pub fn from_matrix(w: Array2<f64>, b: Vec<f64>) -> Result<Self> {
        let (p, q) = w.dim();
        if b.len() != p {
            return Err(Error::dim(p, b.len(), "affine bias"));
        }
        Ok(Affine {
            w: DiffTensor::from_values(&[p, q], w.into_raw_vec_and_offset().0)?,
            b: DiffTensor::from_values(&[p], b)?,
        })
    }

    /// Uniform(-scale, scale) weights, zero bias.
    pub fn random(out_dim: usize, in_dim: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut l = Self::zeros(out_dim, in_dim);
        for v in l.w.values_mut() {
            *v = rng.gen_range(-scale..scale);
        }
        l
    }

    /// Uniform(0, scale) weights, zero bias (non-negative, for log-safe
    /// feature front-ends).
    pub fn random_nonneg(out_dim: usize, in_dim: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut l = Self::zeros(out_dim, in_dim);
        for v in l.w.values_mut() {
            *v = rng.gen_range(0.0..scale);
        }
        l
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, LayerCache)> {
        let mut y = x.dot(&self.w.matrix().t());
        let b = self.b.values();
        for mut row in y.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v += b[j];
            }
        }
        Ok((y, LayerCache::Input { x: x.clone() }))
    }

    pub fn backward(
        &self,
        gy: &Array2<f64>,
        cache: &LayerCache,
        sink: &mut [Vec<f64>],
    ) -> Result<Array2<f64>> {
        let LayerCache::Input { x } = cache else {
            return Err(Error::invalid("affine: wrong cache"));
        };
        // dW = gy^T x, db = column sums of gy, dx = gy W.
        let dw = gy.t().dot(x);
        for (g, d) in sink[0].iter_mut().zip(dw.iter()) {
            *g += d;
        }
        for row in gy.rows() {
            for (j, g) in row.iter().enumerate() {
                sink[1][j] += g;
            }
        }
        Ok(gy.dot(&self.w.matrix()))
    }
}

/// Complex affine `y = W x + b` on interleaved inputs: (T x 2Q) -> (T x 2P).
/// Real and imaginary parts of every parameter are independent real values.
#[derive(Debug, Clone)]
pub struct ComplexAffine {
    pub w_re: DiffTensor, // P x Q
    pub w_im: DiffTensor, // P x Q
    pub b_re: DiffTensor, // P
    pub b_im: DiffTensor, // P
}

pub(crate) fn deinterleave(x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (t, two_q) = x.dim();
    let q = two_q / 2;
    let mut re = Array2::zeros((t, q));
    let mut im = Array2::zeros((t, q));
    for ti in 0..t {
        for j in 0..q {
            re[(ti, j)] = x[(ti, 2 * j)];
            im[(ti, j)] = x[(ti, 2 * j + 1)];
        }
    }
    (re, im)
}

pub(crate) fn interleave(re: &Array2<f64>, im: &Array2<f64>) -> Array2<f64> {
    let (t, p) = re.dim();
    let mut out = Array2::zeros((t, 2 * p));
    for ti in 0..t {
        for j in 0..p {
            out[(ti, 2 * j)] = re[(ti, j)];
            out[(ti, 2 * j + 1)] = im[(ti, j)];
        }
    }
    out
}

impl ComplexAffine {
    pub fn zeros(out_pairs: usize, in_pairs: usize) -> Self {
        ComplexAffine {
            w_re: DiffTensor::zeros(&[out_pairs, in_pairs]),
            w_im: DiffTensor::zeros(&[out_pairs, in_pairs]),
            b_re: DiffTensor::zeros(&[out_pairs]),
            b_im: DiffTensor::zeros(&[out_pairs]),
        }
    }

    pub fn random(out_pairs: usize, in_pairs: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut l = Self::zeros(out_pairs, in_pairs);
        for v in l.w_re.values_mut() {
            *v = rng.gen_range(-scale..scale);
        }
        for v in l.w_im.values_mut() {
            *v = rng.gen_range(-scale..scale);
        }
        l
    }

    pub fn in_dim(&self) -> usize {
        2 * self.w_re.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        2 * self.w_re.shape()[0]
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, LayerCache)> {
        if x.ncols() % 2 != 0 {
            return Err(Error::invalid("complex affine input has odd length"));
        }
        let (xr, xi) = deinterleave(x);
        let wr = self.w_re.matrix();
        let wi = self.w_im.matrix();
        let mut yr = xr.dot(&wr.t()) - xi.dot(&wi.t());
        let mut yi = xr.dot(&wi.t()) + xi.dot(&wr.t());
        for ti in 0..yr.nrows() {
            for p in 0..yr.ncols() {
                yr[(ti, p)] += self.b_re.values()[p];
                yi[(ti, p)] += self.b_im.values()[p];
            }
        }
        let y = interleave(&yr, &yi);
        Ok((y, LayerCache::Split { xr, xi }))
    }

    pub fn backward(
        &self,
        gy: &Array2<f64>,
        cache: &LayerCache,
        sink: &mut [Vec<f64>],
    ) -> Result<Array2<f64>> {
        let LayerCache::Split { xr, xi } = cache else {
            return Err(Error::invalid("complex affine: wrong cache"));
        };
        let (gr, gi) = deinterleave(gy);
        let dw_re = gr.t().dot(xr) + gi.t().dot(xi);
        let dw_im = gi.t().dot(xr) - gr.t().dot(xi);
        for (g, d) in sink[0].iter_mut().zip(dw_re.iter()) {
            *g += d;
        }
        for (g, d) in sink[1].iter_mut().zip(dw_im.iter()) {
            *g += d;
        }
        for row in gr.rows() {
            for (p, g) in row.iter().enumerate() {
                sink[2][p] += g;
            }
        }
        for row in gi.rows() {
            for (p, g) in row.iter().enumerate() {
                sink[3][p] += g;
            }
        }
        let wr = self.w_re.matrix();
        let wi = self.w_im.matrix();
        let dxr = gr.dot(&wr) + gi.dot(&wi);
        let dxi = gi.dot(&wr) - gr.dot(&wi);
        Ok(interleave(&dxr, &dxi))
    }
}

/// A bank of per-frequency complex affines: block `k` maps the M complex
/// inputs of frequency `k` to D complex outputs of the same frequency. The
/// block structure is a hard constraint: weights between frequencies do not
/// exist, so they stay exactly zero under any training.
#[derive(Debug, Clone)]
pub struct BlockComplexAffine {
    pub n_blocks: usize,    // K frequencies
    pub out_per_block: usize, // D
    pub in_per_block: usize,  // M
    pub w_re: DiffTensor,   // K x D x M
    pub w_im: DiffTensor,   // K x D x M
    pub b_re: DiffTensor,   // K x D
    pub b_im: DiffTensor,   // K x D
}

impl BlockComplexAffine {
    pub fn zeros(n_blocks: usize, out_per_block: usize, in_per_block: usize) -> Self {
        BlockComplexAffine {
            n_blocks,
            out_per_block,
            in_per_block,
            w_re: DiffTensor::zeros(&[n_blocks, out_per_block, in_per_block]),
            w_im: DiffTensor::zeros(&[n_blocks, out_per_block, in_per_block]),
            b_re: DiffTensor::zeros(&[n_blocks, out_per_block]),
            b_im: DiffTensor::zeros(&[n_blocks, out_per_block]),
        }
    }

    pub fn random(
        n_blocks: usize,
        out_per_block: usize,
        in_per_block: usize,
        scale: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut l = Self::zeros(n_blocks, out_per_block, in_per_block);
        for v in l.w_re.values_mut() {
            *v = rng.gen_range(-scale..scale);
        }
        for v in l.w_im.values_mut() {
            *v = rng.gen_range(-scale..scale);
        }
        l
    }

    #[inline]
    fn widx(&self, k: usize, d: usize, m: usize) -> usize {
        (k * self.out_per_block + d) * self.in_per_block + m
    }

    pub fn in_dim(&self) -> usize {
        2 * self.n_blocks * self.in_per_block
    }

    pub fn out_dim(&self) -> usize {
        2 * self.n_blocks * self.out_per_block
    }

    /// Materializes the equivalent dense complex matrix (DK x MK pairs) for
    /// inspection; entries outside the blocks are structurally zero.
    pub fn to_dense(&self) -> (Array2<f64>, Array2<f64>) {
        let rows = self.n_blocks * self.out_per_block;
        let cols = self.n_blocks * self.in_per_block;
        let mut re = Array2::zeros((rows, cols));
        let mut im = Array2::zeros((rows, cols));
        for k in 0..self.n_blocks {
            for d in 0..self.out_per_block {
                for m in 0..self.in_per_block {
                    let r = k * self.out_per_block + d;
                    let c = k * self.in_per_block + m;
                    re[(r, c)] = self.w_re.values()[self.widx(k, d, m)];
                    im[(r, c)] = self.w_im.values()[self.widx(k, d, m)];
                }
            }
        }
        (re, im)
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, LayerCache)> {
        let t = x.nrows();
        let (kk, dd, mm) = (self.n_blocks, self.out_per_block, self.in_per_block);
        let wr = self.w_re.values();
        let wi = self.w_im.values();
        let br = self.b_re.values();
        let bi = self.b_im.values();
        let mut y = Array2::zeros((t, 2 * kk * dd));
        for ti in 0..t {
            for k in 0..kk {
                let xbase = 2 * k * mm;
                for d in 0..dd {
                    let mut yr = br[k * dd + d];
                    let mut yi = bi[k * dd + d];
                    for m in 0..mm {
                        let xr = x[(ti, xbase + 2 * m)];
                        let xi_ = x[(ti, xbase + 2 * m + 1)];
                        let re = wr[self.widx(k, d, m)];
                        let im = wi[self.widx(k, d, m)];
                        yr += re * xr - im * xi_;
                        yi += im * xr + re * xi_;
                    }
                    y[(ti, 2 * (k * dd + d))] = yr;
                    y[(ti, 2 * (k * dd + d) + 1)] = yi;
                }
            }
        }
        Ok((y, LayerCache::Input { x: x.clone() }))
    }

    pub fn backward(
        &self,
        gy: &Array2<f64>,
        cache: &LayerCache,
        sink: &mut [Vec<f64>],
    ) -> Result<Array2<f64>> {
        let LayerCache::Input { x } = cache else {
            return Err(Error::invalid("block affine: wrong cache"));
        };
        let t = x.nrows();
        let (kk, dd, mm) = (self.n_blocks, self.out_per_block, self.in_per_block);
        let wr = self.w_re.values();
        let wi = self.w_im.values();
        let mut dx = Array2::zeros(x.raw_dim());
        for ti in 0..t {
            for k in 0..kk {
                let xbase = 2 * k * mm;
                for d in 0..dd {
                    let gr = gy[(ti, 2 * (k * dd + d))];
                    let gi = gy[(ti, 2 * (k * dd + d) + 1)];
                    sink[2][k * dd + d] += gr;
                    sink[3][k * dd + d] += gi;
                    for m in 0..mm {
                        let xr = x[(ti, xbase + 2 * m)];
                        let xi_ = x[(ti, xbase + 2 * m + 1)];
                        let idx = self.widx(k, d, m);
                        sink[0][idx] += gr * xr + gi * xi_;
                        sink[1][idx] += gi * xr - gr * xi_;
                        dx[(ti, xbase + 2 * m)] += gr * wr[idx] + gi * wi[idx];
                        dx[(ti, xbase + 2 * m + 1)] += gi * wr[idx] - gr * wi[idx];
                    }
                }
            }
        }
        Ok(dx)
    }
}

/// Sum of squares of adjacent pairs: (T x 2N) -> (T x N).
#[derive(Debug, Clone)]
pub struct PowPairs {
    pub pairs: usize,
}

impl PowPairs {
    pub fn new(pairs: usize) -> Self {
        PowPairs { pairs }
    }

    pub fn in_dim(&self) -> usize {
        2 * self.pairs
    }

    pub fn out_dim(&self) -> usize {
        self.pairs
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, LayerCache)> {
        let t = x.nrows();
        let mut y = Array2::zeros((t, self.pairs));
        for ti in 0..t {
            for i in 0..self.pairs {
                let a = x[(ti, 2 * i)];
                let b = x[(ti, 2 * i + 1)];
                y[(ti, i)] = a * a + b * b;
            }
        }
        Ok((y, LayerCache::Input { x: x.clone() }))
    }

    pub fn backward(&self, gy: &Array2<f64>, cache: &LayerCache) -> Result<Array2<f64>> {
        let LayerCache::Input { x } = cache else {
            return Err(Error::invalid("pow_pairs: wrong cache"));
        };
        let mut dx = Array2::zeros(x.raw_dim());
        for ti in 0..x.nrows() {
            for i in 0..self.pairs {
                let g = gy[(ti, i)];
                dx[(ti, 2 * i)] = 2.0 * x[(ti, 2 * i)] * g;
                dx[(ti, 2 * i + 1)] = 2.0 * x[(ti, 2 * i + 1)] * g;
            }
        }
        Ok(dx)
    }
}

/// Max over groups of `group_size` consecutive values:
/// (T x G*group_size) -> (T x G). Ties route to the lowest index, and the
/// backward pass sends the gradient only to the argmax element.
#[derive(Debug, Clone)]
pub struct MaxPoolGroups {
    pub group_size: usize,
    pub n_groups: usize,
}

impl MaxPoolGroups {
    pub fn new(group_size: usize, n_groups: usize) -> Self {
        MaxPoolGroups {
            group_size,
            n_groups,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.group_size * self.n_groups
    }

    pub fn out_dim(&self) -> usize {
        self.n_groups
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, LayerCache)> {
        let t = x.nrows();
        let mut y = Array2::zeros((t, self.n_groups));
        let mut indices = vec![0usize; t * self.n_groups];
        for ti in 0..t {
            for g in 0..self.n_groups {
                let base = g * self.group_size;
                let mut best = base;
                for j in base + 1..base + self.group_size {
                    if x[(ti, j)] > x[(ti, best)] {
                        best = j;
                    }
                }
                y[(ti, g)] = x[(ti, best)];
                indices[ti * self.n_groups + g] = best;
            }
        }
        Ok((y, LayerCache::ArgMax { indices }))
    }

    pub fn backward(&self, gy: &Array2<f64>, cache: &LayerCache) -> Result<Array2<f64>> {
        let LayerCache::ArgMax { indices } = cache else {
            return Err(Error::invalid("maxpool: wrong cache"));
        };
        let t = gy.nrows();
        let mut dx = Array2::zeros((t, self.in_dim()));
        for ti in 0..t {
            for g in 0..self.n_groups {
                dx[(ti, indices[ti * self.n_groups + g])] += gy[(ti, g)];
            }
        }
        Ok(dx)
    }
}

/// Elementwise `max(x, 0)`; subgradient 0 at x = 0.
#[derive(Debug, Clone)]
pub struct Relu {
    pub dim: usize,
}

impl Relu {
    pub fn new(dim: usize) -> Self {
        Relu { dim }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, LayerCache)> {
        let y = x.mapv(|v| v.max(0.0));
        Ok((y, LayerCache::Input { x: x.clone() }))
    }

    pub fn backward(&self, gy: &Array2<f64>, cache: &LayerCache) -> Result<Array2<f64>> {
        let LayerCache::Input { x } = cache else {
            return Err(Error::invalid("relu: wrong cache"));
        };
        let mut dx = gy.clone();
        for (d, &v) in dx.iter_mut().zip(x.iter()) {
            if v <= 0.0 {
                *d = 0.0;
            }
        }
        Ok(dx)
    }
}

/// Elementwise `log(max(x, floor))`; zero gradient in the clamped region.
#[derive(Debug, Clone)]
pub struct LogFloor {
    pub dim: usize,
    pub floor: f64,
}

impl LogFloor {
    pub fn new(dim: usize, floor: f64) -> Self {
        LogFloor { dim, floor }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, LayerCache)> {
        let y = x.mapv(|v| v.max(self.floor).ln());
        Ok((y, LayerCache::Input { x: x.clone() }))
    }

    pub fn backward(&self, gy: &Array2<f64>, cache: &LayerCache) -> Result<Array2<f64>> {
        let LayerCache::Input { x } = cache else {
            return Err(Error::invalid("log_floor: wrong cache"));
        };
        let mut dx = gy.clone();
        for (d, &v) in dx.iter_mut().zip(x.iter()) {
            if v > self.floor {
                *d /= v;
            } else {
                *d = 0.0;
            }
        }
        Ok(dx)
    }
}

pub(crate) fn column_sums(a: &Array2<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(a.ncols());
    for row in a.rows() {
        for (j, v) in row.iter().enumerate() {
            out[j] += v;
        }
    }
    out
}

/// Seeded uniform initializer shared by model builders.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
