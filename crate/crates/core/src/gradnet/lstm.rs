//! Unidirectional LSTM without peepholes. Gates use sigmoid, the cell
//! candidate uses tanh, and the forget-gate bias initializes to 1.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{DiffTensor, LayerCache};
use crate::error::{Error, Result};

/// Gate row blocks inside the stacked 4H weight matrices: input, forget,
/// cell candidate, output.
const GATE_I: usize = 0;
const GATE_F: usize = 1;
const GATE_G: usize = 2;
const GATE_O: usize = 3;

#[derive(Debug, Clone)]
pub struct Lstm {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_x: DiffTensor, // 4H x Q
    pub w_h: DiffTensor, // 4H x H
    pub b: DiffTensor,   // 4H
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    x: Array2<f64>,
    gates_i: Array2<f64>,
    gates_f: Array2<f64>,
    gates_g: Array2<f64>,
    gates_o: Array2<f64>,
    cells: Array2<f64>,
    cells_tanh: Array2<f64>,
    hidden: Array2<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Lstm {
    pub fn zeros(hidden_dim: usize, input_dim: usize) -> Self {
        Lstm {
            input_dim,
            hidden_dim,
            w_x: DiffTensor::zeros(&[4 * hidden_dim, input_dim]),
            w_h: DiffTensor::zeros(&[4 * hidden_dim, hidden_dim]),
            b: DiffTensor::zeros(&[4 * hidden_dim]),
        }
    }

    /// Uniform(-scale, scale) weights, zero biases except the forget gate
    /// bias at 1.
    pub fn random(hidden_dim: usize, input_dim: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut l = Self::zeros(hidden_dim, input_dim);
        for v in l.w_x.values_mut() {
            *v = rng.gen_range(-scale..scale);
        }
        for v in l.w_h.values_mut() {
            *v = rng.gen_range(-scale..scale);
        }
        for h in 0..hidden_dim {
            l.b.values_mut()[GATE_F * hidden_dim + h] = 1.0;
        }
        l
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, LayerCache)> {
        let t = x.nrows();
        let h_dim = self.hidden_dim;
        // Input projections for the whole sequence in one product.
        let zx = x.dot(&self.w_x.matrix().t()); // T x 4H
        let wh = self.w_h.matrix();
        let b = self.b.values();

        let mut gates_i = Array2::zeros((t, h_dim));
        let mut gates_f = Array2::zeros((t, h_dim));
        let mut gates_g = Array2::zeros((t, h_dim));
        let mut gates_o = Array2::zeros((t, h_dim));
        let mut cells = Array2::zeros((t, h_dim));
        let mut cells_tanh = Array2::zeros((t, h_dim));
        let mut hidden = Array2::zeros((t, h_dim));

        let mut h_prev = Array1::<f64>::zeros(h_dim);
        let mut c_prev = Array1::<f64>::zeros(h_dim);
        for ti in 0..t {
            let zh = wh.dot(&h_prev); // 4H
            for j in 0..h_dim {
                let zi = zx[(ti, GATE_I * h_dim + j)] + zh[GATE_I * h_dim + j] + b[GATE_I * h_dim + j];
                let zf = zx[(ti, GATE_F * h_dim + j)] + zh[GATE_F * h_dim + j] + b[GATE_F * h_dim + j];
                let zg = zx[(ti, GATE_G * h_dim + j)] + zh[GATE_G * h_dim + j] + b[GATE_G * h_dim + j];
                let zo = zx[(ti, GATE_O * h_dim + j)] + zh[GATE_O * h_dim + j] + b[GATE_O * h_dim + j];
                let i = sigmoid(zi);
                let f = sigmoid(zf);
                let g = zg.tanh();
                let o = sigmoid(zo);
                let c = f * c_prev[j] + i * g;
                let tc = c.tanh();
                gates_i[(ti, j)] = i;
                gates_f[(ti, j)] = f;
                gates_g[(ti, j)] = g;
                gates_o[(ti, j)] = o;
                cells[(ti, j)] = c;
                cells_tanh[(ti, j)] = tc;
                hidden[(ti, j)] = o * tc;
            }
            h_prev.assign(&hidden.row(ti));
            c_prev.assign(&cells.row(ti));
        }
        let y = hidden.clone();
        Ok((
            y,
            LayerCache::Lstm(LstmCache {
                x: x.clone(),
                gates_i,
                gates_f,
                gates_g,
                gates_o,
                cells,
                cells_tanh,
                hidden,
            }),
        ))
    }

    pub fn backward(
        &self,
        gy: &Array2<f64>,
        cache: &LayerCache,
        sink: &mut [Vec<f64>],
    ) -> Result<Array2<f64>> {
        let LayerCache::Lstm(c) = cache else {
            return Err(Error::invalid("lstm: wrong cache"));
        };
        let t = gy.nrows();
        let h_dim = self.hidden_dim;
        let wh = self.w_h.matrix();

        // Pre-activation gradients per step, collected for batched parameter
        // gradient products afterwards.
        let mut dz = Array2::zeros((t, 4 * h_dim));
        let mut dh_next = Array1::<f64>::zeros(h_dim);
        let mut dc_next = Array1::<f64>::zeros(h_dim);
        for ti in (0..t).rev() {
            let mut dz_t = Array1::<f64>::zeros(4 * h_dim);
            for j in 0..h_dim {
                let dh = gy[(ti, j)] + dh_next[j];
                let o = c.gates_o[(ti, j)];
                let tc = c.cells_tanh[(ti, j)];
                let d_o = dh * tc;
                let dc = dc_next[j] + dh * o * (1.0 - tc * tc);
                let i = c.gates_i[(ti, j)];
                let f = c.gates_f[(ti, j)];
                let g = c.gates_g[(ti, j)];
                let c_prev = if ti > 0 { c.cells[(ti - 1, j)] } else { 0.0 };
                let d_i = dc * g;
                let d_g = dc * i;
                let d_f = dc * c_prev;
                dc_next[j] = dc * f;
                dz_t[GATE_I * h_dim + j] = d_i * i * (1.0 - i);
                dz_t[GATE_F * h_dim + j] = d_f * f * (1.0 - f);
                dz_t[GATE_G * h_dim + j] = d_g * (1.0 - g * g);
                dz_t[GATE_O * h_dim + j] = d_o * o * (1.0 - o);
            }
            // dh_{t-1} = W_h^T dz_t
            dh_next = wh.t().dot(&dz_t);
            dz.row_mut(ti).assign(&dz_t);
        }

        // dW_x = dz^T x ; dW_h = dz^T h_prev ; db = column sums of dz.
        let dwx = dz.t().dot(&c.x);
        for (g, d) in sink[0].iter_mut().zip(dwx.iter()) {
            *g += d;
        }
        let mut h_prev_rows = Array2::zeros((t, h_dim));
        for ti in 1..t {
            for j in 0..h_dim {
                h_prev_rows[(ti, j)] = c.hidden[(ti - 1, j)];
            }
        }
        let dwh = dz.t().dot(&h_prev_rows);
        for (g, d) in sink[1].iter_mut().zip(dwh.iter()) {
            *g += d;
        }
        for row in dz.rows() {
            for (j, v) in row.iter().enumerate() {
                sink[2][j] += v;
            }
        }
        // dx = dz W_x
        Ok(dz.dot(&self.w_x.matrix()))
    }
}
