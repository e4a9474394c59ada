//! Time-domain framing, DFT feature extraction, normalization, and the
//! reference LFBE pipeline.
//!
//! Two framing configurations are used throughout: a 12.5 ms window for the
//! DFT feature path (fft 256, 127 kept bins) and a 25 ms window for the LFBE
//! path (fft 512, 255 kept bins), both hopping every 10 ms at 16 kHz.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Variance floor applied when estimating global statistics.
pub const VAR_FLOOR: f64 = 1e-8;
/// Floor inside the log of the LFBE computation.
pub const LOG_FLOOR: f64 = 1e-7;
/// Default decay of the causal mean-subtraction running mean.
pub const CMS_DECAY: f64 = 0.995;
/// Default mel filter-bank size.
pub const DEFAULT_N_MELS: usize = 64;

/// Analysis framing parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub sample_rate_hz: u32,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub fft_size: usize,
    pub n_bins_kept: usize,
}

impl FrameSpec {
    pub fn new(
        sample_rate_hz: u32,
        window_ms: f64,
        hop_ms: f64,
        fft_size: usize,
    ) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::invalid("sample_rate_hz must be positive"));
        }
        if !(window_ms > 0.0) || !(hop_ms > 0.0) {
            return Err(Error::invalid("window_ms and hop_ms must be positive"));
        }
        if fft_size < 2 || !fft_size.is_power_of_two() {
            return Err(Error::invalid("fft_size must be a power of two >= 2"));
        }
        let spec = FrameSpec {
            sample_rate_hz,
            window_ms,
            hop_ms,
            fft_size,
            n_bins_kept: fft_size / 2 - 1,
        };
        if spec.window_len() > fft_size {
            return Err(Error::invalid(format!(
                "window of {} samples does not fit fft_size {}",
                spec.window_len(),
                fft_size
            )));
        }
        if spec.hop_len() == 0 {
            return Err(Error::invalid("hop shorter than one sample"));
        }
        Ok(spec)
    }

    /// DFT feature path: 12.5 ms window, 10 ms hop, fft 256, K = 127.
    pub fn dft_default() -> Self {
        Self::new(16_000, 12.5, 10.0, 256).expect("default spec is valid")
    }

    /// LFBE path: 25 ms window, 10 ms hop, fft 512, K = 255.
    pub fn lfbe_default() -> Self {
        Self::new(16_000, 25.0, 10.0, 512).expect("default spec is valid")
    }

    /// Window length in samples.
    pub fn window_len(&self) -> usize {
        (self.window_ms * self.sample_rate_hz as f64 / 1000.0).round() as usize
    }

    /// Hop length in samples.
    pub fn hop_len(&self) -> usize {
        (self.hop_ms * self.sample_rate_hz as f64 / 1000.0).round() as usize
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn n_frames(&self, len: usize) -> usize {
        let w = self.window_len();
        if len < w {
            0
        } else {
            (len - w) / self.hop_len() + 1
        }
    }

    /// Center frequency in Hz of kept bin `k` (0-based; true DFT bin `k + 1`).
    pub fn bin_freq_hz(&self, k: usize) -> f64 {
        (k + 1) as f64 * self.sample_rate_hz as f64 / self.fft_size as f64
    }

    /// Angular frequency of kept bin `k`.
    pub fn bin_omega(&self, k: usize) -> f64 {
        2.0 * std::f64::consts::PI * self.bin_freq_hz(k)
    }
}

/// Per-frame complex DFT snapshot across `M` channels and `K` kept bins.
#[derive(Debug, Clone)]
pub struct SpectralFrame {
    /// K x M complex DFT coefficients.
    pub data: Array2<Complex64>,
    pub frame_index: usize,
    pub spec: FrameSpec,
}

impl SpectralFrame {
    pub fn n_bins(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.data.ncols()
    }

    /// Flattens to the interleaved real layout: per frequency `k`,
    /// `[Re X_1, Im X_1, ..., Re X_M, Im X_M]`, frequencies concatenated.
    pub fn interleave(&self) -> Vec<f64> {
        let (k_bins, m) = (self.n_bins(), self.n_channels());
        let mut out = Vec::with_capacity(2 * k_bins * m);
        for k in 0..k_bins {
            for ch in 0..m {
                let x = self.data[(k, ch)];
                out.push(x.re);
                out.push(x.im);
            }
        }
        out
    }

    /// Power spectrum |X|^2 of a single channel.
    pub fn power_spectrum(&self, channel: usize) -> Vec<f64> {
        self.data.column(channel).iter().map(|x| x.norm_sqr()).collect()
    }
}

/// Global per-dimension mean and variance, estimated once over a training
/// corpus and applied identically at train and test time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalStats {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl GlobalStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Periodic Hann window of length `len`.
pub fn hann_periodic(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

/// Splits `samples` into overlapping frames and applies a periodic Hann
/// window. Returns a T x W matrix; a signal shorter than one window yields
/// zero frames.
pub fn frame_and_window(samples: &[f64], spec: &FrameSpec) -> Array2<f64> {
    let w = spec.window_len();
    let hop = spec.hop_len();
    let t = spec.n_frames(samples.len());
    let window = hann_periodic(w);
    let mut frames = Array2::zeros((t, w));
    for ti in 0..t {
        let start = ti * hop;
        for n in 0..w {
            frames[(ti, n)] = samples[start + n] * window[n];
        }
    }
    frames
}

/// Reusable FFT plan for one [`FrameSpec`].
pub struct Stft {
    spec: FrameSpec,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(spec: FrameSpec) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(spec.fft_size);
        Stft { spec, fft }
    }

    pub fn spec(&self) -> &FrameSpec {
        &self.spec
    }

    /// DFT of one already-windowed frame, zero-padded to `fft_size`; returns
    /// the K kept bins (DC and Nyquist removed).
    pub fn transform_frame(&self, frame: &[f64]) -> Vec<Complex64> {
        let n = self.spec.fft_size;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (b, &x) in buf.iter_mut().zip(frame.iter()) {
            b.re = x;
        }
        self.fft.process(&mut buf);
        buf[1..n / 2].to_vec()
    }

    /// Full STFT of a multi-channel waveform (M x N). All channels share the
    /// framing; each output frame holds a K x M snapshot.
    pub fn process_multichannel(&self, wave: ArrayView2<'_, f64>) -> Vec<SpectralFrame> {
        let m = wave.nrows();
        let len = wave.ncols();
        let t = self.spec.n_frames(len);
        let w = self.spec.window_len();
        let hop = self.spec.hop_len();
        let window = hann_periodic(w);
        let k_bins = self.spec.n_bins_kept;
        let mut frames = Vec::with_capacity(t);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.spec.fft_size];
        for ti in 0..t {
            let mut data = Array2::from_elem((k_bins, m), Complex64::new(0.0, 0.0));
            for ch in 0..m {
                for b in buf.iter_mut() {
                    *b = Complex64::new(0.0, 0.0);
                }
                let start = ti * hop;
                for n in 0..w {
                    buf[n].re = wave[(ch, start + n)] * window[n];
                }
                self.fft.process(&mut buf);
                for k in 0..k_bins {
                    data[(k, ch)] = buf[k + 1];
                }
            }
            frames.push(SpectralFrame {
                data,
                frame_index: ti,
                spec: self.spec,
            });
        }
        frames
    }
}

/// DFT features of pre-windowed frames (single channel): keeps bins
/// `1..fft_size/2` of each frame's DFT.
pub fn dft_features(frames: ArrayView2<'_, f64>, spec: &FrameSpec) -> Vec<SpectralFrame> {
    let stft = Stft::new(*spec);
    let k_bins = spec.n_bins_kept;
    frames
        .rows()
        .into_iter()
        .enumerate()
        .map(|(ti, row)| {
            let bins = stft.transform_frame(row.as_slice().expect("contiguous frame"));
            let data = Array2::from_shape_vec((k_bins, 1), bins).expect("bin count");
            SpectralFrame {
                data,
                frame_index: ti,
                spec: *spec,
            }
        })
        .collect()
}

/// Streaming mean/variance accumulator (Welford).
#[derive(Debug, Clone)]
pub struct StatsAccumulator {
    n: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl StatsAccumulator {
    pub fn new(dim: usize) -> Self {
        StatsAccumulator {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn push(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.mean.len() {
            return Err(Error::dim(self.mean.len(), x.len(), "stats accumulator"));
        }
        self.n += 1;
        let inv_n = 1.0 / self.n as f64;
        for (i, &xi) in x.iter().enumerate() {
            let delta = xi - self.mean[i];
            self.mean[i] += delta * inv_n;
            self.m2[i] += delta * (xi - self.mean[i]);
        }
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    /// Population variance, floored at [`VAR_FLOOR`].
    pub fn finish(self) -> Result<GlobalStats> {
        if self.n == 0 {
            return Err(Error::NoData);
        }
        let n = self.n as f64;
        let variance = self.m2.iter().map(|&s| (s / n).max(VAR_FLOOR)).collect();
        Ok(GlobalStats {
            mean: self.mean,
            variance,
        })
    }
}

/// Per-dimension mean and population variance over a stream of vectors.
pub fn estimate_global_stats<'a, I>(rows: I) -> Result<GlobalStats>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut iter = rows.into_iter();
    let first = iter.next().ok_or(Error::NoData)?;
    let mut acc = StatsAccumulator::new(first.len());
    acc.push(first)?;
    for row in iter {
        acc.push(row)?;
    }
    acc.finish()
}

/// `(x - mean) / sqrt(variance)`, elementwise.
pub fn global_normalize(x: &[f64], stats: &GlobalStats) -> Result<Vec<f64>> {
    if x.len() != stats.dim() {
        return Err(Error::dim(stats.dim(), x.len(), "global_normalize"));
    }
    Ok(x.iter()
        .zip(stats.mean.iter().zip(stats.variance.iter()))
        .map(|(&xi, (&m, &v))| (xi - m) / v.sqrt())
        .collect())
}

/// Inverse of [`global_normalize`].
pub fn global_denormalize(y: &[f64], stats: &GlobalStats) -> Result<Vec<f64>> {
    if y.len() != stats.dim() {
        return Err(Error::dim(stats.dim(), y.len(), "global_denormalize"));
    }
    Ok(y.iter()
        .zip(stats.mean.iter().zip(stats.variance.iter()))
        .map(|(&yi, (&m, &v))| yi * v.sqrt() + m)
        .collect())
}

/// Mel scale: `mel(f) = 2595 log10(1 + f / 700)`.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filter bank with unit peaks, n_mels x K, evaluated at the
/// kept-bin center frequencies. Centers are equally spaced on the mel scale
/// between 0 Hz and Nyquist.
pub fn mel_filterbank(n_mels: usize, spec: &FrameSpec) -> Result<Array2<f64>> {
    let k_bins = spec.n_bins_kept;
    if n_mels == 0 {
        return Err(Error::invalid("n_mels must be >= 1"));
    }
    if n_mels > k_bins {
        return Err(Error::invalid(format!(
            "n_mels {n_mels} exceeds number of kept bins {k_bins}"
        )));
    }
    let nyquist = spec.sample_rate_hz as f64 / 2.0;
    let mel_max = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_freqs: Vec<f64> = (0..k_bins).map(|k| spec.bin_freq_hz(k)).collect();

    let mut fb = Array2::zeros((n_mels, k_bins));
    for m in 0..n_mels {
        let (lo, ctr, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for (k, &f) in bin_freqs.iter().enumerate() {
            let rising = (f - lo) / (ctr - lo);
            let falling = (hi - f) / (hi - ctr);
            fb[(m, k)] = rising.min(falling).max(0.0);
        }
    }
    // Narrow low-frequency triangles can fall entirely between bin centers;
    // give such filters unit weight at the bin nearest their center so every
    // row stays active.
    for m in 0..n_mels {
        if fb.row(m).iter().all(|&w| w == 0.0) {
            let ctr = edges[m + 1];
            let nearest = bin_freqs
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    (*a - ctr).abs().partial_cmp(&(*b - ctr).abs()).unwrap()
                })
                .map(|(k, _)| k)
                .unwrap();
            fb[(m, nearest)] = 1.0;
        }
    }
    Ok(fb)
}

/// Log filter-bank energies: `log(max(fb * power, floor))`.
pub fn lfbe(power_spectrum: &[f64], fb: &Array2<f64>, floor: f64) -> Result<Vec<f64>> {
    if power_spectrum.len() != fb.ncols() {
        return Err(Error::dim(fb.ncols(), power_spectrum.len(), "lfbe"));
    }
    if !(floor > 0.0) {
        return Err(Error::invalid("lfbe floor must be positive"));
    }
    if power_spectrum.iter().any(|&p| p < 0.0) {
        return Err(Error::invalid("negative power spectrum input"));
    }
    Ok(fb
        .rows()
        .into_iter()
        .map(|row| {
            let e: f64 = row
                .iter()
                .zip(power_spectrum.iter())
                .map(|(&w, &p)| w * p)
                .sum();
            e.max(floor).ln()
        })
        .collect())
}

/// Online causal mean subtraction: `y_t = x_t - m_{t-1}` with
/// `m_t = decay * m_{t-1} + (1 - decay) * x_t`, the running mean initialized
/// to `init_mean`. Strictly causal: the subtracted mean never sees frame `t`.
pub fn causal_mean_subtract(
    features: ArrayView2<'_, f64>,
    decay: f64,
    init_mean: &[f64],
) -> Result<Array2<f64>> {
    if !(decay > 0.0 && decay < 1.0) {
        return Err(Error::invalid("decay must be in (0, 1)"));
    }
    let dim = features.ncols();
    if init_mean.len() != dim {
        return Err(Error::dim(dim, init_mean.len(), "causal_mean_subtract"));
    }
    let mut mean = init_mean.to_vec();
    let mut out = Array2::zeros(features.raw_dim());
    for (t, row) in features.rows().into_iter().enumerate() {
        for (d, &x) in row.iter().enumerate() {
            out[(t, d)] = x - mean[d];
            mean[d] = decay * mean[d] + (1.0 - decay) * x;
        }
    }
    Ok(out)
}
