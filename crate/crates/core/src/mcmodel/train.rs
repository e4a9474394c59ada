//! Truncated-BPTT training loop, evaluation, and the stage-wise procedure:
//! LFBE classifier first, then FE + classifier on single-channel DFT, then
//! joint optimization of the full multi-channel network.
//!
//! Data parallelism uses a fixed number of lanes. Lane `l` processes batch
//! positions `l, l + n_lanes, ...` sequentially and lanes are reduced in
//! index order, so results are bit-identical regardless of thread count.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    assemble, AssembleConfig, Checkpoint, FeInit, McArch, ModelGraph, ModelKind, ViewStats,
};
use crate::beamform::{select_max_energy, BeamformerBank};
use crate::error::{Error, Result};
use crate::gradnet::{softmax_xent_batch, GradStore};
use crate::mcmodel::{Adam, AdamConfig};
use crate::signal::{FrameSpec, SpectralFrame};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub bptt_length: usize,
    pub seed: u64,
    /// Fixed data-parallel lane count; part of the config so that results do
    /// not depend on the machine's core count.
    pub n_lanes: usize,
    /// Optional cap on chunks visited per epoch (subsampling).
    pub chunks_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 16,
            epochs: 20,
            bptt_length: 20,
            seed: 0,
            n_lanes: 4,
            chunks_per_epoch: None,
        }
    }
}

impl TrainConfig {
    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// One dataset view: per-utterance feature matrices (frames x dim, already
/// normalized) with aligned per-frame labels.
#[derive(Debug, Clone, Default)]
pub struct FeatureView {
    pub dim: usize,
    pub utterances: Vec<Array2<f32>>,
    pub labels: Vec<Vec<u16>>,
}

impl FeatureView {
    pub fn new(dim: usize) -> Self {
        FeatureView {
            dim,
            utterances: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn push(&mut self, features: Array2<f32>, labels: Vec<u16>) -> Result<()> {
        if features.ncols() != self.dim {
            return Err(Error::dim(self.dim, features.ncols(), "feature view dim"));
        }
        if features.nrows() != labels.len() {
            return Err(Error::dim(features.nrows(), labels.len(), "label alignment"));
        }
        self.utterances.push(features);
        self.labels.push(labels);
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        self.labels.iter().map(|l| l.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
struct Chunk {
    utt: u32,
    start: u32,
    len: u32,
}

fn chunk_list(view: &FeatureView, bptt: usize) -> Vec<Chunk> {
    let mut chunks = Vec::new();
    for (u, labels) in view.labels.iter().enumerate() {
        let t = labels.len();
        let mut start = 0;
        while start < t {
            let len = bptt.min(t - start);
            chunks.push(Chunk {
                utt: u as u32,
                start: start as u32,
                len: len as u32,
            });
            start += len;
        }
    }
    chunks
}

fn chunk_input(view: &FeatureView, c: Chunk) -> Array2<f64> {
    let utt = &view.utterances[c.utt as usize];
    let mut x = Array2::zeros((c.len as usize, view.dim));
    for t in 0..c.len as usize {
        for j in 0..view.dim {
            x[(t, j)] = utt[(c.start as usize + t, j)] as f64;
        }
    }
    x
}

fn chunk_labels(view: &FeatureView, c: Chunk) -> &[u16] {
    &view.labels[c.utt as usize][c.start as usize..(c.start + c.len) as usize]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub frame_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub frame_error_rate: f64,
    pub loss: f64,
    pub n_frames: usize,
}

fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Trains in place. Returns per-epoch logs (train split always, dev split
/// when provided).
pub fn train_model(
    model: &mut ModelGraph,
    train: &FeatureView,
    dev: Option<&FeatureView>,
    cfg: &TrainConfig,
) -> Result<Vec<EpochLog>> {
    if train.is_empty() {
        return Err(Error::NoData);
    }
    if train.dim != model.input_dim {
        return Err(Error::dim(model.input_dim, train.dim, "train view"));
    }
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);

    let all_chunks = chunk_list(train, cfg.bptt_length);
    let param_sizes: Vec<usize> = model.stack.params().iter().map(|p| p.len()).collect();
    let mut adam = Adam::new(cfg.adam(), &param_sizes);
    let n_lanes = cfg.n_lanes.max(1);
    let mut lane_stores: Vec<GradStore> = (0..n_lanes)
        .map(|_| GradStore::for_stack(&model.stack))
        .collect();
    let mut master = GradStore::for_stack(&model.stack);
    let mut logs = Vec::new();

    for epoch in 0..cfg.epochs {
        let mut order = all_chunks.clone();
        order.shuffle(&mut rng);
        if let Some(cap) = cfg.chunks_per_epoch {
            order.truncate(cap);
        }
        let mut epoch_loss = 0.0;
        let mut epoch_frames = 0usize;
        let mut epoch_errors = 0usize;

        for batch in order.chunks(cfg.batch_size) {
            for store in &mut lane_stores {
                store.zero();
            }
            let graph: &ModelGraph = model;
            let lane_stats: Vec<(f64, usize, usize)> = lane_stores
                .par_iter_mut()
                .enumerate()
                .map(|(lane, store)| -> Result<(f64, usize, usize)> {
                    let mut loss = 0.0;
                    let mut frames = 0usize;
                    let mut errors = 0usize;
                    for (pos, &chunk) in batch.iter().enumerate() {
                        if pos % n_lanes != lane {
                            continue;
                        }
                        let x = chunk_input(train, chunk);
                        let labels = chunk_labels(train, chunk);
                        let (logits, caches) = graph.forward(&x)?;
                        let (l, dlogits) = softmax_xent_batch(&logits, labels)?;
                        graph.stack.backward(&dlogits, &caches, store)?;
                        loss += l;
                        frames += labels.len();
                        for (t, &lab) in labels.iter().enumerate() {
                            if argmax_row(logits.row(t).as_slice().unwrap()) != lab as usize {
                                errors += 1;
                            }
                        }
                    }
                    Ok((loss, frames, errors))
                })
                .collect::<Result<Vec<_>>>()?;

            master.zero();
            let mut batch_loss = 0.0;
            let mut batch_frames = 0usize;
            for (lane, (loss, frames, errors)) in lane_stats.iter().enumerate() {
                master.add(&lane_stores[lane]);
                batch_loss += loss;
                batch_frames += frames;
                epoch_errors += errors;
            }
            if batch_frames == 0 {
                continue;
            }
            if !batch_loss.is_finite() {
                return Err(Error::invalid(format!(
                    "training diverged at epoch {epoch}: non-finite loss"
                )));
            }
            master.scale(1.0 / batch_frames as f64);
            let mut params = model.stack.params_mut();
            adam.step(&mut params, &master);
            epoch_loss += batch_loss;
            epoch_frames += batch_frames;
        }

        logs.push(EpochLog {
            epoch,
            split: "train".into(),
            loss: epoch_loss / epoch_frames.max(1) as f64,
            frame_error: epoch_errors as f64 / epoch_frames.max(1) as f64,
        });
        if let Some(dev) = dev {
            let r = evaluate(model, dev, cfg.bptt_length)?;
            logs.push(EpochLog {
                epoch,
                split: "dev".into(),
                loss: r.loss,
                frame_error: r.frame_error_rate,
            });
        }
    }
    Ok(logs)
}

/// Frame error rate and mean loss over a view, running the model in
/// training-length chunks (state resets every `bptt` frames).
pub fn evaluate(model: &ModelGraph, view: &FeatureView, bptt: usize) -> Result<EvalResult> {
    if view.is_empty() {
        return Err(Error::NoData);
    }
    if view.dim != model.input_dim {
        return Err(Error::dim(model.input_dim, view.dim, "eval view"));
    }
    let per_utt: Vec<(usize, f64, usize)> = (0..view.utterances.len())
        .into_par_iter()
        .map(|u| -> Result<(usize, f64, usize)> {
            let labels = &view.labels[u];
            let mut errors = 0usize;
            let mut loss = 0.0;
            let t = labels.len();
            let mut start = 0;
            while start < t {
                let len = bptt.min(t - start);
                let chunk = Chunk {
                    utt: u as u32,
                    start: start as u32,
                    len: len as u32,
                };
                let x = chunk_input(view, chunk);
                let (logits, _) = model.forward(&x)?;
                let lab = chunk_labels(view, chunk);
                let (l, _) = softmax_xent_batch(&logits, lab)?;
                loss += l;
                for (ti, &y) in lab.iter().enumerate() {
                    if argmax_row(logits.row(ti).as_slice().unwrap()) != y as usize {
                        errors += 1;
                    }
                }
                start += len;
            }
            Ok((errors, loss, t))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut errors = 0usize;
    let mut loss = 0.0;
    let mut frames = 0usize;
    for (e, l, n) in per_utt {
        errors += e;
        loss += l;
        frames += n;
    }
    Ok(EvalResult {
        frame_error_rate: errors as f64 / frames as f64,
        loss: loss / frames as f64,
        n_frames: frames,
    })
}

/// Relative reduction of `candidate` against `baseline`:
/// `(baseline - candidate) / baseline`.
pub fn relative_reduction(candidate: f64, baseline: f64) -> f64 {
    (baseline - candidate) / baseline
}

/// The classical reference front-end: per utterance, the max-energy
/// beamformer of `bank` is applied to the multi-channel view and its output
/// is scored with the single-channel (stage-2) model.
pub fn evaluate_sd_frontend(
    stage2: &ModelGraph,
    bank: &BeamformerBank,
    dftm_view: &FeatureView,
    spec: &FrameSpec,
    bptt: usize,
) -> Result<EvalResult> {
    if dftm_view.is_empty() {
        return Err(Error::NoData);
    }
    let k = bank.n_bins();
    let m = bank.n_channels();
    if dftm_view.dim != 2 * k * m {
        return Err(Error::dim(2 * k * m, dftm_view.dim, "sd frontend view"));
    }
    let per_utt: Vec<(usize, f64, usize)> = (0..dftm_view.utterances.len())
        .into_par_iter()
        .map(|u| -> Result<(usize, f64, usize)> {
            let utt = &dftm_view.utterances[u];
            let labels = &dftm_view.labels[u];
            let t = labels.len();
            // Rebuild complex snapshots and run max-energy selection.
            let frames: Vec<SpectralFrame> = (0..t)
                .map(|ti| {
                    let row: Vec<f64> =
                        utt.row(ti).iter().map(|&v| v as f64).collect();
                    SpectralFrame {
                        data: super::snapshot_from_interleaved(&row, k, m),
                        frame_index: ti,
                        spec: *spec,
                    }
                })
                .collect();
            let (_, output) = select_max_energy(bank, &frames)?;
            // Interleave the beamformed output as a single-channel view.
            let mut x_all = Array2::zeros((t, 2 * k));
            for ti in 0..t {
                for ki in 0..k {
                    x_all[(ti, 2 * ki)] = output[(ti, ki)].re;
                    x_all[(ti, 2 * ki + 1)] = output[(ti, ki)].im;
                }
            }
            let mut errors = 0usize;
            let mut loss = 0.0;
            let mut start = 0;
            while start < t {
                let len = bptt.min(t - start);
                let x = x_all.slice(ndarray::s![start..start + len, ..]).to_owned();
                let lab = &labels[start..start + len];
                let (logits, _) = stage2.forward(&x)?;
                let (l, _) = softmax_xent_batch(&logits, lab)?;
                loss += l;
                for (ti, &y) in lab.iter().enumerate() {
                    if argmax_row(logits.row(ti).as_slice().unwrap()) != y as usize {
                        errors += 1;
                    }
                }
                start += len;
            }
            Ok((errors, loss, t))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut errors = 0usize;
    let mut loss = 0.0;
    let mut frames = 0usize;
    for (e, l, n) in per_utt {
        errors += e;
        loss += l;
        frames += n;
    }
    Ok(EvalResult {
        frame_error_rate: errors as f64 / frames as f64,
        loss: loss / frames as f64,
        n_frames: frames,
    })
}

/// Train/dev pairs of the three aligned views of the same frames.
#[derive(Debug, Default)]
pub struct StagewiseData<'a> {
    pub lfbe: Option<(&'a FeatureView, &'a FeatureView)>,
    pub dft_single: Option<(&'a FeatureView, &'a FeatureView)>,
    pub dft_multi: Option<(&'a FeatureView, &'a FeatureView)>,
}

#[derive(Debug, Clone)]
pub struct StagewiseConfig {
    pub arch: McArch,
    pub fe_init: FeInit,
    pub assemble: AssembleConfig,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
    pub stage3: TrainConfig,
}

/// Stage 1: classification LSTM on LFBE features.
pub fn train_stage1(
    train: &FeatureView,
    dev: Option<&FeatureView>,
    dft_spec: &FrameSpec,
    cfg: &AssembleConfig,
    tc: &TrainConfig,
) -> Result<(ModelGraph, Vec<EpochLog>)> {
    let mut model = assemble(ModelKind::LfbeClassifier, dft_spec, None, FeInit::Mel, cfg)?;
    let logs = train_model(&mut model, train, dev, tc)?;
    Ok((model, logs))
}

/// Stage 2: FE + classifier on single-channel DFT, classifier initialized
/// from the stage-1 model.
pub fn train_stage2(
    stage1: &ModelGraph,
    train: &FeatureView,
    dev: Option<&FeatureView>,
    dft_spec: &FrameSpec,
    fe_init: FeInit,
    cfg: &AssembleConfig,
    tc: &TrainConfig,
) -> Result<(ModelGraph, Vec<EpochLog>)> {
    let mut model = assemble(ModelKind::DftSingle, dft_spec, None, fe_init, cfg)?;
    let copied = model.copy_tail_params_from(stage1);
    debug_assert!(copied >= cfg.lstm_layers + 1, "classifier must transfer");
    let logs = train_model(&mut model, train, dev, tc)?;
    Ok((model, logs))
}

/// Stage 3: joint optimization of the full multi-channel network, FE and
/// classifier initialized from the stage-2 model.
pub fn train_stage3(
    stage2: &ModelGraph,
    train: &FeatureView,
    dev: Option<&FeatureView>,
    arch: McArch,
    bank: Option<&BeamformerBank>,
    dft_spec: &FrameSpec,
    cfg: &AssembleConfig,
    tc: &TrainConfig,
) -> Result<(ModelGraph, Vec<EpochLog>)> {
    let fe_init = stage2.meta.fe_init.unwrap_or(FeInit::Mel);
    let mut model = assemble(ModelKind::DftMulti(arch), dft_spec, bank, fe_init, cfg)?;
    let copied = model.copy_tail_params_from(stage2);
    debug_assert!(copied >= cfg.lstm_layers + 4, "FE and classifier must transfer");
    let logs = train_model(&mut model, train, dev, tc)?;
    Ok((model, logs))
}

/// The full stage-wise procedure. Returns one checkpoint per stage.
pub fn stagewise_train(
    data: &StagewiseData<'_>,
    bank: Option<&BeamformerBank>,
    dft_spec: &FrameSpec,
    cfg: &StagewiseConfig,
) -> Result<Vec<Checkpoint>> {
    let (lfbe_train, lfbe_dev) = data.lfbe.ok_or(Error::MissingView("lfbe"))?;
    let (dft1_train, dft1_dev) = data
        .dft_single
        .ok_or(Error::MissingView("dft_single"))?;
    let (dftm_train, dftm_dev) = data.dft_multi.ok_or(Error::MissingView("dft_multi"))?;

    let (stage1, logs1) =
        train_stage1(lfbe_train, Some(lfbe_dev), dft_spec, &cfg.assemble, &cfg.stage1)?;
    let (stage2, logs2) = train_stage2(
        &stage1,
        dft1_train,
        Some(dft1_dev),
        dft_spec,
        cfg.fe_init,
        &cfg.assemble,
        &cfg.stage2,
    )?;
    let (stage3, logs3) = train_stage3(
        &stage2,
        dftm_train,
        Some(dftm_dev),
        cfg.arch,
        bank,
        dft_spec,
        &cfg.assemble,
        &cfg.stage3,
    )?;
    Ok(vec![
        Checkpoint::from_model(&stage1, None, logs1),
        Checkpoint::from_model(&stage2, None, logs2),
        Checkpoint::from_model(&stage3, None, logs3),
    ])
}

/// Writes epoch logs in the CSV training-log format.
pub fn logs_to_csv(logs: &[EpochLog]) -> String {
    let mut out = String::from("epoch,split,loss,frame_error\n");
    for l in logs {
        out.push_str(&format!(
            "{},{},{:.6},{:.6}\n",
            l.epoch, l.split, l.loss, l.frame_error
        ));
    }
    out
}
