//! Model assembly: the LFBE baseline classifier, the single-channel DFT
//! model, and the three multi-channel front-ends (CAT, DSF, ESF) with
//! beamformer or random initialization.
//!
//! All models share the same classifier shape (LSTM stack, affine, softmax)
//! and, past the front-end, the same feature-extraction block
//! (affine initialized from mel filter-bank values, ReLU, log).

mod adam;
mod checkpoint;
mod train;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, LayerSpec, ParamBlob, CHECKPOINT_VERSION};
pub use train::{
    evaluate, evaluate_sd_frontend, logs_to_csv, relative_reduction, stagewise_train, train_model,
    train_stage1, train_stage2, train_stage3, EpochLog, EvalResult, FeatureView, StagewiseConfig,
    StagewiseData, TrainConfig,
};

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::beamform::BeamformerBank;
use crate::error::{Error, Result};
use crate::gradnet::{
    Affine, BlockComplexAffine, ComplexAffine, Layer, LayerCache, LayerStack, LogFloor, Lstm,
    MaxPoolGroups, PowPairs, Relu, DEFAULT_LOG_EPS,
};
use crate::signal::{mel_filterbank, FrameSpec, GlobalStats};

/// What the model consumes per frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    Lfbe,
    DftSingle,
    DftMulti,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McVariant {
    Cat,
    Dsf,
    Esf,
}

impl McVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            McVariant::Cat => "cat",
            McVariant::Dsf => "dsf",
            McVariant::Esf => "esf",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Beamformer,
    Random,
}

/// Multi-channel front-end shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McArch {
    pub variant: McVariant,
    pub n_directions: usize,
    pub n_bins: usize,
    pub n_channels: usize,
    pub init: InitMode,
}

/// Feature-extraction affine initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeInit {
    Mel,
    Random,
}

/// Shared assembly knobs. The desk-scale classifier is 2 LSTM layers of 64
/// cells; the published system used 5 layers of 768 cells with 3101 outputs,
/// selectable through these fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssembleConfig {
    pub n_classes: usize,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub n_mels: usize,
    pub log_floor: f64,
    pub seed: u64,
}

impl Default for AssembleConfig {
    fn default() -> Self {
        AssembleConfig {
            n_classes: 8,
            lstm_hidden: 64,
            lstm_layers: 2,
            n_mels: 64,
            log_floor: DEFAULT_LOG_EPS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ModelMeta {
    pub arch: Option<McArch>,
    pub dft_spec: Option<FrameSpec>,
    pub n_mels: usize,
    pub fe_init: Option<FeInit>,
    pub stage: u8,
    #[serde(default)]
    pub config_digest: String,
}

/// Ordered layer stack with input/output contracts and metadata.
#[derive(Debug, Clone)]
pub struct ModelGraph {
    pub stack: LayerStack,
    pub input_kind: InputKind,
    pub input_dim: usize,
    pub n_classes: usize,
    pub meta: ModelMeta,
}

impl ModelGraph {
    pub fn new(
        stack: LayerStack,
        input_kind: InputKind,
        input_dim: usize,
        n_classes: usize,
        meta: ModelMeta,
    ) -> Result<Self> {
        let out = stack.validate_chain(input_dim)?;
        if out != n_classes {
            return Err(Error::dim(n_classes, out, "model output"));
        }
        Ok(ModelGraph {
            stack,
            input_kind,
            input_dim,
            n_classes,
            meta,
        })
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, Vec<LayerCache>)> {
        self.stack.forward(x)
    }

    /// Copies parameters of the longest matching trailing sub-stack from
    /// `donor` (matched by layer kind and parameter shapes). Returns how many
    /// layers were copied. Used by stage-wise training to seed the classifier
    /// and feature-extraction blocks.
    pub fn copy_tail_params_from(&mut self, donor: &ModelGraph) -> usize {
        let n_self = self.stack.layers.len();
        let n_donor = donor.stack.layers.len();
        let mut copied = 0;
        for i in 0..n_self.min(n_donor) {
            let a = n_self - 1 - i;
            let b = n_donor - 1 - i;
            let same = {
                let la = &self.stack.layers[a];
                let lb = &donor.stack.layers[b];
                la.name() == lb.name()
                    && la
                        .params()
                        .iter()
                        .map(|p| p.shape().to_vec())
                        .collect::<Vec<_>>()
                        == lb
                            .params()
                            .iter()
                            .map(|p| p.shape().to_vec())
                            .collect::<Vec<_>>()
            };
            if !same {
                break;
            }
            let src: Vec<Vec<f64>> = donor.stack.layers[b]
                .params()
                .iter()
                .map(|p| p.values().to_vec())
                .collect();
            for (dst, s) in self.stack.layers[a].params_mut().into_iter().zip(src) {
                dst.values_mut().copy_from_slice(&s);
            }
            copied += 1;
        }
        copied
    }
}

/// Feature-extraction block: affine (n_mels x K) -> ReLU -> floored log.
/// With mel initialization and non-negative input it reproduces the LFBE
/// computation exactly.
pub fn build_fe_dnn(
    k_bins: usize,
    n_mels: usize,
    init: FeInit,
    dft_spec: &FrameSpec,
    log_floor: f64,
    seed: u64,
) -> Result<Vec<Layer>> {
    let affine = match init {
        FeInit::Mel => {
            let fb = mel_filterbank(n_mels, dft_spec)?;
            Affine::from_matrix(fb, vec![0.0; n_mels])?
        }
        FeInit::Random => {
            // Non-negative draws keep the log input safe at step zero.
            let mut rng = crate::gradnet::seeded_rng(seed ^ 0xfe00);
            Affine::random_nonneg(n_mels, k_bins, 2.0 / k_bins as f64, &mut rng)
        }
    };
    Ok(vec![
        Layer::Affine(affine),
        Layer::Relu(Relu::new(n_mels)),
        Layer::LogFloor(LogFloor::new(n_mels, log_floor)),
    ])
}

/// Classification block: LSTM stack followed by an affine over classes.
fn build_classifier(
    in_dim: usize,
    hidden: usize,
    n_layers: usize,
    n_classes: usize,
    seed: u64,
) -> Vec<Layer> {
    let mut rng = crate::gradnet::seeded_rng(seed ^ 0xc1a5);
    let mut layers = Vec::new();
    let mut dim = in_dim;
    let scale = 1.0 / (hidden as f64).sqrt();
    for _ in 0..n_layers {
        layers.push(Layer::Lstm(Lstm::random(hidden, dim, scale, &mut rng)));
        dim = hidden;
    }
    layers.push(Layer::Affine(Affine::random(
        n_classes, dim, scale, &mut rng,
    )));
    layers
}

/// Builds the multi-channel front-end stack for one architecture. All
/// variants map the interleaved 2KM input to K spectral powers.
pub fn build_mc_front(arch: &McArch, bank: Option<&BeamformerBank>) -> Result<Vec<Layer>> {
    let (k, d, m) = (arch.n_bins, arch.n_directions, arch.n_channels);
    if let Some(bank) = bank {
        if bank.n_bins() != k || bank.n_directions() != d || bank.n_channels() != m {
            return Err(Error::invalid(format!(
                "bank shape {}x{}x{} does not match arch {}x{}x{}",
                bank.n_directions(),
                bank.n_bins(),
                bank.n_channels(),
                d,
                k,
                m
            )));
        }
    }
    if arch.init == InitMode::Beamformer && bank.is_none() {
        return Err(Error::invalid("beamformer init requires a bank"));
    }
    let seed = 0x5f00 ^ ((d as u64) << 32) ^ ((k as u64) << 8) ^ m as u64;
    let mut rng = crate::gradnet::seeded_rng(seed);

    match arch.variant {
        McVariant::Cat => {
            // Dense complex affine K <- MK, then complex square.
            let layer = match arch.init {
                InitMode::Beamformer => {
                    let bank = bank.expect("checked above");
                    let mut l = ComplexAffine::zeros(k, m * k);
                    // Row k holds the conjugated direction-0 weights in its
                    // own frequency block: the layer then computes w^H X.
                    for ki in 0..k {
                        for mi in 0..m {
                            let w = bank.weights[(0, ki, mi)];
                            let col = ki * m + mi;
                            l.w_re.values_mut()[ki * (m * k) + col] = w.re;
                            l.w_im.values_mut()[ki * (m * k) + col] = -w.im;
                        }
                    }
                    l
                }
                InitMode::Random => {
                    let scale = (3.0 / (2.0 * (m * k) as f64)).sqrt();
                    ComplexAffine::random(k, m * k, scale, &mut rng)
                }
            };
            Ok(vec![
                Layer::ComplexAffine(layer),
                Layer::PowPairs(PowPairs::new(k)),
            ])
        }
        McVariant::Dsf => {
            // Dense real matrix 2DK x 2MK, block-sparse at initialization,
            // free to mix frequencies during training.
            let mut affine = match arch.init {
                InitMode::Beamformer => Affine::zeros(2 * d * k, 2 * m * k),
                InitMode::Random => {
                    let scale = (3.0 / (2.0 * (m * k) as f64)).sqrt();
                    Affine::random(2 * d * k, 2 * m * k, scale, &mut rng)
                }
            };
            if arch.init == InitMode::Beamformer {
                let bank = bank.expect("checked above");
                let cols = 2 * m * k;
                for ki in 0..k {
                    for di in 0..d {
                        let row_re = 2 * (ki * d + di);
                        let row_im = row_re + 1;
                        for mi in 0..m {
                            let w = bank.weights[(di, ki, mi)];
                            let col = 2 * (ki * m + mi);
                            let vals = affine.w.values_mut();
                            vals[row_re * cols + col] = w.re;
                            vals[row_re * cols + col + 1] = w.im;
                            vals[row_im * cols + col] = -w.im;
                            vals[row_im * cols + col + 1] = w.re;
                        }
                    }
                }
            }
            Ok(vec![
                Layer::Affine(affine),
                Layer::PowPairs(PowPairs::new(d * k)),
                Layer::MaxPoolGroups(MaxPoolGroups::new(d, k)),
            ])
        }
        McVariant::Esf => {
            // Frequency-blocked complex affines (hard constraint), power,
            // then a trainable combiner initialized to the average over
            // directions, and ReLU.
            let mut blocks = match arch.init {
                InitMode::Beamformer => BlockComplexAffine::zeros(k, d, m),
                InitMode::Random => {
                    let scale = (3.0 / (2.0 * m as f64)).sqrt();
                    BlockComplexAffine::random(k, d, m, scale, &mut rng)
                }
            };
            if arch.init == InitMode::Beamformer {
                let bank = bank.expect("checked above");
                for ki in 0..k {
                    for di in 0..d {
                        for mi in 0..m {
                            let w = bank.weights[(di, ki, mi)];
                            let idx = (ki * d + di) * m + mi;
                            blocks.w_re.values_mut()[idx] = w.re;
                            blocks.w_im.values_mut()[idx] = -w.im;
                        }
                    }
                }
            }
            let mut combiner = Affine::zeros(k, d * k);
            for ki in 0..k {
                for di in 0..d {
                    combiner.w.values_mut()[ki * (d * k) + ki * d + di] = 1.0 / d as f64;
                }
            }
            Ok(vec![
                Layer::BlockComplexAffine(blocks),
                Layer::PowPairs(PowPairs::new(d * k)),
                Layer::Affine(combiner),
                Layer::Relu(Relu::new(k)),
            ])
        }
    }
}

/// Model families assembled by [`assemble`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// LFBE features straight into the classifier.
    LfbeClassifier,
    /// Single-channel DFT: power, FE block, classifier.
    DftSingle,
    /// Multi-channel DFT: MC front-end, FE block, classifier.
    DftMulti(McArch),
}

/// Assembles a full model graph.
pub fn assemble(
    kind: ModelKind,
    dft_spec: &FrameSpec,
    bank: Option<&BeamformerBank>,
    fe_init: FeInit,
    cfg: &AssembleConfig,
) -> Result<ModelGraph> {
    let k = dft_spec.n_bins_kept;
    let mut layers = Vec::new();
    let (input_kind, input_dim, arch_meta, stage) = match kind {
        ModelKind::LfbeClassifier => (InputKind::Lfbe, cfg.n_mels, None, 1),
        ModelKind::DftSingle => {
            layers.push(Layer::PowPairs(PowPairs::new(k)));
            (InputKind::DftSingle, 2 * k, None, 2)
        }
        ModelKind::DftMulti(arch) => {
            if arch.n_bins != k {
                return Err(Error::dim(k, arch.n_bins, "arch bins"));
            }
            layers.extend(build_mc_front(&arch, bank)?);
            (
                InputKind::DftMulti,
                2 * k * arch.n_channels,
                Some(arch),
                3,
            )
        }
    };
    if kind != ModelKind::LfbeClassifier {
        layers.extend(build_fe_dnn(
            k,
            cfg.n_mels,
            fe_init,
            dft_spec,
            cfg.log_floor,
            cfg.seed,
        )?);
    }
    layers.extend(build_classifier(
        cfg.n_mels,
        cfg.lstm_hidden,
        cfg.lstm_layers,
        cfg.n_classes,
        cfg.seed,
    ));
    let meta = ModelMeta {
        arch: arch_meta,
        dft_spec: Some(*dft_spec),
        n_mels: cfg.n_mels,
        fe_init: Some(fe_init),
        stage,
        config_digest: String::new(),
    };
    ModelGraph::new(
        LayerStack::new(layers),
        input_kind,
        input_dim,
        cfg.n_classes,
        meta,
    )
}

/// Reconstructs a complex K x M snapshot from an interleaved feature row.
pub(crate) fn snapshot_from_interleaved(row: &[f64], k: usize, m: usize) -> Array2<Complex64> {
    let mut data = Array2::from_elem((k, m), Complex64::new(0.0, 0.0));
    for ki in 0..k {
        for mi in 0..m {
            let base = 2 * (ki * m + mi);
            data[(ki, mi)] = Complex64::new(row[base], row[base + 1]);
        }
    }
    data
}

/// Stats bundle attached to checkpoints so evaluation can reproduce the
/// exact normalization of the training run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ViewStats {
    pub stats: GlobalStats,
    /// For the LFBE view: the pre-CMS global mean used to seed the running
    /// mean.
    pub cms_init_mean: Option<Vec<f64>>,
}
