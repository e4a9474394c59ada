//! Versioned checkpoint files: a JSON envelope with layer specs and named
//! base64-encoded float64 parameter arrays. Load -> save round-trips are
//! byte-identical.

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{EpochLog, InputKind, ModelGraph, ModelMeta, ViewStats};
use crate::error::{Error, Result};
use crate::gradnet::{
    Affine, BlockComplexAffine, ComplexAffine, Layer, LayerStack, LogFloor, Lstm, MaxPoolGroups,
    PowPairs, Relu,
};
use crate::io::atomic_write;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Structural description of one layer, sufficient to rebuild it with zeroed
/// parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Affine {
        out_dim: usize,
        in_dim: usize,
    },
    ComplexAffine {
        out_pairs: usize,
        in_pairs: usize,
    },
    BlockComplexAffine {
        n_blocks: usize,
        out_per_block: usize,
        in_per_block: usize,
    },
    PowPairs {
        pairs: usize,
    },
    MaxPoolGroups {
        group_size: usize,
        n_groups: usize,
    },
    Relu {
        dim: usize,
    },
    LogFloor {
        dim: usize,
        floor: f64,
    },
    Lstm {
        hidden_dim: usize,
        input_dim: usize,
    },
}

impl LayerSpec {
    fn of(layer: &Layer) -> Self {
        match layer {
            Layer::Affine(l) => LayerSpec::Affine {
                out_dim: l.out_dim(),
                in_dim: l.in_dim(),
            },
            Layer::ComplexAffine(l) => LayerSpec::ComplexAffine {
                out_pairs: l.out_dim() / 2,
                in_pairs: l.in_dim() / 2,
            },
            Layer::BlockComplexAffine(l) => LayerSpec::BlockComplexAffine {
                n_blocks: l.n_blocks,
                out_per_block: l.out_per_block,
                in_per_block: l.in_per_block,
            },
            Layer::PowPairs(l) => LayerSpec::PowPairs { pairs: l.pairs },
            Layer::MaxPoolGroups(l) => LayerSpec::MaxPoolGroups {
                group_size: l.group_size,
                n_groups: l.n_groups,
            },
            Layer::Relu(l) => LayerSpec::Relu { dim: l.dim },
            Layer::LogFloor(l) => LayerSpec::LogFloor {
                dim: l.dim,
                floor: l.floor,
            },
            Layer::Lstm(l) => LayerSpec::Lstm {
                hidden_dim: l.hidden_dim,
                input_dim: l.input_dim,
            },
        }
    }

    fn build(&self) -> Layer {
        match *self {
            LayerSpec::Affine { out_dim, in_dim } => Layer::Affine(Affine::zeros(out_dim, in_dim)),
            LayerSpec::ComplexAffine {
                out_pairs,
                in_pairs,
            } => Layer::ComplexAffine(ComplexAffine::zeros(out_pairs, in_pairs)),
            LayerSpec::BlockComplexAffine {
                n_blocks,
                out_per_block,
                in_per_block,
            } => Layer::BlockComplexAffine(BlockComplexAffine::zeros(
                n_blocks,
                out_per_block,
                in_per_block,
            )),
            LayerSpec::PowPairs { pairs } => Layer::PowPairs(PowPairs::new(pairs)),
            LayerSpec::MaxPoolGroups {
                group_size,
                n_groups,
            } => Layer::MaxPoolGroups(MaxPoolGroups::new(group_size, n_groups)),
            LayerSpec::Relu { dim } => Layer::Relu(Relu::new(dim)),
            LayerSpec::LogFloor { dim, floor } => Layer::LogFloor(LogFloor::new(dim, floor)),
            LayerSpec::Lstm {
                hidden_dim,
                input_dim,
            } => Layer::Lstm(Lstm::zeros(hidden_dim, input_dim)),
        }
    }
}

/// Named parameter array: shape plus base64-encoded little-endian f64 data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlob {
    pub shape: Vec<usize>,
    pub data: String,
}

impl ParamBlob {
    fn encode(shape: &[usize], values: &[f64]) -> Self {
        let mut bytes = Vec::with_capacity(values.len() * 8);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        ParamBlob {
            shape: shape.to_vec(),
            data: B64.encode(bytes),
        }
    }

    fn decode(&self) -> Result<Vec<f64>> {
        let bytes = B64
            .decode(&self.data)
            .map_err(|e| Error::Malformed(format!("parameter base64: {e}")))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Malformed("parameter byte length".into()));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let expected: usize = self.shape.iter().product();
        if values.len() != expected {
            return Err(Error::Malformed(format!(
                "parameter has {} values, shape wants {expected}",
                values.len()
            )));
        }
        Ok(values)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub input_kind: InputKind,
    pub input_dim: usize,
    pub n_classes: usize,
    pub meta: ModelMeta,
    pub layers: Vec<LayerSpec>,
    pub params: BTreeMap<String, ParamBlob>,
    /// Normalization statistics of this model's input view.
    pub stats: Option<ViewStats>,
    pub history: Vec<EpochLog>,
}

impl Checkpoint {
    pub fn from_model(
        model: &ModelGraph,
        stats: Option<ViewStats>,
        history: Vec<EpochLog>,
    ) -> Self {
        let layers = model.stack.layers.iter().map(LayerSpec::of).collect();
        let mut params = BTreeMap::new();
        let names = model.stack.param_names();
        for (name, tensor) in names.into_iter().zip(model.stack.params()) {
            params.insert(name, ParamBlob::encode(tensor.shape(), tensor.values()));
        }
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            input_kind: model.input_kind,
            input_dim: model.input_dim,
            n_classes: model.n_classes,
            meta: model.meta.clone(),
            layers,
            params,
            stats,
            history,
        }
    }

    pub fn to_model(&self) -> Result<ModelGraph> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion(self.format_version));
        }
        let layers: Vec<Layer> = self.layers.iter().map(|s| s.build()).collect();
        let mut model = ModelGraph::new(
            LayerStack::new(layers),
            self.input_kind,
            self.input_dim,
            self.n_classes,
            self.meta.clone(),
        )?;
        let names = model.stack.param_names();
        for (name, tensor) in names.into_iter().zip(model.stack.params_mut()) {
            let blob = self
                .params
                .get(&name)
                .ok_or_else(|| Error::Malformed(format!("missing parameter {name}")))?;
            if blob.shape != tensor.shape() {
                return Err(Error::Malformed(format!("parameter {name} shape mismatch")));
            }
            tensor.values_mut().copy_from_slice(&blob.decode()?);
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        // Version gate before full decode so unknown versions fail cleanly.
        #[derive(Deserialize)]
        struct VersionProbe {
            format_version: u32,
        }
        let probe: VersionProbe = serde_json::from_str(text)?;
        if probe.format_version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion(probe.format_version));
        }
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
