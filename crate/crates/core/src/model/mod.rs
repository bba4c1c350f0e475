//! Backbone registry and the single-logit classifier.
//!
//! Two registry entries exist: the production backbone, which must be loaded
//! from an external weights archive (no silent random fallback), and
//! `tiny-cnn-test`, a small seeded CNN that needs no downloads and carries
//! the full training/inference contract for desk-scale runs.

mod layers;
mod loss;
mod params;

pub use layers::{Conv2d, Layer, LayerSpec, SequentialCnn, Trace};
pub use loss::{bce_with_logits, bce_with_logits_grad, sigmoid};
pub use params::{sha256_hex, ParamEntry};

use std::path::Path;

use ndarray::{Array1, Array2, Array4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Registry identifier of the dependency-free test backbone.
pub const TINY_CNN_ID: &str = "tiny-cnn-test";

/// Registry identifier of the production backbone; weights come from an
/// external archive resolved under the weights directory.
pub const PRETRAINED_BACKBONE_ID: &str = "convnextv2_base.fcmae_ft_in22k_in1k";

/// Side length the classifier expects on each input image.
pub const MODEL_INPUT_SIZE: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub identifier: String,
    pub pretrained: bool,
    pub feature_dim: usize,
}

/// Resolve an identifier against the registry, fixing the feature width.
pub fn resolve_backbone(identifier: &str, pretrained: bool) -> Result<BackboneSpec> {
    let feature_dim = match identifier {
        TINY_CNN_ID => 32,
        PRETRAINED_BACKBONE_ID => 1024,
        other => return Err(Error::UnknownBackbone(other.to_string())),
    };
    Ok(BackboneSpec {
        identifier: identifier.to_string(),
        pretrained,
        feature_dim,
    })
}

/// Architecture of the test backbone: alternating 2x2 average pools and
/// 3x3 convs, then the implicit global average pool down to 32 features.
pub fn tiny_cnn_specs() -> Vec<LayerSpec> {
    vec![
        LayerSpec::AvgPool2,
        LayerSpec::Conv {
            in_channels: 3,
            out_channels: 8,
            kernel: 3,
            stride: 1,
            pad: 1,
        },
        LayerSpec::Relu,
        LayerSpec::AvgPool2,
        LayerSpec::Conv {
            in_channels: 8,
            out_channels: 16,
            kernel: 3,
            stride: 1,
            pad: 1,
        },
        LayerSpec::Relu,
        LayerSpec::AvgPool2,
        LayerSpec::Conv {
            in_channels: 16,
            out_channels: 32,
            kernel: 3,
            stride: 1,
            pad: 1,
        },
        LayerSpec::Relu,
        LayerSpec::AvgPool2,
    ]
}

/// Affine map from features to the single logit.
#[derive(Debug, Clone)]
pub struct LinearHead {
    pub weight: Array1<f32>,
    pub bias: f32,
}

impl LinearHead {
    /// Zero bias, small fan-in-scaled uniform weights, so initial
    /// predictions start near probability one half.
    fn init<R: Rng>(feature_dim: usize, rng: &mut R) -> Self {
        let limit = 1.0 / (feature_dim as f64).sqrt();
        let weight =
            Array1::from_shape_fn(feature_dim, |_| rng.random_range(-limit..=limit) as f32);
        LinearHead { weight, bias: 0.0 }
    }
}

/// Feature extractor plus single-logit head.
#[derive(Debug, Clone)]
pub struct ClassifierModel {
    pub backbone: SequentialCnn,
    pub head: LinearHead,
    pub spec: BackboneSpec,
}

/// External weights archive: a self-describing graph plus parameters, with
/// an integrity checksum over the payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsArchive {
    pub format: String,
    pub version: u32,
    pub identifier: String,
    pub feature_dim: usize,
    pub input_channels: usize,
    pub graph: Vec<LayerSpec>,
    pub params: Vec<ParamEntry>,
    pub checksum: String,
}

pub const WEIGHTS_ARCHIVE_FORMAT: &str = "mitoslice-weights";

#[derive(Serialize)]
struct WeightsPayload<'a> {
    format: &'a str,
    version: u32,
    identifier: &'a str,
    feature_dim: usize,
    input_channels: usize,
    graph: &'a [LayerSpec],
    params: &'a [ParamEntry],
}

fn weights_checksum(archive: &WeightsArchive) -> String {
    let payload = WeightsPayload {
        format: &archive.format,
        version: archive.version,
        identifier: &archive.identifier,
        feature_dim: archive.feature_dim,
        input_channels: archive.input_channels,
        graph: &archive.graph,
        params: &archive.params,
    };
    sha256_hex(&serde_json::to_vec(&payload).expect("serializable payload"))
}

/// File name the weights provider looks for under the weights directory.
pub fn weights_file_name(identifier: &str) -> String {
    format!("{identifier}.weights.json")
}

/// Serialize a backbone into the archive format (used to provision the
/// weights directory).
pub fn write_weights_archive(path: &Path, identifier: &str, cnn: &SequentialCnn) -> Result<()> {
    let params: Vec<ParamEntry> = named_conv_params(cnn)
        .into_iter()
        .map(|(name, shape, values)| ParamEntry::from_values(&name, &shape, &values))
        .collect();
    let mut archive = WeightsArchive {
        format: WEIGHTS_ARCHIVE_FORMAT.to_string(),
        version: 1,
        identifier: identifier.to_string(),
        feature_dim: cnn.feature_dim,
        input_channels: cnn.input_channels,
        graph: cnn.specs(),
        params,
        checksum: String::new(),
    };
    archive.checksum = weights_checksum(&archive);
    let json = serde_json::to_string_pretty(&archive)
        .map_err(|e| Error::InvalidArgument(format!("archive serialization: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn load_weights_archive(path: &Path, identifier: &str) -> Result<SequentialCnn> {
    let text = std::fs::read_to_string(path).map_err(|_| Error::WeightsUnavailable {
        identifier: identifier.to_string(),
        reason: format!("no archive at {}", path.display()),
    })?;
    let archive: WeightsArchive =
        serde_json::from_str(&text).map_err(|e| Error::CheckpointCorrupt {
            path: path.to_path_buf(),
            reason: format!("archive parse error: {e}"),
        })?;
    if archive.format != WEIGHTS_ARCHIVE_FORMAT || archive.version != 1 {
        return Err(Error::CheckpointCorrupt {
            path: path.to_path_buf(),
            reason: format!(
                "unsupported archive format {}/{}",
                archive.format, archive.version
            ),
        });
    }
    if archive.identifier != identifier {
        return Err(Error::WeightsUnavailable {
            identifier: identifier.to_string(),
            reason: format!("archive holds weights for {:?}", archive.identifier),
        });
    }
    let expected = weights_checksum(&archive);
    if expected != archive.checksum {
        return Err(Error::CheckpointCorrupt {
            path: path.to_path_buf(),
            reason: "checksum mismatch".into(),
        });
    }
    let mut cnn = SequentialCnn::from_specs(&archive.graph, archive.input_channels)?;
    if cnn.feature_dim != archive.feature_dim {
        return Err(Error::CheckpointCorrupt {
            path: path.to_path_buf(),
            reason: format!(
                "graph yields {} features, archive declares {}",
                cnn.feature_dim, archive.feature_dim
            ),
        });
    }
    set_named_conv_params(&mut cnn, &archive.params)?;
    Ok(cnn)
}

/// Construct a model for the given backbone spec. The head is always freshly
/// initialized from `rng`. Pretrained backbones require their weights
/// archive under `weights_dir`; a missing archive is a hard error.
pub fn build_model<R: Rng>(
    spec: &BackboneSpec,
    weights_dir: Option<&Path>,
    rng: &mut R,
) -> Result<ClassifierModel> {
    let registry = resolve_backbone(&spec.identifier, spec.pretrained)?;
    if registry.feature_dim != spec.feature_dim {
        return Err(Error::ShapeMismatch(format!(
            "backbone {} has feature_dim {}, spec says {}",
            spec.identifier, registry.feature_dim, spec.feature_dim
        )));
    }

    let backbone = match spec.identifier.as_str() {
        TINY_CNN_ID => {
            if spec.pretrained {
                return Err(Error::WeightsUnavailable {
                    identifier: spec.identifier.clone(),
                    reason: "the test backbone has no pretrained weights".into(),
                });
            }
            let mut cnn = SequentialCnn::from_specs(&tiny_cnn_specs(), 3)?;
            cnn.init_he_uniform(rng);
            cnn
        }
        _ => {
            if !spec.pretrained {
                return Err(Error::WeightsUnavailable {
                    identifier: spec.identifier.clone(),
                    reason: "this backbone is only available pretrained, via a weights archive"
                        .into(),
                });
            }
            let dir = weights_dir.ok_or_else(|| Error::WeightsUnavailable {
                identifier: spec.identifier.clone(),
                reason: "no weights directory configured (set MITOSLICE_WEIGHTS_DIR)".into(),
            })?;
            load_weights_archive(&dir.join(weights_file_name(&spec.identifier)), &spec.identifier)?
        }
    };

    let head = LinearHead::init(backbone.feature_dim, rng);
    Ok(ClassifierModel {
        backbone,
        head,
        spec: spec.clone(),
    })
}

fn named_conv_params(cnn: &SequentialCnn) -> Vec<(String, Vec<usize>, Vec<f32>)> {
    let mut out = Vec::new();
    let mut conv_idx = 0;
    for layer in &cnn.layers {
        if let Layer::Conv(c) = layer {
            let (o, i, kh, kw) = c.weight.dim();
            out.push((
                format!("backbone.conv{conv_idx}.weight"),
                vec![o, i, kh, kw],
                c.weight.iter().copied().collect(),
            ));
            out.push((
                format!("backbone.conv{conv_idx}.bias"),
                vec![o],
                c.bias.to_vec(),
            ));
            conv_idx += 1;
        }
    }
    out
}

fn set_named_conv_params(cnn: &mut SequentialCnn, entries: &[ParamEntry]) -> Result<()> {
    let mut conv_idx = 0;
    for layer in &mut cnn.layers {
        if let Layer::Conv(c) = layer {
            for (tensor, suffix) in [(true, "weight"), (false, "bias")] {
                let name = format!("backbone.conv{conv_idx}.{suffix}");
                let entry = entries.iter().find(|e| e.name == name).ok_or_else(|| {
                    Error::ShapeMismatch(format!("missing parameter {name}"))
                })?;
                let values = entry.values()?;
                if tensor {
                    let dims: Vec<usize> = c.weight.shape().to_vec();
                    if entry.shape != dims {
                        return Err(Error::ShapeMismatch(format!(
                            "{name}: archive shape {:?} vs model {:?}",
                            entry.shape, dims
                        )));
                    }
                    c.weight
                        .as_slice_mut()
                        .expect("standard layout")
                        .copy_from_slice(&values);
                } else {
                    if entry.shape != vec![c.bias.len()] {
                        return Err(Error::ShapeMismatch(format!(
                            "{name}: archive shape {:?} vs model [{}]",
                            entry.shape,
                            c.bias.len()
                        )));
                    }
                    c.bias
                        .as_slice_mut()
                        .expect("standard layout")
                        .copy_from_slice(&values);
                }
            }
            conv_idx += 1;
        }
    }
    Ok(())
}

impl ClassifierModel {
    /// Assemble a model from a deserialized backbone; the head starts zeroed
    /// and is expected to be filled via [`Self::set_named_params`].
    pub fn from_parts(backbone: SequentialCnn, spec: BackboneSpec) -> ClassifierModel {
        let head = LinearHead {
            weight: Array1::zeros(backbone.feature_dim),
            bias: 0.0,
        };
        ClassifierModel {
            backbone,
            head,
            spec,
        }
    }

    fn check_input(&self, batch: &Array4<f32>) -> Result<()> {
        let (n, c, h, w) = batch.dim();
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        if c != 3 || h != MODEL_INPUT_SIZE || w != MODEL_INPUT_SIZE {
            return Err(Error::ShapeMismatch(format!(
                "expected Nx3x{s}x{s} input, got {n}x{c}x{h}x{w}",
                s = MODEL_INPUT_SIZE
            )));
        }
        Ok(())
    }

    fn head_logits(&self, features: &Array2<f32>) -> Vec<f32> {
        let (n, _) = features.dim();
        let w = self.head.weight.as_slice().expect("standard layout");
        (0..n)
            .map(|b| {
                let row = features.row(b);
                let dot: f32 = row
                    .as_slice()
                    .expect("standard layout")
                    .iter()
                    .zip(w)
                    .map(|(&f, &wv)| f * wv)
                    .sum();
                dot + self.head.bias
            })
            .collect()
    }

    /// One logit per input sample (inference mode).
    pub fn forward(&self, batch: &Array4<f32>) -> Result<Vec<f32>> {
        self.check_input(batch)?;
        let features = self.backbone.forward(batch, false)?;
        Ok(self.head_logits(&features))
    }

    /// Forward pass capturing activations for [`Self::backward`]. With
    /// `quantize` set, activations pass through f16 precision (the reduced
    /// precision execution path).
    pub fn forward_trace(&self, batch: &Array4<f32>, quantize: bool) -> Result<(Trace, Vec<f32>)> {
        self.check_input(batch)?;
        let (layer_inputs, features) = self.backbone.forward_trace(batch, quantize)?;
        let logits = self.head_logits(&features);
        Ok((
            Trace {
                layer_inputs,
                features,
            },
            logits,
        ))
    }

    /// Parameter gradients in the same order as [`Self::param_slices_mut`],
    /// given per-sample logit gradients.
    pub fn backward(&self, trace: &Trace, dlogits: &[f32], quantize: bool) -> Result<Vec<Vec<f32>>> {
        let (n, d) = trace.features.dim();
        if dlogits.len() != n {
            return Err(Error::LengthMismatch {
                left: dlogits.len(),
                right: n,
            });
        }
        let mut dhead_w = vec![0.0f32; d];
        let mut dhead_b = 0.0f32;
        let mut dfeat = Array2::<f32>::zeros((n, d));
        let w = self.head.weight.as_slice().expect("standard layout");
        for b in 0..n {
            let g = dlogits[b];
            dhead_b += g;
            let feat_row = trace.features.row(b);
            let feat = feat_row.as_slice().expect("standard layout");
            for j in 0..d {
                dhead_w[j] += g * feat[j];
                dfeat[(b, j)] = g * w[j];
            }
        }
        let mut grads = self
            .backbone
            .backward(&trace.layer_inputs, &dfeat, quantize)?;
        grads.push(dhead_w);
        grads.push(vec![dhead_b]);
        Ok(grads)
    }

    /// Mutable flat views of every parameter tensor, in the fixed traversal
    /// order (conv weight/bias pairs, then head weight, head bias).
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out = Vec::new();
        for layer in &mut self.backbone.layers {
            if let Layer::Conv(c) = layer {
                out.push(c.weight.as_slice_mut().expect("standard layout"));
                out.push(c.bias.as_slice_mut().expect("standard layout"));
            }
        }
        out.push(self.head.weight.as_slice_mut().expect("standard layout"));
        out.push(std::slice::from_mut(&mut self.head.bias));
        out
    }

    pub fn param_count(&self) -> usize {
        let mut total = self.head.weight.len() + 1;
        for layer in &self.backbone.layers {
            if let Layer::Conv(c) = layer {
                total += c.weight.len() + c.bias.len();
            }
        }
        total
    }

    pub fn snapshot_params(&mut self) -> Vec<Vec<f32>> {
        self.param_slices_mut()
            .into_iter()
            .map(|s| s.to_vec())
            .collect()
    }

    pub fn restore_params(&mut self, snapshot: &[Vec<f32>]) -> Result<()> {
        let slices = self.param_slices_mut();
        if slices.len() != snapshot.len() {
            return Err(Error::ShapeMismatch(format!(
                "snapshot holds {} tensors, model has {}",
                snapshot.len(),
                slices.len()
            )));
        }
        for (slice, saved) in slices.into_iter().zip(snapshot) {
            if slice.len() != saved.len() {
                return Err(Error::ShapeMismatch(
                    "snapshot tensor size mismatch".into(),
                ));
            }
            slice.copy_from_slice(saved);
        }
        Ok(())
    }

    /// Every parameter tensor with its checkpoint name and shape.
    pub fn named_params(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        let mut out = named_conv_params(&self.backbone);
        out.push((
            "head.weight".to_string(),
            vec![self.head.weight.len()],
            self.head.weight.to_vec(),
        ));
        out.push(("head.bias".to_string(), vec![1], vec![self.head.bias]));
        out
    }

    /// Load parameters by name (checkpoint restore).
    pub fn set_named_params(&mut self, entries: &[ParamEntry]) -> Result<()> {
        set_named_conv_params(&mut self.backbone, entries)?;
        for suffix in ["weight", "bias"] {
            let name = format!("head.{suffix}");
            let entry = entries
                .iter()
                .find(|e| e.name == name)
                .ok_or_else(|| Error::ShapeMismatch(format!("missing parameter {name}")))?;
            let values = entry.values()?;
            if suffix == "weight" {
                if values.len() != self.head.weight.len() {
                    return Err(Error::ShapeMismatch(format!(
                        "head.weight: {} values vs model {}",
                        values.len(),
                        self.head.weight.len()
                    )));
                }
                self.head
                    .weight
                    .as_slice_mut()
                    .expect("standard layout")
                    .copy_from_slice(&values);
            } else {
                if values.len() != 1 {
                    return Err(Error::ShapeMismatch("head.bias must be a scalar".into()));
                }
                self.head.bias = values[0];
            }
        }
        Ok(())
    }
}
