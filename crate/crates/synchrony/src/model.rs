//! The temporal-and-topological embedding classifier.
//!
//! Architecture: two graph-convolution (GC) modules over the frozen
//! renormalized adjacency, flatten, one fully connected layer, a stack of
//! dilated causal temporal-convolution (TC) residual blocks, and a two-layer
//! MLP head with a sigmoid output.
//!
//! Two data-flow modes are provided. `Literal` treats each node's whole
//! frequency series as its feature vector; the FC output then forms a
//! 1-channel length-64 sequence for the TC stack, whose receptive field (63)
//! covers it exactly. `TemporalPreserving` applies the GC modules per time
//! step with shared weights and runs the TC stack over the original time
//! axis.

use ndarray::{Array1, Array2, Array3, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

use crate::adjacency::{operator_for, AdjacencyError, AdjacencyVariant};
use crate::grid::PowerGrid;
use crate::sampling::hex32;
use crate::tensor::{Tape, TensorError, TensorId};

const MAGIC: &[u8; 4] = b"TTNN";
const FORMAT_VERSION: u16 = 1;
/// Momentum for the exponential running BN statistics.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DataFlow {
    /// Time-as-features reading of the GC shapes (default).
    Literal,
    /// Shared-weight GC per time step, TC over the time axis.
    TemporalPreserving,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub nodes: usize,
    pub window: usize,
    pub gc_layers: usize,
    pub gc_features: usize,
    pub fc_width: usize,
    pub tc_blocks: usize,
    pub kernel: usize,
    pub filters: usize,
    pub mlp_hidden: usize,
    pub variant: AdjacencyVariant,
    pub mode: DataFlow,
}

impl ModelConfig {
    /// Reference defaults for a grid of `nodes` machines and `window`
    /// recorded snapshots.
    pub fn standard(nodes: usize, window: usize) -> Self {
        ModelConfig {
            nodes,
            window,
            gc_layers: 2,
            gc_features: 16,
            fc_width: 64,
            tc_blocks: 5,
            kernel: 2,
            filters: 32,
            mlp_hidden: 32,
            variant: AdjacencyVariant::CouplingInjection,
            mode: DataFlow::Literal,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let widths = [
            self.nodes,
            self.window,
            self.gc_layers,
            self.gc_features,
            self.fc_width,
            self.tc_blocks,
            self.kernel,
            self.filters,
            self.mlp_hidden,
        ];
        if widths.iter().any(|&w| w == 0) {
            return Err(ModelError::Contract("all config widths must be >= 1".into()));
        }
        Ok(())
    }

    fn gc_input_width(&self, layer: usize) -> usize {
        if layer == 0 {
            match self.mode {
                DataFlow::Literal => self.window,
                DataFlow::TemporalPreserving => 1,
            }
        } else {
            self.gc_features
        }
    }

    fn tc_input_channels(&self) -> usize {
        match self.mode {
            DataFlow::Literal => 1,
            DataFlow::TemporalPreserving => self.fc_width,
        }
    }

    /// Length of the sequence the TC stack convolves over.
    pub fn tc_length(&self) -> usize {
        match self.mode {
            DataFlow::Literal => self.fc_width,
            DataFlow::TemporalPreserving => self.window,
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model contract violation: {0}")]
    Contract(String),
    #[error("non-finite activation in {layer}")]
    NonFinite { layer: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Adjacency(#[from] AdjacencyError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("checkpoint fingerprint {got} does not match grid fingerprint {want}")]
    Fingerprint { got: String, want: String },
}

struct GcLayer {
    w: ArrayD<f64>,
    b: ArrayD<f64>,
    bn_scale: ArrayD<f64>,
    bn_shift: ArrayD<f64>,
    run_mean: Array1<f64>,
    run_var: Array1<f64>,
}

struct TcBlock {
    conv1: ArrayD<f64>,
    conv2: ArrayD<f64>,
    proj: Option<ArrayD<f64>>,
    ln_scale: ArrayD<f64>,
    ln_shift: ArrayD<f64>,
}

pub struct StabilityModel {
    pub config: ModelConfig,
    /// Frozen renormalized adjacency.
    pub operator: Array2<f64>,
    pub fingerprint: [u8; 32],
    gc: Vec<GcLayer>,
    fc_w: ArrayD<f64>,
    fc_b: ArrayD<f64>,
    tc: Vec<TcBlock>,
    mlp_w1: ArrayD<f64>,
    mlp_b1: ArrayD<f64>,
    mlp_w2: ArrayD<f64>,
    mlp_b2: ArrayD<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Infer,
}

/// Handles into a recorded forward pass: the probability node plus the leaf
/// id of every learnable parameter (in [`StabilityModel::named_parameters`]
/// order) for gradient readout.
pub struct ForwardPass {
    pub probs: TensorId,
    pub param_ids: Vec<TensorId>,
    /// Per-GC-layer biased batch `(mean, var)`; empty in infer phase.
    pub batch_stats: Vec<(Array1<f64>, Array1<f64>)>,
}

fn uniform_init(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> ArrayD<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(-bound..bound))
}

impl StabilityModel {
    /// Fan-in-scaled uniform weight initialization, zero biases, unit norm
    /// scales; deterministic under `seed`.
    pub fn init(
        config: ModelConfig,
        operator: Array2<f64>,
        fingerprint: [u8; 32],
        seed: u64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        if operator.nrows() != config.nodes || operator.ncols() != config.nodes {
            return Err(ModelError::Contract(format!(
                "operator is {}x{}, config expects {} nodes",
                operator.nrows(),
                operator.ncols(),
                config.nodes
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = config.nodes;
        let f = config.gc_features;
        let gc = (0..config.gc_layers)
            .map(|i| {
                let c = config.gc_input_width(i);
                GcLayer {
                    w: uniform_init(&mut rng, &[c, f], c),
                    b: ArrayD::zeros(IxDyn(&[n, f])),
                    bn_scale: ArrayD::ones(IxDyn(&[f])),
                    bn_shift: ArrayD::zeros(IxDyn(&[f])),
                    run_mean: Array1::zeros(f),
                    run_var: Array1::ones(f),
                }
            })
            .collect();
        let fc_in = n * f;
        let fc_w = uniform_init(&mut rng, &[fc_in, config.fc_width], fc_in);
        let fc_b = ArrayD::zeros(IxDyn(&[config.fc_width]));
        let tc = (0..config.tc_blocks)
            .map(|r| {
                let c_in = if r == 0 {
                    config.tc_input_channels()
                } else {
                    config.filters
                };
                let k = config.kernel;
                TcBlock {
                    conv1: uniform_init(&mut rng, &[config.filters, c_in, k], c_in * k),
                    conv2: uniform_init(
                        &mut rng,
                        &[config.filters, config.filters, k],
                        config.filters * k,
                    ),
                    proj: (c_in != config.filters)
                        .then(|| uniform_init(&mut rng, &[config.filters, c_in, 1], c_in)),
                    ln_scale: ArrayD::ones(IxDyn(&[config.filters])),
                    ln_shift: ArrayD::zeros(IxDyn(&[config.filters])),
                }
            })
            .collect();
        let h = config.mlp_hidden;
        Ok(StabilityModel {
            mlp_w1: uniform_init(&mut rng, &[config.filters, h], config.filters),
            mlp_b1: ArrayD::zeros(IxDyn(&[h])),
            mlp_w2: uniform_init(&mut rng, &[h, 1], h),
            mlp_b2: ArrayD::zeros(IxDyn(&[1])),
            config,
            operator,
            fingerprint,
            gc,
            fc_w,
            fc_b,
            tc,
        })
    }

    /// Build the operator from the grid per the configured variant and
    /// initialize.
    pub fn for_grid(grid: &PowerGrid, config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let op = operator_for(grid, config.variant)?;
        StabilityModel::init(config, op.matrix, grid.fingerprint(), seed)
    }

    /// Learnable parameters in a fixed, checkpoint-stable order.
    pub fn named_parameters(&self) -> Vec<(String, &ArrayD<f64>)> {
        let mut out = Vec::new();
        for (i, l) in self.gc.iter().enumerate() {
            out.push((format!("gc{i}.w"), &l.w));
            out.push((format!("gc{i}.b"), &l.b));
            out.push((format!("gc{i}.bn_scale"), &l.bn_scale));
            out.push((format!("gc{i}.bn_shift"), &l.bn_shift));
        }
        out.push(("fc.w".to_string(), &self.fc_w));
        out.push(("fc.b".to_string(), &self.fc_b));
        for (r, blk) in self.tc.iter().enumerate() {
            out.push((format!("tc{r}.conv1"), &blk.conv1));
            out.push((format!("tc{r}.conv2"), &blk.conv2));
            if let Some(p) = &blk.proj {
                out.push((format!("tc{r}.proj"), p));
            }
            out.push((format!("tc{r}.ln_scale"), &blk.ln_scale));
            out.push((format!("tc{r}.ln_shift"), &blk.ln_shift));
        }
        out.push(("mlp.w1".to_string(), &self.mlp_w1));
        out.push(("mlp.b1".to_string(), &self.mlp_b1));
        out.push(("mlp.w2".to_string(), &self.mlp_w2));
        out.push(("mlp.b2".to_string(), &self.mlp_b2));
        out
    }

    /// Mutable view over the same parameters, same order as
    /// [`Self::named_parameters`].
    pub fn parameters_mut(&mut self) -> Vec<&mut ArrayD<f64>> {
        let mut out: Vec<&mut ArrayD<f64>> = Vec::new();
        for l in &mut self.gc {
            out.push(&mut l.w);
            out.push(&mut l.b);
            out.push(&mut l.bn_scale);
            out.push(&mut l.bn_shift);
        }
        out.push(&mut self.fc_w);
        out.push(&mut self.fc_b);
        for blk in &mut self.tc {
            out.push(&mut blk.conv1);
            out.push(&mut blk.conv2);
            if let Some(p) = &mut blk.proj {
                out.push(p);
            }
            out.push(&mut blk.ln_scale);
            out.push(&mut blk.ln_shift);
        }
        out.push(&mut self.mlp_w1);
        out.push(&mut self.mlp_b1);
        out.push(&mut self.mlp_w2);
        out.push(&mut self.mlp_b2);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_parameters().iter().map(|(_, v)| v.len()).sum()
    }

    pub fn bn_running_stats(&self) -> Vec<(Array1<f64>, Array1<f64>)> {
        self.gc
            .iter()
            .map(|l| (l.run_mean.clone(), l.run_var.clone()))
            .collect()
    }

    pub fn set_bn_running_stats(&mut self, stats: &[(Array1<f64>, Array1<f64>)]) {
        for (layer, (mean, var)) in self.gc.iter_mut().zip(stats) {
            layer.run_mean = mean.clone();
            layer.run_var = var.clone();
        }
    }

    /// Fold one batch's BN statistics into the running estimates.
    pub fn update_running_stats(&mut self, batch_stats: &[(Array1<f64>, Array1<f64>)]) {
        for (layer, (mean, var)) in self.gc.iter_mut().zip(batch_stats) {
            layer.run_mean = &layer.run_mean * (1.0 - BN_MOMENTUM) + &(mean * BN_MOMENTUM);
            layer.run_var = &layer.run_var * (1.0 - BN_MOMENTUM) + &(var * BN_MOMENTUM);
        }
    }

    fn check_finite(tape: &Tape, id: TensorId, layer: &str) -> Result<(), ModelError> {
        if tape.value(id).iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite {
                layer: layer.to_string(),
            });
        }
        Ok(())
    }

    /// Record the forward pass on `tape`. `input` is `[batch, N, T]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        input: &Array3<f64>,
        phase: Phase,
    ) -> Result<ForwardPass, ModelError> {
        let cfg = &self.config;
        let (batch, n, t) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        if n != cfg.nodes || t != cfg.window {
            return Err(ModelError::Contract(format!(
                "input is [{batch}, {n}, {t}], config expects [{batch}, {}, {}]",
                cfg.nodes, cfg.window
            )));
        }
        if batch == 0 {
            return Err(ModelError::Contract("empty batch".into()));
        }
        let train = phase == Phase::Train;
        let mut param_ids = Vec::new();
        let mut push = |tape: &mut Tape, v: &ArrayD<f64>| -> TensorId {
            let id = tape.leaf(v.clone(), true);
            param_ids.push(id);
            id
        };
        // Leaves are created in named_parameters order.
        let gc_ids: Vec<[TensorId; 4]> = self
            .gc
            .iter()
            .map(|l| {
                [
                    push(tape, &l.w),
                    push(tape, &l.b),
                    push(tape, &l.bn_scale),
                    push(tape, &l.bn_shift),
                ]
            })
            .collect();
        let fc_w = push(tape, &self.fc_w);
        let fc_b = push(tape, &self.fc_b);
        let tc_ids: Vec<(TensorId, TensorId, Option<TensorId>, TensorId, TensorId)> = self
            .tc
            .iter()
            .map(|blk| {
                (
                    push(tape, &blk.conv1),
                    push(tape, &blk.conv2),
                    blk.proj.as_ref().map(|p| push(tape, p)),
                    push(tape, &blk.ln_scale),
                    push(tape, &blk.ln_shift),
                )
            })
            .collect();
        let mlp_w1 = push(tape, &self.mlp_w1);
        let mlp_b1 = push(tape, &self.mlp_b1);
        let mlp_w2 = push(tape, &self.mlp_w2);
        let mlp_b2 = push(tape, &self.mlp_b2);

        let op = tape.constant(self.operator.clone().into_dyn());
        let x = tape.constant(input.clone().into_dyn());

        // GC stage input: [rows, N, C] with rows = batch (literal) or
        // batch * T (temporal-preserving, C = 1).
        let mut h = match cfg.mode {
            DataFlow::Literal => x,
            DataFlow::TemporalPreserving => {
                let swapped = tape.swap_last2(x)?;
                tape.reshape(swapped, &[batch * t, n, 1])?
            }
        };
        let mut batch_stats = Vec::new();
        for (i, ids) in gc_ids.iter().enumerate() {
            let [w, b, bn_scale, bn_shift] = *ids;
            let mixed = tape.matmul(op, h)?;
            let projected = tape.matmul(mixed, w)?;
            let biased = tape.add(projected, b)?;
            let normed = if train {
                let (y, mean, var) = tape.batch_norm_train(biased, bn_scale, bn_shift)?;
                batch_stats.push((mean, var));
                y
            } else {
                let layer = &self.gc[i];
                tape.batch_norm_infer(biased, bn_scale, bn_shift, &layer.run_mean, &layer.run_var)?
            };
            h = tape.relu(normed);
            Self::check_finite(tape, h, &format!("gc{i}"))?;
        }
        let flat = tape.flatten(h)?;
        let fc = tape.dense(flat, fc_w, fc_b)?;

        // Assemble the TC input sequence [batch, channels, length].
        let mut seq = match cfg.mode {
            DataFlow::Literal => tape.reshape(fc, &[batch, 1, cfg.fc_width])?,
            DataFlow::TemporalPreserving => {
                let steps = tape.reshape(fc, &[batch, t, cfg.fc_width])?;
                tape.swap_last2(steps)?
            }
        };
        for (r, ids) in tc_ids.iter().enumerate() {
            let (conv1, conv2, proj, ln_scale, ln_shift) = *ids;
            let dilation = 1usize << r;
            let c1 = tape.causal_conv1d(seq, conv1, dilation)?;
            let c2 = tape.causal_conv1d(c1, conv2, dilation)?;
            let swapped = tape.swap_last2(c2)?;
            let normed = tape.layer_norm(swapped, ln_scale, ln_shift)?;
            let back = tape.swap_last2(normed)?;
            let residual = match proj {
                Some(p) => tape.causal_conv1d(seq, p, 1)?,
                None => seq,
            };
            let summed = tape.add(back, residual)?;
            seq = tape.relu(summed);
            Self::check_finite(tape, seq, &format!("tc{r}"))?;
        }
        let last = tape.select_last(seq)?;
        let h1 = tape.dense(last, mlp_w1, mlp_b1)?;
        let h1 = tape.relu(h1);
        let logits = tape.dense(h1, mlp_w2, mlp_b2)?;
        let probs2 = tape.sigmoid(logits);
        let probs = tape.reshape(probs2, &[batch])?;
        Self::check_finite(tape, probs, "head")?;
        Ok(ForwardPass {
            probs,
            param_ids,
            batch_stats,
        })
    }

    /// Inference probabilities for a batch, running BN statistics applied.
    pub fn predict(&self, input: &Array3<f64>) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, input, Phase::Infer)?;
        Ok(tape.value(pass.probs).iter().copied().collect())
    }

    fn blobs(&self) -> Vec<(String, ArrayD<f64>)> {
        let mut out: Vec<(String, ArrayD<f64>)> = self
            .named_parameters()
            .into_iter()
            .map(|(name, v)| (name, v.clone()))
            .collect();
        out.push(("operator".into(), self.operator.clone().into_dyn()));
        for (i, l) in self.gc.iter().enumerate() {
            out.push((format!("gc{i}.run_mean"), l.run_mean.clone().into_dyn()));
            out.push((format!("gc{i}.run_var"), l.run_var.clone().into_dyn()));
        }
        out
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let cfg = serde_json::to_vec(&self.config).expect("config serializes");
        buf.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        buf.extend_from_slice(&cfg);
        buf.extend_from_slice(&self.fingerprint);
        let blobs = self.blobs();
        buf.extend_from_slice(&(blobs.len() as u32).to_le_bytes());
        for (name, value) in &blobs {
            let nb = name.as_bytes();
            buf.extend_from_slice(&(nb.len() as u16).to_le_bytes());
            buf.extend_from_slice(nb);
            buf.push(value.ndim() as u8);
            for &d in value.shape() {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in value.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    /// Load and verify a checkpoint; when `expected_fingerprint` is supplied
    /// a mismatch is rejected.
    pub fn load_checkpoint(
        path: impl AsRef<Path>,
        expected_fingerprint: Option<&[u8; 32]>,
    ) -> Result<Self, ModelError> {
        let mut raw = Vec::new();
        std::fs::File::open(path.as_ref())?.read_to_end(&mut raw)?;
        if raw.len() < 4 + 2 + 4 + 32 + 4 + 4 {
            return Err(ModelError::Format("file too short".into()));
        }
        let (body, crc_bytes) = raw.split_at(raw.len() - 4);
        let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
        if crc32(body) != stored {
            return Err(ModelError::Format("checksum mismatch".into()));
        }
        let mut pos = 0usize;
        let take = |pos: &mut usize, len: usize| -> Result<&[u8], ModelError> {
            if *pos + len > body.len() {
                return Err(ModelError::Format(format!("truncated at byte {}", *pos)));
            }
            let out = &body[*pos..*pos + len];
            *pos += len;
            Ok(out)
        };
        if take(&mut pos, 4)? != MAGIC {
            return Err(ModelError::Format("bad magic".into()));
        }
        let version = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(ModelError::Format(format!("unsupported version {version}")));
        }
        let cfg_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let config: ModelConfig = serde_json::from_slice(take(&mut pos, cfg_len)?)
            .map_err(|e| ModelError::Format(format!("config block: {e}")))?;
        let mut fingerprint = [0u8; 32];
        fingerprint.copy_from_slice(take(&mut pos, 32)?);
        if let Some(want) = expected_fingerprint {
            if &fingerprint != want {
                return Err(ModelError::Fingerprint {
                    got: hex32(&fingerprint),
                    want: hex32(want),
                });
            }
        }
        let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut blobs = std::collections::HashMap::new();
        for _ in 0..count {
            let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
                .map_err(|_| ModelError::Format("non-utf8 blob name".into()))?;
            let ndim = take(&mut pos, 1)?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
            }
            let len: usize = shape.iter().product();
            let data = take(&mut pos, len * 8)?;
            let values: Vec<f64> = data
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let arr = ArrayD::from_shape_vec(IxDyn(&shape), values)
                .map_err(|e| ModelError::Format(format!("blob {name}: {e}")))?;
            blobs.insert(name, arr);
        }
        if pos != body.len() {
            return Err(ModelError::Format("trailing bytes".into()));
        }
        let mut get = |name: &str| -> Result<ArrayD<f64>, ModelError> {
            blobs
                .remove(name)
                .ok_or_else(|| ModelError::Format(format!("missing blob {name}")))
        };
        let operator = get("operator")?
            .into_dimensionality::<ndarray::Ix2>()
            .map_err(|_| ModelError::Format("operator is not a matrix".into()))?;
        let mut model = StabilityModel::init(config, operator, fingerprint, 0)?;
        for (i, l) in model.gc.iter_mut().enumerate() {
            l.run_mean = get(&format!("gc{i}.run_mean"))?
                .into_dimensionality()
                .map_err(|_| ModelError::Format("bad run_mean shape".into()))?;
            l.run_var = get(&format!("gc{i}.run_var"))?
                .into_dimensionality()
                .map_err(|_| ModelError::Format("bad run_var shape".into()))?;
        }
        let names: Vec<String> = model
            .named_parameters()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        for (name, slot) in names.iter().zip(model.parameters_mut()) {
            let blob = blobs
                .remove(name)
                .ok_or_else(|| ModelError::Format(format!("missing blob {name}")))?;
            if blob.shape() != slot.shape() {
                return Err(ModelError::Format(format!(
                    "blob {name} has shape {:?}, expected {:?}",
                    blob.shape(),
                    slot.shape()
                )));
            }
            *slot = blob;
        }
        Ok(model)
    }
}

/// CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320).
pub fn crc32(data: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for &byte in data {
        crc ^= byte as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xEDB8_8320 & mask);
        }
    }
    !crc
}
