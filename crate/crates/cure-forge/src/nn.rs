//! Block-structured multilayer perceptron and its optimizer.
//!
//! The model mirrors a four-block residual-network layout at desk scale:
//! `B` blocks of dense+relu layers followed by a linear classifier head.
//! Per-block trainability flags support the U-b freeze experiments, and the
//! SGD step honors per-entry gradient masks so that conserved weights stay
//! bit-identical across a step.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::stream_rng;
use crate::tensor::Tensor;

/// Network layout: layer output widths per block, plus the head.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub input_dim: usize,
    /// Output width of every layer in every block, in forward order.
    pub block_widths: Vec<Vec<usize>>,
    pub num_classes: usize,
}

impl ArchSpec {
    /// Uniform layout: `blocks` blocks of `layers_per_block` layers of `width`.
    pub fn uniform(input_dim: usize, blocks: usize, layers_per_block: usize, width: usize, num_classes: usize) -> Self {
        ArchSpec {
            input_dim,
            block_widths: vec![vec![width; layers_per_block]; blocks],
            num_classes,
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.block_widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("arch.input_dim", "must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid("arch.num_classes", "need at least two classes"));
        }
        if self.block_widths.is_empty() {
            return Err(Error::invalid("arch.blocks", "need at least one block"));
        }
        for (b, widths) in self.block_widths.iter().enumerate() {
            if widths.is_empty() {
                return Err(Error::invalid("arch.widths", format!("block {} has no layers", b + 1)));
            }
            if widths.iter().any(|&w| w == 0) {
                return Err(Error::invalid("arch.widths", format!("block {} has a zero width", b + 1)));
            }
        }
        Ok(())
    }
}

#[derive(Clone)]
pub struct DenseLayer {
    /// `[out × in]` weight matrix.
    pub weight: Tensor,
    /// `[out]` bias vector.
    pub bias: Tensor,
}

/// Anything that maps a `[batch × d]` tensor to `[batch × C]` logits.
///
/// Attacks are written against this trait so tests can drive them with
/// hand-built models.
pub trait Classifier {
    fn logits(&self, x: &Tensor) -> Result<Tensor>;
    fn num_classes(&self) -> usize;
}

#[derive(Clone)]
pub struct BlockModel {
    arch: ArchSpec,
    blocks: Vec<Vec<DenseLayer>>,
    classifier: DenseLayer,
    /// Length B+1: blocks in order, then the classifier head.
    pub block_trainable: Vec<bool>,
}

fn xavier_tensor(name: &str, out_dim: usize, in_dim: usize, seed: u64, requires_grad: bool) -> Tensor {
    let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
    let mut rng = stream_rng(seed, name);
    let data: Vec<f64> = (0..out_dim * in_dim).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(vec![out_dim, in_dim], data, requires_grad).expect("finite init")
}

fn layer_dims(arch: &ArchSpec) -> Vec<Vec<(usize, usize)>> {
    // (out, in) for every layer, plus the classifier appended as a final
    // single-layer pseudo-block.
    let mut dims = Vec::with_capacity(arch.num_blocks() + 1);
    let mut prev = arch.input_dim;
    for widths in &arch.block_widths {
        let mut block = Vec::with_capacity(widths.len());
        for &w in widths {
            block.push((w, prev));
            prev = w;
        }
        dims.push(block);
    }
    dims.push(vec![(arch.num_classes, prev)]);
    dims
}

fn tensor_name(block: usize, num_blocks: usize, layer: usize, kind: &str) -> String {
    if block == num_blocks {
        format!("classifier.{kind}")
    } else {
        format!("block{}.layer{}.{kind}", block + 1, layer + 1)
    }
}

/// Draw a model with Xavier-uniform weights and zero biases. Each tensor
/// draws from its own named substream, so re-drawing any subset of blocks with
/// the same seed reproduces exactly what a fresh init would produce.
pub fn init_model(arch: &ArchSpec, seed: u64) -> Result<BlockModel> {
    arch.validate()?;
    let dims = layer_dims(arch);
    let nb = arch.num_blocks();
    let mut blocks = Vec::with_capacity(nb);
    for (b, block_dims) in dims.iter().take(nb).enumerate() {
        let mut layers = Vec::with_capacity(block_dims.len());
        for (l, &(out, inp)) in block_dims.iter().enumerate() {
            layers.push(DenseLayer {
                weight: xavier_tensor(&format!("init/{}", tensor_name(b, nb, l, "weight")), out, inp, seed, true),
                bias: Tensor::param(vec![out], vec![0.0; out])?,
            });
        }
        blocks.push(layers);
    }
    let (out, inp) = dims[nb][0];
    let classifier = DenseLayer {
        weight: xavier_tensor(&format!("init/{}", tensor_name(nb, nb, 0, "weight")), out, inp, seed, true),
        bias: Tensor::param(vec![out], vec![0.0; out])?,
    };
    Ok(BlockModel {
        arch: arch.clone(),
        blocks,
        classifier,
        block_trainable: vec![true; nb + 1],
    })
}

impl BlockModel {
    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn num_blocks(&self) -> usize {
        self.arch.num_blocks()
    }

    /// Index of the classifier entry in `block_trainable` and `ParamRef::block`.
    pub fn classifier_index(&self) -> usize {
        self.arch.num_blocks()
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize)> {
        match *x.shape() {
            [b, d] if d == self.arch.input_dim => Ok((b, d)),
            _ => Err(Error::ShapeMismatch {
                op: "forward".into(),
                lhs: x.shape().to_vec(),
                rhs: vec![0, self.arch.input_dim],
            }),
        }
    }

    /// Forward pass to logits. Records on the tape whenever gradients are in
    /// play (parameters of a trainable model require grad).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_with_activations(x)?.0)
    }

    /// Forward pass that also returns the post-block activations, used by the
    /// representation-similarity analysis.
    pub fn forward_with_activations(&self, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        self.check_input(x)?;
        let mut h = x.clone();
        let mut acts = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            for layer in block {
                h = h.matmul(&layer.weight.transpose()?)?.add(&layer.bias)?.relu()?;
            }
            acts.push(h.clone());
        }
        let logits = h
            .matmul(&self.classifier.weight.transpose()?)?
            .add(&self.classifier.bias)?;
        Ok((logits, acts))
    }

    /// Stable iteration over all parameters: blocks in order, then the
    /// classifier; weight before bias within a layer.
    pub fn parameters(&self) -> Vec<ParamRef<'_>> {
        let nb = self.num_blocks();
        let mut out = Vec::new();
        for (b, block) in self.blocks.iter().enumerate() {
            for (l, layer) in block.iter().enumerate() {
                out.push(ParamRef {
                    name: tensor_name(b, nb, l, "weight"),
                    block: b,
                    tensor: &layer.weight,
                });
                out.push(ParamRef {
                    name: tensor_name(b, nb, l, "bias"),
                    block: b,
                    tensor: &layer.bias,
                });
            }
        }
        out.push(ParamRef {
            name: tensor_name(nb, nb, 0, "weight"),
            block: nb,
            tensor: &self.classifier.weight,
        });
        out.push(ParamRef {
            name: tensor_name(nb, nb, 0, "bias"),
            block: nb,
            tensor: &self.classifier.bias,
        });
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        self.parameters().into_iter().map(|p| p.name).collect()
    }

    pub fn num_params(&self) -> usize {
        self.parameters().iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn zero_grads(&self) {
        for p in self.parameters() {
            p.tensor.zero_grad();
        }
    }

    /// Replace parameter data wholesale, in `parameters()` order.
    /// `requires_grad` controls whether the new tensors participate in
    /// recording (false builds a stop-gradient copy, e.g. a revision model).
    pub fn set_all_params(&mut self, values: Vec<Vec<f64>>, requires_grad: bool) -> Result<()> {
        let shapes: Vec<Vec<usize>> = self.parameters().iter().map(|p| p.tensor.shape().to_vec()).collect();
        if values.len() != shapes.len() {
            return Err(Error::invalid("params", "parameter count mismatch"));
        }
        let mut fresh = Vec::with_capacity(values.len());
        for (shape, data) in shapes.into_iter().zip(values) {
            fresh.push(Tensor::new(shape, data, requires_grad)?);
        }
        let mut it = fresh.into_iter();
        for block in &mut self.blocks {
            for layer in block {
                layer.weight = it.next().expect("weight");
                layer.bias = it.next().expect("bias");
            }
        }
        self.classifier.weight = it.next().expect("classifier weight");
        self.classifier.bias = it.next().expect("classifier bias");
        Ok(())
    }

    /// Clone of all parameter data, in `parameters()` order.
    pub fn param_data(&self) -> Vec<Vec<f64>> {
        self.parameters().iter().map(|p| p.tensor.data().to_vec()).collect()
    }

    /// A stop-gradient copy: same values, parameters outside the tape.
    pub fn detached_clone(&self) -> Self {
        let mut copy = self.clone();
        copy.set_all_params(self.param_data(), false).expect("shapes match");
        copy
    }

    /// Set which blocks (1-based, classifier controlled separately) train.
    pub fn set_trainable(&mut self, blocks: &BTreeSet<usize>, classifier: bool) -> Result<()> {
        let nb = self.num_blocks();
        for &b in blocks {
            if b == 0 || b > nb {
                return Err(Error::invalid("freeze.combo", format!("block index {b} out of 1..={nb}")));
            }
        }
        for b in 0..nb {
            self.block_trainable[b] = blocks.contains(&(b + 1));
        }
        self.block_trainable[nb] = classifier;
        Ok(())
    }
}

impl Classifier for BlockModel {
    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x)
    }

    fn num_classes(&self) -> usize {
        self.arch.num_classes
    }
}

pub struct ParamRef<'a> {
    pub name: String,
    /// Owning block (0-based); `num_blocks()` denotes the classifier.
    pub block: usize,
    pub tensor: &'a Tensor,
}

/// Redraw the listed blocks (1-based) from the given seed, leaving everything
/// else bit-identical. Because init uses per-tensor substreams, redrawing all
/// blocks plus the classifier reproduces `init_model(arch, seed)` exactly.
pub fn reinit_blocks(
    m: &BlockModel,
    blocks_to_reinit: &BTreeSet<usize>,
    reinit_classifier: bool,
    seed: u64,
) -> Result<BlockModel> {
    let nb = m.num_blocks();
    for &b in blocks_to_reinit {
        if b == 0 || b > nb {
            return Err(Error::invalid("reinit", format!("block index {b} out of 1..={nb}")));
        }
    }
    let mut out = m.clone();
    let dims = layer_dims(&m.arch);
    for &b in blocks_to_reinit {
        let bi = b - 1;
        for (l, layer) in out.blocks[bi].iter_mut().enumerate() {
            let (o, i) = dims[bi][l];
            layer.weight = xavier_tensor(&format!("init/{}", tensor_name(bi, nb, l, "weight")), o, i, seed, true);
            layer.bias = Tensor::param(vec![o], vec![0.0; o])?;
        }
    }
    if reinit_classifier {
        let (o, i) = dims[nb][0];
        out.classifier.weight = xavier_tensor(&format!("init/{}", tensor_name(nb, nb, 0, "weight")), o, i, seed, true);
        out.classifier.bias = Tensor::param(vec![o], vec![0.0; o])?;
    }
    Ok(out)
}

/// Per-parameter 0/1 gradient selectors, aligned with `parameters()` order.
#[derive(Clone, Debug)]
pub struct GradMask {
    pub per_param: Vec<Vec<f64>>,
    pub fraction_kept: Vec<f64>,
    pub epoch: usize,
}

impl GradMask {
    /// Keep-everything mask for a model.
    pub fn all_ones(m: &BlockModel, epoch: usize) -> Self {
        let per_param: Vec<Vec<f64>> = m.parameters().iter().map(|p| vec![1.0; p.tensor.numel()]).collect();
        let fraction_kept = vec![1.0; per_param.len()];
        GradMask {
            per_param,
            fraction_kept,
            epoch,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, mask) in self.per_param.iter().enumerate() {
            if mask.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::invalid("mask", format!("tensor {i} has non-binary entries")));
            }
            let ones = mask.iter().filter(|&&v| v == 1.0).count();
            let frac = ones as f64 / mask.len() as f64;
            if (frac - self.fraction_kept[i]).abs() > 1e-12 {
                return Err(Error::invalid("mask", format!("tensor {i} fraction_kept inconsistent")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("opt.lr", "must be a positive finite number"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("opt.momentum", "must lie in [0, 1)"));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(Error::invalid("opt.weight_decay", "must be non-negative"));
        }
        Ok(())
    }
}

/// SGD-with-momentum state; velocity buffers mirror parameter shapes.
pub struct OptimizerState {
    pub cfg: OptimizerConfig,
    velocity: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(m: &BlockModel, cfg: OptimizerConfig) -> Result<Self> {
        cfg.validate()?;
        let velocity = m.parameters().iter().map(|p| vec![0.0; p.tensor.numel()]).collect();
        Ok(OptimizerState { cfg, velocity })
    }

    pub fn velocity(&self, idx: usize) -> &[f64] {
        &self.velocity[idx]
    }
}

/// One SGD step: `g ← mask ⊙ grad + wd·p`, `v ← momentum·v + g`,
/// `p ← p − lr·v`, applied only to trainable blocks. Entries with
/// `mask == 0` and `wd == 0` are left untouched (velocity included), so
/// conserved weights are bit-identical across the step. All parameter
/// gradients are cleared afterwards.
pub fn sgd_step(m: &mut BlockModel, opt: &mut OptimizerState, masks: Option<&GradMask>) -> Result<()> {
    let OptimizerConfig {
        learning_rate: lr,
        momentum,
        weight_decay: wd,
    } = opt.cfg;

    let params = m.parameters();
    if let Some(masks) = masks {
        if masks.per_param.len() != params.len() {
            return Err(Error::invalid("mask", "mask set does not match parameter count"));
        }
    }

    let mut updated: Vec<Option<Vec<f64>>> = vec![None; params.len()];
    for (i, p) in params.iter().enumerate() {
        if !m.block_trainable[p.block] {
            continue;
        }
        let grad = p.tensor.grad().ok_or_else(|| Error::MissingGrad { name: p.name.clone() })?;
        let data = p.tensor.data();
        let vel = &mut opt.velocity[i];
        let mut fresh = data.to_vec();
        for j in 0..fresh.len() {
            let mj = masks.map_or(1.0, |m| m.per_param[i][j]);
            if mj == 0.0 && wd == 0.0 {
                continue;
            }
            let g = mj * grad[j] + wd * data[j];
            vel[j] = momentum * vel[j] + g;
            fresh[j] = data[j] - lr * vel[j];
        }
        updated[i] = Some(fresh);
    }
    drop(params);

    // Swap in the stepped tensors; untouched parameters keep their handles.
    let current = m.param_data();
    let values: Vec<Vec<f64>> = updated
        .into_iter()
        .zip(current)
        .map(|(new, old)| new.unwrap_or(old))
        .collect();
    let trainable_flags: Vec<bool> = m.parameters().iter().map(|p| m.block_trainable[p.block]).collect();
    apply_param_update(m, values, &trainable_flags)?;
    m.zero_grads();
    Ok(())
}

/// Replace only trainable tensors, preserving frozen tensor handles so frozen
/// blocks stay bit-identical (and cheaply shared).
fn apply_param_update(m: &mut BlockModel, values: Vec<Vec<f64>>, trainable: &[bool]) -> Result<()> {
    let mut it = values.into_iter().zip(trainable.iter().copied());
    let mut replace = |t: &mut Tensor| -> Result<()> {
        let (data, is_trainable) = it.next().expect("aligned");
        if is_trainable {
            *t = Tensor::param(t.shape().to_vec(), data)?;
        }
        Ok(())
    };
    let mut blocks = std::mem::take(&mut m.blocks);
    for block in &mut blocks {
        for layer in block {
            replace(&mut layer.weight)?;
            replace(&mut layer.bias)?;
        }
    }
    m.blocks = blocks;
    let mut classifier = m.classifier.clone();
    replace(&mut classifier.weight)?;
    replace(&mut classifier.bias)?;
    m.classifier = classifier;
    Ok(())
}

// ── Checkpoint format ────────────────────────────────────────────────
//
// magic "CURECKPT" | version u32 LE | meta_len u32 LE | meta JSON (UTF-8) |
// little-endian f64 payload. Round-trips bit-exactly.

const CKPT_MAGIC: &[u8; 8] = b"CURECKPT";
const CKPT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointMetaFile {
    arch: ArchSpec,
    epoch: u64,
    seed: u64,
    tensors: Vec<TensorEntry>,
    payload_len: u64,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Clone, Debug)]
pub struct CheckpointMeta {
    pub arch: ArchSpec,
    pub epoch: u64,
    pub seed: u64,
}

pub fn save_checkpoint(m: &BlockModel, epoch: u64, seed: u64, path: &Path) -> Result<()> {
    let mut tensors = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    let mut offset = 0u64;
    for p in m.parameters() {
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: p.tensor.shape().to_vec(),
            offset,
        });
        for v in p.tensor.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        offset += p.tensor.numel() as u64;
    }
    let meta = CheckpointMetaFile {
        arch: m.arch.clone(),
        epoch,
        seed,
        tensors,
        payload_len: offset,
    };
    let meta_bytes = serde_json::to_vec(&meta).map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;

    let mut out: Vec<u8> = Vec::with_capacity(16 + meta_bytes.len() + payload.len());
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta_bytes);
    out.extend_from_slice(&payload);

    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(&out).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(BlockModel, CheckpointMeta)> {
    let label = path.display().to_string();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::io(label.clone(), e))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(label.clone(), e))?;

    if bytes.len() < 16 || &bytes[..8] != CKPT_MAGIC {
        return Err(Error::format(label, "not a CURECKPT checkpoint"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CKPT_VERSION {
        return Err(Error::format(label, format!("unsupported checkpoint version {version}")));
    }
    let meta_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + meta_len {
        return Err(Error::format(label, "truncated metadata block"));
    }
    let meta: CheckpointMetaFile = serde_json::from_slice(&bytes[16..16 + meta_len])
        .map_err(|e| Error::format(label.clone(), format!("bad metadata: {e}")))?;
    let payload = &bytes[16 + meta_len..];
    if payload.len() != meta.payload_len as usize * 8 {
        return Err(Error::format(label, "payload length does not match metadata"));
    }

    let mut model = init_model(&meta.arch, meta.seed)?;
    let mut values = Vec::new();
    for (entry, p) in meta.tensors.iter().zip(model.parameters()) {
        if entry.name != p.name || entry.shape != p.tensor.shape() {
            return Err(Error::format(label.clone(), format!("tensor layout mismatch at `{}`", entry.name)));
        }
        let start = entry.offset as usize * 8;
        let n = p.tensor.numel();
        let mut data = Vec::with_capacity(n);
        for j in 0..n {
            let b: [u8; 8] = payload[start + j * 8..start + (j + 1) * 8].try_into().unwrap();
            data.push(f64::from_le_bytes(b));
        }
        values.push(data);
    }
    model.set_all_params(values, true)?;
    Ok((
        model,
        CheckpointMeta {
            arch: meta.arch,
            epoch: meta.epoch,
            seed: meta.seed,
        },
    ))
}
