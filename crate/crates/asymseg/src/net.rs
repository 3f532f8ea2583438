//! A small encoder-decoder segmentation backbone.
//!
//! Each stage is two padded 3x3 convolutions with bias and ReLU; stages
//! are linked by 2x2 max-pooling on the way down and nearest-neighbour
//! upsampling plus channel-concatenated skip connections on the way up. A
//! final 1x1 convolution maps to two classes followed by a per-pixel
//! softmax. Depth and width are configurable; the defaults are sized for
//! CPU-minute experiments.

use crate::graph::{Graph, NodeId, Precision};
use crate::rng;
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Number of downsampling stages.
    pub depth: usize,
    /// Channels of the first encoder stage; doubled per stage.
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            depth: 2,
            base_channels: 8,
            in_channels: 1,
            out_channels: 2,
        }
    }
}

impl NetConfig {
    /// Tiny configuration used for finite-difference gradient checks.
    pub fn gradcheck() -> Self {
        Self {
            depth: 1,
            base_channels: 4,
            in_channels: 1,
            out_channels: 2,
        }
    }

    /// Input height/width must be divisible by this.
    pub fn spatial_divisor(&self) -> usize {
        1 << self.depth
    }
}

/// One convolution layer: `name` carries the stage, `w` is
/// [cout, cin, k, k] and `b` is [cout].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub ksize: usize,
}

/// Ordered list of convolution layers for a configuration. The order here
/// is also the parameter-store entry order.
pub fn layers(cfg: &NetConfig) -> Vec<LayerSpec> {
    let base = cfg.base_channels;
    let mut out = Vec::new();
    let mut push = |name: String, cin: usize, cout: usize, ksize: usize| {
        out.push(LayerSpec {
            name,
            cin,
            cout,
            ksize,
        });
    };
    for d in 0..cfg.depth {
        let cin = if d == 0 { cfg.in_channels } else { base << (d - 1) };
        push(format!("enc{d}.c1"), cin, base << d, 3);
        push(format!("enc{d}.c2"), base << d, base << d, 3);
    }
    let bott_in = if cfg.depth == 0 {
        cfg.in_channels
    } else {
        base << (cfg.depth - 1)
    };
    push("bott.c1".into(), bott_in, base << cfg.depth, 3);
    push("bott.c2".into(), base << cfg.depth, base << cfg.depth, 3);
    for d in (0..cfg.depth).rev() {
        let cin = (base << (d + 1)) + (base << d);
        push(format!("dec{d}.c1"), cin, base << d, 3);
        push(format!("dec{d}.c2"), base << d, base << d, 3);
    }
    push("head".into(), base, cfg.out_channels, 1);
    out
}

/// Total number of scalar parameters (weights + biases).
pub fn param_count(cfg: &NetConfig) -> usize {
    layers(cfg)
        .iter()
        .map(|l| l.cout * l.cin * l.ksize * l.ksize + l.cout)
        .sum()
}

/// Named parameter tensors plus matching momentum state.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub values: Tensor,
    pub momentum: Tensor,
}

/// All parameters of one network, in [`layers`] order (weight before bias
/// per layer). Values are kept representable in f32 whenever
/// `f32_storage` is set, which makes checkpoints lossless.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub entries: Vec<ParamEntry>,
    pub f32_storage: bool,
}

impl ParamStore {
    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn entry_mut(&mut self, name: &str) -> Option<&mut ParamEntry> {
        self.entries.iter_mut().find(|e| e.name == name)
    }

    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|e| e.values.len()).sum()
    }

    pub fn round_to_f32(&mut self) {
        for e in &mut self.entries {
            e.values.round_to_f32();
            e.momentum.round_to_f32();
        }
    }
}

/// He-style fan-in scaled uniform initialization from per-tensor
/// deterministic substreams: weight entries draw from
/// U(-sqrt(6/fan_in), sqrt(6/fan_in)), biases start at zero, momentum at
/// zero. The substream for each tensor is keyed by its name, so the same
/// (config, seed) pair always yields bit-identical parameters.
pub fn init_params(cfg: &NetConfig, seed: u64) -> ParamStore {
    let mut entries = Vec::new();
    for layer in layers(cfg) {
        let fan_in = layer.cin * layer.ksize * layer.ksize;
        let bound = (6.0 / fan_in as f64).sqrt();
        let wname = format!("{}.w", layer.name);
        let mut rng = rng::substream(seed, rng::fnv1a(&wname));
        let wlen = layer.cout * fan_in;
        let data: Vec<f64> = (0..wlen).map(|_| rng.gen_range(-bound..bound)).collect();
        let shape = [layer.cout, layer.cin, layer.ksize, layer.ksize];
        entries.push(ParamEntry {
            name: wname,
            values: Tensor::from_vec(&shape, data),
            momentum: Tensor::zeros(&shape),
        });
        entries.push(ParamEntry {
            name: format!("{}.b", layer.name),
            values: Tensor::zeros(&[layer.cout]),
            momentum: Tensor::zeros(&[layer.cout]),
        });
    }
    let mut store = ParamStore {
        entries,
        f32_storage: true,
    };
    store.round_to_f32();
    store
}

/// Insert one leaf per parameter tensor, in entry order.
pub fn param_leaves(graph: &mut Graph, params: &ParamStore, requires_grad: bool) -> Vec<NodeId> {
    params
        .entries
        .iter()
        .map(|e| graph.leaf(e.values.clone(), requires_grad))
        .collect()
}

/// Build the forward pass on `graph`, returning the softmax output node
/// ([N, out_channels, H, W]). `param_ids` must come from [`param_leaves`]
/// with the same configuration.
pub fn build_forward(
    graph: &mut Graph,
    cfg: &NetConfig,
    param_ids: &[NodeId],
    input: NodeId,
) -> NodeId {
    let mut next = param_ids.iter().copied();
    let mut conv_block = |graph: &mut Graph, x: NodeId| {
        let w1 = next.next().expect("layer weight");
        let b1 = next.next().expect("layer bias");
        let ksize = graph.value(w1).shape()[2];
        let c1 = graph.conv(x, w1, b1, ksize);
        let r1 = graph.relu(c1);
        let w2 = next.next().expect("layer weight");
        let b2 = next.next().expect("layer bias");
        let c2 = graph.conv(r1, w2, b2, 3);
        graph.relu(c2)
    };

    let mut skips = Vec::with_capacity(cfg.depth);
    let mut x = input;
    for _ in 0..cfg.depth {
        let s = conv_block(graph, x);
        skips.push(s);
        x = graph.max_pool2(s);
    }
    x = conv_block(graph, x);
    for d in (0..cfg.depth).rev() {
        let up = graph.upsample2(x);
        let cat = graph.concat_ch(up, skips[d]);
        x = conv_block(graph, cat);
    }
    let wh = next.next().expect("head weight");
    let bh = next.next().expect("head bias");
    let logits = graph.conv(x, wh, bh, 1);
    graph.softmax_ch(logits)
}

/// Run the network on a batch [N, in_channels, H, W] and return the
/// per-pixel class probabilities [N, out_channels, H, W].
pub fn forward(
    params: &ParamStore,
    cfg: &NetConfig,
    batch: &Tensor,
    precision: Precision,
) -> Result<Tensor, NetError> {
    let s = batch.shape();
    let div = cfg.spatial_divisor();
    let ok = s.len() == 4 && s[1] == cfg.in_channels && s[2] % div == 0 && s[3] % div == 0;
    if !ok {
        return Err(NetError::ShapeMismatch {
            expected: format!("[N, {}, H*{div}, W*{div}]", cfg.in_channels),
            got: format!("{s:?}"),
        });
    }
    let mut graph = Graph::new(precision);
    let ids = param_leaves(&mut graph, params, false);
    let input = graph.constant(batch.clone());
    let out = build_forward(&mut graph, cfg, &ids, input);
    Ok(graph.value(out).clone())
}
