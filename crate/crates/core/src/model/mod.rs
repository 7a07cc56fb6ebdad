//! The mesh transformer: node/edge encoder with message passing, GRU
//! pooling into cluster tokens, multi-head attention over the tokens and a
//! message-passing decoder predicting field increments.

mod forward;
mod rollout;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::NodeType;
use crate::nn::{init_tensor, Activation, GnnLayer, LayerNorm, Linear, Mlp, ParamBuilder, ParamSpec};

pub use forward::{
    attend, decode, encode, forward_step, normalized_state, pool, pooling_schedule, step_on_tape, Encoded, PoolStep,
    PreparedFrame, StepOutput, StepTape,
};
pub use rollout::{
    attention_dump, nearest_node_map, rollout, transfer_fields, AttentionDump, AttentionRecord, DumpBlock, RolloutFrame,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    #[default]
    Full,
    OneRing,
    Average,
    GnnCoarse,
}

impl AttentionMode {
    pub const ALL: [AttentionMode; 4] = [
        AttentionMode::Full,
        AttentionMode::OneRing,
        AttentionMode::Average,
        AttentionMode::GnnCoarse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttentionMode::Full => "full",
            AttentionMode::OneRing => "one_ring",
            AttentionMode::Average => "average",
            AttentionMode::GnnCoarse => "gnn_coarse",
        }
    }
}

impl fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttentionMode {
    type Err = Error;

    /// Accepts both `one_ring` and `one-ring` spellings.
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        AttentionMode::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown attention mode {s:?}")))
    }
}

/// Hyperparameters that fix every tensor shape of the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    #[serde(rename = "L")]
    pub layers: usize,
    #[serde(rename = "W")]
    pub width: usize,
    #[serde(rename = "M")]
    pub blocks: usize,
    pub heads: usize,
    /// Inclusive range of frequency exponents of the positional encoding.
    pub pe_bands: [i32; 2],
    pub cluster_size: usize,
    pub attention_mode: AttentionMode,
    pub pressure_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 128,
            layers: 4,
            width: 512,
            blocks: 4,
            heads: 4,
            pe_bands: [-3, 3],
            cluster_size: 10,
            attention_mode: AttentionMode::Full,
            pressure_channels: 1,
        }
    }
}

impl ModelConfig {
    /// The smallest configuration used for gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            hidden: 8,
            layers: 1,
            width: 16,
            blocks: 1,
            heads: 1,
            cluster_size: 4,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden", self.hidden),
            ("L", self.layers),
            ("W", self.width),
            ("M", self.blocks),
            ("heads", self.heads),
            ("cluster_size", self.cluster_size),
            ("pressure_channels", self.pressure_channels),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
            }
        }
        if !self.width.is_multiple_of(self.heads) {
            return Err(Error::InvalidArgument(format!(
                "W = {} is not divisible by heads = {}",
                self.width, self.heads
            )));
        }
        if self.pe_bands[0] > self.pe_bands[1] {
            return Err(Error::InvalidArgument(format!("empty pe_bands {:?}", self.pe_bands)));
        }
        Ok(())
    }

    /// Width of the positional encoding of one 2D point.
    pub fn pe_dim(&self) -> usize {
        4 * (self.pe_bands[1] - self.pe_bands[0] + 1) as usize
    }

    /// Width of the local encoding `[F(x_i), F(x̄_k − x_i)]`.
    pub fn local_dim(&self) -> usize {
        2 * self.pe_dim()
    }

    /// Number of predicted channels: two velocity components plus pressure.
    pub fn field_dim(&self) -> usize {
        2 + self.pressure_channels
    }

    /// Equality of everything that determines parameter shapes.
    pub fn same_structure(&self, other: &ModelConfig) -> bool {
        ModelConfig {
            attention_mode: other.attention_mode,
            ..self.clone()
        } == *other
    }
}

/// `[cos(2^i π x₀), cos(2^i π x₁), sin(2^i π x₀), sin(2^i π x₁)]` for each
/// band `i` in `bands[0]..=bands[1]`.
pub fn positional_encoding_bands(x: [f64; 2], bands: [i32; 2]) -> Vec<f64> {
    let mut out = Vec::with_capacity(4 * (bands[1] - bands[0] + 1).max(0) as usize);
    for i in bands[0]..=bands[1] {
        let w = 2f64.powi(i) * std::f64::consts::PI;
        let (s0, c0) = (w * x[0]).sin_cos();
        let (s1, c1) = (w * x[1]).sin_cos();
        out.extend_from_slice(&[c0, c1, s0, s1]);
    }
    out
}

/// Positional encoding with the default bands −3..=3 (28 entries).
pub fn positional_encoding(x: [f64; 2]) -> Vec<f64> {
    positional_encoding_bands(x, [-3, 3])
}

/// Parameters of one pre-LN attention block. The coarse GNN is always
/// allocated so any checkpoint can be evaluated under every mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionBlock {
    pub ln_attn: LayerNorm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub ln_ff: LayerNorm,
    pub ff: Mlp,
    pub coarse: GnnLayer,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gru {
    pub input: Linear,
    pub state: Linear,
}

/// Parameter ids of every model component for one configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub config: ModelConfig,
    pub specs: Vec<ParamSpec>,
    pub node_encoder: Mlp,
    pub edge_encoder: Mlp,
    pub encoder_layers: Vec<GnnLayer>,
    pub gru: Gru,
    pub cluster_mlp: Mlp,
    pub blocks: Vec<AttentionBlock>,
    pub final_norm: LayerNorm,
    pub decoder: GnnLayer,
    pub head: Mlp,
}

/// Raw edge features of the coarse graph: offset and its length.
pub const COARSE_EDGE_DIM: usize = 3;
/// Raw mesh edge features: relative position and its length.
pub const EDGE_FEATURE_DIM: usize = 3;

impl Layout {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        let w = config.width;
        let pe = config.pe_dim();
        let local = config.local_dim();
        let mut pb = ParamBuilder::new();

        let node_in = 2 + config.pressure_channels + NodeType::COUNT;
        let node_encoder = pb.mlp("encoder.node", &[node_in, h, h], Activation::Relu, false, false);
        let edge_encoder = pb.mlp(
            "encoder.edge",
            &[EDGE_FEATURE_DIM, h, h],
            Activation::Relu,
            false,
            false,
        );
        let encoder_layers = (0..config.layers)
            .map(|l| GnnLayer::build(&mut pb, &format!("encoder.gnn{l}"), h + local, h, h, h, h))
            .collect();

        let gru = Gru {
            input: pb.linear("pool.gru.input", h + local, 3 * w, false),
            state: pb.linear("pool.gru.state", w, 3 * w, false),
        };
        let cluster_mlp = pb.mlp("pool.cluster", &[w, w, w], Activation::Relu, false, false);

        let blocks = (0..config.blocks)
            .map(|m| {
                let name = format!("attention{m}");
                AttentionBlock {
                    ln_attn: pb.layer_norm(&format!("{name}.ln_attn"), w),
                    query: pb.linear(&format!("{name}.query"), w + pe, w, false),
                    key: pb.linear(&format!("{name}.key"), w + pe, w, false),
                    value: pb.linear(&format!("{name}.value"), w + pe, w, false),
                    out: pb.linear(&format!("{name}.out"), w, w, false),
                    ln_ff: pb.layer_norm(&format!("{name}.ln_ff"), w),
                    ff: pb.mlp(&format!("{name}.ff"), &[w, w, w], Activation::Relu, false, false),
                    coarse: GnnLayer::build(&mut pb, &format!("{name}.coarse"), w + pe, COARSE_EDGE_DIM, h, h, w),
                }
            })
            .collect();
        let final_norm = pb.layer_norm("attention.final_ln", w);

        let decoder = GnnLayer::build(&mut pb, "decoder.gnn", h + w + local, h, h, h, h);
        let head = pb.mlp(
            "decoder.head",
            &[h, h, h, config.field_dim()],
            Activation::Tanh,
            false,
            true,
        );

        Ok(Layout {
            config: config.clone(),
            specs: pb.into_specs(),
            node_encoder,
            edge_encoder,
            encoder_layers,
            gru,
            cluster_mlp,
            blocks,
            final_norm,
            decoder,
            head,
        })
    }

    pub fn num_tensors(&self) -> usize {
        self.specs.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.specs.iter().map(|s| s.shape.0 * s.shape.1).sum()
    }

    /// Ids of parameters the given attention mode never reads.
    pub fn unused_params(&self, mode: AttentionMode) -> Vec<usize> {
        let mut ids = Vec::new();
        for b in &self.blocks {
            match mode {
                AttentionMode::GnnCoarse => {
                    for l in [&b.query, &b.key, &b.value] {
                        ids.extend([l.w, l.b]);
                    }
                }
                AttentionMode::Average => {
                    ids.extend(gnn_param_ids(&b.coarse));
                    for l in [&b.query, &b.key] {
                        ids.extend([l.w, l.b]);
                    }
                }
                _ => ids.extend(gnn_param_ids(&b.coarse)),
            }
        }
        ids
    }
}

fn mlp_param_ids(m: &Mlp) -> Vec<usize> {
    let mut ids: Vec<usize> = m.layers.iter().flat_map(|l| [l.w, l.b]).collect();
    if let Some(ln) = m.norm {
        ids.extend([ln.gamma, ln.beta]);
    }
    ids
}

fn gnn_param_ids(g: &GnnLayer) -> Vec<usize> {
    let mut ids = mlp_param_ids(&g.edge);
    ids.extend(mlp_param_ids(&g.node));
    ids
}

pub fn parameter_count(config: &ModelConfig) -> Result<usize> {
    Ok(Layout::new(config)?.parameter_count())
}

/// All learnable tensors, in layout order, stored in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub tensors: Vec<Array2<f64>>,
}

impl ModelParameters {
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn cast<F: crate::tape::Real>(&self) -> Vec<Array2<F>> {
        self.tensors.iter().map(|t| t.mapv(F::of)).collect()
    }

    /// Checks every tensor shape against `layout`.
    pub fn check(&self, layout: &Layout) -> Result<()> {
        if self.tensors.len() != layout.specs.len() {
            return Err(Error::Shape(format!(
                "{} tensors for a layout of {}",
                self.tensors.len(),
                layout.specs.len()
            )));
        }
        for (t, s) in self.tensors.iter().zip(&layout.specs) {
            if t.dim() != s.shape {
                return Err(Error::Shape(format!(
                    "{} has shape {:?}, expected {:?}",
                    s.name,
                    t.dim(),
                    s.shape
                )));
            }
        }
        Ok(())
    }
}

/// Uniform ±sqrt(1/fan_in) weights, zero biases, unit layer-norm gains
/// and a zero final decoder layer, drawn in layout order.
pub fn init_parameters(config: &ModelConfig, seed: u64) -> Result<ModelParameters> {
    let layout = Layout::new(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = layout.specs.iter().map(|s| init_tensor(s, &mut rng)).collect();
    Ok(ModelParameters { tensors })
}

/// Layout and parameters together.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub layout: Layout,
    pub params: ModelParameters,
}

impl Model {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        Ok(Model {
            layout: Layout::new(config)?,
            params: init_parameters(config, seed)?,
        })
    }

    pub fn new(config: &ModelConfig, params: ModelParameters) -> Result<Self> {
        let layout = Layout::new(config)?;
        params.check(&layout)?;
        Ok(Model { layout, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.layout.config
    }

    /// Same parameters evaluated under another attention mode.
    pub fn with_mode(&self, mode: AttentionMode) -> Self {
        let mut m = self.clone();
        m.layout.config.attention_mode = mode;
        m
    }
}
