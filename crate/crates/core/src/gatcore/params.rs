use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::GatError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Elu,
    /// Test hook: leaves node embeddings linear.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub d_in: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_head: usize,
    pub mlp_hidden: usize,
    pub n_out: usize,
    pub node_activation: Activation,
}

impl Default for ModelConfig {
    /// Three layers of four heads with 40 channels each and a 160-unit MLP.
    fn default() -> Self {
        Self {
            d_in: 9,
            layers: 3,
            heads: 4,
            d_head: 40,
            mlp_hidden: 160,
            n_out: 9,
            node_activation: Activation::Elu,
        }
    }
}

impl ModelConfig {
    /// Embedding and MLP width `hidden`, split evenly over the heads.
    pub fn with_hidden(hidden: usize, n_out: usize) -> Result<Self, GatError> {
        let base = Self::default();
        if hidden == 0 || hidden % base.heads != 0 {
            return Err(GatError::Config(format!(
                "hidden dim {hidden} is not a positive multiple of {} heads",
                base.heads
            )));
        }
        Ok(Self {
            d_head: hidden / base.heads,
            mlp_hidden: hidden,
            n_out,
            ..base
        })
    }

    /// Width of each layer's concatenated head output.
    pub fn embed(&self) -> usize {
        self.heads * self.d_head
    }

    pub fn layer_in(&self, l: usize) -> usize {
        if l == 0 {
            self.d_in
        } else {
            self.embed()
        }
    }

    pub fn validate(&self) -> Result<(), GatError> {
        if [self.d_in, self.layers, self.heads, self.d_head, self.mlp_hidden, self.n_out].contains(&0) {
            return Err(GatError::Config("all model dimensions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LayerOffsets {
    pub w: usize,
    pub att: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct MlpOffsets {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Offsets of every tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub tensors: Vec<TensorSpec>,
    pub(crate) layers: Vec<LayerOffsets>,
    pub(crate) mlp: MlpOffsets,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut tensors = Vec::new();
        let mut off = 0;
        let mut push = |name: String, rows: usize, cols: usize| {
            tensors.push(TensorSpec {
                name,
                rows,
                cols,
                offset: off,
            });
            off += rows * cols;
            off - rows * cols
        };
        let f = cfg.embed();
        let mut layers = Vec::new();
        for l in 0..cfg.layers {
            let w = push(format!("gat{l}.w"), cfg.layer_in(l), f);
            let att = push(format!("gat{l}.att"), cfg.heads, cfg.d_head);
            let bias = push(format!("gat{l}.bias"), 1, f);
            layers.push(LayerOffsets { w, att, bias });
        }
        let w1 = push("mlp.w1".into(), f + 1, cfg.mlp_hidden);
        let b1 = push("mlp.b1".into(), 1, cfg.mlp_hidden);
        let w2 = push("mlp.w2".into(), cfg.mlp_hidden, cfg.n_out);
        let b2 = push("mlp.b2".into(), 1, cfg.n_out);
        let total = off;
        Self {
            tensors,
            layers,
            mlp: MlpOffsets { w1, b1, w2, b2 },
            total,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Weight matrices (everything except biases).
    pub fn is_weight(&self, t: &TensorSpec) -> bool {
        !t.name.ends_with("bias") && !t.name.ends_with(".b1") && !t.name.ends_with(".b2")
    }
}

/// All learnable tensors, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub cfg: ModelConfig,
    pub layout: Layout,
    pub data: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(cfg: ModelConfig) -> Result<Self, GatError> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        let data = vec![0.0; layout.total];
        Ok(Self { cfg, layout, data })
    }

    /// Glorot-uniform weights from a seeded stream, zero biases.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self, GatError> {
        let mut p = Self::zeros(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let specs = p.layout.tensors.clone();
        for t in &specs {
            if !p.layout.is_weight(t) {
                continue;
            }
            // attention vectors count as d_head -> 1 maps
            let (fan_in, fan_out) = if t.name.ends_with(".att") {
                (t.cols, 1)
            } else {
                (t.rows, t.cols)
            };
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut p.data[t.range()] {
                *v = rng.gen_range(-bound..bound);
            }
        }
        Ok(p)
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.tensor(name).map(|t| &self.data[t.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let r = self.layout.tensor(name)?.range();
        Some(&mut self.data[r])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
