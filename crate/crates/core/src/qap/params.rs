use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{LinearGrads, LinearLayer, Rng};

/// Shape hyper-parameters of the query-side mapping network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolingDims {
    /// Visual embedding dimension.
    pub d_v: usize,
    /// Text embedding dimension shared with passages.
    pub d_t: usize,
    /// Tokens produced from the global visual vector.
    pub l_g: usize,
    /// Attention heads, i.e. pooled visual tokens.
    pub heads: usize,
    /// Hidden width of the global MLP.
    pub hidden: usize,
}

impl PoolingDims {
    pub const DEFAULT_TEXT_DIM: usize = 128;
    pub const DEFAULT_GLOBAL_TOKENS: usize = 16;
    pub const DEFAULT_HEADS: usize = 12;

    /// Defaults: `d_t = 128`, `l_g = 16`, `h = 12`, hidden width `d_v`.
    pub fn new(d_v: usize) -> Self {
        Self {
            d_v,
            d_t: Self::DEFAULT_TEXT_DIM,
            l_g: Self::DEFAULT_GLOBAL_TOKENS,
            heads: Self::DEFAULT_HEADS,
            hidden: d_v,
        }
    }

    pub fn with_text_dim(mut self, d_t: usize) -> Self {
        self.d_t = d_t;
        self
    }

    /// Number of query tokens in the alignment stage, `l_g + h`.
    pub fn visual_tokens(&self) -> usize {
        self.l_g + self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if [self.d_v, self.d_t, self.l_g, self.heads, self.hidden].contains(&0) {
            return Err(Error::param(format!("all pooling dims must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Nonlinearity between the two layers of the global MLP.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `x · sigmoid(x)`
    #[default]
    Silu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Tanh => 1.0 - x.tanh().powi(2),
        }
    }
}

/// Every trainable parameter of the query encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolingParams {
    pub dims: PoolingDims,
    pub activation: Activation,
    /// `d_v → hidden`.
    pub global_in: LinearLayer,
    /// `hidden → l_g · d_t`.
    pub global_out: LinearLayer,
    /// `d_v → h · d_t`.
    pub key_proj: LinearLayer,
    /// `d_v → h · d_t`.
    pub value_proj: LinearLayer,
    /// `d_t → d_t`, shared across heads.
    pub out_proj: LinearLayer,
}

/// Gradient buffers mirroring [`PoolingParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct PoolingGrads {
    pub global_in: LinearGrads,
    pub global_out: LinearGrads,
    pub key_proj: LinearGrads,
    pub value_proj: LinearGrads,
    pub out_proj: LinearGrads,
}

pub const LAYER_NAMES: [&str; 5] = ["global_in", "global_out", "key_proj", "value_proj", "out_proj"];

impl PoolingParams {
    /// Fan-based uniform init with zero biases.
    pub fn init(dims: PoolingDims, activation: Activation, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = Rng::new(seed);
        Ok(Self {
            dims,
            activation,
            global_in: LinearLayer::init(dims.d_v, dims.hidden, &mut rng),
            global_out: LinearLayer::init(dims.hidden, dims.l_g * dims.d_t, &mut rng),
            key_proj: LinearLayer::init(dims.d_v, dims.heads * dims.d_t, &mut rng),
            value_proj: LinearLayer::init(dims.d_v, dims.heads * dims.d_t, &mut rng),
            out_proj: LinearLayer::init(dims.d_t, dims.d_t, &mut rng),
        })
    }

    pub fn zeros(dims: PoolingDims, activation: Activation) -> Result<Self> {
        dims.validate()?;
        Ok(Self {
            dims,
            activation,
            global_in: LinearLayer::zeros(dims.d_v, dims.hidden),
            global_out: LinearLayer::zeros(dims.hidden, dims.l_g * dims.d_t),
            key_proj: LinearLayer::zeros(dims.d_v, dims.heads * dims.d_t),
            value_proj: LinearLayer::zeros(dims.d_v, dims.heads * dims.d_t),
            out_proj: LinearLayer::zeros(dims.d_t, dims.d_t),
        })
    }

    pub fn layers(&self) -> [(&'static str, &LinearLayer); 5] {
        [
            (LAYER_NAMES[0], &self.global_in),
            (LAYER_NAMES[1], &self.global_out),
            (LAYER_NAMES[2], &self.key_proj),
            (LAYER_NAMES[3], &self.value_proj),
            (LAYER_NAMES[4], &self.out_proj),
        ]
    }

    pub fn layers_mut(&mut self) -> [(&'static str, &mut LinearLayer); 5] {
        [
            (LAYER_NAMES[0], &mut self.global_in),
            (LAYER_NAMES[1], &mut self.global_out),
            (LAYER_NAMES[2], &mut self.key_proj),
            (LAYER_NAMES[3], &mut self.value_proj),
            (LAYER_NAMES[4], &mut self.out_proj),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(_, l)| l.param_count()).sum()
    }

    /// All parameters in layer order, weight then bias per layer.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (_, l) in self.layers() {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape(format!(
                "{} flat values for {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut at = 0;
        for (_, l) in self.layers_mut() {
            let n = l.weight.data().len();
            l.weight.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
            let b = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + b]);
            at += b;
        }
        Ok(())
    }

    pub fn zero_grads(&self) -> PoolingGrads {
        PoolingGrads {
            global_in: self.global_in.zero_grads_like(),
            global_out: self.global_out.zero_grads_like(),
            key_proj: self.key_proj.zero_grads_like(),
            value_proj: self.value_proj.zero_grads_like(),
            out_proj: self.out_proj.zero_grads_like(),
        }
    }

    pub fn zero_grad(&mut self) {
        for (_, l) in self.layers_mut() {
            l.zero_grad();
        }
    }

    /// Adds `grads` into the layers' own accumulators.
    pub fn accumulate(&mut self, grads: &PoolingGrads) {
        self.global_in.grad.add_assign(&grads.global_in);
        self.global_out.grad.add_assign(&grads.global_out);
        self.key_proj.grad.add_assign(&grads.key_proj);
        self.value_proj.grad.add_assign(&grads.value_proj);
        self.out_proj.grad.add_assign(&grads.out_proj);
    }

    /// The layers' accumulated gradients, flattened like [`flatten`](Self::flatten).
    pub fn flat_grads(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (_, l) in self.layers() {
            out.extend_from_slice(l.grad.weight.data());
            out.extend_from_slice(&l.grad.bias);
        }
        out
    }
}

impl PoolingGrads {
    pub fn add_assign(&mut self, other: &PoolingGrads) {
        self.global_in.add_assign(&other.global_in);
        self.global_out.add_assign(&other.global_out);
        self.key_proj.add_assign(&other.key_proj);
        self.value_proj.add_assign(&other.value_proj);
        self.out_proj.add_assign(&other.out_proj);
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in [&self.global_in, &self.global_out, &self.key_proj, &self.value_proj, &self.out_proj] {
            out.extend_from_slice(g.weight.data());
            out.extend_from_slice(&g.bias);
        }
        out
    }
}
