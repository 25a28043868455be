//! Language attention: a subject/object label pair becomes per-channel
//! gates for the relation feature map.
//!
//! The outer product of the two label embeddings is read as a one-channel
//! `D × D` image, passed through two 3×3 convolutions, averaged over space
//! and squashed into `(0, 1)`. The resulting length-`C` vector scales the
//! channels of the pair's relation feature.

use crate::error::ModelError;
use crate::nn::{init_tensor, Init};
use crate::rng::SeedStream;
use crate::semantics::{init_embeddings, EmbeddingTable, InitScheme, Role};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, TensorError, Var};

/// Activation between the two convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InnerActivation {
    Relu,
    Sigmoid,
}

impl InnerActivation {
    pub fn as_str(self) -> &'static str {
        match self {
            InnerActivation::Relu => "relu",
            InnerActivation::Sigmoid => "sigmoid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(InnerActivation::Relu),
            "sigmoid" => Some(InnerActivation::Sigmoid),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LamConfig {
    /// Width of the label embeddings, hence the side of the semantic matrix.
    pub dim: usize,
    /// Channels after the first convolution.
    pub hidden: usize,
    /// Channels of the relation feature, i.e. the attention length.
    pub channels: usize,
    pub kernel: usize,
    pub inner: InnerActivation,
}

impl Default for LamConfig {
    fn default() -> Self {
        LamConfig {
            dim: 8,
            hidden: 16,
            channels: 32,
            kernel: 3,
            inner: InnerActivation::Relu,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lam {
    pub config: LamConfig,
    pub sub: EmbeddingTable,
    pub obj: EmbeddingTable,
    pub conv1_weight: ParamId,
    pub conv1_bias: ParamId,
    pub conv2_weight: ParamId,
    pub conv2_bias: ParamId,
}

/// Outer product `sub · objᵀ` of two equal-length vectors, as a `[D, D]` matrix.
pub fn semantic_matrix(tape: &mut Tape<'_>, sub: Var, obj: Var) -> Result<Var, TensorError> {
    let (ds, dob) = (tape.shape(sub).to_vec(), tape.shape(obj).to_vec());
    if ds.len() != 1 || ds != dob {
        return Err(TensorError::shape("semantic_matrix", &ds, &dob));
    }
    let d = ds[0];
    let col = tape.reshape(sub, vec![d, 1])?;
    let row = tape.reshape(obj, vec![1, d])?;
    tape.matmul(col, row)
}

/// Gates every channel `k` of a `[C, H, W]` map by `attention[k]`.
pub fn refine_relation(tape: &mut Tape<'_>, feature: Var, attention: Var) -> Result<Var, TensorError> {
    tape.channel_scale(feature, attention)
}

impl Lam {
    /// Creates the module with its own subject and object tables.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        config: LamConfig,
        classes: usize,
        seed: u64,
        scheme: InitScheme,
    ) -> Result<Self, ModelError> {
        let root = SeedStream::new(seed);
        let sub = init_embeddings(
            store,
            &format!("{prefix}.w_sub"),
            Role::Subject,
            classes,
            config.dim,
            root.split("w_sub").seed(),
            scheme,
        );
        let obj = init_embeddings(
            store,
            &format!("{prefix}.w_obj"),
            Role::Object,
            classes,
            config.dim,
            root.split("w_obj").seed(),
            scheme,
        );
        Self::with_tables(store, prefix, config, sub, obj, seed)
    }

    /// Creates the module on existing tables, e.g. ones shared with another module.
    pub fn with_tables(
        store: &mut ParamStore,
        prefix: &str,
        config: LamConfig,
        sub: EmbeddingTable,
        obj: EmbeddingTable,
        seed: u64,
    ) -> Result<Self, ModelError> {
        if sub.dim != config.dim || obj.dim != config.dim {
            return Err(ModelError::Config(format!(
                "attention embeddings must have width {}, got {} and {}",
                config.dim, sub.dim, obj.dim
            )));
        }
        if config.channels == 0 || config.hidden == 0 || config.kernel == 0 {
            return Err(ModelError::Config("attention layer sizes must be positive".into()));
        }
        let mut rng = SeedStream::new(seed).split("convs");
        let (h, c, k) = (config.hidden, config.channels, config.kernel);
        let conv1_weight = store.add(
            format!("{prefix}.conv1.weight"),
            init_tensor(vec![h, 1, k, k], k * k, Init::He, &mut rng),
        );
        let conv1_bias = store.add(format!("{prefix}.conv1.bias"), Tensor::zeros(vec![h]));
        let conv2_weight = store.add(
            format!("{prefix}.conv2.weight"),
            init_tensor(vec![c, h, k, k], h * k * k, Init::Lecun, &mut rng),
        );
        let conv2_bias = store.add(format!("{prefix}.conv2.bias"), Tensor::zeros(vec![c]));
        Ok(Lam {
            config,
            sub,
            obj,
            conv1_weight,
            conv1_bias,
            conv2_weight,
            conv2_bias,
        })
    }

    /// `σ(pool(conv₂(act(conv₁(x)))))` for a `[D, D]` semantic matrix.
    pub fn channel_attention(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var, TensorError> {
        let d = self.config.dim;
        let pad = self.config.kernel / 2;
        let img = tape.reshape(x, vec![1, d, d])?;
        let (w1, b1) = (tape.param(self.conv1_weight), tape.param(self.conv1_bias));
        let h = tape.conv2d(img, w1, Some(b1), 1, pad)?;
        let h = match self.config.inner {
            InnerActivation::Relu => tape.relu(h),
            InnerActivation::Sigmoid => tape.sigmoid(h),
        };
        let (w2, b2) = (tape.param(self.conv2_weight), tape.param(self.conv2_bias));
        let y = tape.conv2d(h, w2, Some(b2), 1, pad)?;
        let pooled = tape.mean_pool(y)?;
        Ok(tape.sigmoid(pooled))
    }

    /// Attention vector of a (subject class, object class) pair.
    pub fn attention_for(&self, tape: &mut Tape<'_>, subject: usize, object: usize) -> Result<Var, ModelError> {
        let s = self.sub.extract(tape, subject)?;
        let o = self.obj.extract(tape, object)?;
        let x = semantic_matrix(tape, s, o)?;
        Ok(self.channel_attention(tape, x)?)
    }

    /// Parameters owned by the module, tables included.
    pub fn params(&self) -> Vec<ParamId> {
        vec![
            self.sub.weights,
            self.obj.weights,
            self.conv1_weight,
            self.conv1_bias,
            self.conv2_weight,
            self.conv2_bias,
        ]
    }

    /// Checks that the attention length matches a relation feature's channels.
    pub fn check_channels(&self, channels: usize) -> Result<(), ModelError> {
        if channels != self.config.channels {
            return Err(ModelError::Config(format!(
                "attention produces {} channels but relation features have {channels}",
                self.config.channels
            )));
        }
        Ok(())
    }
}
