//! Language context: a pre-norm transformer encoder over the label and box
//! tokens of one scene.
//!
//! There is no order-dependent positional encoding, only the box lift, so
//! the encoder is equivariant under any permutation of the entities.

use crate::error::ModelError;
use crate::nn::{init_tensor, Init, Linear};
use crate::rng::SeedStream;
use crate::semantics::{init_embeddings, EmbeddingTable, InitScheme, Role, SemanticExtractor};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, TensorError, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct LcmConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub ln_eps: f64,
}

impl Default for LcmConfig {
    fn default() -> Self {
        LcmConfig {
            dim: 64,
            layers: 2,
            heads: 4,
            ffn_hidden: 256,
            ln_eps: 1e-5,
        }
    }
}

impl LcmConfig {
    /// The published 4-layer, 8-head, width-512 encoder.
    pub fn paper() -> Self {
        LcmConfig {
            dim: 512,
            layers: 4,
            heads: 8,
            ffn_hidden: 2048,
            ln_eps: 1e-5,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

/// Parameters of one pre-norm encoder block.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: Linear,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
    pub ffn1: Linear,
    pub ffn2: Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lcm {
    pub config: LcmConfig,
    pub entity: EmbeddingTable,
    /// Lift of the 4 box coordinates to the model width.
    pub box_proj: Linear,
    /// Linear map applied to the summed class and box terms.
    pub gamma: Linear,
    pub layers: Vec<EncoderLayer>,
}

/// Output of one self-attention call.
#[derive(Clone, Debug)]
pub struct MhsaOutput {
    pub output: Var,
    /// Per-head `[n, n]` attention matrices.
    pub attention: Vec<Var>,
}

impl Lcm {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        config: LcmConfig,
        classes: usize,
        seed: u64,
        scheme: InitScheme,
    ) -> Result<Self, ModelError> {
        if config.heads == 0 || config.dim == 0 || config.dim % config.heads != 0 {
            return Err(ModelError::Config(format!(
                "context width {} must be a positive multiple of the head count {}",
                config.dim, config.heads
            )));
        }
        let root = SeedStream::new(seed);
        let d = config.dim;
        let entity = init_embeddings(
            store,
            &format!("{prefix}.w_ent"),
            Role::Entity,
            classes,
            d,
            root.split("w_ent").seed(),
            scheme,
        );
        let mut rng = root.split("encoder");
        let box_proj = Linear::new(store, &format!("{prefix}.box_proj"), 4, d, Init::Lecun, &mut rng);
        let gamma = Linear::new(store, &format!("{prefix}.gamma"), d, d, Init::Lecun, &mut rng);
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = format!("{prefix}.layer{l}");
            let mut mat = |store: &mut ParamStore, name: &str| {
                store.add(format!("{p}.{name}"), init_tensor(vec![d, d], d, Init::Lecun, &mut rng))
            };
            let w_q = mat(store, "w_q");
            let w_k = mat(store, "w_k");
            let w_v = mat(store, "w_v");
            layers.push(EncoderLayer {
                ln1_gain: store.add(format!("{p}.ln1.gain"), Tensor::full(vec![d], 1.0)),
                ln1_bias: store.add(format!("{p}.ln1.bias"), Tensor::zeros(vec![d])),
                w_q,
                w_k,
                w_v,
                w_o: Linear::new(store, &format!("{p}.w_o"), d, d, Init::Lecun, &mut rng),
                ln2_gain: store.add(format!("{p}.ln2.gain"), Tensor::full(vec![d], 1.0)),
                ln2_bias: store.add(format!("{p}.ln2.bias"), Tensor::zeros(vec![d])),
                ffn1: Linear::new(store, &format!("{p}.ffn1"), d, config.ffn_hidden, Init::He, &mut rng),
                ffn2: Linear::new(store, &format!("{p}.ffn2"), config.ffn_hidden, d, Init::Lecun, &mut rng),
            });
        }
        Ok(Lcm {
            config,
            entity,
            box_proj,
            gamma,
            layers,
        })
    }

    /// `[n, d]` tokens `γ(f_e(c_i) + φ(box_i))`, one per entity in input order.
    pub fn build_sequence(&self, tape: &mut Tape<'_>, classes: &[usize], boxes: &[[f64; 4]]) -> Result<Var, ModelError> {
        if classes.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        if classes.len() != boxes.len() {
            return Err(ModelError::Config(format!(
                "{} classes but {} boxes",
                classes.len(),
                boxes.len()
            )));
        }
        let emb = self.entity.extract_many(tape, classes)?;
        let coords = Tensor::new(vec![boxes.len(), 4], boxes.iter().flatten().copied().collect())?;
        let coords = tape.constant(coords);
        let lifted = self.box_proj.forward(tape, coords)?;
        let sum = tape.add(emb, lifted)?;
        Ok(self.gamma.forward(tape, sum)?)
    }

    /// Multi-head scaled dot-product self-attention of block `layer`.
    pub fn mhsa(&self, tape: &mut Tape<'_>, x: Var, layer: usize) -> Result<MhsaOutput, TensorError> {
        let p = &self.layers[layer];
        let dk = self.config.head_dim();
        let scale = 1.0 / (dk as f64).sqrt();
        let (wq, wk, wv) = (tape.param(p.w_q), tape.param(p.w_k), tape.param(p.w_v));
        let q = tape.matmul(x, wq)?;
        let k = tape.matmul(x, wk)?;
        let v = tape.matmul(x, wv)?;
        let mut heads = Vec::with_capacity(self.config.heads);
        let mut attention = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let (a, b) = (h * dk, (h + 1) * dk);
            let qh = tape.slice(q, 1, a, b)?;
            let kh = tape.slice(k, 1, a, b)?;
            let vh = tape.slice(v, 1, a, b)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax(scores, 1)?;
            heads.push(tape.matmul(attn, vh)?);
            attention.push(attn);
        }
        let cat = tape.concat(&heads, 1)?;
        let output = p.w_o.forward(tape, cat)?;
        Ok(MhsaOutput { output, attention })
    }

    fn ffn(&self, tape: &mut Tape<'_>, x: Var, layer: usize) -> Result<Var, TensorError> {
        let p = &self.layers[layer];
        let h = p.ffn1.forward(tape, x)?;
        let h = tape.relu(h);
        p.ffn2.forward(tape, h)
    }

    /// Runs every block: `X ← X + MHSA(LN(X))`, then `X ← X + FFN(LN(X))`.
    pub fn encode(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var, TensorError> {
        Ok(self.encode_with_attention(tape, x)?.0)
    }

    /// Like [`Lcm::encode`], also returning each block's attention matrices.
    pub fn encode_with_attention(&self, tape: &mut Tape<'_>, mut x: Var) -> Result<(Var, Vec<Vec<Var>>), TensorError> {
        let eps = self.config.ln_eps;
        let mut maps = Vec::with_capacity(self.layers.len());
        for (l, p) in self.layers.iter().enumerate() {
            let (g1, b1) = (tape.param(p.ln1_gain), tape.param(p.ln1_bias));
            let n1 = tape.layer_norm(x, g1, b1, 1, eps)?;
            let att = self.mhsa(tape, n1, l)?;
            x = tape.add(x, att.output)?;
            maps.push(att.attention);
            let (g2, b2) = (tape.param(p.ln2_gain), tape.param(p.ln2_bias));
            let n2 = tape.layer_norm(x, g2, b2, 1, eps)?;
            let f = self.ffn(tape, n2, l)?;
            x = tape.add(x, f)?;
        }
        Ok((x, maps))
    }

    /// Context-aware embeddings `[n, d]` of a scene's labels and boxes.
    pub fn context(&self, tape: &mut Tape<'_>, classes: &[usize], boxes: &[[f64; 4]]) -> Result<Var, ModelError> {
        let x = self.build_sequence(tape, classes, boxes)?;
        Ok(self.encode(tape, x)?)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut out = vec![self.entity.weights];
        out.extend(self.box_proj.params());
        out.extend(self.gamma.params());
        for p in &self.layers {
            out.extend([p.ln1_gain, p.ln1_bias, p.w_q, p.w_k, p.w_v]);
            out.extend(p.w_o.params());
            out.extend([p.ln2_gain, p.ln2_bias]);
            out.extend(p.ffn1.params());
            out.extend(p.ffn2.params());
        }
        out
    }
}

/// `[visual ; context]` along the feature axis of `[n, v]` and `[n, d]` inputs.
pub fn fuse_entity(tape: &mut Tape<'_>, visual: Var, context: Var) -> Result<Var, TensorError> {
    tape.concat(&[visual, context], 1)
}
