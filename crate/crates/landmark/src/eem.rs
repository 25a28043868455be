//! Experience estimation: a predicate distribution predicted from the two
//! class labels and boxes alone, supervised by a blend of the marginal
//! prior and the ground truth, and added to the baseline logits.

use crate::dist::PredicateDistribution;
use crate::error::ModelError;
use crate::nn::{Init, Mlp};
use crate::rng::SeedStream;
use crate::semantics::{init_embeddings, EmbeddingTable, InitScheme, Role, SemanticExtractor};
use crate::synth::BBox;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, TensorError, Var};

/// How the subject and object branches are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Combine {
    Product,
    Concat,
}

impl Combine {
    pub fn as_str(self) -> &'static str {
        match self {
            Combine::Product => "product",
            Combine::Concat => "concat",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "product" => Some(Combine::Product),
            "concat" => Some(Combine::Concat),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EemConfig {
    /// Width of the label embeddings.
    pub dim: usize,
    /// Width of the subject, object and position branches.
    pub branch_hidden: usize,
    /// Hidden width of the output head.
    pub head_hidden: usize,
    pub predicates: usize,
    pub combine: Combine,
}

impl Default for EemConfig {
    fn default() -> Self {
        EemConfig {
            dim: 64,
            branch_hidden: 64,
            head_hidden: 256,
            predicates: 11,
            combine: Combine::Product,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Eem {
    pub config: EemConfig,
    pub sub: EmbeddingTable,
    pub obj: EmbeddingTable,
    pub phi_sub: Mlp,
    pub phi_obj: Mlp,
    pub phi_pos: Mlp,
    pub head: Mlp,
}

/// `[cx_i, cy_i, w_i, h_i, cx_j, cy_j, w_j, h_j]`.
pub fn pair_position(subject: &BBox, object: &BBox) -> [f64; 8] {
    let (s, o) = (subject.as_array(), object.as_array());
    [s[0], s[1], s[2], s[3], o[0], o[1], o[2], o[3]]
}

impl Eem {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        config: EemConfig,
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

    pub fn with_tables(
        store: &mut ParamStore,
        prefix: &str,
        config: EemConfig,
        sub: EmbeddingTable,
        obj: EmbeddingTable,
        seed: u64,
    ) -> Result<Self, ModelError> {
        if sub.dim != config.dim || obj.dim != config.dim {
            return Err(ModelError::Config(format!(
                "estimator embeddings must have width {}, got {} and {}",
                config.dim, sub.dim, obj.dim
            )));
        }
        if config.predicates < 2 || config.branch_hidden == 0 || config.head_hidden == 0 {
            return Err(ModelError::Config("estimator layer sizes must be positive".into()));
        }
        let mut rng = SeedStream::new(seed).split("mlps");
        let h = config.branch_hidden;
        let phi_sub = Mlp::new(store, &format!("{prefix}.phi_sub"), &[config.dim, h, h, h], true, Init::He, &mut rng);
        let phi_obj = Mlp::new(store, &format!("{prefix}.phi_obj"), &[config.dim, h, h, h], true, Init::He, &mut rng);
        let phi_pos = Mlp::new(store, &format!("{prefix}.phi_pos"), &[8, h, h, h], true, Init::He, &mut rng);
        let head_in = match config.combine {
            Combine::Product => 2 * h,
            Combine::Concat => 3 * h,
        };
        let head = Mlp::new(
            store,
            &format!("{prefix}.head"),
            &[head_in, config.head_hidden, config.predicates],
            false,
            Init::Lecun,
            &mut rng,
        );
        Ok(Eem {
            config,
            sub,
            obj,
            phi_sub,
            phi_obj,
            phi_pos,
            head,
        })
    }

    /// Raw scores `[P, K]` for `P` pairs given by class indices and
    /// [`pair_position`] rows.
    pub fn estimate(
        &self,
        tape: &mut Tape<'_>,
        subjects: &[usize],
        objects: &[usize],
        positions: &[[f64; 8]],
    ) -> Result<Var, ModelError> {
        let p = subjects.len();
        if objects.len() != p || positions.len() != p {
            return Err(ModelError::Config("estimator inputs must have equal lengths".into()));
        }
        let es = self.sub.extract_many(tape, subjects)?;
        let eo = self.obj.extract_many(tape, objects)?;
        let hs = self.phi_sub.forward(tape, es)?;
        let ho = self.phi_obj.forward(tape, eo)?;
        let pos = Tensor::new(vec![p, 8], positions.iter().flatten().copied().collect())?;
        let pos = tape.constant(pos);
        let hp = self.phi_pos.forward(tape, pos)?;
        let joint = match self.config.combine {
            Combine::Product => {
                let m = tape.mul(hs, ho)?;
                tape.concat(&[m, hp], 1)?
            }
            Combine::Concat => tape.concat(&[hs, ho, hp], 1)?,
        };
        Ok(self.head.forward(tape, joint)?)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut out = vec![self.sub.weights, self.obj.weights];
        for m in [&self.phi_sub, &self.phi_obj, &self.phi_pos, &self.head] {
            out.extend(m.params());
        }
        out
    }
}

/// Elementwise product of the two marginal rows, renormalized; an all-zero
/// product becomes uniform.
pub fn joint_possibility(m_sub: &[f64], m_obj: &[f64]) -> Result<PredicateDistribution, TensorError> {
    if m_sub.len() != m_obj.len() {
        return Err(TensorError::shape("joint_possibility", &[m_sub.len()], &[m_obj.len()]));
    }
    Ok(PredicateDistribution::normalized(
        m_sub.iter().zip(m_obj).map(|(a, b)| a * b).collect(),
    ))
}

/// `μ·p_joint + (1−μ)·onehot(r)`.
pub fn distribution_label(p_joint: &PredicateDistribution, predicate: usize, mu: f64) -> Result<PredicateDistribution, ModelError> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(ModelError::Config(format!("mu must lie in [0, 1], got {mu}")));
    }
    if predicate >= p_joint.len() {
        return Err(ModelError::Vocabulary {
            index: predicate,
            len: p_joint.len(),
        });
    }
    let values = p_joint
        .values()
        .iter()
        .enumerate()
        .map(|(k, p)| mu * p + if k == predicate { 1.0 - mu } else { 0.0 })
        .collect();
    Ok(if p_joint.is_normalized() {
        PredicateDistribution::normalized_unchecked(values)
    } else {
        PredicateDistribution::raw(values)
    })
}

/// Mean squared error over the `K` entries.
pub fn eem_loss(d: &[f64], l: &[f64]) -> Result<f64, TensorError> {
    if d.len() != l.len() || d.is_empty() {
        return Err(TensorError::shape("eem_loss", &[d.len()], &[l.len()]));
    }
    Ok(d.iter().zip(l).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / d.len() as f64)
}

/// Baseline logits plus the estimator's raw scores.
pub fn offset_prediction(logits: &[f64], d: &[f64]) -> Result<Vec<f64>, TensorError> {
    if logits.len() != d.len() {
        return Err(TensorError::shape("offset_prediction", &[logits.len()], &[d.len()]));
    }
    Ok(logits.iter().zip(d).map(|(a, b)| a + b).collect())
}
