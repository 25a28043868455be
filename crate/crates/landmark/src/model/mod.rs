//! The pluggable pairwise baseline and the glue that wires the three
//! language modules into it.
//!
//! Every parameter of every module always exists, so toggling a module off
//! never changes a downstream shape: a disabled context module contributes
//! a zero block, disabled attention is a gate of ones and a disabled
//! estimator adds nothing to the logits.

mod features;
mod forward;
mod predict;
pub(crate) mod train;

pub use features::FeatureCache;
pub use forward::{ForwardOptions, ForwardOutput, SceneInput};
pub use predict::{
    estimator_record, freq_record, predict_entities, predict_scene, predict_with_labels, record_for, PairPrediction,
    ScenePrediction,
};
pub use train::{train, TraceRecord, TrainConfig, TrainOutcome};

use crate::eem::{Combine, Eem, EemConfig};
use crate::error::ModelError;
use crate::lam::{InnerActivation, Lam, LamConfig};
use crate::lcm::{Lcm, LcmConfig};
use crate::nn::{Init, Mlp};
use crate::rng::SeedStream;
use crate::semantics::InitScheme;
use crate::tensor::{ParamId, ParamStore};

/// Which language modules take part in a forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Toggles {
    pub eem: bool,
    pub lam: bool,
    pub lcm: bool,
}

impl Toggles {
    pub const NONE: Toggles = Toggles {
        eem: false,
        lam: false,
        lcm: false,
    };
    pub const ALL: Toggles = Toggles {
        eem: true,
        lam: true,
        lcm: true,
    };

    /// The five configurations of the structural ablation, in report order.
    pub fn ablation_grid() -> [Toggles; 5] {
        [
            Toggles::NONE,
            Toggles {
                eem: true,
                ..Toggles::NONE
            },
            Toggles {
                eem: true,
                lam: true,
                lcm: false,
            },
            Toggles {
                eem: false,
                lam: true,
                lcm: true,
            },
            Toggles::ALL,
        ]
    }

    pub fn label(&self) -> String {
        let names: Vec<&str> = [(self.eem, "EEM"), (self.lam, "LAM"), (self.lcm, "LCM")]
            .into_iter()
            .filter(|(on, _)| *on)
            .map(|(_, n)| n)
            .collect();
        if names.is_empty() {
            "baseline".to_string()
        } else {
            names.join("+")
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    PredCls,
    SgCls,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::PredCls => "predcls",
            Task::SgCls => "sgcls",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "predcls" => Some(Task::PredCls),
            "sgcls" => Some(Task::SgCls),
            _ => None,
        }
    }
}

/// Sizes and architectural switches of the whole model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub entity_classes: usize,
    pub predicates: usize,
    pub channels: usize,
    pub visual_dim: usize,
    /// Width of the estimator's label embeddings.
    pub sem_dim: usize,
    pub lam_dim: usize,
    pub lam_hidden: usize,
    pub lam_inner: InnerActivation,
    pub lcm_dim: usize,
    pub lcm_layers: usize,
    pub lcm_heads: usize,
    pub lcm_ffn: usize,
    pub eem_hidden: usize,
    pub eem_head_hidden: usize,
    pub eem_combine: Combine,
    pub rel_hidden: usize,
    pub entity_hidden: usize,
    pub init: InitScheme,
    /// The attention module reuses the estimator's subject/object tables.
    pub share_embeddings: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            entity_classes: 20,
            predicates: 11,
            channels: 32,
            visual_dim: 32,
            sem_dim: 64,
            lam_dim: 8,
            lam_hidden: 16,
            lam_inner: InnerActivation::Relu,
            lcm_dim: 64,
            lcm_layers: 2,
            lcm_heads: 4,
            lcm_ffn: 256,
            eem_hidden: 64,
            eem_head_hidden: 256,
            eem_combine: Combine::Product,
            rel_hidden: 128,
            entity_hidden: 64,
            init: InitScheme::SeededGaussian,
            share_embeddings: false,
            seed: 11,
        }
    }
}

impl ModelConfig {
    /// Width of an enhanced entity feature `[visual ; context]`.
    pub fn entity_width(&self) -> usize {
        self.visual_dim + self.lcm_dim
    }

    /// Width of the relation head input.
    pub fn relation_width(&self) -> usize {
        2 * self.entity_width() + self.channels
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.entity_classes < 2 || self.predicates < 2 {
            return Err(ModelError::Config("need at least 2 entity classes and 2 predicates".into()));
        }
        if self.share_embeddings && self.lam_dim != self.sem_dim {
            return Err(ModelError::Config(format!(
                "shared embeddings need equal widths, got attention {} and estimator {}",
                self.lam_dim, self.sem_dim
            )));
        }
        if self.channels == 0 || self.visual_dim == 0 || self.rel_hidden == 0 || self.entity_hidden == 0 {
            return Err(ModelError::Config("layer sizes must be positive".into()));
        }
        Ok(())
    }
}

/// All parameters plus the handles each module needs to find its own.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub lam: Lam,
    pub lcm: Lcm,
    pub eem: Eem,
    pub entity_head: Mlp,
    pub relation_head: Mlp,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let root = SeedStream::new(config.seed);
        let mut store = ParamStore::new();
        let e = config.entity_classes;
        let eem_config = EemConfig {
            dim: config.sem_dim,
            branch_hidden: config.eem_hidden,
            head_hidden: config.eem_head_hidden,
            predicates: config.predicates,
            combine: config.eem_combine,
        };
        let eem = Eem::new(&mut store, "eem", eem_config, e, root.split("eem").seed(), config.init)?;
        let lam_config = LamConfig {
            dim: config.lam_dim,
            hidden: config.lam_hidden,
            channels: config.channels,
            kernel: 3,
            inner: config.lam_inner,
        };
        let lam = if config.share_embeddings {
            Lam::with_tables(
                &mut store,
                "lam",
                lam_config,
                eem.sub.clone(),
                eem.obj.clone(),
                root.split("lam").seed(),
            )?
        } else {
            Lam::new(&mut store, "lam", lam_config, e, root.split("lam").seed(), config.init)?
        };
        lam.check_channels(config.channels)?;
        let lcm_config = LcmConfig {
            dim: config.lcm_dim,
            layers: config.lcm_layers,
            heads: config.lcm_heads,
            ffn_hidden: config.lcm_ffn,
            ln_eps: 1e-5,
        };
        let lcm = Lcm::new(&mut store, "lcm", lcm_config, e, root.split("lcm").seed(), config.init)?;
        let mut rng = root.split("heads");
        let entity_head = Mlp::new(
            &mut store,
            "entity_head",
            &[config.entity_width(), config.entity_hidden, e],
            false,
            Init::Lecun,
            &mut rng,
        );
        let relation_head = Mlp::new(
            &mut store,
            "relation_head",
            &[config.relation_width(), config.rel_hidden, config.predicates],
            false,
            Init::Lecun,
            &mut rng,
        );
        Ok(Model {
            config,
            store,
            lam,
            lcm,
            eem,
            entity_head,
            relation_head,
        })
    }

    /// Parameters of the modules enabled by `toggles`, plus the heads.
    pub fn active_params(&self, toggles: Toggles, task: Task) -> Vec<ParamId> {
        let mut ids = self.relation_head.params();
        if task == Task::SgCls {
            ids.extend(self.entity_head.params());
        }
        if toggles.eem {
            ids.extend(self.eem.params());
        }
        if toggles.lam {
            ids.extend(self.lam.params());
        }
        if toggles.lcm {
            ids.extend(self.lcm.params());
        }
        ids.sort();
        ids.dedup();
        ids
    }
}
