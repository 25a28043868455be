//! Run configuration as canonical `key = value` text.
//!
//! Every tunable of the generator, the model and training has one dotted
//! key (`synth.seed`, `model.lam_dim`, `train.mu`, ...). The canonical
//! rendering lists every key once, in a fixed order, with floats in their
//! shortest round-trip form, so rendering a parsed rendering reproduces it
//! byte for byte.

use std::fmt::Write as _;

use thiserror::Error;

use crate::eem::Combine;
use crate::lam::InnerActivation;
use crate::model::{ModelConfig, Task, TrainConfig};
use crate::semantics::InitScheme;
use crate::synth::SynthConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown configuration key {0:?}")]
    UnknownKey(String),
    #[error("key {0:?} given twice")]
    Duplicate(String),
    #[error("invalid value {value:?} for {key}")]
    Value { key: String, value: String },
    #[error("{0}")]
    Invalid(String),
}

/// A value that can appear on the right of `=`.
trait ConfigValue: Sized {
    fn render(&self) -> String;
    fn read(s: &str) -> Option<Self>;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn render(&self) -> String {
                self.to_string()
            }
            fn read(s: &str) -> Option<Self> {
                s.parse().ok()
            }
        }
    )*};
}
plain_value!(usize, u64, bool);

impl ConfigValue for f64 {
    fn render(&self) -> String {
        // Debug prints the shortest string that parses back to the same bits
        format!("{self:?}")
    }
    fn read(s: &str) -> Option<Self> {
        s.parse().ok().filter(|v: &f64| v.is_finite())
    }
}

macro_rules! named_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn render(&self) -> String {
                self.as_str().to_string()
            }
            fn read(s: &str) -> Option<Self> {
                <$t>::parse(s)
            }
        }
    )*};
}
named_value!(Combine, InnerActivation, InitScheme, Task);

/// Everything a run depends on.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

macro_rules! config_keys {
    ($($key:literal => $($field:ident).+;)*) => {
        /// All keys in canonical order.
        pub const KEYS: &[&str] = &[$($key),*];

        impl RunConfig {
            fn render_pairs(&self) -> Vec<(&'static str, String)> {
                vec![$(($key, ConfigValue::render(&self.$($field).+))),*]
            }

            fn set_raw(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
                match key {
                    $($key => {
                        self.$($field).+ = ConfigValue::read(value).ok_or_else(|| ConfigError::Value {
                            key: key.to_string(),
                            value: value.to_string(),
                        })?;
                    })*
                    _ => return Err(ConfigError::UnknownKey(key.to_string())),
                }
                Ok(())
            }
        }
    };
}

config_keys! {
    "synth.entity_classes" => synth.entity_classes;
    "synth.predicates" => synth.predicates;
    "synth.channels" => synth.channels;
    "synth.spatial" => synth.spatial;
    "synth.entity_dim" => synth.entity_dim;
    "synth.train_scenes" => synth.train_scenes;
    "synth.eval_scenes" => synth.eval_scenes;
    "synth.min_entities" => synth.min_entities;
    "synth.max_entities" => synth.max_entities;
    "synth.zipf_exponent" => synth.zipf_exponent;
    "synth.predicates_per_class" => synth.predicates_per_class;
    "synth.channels_per_predicate" => synth.channels_per_predicate;
    "synth.pattern_amplitude" => synth.pattern_amplitude;
    "synth.pixel_noise" => synth.pixel_noise;
    "synth.pair_noise" => synth.pair_noise;
    "synth.entity_noise" => synth.entity_noise;
    "synth.link_prob" => synth.link_prob;
    "synth.spatial_jitter" => synth.spatial_jitter;
    "synth.zero_shot_pairs" => synth.zero_shot_pairs;
    "synth.seed" => synth.seed;
    "model.entity_classes" => model.entity_classes;
    "model.predicates" => model.predicates;
    "model.channels" => model.channels;
    "model.visual_dim" => model.visual_dim;
    "model.sem_dim" => model.sem_dim;
    "model.lam_dim" => model.lam_dim;
    "model.lam_hidden" => model.lam_hidden;
    "model.lam_inner" => model.lam_inner;
    "model.lcm_dim" => model.lcm_dim;
    "model.lcm_layers" => model.lcm_layers;
    "model.lcm_heads" => model.lcm_heads;
    "model.lcm_ffn" => model.lcm_ffn;
    "model.eem_hidden" => model.eem_hidden;
    "model.eem_head_hidden" => model.eem_head_hidden;
    "model.eem_combine" => model.eem_combine;
    "model.rel_hidden" => model.rel_hidden;
    "model.entity_hidden" => model.entity_hidden;
    "model.init" => model.init;
    "model.share_embeddings" => model.share_embeddings;
    "model.seed" => model.seed;
    "train.learning_rate" => train.learning_rate;
    "train.batch_size" => train.batch_size;
    "train.iterations" => train.iterations;
    "train.seed" => train.seed;
    "train.mu" => train.mu;
    "train.lambda" => train.lambda;
    "train.enable_eem" => train.toggles.eem;
    "train.enable_lam" => train.toggles.lam;
    "train.enable_lcm" => train.toggles.lcm;
    "train.task" => train.task;
    "train.background_ratio" => train.background_ratio;
    "train.eem_joint" => train.eem_joint;
    "train.mse_on_softmax" => train.mse_on_softmax;
    "train.smoothing" => train.smoothing;
}

/// Prefix of environment variables that override keys:
/// `LANDMARK_TRAIN_MU` sets `train.mu`.
pub const ENV_PREFIX: &str = "LANDMARK_";

/// Environment variable naming `key`.
pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.replace('.', "_").to_ascii_uppercase())
}

impl RunConfig {
    /// Canonical text: every key, in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.render_pairs() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Value of one key in canonical form.
    pub fn get(&self, key: &str) -> Option<String> {
        self.render_pairs().into_iter().find(|(k, _)| *k == key).map(|(_, v)| v)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        self.set_raw(key.trim(), value.trim())
    }

    /// Applies a file's assignments on top of `self`.
    ///
    /// Blank lines and `#` comments are ignored; a file may list any subset
    /// of keys, but no key twice and no key this version does not know.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: n + 1,
                    text: raw.to_string(),
                });
            };
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate(key.to_string()));
            }
            self.set(key, value)?;
        }
        Ok(())
    }

    /// Defaults overridden by `text`.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut config = RunConfig::default();
        config.apply_text(text)?;
        Ok(config)
    }

    /// Applies `LANDMARK_*` overrides found in `vars`. Variables that name
    /// no key are ignored: the prefix is shared with other tooling.
    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<(), ConfigError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let vars: Vec<(K, V)> = vars.into_iter().collect();
        for key in KEYS {
            let name = env_name(key);
            if let Some((_, v)) = vars.iter().find(|(k, _)| k.as_ref() == name) {
                self.set(key, v.as_ref())?;
            }
        }
        Ok(())
    }

    /// Sets every seed of the run.
    pub fn set_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
    }

    /// Checks each part and their agreement on shared sizes.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.synth.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.model.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let pairs = [
            ("entity_classes", self.synth.entity_classes, self.model.entity_classes),
            ("predicates", self.synth.predicates, self.model.predicates),
            ("channels", self.synth.channels, self.model.channels),
            ("entity_dim/visual_dim", self.synth.entity_dim, self.model.visual_dim),
        ];
        for (name, s, m) in pairs {
            if s != m {
                return Err(ConfigError::Invalid(format!("synth and model disagree on {name}: {s} vs {m}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_text_lists_every_key_once() {
        let text = RunConfig::default().to_text();
        assert_eq!(text.lines().count(), KEYS.len());
        for key in KEYS {
            assert_eq!(text.matches(&format!("{key} =")).count(), 1, "{key}");
        }
    }

    #[test]
    fn env_names() {
        assert_eq!(env_name("train.learning_rate"), "LANDMARK_TRAIN_LEARNING_RATE");
    }
}
