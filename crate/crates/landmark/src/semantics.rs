//! Role-specific label embeddings.
//!
//! Each module that consumes class labels owns tables for the roles it
//! needs: subject, object or plain entity. Extraction is a row lookup,
//! which is the one-hot-times-matrix product written without the zeros.

use crate::error::ModelError;
use crate::rng::SeedStream;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Subject,
    Object,
    Entity,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Subject => "subject",
            Role::Object => "object",
            Role::Entity => "entity",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitScheme {
    /// Entries drawn from `N(0, 1/D)`, so rows have norm close to one.
    SeededGaussian,
    /// Row `i` is the basis vector `e_(i mod D)`.
    IdentityPad,
}

impl InitScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            InitScheme::SeededGaussian => "gaussian",
            InitScheme::IdentityPad => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gaussian" => Some(InitScheme::SeededGaussian),
            "identity" => Some(InitScheme::IdentityPad),
            _ => None,
        }
    }
}

/// An `E × D` trainable table living in a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub role: Role,
    pub weights: ParamId,
    pub classes: usize,
    pub dim: usize,
}

/// Anything that maps class labels to semantic vectors on a tape.
pub trait SemanticExtractor {
    fn width(&self) -> usize;

    /// `[classes.len(), width]` embeddings, one row per label.
    fn extract_many(&self, tape: &mut Tape<'_>, classes: &[usize]) -> Result<Var, ModelError>;
}

/// Builds the initial `classes × dim` weights of a table.
pub fn init_weights(classes: usize, dim: usize, seed: u64, scheme: InitScheme) -> Tensor {
    let data = match scheme {
        InitScheme::SeededGaussian => {
            let mut rng = SeedStream::new(seed);
            let scale = 1.0 / (dim as f64).sqrt();
            (0..classes * dim).map(|_| scale * rng.normal()).collect()
        }
        InitScheme::IdentityPad => {
            let mut d = vec![0.0; classes * dim];
            for i in 0..classes {
                d[i * dim + i % dim] = 1.0;
            }
            d
        }
    };
    Tensor::new(vec![classes, dim], data).expect("table shape")
}

/// Registers a freshly initialized table under `name`.
pub fn init_embeddings(
    store: &mut ParamStore,
    name: &str,
    role: Role,
    classes: usize,
    dim: usize,
    seed: u64,
    scheme: InitScheme,
) -> EmbeddingTable {
    let weights = store.add(name, init_weights(classes, dim, seed, scheme));
    EmbeddingTable {
        role,
        weights,
        classes,
        dim,
    }
}

impl EmbeddingTable {
    fn check(&self, class: usize) -> Result<(), ModelError> {
        if class >= self.classes {
            return Err(ModelError::Vocabulary {
                index: class,
                len: self.classes,
            });
        }
        Ok(())
    }

    /// Length-`D` embedding of one class.
    pub fn extract(&self, tape: &mut Tape<'_>, class: usize) -> Result<Var, ModelError> {
        let rows = self.extract_many(tape, &[class])?;
        Ok(tape.reshape(rows, vec![self.dim])?)
    }

    /// Embedding of a relaxed label: `c` is any length-`E` real vector and
    /// the result is `cᵀ W`, which equals a row lookup for one-hot `c`.
    pub fn extract_relaxed(&self, tape: &mut Tape<'_>, c: Var) -> Result<Var, ModelError> {
        let w = tape.param(self.weights);
        let row = tape.reshape(c, vec![1, self.classes])?;
        let out = tape.matmul(row, w)?;
        Ok(tape.reshape(out, vec![self.dim])?)
    }

    /// Current value of a row, outside any tape.
    pub fn row<'a>(&self, store: &'a ParamStore, class: usize) -> Result<&'a [f64], ModelError> {
        self.check(class)?;
        Ok(store.get(self.weights).row(class))
    }
}

impl SemanticExtractor for EmbeddingTable {
    fn width(&self) -> usize {
        self.dim
    }

    fn extract_many(&self, tape: &mut Tape<'_>, classes: &[usize]) -> Result<Var, ModelError> {
        for &c in classes {
            self.check(c)?;
        }
        let w = tape.param(self.weights);
        Ok(tape.gather_rows(w, classes)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_table_returns_basis_rows() {
        let mut store = ParamStore::new();
        let t = init_embeddings(&mut store, "t", Role::Subject, 3, 3, 0, InitScheme::IdentityPad);
        let mut tape = Tape::with_params(&store);
        let v = t.extract(&mut tape, 1).unwrap();
        assert_eq!(tape.value(v).data(), &[0.0, 1.0, 0.0]);
        assert!(matches!(
            t.extract(&mut tape, 3),
            Err(ModelError::Vocabulary { index: 3, len: 3 })
        ));
    }

    #[test]
    fn gaussian_rows_have_unit_scale() {
        let w = init_weights(200, 64, 5, InitScheme::SeededGaussian);
        let mean_norm: f64 = (0..200)
            .map(|i| w.row(i).iter().map(|x| x * x).sum::<f64>().sqrt())
            .sum::<f64>()
            / 200.0;
        assert!((0.8..=1.2).contains(&mean_norm), "{mean_norm}");
        assert_eq!(w, init_weights(200, 64, 5, InitScheme::SeededGaussian));
    }

    #[test]
    fn identity_pad_rows_are_orthonormal() {
        let w = init_weights(5, 8, 0, InitScheme::IdentityPad);
        for i in 0..5 {
            for j in 0..5 {
                let dot: f64 = w.row(i).iter().zip(w.row(j)).map(|(a, b)| a * b).sum();
                assert_eq!(dot, if i == j { 1.0 } else { 0.0 });
            }
        }
    }
}
