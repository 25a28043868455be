//! Length-K predicate distributions shared by the statistics, the
//! experience estimator and the evaluation code.

/// Nonnegative scores over predicate classes. Index 0 is background.
#[derive(Clone, Debug, PartialEq)]
pub struct PredicateDistribution {
    values: Vec<f64>,
    normalized: bool,
}

impl PredicateDistribution {
    /// Wraps raw nonnegative scores without normalizing them.
    pub fn raw(values: Vec<f64>) -> Self {
        PredicateDistribution {
            values,
            normalized: false,
        }
    }

    /// Normalizes `values` to sum to one; an all-zero vector becomes uniform.
    pub fn normalized(mut values: Vec<f64>) -> Self {
        let total: f64 = values.iter().sum();
        if total > 0.0 {
            values.iter_mut().for_each(|v| *v /= total);
        } else {
            let n = values.len() as f64;
            values.iter_mut().for_each(|v| *v = 1.0 / n);
        }
        PredicateDistribution {
            values,
            normalized: true,
        }
    }

    /// Marks values that already sum to one by construction.
    pub(crate) fn normalized_unchecked(values: Vec<f64>) -> Self {
        PredicateDistribution {
            values,
            normalized: true,
        }
    }

    pub fn uniform(k: usize) -> Self {
        Self::normalized(vec![0.0; k])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Shannon entropy in nats of the normalized view.
    pub fn entropy(&self) -> f64 {
        let total: f64 = self.values.iter().sum();
        self.values
            .iter()
            .filter(|v| **v > 0.0)
            .map(|v| {
                let p = v / total;
                -p * p.ln()
            })
            .sum()
    }

    /// Highest-scoring index among `1..K` (background excluded); ties go to
    /// the lower index.
    pub fn argmax_foreground(&self) -> usize {
        let mut best = 1;
        for k in 2..self.values.len() {
            if self.values[k] > self.values[best] {
                best = k;
            }
        }
        best
    }
}
