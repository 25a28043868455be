use std::fmt;

use thiserror::Error;

use super::{ParamId, ParamStore, Tape, Tensor, TensorError, Var};

/// Magnitude below which gradients are compared absolutely rather than
/// relatively. Components this small carry no usable signal at `h = 1e-5`.
pub const GRAD_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("non-finite loss {value} while perturbing {block}[{index}]")]
    NonFinite { block: String, index: usize, value: f64 },
    #[error("forward pass failed: {0}")]
    Forward(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Worst discrepancy inside one parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub len: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub worst_index: usize,
    /// Entries whose difference quotient only agreed at the refined step.
    pub kinks: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub blocks: Vec<BlockReport>,
    pub tol: f64,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.max_rel_err < self.tol)
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.blocks {
            let verdict = if b.max_rel_err < self.tol { "ok" } else { "FAIL" };
            writeln!(
                f,
                "{:<28} n={:<6} max_rel={:.3e} max_abs={:.3e} kinks={} {verdict}",
                b.name, b.len, b.max_rel_err, b.max_abs_err, b.kinks
            )?;
        }
        Ok(())
    }
}

/// Step divisor of the second probe of an entry that fails at the base step.
pub const KINK_REFINE: f64 = 10.0;

fn central_difference<L>(
    loss: &mut L,
    work: &mut [Tensor],
    b: usize,
    i: usize,
    h: f64,
    name: &str,
) -> Result<f64, GradCheckError>
where
    L: FnMut(&[Tensor]) -> Result<f64, GradCheckError>,
{
    let orig = work[b].data()[i];
    work[b].data_mut()[i] = orig + h;
    let up = loss(work);
    work[b].data_mut()[i] = orig - h;
    let down = loss(work);
    work[b].data_mut()[i] = orig;
    let (up, down) = (up?, down?);
    for v in [up, down] {
        if !v.is_finite() {
            return Err(GradCheckError::NonFinite {
                block: name.to_string(),
                index: i,
                value: v,
            });
        }
    }
    Ok((up - down) / (2.0 * h))
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(GRAD_FLOOR)
}

/// Compares supplied analytic gradients against central differences of
/// `loss` around `params`.
///
/// This is the primitive behind the tape-based checks; it is public so a
/// gradient from any source (including a deliberately wrong one) can be
/// audited.
///
/// An entry that misses `tol` at step `h` is probed once more at
/// `h / KINK_REFINE`; if that agrees, the entry counts as a kink in its
/// block report instead of a failure. A wrong gradient disagrees at both.
pub fn compare_gradients<L>(
    names: &[String],
    params: &[Tensor],
    analytic: &[Vec<f64>],
    loss: L,
    h: f64,
    tol: f64,
) -> Result<GradReport, GradCheckError>
where
    L: FnMut(&[Tensor]) -> Result<f64, GradCheckError>,
{
    compare_gradients_sampled(names, params, analytic, loss, h, tol, None)
}

/// Evenly spaced indices into a block of `len` entries, at most `cap` of
/// them; the first and last entries are always included.
pub fn sample_indices(len: usize, cap: Option<usize>) -> Vec<usize> {
    match cap {
        Some(c) if c < len => {
            if c <= 1 {
                return vec![0];
            }
            let mut out: Vec<usize> = (0..c).map(|i| i * (len - 1) / (c - 1)).collect();
            out.dedup();
            out
        }
        _ => (0..len).collect(),
    }
}

/// Like [`compare_gradients`], but probes at most `per_block` entries of
/// each block (see [`sample_indices`]).
pub fn compare_gradients_sampled<L>(
    names: &[String],
    params: &[Tensor],
    analytic: &[Vec<f64>],
    mut loss: L,
    h: f64,
    tol: f64,
    per_block: Option<usize>,
) -> Result<GradReport, GradCheckError>
where
    L: FnMut(&[Tensor]) -> Result<f64, GradCheckError>,
{
    if !(h > 0.0) {
        return Err(GradCheckError::InvalidStep(h));
    }
    let mut work = params.to_vec();
    let mut blocks = Vec::with_capacity(params.len());
    for (b, name) in names.iter().enumerate() {
        let mut report = BlockReport {
            name: name.clone(),
            len: params[b].len(),
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            worst_index: 0,
            kinks: 0,
        };
        for i in sample_indices(params[b].len(), per_block) {
            let a = analytic[b][i];
            let mut numeric = central_difference(&mut loss, &mut work, b, i, h, name)?;
            let mut rel = rel_err(a, numeric);
            if rel >= tol {
                // A piecewise-linear unit whose input lies within `h` of its
                // kink spoils the difference quotient; a finer step that
                // agrees with the analytic value marks such an entry.
                let fine = central_difference(&mut loss, &mut work, b, i, h / KINK_REFINE, name)?;
                let fine_rel = rel_err(a, fine);
                if fine_rel < tol {
                    report.kinks += 1;
                    numeric = fine;
                    rel = fine_rel;
                }
            }
            report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_index = i;
            }
        }
        blocks.push(report);
    }
    Ok(GradReport { blocks, tol })
}

/// Checks tape gradients of a scalar function of free tensors.
///
/// `f` receives one trainable leaf per entry of `params` and must return
/// a scalar.
pub fn finite_diff_check<F>(f: F, params: &[Tensor], h: f64, tol: f64) -> Result<GradReport, GradCheckError>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var, TensorError>,
{
    let run = |values: &[Tensor], want_grad: bool| -> Result<(f64, Vec<Vec<f64>>), GradCheckError> {
        let mut tape = Tape::new();
        let leaves: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &leaves)?;
        let loss = scalar_of(&tape, out)?;
        let mut grads = Vec::new();
        if want_grad {
            tape.backward(out)?;
            grads = leaves.iter().map(|v| tape.grad(*v).unwrap_or(&[]).to_vec()).collect();
        }
        Ok((loss, grads))
    };
    let (_, analytic) = run(params, true)?;
    let names: Vec<String> = (0..params.len()).map(|i| format!("input{i}")).collect();
    compare_gradients(&names, params, &analytic, |v| run(v, false).map(|r| r.0), h, tol)
}

/// Checks tape gradients with respect to selected entries of a parameter
/// store. `f` builds the forward pass on a tape bound to the store.
pub fn finite_diff_check_store<F, E>(
    store: &ParamStore,
    ids: &[ParamId],
    f: F,
    h: f64,
    tol: f64,
) -> Result<GradReport, GradCheckError>
where
    F: Fn(&mut Tape<'_>) -> Result<Var, E>,
    E: fmt::Display,
{
    finite_diff_check_store_sampled(store, ids, f, h, tol, None)
}

/// Store-based check probing at most `per_block` entries of each block.
pub fn finite_diff_check_store_sampled<F, E>(
    store: &ParamStore,
    ids: &[ParamId],
    f: F,
    h: f64,
    tol: f64,
    per_block: Option<usize>,
) -> Result<GradReport, GradCheckError>
where
    F: Fn(&mut Tape<'_>) -> Result<Var, E>,
    E: fmt::Display,
{
    let forward = |s: &ParamStore, want_grad: bool| -> Result<(f64, Vec<Vec<f64>>), GradCheckError> {
        let mut tape = Tape::with_params(s);
        let out = f(&mut tape).map_err(|e| GradCheckError::Forward(e.to_string()))?;
        let loss = scalar_of(&tape, out)?;
        let mut grads = Vec::new();
        if want_grad {
            tape.backward(out)?;
            let all = tape.param_grads();
            grads = ids
                .iter()
                .map(|id| {
                    all.iter()
                        .find(|(pid, _)| pid == id)
                        .map(|(_, g)| g.clone())
                        .unwrap_or_else(|| vec![0.0; s.get(*id).len()])
                })
                .collect();
        }
        Ok((loss, grads))
    };
    let (_, analytic) = forward(store, true)?;
    let names: Vec<String> = ids.iter().map(|id| store.name(*id).to_string()).collect();
    let params: Vec<Tensor> = ids.iter().map(|id| store.get(*id).clone()).collect();
    let mut scratch = store.clone();
    compare_gradients_sampled(
        &names,
        &params,
        &analytic,
        |values| {
            for (id, t) in ids.iter().zip(values) {
                scratch.set(*id, t.clone())?;
            }
            forward(&scratch, false).map(|r| r.0)
        },
        h,
        tol,
        per_block,
    )
}

fn scalar_of(tape: &Tape<'_>, v: Var) -> Result<f64, GradCheckError> {
    let t = tape.value(v);
    if t.len() != 1 {
        return Err(GradCheckError::Forward(format!(
            "expected a scalar loss, got shape {:?}",
            t.shape()
        )));
    }
    Ok(t.data()[0])
}
