use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::error::{invalid, Error, Result};

/// Attribution method. IG uses a zero baseline and the right-endpoint
/// Riemann sum over `steps` points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase", deny_unknown_fields)]
pub enum Method {
    Gxi,
    Ig { steps: usize },
}

pub const DEFAULT_IG_STEPS: usize = 20;

impl Method {
    pub fn ig() -> Self {
        Method::Ig {
            steps: DEFAULT_IG_STEPS,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Method::Gxi => "gxi",
            Method::Ig { .. } => "ig",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Method::Ig { steps: 0 } => Err(invalid("integrated gradients needs at least 1 step")),
            _ => Ok(()),
        }
    }
}

/// Scalar function of one or more `(T_i, H)` embedding inputs.
pub trait Objective: Sync {
    /// The actual inputs being explained.
    fn inputs(&self) -> &[Tensor];

    /// Word index owning each row of each input.
    fn owners(&self) -> &[Vec<usize>];

    /// Loss at `xs` and its gradient with respect to every input.
    fn evaluate(&self, xs: &[Tensor]) -> Result<(f64, Vec<Tensor>)>;
}

/// Per-row sums of `x ⊙ g`.
pub fn row_products(x: &Tensor, g: &Tensor) -> Vec<f64> {
    let h = x.cols();
    x.data()
        .chunks(h)
        .zip(g.data().chunks(h))
        .map(|(xr, gr)| xr.iter().zip(gr).map(|(a, b)| a * b).sum())
        .collect()
}

/// Gradient-times-input token scores for `input` on an already built tape.
pub fn gxi(tape: &Tape, loss: NodeId, input: NodeId) -> Result<Vec<f64>> {
    let grads = tape.backward(loss)?;
    Ok(row_products(tape.value(input), &grads.get_or_zeros(input)))
}

/// Token scores per input, plus the loss at the explained inputs.
#[derive(Debug, Clone)]
pub struct TokenScores {
    pub loss: f64,
    pub per_input: Vec<Vec<f64>>,
}

pub fn token_scores(obj: &dyn Objective, method: Method) -> Result<TokenScores> {
    method.validate()?;
    let xs = obj.inputs();
    match method {
        Method::Gxi => {
            let (loss, grads) = obj.evaluate(xs)?;
            check_grads(xs, &grads)?;
            let per_input = xs.iter().zip(&grads).map(|(x, g)| row_products(x, g)).collect();
            Ok(TokenScores { loss, per_input })
        }
        Method::Ig { steps } => {
            let evals: Vec<(f64, Vec<Tensor>)> = (1..=steps)
                .into_par_iter()
                .map(|k| {
                    let alpha = k as f64 / steps as f64;
                    let scaled: Vec<Tensor> = xs.iter().map(|x| x.scale(alpha)).collect();
                    obj.evaluate(&scaled)
                })
                .collect::<Result<_>>()?;
            // summed in step order so results do not depend on scheduling
            let mut acc: Vec<Vec<f64>> = xs.iter().map(|x| vec![0.0; x.len()]).collect();
            for (_, grads) in &evals {
                check_grads(xs, grads)?;
                for (a, g) in acc.iter_mut().zip(grads) {
                    a.iter_mut().zip(g.data()).for_each(|(a, g)| *a += g);
                }
            }
            let inv = 1.0 / steps as f64;
            let per_input = xs
                .iter()
                .zip(acc)
                .map(|(x, a)| {
                    let avg = Tensor::new(x.shape().to_vec(), a.into_iter().map(|v| v * inv).collect())?;
                    Ok(row_products(x, &avg))
                })
                .collect::<Result<_>>()?;
            let loss = evals.last().expect("steps >= 1").0;
            Ok(TokenScores { loss, per_input })
        }
    }
}

fn check_grads(xs: &[Tensor], grads: &[Tensor]) -> Result<()> {
    if grads.len() != xs.len() || xs.iter().zip(grads).any(|(x, g)| x.shape() != g.shape()) {
        return Err(Error::Consistency("objective returned gradients of the wrong shape".into()));
    }
    if grads.iter().any(|g| g.data().iter().any(|v| !v.is_finite())) {
        return Err(Error::Numerical("non-finite attribution gradient".into()));
    }
    Ok(())
}

/// Sums token scores into word scores, across all inputs.
pub fn word_scores(owners: &[Vec<usize>], scores: &TokenScores) -> Result<BTreeMap<usize, f64>> {
    if owners.len() != scores.per_input.len() {
        return Err(Error::Consistency("owner map does not match inputs".into()));
    }
    let mut out = BTreeMap::new();
    for (own, sc) in owners.iter().zip(&scores.per_input) {
        if own.len() != sc.len() {
            return Err(Error::Consistency("token owner count does not match token scores".into()));
        }
        for (&w, &s) in own.iter().zip(sc) {
            *out.entry(w).or_insert(0.0) += s;
        }
    }
    Ok(out)
}

/// Loss at the zero baseline, for completeness checks.
pub fn baseline_loss(obj: &dyn Objective) -> Result<f64> {
    let zeros: Vec<Tensor> = obj.inputs().iter().map(|x| Tensor::zeros(x.rows(), x.cols())).collect();
    Ok(obj.evaluate(&zeros)?.0)
}
