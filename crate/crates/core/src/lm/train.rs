use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::{run_blocks, Depth, TokenId};
use super::params::{ModelParams, Weights};
use crate::autodiff::{Tape, Tensor};
use crate::error::{invalid, Error, Result};

/// Adam hyperparameters and batching for [`train_lm`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seq_len: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 400,
            learning_rate: 3e-3,
            batch_size: 8,
            seq_len: 64,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean cross-entropy of each step's batch, before the update.
    pub step_losses: Vec<f64>,
    pub initial_stream_ce: f64,
    pub final_stream_ce: f64,
}

/// Trains a fresh model on a token stream with Adam.
///
/// Batches are windows drawn at seeded random offsets; per-window gradients
/// are computed in parallel and summed in window order, so results do not
/// depend on the thread count.
pub fn train_lm(
    config: &ModelConfig,
    stream: &[TokenId],
    opts: &TrainOptions,
) -> Result<(ModelParams, TrainReport)> {
    let mut params = ModelParams::init(config)?;
    let seq_len = opts.seq_len.min(config.max_positions);
    if stream.len() < seq_len + 1 || seq_len < 2 {
        return Err(invalid(format!(
            "token stream of {} tokens is too short for windows of {}",
            stream.len(),
            seq_len
        )));
    }
    if opts.batch_size == 0 {
        return Err(invalid("batch_size must be positive"));
    }
    if let Some(t) = stream.iter().find(|&&t| t as usize >= config.vocab_size) {
        return Err(invalid(format!("token id {t} >= vocab_size {}", config.vocab_size)));
    }

    let initial_stream_ce = stream_cross_entropy(&params, stream, seq_len)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut first: Vec<Vec<f64>> = params.weights.items().iter().map(|t| vec![0.0; t.len()]).collect();
    let mut second = first.clone();
    let mut step_losses = Vec::with_capacity(opts.steps);

    for step in 0..opts.steps {
        let starts: Vec<usize> = (0..opts.batch_size)
            .map(|_| rng.random_range(0..=stream.len() - seq_len - 1))
            .collect();
        let per_window: Vec<(f64, Vec<Vec<f64>>)> = starts
            .par_iter()
            .map(|&s| window_gradient(&params, &stream[s..s + seq_len + 1]))
            .collect::<Result<_>>()?;

        let scale = 1.0 / opts.batch_size as f64;
        let loss: f64 = per_window.iter().map(|(l, _)| l).sum::<f64>() * scale;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        step_losses.push(loss);

        let n_tensors = per_window[0].1.len();
        let mut grads: Vec<Vec<f64>> = per_window[0].1.iter().map(|g| vec![0.0; g.len()]).collect();
        for (_, g) in &per_window {
            for i in 0..n_tensors {
                grads[i].iter_mut().zip(&g[i]).for_each(|(a, b)| *a += b * scale);
            }
        }
        let norm = grads.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::Diverged { step, loss: norm });
        }
        if opts.clip_norm > 0.0 && norm > opts.clip_norm {
            let c = opts.clip_norm / norm;
            grads.iter_mut().flatten().for_each(|v| *v *= c);
        }

        let t = (step + 1) as i32;
        let bias1 = 1.0 - opts.beta1.powi(t);
        let bias2 = 1.0 - opts.beta2.powi(t);
        let current: Vec<Tensor> = params.weights.items().into_iter().cloned().collect();
        let mut updated = Vec::with_capacity(current.len());
        for (i, tensor) in current.iter().enumerate() {
            let mut vals = tensor.to_vec();
            for j in 0..vals.len() {
                let g = grads[i][j];
                first[i][j] = opts.beta1 * first[i][j] + (1.0 - opts.beta1) * g;
                second[i][j] = opts.beta2 * second[i][j] + (1.0 - opts.beta2) * g * g;
                let mh = first[i][j] / bias1;
                let vh = second[i][j] / bias2;
                vals[j] -= opts.learning_rate * mh / (vh.sqrt() + opts.epsilon);
            }
            updated.push(Tensor::from_parts(tensor.shape().to_vec(), vals));
        }
        params.weights = params.weights.from_flat(updated)?;
        if step % 50 == 0 {
            debug!("train step {step}: loss {loss:.4}");
        }
    }

    if !params.all_finite() {
        return Err(Error::Diverged {
            step: opts.steps,
            loss: f64::NAN,
        });
    }
    let final_stream_ce = stream_cross_entropy(&params, stream, seq_len)?;
    Ok((
        params,
        TrainReport {
            step_losses,
            initial_stream_ce,
            final_stream_ce,
        },
    ))
}

/// Loss and per-tensor gradients for one window of `seq_len + 1` tokens.
fn window_gradient(params: &ModelParams, window: &[TokenId]) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let bound: Weights<_> = params.weights.map(|t| tape.leaf(t.clone()));
    let inputs: Vec<usize> = window[..window.len() - 1].iter().map(|&t| t as usize).collect();
    let emb = tape.embedding(bound.token_embedding, &inputs)?;
    let out = run_blocks(params, &bound, &mut tape, emb, Depth::Logits)?;
    let targets: Vec<(usize, usize)> = window[1..].iter().enumerate().map(|(i, &t)| (i, t as usize)).collect();
    let loss = tape.cross_entropy(out.logits.expect("logits"), &targets)?;
    let grads = tape.backward(loss)?;
    let flat = bound
        .items()
        .into_iter()
        .map(|&id| grads.get_or_zeros(id).to_vec())
        .collect();
    Ok((tape.value(loss).item(), flat))
}

/// Mean next-token cross-entropy over consecutive non-overlapping windows.
pub fn stream_cross_entropy(params: &ModelParams, stream: &[TokenId], seq_len: usize) -> Result<f64> {
    let seq_len = seq_len.min(params.config.max_positions);
    if stream.len() < 2 || seq_len < 1 {
        return Err(invalid("stream too short to evaluate"));
    }
    let mut starts = Vec::new();
    let mut s = 0;
    while s + 1 < stream.len() {
        starts.push(s);
        s += seq_len;
    }
    let parts: Vec<(f64, usize)> = starts
        .par_iter()
        .map(|&s| {
            let end = (s + seq_len + 1).min(stream.len());
            let window = &stream[s..end];
            let mut tape = Tape::new();
            let bound = params.weights.map(|t| tape.constant(t.clone()));
            let inputs: Vec<usize> = window[..window.len() - 1].iter().map(|&t| t as usize).collect();
            let emb = tape.embedding(bound.token_embedding, &inputs)?;
            let out = run_blocks(params, &bound, &mut tape, emb, Depth::Logits)?;
            let targets: Vec<(usize, usize)> =
                window[1..].iter().enumerate().map(|(i, &t)| (i, t as usize)).collect();
            let loss = tape.cross_entropy(out.logits.expect("logits"), &targets)?;
            Ok((tape.value(loss).item() * targets.len() as f64, targets.len()))
        })
        .collect::<Result<_>>()?;
    let total: f64 = parts.iter().map(|p| p.0).sum();
    let count: usize = parts.iter().map(|p| p.1).sum();
    Ok(total / count as f64)
}
