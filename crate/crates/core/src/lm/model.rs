use super::config::Family;
use super::params::{Mixer, ModelParams, Weights};
use crate::autodiff::{NodeId, Tape, Tensor};
use crate::error::{invalid, Result};

pub type TokenId = u32;

/// How far a forward pass needs to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Depth {
    /// Stop after the given block (0-based) has produced its hidden state.
    Layer(usize),
    /// Run every block and the language-model head.
    Logits,
}

/// Node handles produced by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardNodes {
    /// Hidden state after each executed block, `(T, H)`.
    pub layers: Vec<NodeId>,
    pub logits: Option<NodeId>,
}

/// Hidden states after every block for a single input.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStates {
    pub layers: Vec<Tensor>,
}

/// A causal model whose input can be supplied as token embeddings.
///
/// Attribution attaches to the embedding-lookup output, so positional
/// information is added inside [`ContextModel::forward_embeddings`].
pub trait ContextModel: Sync {
    fn hidden_size(&self) -> usize;
    fn n_layers(&self) -> usize;
    fn vocab_size(&self) -> usize;
    fn max_positions(&self) -> usize;

    /// Raw token embeddings `(T, H)`.
    fn token_embeddings(&self, tokens: &[TokenId]) -> Result<Tensor>;

    /// Continues the forward pass from an embedding node already on `tape`.
    fn forward_embeddings(&self, tape: &mut Tape, embeddings: NodeId, depth: Depth) -> Result<ForwardNodes>;
}

/// The desk-scale causal LM used throughout the pipeline.
#[derive(Debug, Clone)]
pub struct ToyLm {
    params: ModelParams,
}

impl ToyLm {
    pub fn new(params: ModelParams) -> Result<Self> {
        params.config.validate()?;
        Ok(Self { params })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        let cfg = &self.params.config;
        if tokens.is_empty() {
            return Err(invalid("empty token sequence"));
        }
        if tokens.len() > cfg.max_positions {
            return Err(invalid(format!(
                "input of {} tokens exceeds max_positions {}",
                tokens.len(),
                cfg.max_positions
            )));
        }
        if let Some(t) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(invalid(format!("token id {t} >= vocab_size {}", cfg.vocab_size)));
        }
        Ok(())
    }

    /// Full forward pass returning every layer's hidden states and the logits.
    pub fn forward(&self, tokens: &[TokenId]) -> Result<(LayerStates, Tensor)> {
        let mut tape = Tape::new();
        let emb = self.token_embeddings(tokens)?;
        let x = tape.constant(emb);
        let out = self.forward_embeddings(&mut tape, x, Depth::Logits)?;
        let layers = out.layers.iter().map(|&id| tape.value(id).clone()).collect();
        let logits = tape.value(out.logits.expect("logits requested")).clone();
        Ok((LayerStates { layers }, logits))
    }

    /// Multiply-add count of a full forward pass over `tokens`.
    pub fn forward_flops(&self, tokens: &[TokenId]) -> Result<u64> {
        let mut tape = Tape::new();
        let x = tape.constant(self.token_embeddings(tokens)?);
        self.forward_embeddings(&mut tape, x, Depth::Logits)?;
        Ok(tape.flops())
    }
}

impl ContextModel for ToyLm {
    fn hidden_size(&self) -> usize {
        self.params.config.hidden_size
    }

    fn n_layers(&self) -> usize {
        self.params.config.n_layers
    }

    fn vocab_size(&self) -> usize {
        self.params.config.vocab_size
    }

    fn max_positions(&self) -> usize {
        self.params.config.max_positions
    }

    fn token_embeddings(&self, tokens: &[TokenId]) -> Result<Tensor> {
        self.check_tokens(tokens)?;
        let table = &self.params.weights.token_embedding;
        let h = table.cols();
        let mut data = Vec::with_capacity(tokens.len() * h);
        for &t in tokens {
            data.extend_from_slice(table.row(t as usize));
        }
        Ok(Tensor::from_parts(vec![tokens.len(), h], data))
    }

    fn forward_embeddings(&self, tape: &mut Tape, embeddings: NodeId, depth: Depth) -> Result<ForwardNodes> {
        let bound = self.params.weights.map(|t| tape.constant(t.clone()));
        run_blocks(&self.params, &bound, tape, embeddings, depth)
    }
}

/// Runs the model on `tape` using already bound weights. Shared by inference
/// (weights as constants) and training (weights as leaves).
pub(crate) fn run_blocks(
    params: &ModelParams,
    w: &Weights<NodeId>,
    tape: &mut Tape,
    embeddings: NodeId,
    depth: Depth,
) -> Result<ForwardNodes> {
    let cfg = &params.config;
    let (t, h) = tape.value(embeddings).dims2()?;
    if h != cfg.hidden_size {
        return Err(invalid(format!("embedding width {h} != hidden_size {}", cfg.hidden_size)));
    }
    if t == 0 || t > cfg.max_positions {
        return Err(invalid(format!(
            "input of {t} tokens outside 1..={}",
            cfg.max_positions
        )));
    }
    let last_layer = match depth {
        Depth::Layer(l) if l >= cfg.n_layers => {
            return Err(invalid(format!("layer {l} >= n_layers {}", cfg.n_layers)));
        }
        Depth::Layer(l) => l,
        Depth::Logits => cfg.n_layers - 1,
    };

    let mut hidden = match (cfg.family, w.position_embedding) {
        (Family::Transformer, Some(pos)) => {
            let pos = tape.slice_rows(pos, 0, t)?;
            tape.add(embeddings, pos)?
        }
        _ => embeddings,
    };

    let mut layers = Vec::with_capacity(last_layer + 1);
    for block in &w.blocks[..=last_layer] {
        let normed = tape.rms_norm(hidden)?;
        let normed = tape.mul_row(normed, block.mix_norm)?;
        let mixed = match block.mixer {
            Mixer::Attention {
                query,
                key,
                value,
                output,
            } => attention(tape, normed, query, key, value, output, cfg.n_heads)?,
            Mixer::Ssm {
                input,
                decay_logit,
                output,
            } => {
                let u = tape.matmul(normed, input)?;
                let decay = tape.sigmoid(decay_logit)?;
                let ones = tape.constant(Tensor::row_vector(vec![1.0; h]));
                let gain = tape.sub(ones, decay)?;
                let u = tape.mul_row(u, gain)?;
                let state = tape.diag_scan(u, decay)?;
                tape.matmul(state, output)?
            }
        };
        hidden = tape.add(hidden, mixed)?;

        let normed = tape.rms_norm(hidden)?;
        let normed = tape.mul_row(normed, block.mlp_norm)?;
        let up = tape.matmul(normed, block.mlp_up)?;
        let act = tape.silu(up)?;
        let down = tape.matmul(act, block.mlp_down)?;
        hidden = tape.add(hidden, down)?;
        layers.push(hidden);
    }

    let logits = match depth {
        Depth::Logits => {
            let normed = tape.rms_norm(hidden)?;
            let normed = tape.mul_row(normed, w.final_norm)?;
            Some(tape.matmul(normed, w.lm_head)?)
        }
        Depth::Layer(_) => None,
    };
    Ok(ForwardNodes { layers, logits })
}

fn attention(
    tape: &mut Tape,
    x: NodeId,
    wq: NodeId,
    wk: NodeId,
    wv: NodeId,
    wo: NodeId,
    n_heads: usize,
) -> Result<NodeId> {
    let q = tape.matmul(x, wq)?;
    let k = tape.matmul(x, wk)?;
    let v = tape.matmul(x, wv)?;
    let h = tape.value(q).cols();
    let dh = h / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(n_heads);
    for head in 0..n_heads {
        let qh = tape.slice_cols(q, head * dh, dh)?;
        let kh = tape.slice_cols(k, head * dh, dh)?;
        let vh = tape.slice_cols(v, head * dh, dh)?;
        let scores = tape.matmul_nt(qh, kh)?;
        let scores = tape.scale(scores, scale)?;
        let probs = tape.causal_softmax(scores)?;
        heads.push(tape.matmul(probs, vh)?);
    }
    let merged = if heads.len() == 1 {
        heads[0]
    } else {
        tape.concat_cols(&heads)?
    };
    tape.matmul(merged, wo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::ModelConfig;

    fn small(family: Family) -> ToyLm {
        let cfg = ModelConfig {
            family,
            n_layers: 3,
            hidden_size: 8,
            n_heads: 2,
            vocab_size: 30,
            max_positions: 12,
            seed: 7,
        };
        ToyLm::new(ModelParams::init(&cfg).unwrap()).unwrap()
    }

    #[test]
    fn shared_prefix_gives_identical_logits() {
        for family in [Family::Transformer, Family::Ssm] {
            let lm = small(family);
            let (_, a) = lm.forward(&[1, 2, 3, 4, 5]).unwrap();
            let (_, b) = lm.forward(&[1, 2, 3, 9, 9, 9]).unwrap();
            for t in 0..3 {
                assert_eq!(a.row(t), b.row(t));
            }
            assert_ne!(a.row(3), b.row(3));
        }
    }

    #[test]
    fn layer_count_matches_config() {
        for family in [Family::Transformer, Family::Ssm] {
            let (states, logits) = small(family).forward(&[3, 4]).unwrap();
            assert_eq!(states.layers.len(), 3);
            assert_eq!(states.layers[0].shape(), &[2, 8]);
            assert_eq!(logits.shape(), &[2, 30]);
        }
    }

    #[test]
    fn rejects_overlong_and_out_of_vocab() {
        let lm = small(Family::Transformer);
        assert!(lm.forward(&[1; 13]).is_err());
        assert!(lm.forward(&[30]).is_err());
        assert!(lm.forward(&[]).is_err());
    }

    #[test]
    fn partial_depth_matches_full_pass() {
        let lm = small(Family::Transformer);
        let tokens = [5, 6, 7, 8];
        let (states, _) = lm.forward(&tokens).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(lm.token_embeddings(&tokens).unwrap());
        let out = lm.forward_embeddings(&mut tape, x, Depth::Layer(1)).unwrap();
        assert_eq!(out.layers.len(), 2);
        assert!(out.logits.is_none());
        assert_eq!(tape.value(out.layers[1]), &states.layers[1]);
    }
}
