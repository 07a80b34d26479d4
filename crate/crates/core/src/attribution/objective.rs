use rayon::prelude::*;

use super::method::Objective;
use crate::autodiff::{Tape, Tensor};
use crate::encoder::{EncodingModel, Head, ResponseMatrix};
use crate::error::{invalid, Error, Result};
use crate::lm::{ContextModel, Depth, TokenId};
use crate::stimulus::{delayed_trs, tr_embedding, word_embedding, Context, Corpus, CorpusTokens, TokenizedContext};

/// Corpus, its tokens and the context length used to build word contexts.
#[derive(Clone, Copy)]
pub struct Stimulus<'a> {
    pub corpus: &'a Corpus,
    pub tokens: &'a CorpusTokens,
    pub context_len: usize,
}

impl Stimulus<'_> {
    /// Words feeding each delayed TR embedding of `tr`, delay 0 first. An
    /// empty TR borrows the words of the TR it carries forward.
    pub fn delayed_words(&self, tr: usize, delays: usize) -> Result<Vec<Vec<usize>>> {
        let lagged = delayed_trs(self.corpus, tr, delays).ok_or_else(|| {
            invalid(format!("TR {tr} has fewer than {delays} TRs of history in its run"))
        })?;
        Ok(lagged
            .into_iter()
            .map(|t| match self.corpus.tr_source(t) {
                Some(src) => self.corpus.trs()[src].words.clone().collect(),
                None => Vec::new(),
            })
            .collect())
    }

    fn context_tokens<M: ContextModel + ?Sized>(&self, model: &M, word: usize) -> Result<TokenizedContext> {
        let ctx = self.tokens.context(&Context::ending_at(word, self.context_len))?;
        if ctx.tokens.len() > model.max_positions() {
            return Err(invalid(format!(
                "context of word {word} has {} tokens but the model accepts {}; truncate by {} tokens (lower the context length)",
                ctx.tokens.len(),
                model.max_positions(),
                ctx.tokens.len() - model.max_positions()
            )));
        }
        Ok(ctx)
    }
}

/// Brain-alignment MSE for one TR through the per-delay heads.
pub struct BrainObjective<'a, M: ContextModel + ?Sized> {
    model: &'a M,
    layer: usize,
    contexts: Vec<TokenizedContext>,
    inputs: Vec<Tensor>,
    owners: Vec<Vec<usize>>,
    /// Context indices averaged into each delayed TR embedding.
    delay_members: Vec<Vec<usize>>,
    heads: Vec<Head>,
    bias: Vec<f64>,
    target: Vec<f64>,
    last_word: usize,
}

impl<'a, M: ContextModel + ?Sized> BrainObjective<'a, M> {
    pub fn new(
        model: &'a M,
        stim: Stimulus<'_>,
        encoder: &EncodingModel,
        responses: &ResponseMatrix,
        tr: usize,
    ) -> Result<Self> {
        if encoder.hidden != model.hidden_size() {
            return Err(invalid(format!(
                "encoder expects hidden size {}, model has {}",
                encoder.hidden,
                model.hidden_size()
            )));
        }
        if encoder.layer >= model.n_layers() {
            return Err(invalid(format!("encoder layer {} not in model", encoder.layer)));
        }
        if responses.voxels != encoder.voxels {
            return Err(invalid("response and encoder voxel counts differ"));
        }
        let words_per_delay = stim.delayed_words(tr, encoder.delays)?;
        let (heads, bias) = encoder.heads_for_tr(tr)?;
        let target = responses
            .row_of_tr(tr)
            .ok_or_else(|| invalid(format!("no response for TR {tr}")))?
            .to_vec();
        Self::from_parts(model, stim, encoder.layer, words_per_delay, heads, bias, target)
    }

    /// Builds the objective from explicit heads. `words_per_delay[d]` lists
    /// the words averaged into `e_{t-d}`.
    pub fn from_parts(
        model: &'a M,
        stim: Stimulus<'_>,
        layer: usize,
        words_per_delay: Vec<Vec<usize>>,
        heads: Vec<Head>,
        bias: Vec<f64>,
        target: Vec<f64>,
    ) -> Result<Self> {
        if heads.len() != words_per_delay.len() {
            return Err(invalid("one head per delay is required"));
        }
        if heads.iter().any(|h| h.voxels != target.len() || h.hidden != model.hidden_size()) || bias.len() != target.len()
        {
            return Err(invalid("head dimensions disagree with the model or responses"));
        }
        let mut unique: Vec<usize> = words_per_delay.iter().flatten().copied().collect();
        unique.sort_unstable();
        unique.dedup();
        let last_word = *unique
            .last()
            .ok_or_else(|| invalid("the delayed TRs contain no words"))?;
        let contexts = unique
            .iter()
            .map(|&w| stim.context_tokens(model, w))
            .collect::<Result<Vec<_>>>()?;
        let inputs = contexts
            .iter()
            .map(|c| model.token_embeddings(&c.tokens))
            .collect::<Result<Vec<_>>>()?;
        let owners = contexts.iter().map(TokenizedContext::token_owners).collect();
        let delay_members = words_per_delay
            .iter()
            .map(|ws| ws.iter().map(|w| unique.binary_search(w).expect("collected above")).collect())
            .collect();
        Ok(Self {
            model,
            layer,
            contexts,
            inputs,
            owners,
            delay_members,
            heads,
            bias,
            target,
            last_word,
        })
    }

    pub fn last_word(&self) -> usize {
        self.last_word
    }

    /// Predicted voxel activity at the explained inputs.
    pub fn prediction(&self) -> Result<Vec<f64>> {
        let embs = self.forward(&self.inputs)?.into_iter().map(|f| f.embedding).collect::<Vec<_>>();
        Ok(self.predict(&embs))
    }

    fn forward(&self, xs: &[Tensor]) -> Result<Vec<ContextPass>> {
        if xs.len() != self.contexts.len() {
            return Err(invalid("wrong number of context inputs"));
        }
        xs.par_iter()
            .zip(&self.contexts)
            .map(|(x, ctx)| {
                let mut tape = Tape::new();
                let input = tape.leaf(x.clone());
                let out = self.model.forward_embeddings(&mut tape, input, Depth::Layer(self.layer))?;
                let state = out.layers[self.layer];
                let embedding = word_embedding(tape.value(state), ctx)?;
                Ok(ContextPass {
                    tape,
                    input,
                    state,
                    embedding,
                })
            })
            .collect()
    }

    fn delay_embeddings(&self, embs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let h = self.model.hidden_size();
        self.delay_members
            .iter()
            .map(|m| {
                if m.is_empty() {
                    vec![0.0; h]
                } else {
                    let ws: Vec<&[f64]> = m.iter().map(|&c| embs[c].as_slice()).collect();
                    tr_embedding(&ws)
                }
            })
            .collect()
    }

    fn predict(&self, embs: &[Vec<f64>]) -> Vec<f64> {
        let mut y = self.bias.clone();
        for (head, e) in self.heads.iter().zip(self.delay_embeddings(embs)) {
            head.accumulate(&e, &mut y);
        }
        y
    }
}

struct ContextPass {
    tape: Tape,
    input: crate::autodiff::NodeId,
    state: crate::autodiff::NodeId,
    embedding: Vec<f64>,
}

impl<M: ContextModel + ?Sized> Objective for BrainObjective<'_, M> {
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }

    fn owners(&self) -> &[Vec<usize>] {
        &self.owners
    }

    fn evaluate(&self, xs: &[Tensor]) -> Result<(f64, Vec<Tensor>)> {
        let passes = self.forward(xs)?;
        let embs: Vec<Vec<f64>> = passes.iter().map(|p| p.embedding.clone()).collect();
        let pred = self.predict(&embs);
        let v = self.target.len() as f64;
        let loss = pred.iter().zip(&self.target).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / v;
        let d_pred: Vec<f64> = pred.iter().zip(&self.target).map(|(p, y)| 2.0 * (p - y) / v).collect();

        // d loss / d word embedding, through the TR means and the heads
        let h = self.model.hidden_size();
        let mut d_word = vec![vec![0.0; h]; passes.len()];
        for (head, members) in self.heads.iter().zip(&self.delay_members) {
            if members.is_empty() {
                continue;
            }
            let share = 1.0 / members.len() as f64;
            let d_e: Vec<f64> = (0..h)
                .map(|j| {
                    let w = &head.weights[j * head.voxels..(j + 1) * head.voxels];
                    w.iter().zip(&d_pred).map(|(a, b)| a * b).sum::<f64>() * share
                })
                .collect();
            for &c in members {
                d_word[c].iter_mut().zip(&d_e).for_each(|(a, b)| *a += b);
            }
        }

        let grads = passes
            .into_par_iter()
            .zip(d_word)
            .zip(&self.contexts)
            .map(|((mut p, g), ctx)| {
                let span = ctx.final_span().tokens.clone();
                let rows = ctx.tokens.len();
                let inv = 1.0 / span.len() as f64;
                let mut seed = vec![0.0; rows * h];
                for r in span {
                    seed[r * h..(r + 1) * h].iter_mut().zip(&g).for_each(|(s, v)| *s = v * inv);
                }
                let seed = p.tape.constant(Tensor::matrix(rows, h, seed)?);
                let prod = p.tape.mul(p.state, seed)?;
                let surrogate = p.tape.sum(prod)?;
                Ok(p.tape.backward(surrogate)?.get_or_zeros(p.input))
            })
            .collect::<Result<Vec<_>>>()?;
        if !loss.is_finite() {
            return Err(Error::Numerical("brain loss is not finite".into()));
        }
        Ok((loss, grads))
    }
}

/// Teacher-forced next-word cross-entropy after the extended context of a TR.
pub struct NwpObjective<'a, M: ContextModel + ?Sized> {
    model: &'a M,
    inputs: Vec<Tensor>,
    owners: Vec<Vec<usize>>,
    /// Embeddings of the target word's tokens fed back under teacher forcing;
    /// held constant.
    prefix: Option<Tensor>,
    targets: Vec<TokenId>,
    last_word: usize,
}

impl<'a, M: ContextModel + ?Sized> NwpObjective<'a, M> {
    pub fn new(model: &'a M, stim: Stimulus<'_>, delays: usize, tr: usize) -> Result<Self> {
        let words: Vec<usize> = stim.delayed_words(tr, delays)?.into_iter().flatten().collect();
        let last_word = *words
            .iter()
            .max()
            .ok_or_else(|| invalid("the delayed TRs contain no words"))?;
        let first = words
            .iter()
            .map(|&w| Context::ending_at(w, stim.context_len).members.start)
            .min()
            .expect("non-empty");
        Self::from_span(model, stim.tokens, first, last_word)
    }

    /// Context `first..=last_word`, predicting word `last_word + 1`.
    pub fn from_span(model: &'a M, tokens: &CorpusTokens, first: usize, last_word: usize) -> Result<Self> {
        let target_word = last_word + 1;
        if target_word >= tokens.len() {
            return Err(invalid(format!("word {last_word} has no following word to predict")));
        }
        let ext = tokens.span(first..last_word + 1)?;
        let targets = tokens.word(target_word).to_vec();
        let total = ext.tokens.len() + targets.len() - 1;
        if total > model.max_positions() {
            return Err(invalid(format!(
                "extended context plus target needs {total} positions but the model accepts {}; truncate by {} tokens (lower the context length)",
                model.max_positions(),
                total - model.max_positions()
            )));
        }
        let prefix = if targets.len() > 1 {
            Some(model.token_embeddings(&targets[..targets.len() - 1])?)
        } else {
            None
        };
        Ok(Self {
            model,
            inputs: vec![model.token_embeddings(&ext.tokens)?],
            owners: vec![ext.token_owners()],
            prefix,
            targets,
            last_word,
        })
    }

    pub fn last_word(&self) -> usize {
        self.last_word
    }
}

impl<M: ContextModel + ?Sized> Objective for NwpObjective<'_, M> {
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }

    fn owners(&self) -> &[Vec<usize>] {
        &self.owners
    }

    fn evaluate(&self, xs: &[Tensor]) -> Result<(f64, Vec<Tensor>)> {
        if xs.len() != 1 {
            return Err(invalid("next-word objective takes one input"));
        }
        let mut tape = Tape::new();
        let x = tape.leaf(xs[0].clone());
        let input = match &self.prefix {
            Some(p) => {
                let p = tape.constant(p.clone());
                tape.concat_rows(&[x, p])?
            }
            None => x,
        };
        let out = self.model.forward_embeddings(&mut tape, input, Depth::Logits)?;
        let logits = out.logits.ok_or_else(|| Error::Consistency("model returned no logits".into()))?;
        let ctx_rows = xs[0].rows();
        let targets: Vec<(usize, usize)> = self
            .targets
            .iter()
            .enumerate()
            .map(|(i, &t)| (ctx_rows - 1 + i, t as usize))
            .collect();
        let loss = tape.cross_entropy(logits, &targets)?;
        let grads = tape.backward(loss)?;
        Ok((tape.value(loss).item(), vec![grads.get_or_zeros(x)]))
    }
}
