use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::context::{Context, CorpusTokens, TokenizedContext};
use super::corpus::Corpus;
use crate::autodiff::{Tape, Tensor};
use crate::error::{invalid, Error, Result};
use crate::lm::{ContextModel, Depth};

/// Mean of the final word's token states in a context.
pub fn word_embedding(layer_state: &Tensor, ctx: &TokenizedContext) -> Result<Vec<f64>> {
    let (rows, h) = layer_state.dims2()?;
    if rows != ctx.tokens.len() {
        return Err(Error::Consistency(format!(
            "layer state has {rows} rows for a context of {} tokens",
            ctx.tokens.len()
        )));
    }
    let span = &ctx.final_span().tokens;
    if span.is_empty() || span.end != rows {
        return Err(Error::Consistency("final word does not end the context".into()));
    }
    let mut acc = vec![0.0; h];
    for r in span.clone() {
        acc.iter_mut().zip(layer_state.row(r)).for_each(|(a, v)| *a += v);
    }
    let inv = 1.0 / span.len() as f64;
    Ok(acc.into_iter().map(|v| v * inv).collect())
}

/// Arithmetic mean of the word embeddings in one TR.
pub fn tr_embedding(words: &[&[f64]]) -> Vec<f64> {
    let h = words.first().map_or(0, |w| w.len());
    let mut acc = vec![0.0; h];
    for w in words {
        acc.iter_mut().zip(w.iter()).for_each(|(a, v)| *a += v);
    }
    let inv = 1.0 / words.len().max(1) as f64;
    acc.into_iter().map(|v| v * inv).collect()
}

/// Word embeddings for every word, for each requested layer:
/// `layers[i][word]` is an `H`-vector for `requested[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WordEmbeddings {
    pub layer_ids: Vec<usize>,
    pub layers: Vec<Vec<Vec<f64>>>,
}

/// Runs every word's context through the model. Words are processed in
/// parallel and merged by index.
pub fn extract_word_embeddings<M: ContextModel + ?Sized>(
    model: &M,
    tokens: &CorpusTokens,
    context_len: usize,
    layers: &[usize],
) -> Result<WordEmbeddings> {
    let order: Vec<usize> = (0..tokens.len()).collect();
    extract_in_order(model, tokens, context_len, layers, &order)
}

/// Same as [`extract_word_embeddings`] but processes words in `order`.
pub fn extract_in_order<M: ContextModel + ?Sized>(
    model: &M,
    tokens: &CorpusTokens,
    context_len: usize,
    layers: &[usize],
    order: &[usize],
) -> Result<WordEmbeddings> {
    if layers.is_empty() {
        return Err(invalid("no layers requested"));
    }
    if context_len == 0 {
        return Err(invalid("context length must be >= 1"));
    }
    let deepest = *layers.iter().max().expect("non-empty");
    if deepest >= model.n_layers() {
        return Err(invalid(format!("layer {deepest} >= n_layers {}", model.n_layers())));
    }
    let computed: Vec<(usize, Vec<Vec<f64>>)> = order
        .par_iter()
        .map(|&w| {
            let ctx = tokens.context(&Context::ending_at(w, context_len))?;
            if ctx.tokens.len() > model.max_positions() {
                return Err(invalid(format!(
                    "context of word {w} has {} tokens, above max_positions {}; lower the context length",
                    ctx.tokens.len(),
                    model.max_positions()
                )));
            }
            let mut tape = Tape::new();
            let x = tape.constant(model.token_embeddings(&ctx.tokens)?);
            let out = model.forward_embeddings(&mut tape, x, Depth::Layer(deepest))?;
            let per_layer = layers
                .iter()
                .map(|&l| word_embedding(tape.value(out.layers[l]), &ctx))
                .collect::<Result<Vec<_>>>()?;
            Ok((w, per_layer))
        })
        .collect::<Result<_>>()?;

    let mut out = vec![vec![Vec::new(); tokens.len()]; layers.len()];
    for (w, per_layer) in computed {
        for (li, e) in per_layer.into_iter().enumerate() {
            out[li][w] = e;
        }
    }
    if out.iter().flatten().any(Vec::is_empty) {
        return Err(Error::Consistency("some words were not embedded".into()));
    }
    Ok(WordEmbeddings {
        layer_ids: layers.to_vec(),
        layers: out,
    })
}

/// TR embeddings for every global TR. Empty TRs reuse the nearest earlier
/// TR of the same run; an empty TR with no earlier content is all zeros.
pub fn tr_embeddings(corpus: &Corpus, word_embs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let h = word_embs.first().map_or(0, Vec::len);
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(corpus.trs().len());
    for (i, slot) in corpus.trs().iter().enumerate() {
        let e = match corpus.tr_source(i) {
            Some(src) if src == i => {
                let words: Vec<&[f64]> = slot.words.clone().map(|w| word_embs[w].as_slice()).collect();
                tr_embedding(&words)
            }
            Some(src) => out[src].clone(),
            None => {
                warn!("run {} TR {} has no words and no earlier TR; using zeros", slot.run, slot.tr_in_run);
                vec![0.0; h]
            }
        };
        out.push(e);
    }
    out
}

/// Global TR indices `[t, t-1, ..., t-D+1]` when all lie in `t`'s run.
pub fn delayed_trs(corpus: &Corpus, tr: usize, delays: usize) -> Option<Vec<usize>> {
    let slot = corpus.trs().get(tr)?;
    if delays == 0 || slot.tr_in_run + 1 < delays {
        return None;
    }
    Some((0..delays).map(|d| tr - d).collect())
}

/// Delay-concatenated stimulus features, `(rows, delays * hidden)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignMatrix {
    pub layer: usize,
    pub delays: usize,
    pub hidden: usize,
    pub rows: usize,
    /// Global TR index of each row.
    pub tr_rows: Vec<usize>,
    pub values: Vec<f64>,
}

impl DesignMatrix {
    pub fn cols(&self) -> usize {
        self.delays * self.hidden
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.values[r * c..(r + 1) * c]
    }

    pub fn row_of_tr(&self, tr: usize) -> Option<usize> {
        self.tr_rows.iter().position(|&t| t == tr)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tr_rows.len() != self.rows || self.values.len() != self.rows * self.cols() {
            return Err(Error::Format("design matrix dimensions disagree".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("design matrix has non-finite entries".into()));
        }
        Ok(())
    }
}

/// Builds the design: row for TR `t` is `[e_t, e_{t-1}, ..., e_{t-D+1}]`.
/// The first `D-1` TRs of every run are dropped; delays never cross runs.
pub fn delay_concatenate(corpus: &Corpus, tr_embs: &[Vec<f64>], delays: usize, layer: usize) -> Result<DesignMatrix> {
    if delays == 0 {
        return Err(invalid("delay depth must be >= 1"));
    }
    if tr_embs.len() != corpus.trs().len() {
        return Err(Error::Consistency(format!(
            "{} TR embeddings for {} TRs",
            tr_embs.len(),
            corpus.trs().len()
        )));
    }
    let hidden = tr_embs.first().map_or(0, Vec::len);
    let mut values = Vec::new();
    let mut tr_rows = Vec::new();
    let mut run_has_rows = vec![false; corpus.runs().len()];
    for tr in 0..tr_embs.len() {
        if let Some(lagged) = delayed_trs(corpus, tr, delays) {
            for src in lagged {
                values.extend_from_slice(&tr_embs[src]);
            }
            tr_rows.push(tr);
            run_has_rows[corpus.trs()[tr].run] = true;
        }
    }
    for (run, has) in run_has_rows.iter().enumerate() {
        if !has {
            warn!("run {run} has fewer than {delays} TRs and contributes no design rows");
        }
    }
    let design = DesignMatrix {
        layer,
        delays,
        hidden,
        rows: tr_rows.len(),
        tr_rows,
        values,
    };
    design.validate()?;
    Ok(design)
}
