//! Stage composition shared by the command line and the test suites.

use log::info;
use nalgebra::DMatrix;

use crate::encoder::ResponseMatrix;
use crate::error::{invalid, Result};
use crate::lm::{train_lm, ModelConfig, ToyLm, TrainOptions, TrainReport};
use crate::stimulus::{
    delay_concatenate, extract_word_embeddings, tr_embeddings, Corpus, CorpusTokens, DesignMatrix, Tokenizer,
    WordEmbeddings,
};
use crate::synth::{
    gen_brain_responses, normalize_to_design, planted_true_map, random_true_map, SyntheticCorpus, SyntheticSpec,
};

/// Trains a model on the corpus' own token stream.
pub fn train_on_corpus(
    corpus: &Corpus,
    tokenizer: &Tokenizer,
    config: &ModelConfig,
    opts: &TrainOptions,
) -> Result<(ToyLm, TrainReport)> {
    if tokenizer.vocab_size() != config.vocab_size {
        return Err(invalid(format!(
            "tokenizer vocabulary {} differs from model vocabulary {}",
            tokenizer.vocab_size(),
            config.vocab_size
        )));
    }
    let stream = CorpusTokens::new(corpus, tokenizer).stream();
    let (params, report) = train_lm(config, &stream, opts)?;
    info!(
        "trained {} steps: stream CE {:.4} -> {:.4}",
        opts.steps, report.initial_stream_ce, report.final_stream_ce
    );
    Ok((ToyLm::new(params)?, report))
}

/// Word embeddings for every layer of `model` plus one design per layer.
pub fn embed_all_layers(
    model: &ToyLm,
    corpus: &Corpus,
    tokens: &CorpusTokens,
    context_len: usize,
    delays: usize,
) -> Result<(WordEmbeddings, Vec<DesignMatrix>)> {
    let layers: Vec<usize> = (0..model.params().config.n_layers).collect();
    let embs = extract_word_embeddings(model, tokens, context_len, &layers)?;
    let designs = embs
        .layer_ids
        .iter()
        .zip(&embs.layers)
        .map(|(&l, words)| delay_concatenate(corpus, &tr_embeddings(corpus, words), delays, l))
        .collect::<Result<Vec<_>>>()?;
    Ok((embs, designs))
}

/// Synthetic responses generated from the source layer's design.
pub fn synthesize_responses(
    spec: &SyntheticSpec,
    synth: &SyntheticCorpus,
    embs: &WordEmbeddings,
    designs: &[DesignMatrix],
    subject: &str,
) -> Result<(ResponseMatrix, DMatrix<f64>)> {
    let li = embs
        .layer_ids
        .iter()
        .position(|&l| l == spec.source_layer)
        .ok_or_else(|| invalid(format!("source layer {} was not embedded", spec.source_layer)))?;
    let design = &designs[li];
    let raw = if spec.planted {
        planted_true_map(
            &embs.layers[li],
            &synth.designated,
            spec.delays,
            spec.voxels,
            spec.planted_components,
            spec.planted_ridge,
            spec.seed,
        )?
    } else {
        random_true_map(design.hidden, spec.delays, spec.voxels, spec.seed)
    };
    let w = normalize_to_design(design, &raw)?;
    let y = gen_brain_responses(spec, design, &w, subject)?;
    Ok((y, w))
}
