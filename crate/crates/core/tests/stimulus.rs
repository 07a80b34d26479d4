mod common;

use brainalign::stimulus::{
    build_contexts, delay_concatenate, delayed_trs, extract_in_order, extract_word_embeddings, tr_embedding,
    tr_embeddings, tr_from_onset, AnnotationSet, Context, Corpus, CorpusTokens, Tokenizer,
};
use brainalign::synth::{annotation_vocab, gen_corpus, SyntheticSpec};
use common::{Fixture, FixtureConfig};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn context_windows() {
    assert_eq!(Context::ending_at(0, 7).members, 0..1);
    assert_eq!(Context::ending_at(99, 10).members, 90..100);
    let corpus = gen_corpus(&SyntheticSpec::default()).unwrap().corpus;
    for (w, c) in build_contexts(&corpus, 12).unwrap().iter().enumerate() {
        assert_eq!(c.target, w);
        assert_eq!(c.members.end, w + 1);
    }
}

#[test]
fn processing_order_does_not_change_the_design() {
    let f = Fixture::build(FixtureConfig::tiny(false, 7));
    let layers = [0, 2];
    let base = extract_word_embeddings(&f.model, &f.tokens, f.cfg.context_len, &layers).unwrap();
    let mut order: Vec<usize> = (0..f.tokens.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
    let shuffled = extract_in_order(&f.model, &f.tokens, f.cfg.context_len, &layers, &order).unwrap();
    for (li, &l) in layers.iter().enumerate() {
        let design = |e: &brainalign::stimulus::WordEmbeddings| {
            delay_concatenate(&f.synth.corpus, &tr_embeddings(&f.synth.corpus, &e.layers[li]), 4, l).unwrap()
        };
        let (a, b) = (design(&base), design(&shuffled));
        assert!(a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a, f.designs[l]);
    }
}

fn corpus_with_runs(lengths: &[usize]) -> Corpus {
    let runs = lengths
        .iter()
        .map(|&n| (0..n).map(|i| (format!("w{i}"), AnnotationSet::default())).collect())
        .collect();
    Corpus::from_timed_runs(runs, 2.0, 0.5, annotation_vocab()).unwrap()
}

proptest! {
    #[test]
    fn design_rows_map_to_single_trs_within_runs(
        lengths in prop::collection::vec(1usize..40, 1..4),
        delays in 1usize..5,
    ) {
        let corpus = corpus_with_runs(&lengths);
        let embs: Vec<Vec<f64>> = (0..corpus.len()).map(|w| vec![w as f64, 1.0]).collect();
        let trs = tr_embeddings(&corpus, &embs);
        match delay_concatenate(&corpus, &trs, delays, 0) {
            Ok(d) => {
                let mut seen = d.tr_rows.clone();
                seen.dedup();
                prop_assert_eq!(seen.len(), d.tr_rows.len());
                for &tr in &d.tr_rows {
                    let lagged = delayed_trs(&corpus, tr, delays).unwrap();
                    let run = corpus.trs()[tr].run;
                    prop_assert!(lagged.iter().all(|&t| corpus.trs()[t].run == run));
                }
                for run in 0..lengths.len() {
                    let in_run = corpus.trs().iter().filter(|t| t.run == run).count();
                    let rows = d.tr_rows.iter().filter(|&&t| corpus.trs()[t].run == run).count();
                    prop_assert_eq!(rows, in_run.saturating_sub(delays - 1));
                }
            }
            Err(_) => {
                let longest = corpus.trs().iter().fold(vec![0; lengths.len()], |mut acc, t| {
                    acc[t.run] += 1;
                    acc
                });
                prop_assert!(longest.iter().all(|&n| n < delays));
            }
        }
    }

    #[test]
    fn words_fall_in_the_tr_of_their_onset(i in 0usize..10_000) {
        prop_assert_eq!(tr_from_onset(i, 0.5, 2.0), i / 4);
    }

    #[test]
    fn tr_embedding_stays_inside_the_envelope(
        rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..8)
    ) {
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let mean = tr_embedding(&refs);
        for j in 0..3 {
            let lo = rows.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
            let hi = rows.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(mean[j] >= lo - 1e-12 && mean[j] <= hi + 1e-12);
        }
    }
}

#[test]
fn identical_vectors_average_to_themselves() {
    let v = vec![0.3, -1.25, 7.0];
    let mean = tr_embedding(&[&v, &v, &v]);
    assert!(mean.iter().zip(&v).all(|(a, b)| (a - b).abs() < 1e-15));
    assert_eq!(tr_embedding(&[&v]), v);
}

#[test]
fn repeated_surfaces_tokenize_identically_across_the_corpus() {
    let corpus = gen_corpus(&SyntheticSpec::default()).unwrap().corpus;
    let tokens = CorpusTokens::new(&corpus, &Tokenizer::new(512).unwrap());
    let words = corpus.words();
    for a in 0..60 {
        for b in a + 1..60 {
            if words[a].surface == words[b].surface {
                assert_eq!(tokens.word(a), tokens.word(b));
            }
        }
    }
}
