use brainalign::lm::{stream_cross_entropy, train_lm, Family, ModelConfig, ModelParams, TokenId, ToyLm, TrainOptions};
use brainalign::stimulus::{CorpusTokens, Tokenizer};
use brainalign::synth::{gen_corpus, SyntheticSpec};
use proptest::prelude::*;

fn model(family: Family, seed: u64) -> ToyLm {
    let cfg = ModelConfig {
        family,
        n_layers: 3,
        hidden_size: 16,
        n_heads: 2,
        vocab_size: 64,
        max_positions: 512,
        seed,
    };
    ToyLm::new(ModelParams::init(&cfg).unwrap()).unwrap()
}

fn logits(m: &ToyLm, tokens: &[TokenId]) -> Vec<Vec<f64>> {
    let (_, l) = m.forward(tokens).unwrap();
    (0..l.rows()).map(|r| l.row(r).to_vec()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn future_tokens_never_change_past_logits(
        tokens in prop::collection::vec(0u32..64, 2..24),
        pos in any::<prop::sample::Index>(),
        replacement in 0u32..64,
        ssm in any::<bool>(),
    ) {
        let m = model(if ssm { Family::Ssm } else { Family::Transformer }, 1);
        let p = pos.index(tokens.len());
        let mut changed = tokens.clone();
        changed[p] = replacement;
        let (a, b) = (logits(&m, &tokens), logits(&m, &changed));
        for r in 0..p {
            prop_assert!(a[r].iter().zip(&b[r]).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}

#[test]
fn both_families_expose_one_state_per_layer() {
    for family in [Family::Transformer, Family::Ssm] {
        let (states, _) = model(family, 2).forward(&[1, 2, 3]).unwrap();
        assert_eq!(states.layers.len(), 3);
    }
}

#[test]
fn untrained_logits_are_reproducible() {
    let tokens: Vec<TokenId> = (0..20).map(|i| (i * 7 % 64) as TokenId).collect();
    for family in [Family::Transformer, Family::Ssm] {
        let a = logits(&model(family, 3), &tokens);
        let b = logits(&model(family, 3), &tokens);
        assert_eq!(a, b);
    }
}

#[test]
fn ssm_cost_is_linear_in_sequence_length() {
    let m = model(Family::Ssm, 4);
    for t in [32usize, 64, 128] {
        let short: Vec<TokenId> = (0..t).map(|i| (i % 64) as TokenId).collect();
        let long: Vec<TokenId> = (0..2 * t).map(|i| (i % 64) as TokenId).collect();
        let ratio = m.forward_flops(&long).unwrap() as f64 / m.forward_flops(&short).unwrap() as f64;
        assert!((ratio - 2.0).abs() <= 0.2, "T={t}: ratio {ratio}");
    }
}

#[test]
fn training_beats_the_uniform_baseline_on_held_out_text() {
    let corpus = gen_corpus(&SyntheticSpec {
        n_words: 1500,
        seed: 11,
        ..SyntheticSpec::default()
    })
    .unwrap()
    .corpus;
    let tokenizer = Tokenizer::new(512).unwrap();
    let stream = CorpusTokens::new(&corpus, &tokenizer).stream();
    let split = stream.len() * 4 / 5;
    let cfg = ModelConfig {
        n_layers: 3,
        hidden_size: 32,
        max_positions: 128,
        seed: 1,
        ..ModelConfig::default()
    };
    let opts = TrainOptions {
        steps: 300,
        seq_len: 48,
        seed: 1,
        ..TrainOptions::default()
    };
    let (params, _) = train_lm(&cfg, &stream[..split], &opts).unwrap();
    let held_out = stream_cross_entropy(&params, &stream[split..], 48).unwrap();
    assert!(held_out < (512f64).ln(), "held-out CE {held_out}");
}
