#![allow(dead_code)]

use brainalign::encoder::{nested_cv, CvOptions, EncodingModel, ResponseMatrix};
use brainalign::lm::{Family, ModelConfig, ToyLm, TrainOptions};
use brainalign::pipeline::{embed_all_layers, synthesize_responses, train_on_corpus};
use brainalign::stimulus::{CorpusTokens, DesignMatrix, Tokenizer, WordEmbeddings};
use brainalign::synth::{gen_corpus, SyntheticCorpus, SyntheticSpec};

pub mod graphs;

/// Compact settings that keep the end-to-end suites fast. 1200 words with
/// H = 32 is the smallest setting at which layer-0 encoders fit the planted
/// responses well (held-out r near 0.99).
#[derive(Debug, Clone)]
pub struct FixtureConfig {
    pub spec: SyntheticSpec,
    pub model: ModelConfig,
    pub train: TrainOptions,
    pub context_len: usize,
}

impl FixtureConfig {
    pub fn compact(planted: bool, seed: u64) -> Self {
        Self {
            spec: SyntheticSpec {
                n_words: 1200,
                runs: 2,
                voxels: 8,
                noise_std: 0.1,
                delays: 4,
                planted,
                source_layer: 0,
                seed,
                ..SyntheticSpec::default()
            },
            model: ModelConfig {
                family: Family::Transformer,
                n_layers: 3,
                hidden_size: 32,
                n_heads: 4,
                vocab_size: 512,
                max_positions: 128,
                seed,
            },
            train: TrainOptions {
                steps: 150,
                seq_len: 32,
                batch_size: 8,
                learning_rate: 5e-3,
                seed,
                ..TrainOptions::default()
            },
            context_len: 16,
        }
    }

    /// Barely trained; for checks that hold for any weights.
    pub fn tiny(planted: bool, seed: u64) -> Self {
        let mut cfg = Self::compact(planted, seed);
        cfg.spec.n_words = 240;
        cfg.spec.voxels = 4;
        cfg.model.hidden_size = 16;
        cfg.model.n_heads = 2;
        cfg.train.steps = 20;
        cfg.context_len = 8;
        cfg
    }
}

pub struct Fixture {
    pub cfg: FixtureConfig,
    pub synth: SyntheticCorpus,
    pub tokenizer: Tokenizer,
    pub tokens: CorpusTokens,
    pub model: ToyLm,
    pub embeddings: WordEmbeddings,
    pub designs: Vec<DesignMatrix>,
    pub responses: ResponseMatrix,
    pub encoders: Vec<EncodingModel>,
}

impl Fixture {
    pub fn build(cfg: FixtureConfig) -> Fixture {
        let synth = gen_corpus(&cfg.spec).unwrap();
        let tokenizer = Tokenizer::new(cfg.model.vocab_size).unwrap();
        let tokens = CorpusTokens::new(&synth.corpus, &tokenizer);
        let (model, _) = train_on_corpus(&synth.corpus, &tokenizer, &cfg.model, &cfg.train).unwrap();
        let (embeddings, designs) =
            embed_all_layers(&model, &synth.corpus, &tokens, cfg.context_len, cfg.spec.delays).unwrap();
        let (responses, _) = synthesize_responses(&cfg.spec, &synth, &embeddings, &designs, "s0").unwrap();
        let encoders = designs
            .iter()
            .map(|d| nested_cv(d, &responses, &CvOptions::default()).unwrap())
            .collect();
        Fixture {
            cfg,
            synth,
            tokenizer,
            tokens,
            model,
            embeddings,
            designs,
            responses,
            encoders,
        }
    }

    pub fn stimulus(&self) -> brainalign::attribution::Stimulus<'_> {
        brainalign::attribution::Stimulus {
            corpus: &self.synth.corpus,
            tokens: &self.tokens,
            context_len: self.cfg.context_len,
        }
    }

    pub fn encoder(&self, layer: usize) -> &EncodingModel {
        self.encoders.iter().find(|e| e.layer == layer).unwrap()
    }
}
