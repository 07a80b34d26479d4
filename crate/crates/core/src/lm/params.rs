use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{Family, ModelConfig, MLP_EXPANSION};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Token mixing sublayer of one block.
#[derive(Debug, Clone, PartialEq)]
pub enum Mixer<T> {
    Attention {
        query: T,
        key: T,
        value: T,
        output: T,
    },
    /// Diagonal linear recurrence. `decay_logit` passes through a sigmoid.
    Ssm {
        input: T,
        decay_logit: T,
        output: T,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights<T> {
    pub mix_norm: T,
    pub mixer: Mixer<T>,
    pub mlp_norm: T,
    pub mlp_up: T,
    pub mlp_down: T,
}

/// All model weights, generic over storage so the same layout serves plain
/// tensors, tape nodes, gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    pub token_embedding: T,
    pub position_embedding: Option<T>,
    pub blocks: Vec<BlockWeights<T>>,
    pub final_norm: T,
    pub lm_head: T,
}

impl<T> Weights<T> {
    /// Items in canonical order with stable names.
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = vec![("token_embedding".to_string(), &self.token_embedding)];
        if let Some(p) = &self.position_embedding {
            out.push(("position_embedding".to_string(), p));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("blocks.{i}.mix_norm"), &b.mix_norm));
            match &b.mixer {
                Mixer::Attention {
                    query,
                    key,
                    value,
                    output,
                } => {
                    out.push((format!("blocks.{i}.attn.query"), query));
                    out.push((format!("blocks.{i}.attn.key"), key));
                    out.push((format!("blocks.{i}.attn.value"), value));
                    out.push((format!("blocks.{i}.attn.output"), output));
                }
                Mixer::Ssm {
                    input,
                    decay_logit,
                    output,
                } => {
                    out.push((format!("blocks.{i}.ssm.input"), input));
                    out.push((format!("blocks.{i}.ssm.decay_logit"), decay_logit));
                    out.push((format!("blocks.{i}.ssm.output"), output));
                }
            }
            out.push((format!("blocks.{i}.mlp_norm"), &b.mlp_norm));
            out.push((format!("blocks.{i}.mlp_up"), &b.mlp_up));
            out.push((format!("blocks.{i}.mlp_down"), &b.mlp_down));
        }
        out.push(("final_norm".to_string(), &self.final_norm));
        out.push(("lm_head".to_string(), &self.lm_head));
        out
    }

    pub fn items(&self) -> Vec<&T> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    /// Maps every item in canonical order.
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Weights<U> {
        Weights {
            token_embedding: f(&self.token_embedding),
            position_embedding: self.position_embedding.as_ref().map(&mut f),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockWeights {
                    mix_norm: f(&b.mix_norm),
                    mixer: match &b.mixer {
                        Mixer::Attention {
                            query,
                            key,
                            value,
                            output,
                        } => Mixer::Attention {
                            query: f(query),
                            key: f(key),
                            value: f(value),
                            output: f(output),
                        },
                        Mixer::Ssm {
                            input,
                            decay_logit,
                            output,
                        } => Mixer::Ssm {
                            input: f(input),
                            decay_logit: f(decay_logit),
                            output: f(output),
                        },
                    },
                    mlp_norm: f(&b.mlp_norm),
                    mlp_up: f(&b.mlp_up),
                    mlp_down: f(&b.mlp_down),
                })
                .collect(),
            final_norm: f(&self.final_norm),
            lm_head: f(&self.lm_head),
        }
    }

    /// Rebuilds the same layout from a flat list in canonical order.
    pub fn from_flat<U>(&self, flat: Vec<U>) -> Result<Weights<U>> {
        let expected = self.items().len();
        if flat.len() != expected {
            return Err(Error::Consistency(format!(
                "expected {expected} parameter tensors, got {}",
                flat.len()
            )));
        }
        let mut it = flat.into_iter();
        Ok(self.map(|_| it.next().expect("length checked")))
    }
}

/// Trained or freshly initialised model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub weights: Weights<Tensor>,
}

impl ModelParams {
    /// Deterministic initialisation from `config.seed`.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_size;
        let v = config.vocab_size;
        let mlp = MLP_EXPANSION * h;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut normal = |rows: usize, cols: usize, std: f64| -> Tensor {
            let dist = Normal::new(0.0, std).expect("positive std");
            let data = (0..rows * cols).map(|_| dist.sample(&mut rng)).collect();
            Tensor::from_parts(vec![rows, cols], data)
        };
        let ones = |n: usize| Tensor::from_parts(vec![1, n], vec![1.0; n]);
        let proj_std = 1.0 / (h as f64).sqrt();
        let resid_std = proj_std / (2.0 * config.n_layers as f64).sqrt();

        let token_embedding = normal(v, h, 1.0);
        let position_embedding = match config.family {
            Family::Transformer => Some(normal(config.max_positions, h, 0.1)),
            Family::Ssm => None,
        };
        let mut blocks = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            let mixer = match config.family {
                Family::Transformer => Mixer::Attention {
                    query: normal(h, h, proj_std),
                    key: normal(h, h, proj_std),
                    value: normal(h, h, proj_std),
                    output: normal(h, h, resid_std),
                },
                Family::Ssm => {
                    // decays spread over (0.5, 0.98)
                    let logits = (0..h)
                        .map(|j| 4.0 * j as f64 / (h.max(2) - 1) as f64)
                        .collect();
                    Mixer::Ssm {
                        input: normal(h, h, proj_std),
                        decay_logit: Tensor::from_parts(vec![1, h], logits),
                        output: normal(h, h, resid_std),
                    }
                }
            };
            blocks.push(BlockWeights {
                mix_norm: ones(h),
                mixer,
                mlp_norm: ones(h),
                mlp_up: normal(h, mlp, proj_std),
                mlp_down: normal(mlp, h, resid_std / (MLP_EXPANSION as f64).sqrt()),
            });
        }
        let final_norm = ones(h);
        let lm_head = normal(h, v, proj_std);
        Ok(Self {
            config: config.clone(),
            weights: Weights {
                token_embedding,
                position_embedding,
                blocks,
                final_norm,
                lm_head,
            },
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.items().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.weights
            .items()
            .iter()
            .all(|t| t.data().iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig {
            n_layers: 3,
            hidden_size: 8,
            n_heads: 2,
            vocab_size: 20,
            max_positions: 16,
            ..ModelConfig::default()
        };
        let a = ModelParams::init(&cfg).unwrap();
        let b = ModelParams::init(&cfg).unwrap();
        assert_eq!(a, b);
        let c = ModelParams::init(&ModelConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn flat_round_trip_preserves_layout() {
        let cfg = ModelConfig {
            family: Family::Ssm,
            n_layers: 3,
            hidden_size: 4,
            vocab_size: 10,
            max_positions: 8,
            ..ModelConfig::default()
        };
        let p = ModelParams::init(&cfg).unwrap();
        let flat: Vec<Tensor> = p.weights.items().into_iter().cloned().collect();
        let rebuilt = p.weights.from_flat(flat).unwrap();
        assert_eq!(rebuilt, p.weights);
        let names: Vec<String> = p.weights.named().into_iter().map(|(n, _)| n).collect();
        assert!(names.contains(&"blocks.2.ssm.decay_logit".to_string()));
        assert!(!names.contains(&"position_embedding".to_string()));
    }
}
