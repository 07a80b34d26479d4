//! Synthetic corpora, responses with a known linear map, and brute-force
//! oracles.

mod grammar;
mod oracle;
mod responses;

pub use grammar::{annotation_vocab, gen_corpus, SyntheticCorpus, SIGNAL_WORDS};
pub use oracle::{average_ranks, brute_force_word_importance, spearman};
pub use responses::{gen_brain_responses, normalize_to_design, planted_true_map, random_true_map};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_words: usize,
    pub runs: usize,
    pub voxels: usize,
    /// Noise std relative to a unit-std noiseless signal per voxel.
    pub noise_std: f64,
    pub delays: usize,
    /// One designated word per TR drives the responses.
    pub planted: bool,
    /// Layer whose design generates the responses and defines the planted map.
    pub source_layer: usize,
    /// Generalized eigenvectors mixed into the planted map.
    pub planted_components: usize,
    /// Relative ridge added to the nuisance second moment of the planted map.
    pub planted_ridge: f64,
    pub tr_duration_s: f64,
    pub word_duration_s: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_words: 400,
            runs: 2,
            voxels: 16,
            noise_std: 0.1,
            delays: 4,
            planted: false,
            source_layer: 0,
            planted_components: 1,
            planted_ridge: 1e-3,
            tr_duration_s: 2.0,
            word_duration_s: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn words_per_tr(&self) -> usize {
        (self.tr_duration_s / self.word_duration_s).round() as usize
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.tr_duration_s > 0.0 && self.word_duration_s > 0.0) {
            v.push("durations must be positive".to_string());
        } else {
            let ratio = self.tr_duration_s / self.word_duration_s;
            if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
                v.push("tr_duration_s must be a whole multiple of word_duration_s".into());
            }
        }
        if self.delays == 0 {
            v.push("delays must be >= 1".into());
        }
        if self.runs == 0 {
            v.push("runs must be >= 1".into());
        }
        if self.voxels == 0 {
            v.push("voxels must be >= 1".into());
        }
        if !(self.noise_std >= 0.0) {
            v.push("noise_std must be >= 0".into());
        }
        if self.planted_components == 0 {
            v.push("planted_components must be >= 1".into());
        }
        if !(self.planted_ridge > 0.0) {
            v.push("planted_ridge must be > 0".into());
        }
        if v.is_empty() {
            let per_tr = self.words_per_tr();
            if self.n_words < 4 * self.delays * per_tr {
                v.push(format!(
                    "n_words must cover at least {} TRs ({} words)",
                    4 * self.delays,
                    4 * self.delays * per_tr
                ));
            } else if self.n_words.div_ceil(per_tr) < self.runs * self.delays {
                v.push("every run needs at least `delays` TRs".into());
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(invalid(v.join("; ")))
        }
    }
}
