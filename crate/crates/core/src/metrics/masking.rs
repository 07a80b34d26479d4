use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::topset::{top_set, Mass};
use crate::attribution::{AttributionRecord, BrainObjective, NwpObjective, Objective, Stimulus, Task};
use crate::encoder::{pearson, EncodingModel, ResponseMatrix};
use crate::error::{invalid, Result};
use crate::lm::ContextModel;
use crate::stimulus::{CorpusTokens, Tokenizer};

/// Which words of a TR get replaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskSelection {
    /// The top-t attributed words.
    Top,
    /// As many words as the top-t set, drawn uniformly from the record's words.
    Random,
}

impl MaskSelection {
    pub fn label(self) -> &'static str {
        match self {
            MaskSelection::Top => "top",
            MaskSelection::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedTr {
    pub tr: usize,
    pub masked_words: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskingResult {
    pub task: Task,
    /// Encoder layer for the brain task.
    pub layer: Option<usize>,
    pub selection: MaskSelection,
    pub threshold: f64,
    pub seed: u64,
    /// Mean CE (NWP) or mean voxel r (brain) before masking.
    pub base: f64,
    pub masked: f64,
    /// Relative CE increase (NWP) or percent drop in r (brain).
    pub delta: f64,
    pub per_tr: Vec<MaskedTr>,
}

fn tr_rng(seed: u64, tr: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (tr as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Words to replace in one record and their replacement surfaces, drawn
/// uniformly from the corpus.
fn replacements(
    stim: Stimulus<'_>,
    record: &AttributionRecord,
    t: f64,
    selection: MaskSelection,
    mass: Mass,
    seed: u64,
) -> Result<Vec<(usize, String)>> {
    let top = top_set(record, t, mass)?;
    let mut rng = tr_rng(seed, record.target.tr);
    let chosen: Vec<usize> = match selection {
        MaskSelection::Top => top.words.clone(),
        MaskSelection::Random => rand::seq::index::sample(&mut rng, record.len(), top.len())
            .into_iter()
            .map(|i| record.word_index[i])
            .collect(),
    };
    if chosen.is_empty() {
        warn!("TR {}: nothing to mask at t={t}", record.target.tr);
    }
    let n = stim.corpus.len();
    Ok(chosen
        .into_iter()
        .map(|w| (w, stim.corpus.words()[rng.random_range(0..n)].surface.clone()))
        .collect())
}

fn masked_tokens(stim: Stimulus<'_>, tokenizer: &Tokenizer, repl: &[(usize, String)]) -> CorpusTokens {
    stim.tokens.with_replacements(tokenizer, repl)
}

/// Relative increase in next-word cross-entropy after masking each record's words.
#[allow(clippy::too_many_arguments)]
pub fn nwp_masking<M: ContextModel + ?Sized>(
    model: &M,
    stim: Stimulus<'_>,
    tokenizer: &Tokenizer,
    delays: usize,
    records: &[AttributionRecord],
    t: f64,
    selection: MaskSelection,
    mass: Mass,
    seed: u64,
) -> Result<MaskingResult> {
    if records.is_empty() {
        return Err(invalid("no attribution records to mask"));
    }
    let rows: Vec<(f64, f64, MaskedTr)> = records
        .par_iter()
        .map(|r| {
            let tr = r.target.tr;
            let base_obj = NwpObjective::new(model, stim, delays, tr)?;
            let base = base_obj.evaluate(base_obj.inputs())?.0;
            let repl = replacements(stim, r, t, selection, mass, seed)?;
            let tokens = masked_tokens(stim, tokenizer, &repl);
            let masked_stim = Stimulus {
                tokens: &tokens,
                ..stim
            };
            let obj = NwpObjective::new(model, masked_stim, delays, tr)?;
            let masked = obj.evaluate(obj.inputs())?.0;
            Ok((base, masked, MaskedTr { tr, masked_words: repl.len() }))
        })
        .collect::<Result<_>>()?;
    let n = rows.len() as f64;
    let base = rows.iter().map(|r| r.0).sum::<f64>() / n;
    let masked = rows.iter().map(|r| r.1).sum::<f64>() / n;
    Ok(MaskingResult {
        task: Task::Nwp,
        layer: None,
        selection,
        threshold: t,
        seed,
        base,
        masked,
        delta: (masked - base) / base,
        per_tr: rows.into_iter().map(|r| r.2).collect(),
    })
}

/// Mean voxel Pearson r of predictions across TRs.
fn mean_r(preds: &[Vec<f64>], actual: &[Vec<f64>]) -> f64 {
    let v = actual[0].len();
    (0..v)
        .map(|j| {
            let p: Vec<f64> = preds.iter().map(|r| r[j]).collect();
            let a: Vec<f64> = actual.iter().map(|r| r[j]).collect();
            pearson(&p, &a)
        })
        .sum::<f64>()
        / v as f64
}

/// Percent drop of held-out Pearson r when each TR's words are masked before
/// its prediction is recomputed.
#[allow(clippy::too_many_arguments)]
pub fn brain_masking<M: ContextModel + ?Sized>(
    model: &M,
    stim: Stimulus<'_>,
    tokenizer: &Tokenizer,
    encoder: &EncodingModel,
    responses: &ResponseMatrix,
    records: &[AttributionRecord],
    t: f64,
    selection: MaskSelection,
    mass: Mass,
    seed: u64,
) -> Result<MaskingResult> {
    if records.len() < 2 {
        return Err(invalid("brain masking needs at least 2 TRs to compute Pearson r"));
    }
    let rows: Vec<(Vec<f64>, Vec<f64>, Vec<f64>, MaskedTr)> = records
        .par_iter()
        .map(|r| {
            let tr = r.target.tr;
            let base = BrainObjective::new(model, stim, encoder, responses, tr)?.prediction()?;
            let repl = replacements(stim, r, t, selection, mass, seed)?;
            let tokens = masked_tokens(stim, tokenizer, &repl);
            let masked_stim = Stimulus {
                tokens: &tokens,
                ..stim
            };
            let masked = BrainObjective::new(model, masked_stim, encoder, responses, tr)?.prediction()?;
            let actual = responses.row_of_tr(tr).expect("checked by objective").to_vec();
            Ok((base, masked, actual, MaskedTr { tr, masked_words: repl.len() }))
        })
        .collect::<Result<_>>()?;
    let base_preds: Vec<Vec<f64>> = rows.iter().map(|r| r.0.clone()).collect();
    let masked_preds: Vec<Vec<f64>> = rows.iter().map(|r| r.1.clone()).collect();
    let actual: Vec<Vec<f64>> = rows.iter().map(|r| r.2.clone()).collect();
    let base = mean_r(&base_preds, &actual);
    let masked = mean_r(&masked_preds, &actual);
    if base <= 0.0 {
        warn!("unmasked mean r is {base:.4}; percent drop is not meaningful");
    }
    let delta = if base_preds == masked_preds { 0.0 } else { 100.0 * (base - masked) / base };
    Ok(MaskingResult {
        task: Task::Brain,
        layer: Some(encoder.layer),
        selection,
        threshold: t,
        seed,
        base,
        masked,
        delta,
        per_tr: rows.into_iter().map(|r| r.3).collect(),
    })
}
