//! Word-level gradient attribution for the brain-alignment and next-word
//! prediction objectives.
//!
//! Scores are taken with respect to the token embeddings at the lookup
//! output, before positions are added. Token scores are summed into words,
//! and a word appearing in several contexts of the same TR gets the sum of
//! its scores.

mod method;
mod objective;
mod record;

pub use method::{
    baseline_loss, gxi, row_products, token_scores, word_scores, Method, Objective, TokenScores, DEFAULT_IG_STEPS,
};
pub use objective::{BrainObjective, NwpObjective, Stimulus};
pub use record::{read_records, write_records, AttributionRecord, AttributionTarget, Task};

use crate::encoder::{EncodingModel, ResponseMatrix};
use crate::error::Result;
use crate::lm::ContextModel;

/// Attributes the brain-alignment loss of one TR to the words behind it.
pub fn attribute_brain_tr<M: ContextModel + ?Sized>(
    model: &M,
    stim: Stimulus<'_>,
    encoder: &EncodingModel,
    responses: &ResponseMatrix,
    tr: usize,
    method: Method,
) -> Result<AttributionRecord> {
    let target = AttributionTarget {
        task: Task::Brain,
        method,
        layer: Some(encoder.layer),
        subject: Some(responses.subject.clone()),
        tr,
    };
    target.validate()?;
    let obj = BrainObjective::new(model, stim, encoder, responses, tr)?;
    let scores = token_scores(&obj, method)?;
    let words = word_scores(obj.owners(), &scores)?;
    Ok(AttributionRecord::from_scores(target, scores.loss, obj.last_word(), &words))
}

/// Attributes the next-word loss after the extended context of one TR.
pub fn attribute_nwp<M: ContextModel + ?Sized>(
    model: &M,
    stim: Stimulus<'_>,
    delays: usize,
    tr: usize,
    method: Method,
) -> Result<AttributionRecord> {
    let target = AttributionTarget {
        task: Task::Nwp,
        method,
        layer: None,
        subject: None,
        tr,
    };
    target.validate()?;
    let obj = NwpObjective::new(model, stim, delays, tr)?;
    let scores = token_scores(&obj, method)?;
    let words = word_scores(obj.owners(), &scores)?;
    Ok(AttributionRecord::from_scores(target, scores.loss, obj.last_word(), &words))
}
