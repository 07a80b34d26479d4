use std::collections::BTreeSet;

use crate::stimulus::{Category, Corpus};

/// Share of a context's features of one category that fall in BA-only,
/// NWP-only and shared top words, in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureShare {
    pub ba_only: f64,
    pub nwp_only: f64,
    pub both: f64,
}

/// Percentages for one context. Words with several features count once per
/// feature. Returns `None` when the context carries no feature of `category`.
pub fn feature_share(
    corpus: &Corpus,
    context_words: &[usize],
    ba_top: &BTreeSet<usize>,
    nwp_top: &BTreeSet<usize>,
    category: Category,
) -> Option<FeatureShare> {
    let (mut total, mut ba, mut nwp, mut both) = (0usize, 0usize, 0usize, 0usize);
    for &w in context_words {
        let k = corpus.words()[w].annotations.get(category).len();
        total += k;
        match (ba_top.contains(&w), nwp_top.contains(&w)) {
            (true, true) => both += k,
            (true, false) => ba += k,
            (false, true) => nwp += k,
            (false, false) => {}
        }
    }
    (total > 0).then(|| {
        let pct = |c: usize| 100.0 * c as f64 / total as f64;
        FeatureShare {
            ba_only: pct(ba),
            nwp_only: pct(nwp),
            both: pct(both),
        }
    })
}
