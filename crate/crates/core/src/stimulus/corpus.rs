use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Annotation categories, in the fixed order used by reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Semantic,
    Syntactic,
    Discourse,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Semantic, Category::Syntactic, Category::Discourse];

    pub fn name(self) -> &'static str {
        match self {
            Category::Semantic => "semantic",
            Category::Syntactic => "syntactic",
            Category::Discourse => "discourse",
        }
    }
}

/// Declared feature names per category. Feature ids index these lists.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationVocab {
    pub semantic: Vec<String>,
    pub syntactic: Vec<String>,
    pub discourse: Vec<String>,
}

impl AnnotationVocab {
    pub fn len_of(&self, c: Category) -> usize {
        match c {
            Category::Semantic => self.semantic.len(),
            Category::Syntactic => self.syntactic.len(),
            Category::Discourse => self.discourse.len(),
        }
    }
}

/// Feature ids attached to one word; each list is sorted and deduplicated.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnnotationSet {
    pub semantic: Vec<u32>,
    pub syntactic: Vec<u32>,
    pub discourse: Vec<u32>,
}

impl AnnotationSet {
    pub fn get(&self, c: Category) -> &[u32] {
        match c {
            Category::Semantic => &self.semantic,
            Category::Syntactic => &self.syntactic,
            Category::Discourse => &self.discourse,
        }
    }

    fn normalise(&mut self) {
        for v in [&mut self.semantic, &mut self.syntactic, &mut self.discourse] {
            v.sort_unstable();
            v.dedup();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordRecord {
    pub surface: String,
    /// Global position in the word stream.
    pub word_index: usize,
    pub run: usize,
    /// TR within the word's run.
    pub tr_index: usize,
    pub annotations: AnnotationSet,
}

/// One TR of one run. `words` may be empty when no word onset falls inside.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrSlot {
    pub run: usize,
    pub tr_in_run: usize,
    pub words: Range<usize>,
}

/// Ordered word stream split into runs, with TR assignments.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    words: Vec<WordRecord>,
    runs: Vec<Range<usize>>,
    trs: Vec<TrSlot>,
    tr_duration_s: f64,
    word_duration_s: f64,
    vocab: AnnotationVocab,
}

/// TR index of a word from its position within a run.
pub fn tr_from_onset(index_in_run: usize, word_duration_s: f64, tr_duration_s: f64) -> usize {
    let onset = index_in_run as f64 * word_duration_s;
    // guard against 0.5*4/2 landing just below an integer
    ((onset / tr_duration_s) + 1e-9).floor() as usize
}

/// Input for [`Corpus::new`]: one entry per word, in stream order.
#[derive(Debug, Clone, PartialEq)]
pub struct WordInput {
    pub surface: String,
    pub run: usize,
    pub tr_index: usize,
    pub annotations: AnnotationSet,
}

impl Corpus {
    /// Validates and indexes a word stream.
    ///
    /// Runs must be numbered `0, 1, ...` in stream order and each contiguous;
    /// TR indices must be nondecreasing within a run; annotation ids must be
    /// inside the declared vocabularies.
    pub fn new(
        inputs: Vec<WordInput>,
        tr_duration_s: f64,
        word_duration_s: f64,
        vocab: AnnotationVocab,
    ) -> Result<Self> {
        if inputs.is_empty() {
            return Err(invalid("corpus has no words"));
        }
        if !(tr_duration_s > 0.0 && word_duration_s > 0.0) {
            return Err(invalid("durations must be positive"));
        }
        let mut words = Vec::with_capacity(inputs.len());
        let mut runs: Vec<Range<usize>> = Vec::new();
        for (i, mut w) in inputs.into_iter().enumerate() {
            if w.surface.is_empty() {
                return Err(invalid(format!("word {i} has an empty surface")));
            }
            let n_runs = runs.len();
            match runs.last_mut() {
                Some(r) if w.run + 1 == n_runs => r.end = i + 1,
                _ if w.run == n_runs => runs.push(i..i + 1),
                _ => {
                    return Err(invalid(format!(
                        "word {i}: run {} out of order (expected {} or {})",
                        w.run,
                        runs.len().saturating_sub(1),
                        runs.len()
                    )))
                }
            }
            if let Some(prev) = words.last() {
                let prev: &WordRecord = prev;
                if prev.run == w.run && w.tr_index < prev.tr_index {
                    return Err(invalid(format!(
                        "word {i}: tr_index {} decreases within run {}",
                        w.tr_index, w.run
                    )));
                }
            }
            w.annotations.normalise();
            for c in Category::ALL {
                let limit = vocab.len_of(c);
                if let Some(bad) = w.annotations.get(c).iter().find(|&&id| id as usize >= limit) {
                    return Err(invalid(format!(
                        "word {i}: {} feature id {bad} outside vocabulary of {limit}",
                        c.name()
                    )));
                }
            }
            words.push(WordRecord {
                surface: w.surface,
                word_index: i,
                run: w.run,
                tr_index: w.tr_index,
                annotations: w.annotations,
            });
        }

        let mut trs = Vec::new();
        for (run, range) in runs.iter().enumerate() {
            let last_tr = words[range.end - 1].tr_index;
            let mut cursor = range.start;
            for tr in 0..=last_tr {
                let start = cursor;
                while cursor < range.end && words[cursor].tr_index == tr {
                    cursor += 1;
                }
                trs.push(TrSlot {
                    run,
                    tr_in_run: tr,
                    words: start..cursor,
                });
            }
        }

        Ok(Self {
            words,
            runs,
            trs,
            tr_duration_s,
            word_duration_s,
            vocab,
        })
    }

    /// Builds a corpus whose TRs follow word timing: the `i`-th word of a run
    /// has onset `i * word_duration_s`.
    pub fn from_timed_runs(
        runs: Vec<Vec<(String, AnnotationSet)>>,
        tr_duration_s: f64,
        word_duration_s: f64,
        vocab: AnnotationVocab,
    ) -> Result<Self> {
        let mut inputs = Vec::new();
        for (run, words) in runs.into_iter().enumerate() {
            for (i, (surface, annotations)) in words.into_iter().enumerate() {
                inputs.push(WordInput {
                    surface,
                    run,
                    tr_index: tr_from_onset(i, word_duration_s, tr_duration_s),
                    annotations,
                });
            }
        }
        Self::new(inputs, tr_duration_s, word_duration_s, vocab)
    }

    pub fn words(&self) -> &[WordRecord] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn runs(&self) -> &[Range<usize>] {
        &self.runs
    }

    /// Every TR of every run in order; the position is the global TR index.
    pub fn trs(&self) -> &[TrSlot] {
        &self.trs
    }

    pub fn tr_duration_s(&self) -> f64 {
        self.tr_duration_s
    }

    pub fn word_duration_s(&self) -> f64 {
        self.word_duration_s
    }

    pub fn vocab(&self) -> &AnnotationVocab {
        &self.vocab
    }

    /// Global TR index of the nearest non-empty TR at or before `tr` in the
    /// same run, if any. Empty TRs borrow that TR's embedding.
    pub fn tr_source(&self, tr: usize) -> Option<usize> {
        let run = self.trs[tr].run;
        (0..=tr)
            .rev()
            .take_while(|&i| self.trs[i].run == run)
            .find(|&i| !self.trs[i].words.is_empty())
    }

    /// Copy of the corpus with some surfaces replaced. Annotations and timing
    /// are kept.
    pub fn with_replacements(&self, replacements: &[(usize, String)]) -> Corpus {
        let mut out = self.clone();
        for (i, s) in replacements {
            out.words[*i].surface = s.clone();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(surface: &str, run: usize, tr: usize) -> WordInput {
        WordInput {
            surface: surface.into(),
            run,
            tr_index: tr,
            annotations: AnnotationSet::default(),
        }
    }

    #[test]
    fn timing_puts_four_words_per_tr() {
        let tr: Vec<usize> = (0..9).map(|i| tr_from_onset(i, 0.5, 2.0)).collect();
        assert_eq!(tr, vec![0, 0, 0, 0, 1, 1, 1, 1, 2]);
    }

    #[test]
    fn indexes_runs_and_empty_trs() {
        let c = Corpus::new(
            vec![
                input("a", 0, 0),
                input("b", 0, 0),
                input("c", 0, 2),
                input("d", 1, 0),
            ],
            2.0,
            0.5,
            AnnotationVocab::default(),
        )
        .unwrap();
        assert_eq!(c.runs(), &[0..3, 3..4]);
        assert_eq!(c.trs().len(), 4);
        assert!(c.trs()[1].words.is_empty());
        assert_eq!(c.tr_source(1), Some(0));
        assert_eq!(c.tr_source(3), Some(3));
    }

    #[test]
    fn rejects_invalid_streams() {
        let v = AnnotationVocab::default();
        assert!(Corpus::new(vec![], 2.0, 0.5, v.clone()).is_err());
        assert!(Corpus::new(vec![input("a", 1, 0)], 2.0, 0.5, v.clone()).is_err());
        assert!(Corpus::new(vec![input("a", 0, 1), input("b", 0, 0)], 2.0, 0.5, v.clone()).is_err());
        assert!(Corpus::new(
            vec![input("a", 0, 0), input("b", 1, 0), input("c", 0, 0)],
            2.0,
            0.5,
            v.clone()
        )
        .is_err());
        let mut bad = input("a", 0, 0);
        bad.annotations.semantic = vec![3];
        assert!(Corpus::new(vec![bad], 2.0, 0.5, v).is_err());
    }
}
