//! Finite-state template grammar for toy stories.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SyntheticSpec;
use crate::error::{invalid, Result};
use crate::stimulus::{AnnotationSet, AnnotationVocab, Corpus};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Det,
    Adj,
    Noun,
    Name,
    Verb,
    Prep,
    Adv,
    Conj,
    Pron,
}

const SYNTACTIC: [&str; 9] = ["det", "adj", "noun", "name", "verb", "prep", "adv", "conj", "pron"];
const SEMANTIC: [&str; 8] = ["animal", "place", "motion", "emotion", "object", "magic", "time", "person"];
const DISCOURSE: [&str; 4] = ["sentence_start", "sentence_end", "character_mention", "topic_shift"];

impl Class {
    fn syntactic_id(self) -> u32 {
        self as u32
    }
}

/// `(surface, semantic feature ids)` per word class.
fn lexicon(c: Class) -> &'static [(&'static str, &'static [u32])] {
    match c {
        Class::Det => &[("the", &[]), ("a", &[]), ("every", &[]), ("that", &[])],
        Class::Adj => &[
            ("old", &[6]),
            ("dark", &[5]),
            ("happy", &[3]),
            ("tiny", &[]),
            ("silver", &[4]),
            ("angry", &[3]),
            ("quiet", &[]),
            ("strange", &[5]),
        ],
        Class::Noun => &[
            ("owl", &[0]),
            ("castle", &[1]),
            ("wand", &[4, 5]),
            ("forest", &[1]),
            ("letter", &[4]),
            ("dragon", &[0, 5]),
            ("night", &[6]),
            ("teacher", &[7]),
            ("broom", &[4, 5]),
            ("village", &[1]),
            ("cat", &[0]),
            ("morning", &[6]),
        ],
        Class::Name => &[("harry", &[7]), ("ron", &[7]), ("luna", &[7]), ("neville", &[7])],
        Class::Verb => &[
            ("ran", &[2]),
            ("saw", &[]),
            ("flew", &[2, 5]),
            ("found", &[]),
            ("feared", &[3]),
            ("carried", &[2]),
            ("loved", &[3]),
            ("opened", &[]),
            ("watched", &[]),
            ("cast", &[5]),
        ],
        Class::Prep => &[("into", &[2]), ("over", &[]), ("near", &[1]), ("under", &[]), ("through", &[2])],
        Class::Adv => &[("slowly", &[2]), ("suddenly", &[6]), ("again", &[6]), ("softly", &[])],
        Class::Conj => &[("and", &[]), ("but", &[]), ("so", &[])],
        Class::Pron => &[("she", &[7]), ("he", &[7]), ("they", &[7]), ("it", &[])],
    }
}

const TEMPLATES: &[&[Class]] = {
    use Class::*;
    &[
        &[Det, Adj, Noun, Verb, Det, Noun],
        &[Name, Verb, Prep, Det, Noun],
        &[Pron, Adv, Verb, Det, Adj, Noun],
        &[Det, Noun, Verb, Prep, Det, Adj, Noun, Conj, Pron, Verb],
        &[Name, Conj, Name, Verb, Det, Noun, Adv],
        &[Pron, Verb, Det, Noun, Prep, Det, Noun],
    ]
};

/// Made-up words used as designated words in the planted variant.
pub const SIGNAL_WORDS: [&str; 8] = ["zephyr", "quasar", "nimbus", "vortex", "ember", "glyph", "rune", "prism"];

pub fn annotation_vocab() -> AnnotationVocab {
    AnnotationVocab {
        semantic: SEMANTIC.iter().map(|s| s.to_string()).collect(),
        syntactic: SYNTACTIC.iter().map(|s| s.to_string()).collect(),
        discourse: DISCOURSE.iter().map(|s| s.to_string()).collect(),
    }
}

/// Generated corpus plus the designated word of every TR in the planted variant.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    /// Sorted word indices of designated words; empty when not planted.
    pub designated: Vec<usize>,
}

/// Word stream from the grammar, split into `spec.runs` runs of near-equal
/// length, with seeded structured and random annotations.
pub fn gen_corpus(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut words: Vec<(String, AnnotationSet)> = Vec::with_capacity(spec.n_words);
    while words.len() < spec.n_words {
        let template = TEMPLATES.choose(&mut rng).expect("non-empty");
        let topic_shift = rng.random_bool(0.05);
        for (i, &class) in template.iter().enumerate() {
            let &(surface, semantic) = lexicon(class).choose(&mut rng).expect("non-empty");
            let mut ann = AnnotationSet {
                semantic: semantic.to_vec(),
                syntactic: vec![class.syntactic_id()],
                discourse: Vec::new(),
            };
            if i == 0 {
                ann.discourse.push(0);
                if topic_shift {
                    ann.discourse.push(3);
                }
            }
            if i + 1 == template.len() {
                ann.discourse.push(1);
            }
            if matches!(class, Class::Name | Class::Pron) {
                ann.discourse.push(2);
            }
            // sparse random extras so features are not fully determined by class
            if rng.random_bool(0.1) {
                ann.semantic.push(rng.random_range(0..SEMANTIC.len() as u32));
            }
            words.push((surface.to_string(), ann));
        }
    }
    words.truncate(spec.n_words);

    let per_tr = spec.words_per_tr();
    let mut designated = Vec::new();
    if spec.planted {
        for (tr, chunk) in words.chunks_mut(per_tr).enumerate() {
            let pos = rng.random_range(0..chunk.len());
            let surface = SIGNAL_WORDS.choose(&mut rng).expect("non-empty");
            chunk[pos] = (
                surface.to_string(),
                AnnotationSet {
                    semantic: vec![5],
                    syntactic: vec![Class::Noun.syntactic_id()],
                    discourse: Vec::new(),
                },
            );
            designated.push(tr * per_tr + pos);
        }
    }

    let mut runs = Vec::with_capacity(spec.runs);
    // run lengths are whole TRs so TR boundaries line up with the chunks above
    let n_trs = spec.n_words.div_ceil(per_tr);
    let mut iter = words.into_iter();
    for r in 0..spec.runs {
        let trs = (r + 1) * n_trs / spec.runs - r * n_trs / spec.runs;
        runs.push(iter.by_ref().take(trs * per_tr).collect::<Vec<_>>());
    }
    if runs.iter().any(|r| r.is_empty()) {
        return Err(invalid("too many runs for the corpus length"));
    }
    let corpus = Corpus::from_timed_runs(runs, spec.tr_duration_s, spec.word_duration_s, annotation_vocab())?;
    Ok(SyntheticCorpus { corpus, designated })
}
