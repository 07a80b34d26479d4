use std::ops::Range;

use super::corpus::Corpus;
use super::tokenizer::Tokenizer;
use crate::error::{invalid, Result};
use crate::lm::TokenId;

/// Contiguous window of words ending at `target`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Context {
    pub target: usize,
    pub members: Range<usize>,
}

impl Context {
    /// The window of at most `len` words ending at `target`, left-truncated
    /// at the start of the text. Windows may cross run boundaries.
    pub fn ending_at(target: usize, len: usize) -> Self {
        let start = (target + 1).saturating_sub(len);
        Self {
            target,
            members: start..target + 1,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// One context per word of the corpus.
pub fn build_contexts(corpus: &Corpus, len: usize) -> Result<Vec<Context>> {
    if corpus.is_empty() {
        return Err(invalid("cannot build contexts for an empty corpus"));
    }
    if len == 0 {
        return Err(invalid("context length must be >= 1"));
    }
    Ok((0..corpus.len()).map(|w| Context::ending_at(w, len)).collect())
}

/// Token positions of one word inside a tokenized span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordSpan {
    pub word_index: usize,
    pub tokens: Range<usize>,
}

/// Token ids of a run of words plus the token range of each word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedContext {
    pub tokens: Vec<TokenId>,
    pub spans: Vec<WordSpan>,
}

impl TokenizedContext {
    pub fn final_span(&self) -> &WordSpan {
        self.spans.last().expect("tokenized contexts are never empty")
    }

    /// Word owning each token position.
    pub fn token_owners(&self) -> Vec<usize> {
        let mut owners = vec![0; self.tokens.len()];
        for s in &self.spans {
            owners[s.tokens.clone()].iter_mut().for_each(|o| *o = s.word_index);
        }
        owners
    }
}

/// Per-word token ids for a whole corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusTokens {
    per_word: Vec<Vec<TokenId>>,
}

impl CorpusTokens {
    pub fn new(corpus: &Corpus, tokenizer: &Tokenizer) -> Self {
        Self {
            per_word: corpus.words().iter().map(|w| tokenizer.tokenize(&w.surface)).collect(),
        }
    }

    /// Copy with the surfaces of some words replaced and re-tokenized.
    pub fn with_replacements(&self, tokenizer: &Tokenizer, replacements: &[(usize, String)]) -> Self {
        let mut out = self.clone();
        for (i, s) in replacements {
            out.per_word[*i] = tokenizer.tokenize(s);
        }
        out
    }

    pub fn word(&self, i: usize) -> &[TokenId] {
        &self.per_word[i]
    }

    pub fn len(&self) -> usize {
        self.per_word.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_word.is_empty()
    }

    /// Concatenated token stream of the whole corpus.
    pub fn stream(&self) -> Vec<TokenId> {
        self.per_word.iter().flatten().copied().collect()
    }

    pub fn span(&self, words: Range<usize>) -> Result<TokenizedContext> {
        if words.is_empty() || words.end > self.per_word.len() {
            return Err(invalid(format!(
                "word range {words:?} outside corpus of {}",
                self.per_word.len()
            )));
        }
        let mut tokens = Vec::new();
        let mut spans = Vec::with_capacity(words.len());
        for w in words {
            let start = tokens.len();
            tokens.extend_from_slice(&self.per_word[w]);
            spans.push(WordSpan {
                word_index: w,
                tokens: start..tokens.len(),
            });
        }
        Ok(TokenizedContext { tokens, spans })
    }

    pub fn context(&self, ctx: &Context) -> Result<TokenizedContext> {
        self.span(ctx.members.clone())
    }
}
