//! Deterministic toy subword tokenizer.
//!
//! A word is lowercased and cut into pieces of three characters; a trailing
//! single character is avoided by ending on two two-character pieces
//! (`"hipp"` -> `"hi" "pp"`). The first piece carries a word-start marker.
//! Single letters have fixed ids; every other piece is hashed (FNV-1a) into
//! the remaining id range. Pieces with characters outside `[a-z'-]` map to
//! the reserved unknown id.

use crate::lm::TokenId;

pub const UNKNOWN_TOKEN: TokenId = 0;
/// Default vocabulary size, shared with the default model config.
pub const DEFAULT_VOCAB: usize = 512;

const LETTERS: usize = 26;
/// ids 1..=26 are word-initial letters, 27..=52 continuation letters.
const FIRST_HASHED: usize = 1 + 2 * LETTERS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tokenizer {
    vocab_size: usize,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self {
            vocab_size: DEFAULT_VOCAB,
        }
    }
}

impl Tokenizer {
    /// `vocab_size` must leave room for the fixed letter ids plus hashed pieces.
    pub fn new(vocab_size: usize) -> crate::Result<Self> {
        if vocab_size <= FIRST_HASHED {
            return Err(crate::Error::InvalidInput(format!(
                "tokenizer vocabulary must exceed {FIRST_HASHED}, got {vocab_size}"
            )));
        }
        Ok(Self { vocab_size })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Splits a word into pieces; never empty for a non-empty surface.
    pub fn pieces(surface: &str) -> Vec<String> {
        let chars: Vec<char> = surface.to_lowercase().chars().collect();
        let n = chars.len();
        let mut sizes = Vec::new();
        let mut rest = n;
        while rest > 0 {
            if rest == 4 {
                sizes.extend([2, 2]);
                rest = 0;
            } else {
                let s = rest.min(3);
                sizes.push(s);
                rest -= s;
            }
        }
        let mut out = Vec::with_capacity(sizes.len());
        let mut pos = 0;
        for s in sizes {
            out.push(chars[pos..pos + s].iter().collect());
            pos += s;
        }
        out
    }

    pub fn tokenize(&self, surface: &str) -> Vec<TokenId> {
        let pieces = Self::pieces(surface);
        if pieces.is_empty() {
            return vec![UNKNOWN_TOKEN];
        }
        pieces
            .iter()
            .enumerate()
            .map(|(i, p)| self.piece_id(p, i == 0))
            .collect()
    }

    fn piece_id(&self, piece: &str, word_start: bool) -> TokenId {
        if !piece.chars().all(|c| c.is_ascii_lowercase() || c == '\'' || c == '-') {
            return UNKNOWN_TOKEN;
        }
        let bytes = piece.as_bytes();
        if bytes.len() == 1 && bytes[0].is_ascii_lowercase() {
            let letter = (bytes[0] - b'a') as usize;
            let base = if word_start { 1 } else { 1 + LETTERS };
            return (base + letter) as TokenId;
        }
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |b: u8| {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x0100_0000_01b3);
        };
        if word_start {
            feed(0x01);
        }
        bytes.iter().for_each(|&b| feed(b));
        let span = (self.vocab_size - FIRST_HASHED) as u64;
        (FIRST_HASHED as u64 + hash % span) as TokenId
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_word_is_one_token() {
        assert_eq!(Tokenizer::default().tokenize("a").len(), 1);
        assert_eq!(Tokenizer::default().tokenize("the").len(), 1);
    }

    #[test]
    fn long_word_splits() {
        let t = Tokenizer::default();
        assert_eq!(Tokenizer::pieces("hippogriff"), vec!["hip", "pog", "ri", "ff"]);
        assert!(t.tokenize("hippogriff").len() >= 2);
        for w in ["abcde", "hippo", "wizard", "castles"] {
            assert!(t.tokenize(w).len() >= 2, "{w}");
        }
    }

    #[test]
    fn deterministic_and_in_range() {
        let t = Tokenizer::default();
        assert_eq!(t.tokenize("dragon"), t.tokenize("dragon"));
        for w in ["dragon", "x", "zz", "owl's", "well-known"] {
            assert!(t.tokenize(w).iter().all(|&id| (id as usize) < t.vocab_size()));
        }
    }

    #[test]
    fn unknown_characters_map_to_reserved_id() {
        let t = Tokenizer::default();
        assert_eq!(t.tokenize("é"), vec![UNKNOWN_TOKEN]);
        assert_eq!(t.tokenize("ab3"), vec![UNKNOWN_TOKEN]);
    }

    #[test]
    fn word_start_marker_distinguishes_pieces() {
        let t = Tokenizer::default();
        assert_ne!(t.tokenize("abc")[0], t.tokenize("xyzabc")[1]);
    }
}
