//! Stimulus pipeline: corpus, tokenization, contexts and design matrices.

mod context;
mod corpus;
mod design;
mod io;
mod tokenizer;

pub use context::{build_contexts, Context, CorpusTokens, TokenizedContext, WordSpan};
pub use corpus::{
    tr_from_onset, AnnotationSet, AnnotationVocab, Category, Corpus, TrSlot, WordInput, WordRecord,
};
pub use design::{
    delay_concatenate, delayed_trs, extract_in_order, extract_word_embeddings, tr_embedding, tr_embeddings,
    word_embedding, DesignMatrix, WordEmbeddings,
};
pub use io::{read_corpus, write_corpus};
pub use tokenizer::{Tokenizer, DEFAULT_VOCAB, UNKNOWN_TOKEN};
