//! JSON Lines corpus format.
//!
//! The first line is a header object; every following line is one word in
//! stream order. Unknown fields are rejected.
//!
//! ```text
//! {"format":"brainalign-corpus","version":1,"tr_duration_s":2.0,"word_duration_s":0.5,
//!  "vocab":{"semantic":[..],"syntactic":[..],"discourse":[..]}}
//! {"surface":"the","run":0,"tr_index":0,"semantic":[],"syntactic":[1],"discourse":[]}
//! ```

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::corpus::{AnnotationSet, AnnotationVocab, Corpus, WordInput};
use crate::error::{Error, Result};

pub const FORMAT: &str = "brainalign-corpus";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    tr_duration_s: f64,
    word_duration_s: f64,
    vocab: AnnotationVocab,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WordLine {
    surface: String,
    run: usize,
    tr_index: usize,
    #[serde(default)]
    semantic: Vec<u32>,
    #[serde(default)]
    syntactic: Vec<u32>,
    #[serde(default)]
    discourse: Vec<u32>,
}

pub fn write_corpus(corpus: &Corpus, out: &mut impl Write) -> Result<()> {
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        tr_duration_s: corpus.tr_duration_s(),
        word_duration_s: corpus.word_duration_s(),
        vocab: corpus.vocab().clone(),
    };
    serde_json::to_writer(&mut *out, &header)?;
    out.write_all(b"\n")?;
    for w in corpus.words() {
        let line = WordLine {
            surface: w.surface.clone(),
            run: w.run,
            tr_index: w.tr_index,
            semantic: w.annotations.semantic.clone(),
            syntactic: w.annotations.syntactic.clone(),
            discourse: w.annotations.discourse.clone(),
        };
        serde_json::to_writer(&mut *out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_corpus(input: impl BufRead) -> Result<Corpus> {
    let mut lines = input.lines().enumerate().filter(|(_, l)| match l {
        Ok(s) => !s.trim().is_empty(),
        Err(_) => true,
    });
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::Format("corpus file is empty".into()))?;
    let header: Header =
        serde_json::from_str(&first?).map_err(|e| Error::Format(format!("corpus header: {e}")))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(Error::Format(format!(
            "unsupported corpus format {} v{}",
            header.format, header.version
        )));
    }
    let mut inputs = Vec::new();
    for (n, line) in lines {
        let w: WordLine =
            serde_json::from_str(&line?).map_err(|e| Error::Format(format!("corpus line {}: {e}", n + 1)))?;
        inputs.push(WordInput {
            surface: w.surface,
            run: w.run,
            tr_index: w.tr_index,
            annotations: AnnotationSet {
                semantic: w.semantic,
                syntactic: w.syntactic,
                discourse: w.discourse,
            },
        });
    }
    Corpus::new(inputs, header.tr_duration_s, header.word_duration_s, header.vocab)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let vocab = AnnotationVocab {
            semantic: vec!["animal".into()],
            syntactic: vec!["noun".into(), "verb".into()],
            discourse: vec![],
        };
        let runs = vec![
            vec![
                ("owl".to_string(), AnnotationSet { semantic: vec![0], syntactic: vec![0], discourse: vec![] }),
                ("flew".to_string(), AnnotationSet { semantic: vec![], syntactic: vec![1], discourse: vec![] }),
            ],
            vec![("away".to_string(), AnnotationSet::default())],
        ];
        let c = Corpus::from_timed_runs(runs, 2.0, 0.5, vocab).unwrap();
        let mut buf = Vec::new();
        write_corpus(&c, &mut buf).unwrap();
        let back = read_corpus(buf.as_slice()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_unknown_fields_and_bad_header() {
        let h = r#"{"format":"brainalign-corpus","version":1,"tr_duration_s":2.0,"word_duration_s":0.5,"vocab":{"semantic":[],"syntactic":[],"discourse":[]}}"#;
        let ok = format!("{h}\n{{\"surface\":\"a\",\"run\":0,\"tr_index\":0}}\n");
        assert!(read_corpus(ok.as_bytes()).is_ok());
        let extra = format!("{h}\n{{\"surface\":\"a\",\"run\":0,\"tr_index\":0,\"pos\":1}}\n");
        assert!(matches!(read_corpus(extra.as_bytes()), Err(Error::Format(_))));
        let bad = ok.replace("brainalign-corpus", "other");
        assert!(read_corpus(bad.as_bytes()).is_err());
        assert!(read_corpus("".as_bytes()).is_err());
    }
}
