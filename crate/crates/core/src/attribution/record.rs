//! Attribution records, one JSON object per line.
//!
//! ```text
//! {"target":{"task":"brain","method":{"name":"ig","steps":20},"layer":2,"subject":"s0","tr":17},
//!  "loss":0.93,"word_index":[40,41,..],"distance":[27,26,..],"score":[0.01,-0.2,..]}
//! ```
//!
//! Arrays are parallel and ordered by `word_index`. `distance` counts words
//! back from the most recent word of the TR (0 = latest).

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::method::Method;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Brain,
    Nwp,
}

impl Task {
    pub fn label(self) -> &'static str {
        match self {
            Task::Brain => "brain",
            Task::Nwp => "nwp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributionTarget {
    pub task: Task,
    pub method: Method,
    /// Required for the brain task, absent for NWP.
    pub layer: Option<usize>,
    pub subject: Option<String>,
    pub tr: usize,
}

impl AttributionTarget {
    pub fn validate(&self) -> Result<()> {
        self.method.validate()?;
        match (self.task, self.layer.is_some()) {
            (Task::Brain, false) => Err(Error::InvalidInput("brain attribution needs a layer".into())),
            (Task::Nwp, true) => Err(Error::InvalidInput("NWP attribution takes no layer".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributionRecord {
    pub target: AttributionTarget,
    pub loss: f64,
    pub word_index: Vec<usize>,
    pub distance: Vec<usize>,
    pub score: Vec<f64>,
}

impl AttributionRecord {
    pub fn from_scores(target: AttributionTarget, loss: f64, last_word: usize, scores: &BTreeMap<usize, f64>) -> Self {
        Self {
            target,
            loss,
            word_index: scores.keys().copied().collect(),
            distance: scores.keys().map(|&w| last_word - w).collect(),
            score: scores.values().copied().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.word_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_index.is_empty()
    }

    pub fn score_of(&self, word: usize) -> Option<f64> {
        self.word_index.binary_search(&word).ok().map(|i| self.score[i])
    }

    pub fn validate(&self) -> Result<()> {
        self.target.validate()?;
        let n = self.word_index.len();
        if self.distance.len() != n || self.score.len() != n {
            return Err(Error::Format("attribution arrays have different lengths".into()));
        }
        if self.word_index.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Format("attribution word indices are not strictly increasing".into()));
        }
        if let Some(&last) = self.word_index.last() {
            let anchor = last + self.distance[n - 1];
            if self.word_index.iter().zip(&self.distance).any(|(w, d)| w + d != anchor) {
                return Err(Error::Format("attribution distances disagree with word order".into()));
            }
        }
        if self.score.iter().any(|s| !s.is_finite()) {
            return Err(Error::Format("attribution scores are not finite".into()));
        }
        Ok(())
    }
}

pub fn write_records(records: &[AttributionRecord], out: &mut impl Write) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records(input: impl BufRead) -> Result<Vec<AttributionRecord>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: AttributionRecord =
            serde_json::from_str(&line).map_err(|e| Error::Format(format!("attribution line {}: {e}", n + 1)))?;
        r.validate()?;
        out.push(r);
    }
    Ok(out)
}
