use std::collections::BTreeSet;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attribution::AttributionRecord;
use crate::error::{invalid, Result};

/// How signed scores become attribution mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mass {
    /// Rank and accumulate `|score|`.
    #[default]
    Absolute,
    /// Rank by signed score; only positive scores carry mass.
    Signed,
}

impl Mass {
    pub fn of(self, score: f64) -> f64 {
        match self {
            Mass::Absolute => score.abs(),
            Mass::Signed => score.max(0.0),
        }
    }
}

/// Default threshold grid, in percent.
pub const DEFAULT_THRESHOLDS: [f64; 15] = [
    1.0, 2.0, 3.0, 5.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 95.0, 98.0,
];

/// Relative slack when comparing cumulative mass against a threshold, so that
/// an exact 50% share is not missed through rounding.
const COVERAGE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TopSet {
    pub threshold: f64,
    /// Word indices in rank order.
    pub words: Vec<usize>,
    /// Fraction of total mass covered by `words`.
    pub covered: f64,
}

impl TopSet {
    pub fn as_set(&self) -> BTreeSet<usize> {
        self.words.iter().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Positions into `record` sorted by descending mass; ties go to the more
/// recent word, then the smaller word index.
pub fn ranking(record: &AttributionRecord, mass: Mass) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..record.len()).collect();
    let key = |i: usize| match mass {
        Mass::Absolute => record.score[i].abs(),
        Mass::Signed => record.score[i],
    };
    idx.sort_by(|&a, &b| {
        key(b)
            .total_cmp(&key(a))
            .then(record.distance[a].cmp(&record.distance[b]))
            .then(record.word_index[a].cmp(&record.word_index[b]))
    });
    idx
}

/// Smallest mass-ranked prefix whose cumulative mass reaches `t`% of the total.
pub fn top_set(record: &AttributionRecord, t: f64, mass: Mass) -> Result<TopSet> {
    if !(t > 0.0 && t <= 100.0) {
        return Err(invalid(format!("threshold must be in (0, 100], got {t}")));
    }
    let total: f64 = record.score.iter().map(|&s| mass.of(s)).sum();
    if total <= 0.0 {
        warn!("record for TR {} has no attribution mass; top set is empty", record.target.tr);
        return Ok(TopSet {
            threshold: t,
            words: Vec::new(),
            covered: 0.0,
        });
    }
    let goal = t / 100.0 * total * (1.0 - COVERAGE_EPS);
    let mut words = Vec::new();
    let mut acc = 0.0;
    for i in ranking(record, mass) {
        let m = mass.of(record.score[i]);
        if m == 0.0 || (t < 100.0 && acc >= goal) {
            break;
        }
        acc += m;
        words.push(record.word_index[i]);
    }
    Ok(TopSet {
        threshold: t,
        words,
        covered: acc / total,
    })
}

/// Jaccard index; two empty sets give 0 with a warning.
pub fn iou(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        warn!("IoU of two empty sets is defined as 0");
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Monte-Carlo mean IoU of uniform random subsets of sizes `a` and `b` from `n` items.
pub fn random_baseline_iou(n: usize, a: usize, b: usize, draws: usize, seed: u64) -> Result<f64> {
    if a > n || b > n {
        return Err(invalid(format!("set sizes {a}, {b} exceed context size {n}")));
    }
    if draws == 0 {
        return Err(invalid("need at least one draw"));
    }
    if a == 0 && b == 0 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut mark = vec![false; n];
    for _ in 0..draws {
        let sa = rand::seq::index::sample(&mut rng, n, a);
        let sb = rand::seq::index::sample(&mut rng, n, b);
        sa.iter().for_each(|i| mark[i] = true);
        let inter = sb.iter().filter(|&i| mark[i]).count();
        sa.iter().for_each(|i| mark[i] = false);
        total += inter as f64 / (a + b - inter) as f64;
    }
    Ok(total / draws as f64)
}

/// Where CoM mass comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum ComMode {
    All,
    Top { threshold: f64 },
}

impl Default for ComMode {
    fn default() -> Self {
        ComMode::Top { threshold: 60.0 }
    }
}

/// Mass-weighted mean distance, with distances shifted by `origin`
/// (0 = most recent word). `None` when there is no mass.
pub fn center_of_mass(record: &AttributionRecord, mode: ComMode, mass: Mass, origin: usize) -> Result<Option<f64>> {
    let keep: Option<BTreeSet<usize>> = match mode {
        ComMode::All => None,
        ComMode::Top { threshold } => Some(top_set(record, threshold, mass)?.as_set()),
    };
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..record.len() {
        if keep.as_ref().is_some_and(|k| !k.contains(&record.word_index[i])) {
            continue;
        }
        let m = mass.of(record.score[i]);
        num += (record.distance[i] + origin) as f64 * m;
        den += m;
    }
    Ok((den > 0.0).then(|| num / den))
}

/// Top-set size at each threshold.
pub fn spread_counts(record: &AttributionRecord, thresholds: &[f64], mass: Mass) -> Result<Vec<usize>> {
    if thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("thresholds must be strictly ascending"));
    }
    thresholds.iter().map(|&t| Ok(top_set(record, t, mass)?.len())).collect()
}

/// Trapezoid area of `values` over `thresholds / 100`.
pub fn spread_auc(thresholds: &[f64], values: &[f64]) -> f64 {
    thresholds
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| (t[1] - t[0]) / 100.0 * (v[0] + v[1]) / 2.0)
        .sum()
}

/// Proportion of top-set words per distance bin, pooled over records.
pub fn positional_histogram(records: &[&AttributionRecord], t: f64, bin_width: usize, mass: Mass) -> Result<Vec<f64>> {
    if bin_width == 0 {
        return Err(invalid("bin width must be >= 1"));
    }
    let mut counts: Vec<usize> = Vec::new();
    for r in records {
        let set = top_set(r, t, mass)?.as_set();
        for (w, d) in r.word_index.iter().zip(&r.distance) {
            if set.contains(w) {
                let b = d / bin_width;
                if counts.len() <= b {
                    counts.resize(b + 1, 0);
                }
                counts[b] += 1;
            }
        }
    }
    let total: usize = counts.iter().sum();
    Ok(if total == 0 {
        counts.iter().map(|_| 0.0).collect()
    } else {
        counts.iter().map(|&c| c as f64 / total as f64).collect()
    })
}
