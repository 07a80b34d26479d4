use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::attribution::Objective;
use crate::autodiff::Tensor;
use crate::error::Result;

/// Leave-one-out loss change per word: the word's token embeddings are set to
/// zero in every input that contains it and the loss is recomputed.
/// Words that appear in no input are absent from the map.
pub fn brute_force_word_importance(obj: &dyn Objective) -> Result<BTreeMap<usize, f64>> {
    let base = obj.evaluate(obj.inputs())?.0;
    let mut words: Vec<usize> = obj.owners().iter().flatten().copied().collect();
    words.sort_unstable();
    words.dedup();
    let deltas: Vec<(usize, f64)> = words
        .par_iter()
        .map(|&w| {
            let xs: Vec<Tensor> = obj
                .inputs()
                .iter()
                .zip(obj.owners())
                .map(|(x, own)| {
                    let h = x.cols();
                    let mut data = x.to_vec();
                    for (r, &o) in own.iter().enumerate() {
                        if o == w {
                            data[r * h..(r + 1) * h].iter_mut().for_each(|v| *v = 0.0);
                        }
                    }
                    Tensor::new(x.shape().to_vec(), data)
                })
                .collect::<Result<_>>()?;
            Ok((w, obj.evaluate(&xs)?.0 - base))
        })
        .collect::<Result<_>>()?;
    Ok(deltas.into_iter().collect())
}

/// Ranks with ties sharing their average rank (1-based).
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        idx[i..=j].iter().for_each(|&k| ranks[k] = r);
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    crate::encoder::pearson(&average_ranks(a), &average_ranks(b))
}
