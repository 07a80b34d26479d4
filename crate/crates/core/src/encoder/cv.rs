use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{design_to_matrix, EncodingModel, FoldModel, ResponseMatrix, MODEL_FORMAT, MODEL_VERSION};
use super::ridge::{default_lambdas, pearson, pearson_per_voxel, RidgeSolver};
use crate::error::{invalid, Error, Result};
use crate::stimulus::DesignMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvOptions {
    pub outer_folds: usize,
    pub inner_folds: usize,
    pub lambdas: Vec<f64>,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            outer_folds: 4,
            inner_folds: 3,
            lambdas: default_lambdas(),
        }
    }
}

/// Outer test sets (row indices) plus the inner fold count.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSpec {
    pub outer: Vec<Vec<usize>>,
    pub inner: usize,
}

impl FoldSpec {
    /// `k` contiguous blocks `[floor(i n / k), floor((i+1) n / k))`.
    pub fn contiguous(n: usize, outer: usize, inner: usize) -> Result<Self> {
        if outer < 2 || inner < 2 {
            return Err(invalid("need at least 2 outer and 2 inner folds"));
        }
        Ok(Self {
            outer: split_contiguous(&(0..n).collect::<Vec<_>>(), outer),
            inner,
        })
    }

    fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &r in self.outer.iter().flatten() {
            if r >= n || std::mem::replace(&mut seen[r], true) {
                return Err(invalid(format!("outer folds do not partition {n} rows")));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(invalid(format!("outer folds do not cover all {n} rows")));
        }
        Ok(())
    }

    /// Inner validation groups for outer fold `k`, as positions into that
    /// fold's training row list. When the remaining outer folds number
    /// exactly `inner` they are used as the groups.
    fn inner_groups(&self, k: usize) -> (Vec<usize>, Vec<Vec<usize>>) {
        let others: Vec<&Vec<usize>> = self.outer.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, f)| f).collect();
        let train: Vec<usize> = others.iter().flat_map(|f| f.iter().copied()).collect();
        let positions: Vec<usize> = (0..train.len()).collect();
        let groups = if others.len() == self.inner {
            let mut start = 0;
            others
                .iter()
                .map(|f| {
                    let g = (start..start + f.len()).collect();
                    start += f.len();
                    g
                })
                .collect()
        } else {
            split_contiguous(&positions, self.inner)
        };
        (train, groups)
    }
}

fn split_contiguous(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    let n = items.len();
    (0..k).map(|i| items[i * n / k..(i + 1) * n / k].to_vec()).collect()
}

/// Per-column mean and standard deviation; zero spread is replaced by 1.
#[derive(Debug, Clone)]
struct Standardizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Standardizer {
    fn fit(m: &DMatrix<f64>) -> Self {
        let n = m.nrows() as f64;
        let mut mean = Vec::with_capacity(m.ncols());
        let mut std = Vec::with_capacity(m.ncols());
        for c in m.column_iter() {
            let mu = c.sum() / n;
            let var = c.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            let sd = var.sqrt();
            mean.push(mu);
            std.push(if sd > 1e-12 * (1.0 + mu.abs()) { sd } else { 1.0 });
        }
        Self { mean, std }
    }

    fn apply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = m.clone();
        for (j, mut c) in out.column_iter_mut().enumerate() {
            c.iter_mut().for_each(|v| *v = (*v - self.mean[j]) / self.std[j]);
        }
        out
    }
}

fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    m.select_rows(rows.iter())
}

/// Standardized fit; returns weights in raw units plus bias.
fn fit_raw(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let sx = Standardizer::fit(x);
    let sy = Standardizer::fit(y);
    let wz = RidgeSolver::new(&sx.apply(x))?.solve(&sy.apply(y), lambda)?;
    let mut w = wz;
    for j in 0..w.nrows() {
        for v in 0..w.ncols() {
            w[(j, v)] *= sy.std[v] / sx.std[j];
        }
    }
    let bias = (0..w.ncols())
        .map(|v| sy.mean[v] - (0..w.nrows()).map(|j| sx.mean[j] * w[(j, v)]).sum::<f64>())
        .collect();
    Ok((w, bias))
}

/// Mean inner-fold Pearson r for each lambda.
fn inner_scores(x: &DMatrix<f64>, y: &DMatrix<f64>, groups: &[Vec<usize>], lambdas: &[f64]) -> Result<Vec<f64>> {
    let mut totals = vec![0.0; lambdas.len()];
    let mut usable = vec![0usize; lambdas.len()];
    for (g, test) in groups.iter().enumerate() {
        if test.len() < 2 {
            continue;
        }
        let train: Vec<usize> = groups.iter().enumerate().filter(|(i, _)| *i != g).flat_map(|(_, r)| r.iter().copied()).collect();
        if train.is_empty() {
            continue;
        }
        let (xt, yt) = (select_rows(x, &train), select_rows(y, &train));
        let sx = Standardizer::fit(&xt);
        let sy = Standardizer::fit(&yt);
        let solver = RidgeSolver::new(&sx.apply(&xt))?;
        let yz = sy.apply(&yt);
        let x_test = sx.apply(&select_rows(x, test));
        let y_test = select_rows(y, test);
        for (li, &lambda) in lambdas.iter().enumerate() {
            let w = match solver.solve(&yz, lambda) {
                Ok(w) => w,
                Err(Error::Singular { .. }) => continue,
                Err(e) => return Err(e),
            };
            let pred = &x_test * w;
            let r = pearson_per_voxel(&pred, &y_test)?;
            totals[li] += r.iter().sum::<f64>() / r.len() as f64;
            usable[li] += 1;
        }
    }
    Ok(totals
        .iter()
        .zip(&usable)
        .map(|(t, &n)| if n == 0 { f64::NEG_INFINITY } else { t / n as f64 })
        .collect())
}

/// Chooses lambda on inner folds of the training rows and refits on all of them.
pub fn fit_fold(
    x_train: &DMatrix<f64>,
    y_train: &DMatrix<f64>,
    inner_groups: &[Vec<usize>],
    lambdas: &[f64],
) -> Result<(f64, DMatrix<f64>, Vec<f64>)> {
    if lambdas.is_empty() {
        return Err(invalid("lambda grid is empty"));
    }
    let lambda = if lambdas.len() == 1 {
        lambdas[0]
    } else {
        let scores = inner_scores(x_train, y_train, inner_groups, lambdas)?;
        let mut best = 0;
        for (i, s) in scores.iter().enumerate() {
            if *s > scores[best] {
                best = i;
            }
        }
        if scores[best] == f64::NEG_INFINITY {
            return Err(invalid("no inner fold could score the lambda grid; too few rows"));
        }
        lambdas[best]
    };
    let (w, bias) = fit_raw(x_train, y_train, lambda)?;
    Ok((lambda, w, bias))
}

/// Result of nested cross-validation on raw matrices.
#[derive(Debug, Clone)]
pub struct CvResult {
    pub folds: Vec<FoldModel>,
    /// Held-out prediction per row, `None` for rows of skipped folds.
    pub predictions: Vec<Option<Vec<f64>>>,
    pub voxel_r: Vec<f64>,
}

pub fn nested_cv_matrices(x: &DMatrix<f64>, y: &DMatrix<f64>, spec: &FoldSpec, lambdas: &[f64]) -> Result<CvResult> {
    let n = x.nrows();
    if y.nrows() != n {
        return Err(invalid(format!("X has {n} rows, Y has {}", y.nrows())));
    }
    if lambdas.is_empty() {
        return Err(invalid("lambda grid is empty"));
    }
    spec.validate(n)?;
    let fitted: Vec<Option<FoldModel>> = (0..spec.outer.len())
        .into_par_iter()
        .map(|k| {
            let test = &spec.outer[k];
            if test.len() < 2 {
                warn!("outer fold {k} has {} test rows; skipped", test.len());
                return Ok(None);
            }
            let (train, groups) = spec.inner_groups(k);
            let (lambda, w, bias) = fit_fold(&select_rows(x, &train), &select_rows(y, &train), &groups, lambdas)?;
            Ok(Some(FoldModel {
                test_rows: test.clone(),
                lambda,
                weights: w.transpose().as_slice().to_vec(),
                bias,
            }))
        })
        .collect::<Result<_>>()?;
    let folds: Vec<FoldModel> = fitted.into_iter().flatten().collect();

    let mut predictions = vec![None; n];
    for f in &folds {
        for &r in &f.test_rows {
            let row: Vec<f64> = x.row(r).iter().copied().collect();
            predictions[r] = Some(f.predict_row(&row));
        }
    }
    let held: Vec<usize> = (0..n).filter(|&r| predictions[r].is_some()).collect();
    let voxel_r = (0..y.ncols())
        .map(|v| {
            let p: Vec<f64> = held.iter().map(|&r| predictions[r].as_ref().expect("held")[v]).collect();
            let a: Vec<f64> = held.iter().map(|&r| y[(r, v)]).collect();
            pearson(&p, &a)
        })
        .collect();
    Ok(CvResult {
        folds,
        predictions,
        voxel_r,
    })
}

/// Nested CV for one layer's design against one subject's responses.
pub fn nested_cv(design: &DesignMatrix, responses: &ResponseMatrix, opts: &CvOptions) -> Result<EncodingModel> {
    design.validate()?;
    let x = design_to_matrix(design);
    let y = responses.aligned_to(design)?;
    let spec = FoldSpec::contiguous(design.rows, opts.outer_folds, opts.inner_folds)?;
    let cv = nested_cv_matrices(&x, &y, &spec, &opts.lambdas)?;
    if cv.folds.is_empty() {
        return Err(invalid("every outer fold was skipped; not enough design rows"));
    }
    let mean_r = cv.voxel_r.iter().sum::<f64>() / cv.voxel_r.len() as f64;
    Ok(EncodingModel {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        subject: responses.subject.clone(),
        layer: design.layer,
        delays: design.delays,
        hidden: design.hidden,
        voxels: responses.voxels,
        lambdas: opts.lambdas.clone(),
        tr_rows: design.tr_rows.clone(),
        folds: cv.folds,
        voxel_r: cv.voxel_r,
        mean_r,
    })
}
