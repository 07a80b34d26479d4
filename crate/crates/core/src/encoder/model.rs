use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::stimulus::DesignMatrix;

/// Voxel responses, one row per global TR listed in `tr_rows`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseMatrix {
    pub subject: String,
    pub voxels: usize,
    pub tr_rows: Vec<usize>,
    pub values: Vec<f64>,
}

impl ResponseMatrix {
    pub fn new(subject: impl Into<String>, voxels: usize, tr_rows: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let r = Self {
            subject: subject.into(),
            voxels,
            tr_rows,
            values,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.voxels == 0 || self.values.len() != self.tr_rows.len() * self.voxels {
            return Err(Error::Format(format!(
                "response matrix for {} has {} values for {} rows x {} voxels",
                self.subject,
                self.values.len(),
                self.tr_rows.len(),
                self.voxels
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!("responses for {} are not finite", self.subject)));
        }
        Ok(())
    }

    pub fn row_of_tr(&self, tr: usize) -> Option<&[f64]> {
        let r = self.tr_rows.iter().position(|&t| t == tr)?;
        Some(&self.values[r * self.voxels..(r + 1) * self.voxels])
    }

    /// Responses reordered to match the design's rows.
    pub fn aligned_to(&self, design: &DesignMatrix) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(design.rows, self.voxels);
        for (i, &tr) in design.tr_rows.iter().enumerate() {
            let row = self.row_of_tr(tr).ok_or_else(|| {
                invalid(format!("subject {} has no response for TR {tr}", self.subject))
            })?;
            for (v, &y) in row.iter().enumerate() {
                m[(i, v)] = y;
            }
        }
        Ok(m)
    }
}

/// Design values as an `(rows, cols)` matrix.
pub fn design_to_matrix(design: &DesignMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(design.rows, design.cols(), &design.values)
}

/// Fitted weights in raw design units: `y = bias + row * weights`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldModel {
    /// Design rows held out when fitting this model.
    pub test_rows: Vec<usize>,
    pub lambda: f64,
    /// Row-major `(D*H, V)`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl FoldModel {
    pub fn voxels(&self) -> usize {
        self.bias.len()
    }

    pub fn inputs(&self) -> usize {
        self.weights.len() / self.bias.len().max(1)
    }

    /// Prediction for one design row. The accumulation order (bias, then
    /// inputs in column order) is shared with [`Head::accumulate`].
    pub fn predict_row(&self, row: &[f64]) -> Vec<f64> {
        let v = self.voxels();
        let mut out = self.bias.clone();
        for (j, &x) in row.iter().enumerate() {
            let w = &self.weights[j * v..(j + 1) * v];
            out.iter_mut().zip(w).for_each(|(o, w)| *o += x * w);
        }
        out
    }

    pub fn weight_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.inputs(), self.voxels(), &self.weights)
    }
}

/// Projection for one delay: `(H, V)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub delay: usize,
    pub hidden: usize,
    pub voxels: usize,
    pub weights: Vec<f64>,
}

impl Head {
    /// Adds `e * g` into `acc`, in the same order as [`FoldModel::predict_row`].
    pub fn accumulate(&self, e: &[f64], acc: &mut [f64]) {
        for (j, &x) in e.iter().enumerate() {
            let w = &self.weights[j * self.voxels..(j + 1) * self.voxels];
            acc.iter_mut().zip(w).for_each(|(o, w)| *o += x * w);
        }
    }
}

/// Splits `(D*H, V)` weights into `D` heads of `(H, V)`.
pub fn decompose_weights(fold: &FoldModel, delays: usize, hidden: usize) -> Result<Vec<Head>> {
    let v = fold.voxels();
    if fold.weights.len() != delays * hidden * v {
        return Err(invalid(format!(
            "weights of length {} do not split into {delays} heads of {hidden}x{v}",
            fold.weights.len()
        )));
    }
    Ok((0..delays)
        .map(|d| Head {
            delay: d,
            hidden,
            voxels: v,
            weights: fold.weights[d * hidden * v..(d + 1) * hidden * v].to_vec(),
        })
        .collect())
}

/// Horizontal restack of heads back into a flat `(D*H, V)` weight list.
pub fn restack(heads: &[Head]) -> Vec<f64> {
    heads.iter().flat_map(|h| h.weights.iter().copied()).collect()
}

pub const MODEL_FORMAT: &str = "brainalign-encoder";
pub const MODEL_VERSION: u32 = 1;

/// Nested-CV encoding model for one (layer, subject).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodingModel {
    pub format: String,
    pub version: u32,
    pub subject: String,
    pub layer: usize,
    pub delays: usize,
    pub hidden: usize,
    pub voxels: usize,
    pub lambdas: Vec<f64>,
    /// Global TR of each design row.
    pub tr_rows: Vec<usize>,
    pub folds: Vec<FoldModel>,
    /// Held-out Pearson r per voxel.
    pub voxel_r: Vec<f64>,
    pub mean_r: f64,
}

impl EncodingModel {
    /// The fold model that held out `tr`, used for attribution of that TR.
    pub fn fold_for_tr(&self, tr: usize) -> Result<&FoldModel> {
        let row = self
            .tr_rows
            .iter()
            .position(|&t| t == tr)
            .ok_or_else(|| invalid(format!("TR {tr} is not a design row of this model")))?;
        self.folds
            .iter()
            .find(|f| f.test_rows.contains(&row))
            .ok_or_else(|| invalid(format!("TR {tr} was not held out by any fitted fold")))
    }

    pub fn heads_for_tr(&self, tr: usize) -> Result<(Vec<Head>, Vec<f64>)> {
        let fold = self.fold_for_tr(tr)?;
        Ok((decompose_weights(fold, self.delays, self.hidden)?, fold.bias.clone()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != MODEL_FORMAT || self.version != MODEL_VERSION {
            return Err(Error::Format(format!(
                "unsupported encoder format {} v{}",
                self.format, self.version
            )));
        }
        let p = self.delays * self.hidden;
        for f in &self.folds {
            if f.bias.len() != self.voxels || f.weights.len() != p * self.voxels {
                return Err(Error::Format("fold weights disagree with model dimensions".into()));
            }
        }
        if self.voxel_r.len() != self.voxels {
            return Err(Error::Format("voxel score count mismatch".into()));
        }
        Ok(())
    }
}

/// One layer per depth third, `[floor(k n / 3), floor((k+1) n / 3))`; ties
/// go to the shallower layer.
pub fn select_layers(scores: &[f64]) -> Result<[usize; 3]> {
    let n = scores.len();
    if n < 3 {
        return Err(invalid(format!("layer selection needs >= 3 layers, got {n}")));
    }
    let mut out = [0; 3];
    for (k, slot) in out.iter_mut().enumerate() {
        let (lo, hi) = (k * n / 3, (k + 1) * n / 3);
        let mut best = lo;
        for l in lo + 1..hi {
            if scores[l] > scores[best] {
                best = l;
            }
        }
        *slot = best;
    }
    Ok(out)
}

/// Writes `layer,subject,voxel,r` rows.
pub fn write_alignment_csv(models: &[&EncodingModel], out: &mut impl Write) -> Result<()> {
    writeln!(out, "layer,subject,voxel,r")?;
    for m in models {
        for (v, r) in m.voxel_r.iter().enumerate() {
            writeln!(out, "{},{},{v},{r}", m.layer, m.subject)?;
        }
    }
    Ok(())
}
