use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::SyntheticSpec;
use crate::encoder::{design_to_matrix, ResponseMatrix};
use crate::error::{invalid, Error, Result};
use crate::stimulus::DesignMatrix;

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    DMatrix::from_fn(rows, cols, |_, _| normal.sample(rng))
}

/// Dense Gaussian `W*` of shape `(D*H, V)`.
pub fn random_true_map(hidden: usize, delays: usize, voxels: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gaussian(delays * hidden, voxels, &mut rng) / ((delays * hidden) as f64).sqrt()
}

fn covariance(rows: &[&[f64]], centered: bool) -> DMatrix<f64> {
    let h = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; h];
    if centered {
        for r in rows {
            mean.iter_mut().zip(r.iter()).for_each(|(m, v)| *m += v / n);
        }
    }
    let mut c = DMatrix::zeros(h, h);
    for r in rows {
        let d = DVector::from_iterator(h, r.iter().zip(&mean).map(|(v, m)| v - m));
        c += &d * d.transpose() / n;
    }
    c
}

/// Planted `W*`: nonzero only on the delay-0 block, whose columns mix the
/// top `components` generalized eigenvectors of (designated-word covariance, other-word
/// second moment + ridge). Directions that vary across designated words but
/// carry little weight in other words' embeddings are preferred.
pub fn planted_true_map(
    word_embs: &[Vec<f64>],
    designated: &[usize],
    delays: usize,
    voxels: usize,
    components: usize,
    ridge: f64,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if designated.len() < 2 {
        return Err(invalid("planted map needs at least 2 designated words"));
    }
    let h = word_embs[0].len();
    let mut is_des = vec![false; word_embs.len()];
    for &w in designated {
        *is_des.get_mut(w).ok_or_else(|| invalid(format!("designated word {w} out of range")))? = true;
    }
    let des: Vec<&[f64]> = designated.iter().map(|&w| word_embs[w].as_slice()).collect();
    let others: Vec<&[f64]> = (0..word_embs.len()).filter(|&w| !is_des[w]).map(|w| word_embs[w].as_slice()).collect();
    if others.is_empty() {
        return Err(invalid("planted map needs non-designated words"));
    }
    let a = covariance(&des, true);
    let mut b = covariance(&others, false);
    let jitter = ridge * (b.trace() / h as f64).max(1e-12);
    for i in 0..h {
        b[(i, i)] += jitter;
    }
    let chol = b
        .cholesky()
        .ok_or_else(|| Error::Numerical("nuisance second moment is not positive definite".into()))?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("Cholesky factor is singular".into()))?;
    let c = &l_inv * a * l_inv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let eig = c.symmetric_eigen();
    let mut order: Vec<usize> = (0..h).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let k = components.clamp(1, h);
    let mut u = DMatrix::zeros(h, k);
    for (col, &i) in order.iter().take(k).enumerate() {
        let z = eig.eigenvectors.column(i);
        let v = l_inv.transpose() * z;
        let norm = v.norm();
        u.set_column(col, &(v / norm));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block = u * gaussian(k, voxels, &mut rng);
    let mut w = DMatrix::zeros(delays * h, voxels);
    w.view_mut((0, 0), (h, voxels)).copy_from(&block);
    Ok(w)
}

/// Rescales each voxel column of `w` so the noiseless signal `X w` has unit
/// standard deviation over the design rows.
pub fn normalize_to_design(design: &DesignMatrix, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let x = design_to_matrix(design);
    if x.ncols() != w.nrows() {
        return Err(invalid(format!("design has {} columns, W* has {} rows", x.ncols(), w.nrows())));
    }
    let signal = &x * w;
    let mut out = w.clone();
    for v in 0..w.ncols() {
        let col = signal.column(v);
        let mean = col.mean();
        let sd = (col.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / col.len() as f64).sqrt();
        if sd > 0.0 {
            out.column_mut(v).scale_mut(1.0 / sd);
        }
    }
    Ok(out)
}

/// `Y = X W* + noise`, noise i.i.d. Gaussian with std `spec.noise_std`.
pub fn gen_brain_responses(
    spec: &SyntheticSpec,
    design: &DesignMatrix,
    w_star: &DMatrix<f64>,
    subject: &str,
) -> Result<ResponseMatrix> {
    let x = design_to_matrix(design);
    if x.ncols() != w_star.nrows() {
        return Err(invalid(format!(
            "design has {} columns, W* has {} rows",
            x.ncols(),
            w_star.nrows()
        )));
    }
    let mut y = &x * w_star;
    if spec.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_0f_4e55);
        let normal = Normal::new(0.0, spec.noise_std).map_err(|e| invalid(e.to_string()))?;
        y.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }
    let values = y.transpose().as_slice().to_vec();
    ResponseMatrix::new(subject, w_star.ncols(), design.tr_rows.clone(), values)
}
