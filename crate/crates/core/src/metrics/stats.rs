use log::warn;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PairedTest {
    pub n: usize,
    pub mean_diff: f64,
    pub t: f64,
    pub p: f64,
}

/// Two-sided paired t-test on `a - b`. Zero-variance differences give p = 1.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    if a.len() != b.len() {
        return Err(invalid("paired samples differ in length"));
    }
    let n = a.len();
    if n < 2 {
        return Err(invalid("paired t-test needs at least 2 pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    if var <= 0.0 || !var.is_finite() {
        warn!("paired differences have zero variance; p set to 1");
        return Ok(PairedTest {
            n,
            mean_diff: mean,
            t: 0.0,
            p: 1.0,
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| invalid(e.to_string()))?;
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(PairedTest {
        n,
        mean_diff: mean,
        t,
        p,
    })
}

/// Benjamini-Hochberg step-up. Returns `(rejected, adjusted p)` in input order.
pub fn benjamini_hochberg(p: &[f64], alpha: f64) -> (Vec<bool>, Vec<f64>) {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let cutoff = (0..m)
        .rev()
        .find(|&k| p[order[k]] <= (k + 1) as f64 * alpha / m as f64);
    let mut rejected = vec![false; m];
    if let Some(k) = cutoff {
        order[..=k].iter().for_each(|&i| rejected[i] = true);
    }
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for k in (0..m).rev() {
        let i = order[k];
        running = running.min(p[i] * m as f64 / (k + 1) as f64);
        adjusted[i] = running.min(1.0);
    }
    (rejected, adjusted)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bh_hand_example() {
        let (rej, adj) = benjamini_hochberg(&[0.01, 0.04, 0.03, 0.005], 0.05);
        assert_eq!(rej, vec![true; 4]);
        assert!((adj[1] - 0.04).abs() < 1e-15);
        assert!((adj[3] - 0.02).abs() < 1e-15);
        let (rej, _) = benjamini_hochberg(&[0.5, 0.01], 0.05);
        assert_eq!(rej, vec![false, true]);
    }

    #[test]
    fn identical_samples_give_p_one() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(paired_t_test(&a, &a).unwrap().p, 1.0);
    }
}
