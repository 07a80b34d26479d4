mod common;

use brainalign::autodiff::{Tape, Tensor};
use common::graphs;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-4;
const FD_TOL: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn composite_graphs_match_finite_differences() {
    let worst = (0..120u64).map(|s| (s, graphs::gradcheck(s, FD_STEP))).fold((0, 0.0f64), |a, b| if b.1 > a.1 { b } else { a });
    assert!(worst.1 < FD_TOL, "graph {} has relative error {:.3e}", worst.0, worst.1);
}

#[test]
fn linear_mse_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (w, x, y) = (random(&mut rng, 4, 3), random(&mut rng, 3, 2), random(&mut rng, 4, 2));
    let loss_at = |w: &Tensor| {
        let mut t = Tape::new();
        let (wn, xn, yn) = (t.leaf(w.clone()), t.constant(x.clone()), t.constant(y.clone()));
        let p = t.matmul(wn, xn).unwrap();
        let l = t.mse(p, yn).unwrap();
        (t.value(l).item(), t.backward(l).unwrap().get_or_zeros(wn))
    };
    let (_, g) = loss_at(&w);
    for i in 0..w.len() {
        let bump = |d: f64| {
            let mut v = w.to_vec();
            v[i] += d;
            loss_at(&Tensor::matrix(4, 3, v).unwrap()).0
        };
        let numeric = (bump(FD_STEP) - bump(-FD_STEP)) / (2.0 * FD_STEP);
        let a = g.data()[i];
        assert!((a - numeric).abs() / a.abs().max(1e-3) < FD_TOL, "entry {i}: {a} vs {numeric}");
    }
}

#[test]
fn gradient_of_sum_is_sum_of_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x0 = random(&mut rng, 3, 4);
    let w = random(&mut rng, 4, 4);
    let mut t = Tape::new();
    let x = t.leaf(x0);
    let wn = t.constant(w);
    let h = t.matmul(x, wn).unwrap();
    let a = t.silu(h).unwrap();
    let l1 = t.sum(a).unwrap();
    let b = t.softmax(h).unwrap();
    let c = t.mul(b, x).unwrap();
    let l2 = t.sum(c).unwrap();
    let both = t.add(l1, l2).unwrap();
    let g1 = t.backward(l1).unwrap().get_or_zeros(x);
    let g2 = t.backward(l2).unwrap().get_or_zeros(x);
    let g = t.backward(both).unwrap().get_or_zeros(x);
    for i in 0..g.len() {
        let expect = g1.data()[i] + g2.data()[i];
        assert!((g.data()[i] - expect).abs() <= 4.0 * f64::EPSILON * expect.abs().max(1.0));
    }
}

#[test]
fn forward_and_backward_are_bit_identical_on_rerun() {
    let run = || {
        let b = graphs::build(77, None);
        let g = b.tape.backward(b.loss).unwrap();
        let mut out = vec![b.tape.value(b.loss).item().to_bits()];
        for &l in &b.leaves {
            out.extend(g.get_or_zeros(l).data().iter().map(|v| v.to_bits()));
        }
        out
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_graph_gradients_are_correct(seed in 1000u64..1_000_000) {
        let err = graphs::gradcheck(seed, FD_STEP);
        prop_assert!(err < FD_TOL, "relative error {err:.3e}");
    }
}
