//! Random composite graphs for finite-difference gradient checks.
//!
//! A graph is fully determined by its seed: the builder draws every structural
//! choice from the seeded RNG, so it can be replayed with perturbed leaf values.

use brainalign::autodiff::{Axis, NodeId, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Built {
    pub tape: Tape,
    pub loss: NodeId,
    pub leaves: Vec<NodeId>,
}

fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

struct Builder<'a> {
    rng: ChaCha8Rng,
    tape: Tape,
    leaves: Vec<NodeId>,
    overrides: Option<&'a [Tensor]>,
}

impl Builder<'_> {
    fn leaf(&mut self, rows: usize, cols: usize) -> NodeId {
        let drawn = rand_tensor(&mut self.rng, rows, cols);
        let value = match self.overrides {
            Some(o) => o[self.leaves.len()].clone(),
            None => drawn,
        };
        let id = self.tape.leaf(value);
        self.leaves.push(id);
        id
    }

    fn dims(&self, id: NodeId) -> (usize, usize) {
        let s = self.tape.value(id).shape();
        (s[0], s[1])
    }

    fn step(&mut self, x: NodeId) -> NodeId {
        let (n, m) = self.dims(x);
        let t = &mut self.tape;
        match self.rng.random_range(0..16) {
            0 => t.silu(x).unwrap(),
            1 => t.sigmoid(x).unwrap(),
            2 => t.rms_norm(x).unwrap(),
            3 => t.softmax(x).unwrap(),
            4 if n == m => t.causal_softmax(x).unwrap(),
            5 => {
                let k = self.rng.random_range(1..4);
                let w = self.leaf(m, k);
                self.tape.matmul(x, w).unwrap()
            }
            6 => {
                let k = self.rng.random_range(1..4);
                let w = self.leaf(k, m);
                self.tape.matmul_nt(x, w).unwrap()
            }
            7 => {
                let y = self.leaf(n, m);
                self.tape.mul(x, y).unwrap()
            }
            8 => {
                let y = self.leaf(n, m);
                let s = self.tape.sub(x, y).unwrap();
                self.tape.add(s, x).unwrap()
            }
            9 => {
                let r = self.leaf(1, m);
                self.tape.add_row(x, r).unwrap()
            }
            10 => {
                let r = self.leaf(1, m);
                self.tape.mul_row(x, r).unwrap()
            }
            11 => {
                let tr = self.tape.transpose(x).unwrap();
                let s = self.rng.random_range(-2.0..2.0);
                self.tape.scale(tr, s).unwrap()
            }
            12 if n > 1 => {
                let start = self.rng.random_range(0..n - 1);
                let a = self.tape.slice_rows(x, start, n - start).unwrap();
                let b = self.tape.slice_rows(x, 0, start + 1).unwrap();
                self.tape.concat_rows(&[a, b]).unwrap()
            }
            13 if m > 1 => {
                let a = self.tape.slice_cols(x, 1, m - 1).unwrap();
                let b = self.tape.slice_cols(x, 0, 1).unwrap();
                self.tape.concat_cols(&[b, a, b]).unwrap()
            }
            14 => {
                let raw = self.leaf(1, m);
                let decay = self.tape.sigmoid(raw).unwrap();
                self.tape.diag_scan(x, decay).unwrap()
            }
            15 => {
                let axis = if self.rng.random_bool(0.5) { Axis::Rows } else { Axis::Cols };
                let mean = self.tape.mean(x, axis).unwrap();
                match axis {
                    Axis::Rows => self.tape.add_row(x, mean).unwrap(),
                    Axis::Cols => {
                        let tr = self.tape.transpose(mean).unwrap();
                        let outer = self.tape.matmul(mean, tr).unwrap();
                        self.tape.matmul(outer, x).unwrap()
                    }
                }
            }
            _ => t.silu(x).unwrap(),
        }
    }
}

/// Builds graph `seed`; `overrides` replaces leaf values in creation order.
pub fn build(seed: u64, overrides: Option<&[Tensor]>) -> Built {
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(seed),
        tape: Tape::new(),
        leaves: Vec::new(),
        overrides,
    };
    let n = b.rng.random_range(2..5);
    let m = b.rng.random_range(2..5);
    let mut x = if b.rng.random_bool(0.3) {
        let table = b.leaf(6, m);
        let ids: Vec<usize> = (0..n).map(|_| b.rng.random_range(0..6)).collect();
        b.tape.embedding(table, &ids).unwrap()
    } else {
        b.leaf(n, m)
    };
    let depth = b.rng.random_range(2..7);
    for _ in 0..depth {
        x = b.step(x);
    }
    let (n, m) = b.dims(x);
    let loss = match b.rng.random_range(0..3) {
        0 => b.tape.sum(x).unwrap(),
        1 => {
            let target = rand_tensor(&mut b.rng, n, m);
            let c = b.tape.constant(target);
            b.tape.mse(x, c).unwrap()
        }
        _ => {
            let targets: Vec<(usize, usize)> = (0..n).map(|r| (r, b.rng.random_range(0..m))).collect();
            b.tape.cross_entropy(x, &targets).unwrap()
        }
    };
    Built {
        tape: b.tape,
        loss,
        leaves: b.leaves,
    }
}

/// Max relative deviation between analytic and central-difference gradients
/// over every leaf entry.
pub fn gradcheck(seed: u64, h: f64) -> f64 {
    let built = build(seed, None);
    let grads = built.tape.backward(built.loss).unwrap();
    let values: Vec<Tensor> = built.leaves.iter().map(|&l| built.tape.value(l).clone()).collect();
    let mut worst = 0.0f64;
    for (li, &leaf) in built.leaves.iter().enumerate() {
        let analytic = grads.get_or_zeros(leaf);
        for i in 0..values[li].len() {
            let eval = |delta: f64| {
                let mut vs = values.clone();
                let mut d = vs[li].to_vec();
                d[i] += delta;
                vs[li] = Tensor::new(vs[li].shape().to_vec(), d).unwrap();
                let b = build(seed, Some(&vs));
                b.tape.value(b.loss).item()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(err);
        }
    }
    worst
}
