mod common;

use std::collections::BTreeMap;

use brainalign::attribution::{
    attribute_brain_tr, attribute_nwp, baseline_loss, token_scores, word_scores, BrainObjective, Method, NwpObjective,
    Objective, Stimulus,
};
use brainalign::autodiff::{NodeId, Tape, Tensor};
use brainalign::encoder::{design_to_matrix, Head};
use brainalign::lm::{ContextModel, Depth, ForwardNodes, ModelConfig, ModelParams, TokenId, ToyLm};
use brainalign::stimulus::{Context, CorpusTokens, Tokenizer};
use brainalign::synth::{gen_corpus, SyntheticCorpus, SyntheticSpec};
use common::{Fixture, FixtureConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Token embeddings passed straight through as every layer's state.
struct IdentityModel {
    table: Tensor,
    layers: usize,
}

impl ContextModel for IdentityModel {
    fn hidden_size(&self) -> usize {
        self.table.cols()
    }
    fn n_layers(&self) -> usize {
        self.layers
    }
    fn vocab_size(&self) -> usize {
        self.table.rows()
    }
    fn max_positions(&self) -> usize {
        4096
    }
    fn token_embeddings(&self, tokens: &[TokenId]) -> brainalign::Result<Tensor> {
        let rows: Vec<Vec<f64>> = tokens.iter().map(|&t| self.table.row(t as usize).to_vec()).collect();
        Tensor::from_rows(&rows)
    }
    fn forward_embeddings(&self, tape: &mut Tape, x: NodeId, depth: Depth) -> brainalign::Result<ForwardNodes> {
        let logits = match depth {
            Depth::Logits => {
                let t = tape.constant(self.table.clone());
                Some(tape.matmul_nt(x, t)?)
            }
            Depth::Layer(_) => None,
        };
        Ok(ForwardNodes {
            layers: vec![x; self.layers],
            logits,
        })
    }
}

fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

struct Small {
    synth: SyntheticCorpus,
    tokens: CorpusTokens,
}

impl Small {
    fn new() -> Self {
        let synth = gen_corpus(&SyntheticSpec {
            n_words: 96,
            seed: 4,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let tokenizer = Tokenizer::new(512).unwrap();
        let tokens = CorpusTokens::new(&synth.corpus, &tokenizer);
        Small { synth, tokens }
    }

    fn stim(&self, context_len: usize) -> Stimulus<'_> {
        Stimulus {
            corpus: &self.synth.corpus,
            tokens: &self.tokens,
            context_len,
        }
    }
}

fn identity(h: usize, seed: u64) -> IdentityModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    IdentityModel {
        table: Tensor::matrix(512, h, random(&mut rng, 512 * h)).unwrap(),
        layers: 1,
    }
}

fn random_heads(delays: usize, h: usize, v: usize, seed: u64) -> (Vec<Head>, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heads = (0..delays)
        .map(|d| Head {
            delay: d,
            hidden: h,
            voxels: v,
            weights: random(&mut rng, h * v),
        })
        .collect();
    (heads, random(&mut rng, v), random(&mut rng, v))
}

/// Word embedding under the identity model: mean of the word's own tokens.
fn identity_word_embedding(model: &IdentityModel, tokens: &CorpusTokens, w: usize) -> Vec<f64> {
    let ids = tokens.word(w);
    let h = model.hidden_size();
    let mut e = vec![0.0; h];
    for &t in ids {
        e.iter_mut().zip(model.table.row(t as usize)).for_each(|(a, b)| *a += b / ids.len() as f64);
    }
    e
}

fn apply_head(head: &Head, e: &[f64], acc: &mut [f64]) {
    for (j, x) in e.iter().enumerate() {
        for (v, a) in acc.iter_mut().enumerate() {
            *a += x * head.weights[j * head.voxels + v];
        }
    }
}

fn head_times(head: &Head, r: &[f64]) -> Vec<f64> {
    (0..head.hidden)
        .map(|j| (0..head.voxels).map(|v| head.weights[j * head.voxels + v] * r[v]).sum())
        .collect()
}

fn scores_of(obj: &dyn Objective, method: Method) -> BTreeMap<usize, f64> {
    word_scores(obj.owners(), &token_scores(obj, method).unwrap()).unwrap()
}

#[test]
fn identity_model_gxi_matches_closed_form() {
    let small = Small::new();
    let model = identity(6, 1);
    let stim = small.stim(6);
    let (h, v, delays) = (6, 5, 3);
    for tr in [5usize, 9, 14] {
        let words = stim.delayed_words(tr, delays).unwrap();
        let (heads, bias, target) = random_heads(delays, h, v, tr as u64);
        let obj = BrainObjective::from_parts(&model, stim, 0, words.clone(), heads.clone(), bias.clone(), target.clone())
            .unwrap();
        let got = scores_of(&obj, Method::Gxi);

        let mut pred = bias.clone();
        for (head, ws) in heads.iter().zip(&words) {
            let mut e = vec![0.0; h];
            for &w in ws {
                let ew = identity_word_embedding(&model, &small.tokens, w);
                e.iter_mut().zip(&ew).for_each(|(a, b)| *a += b / ws.len() as f64);
            }
            apply_head(head, &e, &mut pred);
        }
        let r: Vec<f64> = pred.iter().zip(&target).map(|(p, y)| 2.0 * (p - y) / v as f64).collect();
        let mut expected: BTreeMap<usize, f64> = BTreeMap::new();
        for (head, ws) in heads.iter().zip(&words) {
            let g = head_times(head, &r);
            for &w in ws {
                let ew = identity_word_embedding(&model, &small.tokens, w);
                let s: f64 = ew.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() / ws.len() as f64;
                *expected.entry(w).or_insert(0.0) += s;
            }
        }
        for (w, s) in &got {
            let e = expected.get(w).copied().unwrap_or(0.0);
            assert!((s - e).abs() <= 1e-10 * e.abs().max(1e-12) + 1e-15, "TR {tr} word {w}: {s} vs {e}");
        }
        for w in expected.keys() {
            assert!(got.contains_key(w));
        }
    }
}

/// `F = sum of voxel predictions`, linear in the token embeddings.
struct LinearHead {
    inputs: Vec<Tensor>,
    owners: Vec<Vec<usize>>,
    /// Constant gradient per input.
    grads: Vec<Tensor>,
    offset: f64,
}

impl LinearHead {
    fn new(model: &IdentityModel, stim: Stimulus<'_>, words: &[Vec<usize>], heads: &[Head], bias: &[f64]) -> Self {
        let mut unique: Vec<usize> = words.iter().flatten().copied().collect();
        unique.sort_unstable();
        unique.dedup();
        let h = model.hidden_size();
        let mut inputs = Vec::new();
        let mut owners = Vec::new();
        let mut grads = Vec::new();
        for &u in &unique {
            let ctx = stim.tokens.context(&Context::ending_at(u, stim.context_len)).unwrap();
            inputs.push(model.token_embeddings(&ctx.tokens).unwrap());
            owners.push(ctx.token_owners());
            let mut g_word = vec![0.0; h];
            for (head, ws) in heads.iter().zip(words) {
                if ws.contains(&u) {
                    let g = head_times(head, &vec![1.0; head.voxels]);
                    g_word.iter_mut().zip(&g).for_each(|(a, b)| *a += b / ws.len() as f64);
                }
            }
            let span = ctx.final_span().tokens.clone();
            let mut g = vec![0.0; ctx.tokens.len() * h];
            for r in span.clone() {
                for j in 0..h {
                    g[r * h + j] = g_word[j] / span.len() as f64;
                }
            }
            grads.push(Tensor::matrix(ctx.tokens.len(), h, g).unwrap());
        }
        LinearHead {
            inputs,
            owners,
            grads,
            offset: bias.iter().sum(),
        }
    }
}

impl Objective for LinearHead {
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn owners(&self) -> &[Vec<usize>] {
        &self.owners
    }
    fn evaluate(&self, xs: &[Tensor]) -> brainalign::Result<(f64, Vec<Tensor>)> {
        let f = self.offset
            + xs.iter()
                .zip(&self.grads)
                .map(|(x, g)| x.data().iter().zip(g.data()).map(|(a, b)| a * b).sum::<f64>())
                .sum::<f64>();
        Ok((f, self.grads.clone()))
    }
}

#[test]
fn linear_head_gxi_equals_ig_for_any_step_count() {
    let small = Small::new();
    let model = identity(6, 2);
    let stim = small.stim(6);
    let words = stim.delayed_words(8, 4).unwrap();
    let (heads, bias, _) = random_heads(4, 6, 3, 8);
    let obj = LinearHead::new(&model, stim, &words, &heads, &bias);
    let gxi = token_scores(&obj, Method::Gxi).unwrap();
    for m in [1, 3, 20, 200] {
        let ig = token_scores(&obj, Method::Ig { steps: m }).unwrap();
        let dev = gxi
            .per_input
            .iter()
            .flatten()
            .zip(ig.per_input.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(dev < 1e-10, "m={m}: deviation {dev:e}");
    }
    // Euler identity: scores sum to F(x) - F(0)
    let total: f64 = gxi.per_input.iter().flatten().sum();
    let diff = gxi.loss - baseline_loss(&obj).unwrap();
    assert!((total - diff).abs() < 1e-10 * diff.abs().max(1.0));
}

/// `F = sum of all input entries`.
struct SumAll(Vec<Tensor>, Vec<Vec<usize>>);

impl Objective for SumAll {
    fn inputs(&self) -> &[Tensor] {
        &self.0
    }
    fn owners(&self) -> &[Vec<usize>] {
        &self.1
    }
    fn evaluate(&self, xs: &[Tensor]) -> brainalign::Result<(f64, Vec<Tensor>)> {
        let f = xs.iter().map(|x| x.sum()).sum();
        Ok((f, xs.iter().map(|x| x.map(|_| 1.0)).collect()))
    }
}

#[test]
fn unit_gradient_scores_are_row_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::matrix(4, 5, random(&mut rng, 20)).unwrap();
    let obj = SumAll(vec![x.clone()], vec![vec![0, 0, 1, 2]]);
    for method in [Method::Gxi, Method::Ig { steps: 7 }] {
        let s = token_scores(&obj, method).unwrap();
        for (r, got) in s.per_input[0].iter().enumerate() {
            let expect: f64 = x.row(r).iter().sum();
            assert!((got - expect).abs() < 1e-12);
        }
        let words = word_scores(obj.owners(), &s).unwrap();
        assert_eq!(words[&0], s.per_input[0][0] + s.per_input[0][1]);
    }
}

/// Multiplies another objective's loss by a constant.
struct Scaled<'a>(&'a dyn Objective, f64);

impl Objective for Scaled<'_> {
    fn inputs(&self) -> &[Tensor] {
        self.0.inputs()
    }
    fn owners(&self) -> &[Vec<usize>] {
        self.0.owners()
    }
    fn evaluate(&self, xs: &[Tensor]) -> brainalign::Result<(f64, Vec<Tensor>)> {
        let (l, g) = self.0.evaluate(xs)?;
        Ok((l * self.1, g.iter().map(|t| t.scale(self.1)).collect()))
    }
}

fn tiny_lm(seed: u64) -> ToyLm {
    let cfg = ModelConfig {
        n_layers: 3,
        hidden_size: 8,
        n_heads: 2,
        max_positions: 128,
        seed,
        ..ModelConfig::default()
    };
    ToyLm::new(ModelParams::init(&cfg).unwrap()).unwrap()
}

#[test]
fn scaling_the_loss_scales_every_score() {
    let small = Small::new();
    let model = tiny_lm(1);
    let obj = NwpObjective::new(&model, small.stim(8), 4, 10).unwrap();
    let base = token_scores(&obj, Method::Gxi).unwrap();
    let doubled = token_scores(&Scaled(&obj, 2.0), Method::Gxi).unwrap();
    for (a, b) in base.per_input[0].iter().zip(&doubled.per_input[0]) {
        assert_eq!(2.0 * a, *b);
    }
}

#[test]
fn zero_embedding_table_gives_zero_scores() {
    let small = Small::new();
    let mut params = tiny_lm(2).into_params();
    params.weights.token_embedding = params.weights.token_embedding.map(|_| 0.0);
    let model = ToyLm::new(params).unwrap();
    let stim = small.stim(8);
    let obj = NwpObjective::new(&model, stim, 4, 10).unwrap();
    for method in [Method::Gxi, Method::Ig { steps: 5 }] {
        assert!(scores_of(&obj, method).values().all(|&s| s == 0.0));
    }
    let (heads, bias, target) = random_heads(4, 8, 3, 0);
    let brain =
        BrainObjective::from_parts(&model, stim, 1, stim.delayed_words(10, 4).unwrap(), heads, bias, target).unwrap();
    assert!(scores_of(&brain, Method::Gxi).values().all(|&s| s == 0.0));
}

#[test]
fn zeroed_head_gives_uniform_cross_entropy() {
    let small = Small::new();
    let mut params = tiny_lm(3).into_params();
    params.weights.lm_head = params.weights.lm_head.map(|_| 0.0);
    let model = ToyLm::new(params).unwrap();
    let obj = NwpObjective::new(&model, small.stim(8), 4, 10).unwrap();
    let (loss, _) = obj.evaluate(obj.inputs()).unwrap();
    assert!((loss - (512f64).ln()).abs() < 1e-12);
}

#[test]
fn single_token_target_loss_is_that_tokens_cross_entropy() {
    let small = Small::new();
    let model = tiny_lm(4);
    let target = (20..small.tokens.len()).find(|&w| small.tokens.word(w).len() == 1).unwrap();
    let obj = NwpObjective::from_span(&model, &small.tokens, target - 6, target - 1).unwrap();
    let (loss, _) = obj.evaluate(obj.inputs()).unwrap();
    let ctx = small.tokens.span(target - 6..target).unwrap();
    let (_, logits) = model.forward(&ctx.tokens).unwrap();
    let last = logits.row(logits.rows() - 1);
    let max = last.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + last.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let expect = lse - last[small.tokens.word(target)[0] as usize];
    assert!((loss - expect).abs() < 1e-10, "{loss} vs {expect}");
}

#[test]
fn baseline_input_gets_zero_integrated_gradients() {
    let obj = SumAll(vec![Tensor::zeros(3, 4)], vec![vec![0, 1, 2]]);
    let s = token_scores(&obj, Method::Ig { steps: 20 }).unwrap();
    assert!(s.per_input[0].iter().all(|&v| v == 0.0));
}

fn completeness_error(obj: &dyn Objective, steps: usize) -> f64 {
    let s = token_scores(obj, Method::Ig { steps }).unwrap();
    let total: f64 = s.per_input.iter().flatten().sum();
    let diff = s.loss - baseline_loss(obj).unwrap();
    (total - diff).abs() / diff.abs()
}

#[test]
fn integrated_gradients_converge_to_completeness_on_the_toy_model() {
    let f = Fixture::build(FixtureConfig::tiny(false, 3));
    let stim = f.stimulus();
    let enc = &f.encoders[1];
    let trs: Vec<usize> = enc.tr_rows.iter().copied().step_by(13).take(4).collect();
    let mut by_m = [0.0; 4];
    for &tr in &trs {
        let brain = BrainObjective::new(&f.model, stim, enc, &f.responses, tr).unwrap();
        let nwp = NwpObjective::new(&f.model, stim, 4, tr).unwrap();
        for obj in [&brain as &dyn Objective, &nwp] {
            for (i, m) in [5, 20, 80, 200].into_iter().enumerate() {
                by_m[i] += completeness_error(obj, m);
            }
        }
    }
    // right-endpoint sums converge at rate 1/m
    assert!(by_m.windows(2).all(|w| w[1] <= w[0]), "mean errors {by_m:?}");
    assert!(by_m[3] < by_m[1] / 4.0, "mean errors {by_m:?}");
}

/// `F = sum of squared entries`.
struct SumSquares(Vec<Tensor>, Vec<Vec<usize>>);

impl Objective for SumSquares {
    fn inputs(&self) -> &[Tensor] {
        &self.0
    }
    fn owners(&self) -> &[Vec<usize>] {
        &self.1
    }
    fn evaluate(&self, xs: &[Tensor]) -> brainalign::Result<(f64, Vec<Tensor>)> {
        let f = xs.iter().map(|x| x.data().iter().map(|v| v * v).sum::<f64>()).sum();
        Ok((f, xs.iter().map(|x| x.scale(2.0)).collect()))
    }
}

#[test]
fn integrated_gradients_use_right_endpoints() {
    // sum_k (1/m) 2 (k/m) x^2 = x^2 (m + 1) / m
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = Tensor::matrix(3, 2, random(&mut rng, 6)).unwrap();
    let obj = SumSquares(vec![x.clone()], vec![vec![0, 1, 2]]);
    for m in [1usize, 4, 20] {
        let s = token_scores(&obj, Method::Ig { steps: m }).unwrap();
        for (r, got) in s.per_input[0].iter().enumerate() {
            let sq: f64 = x.row(r).iter().map(|v| v * v).sum();
            let expect = sq * (m + 1) as f64 / m as f64;
            assert!((got - expect).abs() < 1e-12, "m={m} row {r}: {got} vs {expect}");
        }
    }
}

#[test]
fn brain_loss_matches_encoder_prediction() {
    let f = Fixture::build(FixtureConfig::tiny(false, 4));
    let stim = f.stimulus();
    for enc in &f.encoders {
        let design = f.designs.iter().find(|d| d.layer == enc.layer).unwrap();
        let x = design_to_matrix(design);
        for &tr in enc.tr_rows.iter().step_by(9) {
            let rec = attribute_brain_tr(&f.model, stim, enc, &f.responses, tr, Method::Gxi).unwrap();
            let row = design.row_of_tr(tr).unwrap();
            let pred = enc.fold_for_tr(tr).unwrap().predict_row(x.row(row).transpose().as_slice());
            let y = f.responses.row_of_tr(tr).unwrap();
            let mse = pred.iter().zip(y).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / y.len() as f64;
            assert!((rec.loss - mse).abs() < 1e-10, "layer {} TR {tr}: {} vs {mse}", enc.layer, rec.loss);
        }
    }
}

#[test]
fn words_outside_the_extended_context_do_not_matter() {
    let f = Fixture::build(FixtureConfig::tiny(false, 5));
    let stim = f.stimulus();
    let enc = &f.encoders[0];
    let tr = enc.tr_rows[enc.tr_rows.len() / 2];
    let brain = attribute_brain_tr(&f.model, stim, enc, &f.responses, tr, Method::Gxi).unwrap();
    let nwp = attribute_nwp(&f.model, stim, 4, tr, Method::Gxi).unwrap();
    let first = brain.word_index[0];
    let last = *brain.word_index.last().unwrap();
    assert_eq!(nwp.word_index, (first..=last).collect::<Vec<_>>());

    let outside = [first - 3, last + 5];
    let replaced = f.tokens.with_replacements(
        &f.tokenizer,
        &outside.iter().map(|&w| (w, "hippogriff".to_string())).collect::<Vec<_>>(),
    );
    let stim2 = Stimulus {
        tokens: &replaced,
        ..stim
    };
    let brain2 = attribute_brain_tr(&f.model, stim2, enc, &f.responses, tr, Method::Gxi).unwrap();
    assert_eq!(brain, brain2);
    let nwp2 = attribute_nwp(&f.model, stim2, 4, tr, Method::Gxi).unwrap();
    assert!(outside.iter().all(|w| nwp2.score_of(*w).is_none()));
    assert_eq!(nwp.score, nwp2.score);
}

#[test]
fn overlong_context_reports_needed_truncation() {
    let small = Small::new();
    let model = tiny_lm(5);
    let err = NwpObjective::new(&model, small.stim(90), 4, 22).err().unwrap();
    assert!(err.to_string().contains("truncate by"), "{err}");
}
