mod common;

use brainalign::attribution::{BrainObjective, NwpObjective};
use brainalign::encoder::{design_to_matrix, fit_ridge, nested_cv, CvOptions};
use brainalign::pipeline::synthesize_responses;
use brainalign::stimulus::Category;
use brainalign::synth::{brute_force_word_importance, gen_corpus, SyntheticSpec, SIGNAL_WORDS};
use common::{Fixture, FixtureConfig};

#[test]
fn corpus_is_seeded_and_timed() {
    let spec = SyntheticSpec::default();
    let a = gen_corpus(&spec).unwrap();
    assert_eq!(a, gen_corpus(&spec).unwrap());
    assert_ne!(a.corpus, gen_corpus(&SyntheticSpec { seed: 1, ..spec.clone() }).unwrap().corpus);
    assert_eq!(a.corpus.len(), 400);
    assert_eq!(a.corpus.trs().len(), 100);
    let vocab = a.corpus.vocab();
    for w in a.corpus.words() {
        for c in Category::ALL {
            assert!(w.annotations.get(c).iter().all(|&id| (id as usize) < vocab.len_of(c)));
        }
    }
}

#[test]
fn planted_corpus_has_one_signal_word_per_tr() {
    let s = gen_corpus(&SyntheticSpec {
        planted: true,
        ..SyntheticSpec::default()
    })
    .unwrap();
    for tr in s.corpus.trs() {
        let signal: Vec<usize> = tr.words.clone().filter(|&w| SIGNAL_WORDS.contains(&s.corpus.words()[w].surface.as_str())).collect();
        assert_eq!(signal.len(), 1);
        assert!(s.designated.binary_search(&signal[0]).is_ok());
    }
    assert_eq!(s.designated.len(), s.corpus.trs().len());
}

#[test]
fn spec_lists_every_violation() {
    let bad = SyntheticSpec {
        delays: 0,
        runs: 0,
        voxels: 0,
        noise_std: -1.0,
        ..SyntheticSpec::default()
    };
    assert_eq!(bad.violations().len(), 4);
    let short = SyntheticSpec {
        n_words: 20,
        ..SyntheticSpec::default()
    };
    assert!(gen_corpus(&short).is_err());
}

#[test]
fn noiseless_map_is_recovered_end_to_end() {
    let mut cfg = FixtureConfig::tiny(false, 8);
    cfg.spec.n_words = 900;
    cfg.spec.noise_std = 0.0;
    let f = Fixture::build(cfg);
    let (y, w_star) = synthesize_responses(&f.cfg.spec, &f.synth, &f.embeddings, &f.designs, "s0").unwrap();
    let design = &f.designs[f.cfg.spec.source_layer];
    let x = design_to_matrix(design);
    let w = fit_ridge(&x, &y.aligned_to(design).unwrap(), 0.0).unwrap();
    let rel = (&w - &w_star).norm() / w_star.norm();
    assert!(rel < 1e-6, "relative error {rel:e}");
    let enc = f.encoder(0);
    assert!(enc.mean_r > 0.99, "held-out r {}", enc.mean_r);
}

#[test]
fn overwhelming_noise_destroys_held_out_r() {
    let mut cfg = FixtureConfig::tiny(false, 9);
    cfg.spec.n_words = 900;
    cfg.spec.noise_std = 100.0;
    let f = Fixture::build(cfg);
    for enc in &f.encoders {
        assert!(enc.mean_r.abs() < 0.1, "layer {}: r {}", enc.layer, enc.mean_r);
    }
}

#[test]
fn planted_map_only_uses_the_current_tr() {
    let f = Fixture::build(FixtureConfig::tiny(true, 10));
    let (_, w) = synthesize_responses(&f.cfg.spec, &f.synth, &f.embeddings, &f.designs, "s0").unwrap();
    let h = f.cfg.model.hidden_size;
    assert!(w.rows(h, w.nrows() - h).iter().all(|&v| v == 0.0));
    assert!(w.rows(0, h).iter().any(|&v| v != 0.0));
    let again = nested_cv(&f.designs[0], &f.responses, &CvOptions::default()).unwrap();
    assert_eq!(&again, f.encoder(0));
}

#[test]
fn leave_one_out_deltas_are_local_and_deterministic() {
    let f = Fixture::build(FixtureConfig::tiny(true, 11));
    let stim = f.stimulus();
    let enc = f.encoder(0);
    let tr = enc.tr_rows[5];
    let brain = BrainObjective::new(&f.model, stim, enc, &f.responses, tr).unwrap();
    let a = brute_force_word_importance(&brain).unwrap();
    assert_eq!(a, brute_force_word_importance(&brain).unwrap());
    let last = brain.last_word();
    let first = last + 1 - (a.len());
    assert_eq!(a.keys().copied().collect::<Vec<_>>(), (first..=last).collect::<Vec<_>>());

    let nwp = NwpObjective::new(&f.model, stim, 4, tr).unwrap();
    let b = brute_force_word_importance(&nwp).unwrap();
    assert_eq!(b.keys().copied().collect::<Vec<_>>(), (first..=last).collect::<Vec<_>>());
}
