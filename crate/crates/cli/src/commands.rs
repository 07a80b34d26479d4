//! One function per CLI verb. Each reads its upstream artifacts from the
//! output directory, writes its own, and finishes with a manifest.

use brainalign::attribution::{attribute_brain_tr, attribute_nwp, read_records, write_records, AttributionRecord, Stimulus, Task};
use brainalign::encoder::{nested_cv, select_layers, write_alignment_csv, EncodingModel, ResponseMatrix};
use brainalign::lm::{read_checkpoint, write_checkpoint, ToyLm};
use brainalign::metrics::{analyze, brain_masking, nwp_masking, MaskSelection, MaskingRow, MetricsReport};
use brainalign::pipeline::{embed_all_layers, synthesize_responses, train_on_corpus};
use brainalign::stimulus::{read_corpus, write_corpus, Corpus, CorpusTokens, DesignMatrix, Tokenizer};
use brainalign::synth::{gen_corpus, SyntheticCorpus};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{LayerChoice, RunConfig};
use crate::error::{CliError, Context, Result};
use crate::store::{Artifact, Store};

/// Per-layer alignment and the layers chosen for attribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSelection {
    pub mean_r: Vec<f64>,
    pub selected: Vec<usize>,
}

fn load_corpus(store: &mut Store) -> Result<Corpus> {
    let path = store.require(Artifact::Corpus)?;
    read_corpus(store.reader(Artifact::Corpus)?).context(|| format!("reading {}", path.display()))
}

fn load_model(store: &mut Store, cfg: &RunConfig) -> Result<ToyLm> {
    let path = store.require(Artifact::Checkpoint)?;
    let params = read_checkpoint(&mut store.reader(Artifact::Checkpoint)?)
        .context(|| format!("reading {}", path.display()))?;
    if params.config.vocab_size != cfg.model.vocab_size {
        return Err(CliError::config(format!(
            "checkpoint vocabulary {} differs from model.vocab_size {}",
            params.config.vocab_size, cfg.model.vocab_size
        )));
    }
    ToyLm::new(params).context(|| "building model".into())
}

fn load_responses(store: &mut Store) -> Result<ResponseMatrix> {
    let r: ResponseMatrix = store.read_json(Artifact::Responses)?;
    r.validate().context(|| "checking responses".into())?;
    Ok(r)
}

fn load_encoder(store: &mut Store, layer: usize) -> Result<EncodingModel> {
    let m: EncodingModel = store.read_json(Artifact::Encoder(layer))?;
    m.validate().context(|| format!("checking encoder for layer {layer}"))?;
    Ok(m)
}

/// Layers to attribute: explicit ids, or the auto selection saved by `fit`.
fn chosen_layers(store: &mut Store, cfg: &RunConfig) -> Result<Vec<usize>> {
    match &cfg.pipeline.layers {
        LayerChoice::Ids(ids) => Ok(ids.clone()),
        LayerChoice::Auto(_) => Ok(store.read_json::<LayerSelection>(Artifact::Layers)?.selected),
    }
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let mut store = Store::open(cfg, "synth")?;
    let synth = store.stage("generate", |_| gen_corpus(&cfg.synth).context(|| "generating corpus".into()))?;
    store.stage("write", |s| {
        let mut buf = Vec::new();
        write_corpus(&synth.corpus, &mut buf).context(|| "serializing corpus".into())?;
        s.write(Artifact::Corpus, &buf)?;
        s.write_json(Artifact::Designated, &synth.designated)
    })?;
    info!("synth: {} words in {} TRs", synth.corpus.len(), synth.corpus.trs().len());
    store.finish()
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let mut store = Store::open(cfg, "train")?;
    let corpus = load_corpus(&mut store)?;
    let tokenizer = Tokenizer::new(cfg.model.vocab_size).context(|| "building tokenizer".into())?;
    let (model, report) = store.stage("train", |_| {
        train_on_corpus(&corpus, &tokenizer, &cfg.model, &cfg.train).context(|| "training".into())
    })?;
    store.stage("write", |s| {
        let mut buf = Vec::new();
        write_checkpoint(model.params(), &mut buf).context(|| "serializing checkpoint".into())?;
        s.write(Artifact::Checkpoint, &buf)?;
        s.write_json(Artifact::TrainReport, &report)
    })?;
    store.finish()
}

pub fn cmd_embed(cfg: &RunConfig) -> Result<()> {
    let mut store = Store::open(cfg, "embed")?;
    let corpus = load_corpus(&mut store)?;
    let model = load_model(&mut store, cfg)?;
    let tokenizer = Tokenizer::new(cfg.model.vocab_size).context(|| "building tokenizer".into())?;
    let tokens = CorpusTokens::new(&corpus, &tokenizer);
    let (embs, designs) = store.stage("embed", |_| {
        embed_all_layers(&model, &corpus, &tokens, cfg.pipeline.context_len, cfg.pipeline.delays)
            .context(|| "extracting embeddings".into())
    })?;
    store.stage("write designs", |s| {
        designs.iter().try_for_each(|d| s.write_json(Artifact::Design(d.layer), d))
    })?;
    if cfg.paths.responses.is_none() {
        // synthetic responses depend on the model's embeddings, so they are made here
        let designated: Vec<usize> = if cfg.synth.planted || store.exists(Artifact::Designated) {
            store.read_json(Artifact::Designated)?
        } else {
            Vec::new()
        };
        let synth = SyntheticCorpus { corpus, designated };
        let (responses, _) = store.stage("responses", |_| {
            synthesize_responses(&cfg.synth, &synth, &embs, &designs, &cfg.pipeline.subject)
                .context(|| "synthesizing responses".into())
        })?;
        store.write_json(Artifact::Responses, &responses)?;
    }
    store.finish()
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<()> {
    let mut store = Store::open(cfg, "fit")?;
    let responses = load_responses(&mut store)?;
    let designs: Vec<DesignMatrix> = (0..cfg.model.n_layers)
        .map(|l| store.read_json(Artifact::Design(l)))
        .collect::<Result<_>>()?;
    let models: Vec<EncodingModel> = store.stage("nested cv", |_| {
        designs
            .iter()
            .map(|d| nested_cv(d, &responses, &cfg.cv).context(|| format!("fitting layer {}", d.layer)))
            .collect()
    })?;
    let mean_r: Vec<f64> = models.iter().map(|m| m.mean_r).collect();
    let selected = select_layers(&mean_r).context(|| "selecting layers".into())?.to_vec();
    info!("fit: mean r per layer {mean_r:?}, selected {selected:?}");
    store.stage("write", |s| {
        for m in &models {
            s.write_json(Artifact::Encoder(m.layer), m)?;
        }
        let mut csv = Vec::new();
        write_alignment_csv(&models.iter().collect::<Vec<_>>(), &mut csv).context(|| "alignment table".into())?;
        s.write(Artifact::Alignment, &csv)?;
        s.write_json(Artifact::Layers, &LayerSelection { mean_r, selected })
    })?;
    store.finish()
}

/// TRs with a design row whose delayed words are followed by a word to predict.
fn attributable_trs(corpus: &Corpus, encoder: &EncodingModel, stride: usize) -> Vec<usize> {
    encoder
        .tr_rows
        .iter()
        .copied()
        .filter(|&tr| corpus.trs()[tr].words.end < corpus.len())
        .step_by(stride)
        .collect()
}

pub fn cmd_attribute(cfg: &RunConfig) -> Result<()> {
    let mut store = Store::open(cfg, "attribute")?;
    let corpus = load_corpus(&mut store)?;
    let model = load_model(&mut store, cfg)?;
    let responses = load_responses(&mut store)?;
    let layers = chosen_layers(&mut store, cfg)?;
    let encoders: Vec<EncodingModel> = layers.iter().map(|&l| load_encoder(&mut store, l)).collect::<Result<_>>()?;
    let tokenizer = Tokenizer::new(cfg.model.vocab_size).context(|| "building tokenizer".into())?;
    let tokens = CorpusTokens::new(&corpus, &tokenizer);
    let stim = Stimulus {
        corpus: &corpus,
        tokens: &tokens,
        context_len: cfg.pipeline.context_len,
    };
    let method = cfg.method();
    let trs = attributable_trs(&corpus, &encoders[0], cfg.pipeline.tr_stride);
    let records: Vec<AttributionRecord> = store.stage("attribute", |_| {
        let per_tr: Vec<Vec<AttributionRecord>> = trs
            .par_iter()
            .map(|&tr| {
                let mut out = vec![attribute_nwp(&model, stim, cfg.pipeline.delays, tr, method)
                    .context(|| format!("NWP attribution for TR {tr}"))?];
                for enc in &encoders {
                    out.push(
                        attribute_brain_tr(&model, stim, enc, &responses, tr, method)
                            .context(|| format!("brain attribution for TR {tr}, layer {}", enc.layer))?,
                    );
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        Ok(per_tr.into_iter().flatten().collect())
    })?;
    info!("attribute: {} records over {} TRs, layers {layers:?}", records.len(), trs.len());
    let mut buf = Vec::new();
    write_records(&records, &mut buf).context(|| "serializing records".into())?;
    store.write(Artifact::Attributions, &buf)?;
    store.finish()
}

fn load_records(store: &mut Store) -> Result<Vec<AttributionRecord>> {
    let path = store.require(Artifact::Attributions)?;
    let records = read_records(store.reader(Artifact::Attributions)?).context(|| format!("reading {}", path.display()))?;
    if records.is_empty() {
        return Err(CliError::Dependency {
            path,
            producer: Artifact::Attributions.producer(),
        });
    }
    Ok(records)
}

pub fn cmd_analyze(cfg: &RunConfig) -> Result<()> {
    let mut store = Store::open(cfg, "analyze")?;
    let records = load_records(&mut store)?;
    let corpus = load_corpus(&mut store)?;
    let report = store.stage("analyze", |_| {
        analyze(&records, &corpus, &cfg.analysis).context(|| "computing metrics".into())
    })?;
    store.write_json(Artifact::Metrics, &report)?;
    store.finish()
}

pub fn cmd_mask(cfg: &RunConfig) -> Result<()> {
    let mut store = Store::open(cfg, "mask")?;
    let method = cfg.method();
    let records: Vec<AttributionRecord> =
        load_records(&mut store)?.into_iter().filter(|r| r.target.method == method).collect();
    if records.is_empty() {
        return Err(CliError::Dependency {
            path: store.input_path(Artifact::Attributions),
            producer: Artifact::Attributions.producer(),
        });
    }
    let corpus = load_corpus(&mut store)?;
    let model = load_model(&mut store, cfg)?;
    let responses = load_responses(&mut store)?;
    let tokenizer = Tokenizer::new(cfg.model.vocab_size).context(|| "building tokenizer".into())?;
    let tokens = CorpusTokens::new(&corpus, &tokenizer);
    let stim = Stimulus {
        corpus: &corpus,
        tokens: &tokens,
        context_len: cfg.pipeline.context_len,
    };
    let nwp: Vec<AttributionRecord> = records.iter().filter(|r| r.target.task == Task::Nwp).cloned().collect();
    let mut layers: Vec<usize> = records.iter().filter_map(|r| r.target.layer).collect();
    layers.sort_unstable();
    layers.dedup();
    let encoders: Vec<EncodingModel> = layers.iter().map(|&l| load_encoder(&mut store, l)).collect::<Result<_>>()?;
    let t = cfg.masking.threshold;
    let mass = cfg.analysis.mass;
    let rows = store.stage("mask", |_| {
        let mut rows = Vec::new();
        for &seed in &cfg.masking.seeds {
            for sel in [MaskSelection::Top, MaskSelection::Random] {
                if !nwp.is_empty() {
                    let m = nwp_masking(&model, stim, &tokenizer, cfg.pipeline.delays, &nwp, t, sel, mass, seed)
                        .context(|| "NWP masking".into())?;
                    rows.push(MaskingRow::from(&m));
                }
                for enc in &encoders {
                    let brain: Vec<AttributionRecord> =
                        records.iter().filter(|r| r.target.layer == Some(enc.layer)).cloned().collect();
                    let m = brain_masking(&model, stim, &tokenizer, enc, &responses, &brain, t, sel, mass, seed)
                        .context(|| format!("brain masking for layer {}", enc.layer))?;
                    rows.push(MaskingRow::from(&m));
                }
            }
        }
        Ok(rows)
    })?;
    store.write_json(Artifact::Masking, &rows)?;
    store.finish()
}

/// Writes the seven report tables.
pub fn cmd_report(cfg: &RunConfig) -> Result<()> {
    let mut store = Store::open(cfg, "report")?;
    let mut report: MetricsReport = store.read_json(Artifact::Metrics)?;
    report.masking = store.read_json(Artifact::Masking)?;
    store.stage("tables", |s| {
        for (name, bytes) in report.tables() {
            s.write_bytes(name, &bytes)?;
        }
        Ok(())
    })?;
    store.finish()
}
