use std::collections::BTreeMap;
use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};

use super::features::feature_share;
use super::masking::MaskingResult;
use super::stats::{benjamini_hochberg, paired_t_test};
use super::topset::{
    center_of_mass, iou, positional_histogram, random_baseline_iou, spread_auc, spread_counts, top_set, ComMode, Mass,
    DEFAULT_THRESHOLDS,
};
use crate::attribution::{AttributionRecord, Task};
use crate::error::{invalid, Result};
use crate::stimulus::{Category, Corpus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisOptions {
    pub thresholds: Vec<f64>,
    pub mass: Mass,
    pub com: ComMode,
    /// Added to every distance in CoM; 0 puts the most recent word at 0.
    pub com_origin: usize,
    pub histogram_threshold: f64,
    pub bin_width: usize,
    pub feature_threshold: f64,
    pub baseline_draws: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            mass: Mass::Absolute,
            com: ComMode::default(),
            com_origin: 0,
            histogram_threshold: 60.0,
            bin_width: 16,
            feature_threshold: 60.0,
            baseline_draws: 100,
            alpha: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouRow {
    pub method: String,
    pub layer: usize,
    pub threshold: f64,
    pub iou: f64,
    pub random_iou: f64,
    pub n_trs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComRow {
    pub task: Task,
    pub method: String,
    pub layer: Option<usize>,
    pub com: Option<f64>,
    pub n_trs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadRow {
    pub task: Task,
    pub method: String,
    pub layer: Option<usize>,
    pub thresholds: Vec<f64>,
    pub mean_words: Vec<f64>,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionRow {
    pub task: Task,
    pub method: String,
    pub layer: Option<usize>,
    pub bin_width: usize,
    pub proportions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub method: String,
    pub layer: usize,
    pub category: Category,
    pub ba_only: f64,
    pub nwp_only: f64,
    pub both: f64,
    pub n_contexts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub comparison: String,
    pub n: usize,
    pub mean_diff: f64,
    pub t: f64,
    pub p: f64,
    pub p_adjusted: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskingRow {
    pub task: Task,
    pub layer: Option<usize>,
    pub selection: String,
    pub threshold: f64,
    pub seed: u64,
    pub base: f64,
    pub masked: f64,
    pub delta: f64,
}

impl From<&MaskingResult> for MaskingRow {
    fn from(m: &MaskingResult) -> Self {
        Self {
            task: m.task,
            layer: m.layer,
            selection: m.selection.label().into(),
            threshold: m.threshold,
            seed: m.seed,
            base: m.base,
            masked: m.masked,
            delta: m.delta,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub iou: Vec<IouRow>,
    pub com: Vec<ComRow>,
    pub spread: Vec<SpreadRow>,
    pub positions: Vec<PositionRow>,
    pub features: Vec<FeatureRow>,
    pub stats: Vec<StatRow>,
    pub masking: Vec<MaskingRow>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Records for one method, grouped as brain-per-layer and NWP.
struct Grouped<'a> {
    brain: BTreeMap<usize, BTreeMap<usize, &'a AttributionRecord>>,
    nwp: BTreeMap<usize, &'a AttributionRecord>,
}

fn group<'a>(records: &[&'a AttributionRecord]) -> Grouped<'a> {
    let mut g = Grouped {
        brain: BTreeMap::new(),
        nwp: BTreeMap::new(),
    };
    for r in records {
        match (r.target.task, r.target.layer) {
            (Task::Brain, Some(l)) => {
                g.brain.entry(l).or_default().insert(r.target.tr, *r);
            }
            _ => {
                g.nwp.insert(r.target.tr, *r);
            }
        }
    }
    g
}

struct TaskStats {
    com: Vec<Option<f64>>,
    auc: Vec<f64>,
}

fn per_record_stats(records: &[&AttributionRecord], opts: &AnalysisOptions) -> Result<TaskStats> {
    let mut com = Vec::new();
    let mut auc = Vec::new();
    for r in records {
        com.push(center_of_mass(r, opts.com, opts.mass, opts.com_origin)?);
        let counts: Vec<f64> = spread_counts(r, &opts.thresholds, opts.mass)?.into_iter().map(|c| c as f64).collect();
        auc.push(spread_auc(&opts.thresholds, &counts));
    }
    Ok(TaskStats { com, auc })
}

/// Computes every attribution-level table. Records may mix methods; masking
/// rows are supplied separately.
pub fn analyze(records: &[AttributionRecord], corpus: &Corpus, opts: &AnalysisOptions) -> Result<MetricsReport> {
    if opts.thresholds.is_empty() {
        return Err(invalid("threshold list is empty"));
    }
    let mut by_method: BTreeMap<String, Vec<&AttributionRecord>> = BTreeMap::new();
    for r in records {
        by_method.entry(r.target.method.label().to_string()).or_default().push(r);
    }
    let mut report = MetricsReport::default();
    let mut tests: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();

    for (method, recs) in &by_method {
        let g = group(recs);
        let nwp_list: Vec<&AttributionRecord> = g.nwp.values().copied().collect();
        let nwp_stats = per_record_stats(&nwp_list, opts)?;
        let mut task_sets: Vec<(Task, Option<usize>, Vec<&AttributionRecord>)> =
            g.brain.iter().map(|(l, m)| (Task::Brain, Some(*l), m.values().copied().collect())).collect();
        if !nwp_list.is_empty() {
            task_sets.push((Task::Nwp, None, nwp_list.clone()));
        }

        for (task, layer, list) in &task_sets {
            let st = per_record_stats(list, opts)?;
            let coms: Vec<f64> = st.com.iter().flatten().copied().collect();
            if coms.len() < st.com.len() {
                warn!("{} records without mass excluded from CoM", st.com.len() - coms.len());
            }
            report.com.push(ComRow {
                task: *task,
                method: method.clone(),
                layer: *layer,
                com: (!coms.is_empty()).then(|| mean(&coms)),
                n_trs: coms.len(),
            });
            let mut mean_words = vec![0.0; opts.thresholds.len()];
            for r in list {
                for (m, c) in mean_words.iter_mut().zip(spread_counts(r, &opts.thresholds, opts.mass)?) {
                    *m += c as f64 / list.len() as f64;
                }
            }
            report.spread.push(SpreadRow {
                task: *task,
                method: method.clone(),
                layer: *layer,
                thresholds: opts.thresholds.clone(),
                auc: spread_auc(&opts.thresholds, &mean_words),
                mean_words,
            });
            report.positions.push(PositionRow {
                task: *task,
                method: method.clone(),
                layer: *layer,
                bin_width: opts.bin_width,
                proportions: positional_histogram(list, opts.histogram_threshold, opts.bin_width, opts.mass)?,
            });
        }

        for (&layer, brain) in &g.brain {
            let paired: Vec<(&AttributionRecord, &AttributionRecord)> =
                brain.iter().filter_map(|(tr, b)| g.nwp.get(tr).map(|n| (*b, *n))).collect();
            if paired.is_empty() {
                continue;
            }
            for &t in &opts.thresholds {
                let mut ious = Vec::new();
                let mut rand = Vec::new();
                for (b, n) in &paired {
                    let (sb, sn) = (top_set(b, t, opts.mass)?.as_set(), top_set(n, t, opts.mass)?.as_set());
                    ious.push(iou(&sb, &sn));
                    let ctx = b.word_index.iter().chain(&n.word_index).collect::<std::collections::BTreeSet<_>>().len();
                    let seed = opts.seed ^ ((b.target.tr as u64) << 20) ^ (t.to_bits() >> 12);
                    rand.push(random_baseline_iou(ctx, sb.len(), sn.len(), opts.baseline_draws, seed)?);
                }
                if t == opts.histogram_threshold && paired.len() >= 2 {
                    tests.push((format!("iou_vs_random/{method}/layer{layer}/t{t}"), ious.clone(), rand.clone()));
                }
                report.iou.push(IouRow {
                    method: method.clone(),
                    layer,
                    threshold: t,
                    iou: mean(&ious),
                    random_iou: mean(&rand),
                    n_trs: paired.len(),
                });
            }

            for c in Category::ALL {
                let mut shares = Vec::new();
                for (b, n) in &paired {
                    let words: Vec<usize> = b.word_index.clone();
                    let sb = top_set(b, opts.feature_threshold, opts.mass)?.as_set();
                    let sn = top_set(n, opts.feature_threshold, opts.mass)?.as_set();
                    if let Some(s) = feature_share(corpus, &words, &sb, &sn, c) {
                        shares.push(s);
                    }
                }
                if shares.len() < paired.len() {
                    warn!(
                        "{} contexts without {} features excluded",
                        paired.len() - shares.len(),
                        c.name()
                    );
                }
                report.features.push(FeatureRow {
                    method: method.clone(),
                    layer,
                    category: c,
                    ba_only: mean(&shares.iter().map(|s| s.ba_only).collect::<Vec<_>>()),
                    nwp_only: mean(&shares.iter().map(|s| s.nwp_only).collect::<Vec<_>>()),
                    both: mean(&shares.iter().map(|s| s.both).collect::<Vec<_>>()),
                    n_contexts: shares.len(),
                });
            }

            if paired.len() >= 2 {
                let b_list: Vec<&AttributionRecord> = paired.iter().map(|p| p.0).collect();
                let bs = per_record_stats(&b_list, opts)?;
                let nwp_idx: BTreeMap<usize, usize> = g.nwp.keys().enumerate().map(|(i, tr)| (*tr, i)).collect();
                let n_auc: Vec<f64> = paired.iter().map(|p| nwp_stats.auc[nwp_idx[&p.1.target.tr]]).collect();
                tests.push((format!("spread_auc/{method}/layer{layer}"), bs.auc.clone(), n_auc));
                let (mut cb, mut cn) = (Vec::new(), Vec::new());
                for (i, p) in paired.iter().enumerate() {
                    if let (Some(a), Some(b)) = (bs.com[i], nwp_stats.com[nwp_idx[&p.1.target.tr]]) {
                        cb.push(a);
                        cn.push(b);
                    }
                }
                if cb.len() >= 2 {
                    tests.push((format!("com/{method}/layer{layer}"), cb, cn));
                }
            }
        }
    }

    let mut results = Vec::new();
    for (name, a, b) in &tests {
        results.push((name.clone(), paired_t_test(a, b)?));
    }
    let ps: Vec<f64> = results.iter().map(|r| r.1.p).collect();
    let (rej, adj) = benjamini_hochberg(&ps, opts.alpha);
    report.stats = results
        .into_iter()
        .zip(rej.into_iter().zip(adj))
        .map(|((comparison, t), (significant, p_adjusted))| StatRow {
            comparison,
            n: t.n,
            mean_diff: t.mean_diff,
            t: t.t,
            p: t.p,
            p_adjusted,
            significant,
        })
        .collect();
    Ok(report)
}

fn opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or(String::new(), |v| v.to_string())
}

impl MetricsReport {
    pub fn write_iou(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "method,layer,threshold,iou,random_iou,n_trs")?;
        for r in &self.iou {
            writeln!(out, "{},{},{},{},{},{}", r.method, r.layer, r.threshold, r.iou, r.random_iou, r.n_trs)?;
        }
        Ok(())
    }

    pub fn write_com(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "task,method,layer,com,n_trs")?;
        for r in &self.com {
            writeln!(out, "{},{},{},{},{}", r.task.label(), r.method, opt(&r.layer), opt(&r.com), r.n_trs)?;
        }
        Ok(())
    }

    pub fn write_spread(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "task,method,layer,threshold,mean_words,auc")?;
        for r in &self.spread {
            for (t, m) in r.thresholds.iter().zip(&r.mean_words) {
                writeln!(out, "{},{},{},{t},{m},{}", r.task.label(), r.method, opt(&r.layer), r.auc)?;
            }
        }
        Ok(())
    }

    pub fn write_positions(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "task,method,layer,bin_start,bin_end,proportion")?;
        for r in &self.positions {
            for (b, p) in r.proportions.iter().enumerate() {
                let lo = b * r.bin_width;
                writeln!(
                    out,
                    "{},{},{},{lo},{},{p}",
                    r.task.label(),
                    r.method,
                    opt(&r.layer),
                    lo + r.bin_width - 1
                )?;
            }
        }
        Ok(())
    }

    pub fn write_features(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "method,layer,category,ba_only,nwp_only,both,n_contexts")?;
        for r in &self.features {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.method,
                r.layer,
                r.category.name(),
                r.ba_only,
                r.nwp_only,
                r.both,
                r.n_contexts
            )?;
        }
        Ok(())
    }

    pub fn write_masking(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "task,layer,selection,threshold,seed,base,masked,delta")?;
        for r in &self.masking {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.task.label(),
                r.layer.map(|l| l.to_string()).unwrap_or_default(),
                r.selection,
                r.threshold,
                r.seed,
                r.base,
                r.masked,
                r.delta
            )?;
        }
        Ok(())
    }

    pub fn write_stats(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "comparison,n,mean_diff,t,p,p_adjusted,significant")?;
        for r in &self.stats {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.comparison, r.n, r.mean_diff, r.t, r.p, r.p_adjusted, r.significant
            )?;
        }
        Ok(())
    }

    /// `(file name, writer)` for every CSV table.
    pub fn tables(&self) -> Vec<(&'static str, Vec<u8>)> {
        let mut out = Vec::new();
        type Writer = fn(&MetricsReport, &mut Vec<u8>) -> Result<()>;
        let writers: [(&'static str, Writer); 7] = [
            ("iou.csv", |r, w| r.write_iou(w)),
            ("com.csv", |r, w| r.write_com(w)),
            ("spread.csv", |r, w| r.write_spread(w)),
            ("positions.csv", |r, w| r.write_positions(w)),
            ("features.csv", |r, w| r.write_features(w)),
            ("masking.csv", |r, w| r.write_masking(w)),
            ("stats.csv", |r, w| r.write_stats(w)),
        ];
        for (name, f) in writers {
            let mut buf = Vec::new();
            f(self, &mut buf).expect("writing to memory");
            out.push((name, buf));
        }
        out
    }
}
