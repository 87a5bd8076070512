//! Open-set inference, metrics, the leave-one-domain-out protocol driver,
//! and the prompt-discrepancy diagnostic.
//!
//! Classification is an argmax of cosine similarity between an image's
//! global embedding and the C+1 prompt embeddings. Metrics distinguish
//! closed-set accuracy (argmax restricted to known prompts, known samples
//! only), known accuracy (full argmax on known samples, so wrongly
//! predicting unknown counts against it), and unknown accuracy (recall of
//! the unknown label); the H-score is their harmonic mean.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::backend::{self, Backend, PatchEmbeddingSet};
use crate::data::{Dataset, LabeledSample, OSDGSplit};
use crate::error::{Error, Result};
use crate::num;
use crate::prompt::{self, DomainSource};
use crate::semantic;
use crate::train::{
    GenerationSettings, HyperParams, PromptShape, TrainState, Trainer,
};

/// Harmonic mean of known and unknown accuracy; 0 when both vanish.
pub fn h_score(known_acc: f64, unknown_acc: f64) -> f64 {
    let sum = known_acc + unknown_acc;
    if sum > 0.0 {
        2.0 * known_acc * unknown_acc / sum
    } else {
        0.0
    }
}

/// Counts of (true label, predicted label) over the C+1 label space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: Vec<Vec<u64>>,
}

impl Confusion {
    pub fn new(labels: usize) -> Self {
        Self { counts: vec![vec![0; labels]; labels] }
    }

    pub fn labels(&self) -> usize {
        self.counts.len()
    }

    pub fn record(&mut self, true_label: usize, predicted: usize) {
        self.counts[true_label][predicted] += 1;
    }

    pub fn row_total(&self, label: usize) -> u64 {
        self.counts[label].iter().sum()
    }

    pub fn total(&self) -> u64 {
        (0..self.labels()).map(|l| self.row_total(l)).sum()
    }
}

/// Rates derived from a full (C+1)² confusion matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpenSetMetrics {
    pub known_acc: f64,
    pub unknown_acc: f64,
    pub h_score: f64,
    pub open_space_rate: f64,
    pub overall_acc: f64,
}

/// Derive the open-set rates from a full confusion matrix whose last row
/// and column are the unknown label.
pub fn metrics_from_confusion(confusion: &Confusion) -> Result<OpenSetMetrics> {
    let labels = confusion.labels();
    if labels < 2 {
        return Err(Error::Shape(
            "confusion needs at least one known class plus the unknown label".into(),
        ));
    }
    let unknown = labels - 1;
    let mut known_total = 0u64;
    let mut known_hits = 0u64;
    let mut diagonal = 0u64;
    for t in 0..labels {
        for p in 0..labels {
            let n = confusion.counts[t][p];
            if t < unknown {
                known_total += n;
                if p == t {
                    known_hits += n;
                }
            }
            if p == t {
                diagonal += n;
            }
        }
    }
    let unknown_total = confusion.row_total(unknown);
    let unknown_hits = confusion.counts[unknown][unknown];
    let escaped: u64 = confusion.counts[unknown][..unknown].iter().sum();

    let ratio = |num: u64, den: u64| if den > 0 { num as f64 / den as f64 } else { 0.0 };
    let known_acc = ratio(known_hits, known_total);
    let unknown_acc = ratio(unknown_hits, unknown_total);
    Ok(OpenSetMetrics {
        known_acc,
        unknown_acc,
        h_score: h_score(known_acc, unknown_acc),
        open_space_rate: ratio(escaped, unknown_total),
        overall_acc: ratio(diagonal, confusion.total()),
    })
}

/// Closed-set accuracy from a C×C confusion (known samples, known
/// predictions only).
pub fn closed_accuracy_from_confusion(closed: &Confusion) -> f64 {
    let hits: u64 = (0..closed.labels()).map(|i| closed.counts[i][i]).sum();
    let total = closed.total();
    if total > 0 { hits as f64 / total as f64 } else { 0.0 }
}

/// Everything one split evaluation reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub target_domain_id: usize,
    pub target_domain: String,
    pub closed_acc: f64,
    pub known_acc: f64,
    pub unknown_acc: f64,
    pub h_score: f64,
    pub open_space_rate: f64,
    pub overall_acc: f64,
    pub confusion: Confusion,
    /// Diagonal rate per true label (last entry is the unknown label);
    /// absent labels report null.
    pub per_class_acc: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    /// Build the domain slot from target samples instead of source ones.
    pub transductive: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { transductive: false }
    }
}

/// Predicted label in [0, C]: argmax cosine similarity between the image's
/// global embedding and the prompt rows; ties go to the lowest index.
pub fn classify(image: &PatchEmbeddingSet, prompt_matrix: &Array2<f64>) -> Result<usize> {
    if prompt_matrix.nrows() == 0 {
        return Err(Error::Shape("empty prompt matrix".into()));
    }
    if prompt_matrix.ncols() != image.dim() {
        return Err(Error::Shape(format!(
            "prompt dimension {} vs image dimension {}",
            prompt_matrix.ncols(),
            image.dim()
        )));
    }
    let global = backend::image_global_embedding(image)?;
    let mut best = 0;
    let mut best_sim = f64::NEG_INFINITY;
    for (i, row) in prompt_matrix.rows().into_iter().enumerate() {
        let sim = num::cosine(global.vector().view(), row)?;
        if sim > best_sim {
            best_sim = sim;
            best = i;
        }
    }
    Ok(best)
}

/// The (C+1)×d prompt matrix a trained state induces for one domain slot.
pub fn build_prompt_matrix(
    state: &TrainState,
    class_names: &[String],
    domain_vector: &Array1<f64>,
    backend: &Backend,
) -> Result<Array2<f64>> {
    prompt::embed_all_prompts(
        class_names,
        domain_vector,
        DomainSource::SourceMean,
        &state.states,
        &state.params.bank,
        &state.params.proj,
        backend,
    )
}

fn domain_vector_for(
    samples: &[LabeledSample],
    domains: &[usize],
    backend: &Backend,
) -> Result<Array1<f64>> {
    let mut tokens = Vec::with_capacity(domains.len());
    for &domain in domains {
        let members = samples
            .iter()
            .filter(|s| s.domain_id == domain)
            .map(|s| backend.encode_image(s))
            .collect::<Result<Vec<_>>>()?;
        if members.is_empty() {
            return Err(Error::Data(format!("domain {domain} has no samples")));
        }
        tokens.push(semantic::compute_domain_token(&members)?.vector);
    }
    prompt::mean_domain_vector(&tokens)
}

/// The domain slot input a split induces: mean of per-source-domain style
/// tokens, or the target domain's own token when evaluating transductively.
pub fn split_domain_vector(
    split: &OSDGSplit,
    backend: &Backend,
    transductive: bool,
) -> Result<Array1<f64>> {
    if transductive {
        domain_vector_for(&split.target_samples, &[split.target_domain], backend)
    } else {
        domain_vector_for(&split.source_samples, &split.source_domains, backend)
    }
}

/// Evaluate a trained state on a split's held-out target domain.
pub fn evaluate_split(
    dataset: &Dataset,
    split: &OSDGSplit,
    state: &TrainState,
    backend: &Backend,
    options: &EvalOptions,
) -> Result<EvalReport> {
    if split.target_samples.is_empty() {
        return Err(Error::Data(format!(
            "target domain {:?} has no samples",
            dataset.domains[split.target_domain]
        )));
    }
    let c = split.num_known_classes();
    if state.params.num_classes() != c {
        return Err(Error::Config(format!(
            "state covers {} classes, split has {c}",
            state.params.num_classes()
        )));
    }
    let domain_vector = split_domain_vector(split, backend, options.transductive)?;
    let prompts = build_prompt_matrix(state, &split.known_classes, &domain_vector, backend)?;
    let known_prompts = prompts.slice(ndarray::s![..c, ..]).to_owned();

    let mut confusion = Confusion::new(c + 1);
    let mut closed = Confusion::new(c);
    for sample in &split.target_samples {
        let image = backend.encode_image(sample)?;
        let predicted = classify(&image, &prompts)?;
        confusion.record(sample.class_id, predicted);
        if sample.class_id < c {
            closed.record(sample.class_id, classify(&image, &known_prompts)?);
        }
    }

    let metrics = metrics_from_confusion(&confusion)?;
    let per_class_acc = (0..=c)
        .map(|label| {
            let total = confusion.row_total(label);
            (total > 0).then(|| confusion.counts[label][label] as f64 / total as f64)
        })
        .collect();
    Ok(EvalReport {
        target_domain_id: split.target_domain,
        target_domain: dataset.domains[split.target_domain].clone(),
        closed_acc: closed_accuracy_from_confusion(&closed),
        known_acc: metrics.known_acc,
        unknown_acc: metrics.unknown_acc,
        h_score: metrics.h_score,
        open_space_rate: metrics.open_space_rate,
        overall_acc: metrics.overall_acc,
        confusion,
        per_class_acc,
    })
}

/// Per-split reports plus macro averages over all splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub reports: Vec<EvalReport>,
    pub mean_closed_acc: f64,
    pub mean_known_acc: f64,
    pub mean_unknown_acc: f64,
    pub mean_h_score: f64,
    pub mean_open_space_rate: f64,
    pub mean_overall_acc: f64,
}

impl ProtocolReport {
    pub fn from_reports(reports: Vec<EvalReport>) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::Data("no split reports to average".into()));
        }
        let n = reports.len() as f64;
        let mean = |f: fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            mean_closed_acc: mean(|r| r.closed_acc),
            mean_known_acc: mean(|r| r.known_acc),
            mean_unknown_acc: mean(|r| r.unknown_acc),
            mean_h_score: mean(|r| r.h_score),
            mean_open_space_rate: mean(|r| r.open_space_rate),
            mean_overall_acc: mean(|r| r.overall_acc),
            reports,
        })
    }
}

/// Markdown summary table: one row per held-out domain plus the average.
pub fn protocol_markdown(report: &ProtocolReport) -> String {
    let mut out = String::from(
        "| Target domain | Acc | Known | Unknown | H-score | Open-space rate |\n\
         |---|---|---|---|---|---|\n",
    );
    let row = |name: &str, c: f64, k: f64, u: f64, h: f64, o: f64| {
        format!("| {name} | {c:.4} | {k:.4} | {u:.4} | {h:.4} | {o:.4} |\n")
    };
    for r in &report.reports {
        out.push_str(&row(
            &r.target_domain,
            r.closed_acc,
            r.known_acc,
            r.unknown_acc,
            r.h_score,
            r.open_space_rate,
        ));
    }
    out.push_str(&row(
        "average",
        report.mean_closed_acc,
        report.mean_known_acc,
        report.mean_unknown_acc,
        report.mean_h_score,
        report.mean_open_space_rate,
    ));
    out
}

/// Train one model per leave-one-domain-out split and evaluate each on its
/// held-out target.
#[allow(clippy::too_many_arguments)]
pub fn run_losdo_protocol(
    dataset: &Dataset,
    splits: &[OSDGSplit],
    hyper: &HyperParams,
    shape: PromptShape,
    generation: &GenerationSettings,
    backend: &Backend,
    options: &EvalOptions,
    cache_dir: Option<PathBuf>,
) -> Result<(ProtocolReport, Vec<TrainState>)> {
    if splits.len() < 2 {
        return Err(Error::Data(format!(
            "leave-one-domain-out needs at least 2 splits, got {}",
            splits.len()
        )));
    }
    let mut reports = Vec::with_capacity(splits.len());
    let mut states = Vec::with_capacity(splits.len());
    for split in splits {
        let mut trainer = Trainer::new(
            dataset,
            split,
            hyper.clone(),
            shape,
            generation.clone(),
            backend.clone(),
            cache_dir.clone(),
        )?;
        trainer.run()?;
        let state = trainer.into_state();
        reports.push(evaluate_split(dataset, split, &state, backend, options)?);
        states.push(state);
    }
    Ok((ProtocolReport::from_reports(reports)?, states))
}

/// Pairwise prompt distances with and without the semantic slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    /// 1 − cosine between prompts whose semantic slots are zeroed.
    pub dis: Vec<Vec<f64>>,
    /// Same distance over the full enhanced prompts.
    pub dis_sem: Vec<Vec<f64>>,
    /// Mean over ordered pairs c ≠ d of dis_sem − dis.
    pub mean_gain: f64,
}

fn pairwise_distances(embeddings: &[Array1<f64>]) -> Result<Vec<Vec<f64>>> {
    let c = embeddings.len();
    let mut out = vec![vec![0.0; c]; c];
    for i in 0..c {
        for j in (i + 1)..c {
            let d = 1.0 - num::cosine(embeddings[i].view(), embeddings[j].view())?;
            out[i][j] = d;
            out[j][i] = d;
        }
    }
    Ok(out)
}

/// Compare class separations of enhanced prompts against ablated prompts
/// whose semantic slots are zeroed in place.
pub fn lemma1_diagnostic(
    state: &TrainState,
    class_names: &[String],
    domain_vector: &Array1<f64>,
    backend: &Backend,
) -> Result<DiscrepancyReport> {
    let c = class_names.len();
    if c < 2 {
        return Err(Error::Data(
            "discrepancy diagnostic needs at least 2 classes".into(),
        ));
    }
    let k = state.params.heads();
    let mut enhanced = Vec::with_capacity(c);
    let mut ablated = Vec::with_capacity(c);
    for (cls, name) in class_names.iter().enumerate() {
        let classname = backend.classname_embedding(name)?;
        let p = prompt::build_known_prompt(
            cls,
            domain_vector,
            DomainSource::SourceMean,
            &state.states,
            &state.params.proj,
            &classname,
        )?;
        let stripped = p.with_zeroed_semantic_slots(k);
        enhanced.push(backend.encode_token_sequence(&p.tokens)?.vector().clone());
        ablated.push(backend.encode_token_sequence(&stripped.tokens)?.vector().clone());
    }
    let dis_sem = pairwise_distances(&enhanced)?;
    let dis = pairwise_distances(&ablated)?;
    let mut gain = 0.0;
    for i in 0..c {
        for j in 0..c {
            if i != j {
                gain += dis_sem[i][j] - dis[i][j];
            }
        }
    }
    let mean_gain = gain / (c * (c - 1)) as f64;
    Ok(DiscrepancyReport { dis, dis_sem, mean_gain })
}

/// Write one CSV of attention weights (K rows × N patch columns) per
/// known-class sample; unknown-labeled samples have no query bank entry
/// and are skipped. Returns the written paths.
pub fn dump_attention_maps(
    state: &TrainState,
    samples: &[LabeledSample],
    backend: &Backend,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let c = state.params.num_classes();
    let mut written = Vec::new();
    for sample in samples {
        if sample.class_id >= c {
            continue;
        }
        let image = backend.encode_image(sample)?;
        let weights = semantic::compute_attention_weights(
            state.params.queries.class(sample.class_id),
            &image.patches,
        )?;
        let name: String = sample
            .image_id
            .chars()
            .map(|ch| if ch.is_alphanumeric() || ch == '.' || ch == '-' { ch } else { '_' })
            .collect();
        let path = dir.join(format!("attention_{name}.csv"));
        std::fs::write(&path, weights.to_csv())?;
        written.push(path);
    }
    Ok(written)
}

/// Predictions grouped for quick audits: label → count.
pub fn prediction_histogram(report: &EvalReport) -> BTreeMap<usize, u64> {
    let mut out = BTreeMap::new();
    let labels = report.confusion.labels();
    for p in 0..labels {
        let total: u64 = (0..labels).map(|t| report.confusion.counts[t][p]).sum();
        if total > 0 {
            out.insert(p, total);
        }
    }
    out
}
