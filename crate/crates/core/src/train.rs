//! Training loop: batched prompt learning with alternating phases.
//!
//! Each step pools fresh semantic tokens from the batch, blends them into
//! the per-class EMA states, assembles all prompts, injects freshly
//! generated pseudo-unknowns (a fixed count per source domain), evaluates
//! the weighted loss on the autodiff tape, and applies a decoupled
//! weight-decay adaptive-moment update to the trainable parameters only.
//! The alignment phase drops the repulsion and cohesion terms; the
//! repulsion phase applies the full objective. Everything is a pure
//! function of the seed: batches, noise streams, and pseudo requests are
//! derived from (seed, epoch/step), so a run is reproducible and a
//! checkpoint resume continues bit-identically.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::archive::Archive;
use crate::backend::{self, Backend, PatchEmbeddingSet};
use crate::data::{Dataset, OSDGSplit};
use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::model::{self, BatchInputs, ModelParams, ParamId};
use crate::prompt::DEFAULT_UNKNOWN_TOKENS;
use crate::pseudo::{
    self, Generator, GeneratorKind, MockGenerator, PerturbationConfig,
    DEFAULT_DENOISING_STEPS, DEFAULT_GUIDANCE_SCALE,
};
use crate::seeds;
use crate::semantic::{SemanticStateBank, SemanticTokenSet, DEFAULT_SEMANTIC_HEADS};

pub const DEFAULT_EPOCHS: usize = 10;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;
pub const DEFAULT_BATCH_SIZE: usize = 9;
pub const DEFAULT_PSEUDO_PER_DOMAIN: usize = 3;
pub const DEFAULT_EMA_MOMENTUM: f64 = 0.9;
pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// How the two training phases alternate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseSchedule {
    AlternatePerBatch,
    AlternatePerEpoch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Alignment,
    Repulsion,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Alignment => "alignment",
            Phase::Repulsion => "repulsion",
        }
    }
}

/// All training constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperParams {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub pseudo_per_domain: usize,
    pub loss_weights: LossWeights,
    pub ema_momentum: f64,
    pub seed: u64,
    pub phase_schedule: PhaseSchedule,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: DEFAULT_BATCH_SIZE,
            pseudo_per_domain: DEFAULT_PSEUDO_PER_DOMAIN,
            loss_weights: LossWeights::default(),
            ema_momentum: DEFAULT_EMA_MOMENTUM,
            seed: 0,
            phase_schedule: PhaseSchedule::AlternatePerBatch,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.ema_momentum) {
            return Err(Error::Config(format!(
                "ema momentum must lie in [0, 1), got {}",
                self.ema_momentum
            )));
        }
        self.loss_weights.validate()
    }
}

/// Shape of the learnable prompt machinery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptShape {
    pub semantic_heads: usize,
    pub unknown_tokens: usize,
}

impl Default for PromptShape {
    fn default() -> Self {
        Self {
            semantic_heads: DEFAULT_SEMANTIC_HEADS,
            unknown_tokens: DEFAULT_UNKNOWN_TOKENS,
        }
    }
}

/// Pseudo-unknown generation settings for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationSettings {
    pub perturbation: PerturbationConfig,
    pub guidance_scale: f64,
    pub denoising_steps: u32,
    pub generator: GeneratorKind,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self {
            perturbation: PerturbationConfig::default(),
            guidance_scale: DEFAULT_GUIDANCE_SCALE,
            denoising_steps: DEFAULT_DENOISING_STEPS,
            generator: GeneratorKind::default(),
        }
    }
}

/// Decoupled weight-decay adaptive-moment optimizer over the named model
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub steps: u64,
    pub first_moments: BTreeMap<String, Array2<f64>>,
    pub second_moments: BTreeMap<String, Array2<f64>>,
}

impl AdamW {
    pub fn new(learning_rate: f64) -> Self {
        Self::with_decay(learning_rate, 0.01)
    }

    pub fn with_decay(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            steps: 0,
            first_moments: BTreeMap::new(),
            second_moments: BTreeMap::new(),
        }
    }

    /// Apply one update. Decay is decoupled: θ ← θ(1 − lr·wd) − lr·m̂/(√v̂+ε).
    pub fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &[(ParamId, Array2<f64>)],
    ) -> Result<()> {
        for (id, g) in grads {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient for {}",
                    id.name()
                )));
            }
            if g.dim() != params.get_param(*id).dim() {
                return Err(Error::Shape(format!(
                    "gradient shape {:?} for {} of shape {:?}",
                    g.dim(),
                    id.name(),
                    params.get_param(*id).dim()
                )));
            }
        }
        self.steps += 1;
        let t = self.steps as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (id, g) in grads {
            let name = id.name();
            let m = self
                .first_moments
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.dim()));
            *m = &*m * self.beta1 + &(g * (1.0 - self.beta1));
            let m_hat = &*m / bc1;
            let v = self
                .second_moments
                .entry(name)
                .or_insert_with(|| Array2::zeros(g.dim()));
            *v = &*v * self.beta2 + &(g.mapv(|x| x * x) * (1.0 - self.beta2));
            let v_hat = &*v / bc2;

            let mut theta = params.get_param(*id);
            theta.mapv_inplace(|x| x * (1.0 - self.learning_rate * self.weight_decay));
            ndarray::Zip::from(&mut theta).and(&m_hat).and(&v_hat).for_each(
                |t, &mh, &vh| {
                    *t -= self.learning_rate * mh / (vh.sqrt() + self.eps);
                },
            );
            params.set_param(*id, theta)?;
        }
        Ok(())
    }
}

/// Everything a checkpoint captures.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub states: SemanticStateBank,
    pub optimizer: AdamW,
    pub step: u64,
    pub hyper: HyperParams,
}

/// Names of all trainable tensors; embedding-backend parameters never
/// appear here.
pub fn trainable_parameters(state: &TrainState) -> Vec<String> {
    state.params.param_ids().iter().map(ParamId::name).collect()
}

/// Audit record of one pseudo-generation request inside a batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoAudit {
    pub domain_id: usize,
    pub count: usize,
    pub label: usize,
}

/// One JSON-lines training-log record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub phase: String,
    pub align: f64,
    pub repulse: f64,
    pub cohere: f64,
    pub regularize: f64,
    pub total: f64,
    pub pseudo: Vec<PseudoAudit>,
}

pub fn write_log_jsonl(records: &[StepRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)
            .map_err(|e| Error::Data(format!("log serialization: {e}")))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log_jsonl(path: &Path) -> Result<Vec<StepRecord>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Data(format!("log line {}: {e}", i + 1)))?,
        );
    }
    Ok(records)
}

/// Owns one training run over a split's source domains.
pub struct Trainer {
    state: TrainState,
    backend: Backend,
    generation: GenerationSettings,
    generator: Generator,
    text_weight: Array2<f64>,
    class_names: Vec<String>,
    domain_names: Vec<String>,
    source_domains: Vec<usize>,
    domain_vector: Array1<f64>,
    classname_embeddings: Vec<Array1<f64>>,
    patch_sets: Vec<PatchEmbeddingSet>,
    globals: Vec<Array1<f64>>,
    labels: Vec<usize>,
    log: Vec<StepRecord>,
}

struct RunCaches {
    text_weight: Array2<f64>,
    class_names: Vec<String>,
    domain_names: Vec<String>,
    source_domains: Vec<usize>,
    domain_vector: Array1<f64>,
    classname_embeddings: Vec<Array1<f64>>,
    patch_sets: Vec<PatchEmbeddingSet>,
    globals: Vec<Array1<f64>>,
    labels: Vec<usize>,
}

fn build_caches(dataset: &Dataset, split: &OSDGSplit, backend: &Backend) -> Result<RunCaches> {
    if split.source_domains.is_empty() {
        return Err(Error::Data("split has no source domains".into()));
    }
    if split.source_samples.is_empty() {
        return Err(Error::Data("split has no source samples".into()));
    }
    // training propagates gradients through the text encoder, which only
    // the synthetic backend exposes
    let text_weight = backend.synthetic_text_weight()?.clone();

    let c = split.num_known_classes();
    let mut seen = vec![false; c];
    let mut patch_sets = Vec::with_capacity(split.source_samples.len());
    let mut globals = Vec::with_capacity(split.source_samples.len());
    let mut labels = Vec::with_capacity(split.source_samples.len());
    for sample in &split.source_samples {
        let set = backend.encode_image(sample)?;
        globals.push(backend::image_global_embedding(&set)?.vector().clone());
        labels.push(sample.class_id);
        seen[sample.class_id] = true;
        patch_sets.push(set);
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Data(format!(
            "class {:?} has no source samples in this split",
            split.known_classes[missing]
        )));
    }

    let mut domain_tokens = Vec::with_capacity(split.source_domains.len());
    for &domain in &split.source_domains {
        let members: Vec<PatchEmbeddingSet> = patch_sets
            .iter()
            .filter(|p| p.domain_id == domain)
            .cloned()
            .collect();
        if members.is_empty() {
            return Err(Error::Data(format!(
                "source domain {:?} has no samples",
                dataset.domains[domain]
            )));
        }
        domain_tokens.push(crate::semantic::compute_domain_token(&members)?.vector);
    }
    let domain_vector = crate::prompt::mean_domain_vector(&domain_tokens)?;

    let classname_embeddings = split
        .known_classes
        .iter()
        .map(|name| backend.classname_embedding(name))
        .collect::<Result<Vec<_>>>()?;

    Ok(RunCaches {
        text_weight,
        class_names: split.known_classes.clone(),
        domain_names: dataset.domains.clone(),
        source_domains: split.source_domains.clone(),
        domain_vector,
        classname_embeddings,
        patch_sets,
        globals,
        labels,
    })
}

impl Trainer {
    /// Fresh run: seeded parameters and warm-started semantic states
    /// (tokens pooled over every source sample with the initial queries).
    pub fn new(
        dataset: &Dataset,
        split: &OSDGSplit,
        hyper: HyperParams,
        shape: PromptShape,
        generation: GenerationSettings,
        backend: Backend,
        cache_dir: Option<std::path::PathBuf>,
    ) -> Result<Self> {
        hyper.validate()?;
        generation.perturbation.validate()?;
        let caches = build_caches(dataset, split, &backend)?;
        let c = split.num_known_classes();
        let params = ModelParams::init_seeded(
            c,
            shape.semantic_heads,
            shape.unknown_tokens,
            backend.dim(),
            seeds::derive(hyper.seed, &["params".into()]),
        )?;

        let mut states = SemanticStateBank::new(c);
        let mut grouped: BTreeMap<usize, Vec<&PatchEmbeddingSet>> = BTreeMap::new();
        for (set, &label) in caches.patch_sets.iter().zip(&caches.labels) {
            grouped.entry(label).or_default().push(set);
        }
        for (cls, sets) in grouped {
            let mut acc = Array2::zeros((shape.semantic_heads, backend.dim()));
            for set in &sets {
                let w = crate::semantic::compute_attention_weights(
                    params.queries.class(cls),
                    &set.patches,
                )?;
                acc += &crate::semantic::pool_semantic_tokens(&w, &set.patches)?.tokens;
            }
            states.set(cls, SemanticTokenSet { tokens: acc / sets.len() as f64 });
        }

        let optimizer = AdamW::new(hyper.learning_rate);
        let state = TrainState { params, states, optimizer, step: 0, hyper };
        Self::assemble(state, caches, generation, backend, cache_dir)
    }

    /// Continue from a checkpointed state; batch order and noise streams
    /// pick up exactly where the step counter left off.
    pub fn from_state(
        state: TrainState,
        dataset: &Dataset,
        split: &OSDGSplit,
        generation: GenerationSettings,
        backend: Backend,
        cache_dir: Option<std::path::PathBuf>,
    ) -> Result<Self> {
        state.hyper.validate()?;
        generation.perturbation.validate()?;
        let caches = build_caches(dataset, split, &backend)?;
        if state.params.num_classes() != split.num_known_classes() {
            return Err(Error::Config(format!(
                "checkpoint trained on {} classes, split has {}",
                state.params.num_classes(),
                split.num_known_classes()
            )));
        }
        if state.params.dim() != backend.dim() {
            return Err(Error::Config(format!(
                "checkpoint dimension {} does not match backend dimension {}",
                state.params.dim(),
                backend.dim()
            )));
        }
        Self::assemble(state, caches, generation, backend, cache_dir)
    }

    fn assemble(
        state: TrainState,
        caches: RunCaches,
        generation: GenerationSettings,
        backend: Backend,
        cache_dir: Option<std::path::PathBuf>,
    ) -> Result<Self> {
        if generation.generator == GeneratorKind::External {
            return Err(Error::Config(
                "training generates pseudo-unknowns in process; external generation \
                 runs offline from exported request manifests"
                    .into(),
            ));
        }
        let generator = Generator::Mock(
            MockGenerator::new(backend.spec().patches, generation.perturbation)?
                .with_cache_dir(cache_dir),
        );
        Ok(Self {
            state,
            backend,
            generation,
            generator,
            text_weight: caches.text_weight,
            class_names: caches.class_names,
            domain_names: caches.domain_names,
            source_domains: caches.source_domains,
            domain_vector: caches.domain_vector,
            classname_embeddings: caches.classname_embeddings,
            patch_sets: caches.patch_sets,
            globals: caches.globals,
            labels: caches.labels,
            log: Vec::new(),
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn log(&self) -> &[StepRecord] {
        &self.log
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.labels.len().div_ceil(self.state.hyper.batch_size)
    }

    pub fn total_steps(&self) -> u64 {
        (self.state.hyper.epochs * self.steps_per_epoch()) as u64
    }

    pub fn phase_for_step(&self, step: u64) -> Phase {
        let unit = match self.state.hyper.phase_schedule {
            PhaseSchedule::AlternatePerBatch => step,
            PhaseSchedule::AlternatePerEpoch => step / self.steps_per_epoch() as u64,
        };
        if unit % 2 == 0 {
            Phase::Alignment
        } else {
            Phase::Repulsion
        }
    }

    fn batch_indices(&self, step: u64) -> Vec<usize> {
        use rand::seq::SliceRandom;
        let spe = self.steps_per_epoch() as u64;
        let epoch = step / spe;
        let pos = (step % spe) as usize;
        let mut order: Vec<usize> = (0..self.labels.len()).collect();
        let mut rng = seeds::rng(self.state.hyper.seed, &["epoch".into(), epoch.into()]);
        order.shuffle(&mut rng);
        let lo = pos * self.state.hyper.batch_size;
        let hi = (lo + self.state.hyper.batch_size).min(order.len());
        order[lo..hi].to_vec()
    }

    fn make_pseudo(&self, step: u64) -> Result<(Vec<Array1<f64>>, Vec<PseudoAudit>)> {
        let count = self.state.hyper.pseudo_per_domain;
        let mut rows = Vec::new();
        let mut audits = Vec::new();
        if count == 0 {
            return Ok((rows, audits));
        }
        let c = self.class_names.len();
        let unknown_label = c;
        let negative = pseudo::build_negative_prompt(&self.class_names)?;
        for (idx, &domain_id) in self.source_domains.iter().enumerate() {
            // rotate the perturbed source class across steps and domains
            let source_class = (step as usize * self.source_domains.len() + idx) % c;
            let cfg = PerturbationConfig {
                sigma: self.generation.perturbation.sigma,
                seed: seeds::derive(
                    self.generation.perturbation.seed,
                    &["step".into(), step.into(), "domain".into(), domain_id.into()],
                ),
            };
            let perturbed =
                pseudo::perturb_semantic_tokens(self.state.states.get(source_class)?, &cfg)?;
            let condition = pseudo::build_joint_condition(
                pseudo::build_positive_prompt(&self.domain_names[domain_id])?,
                negative.clone(),
                &perturbed,
                &self.state.params.proj,
                self.generation.denoising_steps,
                self.generation.guidance_scale,
            )?;
            let request = pseudo::PseudoRequest {
                source_class_id: source_class,
                domain_id,
                unknown_label,
                count,
                request_id: step,
            };
            let samples = pseudo::generate_pseudo_unknowns(&condition, &request, &self.generator)?;
            let mut produced = 0;
            for (i, s) in samples.iter().enumerate() {
                let set = PatchEmbeddingSet::new(
                    s.payload.clone(),
                    format!("pseudo/{step}/{domain_id}/{i}"),
                    domain_id,
                )?;
                rows.push(backend::image_global_embedding(&set)?.vector().clone());
                produced += usize::from(s.label == unknown_label);
            }
            audits.push(PseudoAudit { domain_id, count: produced, label: unknown_label });
        }
        Ok((rows, audits))
    }

    /// Run one batch: pool, prompt, generate, differentiate, update.
    pub fn step(&mut self) -> Result<StepRecord> {
        let step = self.state.step;
        if step >= self.total_steps() {
            return Err(Error::Config(format!(
                "training already finished at step {step}"
            )));
        }
        let epoch = (step / self.steps_per_epoch() as u64) as usize;
        let indices = self.batch_indices(step);
        let c = self.class_names.len();

        let mut pooled_by_class: BTreeMap<usize, Vec<Array2<f64>>> = BTreeMap::new();
        let mut per_class_globals: BTreeMap<usize, Vec<&Array1<f64>>> = BTreeMap::new();
        let mut rows: Vec<Array1<f64>> = Vec::new();
        let mut labels: Vec<usize> = Vec::new();
        for &i in &indices {
            let cls = self.labels[i];
            pooled_by_class.entry(cls).or_default().push(self.patch_sets[i].patches.clone());
            per_class_globals.entry(cls).or_default().push(&self.globals[i]);
            rows.push(self.globals[i].clone());
            labels.push(cls);
        }
        let mut class_representatives = Vec::with_capacity(per_class_globals.len());
        for globals in per_class_globals.values() {
            let mut mean = Array1::zeros(self.backend.dim());
            for g in globals {
                mean += *g;
            }
            mean /= globals.len() as f64;
            class_representatives.push(crate::num::l2_normalized(mean.view())?);
        }

        let (pseudo_rows, audits) = self.make_pseudo(step)?;
        for r in pseudo_rows {
            rows.push(r);
            labels.push(c);
        }
        let mut image_embeddings = Array2::zeros((rows.len(), self.backend.dim()));
        for (i, r) in rows.iter().enumerate() {
            image_embeddings.row_mut(i).assign(r);
        }

        let inputs = BatchInputs {
            image_embeddings,
            labels,
            pooled_by_class,
            class_representatives,
            domain_vector: self.domain_vector.clone(),
            classname_embeddings: self.classname_embeddings.clone(),
            state_old: (0..c)
                .map(|cls| self.state.states.get(cls).map(|s| s.tokens.clone()))
                .collect::<Result<Vec<_>>>()?,
        };

        let phase = self.phase_for_step(step);
        let weights = match phase {
            Phase::Alignment => LossWeights {
                alpha: 0.0,
                beta: 0.0,
                ..self.state.hyper.loss_weights
            },
            Phase::Repulsion => self.state.hyper.loss_weights,
        };
        let graph = model::build_loss_graph(
            &self.state.params,
            &inputs,
            &weights,
            self.state.hyper.ema_momentum,
            &self.text_weight,
        )?;
        let grads = graph.tape.backward(graph.vars.total);
        let grad_list: Vec<(ParamId, Array2<f64>)> = graph
            .param_vars
            .iter()
            .map(|(id, var)| (*id, grads.get(&graph.tape, *var)))
            .collect();
        self.state.optimizer.step(&mut self.state.params, &grad_list)?;
        for id in self.state.params.param_ids() {
            if !crate::num::all_finite(self.state.params.get_param(id).view()) {
                return Err(Error::Numeric(format!(
                    "parameter {} diverged at step {step}",
                    id.name()
                )));
            }
        }
        for (cls, blended) in &graph.blended_states {
            self.state.states.set(*cls, SemanticTokenSet { tokens: blended.clone() });
        }

        self.state.step += 1;
        let record = StepRecord {
            step,
            epoch,
            phase: phase.as_str().to_string(),
            align: graph.breakdown.align,
            repulse: graph.breakdown.repulse,
            cohere: graph.breakdown.cohere,
            regularize: graph.breakdown.regularize,
            total: graph.breakdown.total,
            pseudo: audits,
        };
        self.log.push(record.clone());
        Ok(record)
    }

    /// Train until the configured number of epochs is exhausted.
    pub fn run(&mut self) -> Result<()> {
        while self.state.step < self.total_steps() {
            self.step()?;
        }
        Ok(())
    }
}

fn insert_matrix(archive: &mut Archive, name: &str, m: &Array2<f64>) -> Result<()> {
    archive.insert_f64(
        name,
        vec![m.nrows() as u64, m.ncols() as u64],
        m.iter().cloned().collect(),
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    schema_version: u32,
    step: u64,
    optimizer_steps: u64,
    classes: usize,
    heads: usize,
    dim: usize,
    unknown_tokens: usize,
    hyper: HyperParams,
    tensors: Vec<String>,
}

fn manifest_path(archive_path: &Path) -> std::path::PathBuf {
    let mut name = archive_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into());
    name.push_str(".manifest.json");
    archive_path.with_file_name(name)
}

/// Write the archive plus a sidecar manifest (`<file>.manifest.json`).
/// Contains no timestamps, so identical states serialize byte-identically.
pub fn save_checkpoint(state: &TrainState, archive_path: &Path) -> Result<()> {
    let mut archive = Archive::new();
    for id in state.params.param_ids() {
        insert_matrix(&mut archive, &format!("param.{}", id.name()), &state.params.get_param(id))?;
    }
    for (cls, s) in state.states.states().iter().enumerate() {
        if let Some(tokens) = s {
            insert_matrix(&mut archive, &format!("ema.{cls}"), &tokens.tokens)?;
        }
    }
    for (name, m) in &state.optimizer.first_moments {
        insert_matrix(&mut archive, &format!("opt.m.{name}"), m)?;
    }
    for (name, v) in &state.optimizer.second_moments {
        insert_matrix(&mut archive, &format!("opt.v.{name}"), v)?;
    }
    archive.save(archive_path)?;

    let manifest = CheckpointManifest {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        step: state.step,
        optimizer_steps: state.optimizer.steps,
        classes: state.params.num_classes(),
        heads: state.params.heads(),
        dim: state.params.dim(),
        unknown_tokens: state.params.unknown_tokens(),
        hyper: state.hyper.clone(),
        tensors: archive.names().map(String::from).collect(),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Data(format!("manifest serialization: {e}")))?;
    std::fs::write(manifest_path(archive_path), json + "\n")?;
    Ok(())
}

pub fn load_checkpoint(archive_path: &Path) -> Result<TrainState> {
    let manifest_file = manifest_path(archive_path);
    let text = std::fs::read_to_string(&manifest_file).map_err(|e| {
        Error::Data(format!("checkpoint manifest {}: {e}", manifest_file.display()))
    })?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("checkpoint manifest: {e}")))?;
    if manifest.schema_version != CHECKPOINT_SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "unsupported checkpoint schema version {}",
            manifest.schema_version
        )));
    }
    let archive = Archive::load(archive_path)?;

    let mut params = ModelParams::init_seeded(
        manifest.classes,
        manifest.heads,
        manifest.unknown_tokens,
        manifest.dim,
        0,
    )?;
    for id in params.param_ids() {
        let name = format!("param.{}", id.name());
        let t = archive.require(&name)?;
        params.set_param(id, backend::tensor_to_matrix(t, &name)?)?;
    }

    let mut states = SemanticStateBank::new(manifest.classes);
    for cls in 0..manifest.classes {
        let name = format!("ema.{cls}");
        if let Some(t) = archive.get(&name) {
            states.set(cls, SemanticTokenSet { tokens: backend::tensor_to_matrix(t, &name)? });
        }
    }

    let mut optimizer = AdamW::new(manifest.hyper.learning_rate);
    optimizer.steps = manifest.optimizer_steps;
    for (name, _) in archive.iter() {
        if let Some(param) = name.strip_prefix("opt.m.") {
            optimizer.first_moments.insert(
                param.to_string(),
                backend::tensor_to_matrix(archive.require(name)?, name)?,
            );
        } else if let Some(param) = name.strip_prefix("opt.v.") {
            optimizer.second_moments.insert(
                param.to_string(),
                backend::tensor_to_matrix(archive.require(name)?, name)?,
            );
        }
    }

    Ok(TrainState {
        params,
        states,
        optimizer,
        step: manifest.step,
        hyper: manifest.hyper,
    })
}
