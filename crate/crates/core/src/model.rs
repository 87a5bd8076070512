//! Differentiable assembly of one training step's loss.
//!
//! The plain modules (`semantic`, `prompt`, `loss`) compute forward values;
//! this module rebuilds the same expressions on the autodiff tape so the
//! trainer can backpropagate into the trainable parameters: per-class
//! queries, the Φ/Ψ projections, and the unknown prompt tokens. Tests pin
//! the tape's forward values to the plain implementations, and
//! [`gradient_check`] compares analytic gradients against central finite
//! differences.
//!
//! Semantic states are handled EMA-style: the graph blends the detached
//! running state with tokens pooled freshly from the batch, so gradients
//! flow into the queries through the fresh share only. The blended values
//! are exported so the trainer can fold them back into its state bank.

use ndarray::{Array1, Array2, Axis};
use std::collections::BTreeMap;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::loss::{LossBreakdown, LossWeights};
use crate::prompt::{ProjectionParams, UnknownTokenBank};
use crate::semantic::QueryBank;

/// All trainable parameters of the method.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub queries: QueryBank,
    pub proj: ProjectionParams,
    pub bank: UnknownTokenBank,
}

impl ModelParams {
    pub fn init_seeded(
        classes: usize,
        heads: usize,
        unknown_tokens: usize,
        dim: usize,
        seed: u64,
    ) -> Result<Self> {
        if classes == 0 || heads == 0 || dim < 2 {
            return Err(Error::Config(format!(
                "model needs classes >= 1, heads >= 1, dim >= 2 (got {classes}, {heads}, {dim})"
            )));
        }
        Ok(Self {
            queries: QueryBank::new_seeded(classes, heads, dim, seed),
            proj: ProjectionParams::identity(heads, dim),
            bank: UnknownTokenBank::new_seeded(unknown_tokens, dim, seed)?,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.queries.num_classes()
    }

    pub fn heads(&self) -> usize {
        self.queries.heads()
    }

    pub fn dim(&self) -> usize {
        self.queries.dim()
    }

    pub fn unknown_tokens(&self) -> usize {
        self.bank.num_tokens()
    }

    /// Fixed enumeration order of every trainable tensor.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for c in 0..self.num_classes() {
            ids.push(ParamId::Query(c));
        }
        ids.push(ParamId::PhiWeight);
        ids.push(ParamId::PhiBias);
        for k in 0..self.heads() {
            ids.push(ParamId::PsiWeight(k));
            ids.push(ParamId::PsiBias(k));
        }
        ids.push(ParamId::UnknownTokens);
        ids.push(ParamId::UnknownLabel);
        ids
    }

    /// Parameter tensor as a matrix (vectors as a single row).
    pub fn get_param(&self, id: ParamId) -> Array2<f64> {
        match id {
            ParamId::Query(c) => self.queries.class(c).clone(),
            ParamId::PhiWeight => self.proj.phi_weight.clone(),
            ParamId::PhiBias => as_row(&self.proj.phi_bias),
            ParamId::PsiWeight(k) => self.proj.psi_weights[k].clone(),
            ParamId::PsiBias(k) => as_row(&self.proj.psi_biases[k]),
            ParamId::UnknownTokens => self.bank.tokens.clone(),
            ParamId::UnknownLabel => as_row(&self.bank.label_token),
        }
    }

    pub fn set_param(&mut self, id: ParamId, value: Array2<f64>) -> Result<()> {
        let expected = self.get_param(id).dim();
        if value.dim() != expected {
            return Err(Error::Shape(format!(
                "parameter {} expects shape {:?}, got {:?}",
                id.name(),
                expected,
                value.dim()
            )));
        }
        match id {
            ParamId::Query(c) => *self.queries.class_mut(c) = value,
            ParamId::PhiWeight => self.proj.phi_weight = value,
            ParamId::PhiBias => self.proj.phi_bias = value.row(0).to_owned(),
            ParamId::PsiWeight(k) => self.proj.psi_weights[k] = value,
            ParamId::PsiBias(k) => self.proj.psi_biases[k] = value.row(0).to_owned(),
            ParamId::UnknownTokens => self.bank.tokens = value,
            ParamId::UnknownLabel => self.bank.label_token = value.row(0).to_owned(),
        }
        Ok(())
    }
}

fn as_row(v: &Array1<f64>) -> Array2<f64> {
    v.clone().insert_axis(Axis(0))
}

/// Identity of one trainable tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ParamId {
    Query(usize),
    PhiWeight,
    PhiBias,
    PsiWeight(usize),
    PsiBias(usize),
    UnknownTokens,
    UnknownLabel,
}

impl ParamId {
    pub fn name(&self) -> String {
        match self {
            ParamId::Query(c) => format!("queries.{c}"),
            ParamId::PhiWeight => "proj.phi.weight".into(),
            ParamId::PhiBias => "proj.phi.bias".into(),
            ParamId::PsiWeight(k) => format!("proj.psi.{k}.weight"),
            ParamId::PsiBias(k) => format!("proj.psi.{k}.bias"),
            ParamId::UnknownTokens => "unknown.tokens".into(),
            ParamId::UnknownLabel => "unknown.label".into(),
        }
    }
}

/// Everything the loss graph consumes besides the trainable parameters.
/// All tensors here are constants on the tape.
#[derive(Debug, Clone)]
pub struct BatchInputs {
    /// B×d unit rows: global embeddings of real and pseudo samples.
    pub image_embeddings: Array2<f64>,
    /// B labels in [0, C]; pseudo-unknowns carry C.
    pub labels: Vec<usize>,
    /// Patch matrices of the real samples, grouped by class, for fresh
    /// semantic-token pooling.
    pub pooled_by_class: BTreeMap<usize, Vec<Array2<f64>>>,
    /// Per-class image representatives present in this batch, already
    /// L2-normalized (repulsion targets).
    pub class_representatives: Vec<Array1<f64>>,
    /// Domain slot input (mean of source-domain tokens during training).
    pub domain_vector: Array1<f64>,
    /// One classname embedding per known class.
    pub classname_embeddings: Vec<Array1<f64>>,
    /// Detached running EMA state per known class (K×d each).
    pub state_old: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub align: Var,
    pub repulse: Var,
    pub cohere: Var,
    pub regularize: Var,
    pub total: Var,
}

/// A built graph: tape, loss variables, forward values, and the handles
/// the trainer needs afterwards.
pub struct LossGraph {
    pub tape: Tape,
    pub vars: LossVars,
    pub breakdown: LossBreakdown,
    pub param_vars: Vec<(ParamId, Var)>,
    /// Blended (momentum·old + (1−momentum)·fresh) semantic states for the
    /// classes present in the batch, to fold into the trainer's bank.
    pub blended_states: BTreeMap<usize, Array2<f64>>,
    /// Forward value of the (C+1)×d prompt matrix.
    pub prompt_matrix: Array2<f64>,
    /// Unknown-prompt/representative similarities (hinge inputs).
    pub repulsion_sims: Vec<f64>,
    /// Smallest |coordinate| over all projected semantic slots (L1 kink
    /// proximity).
    pub min_abs_projected: f64,
}

impl LossGraph {
    /// Distance to the nearest non-smooth point of the loss surface:
    /// hinge activations at |sim − δ| = 0 and L1 kinks at zero
    /// coordinates. Finite-difference checks should skip configurations
    /// where this is below their step size.
    pub fn min_kink_distance(&self, delta: f64) -> f64 {
        let hinge = self
            .repulsion_sims
            .iter()
            .map(|s| (s - delta).abs())
            .fold(f64::INFINITY, f64::min);
        hinge.min(self.min_abs_projected)
    }
}

/// Which loss a gradient check differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossSelect {
    Align,
    Repulse,
    Cohere,
    Regularize,
    Total,
}

impl LossSelect {
    pub const ALL: [LossSelect; 5] = [
        LossSelect::Align,
        LossSelect::Repulse,
        LossSelect::Cohere,
        LossSelect::Regularize,
        LossSelect::Total,
    ];

    fn var(&self, vars: &LossVars) -> Var {
        match self {
            LossSelect::Align => vars.align,
            LossSelect::Repulse => vars.repulse,
            LossSelect::Cohere => vars.cohere,
            LossSelect::Regularize => vars.regularize,
            LossSelect::Total => vars.total,
        }
    }

    fn value(&self, b: &LossBreakdown) -> f64 {
        match self {
            LossSelect::Align => b.align,
            LossSelect::Repulse => b.repulse,
            LossSelect::Cohere => b.cohere,
            LossSelect::Regularize => b.regularize,
            LossSelect::Total => b.total,
        }
    }
}

fn validate_inputs(params: &ModelParams, inputs: &BatchInputs) -> Result<()> {
    let c = params.num_classes();
    let d = params.dim();
    if inputs.classname_embeddings.len() != c {
        return Err(Error::Shape(format!(
            "{} classname embeddings for {c} classes",
            inputs.classname_embeddings.len()
        )));
    }
    if inputs.state_old.len() != c {
        return Err(Error::Shape(format!(
            "{} running states for {c} classes",
            inputs.state_old.len()
        )));
    }
    for s in &inputs.state_old {
        if s.dim() != (params.heads(), d) {
            return Err(Error::Shape(format!(
                "running state shape {:?}, expected {:?}",
                s.dim(),
                (params.heads(), d)
            )));
        }
    }
    if inputs.image_embeddings.nrows() != inputs.labels.len() {
        return Err(Error::Shape(format!(
            "{} labels for {} image embeddings",
            inputs.labels.len(),
            inputs.image_embeddings.nrows()
        )));
    }
    if inputs.image_embeddings.nrows() == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    if inputs.image_embeddings.ncols() != d || inputs.domain_vector.len() != d {
        return Err(Error::Shape("embedding dimension mismatch".into()));
    }
    for &l in &inputs.labels {
        if l > c {
            return Err(Error::Data(format!("label {l} out of range 0..={c}")));
        }
    }
    for cls in inputs.pooled_by_class.keys() {
        if *cls >= c {
            return Err(Error::Data(format!("pooled class {cls} out of range")));
        }
    }
    if inputs.class_representatives.is_empty() {
        return Err(Error::Data("no class representatives in batch".into()));
    }
    Ok(())
}

/// Build the full loss expression for one step.
pub fn build_loss_graph(
    params: &ModelParams,
    inputs: &BatchInputs,
    weights: &LossWeights,
    ema_momentum: f64,
    text_weight: &Array2<f64>,
) -> Result<LossGraph> {
    weights.validate()?;
    validate_inputs(params, inputs)?;
    if !(0.0..1.0).contains(&ema_momentum) {
        return Err(Error::Config(format!(
            "ema momentum must lie in [0, 1), got {ema_momentum}"
        )));
    }
    let c = params.num_classes();
    let k = params.heads();
    let d = params.dim();
    if text_weight.dim() != (d, d) {
        return Err(Error::Shape(format!(
            "text weight shape {:?}, expected ({d}, {d})",
            text_weight.dim()
        )));
    }

    let mut tape = Tape::new();

    // trainable leaves
    let query_vars: Vec<Var> =
        (0..c).map(|cls| tape.leaf(params.queries.class(cls).clone())).collect();
    let phi_w = tape.leaf(params.proj.phi_weight.clone());
    let phi_b = tape.leaf(as_row(&params.proj.phi_bias));
    let psi_w: Vec<Var> =
        params.proj.psi_weights.iter().map(|w| tape.leaf(w.clone())).collect();
    let psi_b: Vec<Var> =
        params.proj.psi_biases.iter().map(|b| tape.leaf(as_row(b))).collect();
    let unk_tokens = tape.leaf(params.bank.tokens.clone());
    let unk_label = tape.leaf(as_row(&params.bank.label_token));

    let mut param_vars = vec![];
    for (cls, v) in query_vars.iter().enumerate() {
        param_vars.push((ParamId::Query(cls), *v));
    }
    param_vars.push((ParamId::PhiWeight, phi_w));
    param_vars.push((ParamId::PhiBias, phi_b));
    for head in 0..k {
        param_vars.push((ParamId::PsiWeight(head), psi_w[head]));
        param_vars.push((ParamId::PsiBias(head), psi_b[head]));
    }
    param_vars.push((ParamId::UnknownTokens, unk_tokens));
    param_vars.push((ParamId::UnknownLabel, unk_label));

    // constants
    let w_text = tape.leaf(text_weight.clone());
    let dom = tape.leaf(as_row(&inputs.domain_vector));
    let images = tape.leaf(inputs.image_embeddings.clone());

    // fresh semantic tokens per class present in the batch, blended with
    // the detached running state
    let mut state_vars: Vec<Var> = Vec::with_capacity(c);
    let mut blended_states = BTreeMap::new();
    for cls in 0..c {
        let old = tape.leaf(inputs.state_old[cls].clone());
        let state = match inputs.pooled_by_class.get(&cls) {
            Some(patch_sets) if !patch_sets.is_empty() => {
                let mut pooled: Vec<Var> = Vec::with_capacity(patch_sets.len());
                for patches in patch_sets {
                    if patches.ncols() != d {
                        return Err(Error::Shape(format!(
                            "class {cls}: patch dim {} != {d}",
                            patches.ncols()
                        )));
                    }
                    let p = tape.leaf(patches.clone());
                    let logits = tape.matmul_tb(query_vars[cls], p);
                    let w = tape.softmax_rows(logits);
                    pooled.push(tape.matmul(w, p));
                }
                let mut acc = pooled[0];
                for t in &pooled[1..] {
                    acc = tape.add(acc, *t);
                }
                let fresh = tape.scale(acc, 1.0 / patch_sets.len() as f64);
                let old_share = tape.scale(old, ema_momentum);
                let fresh_share = tape.scale(fresh, 1.0 - ema_momentum);
                let blended = tape.add(old_share, fresh_share);
                blended_states.insert(cls, tape.value(blended).clone());
                blended
            }
            _ => old,
        };
        state_vars.push(state);
    }

    // shared domain slot Φ(v_dom)
    let dom_mapped = tape.matmul_tb(dom, phi_w);
    let dom_slot = tape.add(dom_mapped, phi_b);

    let encode = |tape: &mut Tape, seq: Var| -> Var {
        let mean = tape.mean_rows(seq);
        let mapped = tape.matmul_tb(mean, w_text);
        let act = tape.tanh(mapped);
        tape.normalize_rows(act)
    };

    // known prompts and their projected slots
    let mut known_embeds: Vec<Var> = Vec::with_capacity(c);
    let mut reg_sum: Option<Var> = None;
    let mut min_abs_projected = f64::INFINITY;
    for cls in 0..c {
        let mut slots: Vec<Var> = Vec::with_capacity(k);
        for head in 0..k {
            let state_row = tape.row(state_vars[cls], head);
            let mapped = tape.matmul_tb(state_row, psi_w[head]);
            slots.push(tape.add(mapped, psi_b[head]));
        }
        let projected = tape.concat_rows(&slots);
        for &v in tape.value(projected).iter() {
            min_abs_projected = min_abs_projected.min(v.abs());
        }
        let slot_abs = tape.abs(projected);
        let slot_l1 = tape.sum_all(slot_abs);
        reg_sum = Some(match reg_sum {
            Some(acc) => tape.add(acc, slot_l1),
            None => slot_l1,
        });

        let name = tape.leaf(as_row(&inputs.classname_embeddings[cls]));
        let mut rows = Vec::with_capacity(k + 2);
        rows.push(dom_slot);
        rows.extend_from_slice(&slots);
        rows.push(name);
        let seq = tape.concat_rows(&rows);
        known_embeds.push(encode(&mut tape, seq));
    }
    // mean L1 over classes, scaled by the inner λ
    let reg_raw = reg_sum.expect("at least one class");
    let regularize = tape.scale(reg_raw, weights.lambda_inner / c as f64);

    // unknown prompt
    let m = params.unknown_tokens();
    let mut rows = Vec::with_capacity(m + 2);
    rows.push(dom_slot);
    for i in 0..m {
        rows.push(tape.row(unk_tokens, i));
    }
    rows.push(unk_label);
    let unk_seq = tape.concat_rows(&rows);
    let unknown_embed = encode(&mut tape, unk_seq);

    // prompt matrix
    let mut all_rows = known_embeds.clone();
    all_rows.push(unknown_embed);
    let prompts = tape.concat_rows(&all_rows);
    let prompt_matrix = tape.value(prompts).clone();

    // alignment
    let b = inputs.image_embeddings.nrows();
    let sims = tape.matmul_tb(images, prompts);
    let scaled = tape.scale(sims, 1.0 / weights.tau);
    let lse = tape.logsumexp_rows(scaled);
    let lse_sum = tape.sum_all(lse);
    let mut picked_sum: Option<Var> = None;
    for (i, &label) in inputs.labels.iter().enumerate() {
        let picked = tape.get(scaled, i, label);
        picked_sum = Some(match picked_sum {
            Some(acc) => tape.add(acc, picked),
            None => picked,
        });
    }
    let picked_sum = picked_sum.expect("nonempty batch");
    let align_diff = tape.sub(lse_sum, picked_sum);
    let align = tape.scale(align_diff, 1.0 / b as f64);

    // repulsion
    let n_reps = inputs.class_representatives.len();
    let mut reps = Array2::zeros((n_reps, d));
    for (i, r) in inputs.class_representatives.iter().enumerate() {
        if r.len() != d {
            return Err(Error::Shape("representative dimension mismatch".into()));
        }
        reps.row_mut(i).assign(r);
    }
    let reps_leaf = tape.leaf(reps);
    let rep_sims = tape.matmul_tb(unknown_embed, reps_leaf);
    let repulsion_sims = tape.value(rep_sims).iter().cloned().collect::<Vec<f64>>();
    let delta_leaf = tape.leaf(Array2::from_elem((1, n_reps), weights.delta));
    let margins = tape.sub(delta_leaf, rep_sims);
    let hinge = tape.relu(margins);
    let repulse = tape.sum_all(hinge);

    // cohesion
    let known_matrix = tape.concat_rows(&known_embeds);
    let centroid = tape.mean_rows(known_matrix);
    let coh_diff = tape.sub(unknown_embed, centroid);
    let cohere = tape.squared_norm(coh_diff);

    // weighted total
    let rep_term = tape.scale(repulse, weights.alpha);
    let coh_term = tape.scale(cohere, weights.beta);
    let reg_term = tape.scale(regularize, weights.gamma);
    let t1 = tape.add(align, rep_term);
    let t2 = tape.add(t1, coh_term);
    let total = tape.add(t2, reg_term);

    let breakdown = LossBreakdown {
        align: tape.scalar(align),
        repulse: tape.scalar(repulse),
        cohere: tape.scalar(cohere),
        regularize: tape.scalar(regularize),
        total: tape.scalar(total),
    };
    if !breakdown.total.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss: align {}, repulse {}, cohere {}, regularize {}",
            breakdown.align, breakdown.repulse, breakdown.cohere, breakdown.regularize
        )));
    }

    Ok(LossGraph {
        tape,
        vars: LossVars { align, repulse, cohere, regularize, total },
        breakdown,
        param_vars,
        blended_states,
        prompt_matrix,
        repulsion_sims,
        min_abs_projected,
    })
}

/// Maximum relative error between analytic and central-finite-difference
/// gradients of the selected loss, over every coordinate of every
/// trainable tensor.
pub fn gradient_check(
    params: &ModelParams,
    inputs: &BatchInputs,
    weights: &LossWeights,
    ema_momentum: f64,
    text_weight: &Array2<f64>,
    select: LossSelect,
    fd_step: f64,
) -> Result<f64> {
    let graph = build_loss_graph(params, inputs, weights, ema_momentum, text_weight)?;
    let grads = graph.tape.backward(select.var(&graph.vars));
    let mut worst: f64 = 0.0;
    for (id, var) in &graph.param_vars {
        let analytic = grads.get(&graph.tape, *var);
        let base = params.get_param(*id);
        for ((r, cidx), &a) in analytic.indexed_iter() {
            let mut plus = params.clone();
            let mut m = base.clone();
            m[(r, cidx)] += fd_step;
            plus.set_param(*id, m)?;
            let fp = build_loss_graph(&plus, inputs, weights, ema_momentum, text_weight)?;

            let mut minus = params.clone();
            let mut m = base.clone();
            m[(r, cidx)] -= fd_step;
            minus.set_param(*id, m)?;
            let fm = build_loss_graph(&minus, inputs, weights, ema_momentum, text_weight)?;

            let numeric =
                (select.value(&fp.breakdown) - select.value(&fm.breakdown)) / (2.0 * fd_step);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// Shape of a randomly sampled gradient-check configuration.
#[derive(Debug, Clone, Copy)]
pub struct CheckShape {
    pub classes: usize,
    pub heads: usize,
    pub dim: usize,
    pub patches: usize,
    pub unknown_tokens: usize,
    pub samples_per_class: usize,
    pub pseudo_samples: usize,
}

impl Default for CheckShape {
    fn default() -> Self {
        Self {
            classes: 3,
            heads: 2,
            dim: 6,
            patches: 5,
            unknown_tokens: 2,
            samples_per_class: 2,
            pseudo_samples: 2,
        }
    }
}

/// Deterministic random configuration for gradient verification: seeded
/// parameters, a seeded batch with every class present, and a seeded text
/// weight. Every returned tensor is finite and the image rows unit-norm.
pub fn random_check_setup(
    seed: u64,
    shape: &CheckShape,
) -> Result<(ModelParams, BatchInputs, Array2<f64>)> {
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    let d = shape.dim;
    let mut rng = crate::seeds::rng(seed, &["gradcheck".into()]);
    let normal = Normal::new(0.0, 1.0).unwrap();

    let mut params =
        ModelParams::init_seeded(shape.classes, shape.heads, shape.unknown_tokens, d, seed)?;
    // move projections off the identity and tokens off their tiny init so
    // the check exercises a generic point of the loss surface
    for id in params.param_ids() {
        let mut m = params.get_param(id);
        m.mapv_inplace(|v| v + 0.3 * normal.sample(&mut rng));
        params.set_param(id, m)?;
    }

    let unit = |rng: &mut rand_chacha::ChaCha8Rng| -> Array1<f64> {
        loop {
            let v: Array1<f64> = Array1::from_shape_fn(d, |_| rng.gen_range(-1.0..1.0));
            if let Ok(u) = crate::num::l2_normalized(v.view()) {
                return u;
            }
        }
    };

    let mut pooled_by_class = BTreeMap::new();
    let mut image_rows: Vec<Array1<f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut class_representatives = Vec::new();
    for cls in 0..shape.classes {
        let mut sets = Vec::new();
        let mut globals: Vec<Array1<f64>> = Vec::new();
        for _ in 0..shape.samples_per_class {
            let patches =
                Array2::from_shape_fn((shape.patches, d), |_| normal.sample(&mut rng));
            let global = crate::num::l2_normalized(
                crate::num::mean_rows(patches.view())?.view(),
            )?;
            globals.push(global.clone());
            image_rows.push(global);
            labels.push(cls);
            sets.push(patches);
        }
        pooled_by_class.insert(cls, sets);
        let mut mean = Array1::zeros(d);
        for g in &globals {
            mean += g;
        }
        mean /= globals.len() as f64;
        class_representatives.push(crate::num::l2_normalized(mean.view())?);
    }
    for _ in 0..shape.pseudo_samples {
        image_rows.push(unit(&mut rng));
        labels.push(shape.classes);
    }
    let mut image_embeddings = Array2::zeros((image_rows.len(), d));
    for (i, r) in image_rows.iter().enumerate() {
        image_embeddings.row_mut(i).assign(r);
    }

    let classname_embeddings: Vec<Array1<f64>> =
        (0..shape.classes).map(|_| unit(&mut rng)).collect();
    let state_old: Vec<Array2<f64>> = (0..shape.classes)
        .map(|_| Array2::from_shape_fn((shape.heads, d), |_| 0.5 * normal.sample(&mut rng)))
        .collect();
    let domain_vector = Array1::from_shape_fn(d, |_| 0.5 * normal.sample(&mut rng));

    let mut w_rng = crate::seeds::rng(seed, &["gradcheck_text".into()]);
    let scale = 1.0 / (d as f64).sqrt();
    let text_weight =
        Array2::from_shape_fn((d, d), |_| scale * normal.sample(&mut w_rng));

    let inputs = BatchInputs {
        image_embeddings,
        labels,
        pooled_by_class,
        class_representatives,
        domain_vector,
        classname_embeddings,
        state_old,
    };
    Ok((params, inputs, text_weight))
}
