//! Prompt assembly: enhanced known-class prompts and the learnable
//! unknown prompt.
//!
//! A known-class prompt is the token sequence
//! `[Φ(v_dom)] [Ψ_1(v_sem^(1))] .. [Ψ_K(v_sem^(K))] [classname]`
//! where Φ and the Ψ_k are learnable affine d→d maps initialized at the
//! identity, so training starts from plain un-enhanced prompts and learns
//! the enhancement delta. The unknown prompt is
//! `[Φ(v_dom)] [v_1 .. v_m] [unknown]` with the v_i and the unknown label
//! token trained directly.

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, Normal};

use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::seeds;
use crate::semantic::{SemanticStateBank, SemanticTokenSet};

/// Default number of learnable unknown-prompt tokens m.
pub const DEFAULT_UNKNOWN_TOKENS: usize = 3;

/// Standard deviation for unknown-token initialization.
pub const UNKNOWN_INIT_STD: f64 = 0.02;

/// Learnable affine maps: Φ for the domain token, Ψ_k per semantic head.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionParams {
    pub phi_weight: Array2<f64>,
    pub phi_bias: Array1<f64>,
    pub psi_weights: Vec<Array2<f64>>,
    pub psi_biases: Vec<Array1<f64>>,
}

impl ProjectionParams {
    /// Identity weights, zero biases.
    pub fn identity(heads: usize, dim: usize) -> Self {
        Self {
            phi_weight: Array2::eye(dim),
            phi_bias: Array1::zeros(dim),
            psi_weights: (0..heads).map(|_| Array2::eye(dim)).collect(),
            psi_biases: (0..heads).map(|_| Array1::zeros(dim)).collect(),
        }
    }

    pub fn heads(&self) -> usize {
        self.psi_weights.len()
    }

    pub fn dim(&self) -> usize {
        self.phi_weight.ncols()
    }

    pub fn apply_phi(&self, v: &Array1<f64>) -> Array1<f64> {
        self.phi_weight.dot(v) + &self.phi_bias
    }

    pub fn apply_psi(&self, head: usize, v: &Array1<f64>) -> Array1<f64> {
        self.psi_weights[head].dot(v) + &self.psi_biases[head]
    }

    /// All K semantic slots for a state, stacked K×d.
    pub fn project_semantic(&self, state: &SemanticTokenSet) -> Result<Array2<f64>> {
        if state.heads() != self.heads() {
            return Err(Error::Shape(format!(
                "state has {} heads, projections have {}",
                state.heads(),
                self.heads()
            )));
        }
        let d = self.dim();
        let mut out = Array2::zeros((self.heads(), d));
        for k in 0..self.heads() {
            let row = self.apply_psi(k, &state.tokens.row(k).to_owned());
            out.row_mut(k).assign(&row);
        }
        Ok(out)
    }
}

/// The m learnable unknown tokens v_1..v_m plus the unknown label token.
#[derive(Debug, Clone, PartialEq)]
pub struct UnknownTokenBank {
    pub tokens: Array2<f64>,
    pub label_token: Array1<f64>,
}

impl UnknownTokenBank {
    pub fn new_seeded(m: usize, dim: usize, seed: u64) -> Result<Self> {
        if m < 1 {
            return Err(Error::Config("unknown prompt needs m >= 1 tokens".into()));
        }
        let normal = Normal::new(0.0, UNKNOWN_INIT_STD).unwrap();
        let mut rng = seeds::rng(seed, &["unknown_tokens".into()]);
        let tokens = Array2::from_shape_fn((m, dim), |_| normal.sample(&mut rng));
        let mut label_rng = seeds::rng(seed, &["unknown_label".into()]);
        let label_token = Array1::from_shape_fn(dim, |_| normal.sample(&mut label_rng));
        Ok(Self { tokens, label_token })
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn dim(&self) -> usize {
        self.tokens.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    Known(usize),
    Unknown,
}

/// Where a prompt's domain slot came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainSource {
    /// A single domain's token.
    Domain(usize),
    /// Mean of all source-domain tokens (inference on an unseen target).
    SourceMean,
}

/// An assembled token sequence ready for the text encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    pub tokens: Array2<f64>,
    pub kind: PromptKind,
    pub domain_source: DomainSource,
}

impl Prompt {
    pub fn len(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.nrows() == 0
    }

    /// Copy with the K semantic slot rows set to zero, keeping sequence
    /// length. Used by the enhancement-discrepancy diagnostic; only
    /// meaningful for known prompts.
    pub fn with_zeroed_semantic_slots(&self, heads: usize) -> Prompt {
        let mut tokens = self.tokens.clone();
        for k in 0..heads {
            tokens.row_mut(1 + k).fill(0.0);
        }
        Prompt { tokens, ..self.clone() }
    }
}

/// `[Φ(v_dom)] [Ψ_1(s_1) .. Ψ_K(s_K)] [classname]`.
pub fn build_known_prompt(
    class_id: usize,
    domain_vector: &Array1<f64>,
    domain_source: DomainSource,
    states: &SemanticStateBank,
    proj: &ProjectionParams,
    classname_embedding: &Array1<f64>,
) -> Result<Prompt> {
    let state = states.get(class_id)?;
    let d = proj.dim();
    if domain_vector.len() != d || classname_embedding.len() != d || state.dim() != d {
        return Err(Error::Shape(format!(
            "prompt slot dimensions disagree (domain {}, classname {}, state {}, proj {d})",
            domain_vector.len(),
            classname_embedding.len(),
            state.dim()
        )));
    }
    let k = proj.heads();
    let mut tokens = Array2::zeros((1 + k + 1, d));
    tokens.row_mut(0).assign(&proj.apply_phi(domain_vector));
    let semantic = proj.project_semantic(state)?;
    for h in 0..k {
        tokens.row_mut(1 + h).assign(&semantic.row(h));
    }
    tokens.row_mut(1 + k).assign(classname_embedding);
    Ok(Prompt { tokens, kind: PromptKind::Known(class_id), domain_source })
}

/// `[Φ(v_dom)] [v_1 .. v_m] [unknown]`.
pub fn build_unknown_prompt(
    domain_vector: &Array1<f64>,
    domain_source: DomainSource,
    bank: &UnknownTokenBank,
    proj: &ProjectionParams,
) -> Result<Prompt> {
    let d = proj.dim();
    if domain_vector.len() != d || bank.dim() != d {
        return Err(Error::Shape(format!(
            "unknown prompt dimensions disagree (domain {}, bank {}, proj {d})",
            domain_vector.len(),
            bank.dim()
        )));
    }
    let m = bank.num_tokens();
    let mut tokens = Array2::zeros((1 + m + 1, d));
    tokens.row_mut(0).assign(&proj.apply_phi(domain_vector));
    for i in 0..m {
        tokens.row_mut(1 + i).assign(&bank.tokens.row(i));
    }
    tokens.row_mut(1 + m).assign(&bank.label_token);
    Ok(Prompt { tokens, kind: PromptKind::Unknown, domain_source })
}

/// Embed all C known prompts plus the unknown prompt into a (C+1)×d matrix
/// of unit rows; row c is class c, row C is the unknown prompt.
pub fn embed_all_prompts(
    class_names: &[String],
    domain_vector: &Array1<f64>,
    domain_source: DomainSource,
    states: &SemanticStateBank,
    bank: &UnknownTokenBank,
    proj: &ProjectionParams,
    backend: &Backend,
) -> Result<Array2<f64>> {
    if class_names.is_empty() {
        return Err(Error::Data("no known classes to embed".into()));
    }
    let d = backend.dim();
    let mut matrix = Array2::zeros((class_names.len() + 1, d));
    for (c, name) in class_names.iter().enumerate() {
        let classname = backend.classname_embedding(name)?;
        let prompt =
            build_known_prompt(c, domain_vector, domain_source, states, proj, &classname)?;
        let e = backend.encode_token_sequence(&prompt.tokens)?;
        matrix.row_mut(c).assign(e.vector());
    }
    let unknown = build_unknown_prompt(domain_vector, domain_source, bank, proj)?;
    let e = backend.encode_token_sequence(&unknown.tokens)?;
    matrix.row_mut(class_names.len()).assign(e.vector());
    Ok(matrix)
}

/// Mean of per-domain source tokens: the inference-time domain slot for an
/// unseen target.
pub fn mean_domain_vector(domain_vectors: &[Array1<f64>]) -> Result<Array1<f64>> {
    let first = domain_vectors
        .first()
        .ok_or_else(|| Error::Data("no domain tokens to average".into()))?;
    let mut sum = Array1::zeros(first.len());
    for v in domain_vectors {
        if v.len() != first.len() {
            return Err(Error::Shape("domain token dimensions disagree".into()));
        }
        sum += v;
    }
    Ok(sum / domain_vectors.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendSpec, SyntheticBackend};
    use approx::assert_abs_diff_eq;
    use ndarray::{arr1, arr2};

    fn states_with(dim: usize, heads: usize, classes: usize, fill: f64) -> SemanticStateBank {
        let mut bank = SemanticStateBank::new(classes);
        for c in 0..classes {
            bank.set(
                c,
                SemanticTokenSet {
                    tokens: Array2::from_elem((heads, dim), fill + c as f64),
                },
            );
        }
        bank
    }

    #[test]
    fn identity_projection_passes_slots_through() {
        let d = 3;
        let k = 2;
        let proj = ProjectionParams::identity(k, d);
        let mut states = SemanticStateBank::new(1);
        let sem = arr2(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        states.set(0, SemanticTokenSet { tokens: sem.clone() });
        let name = arr1(&[7.0, 8.0, 9.0]);
        let zero_dom = Array1::zeros(d);
        let p = build_known_prompt(0, &zero_dom, DomainSource::Domain(0), &states, &proj, &name)
            .unwrap();
        assert_eq!(p.len(), 1 + k + 1);
        assert_eq!(p.tokens.row(0).to_owned(), zero_dom);
        assert_eq!(p.tokens.row(1).to_owned(), sem.row(0).to_owned());
        assert_eq!(p.tokens.row(2).to_owned(), sem.row(1).to_owned());
        assert_eq!(p.tokens.row(3).to_owned(), name);
        assert_eq!(p.kind, PromptKind::Known(0));
    }

    #[test]
    fn four_heads_give_four_semantic_slots() {
        let d = 5;
        let proj = ProjectionParams::identity(4, d);
        let states = states_with(d, 4, 1, 0.5);
        let p = build_known_prompt(
            0,
            &Array1::zeros(d),
            DomainSource::SourceMean,
            &states,
            &proj,
            &Array1::zeros(d),
        )
        .unwrap();
        assert_eq!(p.len(), 6);
    }

    #[test]
    fn changing_one_semantic_head_moves_one_position() {
        let d = 4;
        let k = 3;
        let proj = ProjectionParams::identity(k, d);
        let mut states = states_with(d, k, 1, 0.25);
        let name = arr1(&[0.1, 0.2, 0.3, 0.4]);
        let dom = arr1(&[1.0, -1.0, 0.5, 0.0]);
        let p0 = build_known_prompt(0, &dom, DomainSource::Domain(0), &states, &proj, &name)
            .unwrap();
        let mut tokens = states.get(0).unwrap().tokens.clone();
        tokens.row_mut(1).fill(9.0);
        states.set(0, SemanticTokenSet { tokens });
        let p1 = build_known_prompt(0, &dom, DomainSource::Domain(0), &states, &proj, &name)
            .unwrap();
        for row in 0..p0.len() {
            let same = p0.tokens.row(row) == p1.tokens.row(row);
            // head index 1 occupies sequence position 2
            assert_eq!(same, row != 2, "row {row}");
        }
    }

    #[test]
    fn missing_state_is_an_error() {
        let d = 3;
        let proj = ProjectionParams::identity(2, d);
        let states = SemanticStateBank::new(2);
        let err = build_known_prompt(
            1,
            &Array1::zeros(d),
            DomainSource::Domain(0),
            &states,
            &proj,
            &Array1::zeros(d),
        )
        .unwrap_err();
        assert!(err.to_string().contains("no semantic state"));
    }

    #[test]
    fn unknown_prompt_has_expected_layout() {
        let d = 4;
        let bank = UnknownTokenBank::new_seeded(DEFAULT_UNKNOWN_TOKENS, d, 3).unwrap();
        let proj = ProjectionParams::identity(2, d);
        let dom = arr1(&[1.0, 0.0, 0.0, 0.0]);
        let p = build_unknown_prompt(&dom, DomainSource::Domain(1), &bank, &proj).unwrap();
        assert_eq!(p.len(), 1 + 3 + 1);
        assert_eq!(p.tokens.row(0).to_owned(), dom);
        assert_eq!(p.tokens.row(1).to_owned(), bank.tokens.row(0).to_owned());
        assert_eq!(p.tokens.row(4).to_owned(), bank.label_token);
        assert_eq!(p.kind, PromptKind::Unknown);
    }

    #[test]
    fn bank_init_is_seeded_and_validates_m() {
        let a = UnknownTokenBank::new_seeded(3, 6, 11).unwrap();
        let b = UnknownTokenBank::new_seeded(3, 6, 11).unwrap();
        assert_eq!(a, b);
        assert!(UnknownTokenBank::new_seeded(0, 6, 11).is_err());
    }

    fn test_backend(d: usize) -> Backend {
        Backend::Synthetic(SyntheticBackend::new(BackendSpec::synthetic(d, 4, 42)))
    }

    #[test]
    fn prompt_matrix_has_c_plus_one_unit_rows() {
        let d = 6;
        let k = 2;
        let backend = test_backend(d);
        let proj = ProjectionParams::identity(k, d);
        let states = states_with(d, k, 1, 0.3);
        let bank = UnknownTokenBank::new_seeded(3, d, 7).unwrap();
        let dom = Array1::from_elem(d, 0.1);
        let m = embed_all_prompts(
            &["class0".to_string()],
            &dom,
            DomainSource::SourceMean,
            &states,
            &bank,
            &proj,
            &backend,
        )
        .unwrap();
        assert_eq!(m.dim(), (2, d));
        for row in m.rows() {
            assert_abs_diff_eq!(crate::num::l2_norm(row), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn identical_prompt_inputs_give_identical_rows() {
        let d = 5;
        let k = 2;
        let backend = test_backend(d);
        let proj = ProjectionParams::identity(k, d);
        // two classes share the same name and the same state
        let mut states = SemanticStateBank::new(2);
        let tokens = Array2::from_elem((k, d), 0.4);
        states.set(0, SemanticTokenSet { tokens: tokens.clone() });
        states.set(1, SemanticTokenSet { tokens });
        let bank = UnknownTokenBank::new_seeded(2, d, 1).unwrap();
        let dom = Array1::from_elem(d, -0.2);
        let m = embed_all_prompts(
            &["same".to_string(), "same".to_string()],
            &dom,
            DomainSource::SourceMean,
            &states,
            &bank,
            &proj,
            &backend,
        )
        .unwrap();
        assert_eq!(m.row(0), m.row(1));
    }

    #[test]
    fn perturbing_one_state_changes_only_that_row() {
        let d = 6;
        let k = 2;
        let backend = test_backend(d);
        let proj = ProjectionParams::identity(k, d);
        let mut states = states_with(d, k, 3, 0.2);
        let bank = UnknownTokenBank::new_seeded(3, d, 5).unwrap();
        let dom = Array1::from_elem(d, 0.05);
        let names: Vec<String> = (0..3).map(|c| format!("c{c}")).collect();
        let before = embed_all_prompts(
            &names,
            &dom,
            DomainSource::SourceMean,
            &states,
            &bank,
            &proj,
            &backend,
        )
        .unwrap();
        let mut tokens = states.get(1).unwrap().tokens.clone();
        tokens[(0, 0)] += 0.7;
        states.set(1, SemanticTokenSet { tokens });
        let after = embed_all_prompts(
            &names,
            &dom,
            DomainSource::SourceMean,
            &states,
            &bank,
            &proj,
            &backend,
        )
        .unwrap();
        for c in 0..4 {
            let same = before.row(c) == after.row(c);
            assert_eq!(same, c != 1, "row {c}");
        }
    }

    #[test]
    fn zeroed_slots_clear_exactly_the_semantic_rows() {
        let d = 3;
        let k = 2;
        let proj = ProjectionParams::identity(k, d);
        let states = states_with(d, k, 1, 1.5);
        let dom = arr1(&[0.3, 0.3, 0.3]);
        let name = arr1(&[1.0, 0.0, 0.0]);
        let p = build_known_prompt(0, &dom, DomainSource::Domain(0), &states, &proj, &name)
            .unwrap();
        let z = p.with_zeroed_semantic_slots(k);
        assert_eq!(z.tokens.row(0), p.tokens.row(0));
        assert_eq!(z.tokens.row(3), p.tokens.row(3));
        assert!(z.tokens.row(1).iter().all(|&v| v == 0.0));
        assert!(z.tokens.row(2).iter().all(|&v| v == 0.0));
        assert_eq!(z.len(), p.len());
    }

    #[test]
    fn mean_domain_vector_averages() {
        let vs = vec![arr1(&[1.0, 0.0]), arr1(&[0.0, 1.0]), arr1(&[2.0, 2.0])];
        let m = mean_domain_vector(&vs).unwrap();
        assert_eq!(m, arr1(&[1.0, 1.0]));
        assert!(mean_domain_vector(&[]).is_err());
    }
}
