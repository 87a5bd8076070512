//! K-head attention pooling of patch embeddings into semantic tokens, plus
//! domain tokens and the per-class EMA state that feeds prompt assembly.
//!
//! Each head k owns a learnable query q^(k). Head k's weight over patch i
//! is a softmax over the dot products q^(k)·f_i, and its semantic token is
//! the weighted sum of patches. Pooling is computed per image with the
//! ground-truth class's queries and folded into that class's running EMA
//! state, which is what prompts actually consume: it stays available at
//! inference when no labeled image exists.

use ndarray::{Array1, Array2, Axis};
use rand_distr::{Distribution, Normal};

use crate::backend::PatchEmbeddingSet;
use crate::error::{Error, Result};
use crate::num;
use crate::seeds;

/// Standard deviation for query initialization.
pub const QUERY_INIT_STD: f64 = 0.02;

/// Default number of attention heads K.
pub const DEFAULT_SEMANTIC_HEADS: usize = 4;

/// Per-class banks of K query vectors, shared across domains.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryBank {
    /// One K×d matrix per class.
    queries: Vec<Array2<f64>>,
}

impl QueryBank {
    pub fn new_seeded(classes: usize, heads: usize, dim: usize, seed: u64) -> Self {
        let normal = Normal::new(0.0, QUERY_INIT_STD).unwrap();
        let queries = (0..classes)
            .map(|c| {
                let mut rng = seeds::rng(seed, &["queries".into(), c.into()]);
                Array2::from_shape_fn((heads, dim), |_| normal.sample(&mut rng))
            })
            .collect();
        Self { queries }
    }

    pub fn from_matrices(queries: Vec<Array2<f64>>) -> Result<Self> {
        if queries.is_empty() {
            return Err(Error::Shape("query bank needs at least one class".into()));
        }
        let shape = queries[0].dim();
        for (c, q) in queries.iter().enumerate() {
            if q.dim() != shape {
                return Err(Error::Shape(format!(
                    "class {c} query shape {:?} differs from {:?}",
                    q.dim(),
                    shape
                )));
            }
        }
        Ok(Self { queries })
    }

    pub fn num_classes(&self) -> usize {
        self.queries.len()
    }

    pub fn heads(&self) -> usize {
        self.queries[0].nrows()
    }

    pub fn dim(&self) -> usize {
        self.queries[0].ncols()
    }

    pub fn class(&self, c: usize) -> &Array2<f64> {
        &self.queries[c]
    }

    pub fn class_mut(&mut self, c: usize) -> &mut Array2<f64> {
        &mut self.queries[c]
    }

    pub fn matrices(&self) -> &[Array2<f64>] {
        &self.queries
    }
}

/// K×N attention weights; each row is a distribution over patches.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    weights: Array2<f64>,
}

impl AttentionWeights {
    pub fn new(weights: Array2<f64>) -> Result<Self> {
        for (k, row) in weights.rows().into_iter().enumerate() {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::Numeric(format!(
                    "attention row {k} sums to {sum}, not 1"
                )));
            }
            if row.iter().any(|&w| !(0.0..=1.0).contains(&w)) {
                return Err(Error::Numeric(format!(
                    "attention row {k} has weights outside [0,1]"
                )));
            }
        }
        Ok(Self { weights })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn heads(&self) -> usize {
        self.weights.nrows()
    }

    pub fn num_patches(&self) -> usize {
        self.weights.ncols()
    }

    /// CSV with one row per head, one column per patch.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.weights.rows() {
            let cells: Vec<String> = row.iter().map(|w| format!("{w:.12}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// K pooled semantic tokens, one per head.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticTokenSet {
    pub tokens: Array2<f64>,
}

impl SemanticTokenSet {
    pub fn zeros(heads: usize, dim: usize) -> Self {
        Self { tokens: Array2::zeros((heads, dim)) }
    }

    pub fn heads(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn dim(&self) -> usize {
        self.tokens.ncols()
    }
}

/// Mean patch feature of one domain: its style summary.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainToken {
    pub vector: Array1<f64>,
    pub domain_id: usize,
}

/// Softmax over q^(k)·f_i per head, with max-subtraction.
pub fn compute_attention_weights(
    queries: &Array2<f64>,
    patches: &Array2<f64>,
) -> Result<AttentionWeights> {
    if queries.ncols() != patches.ncols() {
        return Err(Error::Shape(format!(
            "query dim {} != patch dim {}",
            queries.ncols(),
            patches.ncols()
        )));
    }
    if patches.nrows() == 0 {
        return Err(Error::Shape("no patches to attend over".into()));
    }
    if !num::all_finite(queries.view()) || !num::all_finite(patches.view()) {
        return Err(Error::Numeric("non-finite attention inputs".into()));
    }
    let logits = queries.dot(&patches.t());
    let mut weights = Array2::zeros(logits.dim());
    for (k, row) in logits.rows().into_iter().enumerate() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (i, e) in exps.iter().enumerate() {
            weights[(k, i)] = e / sum;
        }
    }
    AttentionWeights::new(weights)
}

/// Token k = Σ_i ω_i^(k) f_i.
pub fn pool_semantic_tokens(
    weights: &AttentionWeights,
    patches: &Array2<f64>,
) -> Result<SemanticTokenSet> {
    if weights.num_patches() != patches.nrows() {
        return Err(Error::Shape(format!(
            "attention over {} patches applied to {} patch rows",
            weights.num_patches(),
            patches.nrows()
        )));
    }
    Ok(SemanticTokenSet { tokens: weights.matrix().dot(patches) })
}

/// Mean over every patch row of every sample in the domain.
pub fn compute_domain_token(samples: &[PatchEmbeddingSet]) -> Result<DomainToken> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Data("cannot compute a domain token from zero samples".into()))?;
    let domain_id = first.domain_id;
    let dim = first.dim();
    let mut sum = Array1::<f64>::zeros(dim);
    let mut rows = 0usize;
    for s in samples {
        if s.domain_id != domain_id {
            return Err(Error::Data(format!(
                "domain token over mixed domains ({} vs {})",
                s.domain_id, domain_id
            )));
        }
        if s.dim() != dim {
            return Err(Error::Shape(format!(
                "{}: patch dim {} != {}",
                s.image_id,
                s.dim(),
                dim
            )));
        }
        sum += &s.patches.sum_axis(Axis(0));
        rows += s.num_patches();
    }
    Ok(DomainToken { vector: sum / rows as f64, domain_id })
}

/// Per-class EMA semantic states. A class has no state until the first
/// fold, which adopts the fresh tokens outright; later folds blend.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticStateBank {
    states: Vec<Option<SemanticTokenSet>>,
}

impl SemanticStateBank {
    pub fn new(classes: usize) -> Self {
        Self { states: vec![None; classes] }
    }

    pub fn num_classes(&self) -> usize {
        self.states.len()
    }

    pub fn get(&self, class_id: usize) -> Result<&SemanticTokenSet> {
        self.states
            .get(class_id)
            .ok_or_else(|| Error::Data(format!("class id {class_id} out of range")))?
            .as_ref()
            .ok_or_else(|| {
                Error::Data(format!(
                    "class {class_id} has no semantic state yet (never observed)"
                ))
            })
    }

    pub fn maybe(&self, class_id: usize) -> Option<&SemanticTokenSet> {
        self.states.get(class_id).and_then(Option::as_ref)
    }

    pub fn set(&mut self, class_id: usize, tokens: SemanticTokenSet) {
        self.states[class_id] = Some(tokens);
    }

    pub fn fold(
        &mut self,
        class_id: usize,
        fresh: &SemanticTokenSet,
        momentum: f64,
    ) -> Result<()> {
        if class_id >= self.states.len() {
            return Err(Error::Data(format!("class id {class_id} out of range")));
        }
        self.states[class_id] = Some(match &self.states[class_id] {
            Some(running) => class_semantic_state_update(running, fresh, momentum)?,
            None => fresh.clone(),
        });
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.states.iter().all(Option::is_some)
    }

    pub fn states(&self) -> &[Option<SemanticTokenSet>] {
        &self.states
    }
}

/// running·momentum + fresh·(1−momentum).
pub fn class_semantic_state_update(
    running: &SemanticTokenSet,
    fresh: &SemanticTokenSet,
    momentum: f64,
) -> Result<SemanticTokenSet> {
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::Config(format!(
            "EMA momentum must lie in [0,1), got {momentum}"
        )));
    }
    if running.tokens.dim() != fresh.tokens.dim() {
        return Err(Error::Shape(format!(
            "EMA update over mismatched shapes {:?} vs {:?}",
            running.tokens.dim(),
            fresh.tokens.dim()
        )));
    }
    Ok(SemanticTokenSet {
        tokens: &running.tokens * momentum + &fresh.tokens * (1.0 - momentum),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use approx::assert_abs_diff_eq;
    use ndarray::{arr1, arr2};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn identical_patches_give_uniform_weights() {
        let q = arr2(&[[0.3, -1.2], [2.0, 0.5]]);
        let patches = arr2(&[[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]);
        let w = compute_attention_weights(&q, &patches).unwrap();
        for &v in w.matrix().iter() {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn hand_softmax_of_unit_logits() {
        let q = arr2(&[[1.0, 0.0]]);
        let patches = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let w = compute_attention_weights(&q, &patches).unwrap();
        assert_abs_diff_eq!(w.matrix()[(0, 0)], 0.7311, epsilon = 1e-4);
        assert_abs_diff_eq!(w.matrix()[(0, 1)], 0.2689, epsilon = 1e-4);
    }

    #[test]
    fn equal_logit_shift_leaves_weights_unchanged() {
        let q = arr2(&[[2.0, -1.0]]);
        let patches = arr2(&[[0.4, 0.1], [-0.3, 0.8], [1.1, -0.2]]);
        let w0 = compute_attention_weights(&q, &patches).unwrap();
        // shifting every patch by c·q/‖q‖² adds c to every logit
        let c = 37.5;
        let qv = arr1(&[2.0, -1.0]);
        let shift = &qv * (c / qv.dot(&qv));
        let shifted = &patches + &shift.broadcast((3, 2)).unwrap();
        let w1 = compute_attention_weights(&q, &shifted).unwrap();
        for (a, b) in w0.matrix().iter().zip(w1.matrix().iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn large_logits_stay_finite() {
        let q = arr2(&[[1000.0, 0.0]]);
        let patches = arr2(&[[1000.0, 0.0], [0.0, 1000.0]]);
        let w = compute_attention_weights(&q, &patches).unwrap();
        assert!(num::all_finite(w.matrix().view()));
        assert_abs_diff_eq!(w.matrix()[(0, 0)], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let q = arr2(&[[f64::NAN, 0.0]]);
        let patches = arr2(&[[1.0, 0.0]]);
        assert!(compute_attention_weights(&q, &patches).is_err());
    }

    #[test]
    fn one_hot_weights_select_a_patch() {
        let w = AttentionWeights::new(arr2(&[[0.0, 1.0, 0.0]])).unwrap();
        let patches = arr2(&[[1.0, 1.0], [5.0, -2.0], [0.0, 9.0]]);
        let t = pool_semantic_tokens(&w, &patches).unwrap();
        assert_eq!(t.tokens.row(0).to_owned(), arr1(&[5.0, -2.0]));
    }

    #[test]
    fn midpoint_weights_average_two_patches() {
        let w = AttentionWeights::new(arr2(&[[0.5, 0.5]])).unwrap();
        let patches = arr2(&[[2.0, 0.0], [0.0, 2.0]]);
        let t = pool_semantic_tokens(&w, &patches).unwrap();
        assert_eq!(t.tokens.row(0).to_owned(), arr1(&[1.0, 1.0]));
    }

    #[test]
    fn pooling_matches_naive_double_loop() {
        let mut rng = seeds::rng(5, &["pool".into()]);
        let k = 4;
        let n = 7;
        let d = 3;
        let q = Array2::from_shape_fn((k, d), |_| rng.gen_range(-1.0..1.0));
        let patches = Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0));
        let w = compute_attention_weights(&q, &patches).unwrap();
        let t = pool_semantic_tokens(&w, &patches).unwrap();
        for head in 0..k {
            for j in 0..d {
                let mut naive = 0.0;
                for i in 0..n {
                    naive += w.matrix()[(head, i)] * patches[(i, j)];
                }
                assert_abs_diff_eq!(t.tokens[(head, j)], naive, epsilon = 1e-12);
            }
        }
    }

    fn patch_set(m: Array2<f64>, id: &str, domain: usize) -> PatchEmbeddingSet {
        PatchEmbeddingSet::new(m, id.into(), domain).unwrap()
    }

    #[test]
    fn domain_token_of_two_unit_patches() {
        let s = patch_set(arr2(&[[1.0, 0.0], [0.0, 1.0]]), "a", 2);
        let t = compute_domain_token(&[s]).unwrap();
        assert_eq!(t.vector, arr1(&[0.5, 0.5]));
        assert_eq!(t.domain_id, 2);
    }

    #[test]
    fn domain_token_of_constant_patches_is_that_constant() {
        let s = patch_set(arr2(&[[3.0, -1.0], [3.0, -1.0]]), "a", 0);
        let t = compute_domain_token(&[s]).unwrap();
        assert_eq!(t.vector, arr1(&[3.0, -1.0]));
    }

    #[test]
    fn domain_token_equals_flat_mean_over_all_rows() {
        let mut rng = seeds::rng(8, &["dom".into()]);
        let sets: Vec<PatchEmbeddingSet> = (0..3)
            .map(|i| {
                let m = Array2::from_shape_fn((4, 5), |_| rng.gen_range(-2.0..2.0));
                patch_set(m, &format!("s{i}"), 1)
            })
            .collect();
        let t = compute_domain_token(&sets).unwrap();
        let mut all = Array2::zeros((0, 5));
        for s in &sets {
            all.append(Axis(0), s.patches.view()).unwrap();
        }
        let flat = all.mean_axis(Axis(0)).unwrap();
        for (a, b) in t.vector.iter().zip(flat.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn empty_domain_has_no_token() {
        assert!(compute_domain_token(&[]).is_err());
    }

    #[test]
    fn state_bank_warm_starts_then_blends() {
        let mut bank = SemanticStateBank::new(2);
        assert!(bank.get(0).is_err());
        assert!(!bank.is_complete());
        let fresh = SemanticTokenSet { tokens: arr2(&[[4.0]]) };
        bank.fold(0, &fresh, 0.9).unwrap();
        assert_eq!(bank.get(0).unwrap().tokens, arr2(&[[4.0]]));
        let next = SemanticTokenSet { tokens: arr2(&[[2.0]]) };
        bank.fold(0, &next, 0.9).unwrap();
        assert_abs_diff_eq!(bank.get(0).unwrap().tokens[(0, 0)], 3.8, epsilon = 1e-12);
        assert!(bank.get(1).is_err());
        bank.fold(1, &next, 0.9).unwrap();
        assert!(bank.is_complete());
        assert!(bank.fold(2, &next, 0.9).is_err());
    }

    #[test]
    fn ema_update_is_the_stated_blend() {
        let running = SemanticTokenSet { tokens: arr2(&[[2.0]]) };
        let fresh = SemanticTokenSet { tokens: arr2(&[[4.0]]) };
        let out = class_semantic_state_update(&running, &fresh, 0.9).unwrap();
        assert_abs_diff_eq!(out.tokens[(0, 0)], 2.2, epsilon = 1e-12);
        let out0 = class_semantic_state_update(&running, &fresh, 0.0).unwrap();
        assert_eq!(out0.tokens, fresh.tokens);
        assert!(class_semantic_state_update(&running, &fresh, 1.0).is_err());
    }

    #[test]
    fn pooled_token_gradients_match_finite_differences() {
        let k = 2;
        let n = 4;
        let d = 3;
        let mut rng = seeds::rng(13, &["grad".into()]);
        let q0 = Array2::from_shape_fn((k, d), |_| rng.gen_range(-0.5..0.5));
        let patches = Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0));
        let target = Array2::from_shape_fn((k, d), |_| rng.gen_range(-1.0..1.0));

        let objective = |q: &Array2<f64>| -> f64 {
            let w = compute_attention_weights(q, &patches).unwrap();
            let t = pool_semantic_tokens(&w, &patches).unwrap();
            (&t.tokens * &target).sum()
        };

        let mut tape = Tape::new();
        let qv = tape.leaf(q0.clone());
        let pv = tape.leaf(patches.clone());
        let tv = tape.leaf(target.clone());
        let logits = tape.matmul_tb(qv, pv);
        let weights = tape.softmax_rows(logits);
        let tokens = tape.matmul(weights, pv);
        let prod = tape.mul(tokens, tv);
        let score = tape.sum_all(prod);
        assert_abs_diff_eq!(tape.scalar(score), objective(&q0), epsilon = 1e-12);

        let grads = tape.backward(score);
        let analytic = grads.get(&tape, qv);
        let step = 1e-5;
        for r in 0..k {
            for c in 0..d {
                let mut plus = q0.clone();
                plus[(r, c)] += step;
                let mut minus = q0.clone();
                minus[(r, c)] -= step;
                let numeric = (objective(&plus) - objective(&minus)) / (2.0 * step);
                let denom = analytic[(r, c)].abs().max(numeric.abs()).max(1e-6);
                assert!(
                    ((analytic[(r, c)] - numeric) / denom).abs() < 1e-4,
                    "query ({r},{c})"
                );
            }
        }
    }

    #[test]
    fn query_bank_init_is_seeded_and_small() {
        let a = QueryBank::new_seeded(3, 4, 8, 17);
        let b = QueryBank::new_seeded(3, 4, 8, 17);
        assert_eq!(a, b);
        assert_eq!(a.num_classes(), 3);
        assert_eq!(a.heads(), 4);
        assert_eq!(a.dim(), 8);
        let max = a
            .matrices()
            .iter()
            .flat_map(|m| m.iter())
            .fold(0.0f64, |acc, &v| acc.max(v.abs()));
        assert!(max < 0.2, "init too large: {max}");
    }

    #[test]
    fn csv_export_has_one_row_per_head() {
        let w = AttentionWeights::new(arr2(&[[0.25, 0.75], [0.5, 0.5]])).unwrap();
        let csv = w.to_csv();
        let lines: Vec<&str> = csv.trim_end().split('\n').collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].split(',').count(), 2);
        assert!(lines[0].starts_with("0.25"));
    }

    proptest! {
        #[test]
        fn pooled_tokens_stay_in_patch_hull(
            qs in proptest::collection::vec(-2.0f64..2.0, 6),
            ps in proptest::collection::vec(-3.0f64..3.0, 12),
        ) {
            let q = Array2::from_shape_vec((2, 3), qs).unwrap();
            let patches = Array2::from_shape_vec((4, 3), ps).unwrap();
            let w = compute_attention_weights(&q, &patches).unwrap();
            let t = pool_semantic_tokens(&w, &patches).unwrap();
            for j in 0..3 {
                let col = patches.column(j);
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                for head in 0..2 {
                    let v = t.tokens[(head, j)];
                    prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
                }
            }
        }

        #[test]
        fn pooling_is_permutation_equivariant(
            qs in proptest::collection::vec(-1.0f64..1.0, 6),
            ps in proptest::collection::vec(-2.0f64..2.0, 9),
        ) {
            let q = Array2::from_shape_vec((2, 3), qs).unwrap();
            let patches = Array2::from_shape_vec((3, 3), ps).unwrap();
            let perm = [2usize, 0, 1];
            let permuted = Array2::from_shape_fn((3, 3), |(i, j)| patches[(perm[i], j)]);
            let t0 = pool_semantic_tokens(
                &compute_attention_weights(&q, &patches).unwrap(),
                &patches,
            )
            .unwrap();
            let t1 = pool_semantic_tokens(
                &compute_attention_weights(&q, &permuted).unwrap(),
                &permuted,
            )
            .unwrap();
            for (a, b) in t0.tokens.iter().zip(t1.tokens.iter()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
