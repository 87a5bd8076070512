//! The four training losses and their weighted total.
//!
//! - alignment: temperature-scaled cross entropy of each image embedding
//!   against all C+1 prompt embeddings (pseudo-unknowns carry label C)
//! - repulsion: hinge pushing the unknown prompt at least `delta` of
//!   cosine away from every class's image representative
//! - cohesion: squared distance from the unknown prompt to the centroid
//!   of the known prompt embeddings, limiting semantic drift
//! - regularization: L1 on the projected semantic slots, encouraging
//!   sparse use of fine-grained semantics
//!
//! All functions are plain forward evaluations; the trainer rebuilds the
//! same expressions on the autodiff tape, and tests pin the two routes
//! together.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Weight of the repulsion loss.
    pub alpha: f64,
    /// Weight of the cohesion loss.
    pub beta: f64,
    /// Weight of the regularization loss.
    pub gamma: f64,
    /// Repulsion margin.
    pub delta: f64,
    /// Alignment temperature.
    pub tau: f64,
    /// Inner scale of the L1 regularizer.
    pub lambda_inner: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.3,
            gamma: 0.1,
            delta: 0.2,
            tau: 0.07,
            lambda_inner: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.tau <= 0.0 || !self.tau.is_finite() {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::Config(format!(
                "delta must lie in [0,1], got {}",
                self.delta
            )));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lambda_inner", self.lambda_inner),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-step loss components and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub align: f64,
    pub repulse: f64,
    pub cohere: f64,
    pub regularize: f64,
    pub total: f64,
}

fn check_unit_rows(m: &Array2<f64>, what: &str) -> Result<()> {
    for (i, row) in m.rows().into_iter().enumerate() {
        let norm = num::l2_norm(row);
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Numeric(format!(
                "{what} row {i} has norm {norm}, expected 1"
            )));
        }
    }
    Ok(())
}

/// Mean over the batch of −log softmax(sim(x_i, p_label)/τ) over all C+1
/// prompt rows.
pub fn alignment_loss(
    image_embeddings: &Array2<f64>,
    prompt_matrix: &Array2<f64>,
    labels: &[usize],
    tau: f64,
) -> Result<f64> {
    if tau <= 0.0 || !tau.is_finite() {
        return Err(Error::Config(format!("tau must be > 0, got {tau}")));
    }
    let b = image_embeddings.nrows();
    if b == 0 {
        return Err(Error::Data("alignment over an empty batch".into()));
    }
    if labels.len() != b {
        return Err(Error::Shape(format!(
            "{} labels for {b} embeddings",
            labels.len()
        )));
    }
    let rows = prompt_matrix.nrows();
    if rows == 0 {
        return Err(Error::Data("empty prompt matrix".into()));
    }
    check_unit_rows(image_embeddings, "image embedding")?;
    check_unit_rows(prompt_matrix, "prompt")?;
    let mut sum = 0.0;
    for (i, x) in image_embeddings.rows().into_iter().enumerate() {
        let label = labels[i];
        if label >= rows {
            return Err(Error::Data(format!(
                "label {label} out of range for {rows} prompts"
            )));
        }
        let scaled: Vec<f64> = prompt_matrix
            .rows()
            .into_iter()
            .map(|p| p.dot(&x) / tau)
            .collect();
        let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + scaled.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        sum += lse - scaled[label];
    }
    Ok(sum / b as f64)
}

/// Σ_c max(0, δ − sim(unknown, rep_c)). Inputs are expected unit-norm;
/// similarity is the raw dot product.
pub fn repulsion_loss(
    unknown_embedding: &Array1<f64>,
    class_representatives: &Array2<f64>,
    delta: f64,
) -> Result<f64> {
    if class_representatives.nrows() == 0 {
        return Err(Error::Data("repulsion over an empty class set".into()));
    }
    if class_representatives.ncols() != unknown_embedding.len() {
        return Err(Error::Shape(format!(
            "representative dim {} != unknown dim {}",
            class_representatives.ncols(),
            unknown_embedding.len()
        )));
    }
    let mut sum = 0.0;
    for rep in class_representatives.rows() {
        let sim = rep.dot(unknown_embedding);
        sum += (delta - sim).max(0.0);
    }
    Ok(sum)
}

/// Squared L2 distance between the unknown prompt embedding and the mean
/// of the known prompt embeddings.
pub fn cohesion_loss(
    unknown_embedding: &Array1<f64>,
    known_prompt_embeddings: &Array2<f64>,
) -> Result<f64> {
    if known_prompt_embeddings.nrows() == 0 {
        return Err(Error::Data("cohesion needs at least one known prompt".into()));
    }
    if known_prompt_embeddings.ncols() != unknown_embedding.len() {
        return Err(Error::Shape(format!(
            "prompt dim {} != unknown dim {}",
            known_prompt_embeddings.ncols(),
            unknown_embedding.len()
        )));
    }
    let centroid = known_prompt_embeddings.mean_axis(Axis(0)).unwrap();
    let diff = unknown_embedding - &centroid;
    Ok(diff.dot(&diff))
}

/// λ Σ_k ‖token_k‖₁ over the projected semantic slots in use this step.
pub fn regularization_loss(projected_semantic_tokens: &Array2<f64>, lambda_inner: f64) -> f64 {
    lambda_inner * projected_semantic_tokens.iter().map(|v| v.abs()).sum::<f64>()
}

/// Weighted total: align + α·repulse + β·cohere + γ·regularize.
pub fn total_loss(
    align: f64,
    repulse: f64,
    cohere: f64,
    regularize: f64,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    for (name, v) in [
        ("align", align),
        ("repulse", repulse),
        ("cohere", cohere),
        ("regularize", regularize),
    ] {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("{name} loss is {v}")));
        }
    }
    for (name, v) in [("repulse", repulse), ("cohere", cohere), ("regularize", regularize)] {
        if v < 0.0 {
            return Err(Error::Numeric(format!("{name} loss is negative: {v}")));
        }
    }
    let total =
        align + weights.alpha * repulse + weights.beta * cohere + weights.gamma * regularize;
    if !total.is_finite() {
        return Err(Error::Numeric(format!("total loss is {total}")));
    }
    Ok(LossBreakdown { align, repulse, cohere, regularize, total })
}
