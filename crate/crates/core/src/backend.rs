//! Embedding backends: patch features for images, pooled vectors for
//! token sequences.
//!
//! The synthetic backend is the fully tested path. Its text encoder is a
//! fixed seeded linear map of the mean token followed by tanh and L2
//! normalization, smooth everywhere so losses stay differentiable down to
//! every prompt token. The external variant is an adapter that exchanges
//! little-endian f32 tensors through archive files; it exists so a real
//! vision-language model can be bolted on out of process, and its
//! correctness is out of scope for this test suite.
//!
//! External exchange layout, under `exchange_dir`:
//! - `patch_embeddings.star`: one N×d tensor per image, named by image_id
//! - `text_embeddings.star`: one d-vector per request key (see
//!   [`text_request_key`]); class names use the key `classname/<name>`

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::PathBuf;

use crate::archive::{Archive, Tensor};
use crate::data::{LabeledSample, Payload};
use crate::error::{Error, Result};
use crate::num;
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Synthetic,
    External,
}

/// Description of an embedding backend, part of the run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSpec {
    pub kind: BackendKind,
    /// Embedding dimension d.
    pub dim: usize,
    /// Patches per image N (synthetic image synthesis).
    #[serde(default = "default_patches")]
    pub patches: usize,
    /// Seed for the synthetic backend's frozen weights.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Model identifier for the external backend.
    #[serde(default)]
    pub model: Option<String>,
    /// Exchange directory for the external backend's archives.
    #[serde(default)]
    pub exchange_dir: Option<PathBuf>,
}

fn default_patches() -> usize {
    9
}

impl BackendSpec {
    pub fn synthetic(dim: usize, patches: usize, seed: u64) -> Self {
        Self {
            kind: BackendKind::Synthetic,
            dim,
            patches,
            seed: Some(seed),
            model: None,
            exchange_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Config("backend dim must be >= 2".into()));
        }
        match self.kind {
            BackendKind::Synthetic => {
                if self.seed.is_none() {
                    return Err(Error::Config("synthetic backend requires a seed".into()));
                }
                if self.patches < 1 {
                    return Err(Error::Config("backend patches must be >= 1".into()));
                }
            }
            BackendKind::External => {
                if self.model.is_none() {
                    return Err(Error::Config(
                        "external backend requires a model identifier".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Per-image patch embeddings, rows f_1..f_N.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbeddingSet {
    pub patches: Array2<f64>,
    pub image_id: String,
    pub domain_id: usize,
}

impl PatchEmbeddingSet {
    pub fn new(patches: Array2<f64>, image_id: String, domain_id: usize) -> Result<Self> {
        if patches.nrows() == 0 {
            return Err(Error::Shape(format!("{image_id}: empty patch set")));
        }
        if !num::all_finite(patches.view()) {
            return Err(Error::Numeric(format!(
                "{image_id}: non-finite patch embedding"
            )));
        }
        Ok(Self { patches, image_id, domain_id })
    }

    pub fn num_patches(&self) -> usize {
        self.patches.nrows()
    }

    pub fn dim(&self) -> usize {
        self.patches.ncols()
    }
}

/// A pooled text-side embedding, always unit L2 norm.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    vector: Array1<f64>,
}

impl TextEmbedding {
    pub fn new(vector: Array1<f64>) -> Result<Self> {
        let norm = num::l2_norm(vector.view());
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Numeric(format!(
                "text embedding norm {norm} is not 1 within 1e-6"
            )));
        }
        Ok(Self { vector })
    }

    pub fn vector(&self) -> &Array1<f64> {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Mean over patch rows, L2-normalized: the image-level embedding used for
/// classification and for the per-class representatives of the hinge loss.
pub fn image_global_embedding(p: &PatchEmbeddingSet) -> Result<TextEmbedding> {
    let mean = num::mean_rows(p.patches.view())?;
    TextEmbedding::new(num::l2_normalized(mean.view())?)
}

/// Stable lookup key for an external text-embedding request: hex SHA-256
/// over the token matrix serialized as little-endian f32, row-major, with
/// the shape prefixed.
pub fn text_request_key(tokens: &Array2<f64>) -> String {
    let mut hasher = Sha256::new();
    hasher.update((tokens.nrows() as u64).to_le_bytes());
    hasher.update((tokens.ncols() as u64).to_le_bytes());
    for &v in tokens.iter() {
        hasher.update((v as f32).to_le_bytes());
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone)]
pub enum Backend {
    Synthetic(SyntheticBackend),
    External(ExternalBackend),
}

impl Backend {
    pub fn from_spec(spec: &BackendSpec) -> Result<Backend> {
        spec.validate()?;
        Ok(match spec.kind {
            BackendKind::Synthetic => Backend::Synthetic(SyntheticBackend::new(spec.clone())),
            BackendKind::External => Backend::External(ExternalBackend::new(spec.clone())?),
        })
    }

    pub fn spec(&self) -> &BackendSpec {
        match self {
            Backend::Synthetic(b) => &b.spec,
            Backend::External(b) => &b.spec,
        }
    }

    pub fn dim(&self) -> usize {
        self.spec().dim
    }

    pub fn encode_image(&self, sample: &LabeledSample) -> Result<PatchEmbeddingSet> {
        match self {
            Backend::Synthetic(b) => b.encode_image(sample),
            Backend::External(b) => b.encode_image(sample),
        }
    }

    pub fn encode_token_sequence(&self, tokens: &Array2<f64>) -> Result<TextEmbedding> {
        match self {
            Backend::Synthetic(b) => b.encode_token_sequence(tokens),
            Backend::External(b) => b.encode_token_sequence(tokens),
        }
    }

    pub fn classname_embedding(&self, name: &str) -> Result<Array1<f64>> {
        match self {
            Backend::Synthetic(b) => Ok(b.classname_embedding(name)),
            Backend::External(b) => b.classname_embedding(name),
        }
    }

    /// The synthetic text encoder's frozen weight matrix, needed to build
    /// a differentiable training graph. External backends have no gradient
    /// path.
    pub fn synthetic_text_weight(&self) -> Result<&Array2<f64>> {
        match self {
            Backend::Synthetic(b) => Ok(&b.text_weight),
            Backend::External(_) => Err(Error::Config(
                "training needs the synthetic embedding backend; the external adapter \
                 exposes no gradient path through its text encoder"
                    .into(),
            )),
        }
    }

    /// Byte snapshot of everything frozen inside the backend, for
    /// before/after training comparisons.
    pub fn fingerprint(&self) -> Vec<u8> {
        match self {
            Backend::Synthetic(b) => b.fingerprint(),
            Backend::External(b) => b.fingerprint(),
        }
    }
}

/// Deterministic, self-contained backend: every embedding is a pure
/// function of (seed, input).
#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    pub spec: BackendSpec,
    /// Frozen d×d text-encoder weight.
    text_weight: Array2<f64>,
}

impl SyntheticBackend {
    pub fn new(spec: BackendSpec) -> Self {
        let d = spec.dim;
        let seed = spec.seed.expect("validated spec");
        let mut rng = seeds::rng(seed, &["text_weight".into()]);
        let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt()).unwrap();
        let text_weight = Array2::from_shape_fn((d, d), |_| normal.sample(&mut rng));
        Self { spec, text_weight }
    }

    pub fn text_weight(&self) -> &Array2<f64> {
        &self.text_weight
    }

    pub fn encode_image(&self, sample: &LabeledSample) -> Result<PatchEmbeddingSet> {
        match &sample.payload {
            Payload::Features(m) => {
                if m.ncols() != self.spec.dim {
                    return Err(Error::Shape(format!(
                        "{}: payload dimension {} does not match backend dimension {}",
                        sample.image_id,
                        m.ncols(),
                        self.spec.dim
                    )));
                }
                PatchEmbeddingSet::new(m.clone(), sample.image_id.clone(), sample.domain_id)
            }
            Payload::ImageRef(_) => {
                let seed = self.spec.seed.expect("validated spec");
                let mut rng = seeds::rng(
                    seed,
                    &["image".into(), sample.image_id.as_str().into()],
                );
                let normal = Normal::new(0.0, 1.0).unwrap();
                let patches = Array2::from_shape_fn((self.spec.patches, self.spec.dim), |_| {
                    normal.sample(&mut rng)
                });
                PatchEmbeddingSet::new(patches, sample.image_id.clone(), sample.domain_id)
            }
        }
    }

    /// tanh(W · mean(tokens)), L2-normalized.
    pub fn encode_token_sequence(&self, tokens: &Array2<f64>) -> Result<TextEmbedding> {
        if tokens.nrows() == 0 {
            return Err(Error::Shape("empty token sequence".into()));
        }
        if tokens.ncols() != self.spec.dim {
            return Err(Error::Shape(format!(
                "token dimension {} does not match backend dimension {}",
                tokens.ncols(),
                self.spec.dim
            )));
        }
        let mean = num::mean_rows(tokens.view())?;
        let mapped = self.text_weight.dot(&mean).mapv(f64::tanh);
        TextEmbedding::new(num::l2_normalized(mapped.view())?)
    }

    /// Fixed unit anchor for a class name, derived from the name string.
    pub fn classname_embedding(&self, name: &str) -> Array1<f64> {
        let seed = self.spec.seed.expect("validated spec");
        let mut rng = seeds::rng(seed, &["classname".into(), name.into()]);
        let normal = Normal::new(0.0, 1.0).unwrap();
        loop {
            let v: Array1<f64> = Array1::from_shape_fn(self.spec.dim, |_| normal.sample(&mut rng));
            if let Ok(u) = num::l2_normalized(v.view()) {
                return u;
            }
        }
    }

    pub fn fingerprint(&self) -> Vec<u8> {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"synthetic");
        bytes.extend_from_slice(&self.spec.seed.expect("validated spec").to_le_bytes());
        bytes.extend_from_slice(&(self.spec.dim as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.spec.patches as u64).to_le_bytes());
        for &v in self.text_weight.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes
    }
}

/// Adapter for an out-of-process encoder. Embeddings are read from archive
/// files produced by the external side; anything absent is an error that
/// names the missing key, so the operator can produce it offline.
#[derive(Debug, Clone)]
pub struct ExternalBackend {
    pub spec: BackendSpec,
    images: Option<Archive>,
    texts: Option<Archive>,
}

impl ExternalBackend {
    pub fn new(spec: BackendSpec) -> Result<Self> {
        let (images, texts) = match &spec.exchange_dir {
            Some(dir) => {
                let load = |name: &str| -> Result<Option<Archive>> {
                    let path = dir.join(name);
                    if path.exists() {
                        Ok(Some(Archive::load(&path)?))
                    } else {
                        Ok(None)
                    }
                };
                (load("patch_embeddings.star")?, load("text_embeddings.star")?)
            }
            None => (None, None),
        };
        Ok(Self { spec, images, texts })
    }

    fn exchange_err(&self, archive: &str, key: &str) -> Error {
        let dir = self
            .spec
            .exchange_dir
            .as_ref()
            .map(|d| d.display().to_string())
            .unwrap_or_else(|| "<exchange_dir unset>".into());
        Error::Backend(format!(
            "external backend has no entry {key:?} in {dir}/{archive}; produce it with \
             the external encoder ({}) and rerun",
            self.spec.model.as_deref().unwrap_or("unknown model")
        ))
    }

    fn lookup(&self, archive: &Option<Archive>, file: &str, key: &str) -> Result<Tensor> {
        archive
            .as_ref()
            .and_then(|a| a.get(key).cloned())
            .ok_or_else(|| self.exchange_err(file, key))
    }

    pub fn encode_image(&self, sample: &LabeledSample) -> Result<PatchEmbeddingSet> {
        match &sample.payload {
            Payload::Features(m) => {
                if m.ncols() != self.spec.dim {
                    return Err(Error::Shape(format!(
                        "{}: payload dimension {} does not match backend dimension {}",
                        sample.image_id,
                        m.ncols(),
                        self.spec.dim
                    )));
                }
                PatchEmbeddingSet::new(m.clone(), sample.image_id.clone(), sample.domain_id)
            }
            Payload::ImageRef(_) => {
                let tensor =
                    self.lookup(&self.images, "patch_embeddings.star", &sample.image_id)?;
                let matrix = tensor_to_matrix(&tensor, &sample.image_id)?;
                if matrix.ncols() != self.spec.dim {
                    return Err(Error::Shape(format!(
                        "{}: external embedding dimension {} does not match backend \
                         dimension {}",
                        sample.image_id,
                        matrix.ncols(),
                        self.spec.dim
                    )));
                }
                PatchEmbeddingSet::new(matrix, sample.image_id.clone(), sample.domain_id)
            }
        }
    }

    pub fn encode_token_sequence(&self, tokens: &Array2<f64>) -> Result<TextEmbedding> {
        if tokens.nrows() == 0 {
            return Err(Error::Shape("empty token sequence".into()));
        }
        let key = text_request_key(tokens);
        let tensor = self.lookup(&self.texts, "text_embeddings.star", &key)?;
        let v = tensor_to_vector(&tensor, &key)?;
        TextEmbedding::new(num::l2_normalized(v.view())?)
    }

    pub fn classname_embedding(&self, name: &str) -> Result<Array1<f64>> {
        let key = format!("classname/{name}");
        let tensor = self.lookup(&self.texts, "text_embeddings.star", &key)?;
        tensor_to_vector(&tensor, &key)
    }

    pub fn fingerprint(&self) -> Vec<u8> {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"external");
        bytes.extend_from_slice(self.spec.model.as_deref().unwrap_or("").as_bytes());
        for archive in [&self.images, &self.texts].into_iter().flatten() {
            bytes.extend_from_slice(&archive.to_bytes().expect("loaded archive serializes"));
        }
        bytes
    }
}

/// Reinterpret an archived tensor as a rank-2 matrix, naming `key` in
/// errors.
pub fn tensor_to_matrix(tensor: &Tensor, key: &str) -> Result<Array2<f64>> {
    let dims = tensor.dims();
    if dims.len() != 2 {
        return Err(Error::Archive(format!(
            "{key}: expected a rank-2 tensor, found rank {}",
            dims.len()
        )));
    }
    let data = tensor.to_f64();
    Array2::from_shape_vec((dims[0] as usize, dims[1] as usize), data)
        .map_err(|e| Error::Archive(format!("{key}: {e}")))
}

/// Reinterpret an archived tensor as a rank-1 vector, naming `key` in
/// errors.
pub fn tensor_to_vector(tensor: &Tensor, key: &str) -> Result<Array1<f64>> {
    let dims = tensor.dims();
    if dims.len() != 1 {
        return Err(Error::Archive(format!(
            "{key}: expected a rank-1 tensor, found rank {}",
            dims.len()
        )));
    }
    Ok(Array1::from_vec(tensor.to_f64()))
}
