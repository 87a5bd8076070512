//! Pseudo-unknown sample generation.
//!
//! Perturbs class semantic tokens with Gaussian noise, assembles a joint
//! generation condition (positive/negative text plus the projected
//! perturbed tokens as visual guidance), and dispatches to a generator.
//! The deterministic feature-space mock is the tested path; the external
//! diffusion service is an adapter contract whose requests can be
//! exported for out-of-process execution.
//!
//! Mock generation honors the `SEECLIP_CACHE` directory: payloads are
//! cached as tensor archives keyed by a content hash of the request, and
//! a cache hit returns bit-identical payloads.

use ndarray::Array2;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

use crate::archive::Archive;
use crate::error::{Error, Result};
use crate::num;
use crate::prompt::ProjectionParams;
use crate::seeds;
use crate::semantic::SemanticTokenSet;

pub const DEFAULT_SIGMA: f64 = 0.2;
pub const DEFAULT_GUIDANCE_SCALE: f64 = 7.5;
pub const DEFAULT_DENOISING_STEPS: u32 = 50;
/// Strength of the mock's anchor-repulsion shift per unit of guidance
/// above 1.
pub const MOCK_REPULSION_RATE: f64 = 0.1;

/// Noise settings for token perturbation (and the mock's patch noise).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationConfig {
    pub sigma: f64,
    pub seed: u64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self { sigma: DEFAULT_SIGMA, seed: 0 }
    }
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(Error::Config(format!(
                "perturbation sigma must be finite and nonnegative, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// Joint condition handed to a generator: textual guidance both ways plus
/// the projected perturbed semantic tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationCondition {
    pub positive_text: String,
    pub negative_text: String,
    pub visual_condition: Array2<f64>,
    pub guidance_scale: f64,
    pub denoising_steps: u32,
}

impl GenerationCondition {
    pub fn validate(&self) -> Result<()> {
        if self.denoising_steps < 1 {
            return Err(Error::Config("denoising steps must be >= 1".into()));
        }
        if !self.guidance_scale.is_finite() || self.guidance_scale < 1.0 {
            return Err(Error::Config(format!(
                "guidance scale must be >= 1, got {}",
                self.guidance_scale
            )));
        }
        if self.visual_condition.is_empty() {
            return Err(Error::Shape("empty visual condition".into()));
        }
        if !num::all_finite(self.visual_condition.view()) {
            return Err(Error::Numeric("non-finite visual condition".into()));
        }
        Ok(())
    }
}

/// Where a pseudo-sample came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoProvenance {
    pub source_class_id: usize,
    pub sigma: f64,
    pub seed: u64,
}

/// A generated pseudo-unknown: a patch-feature payload labeled with the
/// unknown class id.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoSample {
    pub payload: Array2<f64>,
    pub domain_id: usize,
    pub label: usize,
    pub provenance: PseudoProvenance,
}

/// Identifies one generation request; `request_id` keeps concurrent or
/// repeated requests on independent noise streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PseudoRequest {
    pub source_class_id: usize,
    pub domain_id: usize,
    pub unknown_label: usize,
    pub count: usize,
    pub request_id: u64,
}

/// Add iid N(0, σ²) noise to every token coordinate. σ = 0 returns the
/// input unchanged, bit for bit.
pub fn perturb_semantic_tokens(
    tokens: &SemanticTokenSet,
    cfg: &PerturbationConfig,
) -> Result<SemanticTokenSet> {
    cfg.validate()?;
    if !num::all_finite(tokens.tokens.view()) {
        return Err(Error::Numeric("non-finite semantic tokens".into()));
    }
    if cfg.sigma == 0.0 {
        return Ok(tokens.clone());
    }
    let mut rng = seeds::rng(cfg.seed, &["perturb".into()]);
    let normal = Normal::new(0.0, cfg.sigma).expect("validated sigma");
    let mut out = tokens.tokens.clone();
    for v in out.iter_mut() {
        *v += normal.sample(&mut rng);
    }
    Ok(SemanticTokenSet { tokens: out })
}

/// `A {domain} image of an unknown class`, applied verbatim (no article
/// correction for multi-word domain names).
pub fn build_positive_prompt(domain_name: &str) -> Result<String> {
    if domain_name.is_empty() {
        return Err(Error::Config("positive prompt needs a domain name".into()));
    }
    Ok(format!("A {domain_name} image of an unknown class"))
}

/// Known class names joined by `, ` in class-id order.
pub fn build_negative_prompt(known_class_names: &[String]) -> Result<String> {
    if known_class_names.is_empty() {
        return Err(Error::Config("negative prompt needs at least one class name".into()));
    }
    Ok(known_class_names.join(", "))
}

/// Project the perturbed tokens through Ψ and bundle them with both text
/// prompts and the sampler settings.
pub fn build_joint_condition(
    positive_text: String,
    negative_text: String,
    perturbed_tokens: &SemanticTokenSet,
    projections: &ProjectionParams,
    denoising_steps: u32,
    guidance_scale: f64,
) -> Result<GenerationCondition> {
    let visual_condition = projections.project_semantic(perturbed_tokens)?;
    let condition = GenerationCondition {
        positive_text,
        negative_text,
        visual_condition,
        guidance_scale,
        denoising_steps,
    };
    condition.validate()?;
    Ok(condition)
}

/// Deterministic feature-space generator: broadcasts the visual-condition
/// tokens into patch rows, adds seeded noise, and pushes each sample away
/// from the source-class anchor direction in proportion to the guidance
/// above 1.
#[derive(Debug, Clone)]
pub struct MockGenerator {
    patches: usize,
    cfg: PerturbationConfig,
    cache_dir: Option<PathBuf>,
}

impl MockGenerator {
    pub fn new(patches: usize, cfg: PerturbationConfig) -> Result<Self> {
        if patches == 0 {
            return Err(Error::Config("mock generator needs patches >= 1".into()));
        }
        cfg.validate()?;
        Ok(Self { patches, cfg, cache_dir: None })
    }

    pub fn with_cache_dir(mut self, dir: Option<PathBuf>) -> Self {
        self.cache_dir = dir;
        self
    }

    /// Pick the cache directory up from `SEECLIP_CACHE` if set.
    pub fn with_cache_from_env(self) -> Self {
        let dir = std::env::var_os("SEECLIP_CACHE").map(PathBuf::from);
        self.with_cache_dir(dir)
    }

    pub fn sigma(&self) -> f64 {
        self.cfg.sigma
    }

    pub fn seed(&self) -> u64 {
        self.cfg.seed
    }
}

/// Adapter contract for an out-of-process diffusion service. Requests are
/// exported with [`export_generation_request`]; this path never executes
/// locally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalGeneratorSpec {
    pub service: String,
    pub exchange_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub enum Generator {
    Mock(MockGenerator),
    External(ExternalGeneratorSpec),
}

/// Which generator a run is configured for. External generation happens
/// out of process through exported request manifests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    #[default]
    Mock,
    External,
}

fn request_hash(
    condition: &GenerationCondition,
    request: &PseudoRequest,
    cfg: &PerturbationConfig,
    patches: usize,
) -> String {
    let mut h = Sha256::new();
    let text = |h: &mut Sha256, s: &str| {
        h.update((s.len() as u64).to_le_bytes());
        h.update(s.as_bytes());
    };
    text(&mut h, &condition.positive_text);
    text(&mut h, &condition.negative_text);
    h.update(condition.guidance_scale.to_le_bytes());
    h.update(condition.denoising_steps.to_le_bytes());
    h.update((condition.visual_condition.nrows() as u64).to_le_bytes());
    h.update((condition.visual_condition.ncols() as u64).to_le_bytes());
    for v in condition.visual_condition.iter() {
        h.update(v.to_le_bytes());
    }
    h.update(cfg.sigma.to_le_bytes());
    h.update(cfg.seed.to_le_bytes());
    h.update((patches as u64).to_le_bytes());
    h.update((request.source_class_id as u64).to_le_bytes());
    h.update((request.domain_id as u64).to_le_bytes());
    h.update((request.unknown_label as u64).to_le_bytes());
    h.update((request.count as u64).to_le_bytes());
    h.update(request.request_id.to_le_bytes());
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn io_at(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn payload_name(i: usize) -> String {
    format!("sample.{i:04}")
}

fn load_cached_payloads(path: &Path, count: usize) -> Result<Vec<Array2<f64>>> {
    let archive = Archive::load(path)?;
    let mut payloads = Vec::with_capacity(count);
    for i in 0..count {
        let name = payload_name(i);
        let t = archive.require(&name)?;
        payloads.push(crate::backend::tensor_to_matrix(t, &name)?);
    }
    Ok(payloads)
}

fn store_cached_payloads(path: &Path, payloads: &[Array2<f64>]) -> Result<()> {
    let mut archive = Archive::new();
    for (i, p) in payloads.iter().enumerate() {
        archive.insert_f64(
            &payload_name(i),
            vec![p.nrows() as u64, p.ncols() as u64],
            p.iter().cloned().collect(),
        )?;
    }
    archive.save(path)
}

fn mock_payloads(
    gen: &MockGenerator,
    condition: &GenerationCondition,
    request: &PseudoRequest,
) -> Result<Vec<Array2<f64>>> {
    let visual = &condition.visual_condition;
    let (k, d) = visual.dim();
    // anchor-repulsion shift, active only above the neutral guidance of 1
    let mean = num::mean_rows(visual.view())?;
    let shift = match num::l2_normalized(mean.view()) {
        Ok(anchor) => anchor * (MOCK_REPULSION_RATE * (condition.guidance_scale - 1.0)),
        Err(_) => ndarray::Array1::zeros(d),
    };
    let mut payloads = Vec::with_capacity(request.count);
    for i in 0..request.count {
        let mut rng = seeds::rng(
            gen.cfg.seed,
            &[
                "pseudo".into(),
                request.request_id.into(),
                request.domain_id.into(),
                request.source_class_id.into(),
                i.into(),
            ],
        );
        let mut payload = Array2::zeros((gen.patches, d));
        for (j, mut row) in payload.rows_mut().into_iter().enumerate() {
            row.assign(&visual.row(j % k));
        }
        if gen.cfg.sigma > 0.0 {
            let normal = Normal::new(0.0, gen.cfg.sigma).expect("validated sigma");
            for v in payload.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
        for mut row in payload.rows_mut() {
            row -= &shift;
        }
        payloads.push(payload);
    }
    Ok(payloads)
}

/// Generate `request.count` pseudo-unknown samples under the condition.
/// Mock payloads are reproducible per (seed, request, index) and cached
/// when a cache directory is configured.
pub fn generate_pseudo_unknowns(
    condition: &GenerationCondition,
    request: &PseudoRequest,
    generator: &Generator,
) -> Result<Vec<PseudoSample>> {
    condition.validate()?;
    if request.count == 0 {
        return Err(Error::Config("generation count must be >= 1".into()));
    }
    let gen = match generator {
        Generator::Mock(m) => m,
        Generator::External(spec) => {
            return Err(Error::Backend(format!(
                "external generation service '{}' runs out of process; export the request \
                 into '{}' and embed its image responses instead",
                spec.service,
                spec.exchange_dir.display()
            )));
        }
    };

    let cache_path = gen
        .cache_dir
        .as_ref()
        .map(|dir| dir.join(format!("{}.star", request_hash(condition, request, &gen.cfg, gen.patches))));
    let payloads = match &cache_path {
        Some(path) if path.is_file() => load_cached_payloads(path, request.count)?,
        _ => {
            let payloads = mock_payloads(gen, condition, request)?;
            if let Some(path) = &cache_path {
                if let Some(dir) = path.parent() {
                    std::fs::create_dir_all(dir).map_err(|e| io_at(dir, e))?;
                }
                store_cached_payloads(path, &payloads)?;
            }
            payloads
        }
    };

    Ok(payloads
        .into_iter()
        .map(|payload| PseudoSample {
            payload,
            domain_id: request.domain_id,
            label: request.unknown_label,
            provenance: PseudoProvenance {
                source_class_id: request.source_class_id,
                sigma: gen.cfg.sigma,
                seed: gen.cfg.seed,
            },
        })
        .collect())
}

/// Serialize one request for the external adapter: a JSON manifest plus
/// the visual condition as a tensor archive. Returns the manifest path.
pub fn export_generation_request(
    condition: &GenerationCondition,
    request: &PseudoRequest,
    dir: &Path,
) -> Result<PathBuf> {
    condition.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| io_at(dir, e))?;
    let tensors = dir.join(format!("visual_condition_{:016x}.star", request.request_id));
    let mut archive = Archive::new();
    archive.insert_f64(
        "visual_condition",
        vec![
            condition.visual_condition.nrows() as u64,
            condition.visual_condition.ncols() as u64,
        ],
        condition.visual_condition.iter().cloned().collect(),
    )?;
    archive.save(&tensors)?;

    let manifest = serde_json::json!({
        "positive_text": condition.positive_text,
        "negative_text": condition.negative_text,
        "visual_condition": tensors.file_name().and_then(|n| n.to_str()),
        "denoising_steps": condition.denoising_steps,
        "guidance_scale": condition.guidance_scale,
        "count": request.count,
        "source_class_id": request.source_class_id,
        "domain_id": request.domain_id,
        "request_id": request.request_id,
    });
    let path = dir.join(format!("generation_request_{:016x}.json", request.request_id));
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).expect("serializable") + "\n")
        .map_err(|e| io_at(&path, e))?;
    Ok(path)
}
