//! Seeded synthetic multi-domain dataset generator.
//!
//! Each class gets an anchor on the unit sphere, placed by rejection
//! sampling under a minimum pairwise distance. Held-out classes are then
//! pulled next to a known anchor (half the separation away) so that
//! unknowns are hard by construction. A sample's patch matrix is
//!
//! ```text
//! row_i = class_anchor + domain_offset + part_i + noise
//! ```
//!
//! where the per-patch part vectors are fixed per class (the structure the
//! attention heads can discover) and only the noise varies per sample.
//! All payload entries are rounded to f32 precision so that archive dumps
//! round-trip losslessly.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, LabeledSample, Payload, PayloadMode};
use crate::error::{Error, Result};
use crate::seeds;

/// Part vectors scale relative to `class_separation`.
const PART_SCALE: f64 = 0.25;
/// Distance of a held-out class anchor from its source known anchor,
/// relative to `class_separation`.
const UNKNOWN_OFFSET: f64 = 0.5;
/// Rejection-sampling attempts per anchor before giving up.
const MAX_ANCHOR_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    /// Domain count M.
    pub domains: u32,
    /// Known class count C.
    pub known_classes: u32,
    /// Held-out class count U.
    pub unknown_classes: u32,
    /// Feature dimension d.
    pub feature_dim: u32,
    /// Patches per image N.
    pub patches: u32,
    pub samples_per_class_per_domain: u32,
    pub domain_shift_scale: f64,
    pub class_separation: f64,
    pub within_class_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            domains: 3,
            known_classes: 4,
            unknown_classes: 2,
            feature_dim: 16,
            patches: 9,
            samples_per_class_per_domain: 20,
            domain_shift_scale: 0.3,
            class_separation: 1.0,
            within_class_noise: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("domains", self.domains),
            ("known_classes", self.known_classes),
            ("unknown_classes", self.unknown_classes),
            ("patches", self.patches),
            ("samples_per_class_per_domain", self.samples_per_class_per_domain),
        ];
        for (name, v) in counts {
            if v < 1 {
                return Err(Error::Config(format!("synthetic spec: {name} must be >= 1")));
            }
        }
        if self.feature_dim < 2 {
            return Err(Error::Config("synthetic spec: feature_dim must be >= 2".into()));
        }
        for (name, v) in [
            ("domain_shift_scale", self.domain_shift_scale),
            ("class_separation", self.class_separation),
            ("within_class_noise", self.within_class_noise),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "synthetic spec: {name} must be finite and >= 0"
                )));
            }
        }
        Ok(())
    }

    pub fn total_classes(&self) -> usize {
        (self.known_classes + self.unknown_classes) as usize
    }
}

fn label_width(count: usize) -> usize {
    count.saturating_sub(1).max(9).to_string().len()
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Array1<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    loop {
        let v: Array1<f64> = Array1::from_shape_fn(d, |_| normal.sample(rng));
        let norm = v.dot(&v).sqrt();
        if norm > 1e-9 {
            return v / norm;
        }
    }
}

/// Place `count` anchors on the unit sphere with pairwise L2 distance at
/// least `min_dist`.
fn place_anchors(
    rng: &mut ChaCha8Rng,
    count: usize,
    d: usize,
    min_dist: f64,
) -> Result<Vec<Array1<f64>>> {
    let mut anchors: Vec<Array1<f64>> = Vec::with_capacity(count);
    for i in 0..count {
        let mut placed = false;
        for _ in 0..MAX_ANCHOR_ATTEMPTS {
            let candidate = unit_vector(rng, d);
            let ok = anchors.iter().all(|a| {
                let diff = &candidate - a;
                diff.dot(&diff).sqrt() >= min_dist
            });
            if ok {
                anchors.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Config(format!(
                "cannot place {count} class anchors at pairwise separation {min_dist} \
                 on the unit sphere in dimension {d} (stuck after {i} anchors and \
                 {MAX_ANCHOR_ATTEMPTS} attempts); lower class_separation or the class \
                 count, or raise feature_dim"
            )));
        }
    }
    Ok(anchors)
}

/// Generate a feature-payload dataset from a seeded spec.
pub fn make_synthetic_dataset(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let d = spec.feature_dim as usize;
    let n = spec.patches as usize;
    let total_classes = spec.total_classes();
    let c_known = spec.known_classes as usize;

    let mut anchor_rng = seeds::rng(spec.seed, &["anchors".into()]);
    let mut anchors = place_anchors(&mut anchor_rng, total_classes, d, spec.class_separation)?;
    // Pull each held-out class next to a known anchor: hard unknowns.
    for u in 0..spec.unknown_classes as usize {
        let src = u % c_known;
        let diff = &anchors[c_known + u] - &anchors[src];
        let norm = diff.dot(&diff).sqrt();
        let dir = if norm > 1e-9 {
            diff / norm
        } else {
            unit_vector(&mut anchor_rng, d)
        };
        anchors[c_known + u] = &anchors[src] + &(dir * (UNKNOWN_OFFSET * spec.class_separation));
    }

    let domain_offsets: Vec<Array1<f64>> = (0..spec.domains as usize)
        .map(|m| {
            let mut rng = seeds::rng(spec.seed, &["domain_offset".into(), m.into()]);
            unit_vector(&mut rng, d) * spec.domain_shift_scale
        })
        .collect();

    // Per-class, per-patch part vectors: the within-image structure.
    let part_scale = PART_SCALE * spec.class_separation;
    let parts: Vec<Vec<Array1<f64>>> = (0..total_classes)
        .map(|cls| {
            let mut rng = seeds::rng(spec.seed, &["parts".into(), cls.into()]);
            (0..n).map(|_| unit_vector(&mut rng, d) * part_scale).collect()
        })
        .collect();

    let dw = label_width(spec.domains as usize);
    let cw = label_width(total_classes);
    let domains: Vec<String> = (0..spec.domains as usize)
        .map(|m| format!("domain{m:0dw$}"))
        .collect();
    let classes: Vec<String> = (0..total_classes).map(|c| format!("class{c:0cw$}")).collect();

    let noise_dist = Normal::new(0.0, 1.0).unwrap();
    let mut samples = Vec::new();
    for (m, domain_name) in domains.iter().enumerate() {
        for (cls, class_name) in classes.iter().enumerate() {
            for s in 0..spec.samples_per_class_per_domain as usize {
                let mut rng = seeds::rng(
                    spec.seed,
                    &["sample".into(), m.into(), cls.into(), s.into()],
                );
                let mut payload = Array2::zeros((n, d));
                for i in 0..n {
                    for j in 0..d {
                        let noise = if spec.within_class_noise > 0.0 {
                            noise_dist.sample(&mut rng) * spec.within_class_noise
                        } else {
                            // keep the stream advancing so noise=0 stays a
                            // pointwise limit of noise>0 draws
                            let _ = rng.gen::<f64>();
                            0.0
                        };
                        let v = anchors[cls][j] + domain_offsets[m][j] + parts[cls][i][j] + noise;
                        payload[(i, j)] = f64::from(v as f32);
                    }
                }
                samples.push(LabeledSample {
                    image_id: format!("{domain_name}/{class_name}/{s:04}"),
                    domain_id: m,
                    class_id: cls,
                    payload: Payload::Features(payload),
                });
            }
        }
    }

    Ok(Dataset {
        domains,
        classes,
        samples,
        payload_mode: PayloadMode::Features,
    })
}

/// Names of the classes a synthetic spec holds out as unknown (the tail of
/// the class list).
pub fn synthetic_unknown_names(spec: &SyntheticSpec) -> Vec<String> {
    let total = spec.total_classes();
    let cw = label_width(total);
    (spec.known_classes as usize..total)
        .map(|c| format!("class{c:0cw$}"))
        .collect()
}
