//! Datasets, domains, and open-set splits.
//!
//! A [`Dataset`] holds samples under their *original* class ids. Open-set
//! structure appears when unknown classes are remapped: every sample of a
//! held-out class gets the catch-all label `C` (the number of remaining
//! known classes). [`build_losdo_splits`] rotates each domain into the
//! target role, excluding unknown-class samples from the sources and
//! keeping them (relabeled) in the target.

mod directory;
mod synthetic;

pub use directory::load_directory_dataset;
pub use synthetic::{make_synthetic_dataset, synthetic_unknown_names, SyntheticSpec};

use ndarray::Array2;
use std::collections::BTreeSet;
use std::path::PathBuf;

use crate::error::{Error, Result};

/// Name given to the merged catch-all class after remapping.
pub const UNKNOWN_CLASS_NAME: &str = "unknown";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadMode {
    /// Precomputed N×d patch-feature matrices.
    Features,
    /// References to image files, resolved by an embedding backend.
    ImageRef,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Features(Array2<f64>),
    ImageRef(PathBuf),
}

impl Payload {
    pub fn mode(&self) -> PayloadMode {
        match self {
            Payload::Features(_) => PayloadMode::Features,
            Payload::ImageRef(_) => PayloadMode::ImageRef,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub image_id: String,
    pub domain_id: usize,
    pub class_id: usize,
    pub payload: Payload,
}

/// A multi-domain dataset. Domains and classes are ordered; integer ids are
/// indices into those lists.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub domains: Vec<String>,
    pub classes: Vec<String>,
    pub samples: Vec<LabeledSample>,
    pub payload_mode: PayloadMode,
}

impl Dataset {
    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Remap the named classes onto the single catch-all label. Known
    /// classes keep their relative order and occupy ids `0..C`; the merged
    /// class sits at id `C` under [`UNKNOWN_CLASS_NAME`]. Names not present
    /// are skipped, so applying the same remap twice is a no-op.
    pub fn remap_unknown(&self, unknown_names: &[String]) -> Result<Dataset> {
        let unknown_set: BTreeSet<&str> = unknown_names.iter().map(String::as_str).collect();
        let matched: Vec<usize> = self
            .classes
            .iter()
            .enumerate()
            .filter(|(_, name)| unknown_set.contains(name.as_str()))
            .map(|(id, _)| id)
            .collect();
        if matched.is_empty() {
            return Ok(self.clone());
        }
        let known: Vec<String> = self
            .classes
            .iter()
            .filter(|name| !unknown_set.contains(name.as_str()))
            .cloned()
            .collect();
        if known.is_empty() {
            return Err(Error::Data(
                "unknown class set empties the known label space".into(),
            ));
        }
        if known.iter().any(|n| n == UNKNOWN_CLASS_NAME) {
            return Err(Error::Data(format!(
                "a known class is named {UNKNOWN_CLASS_NAME:?}, which collides with the catch-all label"
            )));
        }
        let c = known.len();
        let mut id_map = vec![0usize; self.classes.len()];
        let mut next = 0usize;
        for (old_id, name) in self.classes.iter().enumerate() {
            if unknown_set.contains(name.as_str()) {
                id_map[old_id] = c;
            } else {
                id_map[old_id] = next;
                next += 1;
            }
        }
        let mut classes = known;
        classes.push(UNKNOWN_CLASS_NAME.to_string());
        let samples = self
            .samples
            .iter()
            .map(|s| LabeledSample {
                class_id: id_map[s.class_id],
                ..s.clone()
            })
            .collect();
        Ok(Dataset {
            domains: self.domains.clone(),
            classes,
            samples,
            payload_mode: self.payload_mode,
        })
    }
}

/// One leave-one-domain-out split with unknown classes remapped to label `C`.
#[derive(Debug, Clone)]
pub struct OSDGSplit {
    pub source_domains: Vec<usize>,
    pub target_domain: usize,
    /// The `C` known class names, in original dataset order.
    pub known_classes: Vec<String>,
    /// Original dataset class ids that were remapped onto label `C`.
    pub unknown_class_ids: BTreeSet<usize>,
    /// Source-domain samples; `class_id` in `[0, C)`.
    pub source_samples: Vec<LabeledSample>,
    /// Target-domain samples; `class_id` in `[0, C]`.
    pub target_samples: Vec<LabeledSample>,
}

impl OSDGSplit {
    pub fn num_known_classes(&self) -> usize {
        self.known_classes.len()
    }

    /// The catch-all unknown label.
    pub fn unknown_label(&self) -> usize {
        self.known_classes.len()
    }
}

/// Build one split per domain under the leave-one-domain-out protocol.
pub fn build_losdo_splits(dataset: &Dataset, unknown_names: &[String]) -> Result<Vec<OSDGSplit>> {
    if dataset.num_domains() < 2 {
        return Err(Error::Data(format!(
            "leave-one-domain-out needs at least 2 domains, got {}",
            dataset.num_domains()
        )));
    }
    for name in unknown_names {
        if !dataset.classes.iter().any(|c| c == name) {
            return Err(Error::Config(format!(
                "unknown class {name:?} is not a class of the dataset"
            )));
        }
    }
    if unknown_names.len() >= dataset.num_classes() {
        return Err(Error::Data(
            "unknown class set empties the known label space".into(),
        ));
    }
    let unknown_set: BTreeSet<&str> = unknown_names.iter().map(String::as_str).collect();
    let unknown_class_ids: BTreeSet<usize> = dataset
        .classes
        .iter()
        .enumerate()
        .filter(|(_, n)| unknown_set.contains(n.as_str()))
        .map(|(id, _)| id)
        .collect();
    let remapped = dataset.remap_unknown(unknown_names)?;
    let c = remapped.num_classes() - usize::from(!unknown_class_ids.is_empty());
    let known_classes: Vec<String> = remapped.classes[..c].to_vec();

    let mut splits = Vec::with_capacity(dataset.num_domains());
    for target in 0..dataset.num_domains() {
        let source_domains: Vec<usize> =
            (0..dataset.num_domains()).filter(|&d| d != target).collect();
        let mut source_samples = Vec::new();
        let mut target_samples = Vec::new();
        for sample in &remapped.samples {
            if sample.domain_id == target {
                target_samples.push(sample.clone());
            } else if sample.class_id < c {
                source_samples.push(sample.clone());
            }
        }
        splits.push(OSDGSplit {
            source_domains,
            target_domain: target,
            known_classes: known_classes.clone(),
            unknown_class_ids: unknown_class_ids.clone(),
            source_samples,
            target_samples,
        });
    }
    Ok(splits)
}
