//! Run configuration: a TOML document with one section per subsystem,
//! dotted-path `--set` overrides, and seed/output flag handling.
//!
//! Overrides are applied to the parsed TOML value before deserialization,
//! so they face the same schema validation (unknown keys rejected) as keys
//! written in the file.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::backend::BackendSpec;
use crate::data::{
    build_losdo_splits, load_directory_dataset, make_synthetic_dataset,
    synthetic_unknown_names, Dataset, OSDGSplit, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::eval::EvalOptions;
use crate::train::{GenerationSettings, HyperParams, PromptShape};

/// Where samples come from: a directory tree or the synthetic generator.
/// Exactly one of `path` and `synthetic` must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Root of a `domain/class/image` directory tree.
    pub path: Option<PathBuf>,
    /// Parameters for a generated dataset.
    pub synthetic: Option<SyntheticSpec>,
    /// Class names held out as unknown. Required with `path`; ignored for
    /// synthetic data, which names its own held-out classes.
    pub unknown_classes: Vec<String>,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        match (&self.path, &self.synthetic) {
            (Some(_), Some(_)) => Err(Error::Config(
                "dataset.path and dataset.synthetic are mutually exclusive".into(),
            )),
            (None, None) => Err(Error::Config(
                "dataset needs either path or synthetic".into(),
            )),
            (Some(_), None) if self.unknown_classes.is_empty() => Err(Error::Config(
                "directory datasets need dataset.unknown_classes".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Load (or generate) the dataset and name its unknown classes.
    pub fn load(&self) -> Result<(Dataset, Vec<String>)> {
        self.validate()?;
        if let Some(spec) = &self.synthetic {
            let dataset = make_synthetic_dataset(spec)?;
            return Ok((dataset, synthetic_unknown_names(spec)));
        }
        let root = self.path.as_ref().expect("validated");
        let dataset = load_directory_dataset(root)?;
        Ok((dataset, self.unknown_classes.clone()))
    }

    /// Load the dataset and build all leave-one-domain-out splits.
    pub fn load_with_splits(&self) -> Result<(Dataset, Vec<OSDGSplit>)> {
        let (dataset, unknown) = self.load()?;
        let splits = build_losdo_splits(&dataset, &unknown)?;
        Ok((dataset, splits))
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_backend() -> BackendSpec {
    BackendSpec::synthetic(16, 9, 0)
}

/// Everything a command needs, resolved from one file plus flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Overrides the training and generation seeds when set; backend and
    /// synthetic-dataset seeds stay put so the same data and frozen
    /// encoder can be reused across repeats.
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub backend: BackendSpec,
    pub prompt: PromptShape,
    pub hyper: HyperParams,
    pub generation: GenerationSettings,
    pub eval: EvalOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            output_dir: default_output_dir(),
            dataset: DatasetConfig::default(),
            backend: default_backend(),
            prompt: PromptShape::default(),
            hyper: HyperParams::default(),
            generation: GenerationSettings::default(),
            eval: EvalOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.backend.validate()?;
        self.hyper.validate()?;
        self.generation.perturbation.validate()?;
        if self.generation.guidance_scale < 1.0 {
            return Err(Error::Config(format!(
                "generation.guidance_scale must be >= 1, got {}",
                self.generation.guidance_scale
            )));
        }
        if self.generation.denoising_steps == 0 {
            return Err(Error::Config("generation.denoising_steps must be >= 1".into()));
        }
        if self.prompt.semantic_heads == 0 {
            return Err(Error::Config("prompt.semantic_heads must be >= 1".into()));
        }
        if self.prompt.unknown_tokens == 0 {
            return Err(Error::Config("prompt.unknown_tokens must be >= 1".into()));
        }
        Ok(())
    }

    /// Fold the top-level seed into every run-level seed field.
    pub fn apply_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            self.seed = Some(s);
        }
        if let Some(s) = self.seed {
            self.hyper.seed = s;
            self.generation.perturbation.seed = s;
        }
    }

    /// The effective configuration as a TOML document, for run manifests.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("config serialization failed: {e}")))
    }
}

/// Parse `raw` as a TOML scalar or inline value; anything that does not
/// parse (a bare path, say) becomes a string.
pub fn parse_override_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Set `dotted` (like `hyper.learning_rate`) inside a TOML table tree,
/// creating intermediate tables as needed.
pub fn set_dotted(root: &mut toml::Table, dotted: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = dotted.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {dotted:?}")));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| {
            Error::Config(format!("{part} in {dotted:?} is not a section"))
        })?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Apply repeatable `key=value` overrides to a parsed TOML document.
pub fn apply_overrides(root: &mut toml::Table, sets: &[String]) -> Result<()> {
    for set in sets {
        let (key, raw) = set.split_once('=').ok_or_else(|| {
            Error::Config(format!("override {set:?} is not key=value"))
        })?;
        set_dotted(root, key.trim(), parse_override_value(raw.trim()))?;
    }
    Ok(())
}

/// Read a config file, apply overrides and flag values, and validate.
pub fn resolve_config(
    path: Option<&Path>,
    sets: &[String],
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<RunConfig> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                Error::UnreadableFile(format!("{}: {e}", p.display()))
            })?;
            text.parse::<toml::Table>()
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    apply_overrides(&mut table, sets)?;
    let mut config: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e| Error::Config(format!("config schema: {e}")))?;
    config.apply_seed(seed);
    if let Some(dir) = out {
        config.output_dir = dir.to_path_buf();
    }
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_config(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    const TOY: &str = r#"
seed = 9

[dataset.synthetic]
domains = 3
known_classes = 3
unknown_classes = 1
feature_dim = 8
patches = 4
samples_per_class_per_domain = 3

[backend]
kind = "synthetic"
dim = 8
patches = 4
seed = 3

[prompt]
semantic_heads = 2
unknown_tokens = 2

[hyper]
epochs = 2
batch_size = 6
"#;

    #[test]
    fn file_round_trip_resolves_and_validates() {
        let f = write_config(TOY);
        let config = resolve_config(Some(f.path()), &[], None, None).unwrap();
        assert_eq!(config.hyper.epochs, 2);
        assert_eq!(config.hyper.seed, 9, "top-level seed reaches hyper");
        assert_eq!(config.generation.perturbation.seed, 9);
        assert_eq!(config.prompt.semantic_heads, 2);
        assert_eq!(config.backend.dim, 8);
        assert_eq!(config.output_dir, PathBuf::from("runs"));

        // the effective document re-parses to the same config
        let text = config.to_toml().unwrap();
        let reparsed: RunConfig =
            text.parse::<toml::Table>().unwrap().try_into().unwrap();
        assert_eq!(reparsed, config);
    }

    #[test]
    fn unknown_keys_are_rejected_everywhere() {
        for bad in [
            "typo_section = 1",
            "[hyper]\nlearning_rte = 0.1",
            "[dataset]\nbogus = true",
            "[generation]\nguidance = 2.0",
        ] {
            let f = write_config(bad);
            let err = resolve_config(Some(f.path()), &[], None, None).unwrap_err();
            assert!(
                matches!(err, Error::Config(_)),
                "expected config error for {bad:?}, got {err:?}"
            );
        }
    }

    #[test]
    fn overrides_take_effect_and_are_schema_checked() {
        let f = write_config(TOY);
        let sets = vec![
            "hyper.learning_rate=0.05".to_string(),
            "hyper.epochs=7".to_string(),
            "generation.guidance_scale=3.5".to_string(),
            "output_dir=artifacts/sweep1".to_string(),
            "dataset.synthetic.domains=4".to_string(),
        ];
        let config = resolve_config(Some(f.path()), &sets, None, None).unwrap();
        assert_eq!(config.hyper.learning_rate, 0.05);
        assert_eq!(config.hyper.epochs, 7);
        assert_eq!(config.generation.guidance_scale, 3.5);
        assert_eq!(config.output_dir, PathBuf::from("artifacts/sweep1"));
        assert_eq!(config.dataset.synthetic.unwrap().domains, 4);

        let bad = vec!["hyper.no_such_knob=1".to_string()];
        assert!(resolve_config(Some(f.path()), &bad, None, None).is_err());
        let malformed = vec!["hyper.epochs".to_string()];
        assert!(resolve_config(Some(f.path()), &malformed, None, None).is_err());
    }

    #[test]
    fn flags_outrank_file_values() {
        let f = write_config(TOY);
        let config = resolve_config(
            Some(f.path()),
            &[],
            Some(123),
            Some(Path::new("elsewhere")),
        )
        .unwrap();
        assert_eq!(config.seed, Some(123));
        assert_eq!(config.hyper.seed, 123);
        assert_eq!(config.generation.perturbation.seed, 123);
        assert_eq!(config.output_dir, PathBuf::from("elsewhere"));
        // data and backend seeds stay untouched
        assert_eq!(config.dataset.synthetic.as_ref().unwrap().seed, 0);
        assert_eq!(config.backend.seed, Some(3));
    }

    #[test]
    fn override_scalars_keep_their_types() {
        assert_eq!(parse_override_value("3"), toml::Value::Integer(3));
        assert_eq!(parse_override_value("0.25"), toml::Value::Float(0.25));
        assert_eq!(parse_override_value("true"), toml::Value::Boolean(true));
        assert_eq!(
            parse_override_value("\"quoted\""),
            toml::Value::String("quoted".into())
        );
        assert_eq!(
            parse_override_value("plain/path.txt"),
            toml::Value::String("plain/path.txt".into())
        );
    }

    #[test]
    fn dataset_source_is_exactly_one_of_path_and_synthetic() {
        let none = DatasetConfig::default();
        assert!(none.validate().is_err());

        let both = DatasetConfig {
            path: Some("x".into()),
            synthetic: Some(SyntheticSpec::default()),
            unknown_classes: vec!["a".into()],
        };
        assert!(both.validate().is_err());

        let dir_no_unknown = DatasetConfig {
            path: Some("x".into()),
            synthetic: None,
            unknown_classes: vec![],
        };
        assert!(dir_no_unknown.validate().is_err());

        let synth = DatasetConfig {
            path: None,
            synthetic: Some(SyntheticSpec::default()),
            unknown_classes: vec![],
        };
        synth.validate().unwrap();
        let (dataset, splits) = synth.load_with_splits().unwrap();
        assert_eq!(dataset.domains.len(), 3);
        assert_eq!(splits.len(), 3);
    }

    #[test]
    fn defaults_alone_fail_only_on_the_missing_dataset() {
        let err = resolve_config(None, &[], None, None).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let sets = vec!["dataset.synthetic.domains=3".to_string()];
        let config = resolve_config(None, &sets, None, None).unwrap();
        assert_eq!(config.hyper.epochs, crate::train::DEFAULT_EPOCHS);
        assert_eq!(config.hyper.loss_weights.tau, 0.07);
        assert_eq!(config.generation.guidance_scale, 7.5);
        assert_eq!(config.generation.denoising_steps, 50);
        assert_eq!(config.prompt.semantic_heads, 4);
        assert_eq!(config.prompt.unknown_tokens, 3);
    }

    #[test]
    fn invalid_values_are_caught_after_merge() {
        let f = write_config(TOY);
        for bad in [
            "hyper.learning_rate=0.0",
            "generation.guidance_scale=0.5",
            "generation.denoising_steps=0",
            "prompt.semantic_heads=0",
            "hyper.loss_weights.tau=0.0",
        ] {
            let sets = vec![bad.to_string()];
            let err = resolve_config(Some(f.path()), &sets, None, None).unwrap_err();
            assert!(
                matches!(err, Error::Config(_)),
                "expected config error for {bad:?}, got {err:?}"
            );
        }
    }
}
