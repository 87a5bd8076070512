//! Command implementations. Every command resolves its config first, does
//! its work through the library, and leaves artifacts plus a
//! `run_manifest.json` (the only file carrying a timestamp) in the output
//! directory.

use seeclip_core::archive::Archive;
use seeclip_core::backend::Backend;
use seeclip_core::config::RunConfig;
use seeclip_core::data::OSDGSplit;
use seeclip_core::eval::{
    self, dump_attention_maps, evaluate_split, lemma1_diagnostic, protocol_markdown,
    run_losdo_protocol,
};
use seeclip_core::pseudo::{
    self, GeneratorKind, MockGenerator, PerturbationConfig, PseudoRequest,
};
use seeclip_core::train::{
    load_checkpoint, save_checkpoint, write_log_jsonl, Trainer,
};
use seeclip_core::{seeds, Error, Result};
use serde_json::json;
use std::path::{Path, PathBuf};

use crate::plot;

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Data(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

/// SEECLIP_CACHE points at the pseudo-sample cache root.
fn cache_dir() -> Option<PathBuf> {
    std::env::var_os("SEECLIP_CACHE").map(PathBuf::from)
}

fn pick_split<'a>(splits: &'a [OSDGSplit], index: usize) -> Result<&'a OSDGSplit> {
    splits.get(index).ok_or_else(|| {
        Error::Config(format!(
            "--split {index} out of range; dataset yields {} splits",
            splits.len()
        ))
    })
}

/// The effective config plus invocation facts. Timestamps live here and
/// nowhere else, so every other artifact stays byte-reproducible.
fn write_run_manifest(
    config: &RunConfig,
    command: &str,
    extra: serde_json::Value,
) -> Result<()> {
    let created_unix = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = json!({
        "command": command,
        "created_unix": created_unix,
        "invocation": extra,
        "config": serde_json::to_value(config)
            .map_err(|e| Error::Data(format!("config to JSON: {e}")))?,
    });
    write_json(&config.output_dir.join("run_manifest.json"), &manifest)
}

pub fn cmd_train(config: &RunConfig, split_index: usize) -> Result<()> {
    let (dataset, splits) = config.dataset.load_with_splits()?;
    let split = pick_split(&splits, split_index)?;
    let backend = Backend::from_spec(&config.backend)?;
    let mut trainer = Trainer::new(
        &dataset,
        split,
        config.hyper.clone(),
        config.prompt,
        config.generation.clone(),
        backend,
        cache_dir(),
    )?;
    trainer.run()?;

    ensure_dir(&config.output_dir)?;
    let log_path = config.output_dir.join("train_log.jsonl");
    write_log_jsonl(trainer.log(), &log_path)?;
    let checkpoint_path = config.output_dir.join("checkpoint.star");
    let final_total = trainer.log().last().map(|r| r.total).unwrap_or(f64::NAN);
    let steps = trainer.state().step;
    save_checkpoint(trainer.state(), &checkpoint_path)?;
    write_run_manifest(
        config,
        "train",
        json!({
            "split": split_index,
            "target_domain": dataset.domains[split.target_domain],
            "source_domains": split.source_domains,
        }),
    )?;
    println!(
        "trained {} steps (target domain held out: {}), final total loss {:.6}",
        steps, dataset.domains[split.target_domain], final_total
    );
    println!("checkpoint: {}", checkpoint_path.display());
    println!("log: {}", log_path.display());
    Ok(())
}

pub fn cmd_evaluate(config: &RunConfig, checkpoint: &Path, split_index: usize) -> Result<()> {
    let (dataset, splits) = config.dataset.load_with_splits()?;
    let split = pick_split(&splits, split_index)?;
    let backend = Backend::from_spec(&config.backend)?;
    let state = load_checkpoint(checkpoint)?;
    let report = evaluate_split(&dataset, split, &state, &backend, &config.eval)?;

    ensure_dir(&config.output_dir)?;
    let report_path = config.output_dir.join("eval_report.json");
    write_json(
        &report_path,
        &serde_json::to_value(&report).map_err(|e| Error::Data(e.to_string()))?,
    )?;
    write_run_manifest(
        config,
        "evaluate",
        json!({ "split": split_index, "checkpoint": checkpoint.display().to_string() }),
    )?;
    println!(
        "target {}: acc {:.4}  known {:.4}  unknown {:.4}  h-score {:.4}  open-space {:.4}",
        report.target_domain,
        report.closed_acc,
        report.known_acc,
        report.unknown_acc,
        report.h_score,
        report.open_space_rate
    );
    println!("report: {}", report_path.display());
    Ok(())
}

pub fn cmd_protocol(config: &RunConfig) -> Result<()> {
    let (dataset, splits) = config.dataset.load_with_splits()?;
    let backend = Backend::from_spec(&config.backend)?;
    let (report, states) = run_losdo_protocol(
        &dataset,
        &splits,
        &config.hyper,
        config.prompt,
        &config.generation,
        &backend,
        &config.eval,
        cache_dir(),
    )?;

    ensure_dir(&config.output_dir)?;
    for (split, state) in splits.iter().zip(&states) {
        let name = format!("checkpoint_{}.star", dataset.domains[split.target_domain]);
        save_checkpoint(state, &config.output_dir.join(name))?;
    }
    write_json(
        &config.output_dir.join("protocol_report.json"),
        &serde_json::to_value(&report).map_err(|e| Error::Data(e.to_string()))?,
    )?;
    let table = protocol_markdown(&report);
    write_bytes(&config.output_dir.join("protocol_summary.md"), table.as_bytes())?;
    write_run_manifest(config, "protocol", json!({ "splits": splits.len() }))?;
    print!("{table}");
    Ok(())
}

pub fn cmd_generate(
    config: &RunConfig,
    checkpoint: &Path,
    count: usize,
    split_index: usize,
) -> Result<()> {
    if count == 0 {
        return Err(Error::Config("--count must be >= 1".into()));
    }
    let (dataset, splits) = config.dataset.load_with_splits()?;
    let split = pick_split(&splits, split_index)?;
    let state = load_checkpoint(checkpoint)?;
    let c = split.num_known_classes();
    if state.params.num_classes() != c {
        return Err(Error::Config(format!(
            "checkpoint covers {} classes, split has {c}",
            state.params.num_classes()
        )));
    }

    ensure_dir(&config.output_dir)?;
    let negative = pseudo::build_negative_prompt(&split.known_classes)?;
    let mut archive = Archive::default();
    let mut entries = Vec::new();
    let mut exported = Vec::new();
    let request_dir = config.output_dir.join("generation_requests");

    for &domain_id in &split.source_domains {
        for class_id in 0..c {
            let cfg = PerturbationConfig {
                sigma: config.generation.perturbation.sigma,
                seed: seeds::derive(
                    config.generation.perturbation.seed,
                    &["generate".into(), domain_id.into(), class_id.into()],
                ),
            };
            let perturbed =
                pseudo::perturb_semantic_tokens(state.states.get(class_id)?, &cfg)?;
            let condition = pseudo::build_joint_condition(
                pseudo::build_positive_prompt(&dataset.domains[domain_id])?,
                negative.clone(),
                &perturbed,
                &state.params.proj,
                config.generation.denoising_steps,
                config.generation.guidance_scale,
            )?;
            let request = PseudoRequest {
                source_class_id: class_id,
                domain_id,
                unknown_label: c,
                count,
                request_id: (domain_id * c + class_id) as u64,
            };
            if config.generation.generator == GeneratorKind::External {
                ensure_dir(&request_dir)?;
                let path = pseudo::export_generation_request(&condition, &request, &request_dir)?;
                exported.push(path.display().to_string());
                continue;
            }
            let generator = pseudo::Generator::Mock(
                MockGenerator::new(config.backend.patches, cfg)?.with_cache_dir(cache_dir()),
            );
            for (i, sample) in pseudo::generate_pseudo_unknowns(&condition, &request, &generator)?
                .into_iter()
                .enumerate()
            {
                let name = format!("pseudo.{domain_id:02}.{class_id:02}.{i:04}");
                let dims = vec![sample.payload.nrows() as u64, sample.payload.ncols() as u64];
                archive.insert_f64(&name, dims, sample.payload.iter().cloned().collect())?;
                entries.push(json!({
                    "name": name,
                    "domain_id": sample.domain_id,
                    "label": sample.label,
                    "source_class_id": sample.provenance.source_class_id,
                    "sigma": sample.provenance.sigma,
                    "seed": sample.provenance.seed,
                }));
            }
        }
    }

    let manifest_path = config.output_dir.join("pseudo_manifest.json");
    if config.generation.generator == GeneratorKind::External {
        write_json(
            &manifest_path,
            &json!({ "mode": "external", "requests": exported }),
        )?;
        println!("exported {} generation requests to {}", exported.len(), request_dir.display());
    } else {
        let archive_path = config.output_dir.join("pseudo_samples.star");
        archive.save(&archive_path)?;
        write_json(
            &manifest_path,
            &json!({ "mode": "mock", "unknown_label": c, "samples": entries }),
        )?;
        println!(
            "generated {} pseudo-unknown samples into {}",
            entries.len(),
            archive_path.display()
        );
    }
    write_run_manifest(
        config,
        "generate",
        json!({ "split": split_index, "count": count, "checkpoint": checkpoint.display().to_string() }),
    )?;
    Ok(())
}

pub fn cmd_diagnose(
    config: &RunConfig,
    checkpoint: &Path,
    split_index: usize,
    limit: usize,
) -> Result<()> {
    let (_dataset, splits) = config.dataset.load_with_splits()?;
    let split = pick_split(&splits, split_index)?;
    let backend = Backend::from_spec(&config.backend)?;
    let state = load_checkpoint(checkpoint)?;

    let domain_vector = eval::split_domain_vector(split, &backend, config.eval.transductive)?;
    let report = lemma1_diagnostic(&state, &split.known_classes, &domain_vector, &backend)?;

    ensure_dir(&config.output_dir)?;
    write_json(
        &config.output_dir.join("discrepancy.json"),
        &serde_json::to_value(&report).map_err(|e| Error::Data(e.to_string()))?,
    )?;
    let samples: Vec<_> = split.target_samples.iter().take(limit).cloned().collect();
    let attention_dir = config.output_dir.join("attention");
    let written = dump_attention_maps(&state, &samples, &backend, &attention_dir)?;
    write_run_manifest(
        config,
        "diagnose",
        json!({ "split": split_index, "checkpoint": checkpoint.display().to_string() }),
    )?;
    println!(
        "mean semantic separation gain {:.6} over {} class pairs; {} attention maps in {}",
        report.mean_gain,
        report.dis.len() * (report.dis.len() - 1),
        written.len(),
        attention_dir.display()
    );
    Ok(())
}

pub fn cmd_make_synthetic(config: &RunConfig) -> Result<()> {
    let spec = config.dataset.synthetic.as_ref().ok_or_else(|| {
        Error::Config("make-synthetic needs a [dataset.synthetic] section".into())
    })?;
    let (dataset, unknown_classes) = config.dataset.load()?;

    ensure_dir(&config.output_dir)?;
    let mut archive = Archive::default();
    let mut entries = Vec::new();
    for (i, sample) in dataset.samples.iter().enumerate() {
        let name = format!("sample.{i:06}");
        match &sample.payload {
            seeclip_core::data::Payload::Features(m) => {
                archive.insert_f64(
                    &name,
                    vec![m.nrows() as u64, m.ncols() as u64],
                    m.iter().cloned().collect(),
                )?;
            }
            seeclip_core::data::Payload::ImageRef(_) => {
                return Err(Error::Data(
                    "synthetic datasets carry feature payloads; found an image reference".into(),
                ));
            }
        }
        entries.push(json!({
            "name": name,
            "image_id": sample.image_id,
            "domain_id": sample.domain_id,
            "class_id": sample.class_id,
        }));
    }
    let archive_path = config.output_dir.join("dataset.star");
    archive.save(&archive_path)?;
    write_json(
        &config.output_dir.join("dataset_manifest.json"),
        &json!({
            "domains": dataset.domains,
            "classes": dataset.classes,
            "unknown_classes": unknown_classes,
            "feature_dim": spec.feature_dim,
            "patches": spec.patches,
            "samples": entries,
        }),
    )?;
    write_run_manifest(config, "make-synthetic", json!({}))?;
    println!(
        "wrote {} samples across {} domains to {}",
        dataset.samples.len(),
        dataset.domains.len(),
        archive_path.display()
    );
    Ok(())
}

pub fn cmd_plot(run_dir: &Path, out: Option<&Path>) -> Result<()> {
    let out_dir = out.map(Path::to_path_buf).unwrap_or_else(|| run_dir.join("plots"));
    let written = plot::render_run_artifacts(run_dir, &out_dir)?;
    if written.is_empty() {
        return Err(Error::Data(format!(
            "no plottable artifacts (train_log.jsonl, eval_report.json, \
             protocol_report.json, attention/*.csv) under {}",
            run_dir.display()
        )));
    }
    for path in &written {
        println!("wrote {}", path.display());
    }
    Ok(())
}
