//! Loader for on-disk datasets laid out as `root/<domain>/<class>/<files>`.
//!
//! Domains and classes get stable integer ids from lexicographic name
//! order, so two machines walking the same tree agree on every id. Files
//! become image-reference samples; decoding is left to whichever embedding
//! backend consumes them.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Dataset, LabeledSample, Payload, PayloadMode};
use crate::error::{Error, Result};

fn sorted_entries(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let read = fs::read_dir(dir)
        .map_err(|e| Error::UnreadableFile(format!("{}: {e}", dir.display())))?;
    let mut out = Vec::new();
    for entry in read {
        let entry =
            entry.map_err(|e| Error::UnreadableFile(format!("{}: {e}", dir.display())))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') {
            continue;
        }
        out.push((name, entry.path()));
    }
    out.sort();
    Ok(out)
}

fn expect_dir(path: &Path, role: &str) -> Result<()> {
    let meta = fs::metadata(path)
        .map_err(|e| Error::UnreadableFile(format!("{}: {e}", path.display())))?;
    if !meta.is_dir() {
        return Err(Error::UnreadableFile(format!(
            "{}: expected a {role} directory, found a file",
            path.display()
        )));
    }
    Ok(())
}

/// Walk `root/<domain>/<class>/<files>` into a dataset of image
/// references. Hidden entries (dot-prefixed) are skipped everywhere.
pub fn load_directory_dataset(root: &Path) -> Result<Dataset> {
    match fs::metadata(root) {
        Ok(meta) if meta.is_dir() => {}
        _ => return Err(Error::MissingRoot(root.display().to_string())),
    }

    let domain_entries = sorted_entries(root)?;
    if domain_entries.is_empty() {
        return Err(Error::MissingRoot(format!(
            "{}: contains no domain directories",
            root.display()
        )));
    }

    let mut class_names: BTreeSet<String> = BTreeSet::new();
    let mut per_domain: Vec<(String, Vec<(String, Vec<(String, PathBuf)>)>)> = Vec::new();
    for (domain_name, domain_path) in &domain_entries {
        expect_dir(domain_path, "domain")?;
        let class_entries = sorted_entries(domain_path)?;
        if class_entries.is_empty() {
            return Err(Error::EmptyDomain(domain_path.display().to_string()));
        }
        let mut classes = Vec::new();
        for (class_name, class_path) in class_entries {
            expect_dir(&class_path, "class")?;
            let files = sorted_entries(&class_path)?;
            if files.is_empty() {
                return Err(Error::Data(format!(
                    "class directory contains no files: {}",
                    class_path.display()
                )));
            }
            for (_, f) in &files {
                expect_file(f)?;
            }
            class_names.insert(class_name.clone());
            classes.push((class_name, files));
        }
        per_domain.push((domain_name.clone(), classes));
    }

    let classes: Vec<String> = class_names.into_iter().collect();
    let class_id = |name: &str| classes.iter().position(|c| c == name).unwrap();

    let mut samples = Vec::new();
    for (domain_id, (domain_name, domain_classes)) in per_domain.iter().enumerate() {
        for (class_name, files) in domain_classes {
            let cid = class_id(class_name);
            for (file_name, path) in files {
                samples.push(LabeledSample {
                    image_id: format!("{domain_name}/{class_name}/{file_name}"),
                    domain_id,
                    class_id: cid,
                    payload: Payload::ImageRef(path.clone()),
                });
            }
        }
    }

    Ok(Dataset {
        domains: per_domain.into_iter().map(|(name, _)| name).collect(),
        classes,
        samples,
        payload_mode: PayloadMode::ImageRef,
    })
}

fn expect_file(path: &Path) -> Result<()> {
    let meta = fs::metadata(path)
        .map_err(|e| Error::UnreadableFile(format!("{}: {e}", path.display())))?;
    if !meta.is_file() {
        return Err(Error::UnreadableFile(format!(
            "{}: expected an image file, found a directory",
            path.display()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs::File;

    fn touch(path: &Path) {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        File::create(path).unwrap();
    }

    fn sample_tree() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        for (d, c, f) in [
            ("sketch", "dog", "001.png"),
            ("sketch", "dog", "000.png"),
            ("sketch", "cat", "a.png"),
            ("photo", "cat", "x.png"),
            ("photo", "elephant", "y.png"),
        ] {
            touch(&root.join(d).join(c).join(f));
        }
        dir
    }

    #[test]
    fn ids_follow_lexicographic_order() {
        let dir = sample_tree();
        let ds = load_directory_dataset(dir.path()).unwrap();
        assert_eq!(ds.domains, vec!["photo", "sketch"]);
        assert_eq!(ds.classes, vec!["cat", "dog", "elephant"]);
        assert_eq!(ds.payload_mode, PayloadMode::ImageRef);
        assert_eq!(ds.samples.len(), 5);
        let first = &ds.samples[0];
        assert_eq!(first.image_id, "photo/cat/x.png");
        assert_eq!(first.domain_id, 0);
        assert_eq!(first.class_id, 0);
        // files within a class are sorted too
        let dog_ids: Vec<&str> = ds
            .samples
            .iter()
            .filter(|s| s.class_id == 1)
            .map(|s| s.image_id.as_str())
            .collect();
        assert_eq!(dog_ids, vec!["sketch/dog/000.png", "sketch/dog/001.png"]);
    }

    #[test]
    fn missing_root_is_distinct() {
        let err = load_directory_dataset(Path::new("/no/such/dataset/root")).unwrap_err();
        assert_eq!(err.code(), "missing_root");
    }

    #[test]
    fn empty_domain_is_distinct() {
        let dir = sample_tree();
        fs::create_dir(dir.path().join("art")).unwrap();
        let err = load_directory_dataset(dir.path()).unwrap_err();
        assert_eq!(err.code(), "empty_domain");
        assert!(err.to_string().contains("art"));
    }

    #[test]
    fn stray_file_where_directory_expected_is_unreadable() {
        let dir = sample_tree();
        touch(&dir.path().join("notes.txt"));
        let err = load_directory_dataset(dir.path()).unwrap_err();
        assert_eq!(err.code(), "unreadable_file");
    }

    #[test]
    fn hidden_entries_are_skipped() {
        let dir = sample_tree();
        touch(&dir.path().join(".DS_Store"));
        touch(&dir.path().join("sketch/dog/.hidden"));
        let ds = load_directory_dataset(dir.path()).unwrap();
        assert_eq!(ds.samples.len(), 5);
    }

    #[test]
    fn empty_class_directory_is_a_data_error() {
        let dir = sample_tree();
        fs::create_dir(dir.path().join("photo").join("zebra")).unwrap();
        let err = load_directory_dataset(dir.path()).unwrap_err();
        assert_eq!(err.code(), "data");
    }
}
