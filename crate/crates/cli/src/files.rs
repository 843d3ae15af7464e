use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anl_core::Error;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `bytes` to a temporary file next to `path`, then renames it into
/// place. Returns the SHA-256 of the content.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<String> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(sha256(bytes))
}

pub fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Fails unless `path` is absent or `force` is set.
pub fn check_overwrite(path: &Path, force: bool) -> anyhow::Result<()> {
    if path.exists() && !force {
        return Err(Error::Config(format!("refusing to overwrite {} (pass --force)", path.display())).into());
    }
    Ok(())
}

/// Manifest files named directly or found under the given directories,
/// sorted and deduplicated.
pub fn find_manifests(paths: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            walk(p, &mut out)?;
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            return Err(Error::Data(format!("{} does not exist", p.display())).into());
        }
    }
    out.sort();
    out.dedup();
    if out.is_empty() {
        return Err(Error::Data("no manifests found".into()).into());
    }
    Ok(out)
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            walk(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == MANIFEST_FILE) {
            out.push(path);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b.txt");
        write_atomic(&path, b"one").unwrap();
        let h = write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        assert_eq!(h, sha256(b"two"));
        assert_eq!(fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn manifests_are_found_recursively() {
        let dir = tempfile::tempdir().unwrap();
        for sub in ["s1/x", "s2/y"] {
            write_atomic(&dir.path().join(sub).join(MANIFEST_FILE), b"{}").unwrap();
        }
        write_atomic(&dir.path().join("s1/x/trace.csv"), b"").unwrap();
        let found = find_manifests(&[dir.path().to_path_buf()]).unwrap();
        assert_eq!(found.len(), 2);
        assert!(check_overwrite(&found[0], false).is_err());
        assert!(check_overwrite(&found[0], true).is_ok());
    }
}
