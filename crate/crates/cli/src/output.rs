//! Output files: written whole through a temporary sibling and renamed into
//! place, with run metadata kept in a separate file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;

pub struct OutputDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("cannot create {}", root.display()))?;
        Ok(Self { root: root.to_path_buf(), written: Vec::new() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(name);
        write_atomic(&path, bytes)?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    /// `<verb>.meta.json`: everything that varies between identical runs.
    pub fn finish(mut self, meta: Metadata) -> Result<Vec<PathBuf>> {
        let outputs: Vec<String> = self.written.iter().map(|p| p.display().to_string()).collect();
        let record = MetadataRecord {
            verb: meta.verb,
            version: env!("CARGO_PKG_VERSION"),
            finished_unix: SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default().as_secs(),
            elapsed_seconds: meta.elapsed.as_secs_f64(),
            threads: rayon::current_num_threads(),
            config_hash: meta.config_hash,
            desk_scale: meta.desk_scale,
            seeds: meta.seeds,
            inputs: meta.inputs.iter().map(|p| p.display().to_string()).collect(),
            outputs,
        };
        let name = format!("{}.meta.json", meta.verb);
        self.write_json(&name, &record)?;
        Ok(self.written)
    }
}

pub struct Metadata<'a> {
    pub verb: &'a str,
    pub elapsed: Duration,
    pub config_hash: Option<String>,
    pub desk_scale: bool,
    pub seeds: Vec<u64>,
    pub inputs: Vec<PathBuf>,
}

#[derive(Serialize)]
struct MetadataRecord<'a> {
    verb: &'a str,
    version: &'a str,
    finished_unix: u64,
    elapsed_seconds: f64,
    threads: usize,
    config_hash: Option<String>,
    desk_scale: bool,
    seeds: Vec<u64>,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().context("output path has no file name")?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    let result = (|| -> Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.with_context(|| format!("cannot write {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_and_leaves_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
