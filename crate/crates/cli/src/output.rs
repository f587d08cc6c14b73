use anyhow::{Context, Result};
use cgrf::io::{fmt_f64, sha256_hex};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

/// Collects the files written by one invocation and finishes with a manifest.
pub struct Run {
    command: &'static str,
    config_path: Option<PathBuf>,
    config_sha256: String,
    seed: u64,
    started: u64,
    dir: PathBuf,
    outputs: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_path: Option<String>,
    config_sha256: &'a str,
    seed: u64,
    version: &'a str,
    started_unix: u64,
    finished_unix: u64,
    outputs: &'a [String],
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl Run {
    pub fn new(
        command: &'static str,
        config_path: Option<&Path>,
        config_bytes: &[u8],
        seed: u64,
        dir: &Path,
    ) -> Result<Run> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Run {
            command,
            config_path: config_path.map(Path::to_path_buf),
            config_sha256: sha256_hex(config_bytes),
            seed,
            started: now(),
            dir: dir.to_path_buf(),
            outputs: Vec::new(),
        })
    }

    /// `<stem>_<first 12 hex digits of the config hash>_s<seed>.<ext>` inside the output directory.
    pub fn path(&mut self, stem: &str, ext: &str) -> PathBuf {
        let name = format!("{stem}_{}_s{}.{ext}", &self.config_sha256[..12], self.seed);
        self.outputs.push(name.clone());
        self.dir.join(name)
    }

    pub fn write_json<T: Serialize>(&mut self, stem: &str, value: &T) -> Result<PathBuf> {
        let p = self.path(stem, "json");
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        std::fs::write(&p, s).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }

    /// CSV with string cells, numbers already formatted by the caller.
    pub fn write_csv(
        &mut self,
        stem: &str,
        header: &[&str],
        rows: impl IntoIterator<Item = Vec<String>>,
    ) -> Result<PathBuf> {
        let p = self.path(stem, "csv");
        let mut w = csv::Writer::from_path(&p).with_context(|| format!("writing {}", p.display()))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        w.flush()?;
        Ok(p)
    }

    pub fn finish(self) -> Result<PathBuf> {
        let p = self.dir.join(format!("manifest_{}_s{}.json", &self.config_sha256[..12], self.seed));
        let m = Manifest {
            command: self.command,
            config_path: self.config_path.as_ref().map(|p| p.display().to_string()),
            config_sha256: &self.config_sha256,
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION"),
            started_unix: self.started,
            finished_unix: now(),
            outputs: &self.outputs,
        };
        std::fs::write(&p, serde_json::to_string_pretty(&m)? + "\n")
            .with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }
}

pub fn num(v: f64) -> String {
    fmt_f64(v)
}
