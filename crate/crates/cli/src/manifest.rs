use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use hier_reid::matcher::sha256_file;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    Ok,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

/// Record of one command invocation, rewritten atomically at start and end.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub started_unix: f64,
    pub finished_unix: Option<f64>,
    pub status: Status,
    pub error: Option<String>,
    /// Set when a failed run left some outputs behind.
    pub partial_outputs: bool,
    pub artifacts: Vec<Artifact>,
    #[serde(skip)]
    path: PathBuf,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl RunManifest {
    /// Writes the initial manifest before any outputs exist.
    pub fn begin<C: Serialize>(
        command: &str,
        config: &C,
        seeds: &[(&str, u64)],
        path: PathBuf,
    ) -> anyhow::Result<Self> {
        let manifest = Self {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config: serde_json::to_value(config)?,
            seeds: seeds.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            started_unix: now(),
            finished_unix: None,
            status: Status::Running,
            error: None,
            partial_outputs: false,
            artifacts: Vec::new(),
            path,
        };
        manifest.write()?;
        Ok(manifest)
    }

    pub fn add_artifact(&mut self, path: &Path) -> anyhow::Result<()> {
        let bytes = fs::metadata(path)?.len();
        self.artifacts.push(Artifact {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
            bytes,
        });
        Ok(())
    }

    pub fn finish(mut self, error: Option<String>) -> anyhow::Result<()> {
        self.finished_unix = Some(now());
        self.partial_outputs = error.is_some() && !self.artifacts.is_empty();
        self.status = if error.is_some() {
            Status::Failed
        } else {
            Status::Ok
        };
        self.error = error;
        self.write()
    }

    fn write(&self) -> anyhow::Result<()> {
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let tmp = self.path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(self)?)?;
        fs::rename(&tmp, &self.path)?;
        Ok(())
    }
}
