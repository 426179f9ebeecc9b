use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const BUILD_ID: &str = concat!("genmix-", env!("CARGO_PKG_VERSION"), "+", env!("GENMIX_BUILD_ID"));

#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

impl Artifact {
    pub fn of(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let mut hasher = Sha256::new();
        let mut buf = vec![0u8; 1 << 16];
        let mut bytes = 0u64;
        loop {
            let n = file.read(&mut buf).with_context(|| format!("reading {}", path.display()))?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
            bytes += n as u64;
        }
        Ok(Self {
            path: path.to_path_buf(),
            sha256: format!("{:x}", hasher.finalize()),
            bytes,
        })
    }

    /// Every regular file under `path` (or `path` itself), sorted by path.
    pub fn all(path: impl AsRef<Path>) -> Result<Vec<Self>> {
        let path = path.as_ref();
        if !path.is_dir() {
            return Ok(vec![Self::of(path)?]);
        }
        let mut files = Vec::new();
        let mut stack = vec![path.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for entry in std::fs::read_dir(&dir).with_context(|| format!("listing {}", dir.display()))? {
                let p = entry?.path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    files.push(p);
                }
            }
        }
        files.sort();
        files.iter().map(Self::of).collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Stage {
    pub name: String,
    pub started_unix: f64,
    pub finished_unix: f64,
}

/// Record of one subcommand run: configuration, seed, build, stage times,
/// and checksummed inputs and outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub build_id: String,
    pub seed: u64,
    pub config: Value,
    pub stages: Vec<Stage>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub results: Value,
}

pub fn now_unix() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: Value) -> Self {
        Self {
            command: command.to_string(),
            build_id: BUILD_ID.to_string(),
            seed,
            config,
            stages: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            results: Value::Object(Default::default()),
        }
    }

    /// Runs `f` as a named stage, recording its start and end times.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let started_unix = now_unix();
        let out = f()?;
        self.stages.push(Stage {
            name: name.to_string(),
            started_unix,
            finished_unix: now_unix(),
        });
        Ok(out)
    }

    pub fn input(&mut self, path: impl AsRef<Path>) -> Result<()> {
        self.inputs.extend(Artifact::all(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: impl AsRef<Path>) -> Result<()> {
        self.outputs.extend(Artifact::all(path)?);
        Ok(())
    }

    pub fn result(&mut self, key: &str, value: impl Serialize) {
        if let Value::Object(m) = &mut self.results {
            m.insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
        }
    }

    /// Writes `<dir>/<command>.manifest.json` through a temporary file and
    /// a rename, so readers never see a partial manifest.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(format!("{}.manifest.json", self.command));
        let tmp = dir.join(format!(".{}.manifest.json.tmp", self.command));
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&tmp, text + "\n").with_context(|| format!("writing {}", tmp.display()))?;
        std::fs::rename(&tmp, &path).with_context(|| format!("renaming to {}", path.display()))?;
        Ok(path)
    }
}
