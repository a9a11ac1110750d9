use std::fs;
use std::path::{Path, PathBuf};

use draft_core::checkpoint::write_atomic;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SNAPSHOT};
use crate::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const SUBDIRS: [&str; 4] = ["checkpoints", "metrics", "features", "logs"];

/// One executed subcommand and the files it produced, relative to the run
/// directory. `timing` files hold wall-clock measurements and are exempt
/// from value comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub command: Vec<String>,
    pub outputs: Vec<String>,
    #[serde(default)]
    pub timing: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

fn runtime_io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

/// A run directory bound to exactly one resolved configuration.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    /// Creates the layout and writes the snapshot, or checks that an
    /// existing snapshot matches `cfg`.
    pub fn open(root: &Path, cfg: &RunConfig) -> Result<Self, CliError> {
        for sub in SUBDIRS {
            let d = root.join(sub);
            fs::create_dir_all(&d).map_err(|e| runtime_io(&d, e))?;
        }
        let snap = root.join(SNAPSHOT);
        let mut resolved = cfg.clone();
        resolved.output_dir = None;
        let text = resolved.to_toml();
        if snap.exists() {
            let existing = fs::read_to_string(&snap).map_err(|e| runtime_io(&snap, e))?;
            if existing != text {
                return Err(CliError::Config(format!(
                    "{} already holds a run with a different configuration",
                    root.display()
                )));
            }
        } else {
            write_atomic(&snap, text.as_bytes())?;
        }
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).expect("report serializes");
        write_atomic(&self.path(rel), text.as_bytes())?;
        Ok(())
    }

    pub fn manifest(&self) -> Result<Manifest, CliError> {
        read_manifest(&self.root)
    }

    /// Records an entry, replacing an earlier entry for the same command.
    pub fn record(&self, entry: ManifestEntry) -> Result<(), CliError> {
        let mut m = self.manifest()?;
        m.entries.retain(|e| e.command != entry.command);
        m.entries.push(entry);
        self.write_json(MANIFEST, &m)
    }
}

pub fn read_manifest(root: &Path) -> Result<Manifest, CliError> {
    let path = root.join(MANIFEST);
    if !path.exists() {
        return Ok(Manifest::default());
    }
    let text = fs::read_to_string(&path).map_err(|e| runtime_io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Differences between two JSON documents as `pointer: old -> new` lines.
pub fn json_diff(a: &serde_json::Value, b: &serde_json::Value, at: &str, out: &mut Vec<String>) {
    use serde_json::Value;
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            for (k, v) in x {
                let p = format!("{at}/{k}");
                match y.get(k) {
                    Some(w) => json_diff(v, w, &p, out),
                    None => out.push(format!("{p}: {v} -> (absent)")),
                }
            }
            for (k, w) in y {
                if !x.contains_key(k) {
                    out.push(format!("{at}/{k}: (absent) -> {w}"));
                }
            }
        }
        (Value::Array(x), Value::Array(y)) if x.len() == y.len() => {
            for (i, (v, w)) in x.iter().zip(y).enumerate() {
                json_diff(v, w, &format!("{at}/{i}"), out);
            }
        }
        _ if a != b => out.push(format!("{}: {a} -> {b}", if at.is_empty() { "/" } else { at })),
        _ => {}
    }
}
