use std::path::{Path, PathBuf};

use draft_core::backbone::{BackboneConfig, PretrainConfig};
use draft_core::eval::{ExperimentSetup, PositionArm};
use draft_core::judge::TrainConfig;
use draft_core::trajgen::GeneratorConfig;
use draft_theory::suites::SuiteConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable naming the directory under which runs without an
/// explicit output directory are placed.
pub const OUTPUT_ROOT_ENV: &str = "DRAFT_OUTPUT_ROOT";

/// File name of the resolved configuration inside a run directory.
pub const SNAPSHOT: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub split_seed: u64,
    pub pretrain_corpus: usize,
    pub n_shifted: usize,
    pub probe_fit: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = ExperimentSetup::default();
        Self {
            n_train: s.n_train,
            n_val: s.n_val,
            n_test: s.n_test,
            split_seed: s.split_seed,
            pretrain_corpus: s.pretrain_corpus,
            n_shifted: s.n_shifted,
            probe_fit: s.probe_fit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentsConfig {
    pub seeds: Vec<u64>,
    pub lengths: Vec<usize>,
    pub positions: Vec<PositionArm>,
    /// Timed examples per arm in `bench-efficiency`.
    pub efficiency_examples: usize,
    pub efficiency_warmup: usize,
}

impl Default for ExperimentsConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            lengths: vec![4, 16, 64],
            positions: vec![
                PositionArm::Tail,
                PositionArm::Middle,
                PositionArm::Head,
                PositionArm::PrefixDec,
                PositionArm::Explicit,
            ],
            efficiency_examples: 50,
            efficiency_warmup: 5,
        }
    }
}

/// Everything one run needs. Only `run` is required; every section falls
/// back to its defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Run name; also the directory name under the output root.
    pub run: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub reasoner: BackboneConfig,
    #[serde(default)]
    pub extractor: BackboneConfig,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub experiments: ExperimentsConfig,
    #[serde(default)]
    pub theory: SuiteConfig,
}

impl RunConfig {
    pub fn named(run: &str) -> Self {
        Self {
            run: run.to_string(),
            output_dir: None,
            generator: GeneratorConfig::default(),
            data: DataConfig::default(),
            reasoner: BackboneConfig::default(),
            extractor: BackboneConfig::default(),
            pretrain: PretrainConfig::default(),
            train: TrainConfig::default(),
            experiments: ExperimentsConfig::default(),
            theory: SuiteConfig::default(),
        }
    }

    pub fn setup(&self) -> ExperimentSetup {
        ExperimentSetup {
            generator: self.generator.clone(),
            n_train: self.data.n_train,
            n_val: self.data.n_val,
            n_test: self.data.n_test,
            split_seed: self.data.split_seed,
            reasoner: self.reasoner.clone(),
            extractor: self.extractor.clone(),
            pretrain: self.pretrain.clone(),
            pretrain_corpus: self.data.pretrain_corpus,
            train: self.train.clone(),
            seeds: self.experiments.seeds.clone(),
            n_shifted: self.data.n_shifted,
            probe_fit: self.data.probe_fit,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.run.is_empty() || self.run.contains(['/', '\\']) {
            return Err(CliError::Config(format!("run name {:?} is not a plain directory name", self.run)));
        }
        if self.experiments.seeds.is_empty() {
            return Err(CliError::Config("experiments.seeds must not be empty".into()));
        }
        if self.experiments.lengths.contains(&0) {
            return Err(CliError::Config("experiments.lengths must be positive".into()));
        }
        let mut setup = self.setup();
        // the length sweep must also fit the backbone window
        setup.train.l_s = self.experiments.lengths.iter().copied().chain([self.train.l_s]).max().unwrap_or(1);
        setup.validate().map_err(CliError::from)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Output directory: explicit override, then `output_dir`, then
    /// `$DRAFT_OUTPUT_ROOT/<run>`, then `runs/<run>`.
    pub fn resolve_output(&self, explicit: Option<&Path>) -> PathBuf {
        if let Some(p) = explicit {
            return p.to_path_buf();
        }
        if let Some(p) = &self.output_dir {
            return p.clone();
        }
        let root = std::env::var_os(OUTPUT_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        root.join(&self.run)
    }
}

/// Parses a `key=value` override. The value is read as a TOML value when
/// it parses as one and as a bare string otherwise.
fn parse_override(spec: &str) -> Result<(Vec<String>, toml::Value), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {spec:?}")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(CliError::Usage(format!("--set key {key:?} is malformed")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((path, value))
}

fn apply_override(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<(), CliError> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("--set {}: {p} is not a section", path.join("."))))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

/// Parses configuration text with `--set` overrides applied on top.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    for spec in overrides {
        let (path, value) = parse_override(spec)?;
        apply_override(&mut table, &path, value)?;
    }
    let normalized = toml::to_string(&table).map_err(|e| CliError::Config(e.to_string()))?;
    let de = toml::Deserializer::parse(&normalized).map_err(|e| CliError::Config(e.to_string()))?;
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner().to_string();
        let inner = inner.lines().last().unwrap_or_default().trim().to_string();
        if path == "." {
            CliError::Config(inner)
        } else {
            CliError::Config(format!("{path}: {inner}"))
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text, overrides)
}
