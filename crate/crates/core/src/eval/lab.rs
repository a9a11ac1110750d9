use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{evaluate, mean_std, MetricsReport};
use crate::backbone::{BackboneConfig, PretrainConfig};
use crate::checkpoint::write_atomic;
use crate::judge::{build_bases, history_to_jsonl, train, DraftModel, Mode, TrainConfig};
use crate::latent::Insertion;
use crate::params::{Group, ParamStore};
use crate::trajgen::{generate_corpus, split, GeneratorConfig, Split, TrajectoryExample};
use crate::{derive_seed, Error, Result};

const PRETRAIN_CORPUS_SALT: u64 = 0x9e7;

/// Everything that determines the data, the frozen bases and the default
/// training recipe of an experiment family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSetup {
    pub generator: GeneratorConfig,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub split_seed: u64,
    pub reasoner: BackboneConfig,
    pub extractor: BackboneConfig,
    pub pretrain: PretrainConfig,
    /// Unlabelled trajectories for base pretraining, generated with a seed
    /// derived from the generator seed.
    pub pretrain_corpus: usize,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    /// Size of the shifted-distribution evaluation corpus.
    pub n_shifted: usize,
    /// Training examples whose features fit the linear probe.
    pub probe_fit: usize,
}

impl Default for ExperimentSetup {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            n_train: 2000,
            n_val: 400,
            n_test: 0,
            split_seed: 11,
            reasoner: BackboneConfig::default(),
            extractor: BackboneConfig::default(),
            pretrain: PretrainConfig::default(),
            pretrain_corpus: 128,
            train: TrainConfig::default(),
            seeds: vec![0, 1, 2],
            n_shifted: 400,
            probe_fit: 600,
        }
    }
}

impl ExperimentSetup {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.reasoner.validate()?;
        self.extractor.validate()?;
        self.train.validate()?;
        if self.n_train < 2 || self.n_val < 2 {
            return Err(Error::Config("n_train and n_val must be at least 2".into()));
        }
        if self.pretrain_corpus == 0 {
            return Err(Error::Config("pretrain_corpus must be positive".into()));
        }
        if self.reasoner.max_seq_len < self.generator.seq_len + self.train.l_s + 1
            || self.extractor.max_seq_len < self.generator.seq_len + self.train.l_s
        {
            return Err(Error::Config(format!(
                "max_seq_len {} is too short for L={} plus a draft of {}",
                self.reasoner.max_seq_len, self.generator.seq_len, self.train.l_s
            )));
        }
        if self.reasoner.vocab_size != self.generator.vocab_size {
            return Err(Error::Config(format!(
                "backbone vocab_size {} differs from generator vocab_size {}",
                self.reasoner.vocab_size, self.generator.vocab_size
            )));
        }
        Ok(())
    }

    /// Stable identifier of data plus bases (training recipe excluded).
    pub fn data_id(&self) -> String {
        let v = serde_json::json!({
            "generator": self.generator,
            "n": [self.n_train, self.n_val, self.n_test],
            "split_seed": self.split_seed,
            "reasoner": self.reasoner,
            "extractor": self.extractor,
            "pretrain": self.pretrain,
            "pretrain_corpus": self.pretrain_corpus,
        });
        short_hash(&v.to_string())
    }
}

fn short_hash(s: &str) -> String {
    Sha256::digest(s.as_bytes())[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Maps configurations that train identically onto one representative:
/// the draft-free modes ignore insertion, and `no_extractor` is defined as
/// `one_stage`.
pub fn canonical_config(cfg: &TrainConfig, base: &TrainConfig) -> TrainConfig {
    let mut c = cfg.clone();
    if c.mode == Mode::NoExtractor {
        c.mode = Mode::OneStage;
    }
    if !c.mode.uses_draft() {
        c.insertion = Insertion::Tail;
    }
    if c.mode == Mode::OneStage {
        c.l_s = base.l_s;
    }
    c
}

/// One trained and evaluated configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub key: String,
    pub data_id: String,
    pub config: TrainConfig,
    pub metrics: MetricsReport,
    pub final_loss: f64,
    pub trainable: Vec<Group>,
    pub checksums_before: BTreeMap<Group, String>,
    pub checksums_after: BTreeMap<Group, String>,
    /// Every group outside `trainable` ended bitwise unchanged (also
    /// enforced after each step during training).
    pub freeze_clean: bool,
    pub history_path: Option<String>,
}

impl CellResult {
    pub fn accuracy(&self) -> f64 {
        self.metrics.accuracy
    }
}

/// Mean ± std over seeds per axis value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: String,
    pub values: Vec<String>,
    pub seeds: Vec<u64>,
    pub mean: Vec<f64>,
    pub std: Vec<Option<f64>>,
    /// `raw[i][k]`: value `i`, seed `k`.
    pub raw: Vec<Vec<f64>>,
    /// Cells that aborted; their values are missing from `raw`.
    pub failed: Vec<String>,
}

impl SweepResult {
    pub fn from_raw(axis: &str, values: Vec<String>, seeds: Vec<u64>, raw: Vec<Vec<f64>>, failed: Vec<String>) -> Self {
        let (mean, std) = raw.iter().map(|r| mean_std(r)).unzip();
        Self {
            axis: axis.to_string(),
            values,
            seeds,
            mean,
            std,
            raw,
            failed,
        }
    }

    pub fn is_partial(&self) -> bool {
        !self.failed.is_empty()
    }

    pub fn mean_of(&self, value: &str) -> Option<f64> {
        self.values.iter().position(|v| v == value).map(|i| self.mean[i])
    }

    /// Whether the best mean sits strictly inside the axis (needs three or
    /// more values; fewer values make no shape claim).
    pub fn interior_maximum(&self) -> Option<bool> {
        if self.values.len() < 3 {
            return None;
        }
        let best = (0..self.mean.len()).max_by(|&a, &b| self.mean[a].total_cmp(&self.mean[b]))?;
        Some(best > 0 && best + 1 < self.values.len())
    }
}

/// One arm of the position sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionArm {
    Tail,
    Middle,
    Head,
    PrefixDec,
    Explicit,
}

impl PositionArm {
    pub fn name(self) -> &'static str {
        match self {
            PositionArm::Tail => "tail",
            PositionArm::Middle => "middle",
            PositionArm::Head => "head",
            PositionArm::PrefixDec => "prefix_dec",
            PositionArm::Explicit => "explicit",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [
            PositionArm::Tail,
            PositionArm::Middle,
            PositionArm::Head,
            PositionArm::PrefixDec,
            PositionArm::Explicit,
        ]
        .into_iter()
        .find(|a| a.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown position {s:?}")))
    }

    fn apply(self, cfg: &mut TrainConfig) {
        let ins = match self {
            PositionArm::Tail => Insertion::Tail,
            PositionArm::Middle => Insertion::Middle,
            PositionArm::Head => Insertion::Head,
            PositionArm::PrefixDec => Insertion::PrefixDec,
            PositionArm::Explicit => {
                cfg.mode = Mode::ExplicitBaseline;
                return;
            }
        };
        cfg.mode = Mode::Decoupled;
        cfg.insertion = ins;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: Mode,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: Option<f64>,
    /// Frozen-group checksums per seed, all unchanged by training.
    pub checksums: Vec<BTreeMap<Group, String>>,
    pub freeze_clean: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, mode: Mode) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationRow {
    pub mode: Mode,
    pub seed: u64,
    pub in_distribution: f64,
    pub shifted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationReport {
    pub shifted_generator: GeneratorConfig,
    pub rows: Vec<GeneralizationRow>,
}

/// The labelled corpus of a setup, split into train/val/test.
pub fn make_split(setup: &ExperimentSetup) -> Result<Split> {
    let n = setup.n_train + setup.n_val + setup.n_test;
    let corpus = generate_corpus(&setup.generator, n)?;
    let f = |k: usize| k as f64 / n as f64;
    split(&corpus, [f(setup.n_train), f(setup.n_val), f(setup.n_test)], setup.split_seed)
}

/// Unlabelled token sequences for base pretraining, drawn with a seed
/// derived from the generator seed.
pub fn pretrain_corpus(setup: &ExperimentSetup) -> Result<Vec<Vec<usize>>> {
    let mut pg = setup.generator.clone();
    pg.seed = derive_seed(setup.generator.seed, PRETRAIN_CORPUS_SALT);
    Ok(generate_corpus(&pg, setup.pretrain_corpus.max(2))?
        .into_iter()
        .map(|e| e.tokens)
        .collect())
}

/// Shared data, bases and a memo of trained cells for one experiment
/// family. With an output directory every cell is also persisted (metrics,
/// history and checkpoint) and reloaded instead of retrained.
pub struct Lab {
    pub setup: ExperimentSetup,
    pub data: Split,
    pub bases: ParamStore,
    pub pretrain_curve: Vec<f64>,
    cells: BTreeMap<String, CellResult>,
    models: HashMap<String, DraftModel>,
    out_dir: Option<PathBuf>,
    pub verbose: bool,
}

impl Lab {
    pub fn new(setup: ExperimentSetup) -> Result<Self> {
        setup.validate()?;
        let pretrain_tokens = pretrain_corpus(&setup)?;
        let (bases, pretrain_curve) = build_bases(&setup.reasoner, &setup.extractor, &pretrain_tokens, &setup.pretrain)?;
        Self::with_bases(setup, bases, pretrain_curve)
    }

    /// Skips pretraining and uses `bases` (as produced by [`Lab::new`] for
    /// the same setup).
    pub fn with_bases(setup: ExperimentSetup, bases: ParamStore, pretrain_curve: Vec<f64>) -> Result<Self> {
        setup.validate()?;
        let data = make_split(&setup)?;
        Ok(Self {
            setup,
            data,
            bases,
            pretrain_curve,
            cells: BTreeMap::new(),
            models: HashMap::new(),
            out_dir: None,
            verbose: false,
        })
    }

    pub fn with_output_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.out_dir = Some(dir.into());
        self
    }

    pub fn output_dir(&self) -> Option<&Path> {
        self.out_dir.as_deref()
    }

    fn log(&self, msg: &str) {
        if self.verbose {
            eprintln!("{msg}");
        }
    }

    pub fn cell_key(&self, cfg: &TrainConfig) -> String {
        let c = canonical_config(cfg, &self.setup.train);
        let v = serde_json::json!({"data": self.setup.data_id(), "train": c});
        format!("{}-s{}-{}", c.mode.name(), c.seed, short_hash(&v.to_string()))
    }

    fn paths(&self, key: &str) -> Option<(PathBuf, PathBuf, PathBuf)> {
        self.out_dir.as_ref().map(|d| {
            (
                d.join("metrics").join(format!("{key}.json")),
                d.join("checkpoints").join(format!("{key}.ckpt")),
                d.join("logs").join(format!("{key}.jsonl")),
            )
        })
    }

    fn try_resume(&mut self, key: &str) -> Result<bool> {
        let Some((mpath, cpath, _)) = self.paths(key) else {
            return Ok(false);
        };
        if !mpath.exists() || !cpath.exists() {
            return Ok(false);
        }
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let cell: CellResult = serde_json::from_str(&text)
            .map_err(|e| Error::Input(format!("{}: {e}", mpath.display())))?;
        if cell.data_id != self.setup.data_id() {
            return Ok(false);
        }
        let model = DraftModel::load(&cpath)?;
        self.models.insert(key.to_string(), model);
        self.cells.insert(key.to_string(), cell);
        Ok(true)
    }

    /// Trains (or recalls) one configuration and evaluates it on the
    /// validation split.
    pub fn run_cell(&mut self, cfg: &TrainConfig) -> Result<CellResult> {
        let key = self.cell_key(cfg);
        if let Some(c) = self.cells.get(&key) {
            return Ok(c.clone());
        }
        if self.try_resume(&key)? {
            self.log(&format!("resumed {key}"));
            return Ok(self.cells[&key].clone());
        }
        let config = canonical_config(cfg, &self.setup.train);
        let mut model = DraftModel::new(
            &self.bases,
            self.setup.reasoner.clone(),
            self.setup.extractor.clone(),
            config.clone(),
        )?;
        if config.mode == Mode::ExplicitBaseline {
            if let Some(donor) = self
                .models
                .values()
                .find(|m| m.config.mode == Mode::ExplicitBaseline && m.config.l_s == config.l_s)
            {
                model.share_summaries(donor);
            }
        }
        let before: BTreeMap<Group, String> = model.store.checksums().into_iter().collect();
        let history = train(&mut model, &self.data.train, &self.data.val)?;
        let after: BTreeMap<Group, String> = model.store.checksums().into_iter().collect();
        let trainable = model.trainable_groups();
        let freeze_clean = Group::ALL
            .iter()
            .filter(|g| !trainable.contains(g))
            .all(|g| before[g] == after[g]);
        let mut metrics = evaluate(&model, &self.data.val, config.threshold)?;
        metrics.config_id = Some(key.clone());
        let final_loss = history.last().map_or(f64::NAN, |h| h.loss);
        let mut cell = CellResult {
            key: key.clone(),
            data_id: self.setup.data_id(),
            config,
            metrics,
            final_loss,
            trainable,
            checksums_before: before,
            checksums_after: after,
            freeze_clean,
            history_path: None,
        };
        if let Some((mpath, cpath, hpath)) = self.paths(&key) {
            write_atomic(&hpath, history_to_jsonl(&history).as_bytes())?;
            model.save(&cpath)?;
            cell.history_path = Some(format!("logs/{key}.jsonl"));
            let json = serde_json::to_string_pretty(&cell).expect("cell serializes");
            write_atomic(&mpath, json.as_bytes())?;
        }
        self.log(&format!(
            "{key}: val accuracy {:.4} (loss {:.4})",
            cell.metrics.accuracy, cell.final_loss
        ));
        self.models.insert(key.clone(), model);
        self.cells.insert(key, cell.clone());
        Ok(cell)
    }

    /// The trained model behind a configuration, training it if needed.
    pub fn model(&mut self, cfg: &TrainConfig) -> Result<&DraftModel> {
        self.run_cell(cfg)?;
        let key = self.cell_key(cfg);
        Ok(&self.models[&key])
    }

    /// Forgets every in-memory cell (persisted cells stay on disk).
    pub fn clear_memory(&mut self) {
        self.cells.clear();
        self.models.clear();
    }

    pub fn cells(&self) -> impl Iterator<Item = &CellResult> {
        self.cells.values()
    }

    pub fn config_for(&self, mode: Mode, seed: u64) -> TrainConfig {
        TrainConfig {
            mode,
            seed,
            ..self.setup.train.clone()
        }
    }

    fn sweep<F>(&mut self, axis: &str, values: Vec<String>, seeds: &[u64], mut make: F) -> Result<SweepResult>
    where
        F: FnMut(usize, u64) -> TrainConfig,
    {
        let mut raw = vec![Vec::new(); values.len()];
        let mut failed = Vec::new();
        for (i, v) in values.iter().enumerate() {
            for &seed in seeds {
                let cfg = make(i, seed);
                match self.run_cell(&cfg) {
                    Ok(c) => raw[i].push(c.accuracy()),
                    Err(e @ (Error::NanLoss { .. } | Error::Numerics(_))) => {
                        failed.push(format!("{axis}={v} seed={seed}: {e}"));
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(SweepResult::from_raw(axis, values, seeds.to_vec(), raw, failed))
    }

    /// Decoupled tail-insertion accuracy per draft length.
    pub fn sweep_length(&mut self, lengths: &[usize], seeds: &[u64]) -> Result<SweepResult> {
        if lengths.is_empty() {
            return Err(Error::Usage("length sweep needs at least one value".into()));
        }
        let base = self.config_for(Mode::Decoupled, 0);
        let values = lengths.iter().map(|l| l.to_string()).collect();
        self.sweep("l_s", values, seeds, |i, seed| TrainConfig {
            l_s: lengths[i],
            insertion: Insertion::Tail,
            seed,
            ..base.clone()
        })
    }

    /// Accuracy per draft position, plus the explicit summary baseline.
    pub fn sweep_position(&mut self, arms: &[PositionArm], seeds: &[u64]) -> Result<SweepResult> {
        if !arms.contains(&PositionArm::Tail) {
            return Err(Error::Usage("position sweep must include tail".into()));
        }
        let base = self.config_for(Mode::Decoupled, 0);
        let values = arms.iter().map(|a| a.name().to_string()).collect();
        self.sweep("position", values, seeds, |i, seed| {
            let mut c = TrainConfig { seed, ..base.clone() };
            arms[i].apply(&mut c);
            c
        })
    }

    /// Full decoupled training against both module ablations.
    pub fn ablate_modules(&mut self, seeds: &[u64]) -> Result<AblationReport> {
        let mut rows = Vec::new();
        for mode in [Mode::Decoupled, Mode::NoReasoner, Mode::NoExtractor] {
            let mut accuracies = Vec::new();
            let mut checksums = Vec::new();
            let mut clean = true;
            for &seed in seeds {
                let cell = self.run_cell(&self.config_for(mode, seed))?;
                accuracies.push(cell.accuracy());
                clean &= cell.freeze_clean;
                checksums.push(
                    cell.checksums_after
                        .iter()
                        .filter(|(g, _)| !cell.trainable.contains(g))
                        .map(|(g, c)| (*g, c.clone()))
                        .collect(),
                );
            }
            let (mean, std) = mean_std(&accuracies);
            rows.push(AblationRow {
                mode,
                accuracies,
                mean,
                std,
                checksums,
                freeze_clean: clean,
            });
        }
        Ok(AblationReport {
            seeds: seeds.to_vec(),
            rows,
        })
    }

    /// Trains on the origin distribution and evaluates on a corpus from
    /// `shifted`.
    pub fn generalization_eval(
        &mut self,
        shifted: &GeneratorConfig,
        seeds: &[u64],
    ) -> Result<GeneralizationReport> {
        let target = generate_corpus(shifted, self.setup.n_shifted.max(2))?;
        let mut rows = Vec::new();
        for mode in [Mode::Decoupled, Mode::OneStage] {
            for &seed in seeds {
                let cfg = self.config_for(mode, seed);
                let cell = self.run_cell(&cfg)?;
                let model = self.model(&cfg)?;
                let shifted_acc = evaluate(model, &target, cfg.threshold)?.accuracy;
                rows.push(GeneralizationRow {
                    mode,
                    seed,
                    in_distribution: cell.accuracy(),
                    shifted: shifted_acc,
                });
            }
        }
        Ok(GeneralizationReport {
            shifted_generator: shifted.clone(),
            rows,
        })
    }

    pub fn train_examples(&self) -> &[TrajectoryExample] {
        &self.data.train
    }

    pub fn val_examples(&self) -> &[TrajectoryExample] {
        &self.data.val
    }
}
