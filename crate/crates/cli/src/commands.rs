use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use draft_core::backbone::{causal_accessibility_check, AttentionMask};
use draft_core::checkpoint;
use draft_core::eval::{
    evaluate, export_features, linear_probe, make_split, measure_efficiency, read_features, regression_slope,
    EfficiencyReport, Lab,
};
use draft_core::judge::{DraftModel, Mode, TrainConfig};
use draft_core::trajgen::{generate_corpus, load_jsonl, make_shifted_config, save_jsonl};
use draft_theory::suites::run_all;
use serde_json::json;

use crate::config::{load_config, parse_config, RunConfig, SNAPSHOT};
use crate::layout::{json_diff, read_manifest, ManifestEntry, RunDir};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "draft",
    version,
    about = "Latent-draft trajectory safety judge: data, training, sweeps and theory checks",
    arg_required_else_help = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run configuration file (TOML); built-in defaults when omitted.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.lr=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory (overrides the configuration and DRAFT_OUTPUT_ROOT).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Suppress progress lines on stderr.
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labelled corpus and its train/val/test split.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Corpus size; defaults to n_train + n_val + n_test.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Pretrain the frozen bases as causal language models.
    Pretrain {
        #[command(flatten)]
        common: Common,
    },
    /// Train the configured mode and evaluate it on the validation split.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint (default: the configured training run).
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// JSONL examples; default is the validation split.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Accuracy over draft lengths.
    SweepLength {
        #[command(flatten)]
        common: Common,
    },
    /// Accuracy over draft insertion positions and the explicit baseline.
    SweepPosition {
        #[command(flatten)]
        common: Common,
    },
    /// Full decoupled training against the no-extractor and no-reasoner ablations.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Accuracy on a distribution with unseen risk patterns.
    Generalize {
        #[command(flatten)]
        common: Common,
    },
    /// Write terminal hidden features as CSV and fit a linear probe.
    ExportFeatures {
        #[command(flatten)]
        common: Common,
        /// Comma-separated modes; default is the configured mode.
        #[arg(long, value_delimiter = ',')]
        modes: Vec<String>,
    },
    /// Inference latency, throughput and peak memory per method.
    BenchEfficiency {
        #[command(flatten)]
        common: Common,
    },
    /// Run the exact theory suites and the causal-accessibility check.
    VerifyTheory {
        #[command(flatten)]
        common: Common,
    },
    /// Rerun a completed run from its snapshot and compare every output.
    Reproduce {
        /// Run directory holding config.toml and manifest.json.
        dir: PathBuf,
    },
}

impl Command {
    fn common(&self) -> Option<&Common> {
        match self {
            Command::GenData { common, .. }
            | Command::Pretrain { common }
            | Command::Train { common }
            | Command::Eval { common, .. }
            | Command::SweepLength { common }
            | Command::SweepPosition { common }
            | Command::Ablate { common }
            | Command::Generalize { common }
            | Command::ExportFeatures { common, .. }
            | Command::BenchEfficiency { common }
            | Command::VerifyTheory { common } => Some(common),
            Command::Reproduce { .. } => None,
        }
    }

    /// Subcommand name plus its own arguments, enough to replay it against a
    /// snapshot.
    fn replay_args(&self) -> Vec<String> {
        let path = |p: &Path| p.to_string_lossy().into_owned();
        match self {
            Command::GenData { n, .. } => {
                let mut v = vec!["gen-data".to_string()];
                if let Some(n) = n {
                    v.extend(["--n".to_string(), n.to_string()]);
                }
                v
            }
            Command::Pretrain { .. } => vec!["pretrain".into()],
            Command::Train { .. } => vec!["train".into()],
            Command::Eval { checkpoint, data, .. } => {
                let mut v = vec!["eval".to_string()];
                if let Some(c) = checkpoint {
                    v.extend(["--checkpoint".to_string(), path(c)]);
                }
                if let Some(d) = data {
                    v.extend(["--data".to_string(), path(d)]);
                }
                v
            }
            Command::SweepLength { .. } => vec!["sweep-length".into()],
            Command::SweepPosition { .. } => vec!["sweep-position".into()],
            Command::Ablate { .. } => vec!["ablate".into()],
            Command::Generalize { .. } => vec!["generalize".into()],
            Command::ExportFeatures { modes, .. } => {
                let mut v = vec!["export-features".to_string()];
                if !modes.is_empty() {
                    v.extend(["--modes".to_string(), modes.join(",")]);
                }
                v
            }
            Command::BenchEfficiency { .. } => vec!["bench-efficiency".into()],
            Command::VerifyTheory { .. } => vec!["verify-theory".into()],
            Command::Reproduce { dir } => vec!["reproduce".into(), path(dir)],
        }
    }
}

fn resolve_config(common: &Common) -> Result<RunConfig, CliError> {
    match &common.config {
        Some(p) => load_config(p, &common.set),
        None => parse_config("run = \"default\"\n", &common.set),
    }
}

/// What a command produced.
#[derive(Default)]
struct Produced {
    outputs: Vec<String>,
    timing: Vec<String>,
}

impl Produced {
    fn add(&mut self, rel: impl Into<String>) {
        let rel = rel.into();
        if !self.outputs.contains(&rel) {
            self.outputs.push(rel);
        }
    }

    fn add_cells(&mut self, lab: &Lab) {
        for c in lab.cells() {
            self.add(format!("metrics/{}.json", c.key));
            self.add(format!("checkpoints/{}.ckpt", c.key));
            self.add(format!("logs/{}.jsonl", c.key));
        }
    }
}

struct Ctx {
    cfg: RunConfig,
    dir: RunDir,
    quiet: bool,
}

impl Ctx {
    fn note(&self, msg: &str) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }

    /// The lab for this run, reusing pretrained bases from an earlier
    /// command when they were built for the same data and base settings.
    fn lab(&self, produced: &mut Produced) -> Result<Lab, CliError> {
        let setup = self.cfg.setup();
        let rel = "checkpoints/bases.ckpt";
        let path = self.dir.path(rel);
        let mut lab = None;
        if path.exists() {
            let (store, meta) = checkpoint::load(&path)?;
            if meta.get("data_id").and_then(|v| v.as_str()) == Some(setup.data_id().as_str()) {
                let curve: Vec<f64> = serde_json::from_value(meta["curve"].clone()).unwrap_or_default();
                lab = Some(Lab::with_bases(setup.clone(), store, curve)?);
            }
        }
        let lab = match lab {
            Some(l) => l,
            None => {
                self.note("pretraining bases");
                let l = Lab::new(setup.clone())?;
                let meta = json!({"data_id": setup.data_id(), "curve": l.pretrain_curve});
                checkpoint::save(&path, &l.bases, &meta)?;
                l
            }
        };
        produced.add(rel);
        let mut lab = lab.with_output_dir(&self.dir.root);
        lab.verbose = !self.quiet;
        Ok(lab)
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cmd = cli.command;
    let Some(common) = cmd.common().cloned() else {
        let Command::Reproduce { dir } = &cmd else {
            unreachable!("only reproduce lacks common options")
        };
        return reproduce(dir);
    };
    let cfg = resolve_config(&common)?;
    let root = cfg.resolve_output(common.out.as_deref());
    let dir = RunDir::open(&root, &cfg)?;
    let ctx = Ctx {
        cfg,
        dir,
        quiet: common.quiet,
    };
    let mut produced = Produced::default();
    match &cmd {
        Command::GenData { n, .. } => gen_data(&ctx, *n, &mut produced)?,
        Command::Pretrain { .. } => pretrain(&ctx, &mut produced)?,
        Command::Train { .. } => train(&ctx, &mut produced)?,
        Command::Eval { checkpoint, data, .. } => eval(&ctx, checkpoint.as_deref(), data.as_deref(), &mut produced)?,
        Command::SweepLength { .. } => sweep_length(&ctx, &mut produced)?,
        Command::SweepPosition { .. } => sweep_position(&ctx, &mut produced)?,
        Command::Ablate { .. } => ablate(&ctx, &mut produced)?,
        Command::Generalize { .. } => generalize(&ctx, &mut produced)?,
        Command::ExportFeatures { modes, .. } => export(&ctx, modes, &mut produced)?,
        Command::BenchEfficiency { .. } => bench(&ctx, &mut produced)?,
        Command::VerifyTheory { .. } => {
            // the report is written before a failing verdict is returned
            let verdict = verify_theory(&ctx, &mut produced);
            ctx.dir.record(ManifestEntry {
                command: cmd.replay_args(),
                outputs: produced.outputs,
                timing: produced.timing,
            })?;
            return verdict;
        }
        Command::Reproduce { .. } => unreachable!(),
    }
    ctx.dir.record(ManifestEntry {
        command: cmd.replay_args(),
        outputs: produced.outputs,
        timing: produced.timing,
    })
}

fn gen_data(ctx: &Ctx, n: Option<usize>, produced: &mut Produced) -> Result<(), CliError> {
    let setup = ctx.cfg.setup();
    let data_dir = ctx.dir.path("data");
    fs::create_dir_all(&data_dir).map_err(|e| CliError::Runtime(format!("{}: {e}", data_dir.display())))?;
    let total = n.unwrap_or(setup.n_train + setup.n_val + setup.n_test);
    let corpus = generate_corpus(&setup.generator, total)?;
    save_jsonl(&corpus, &ctx.dir.path("data/corpus.jsonl"))?;
    produced.add("data/corpus.jsonl");
    let split = make_split(&setup)?;
    for (name, part) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        let rel = format!("data/{name}.jsonl");
        save_jsonl(part, &ctx.dir.path(&rel))?;
        produced.add(rel);
    }
    checkpoint::write_atomic(&ctx.dir.path("data/generator.toml"), setup.generator.to_toml().as_bytes())?;
    produced.add("data/generator.toml");
    println!(
        "wrote {total} examples ({} train / {} val / {} test) to {}",
        split.train.len(),
        split.val.len(),
        split.test.len(),
        data_dir.display()
    );
    Ok(())
}

fn pretrain(ctx: &Ctx, produced: &mut Produced) -> Result<(), CliError> {
    let lab = ctx.lab(produced)?;
    let curve = &lab.pretrain_curve;
    ctx.dir.write_json(
        "metrics/pretrain.json",
        &json!({
            "steps": curve.len(),
            "initial_loss": curve.first(),
            "final_loss": curve.last(),
            "curve": curve,
        }),
    )?;
    produced.add("metrics/pretrain.json");
    println!(
        "pretrained {} steps: loss {:.4} -> {:.4}",
        curve.len(),
        curve.first().copied().unwrap_or(f64::NAN),
        curve.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn train(ctx: &Ctx, produced: &mut Produced) -> Result<(), CliError> {
    let mut lab = ctx.lab(produced)?;
    let cell = lab.run_cell(&ctx.cfg.train)?;
    produced.add_cells(&lab);
    ctx.dir.write_json("metrics/train.json", &cell)?;
    produced.add("metrics/train.json");
    println!(
        "{}: accuracy {:.4} f1 {:.4} final loss {:.4}",
        cell.key, cell.metrics.accuracy, cell.metrics.f1, cell.final_loss
    );
    Ok(())
}

fn eval(ctx: &Ctx, ckpt: Option<&Path>, data: Option<&Path>, produced: &mut Produced) -> Result<(), CliError> {
    let examples = match data {
        Some(p) => load_jsonl(p)?,
        None => make_split(&ctx.cfg.setup())?.val,
    };
    let report = match ckpt {
        Some(p) => {
            let model = DraftModel::load(p)?;
            let mut r = evaluate(&model, &examples, model.config.threshold)?;
            r.config_id = Some(p.to_string_lossy().into_owned());
            r
        }
        None => {
            let mut lab = ctx.lab(produced)?;
            let key = lab.cell_key(&ctx.cfg.train);
            let model = lab.model(&ctx.cfg.train)?;
            let mut r = evaluate(model, &examples, ctx.cfg.train.threshold)?;
            r.config_id = Some(key);
            produced.add_cells(&lab);
            r
        }
    };
    ctx.dir.write_json("metrics/eval.json", &report)?;
    produced.add("metrics/eval.json");
    println!(
        "accuracy {:.4} f1 {:.4} precision {:.4} recall {:.4} (n={})",
        report.accuracy, report.f1, report.precision, report.recall, report.n
    );
    Ok(())
}

fn print_sweep(s: &draft_core::eval::SweepResult) {
    for (i, v) in s.values.iter().enumerate() {
        let std = s.std[i].map_or("n/a".to_string(), |x| format!("{x:.4}"));
        println!("{}={v}: mean {:.4} std {std} over {} seeds", s.axis, s.mean[i], s.raw[i].len());
    }
    for f in &s.failed {
        println!("failed cell: {f}");
    }
}

fn sweep_length(ctx: &Ctx, produced: &mut Produced) -> Result<(), CliError> {
    let mut lab = ctx.lab(produced)?;
    let s = lab.sweep_length(&ctx.cfg.experiments.lengths, &ctx.cfg.experiments.seeds)?;
    produced.add_cells(&lab);
    ctx.dir.write_json(
        "metrics/sweep_length.json",
        &json!({"sweep": s, "interior_maximum": s.interior_maximum(), "partial": s.is_partial()}),
    )?;
    produced.add("metrics/sweep_length.json");
    print_sweep(&s);
    Ok(())
}

fn sweep_position(ctx: &Ctx, produced: &mut Produced) -> Result<(), CliError> {
    let mut lab = ctx.lab(produced)?;
    let s = lab.sweep_position(&ctx.cfg.experiments.positions, &ctx.cfg.experiments.seeds)?;
    produced.add_cells(&lab);
    ctx.dir.write_json(
        "metrics/sweep_position.json",
        &json!({"sweep": s, "partial": s.is_partial()}),
    )?;
    produced.add("metrics/sweep_position.json");
    print_sweep(&s);
    Ok(())
}

fn ablate(ctx: &Ctx, produced: &mut Produced) -> Result<(), CliError> {
    let mut lab = ctx.lab(produced)?;
    let report = lab.ablate_modules(&ctx.cfg.experiments.seeds)?;
    produced.add_cells(&lab);
    ctx.dir.write_json("metrics/ablation.json", &report)?;
    produced.add("metrics/ablation.json");
    for row in &report.rows {
        println!(
            "{}: mean {:.4} freeze_clean {}",
            row.mode, row.mean, row.freeze_clean
        );
    }
    Ok(())
}

fn generalize(ctx: &Ctx, produced: &mut Produced) -> Result<(), CliError> {
    let mut lab = ctx.lab(produced)?;
    let shifted = make_shifted_config(&ctx.cfg.generator);
    let report = lab.generalization_eval(&shifted, &ctx.cfg.experiments.seeds)?;
    produced.add_cells(&lab);
    ctx.dir.write_json("metrics/generalization.json", &report)?;
    produced.add("metrics/generalization.json");
    for row in &report.rows {
        println!(
            "{} seed {}: in-distribution {:.4} shifted {:.4}",
            row.mode, row.seed, row.in_distribution, row.shifted
        );
    }
    Ok(())
}

fn export(ctx: &Ctx, modes: &[String], produced: &mut Produced) -> Result<(), CliError> {
    let modes: Vec<Mode> = if modes.is_empty() {
        vec![ctx.cfg.train.mode]
    } else {
        modes.iter().map(|m| Mode::parse(m)).collect::<Result<_, _>>()?
    };
    let mut lab = ctx.lab(produced)?;
    let fit: Vec<_> = lab.train_examples()[..ctx.cfg.data.probe_fit.min(lab.train_examples().len())].to_vec();
    let val = lab.val_examples().to_vec();
    let mut rows = Vec::new();
    for mode in modes {
        let cfg = TrainConfig {
            mode,
            ..ctx.cfg.train.clone()
        };
        let key = lab.cell_key(&cfg);
        let model = lab.model(&cfg)?;
        let fit_rel = format!("features/{key}-fit.csv");
        let val_rel = format!("features/{key}-val.csv");
        let dims = export_features(model, &fit, &ctx.dir.path(&fit_rel))?;
        export_features(model, &val, &ctx.dir.path(&val_rel))?;
        let a = read_features(&ctx.dir.path(&fit_rel))?;
        let b = read_features(&ctx.dir.path(&val_rel))?;
        let probe = linear_probe(&a.features, &a.labels, &b.features, &b.labels)?;
        println!("{mode}: {dims} features, linear probe accuracy {probe:.4}");
        produced.add(fit_rel);
        produced.add(val_rel);
        rows.push(json!({
            "mode": mode,
            "key": key,
            "dims": dims,
            "n_fit": a.ids.len(),
            "n_eval": b.ids.len(),
            "probe_accuracy": probe,
        }));
    }
    produced.add_cells(&lab);
    ctx.dir.write_json("metrics/probe.json", &json!({ "rows": rows }))?;
    produced.add("metrics/probe.json");
    Ok(())
}

fn bench(ctx: &Ctx, produced: &mut Produced) -> Result<(), CliError> {
    let lab = ctx.lab(produced)?;
    let exp = &ctx.cfg.experiments;
    let n = exp.efficiency_examples + exp.efficiency_warmup;
    let examples: Vec<_> = lab.val_examples().iter().take(n).cloned().collect();
    let fresh = |mode: Mode, l_s: usize| -> Result<DraftModel, CliError> {
        let cfg = TrainConfig {
            mode,
            l_s,
            ..ctx.cfg.train.clone()
        };
        Ok(DraftModel::new(&lab.bases, ctx.cfg.reasoner.clone(), ctx.cfg.extractor.clone(), cfg)?)
    };
    let time = |m: &DraftModel| -> Result<EfficiencyReport, CliError> {
        Ok(measure_efficiency(m, &examples, exp.efficiency_warmup)?)
    };
    let l_s = ctx.cfg.train.l_s;
    let one_stage = time(&fresh(Mode::OneStage, l_s)?)?;
    let decoupled = time(&fresh(Mode::Decoupled, l_s)?)?;
    let mut explicit = Vec::new();
    for &len in &exp.lengths {
        ctx.note(&format!("timing explicit baseline at l_s={len}"));
        explicit.push((len, time(&fresh(Mode::ExplicitBaseline, len)?)?));
    }
    let xs: Vec<f64> = explicit.iter().map(|(l, _)| *l as f64).collect();
    let ys: Vec<f64> = explicit.iter().map(|(_, r)| r.latency_ms).collect();
    let slope = regression_slope(&xs, &ys);
    let ratio = decoupled.latency_ms / one_stage.latency_ms;
    let report = json!({
        "seq_len": ctx.cfg.generator.seq_len,
        "l_s": l_s,
        "one_stage": one_stage,
        "decoupled": decoupled,
        "decoupled_over_one_stage": ratio,
        "explicit": explicit.iter().map(|(l, r)| json!({"l_s": l, "report": r})).collect::<Vec<_>>(),
        "explicit_latency_slope_ms_per_token": slope,
    });
    ctx.dir.write_json("metrics/efficiency.json", &report)?;
    produced.timing.push("metrics/efficiency.json".into());
    println!("one_stage {:.2} ms, decoupled {:.2} ms (x{ratio:.2})", one_stage.latency_ms, decoupled.latency_ms);
    for (l, r) in &explicit {
        println!("explicit l_s={l}: {:.2} ms", r.latency_ms);
    }
    if let Some(s) = slope {
        println!("explicit latency slope {s:.4} ms per summary token");
    }
    Ok(())
}

fn verify_theory(ctx: &Ctx, produced: &mut Produced) -> Result<(), CliError> {
    let report = run_all(&ctx.cfg.theory);
    let p = ctx.cfg.generator.seq_len;
    let s = ctx.cfg.train.l_s;
    let tail = causal_accessibility_check(&AttentionMask::causal(p + s), p, s, false)?;
    let prefix = causal_accessibility_check(&AttentionMask::causal(p + s + 1), p, s, true)?;
    for suite in &report.suites {
        println!(
            "{}: {} checks, {} violations, max gap {:.3e}",
            suite.name, suite.checks, suite.violations, suite.max_gap
        );
    }
    println!("causal accessibility: tail {} prefix_dec {}", tail.pass, prefix.pass);
    let violations = report.total_violations() + usize::from(!tail.pass) + usize::from(!prefix.pass);
    ctx.dir.write_json(
        "metrics/theory.json",
        &json!({
            "suites": report.suites,
            "causal_accessibility": {"tail": tail, "prefix_dec": prefix},
            "violations": violations,
            "passed": violations == 0 && report.passed(),
        }),
    )?;
    produced.add("metrics/theory.json");
    if violations > 0 || !report.passed() {
        return Err(CliError::Runtime(format!("theory verification found {violations} violations")));
    }
    Ok(())
}

/// Replays every recorded command of `dir` from its snapshot into a scratch
/// directory and compares outputs: JSON value-exactly, everything else
/// byte-exactly. Timing outputs are only checked for existence.
pub fn reproduce(dir: &Path) -> Result<(), CliError> {
    let snap = dir.join(SNAPSHOT);
    if !snap.exists() {
        return Err(CliError::Config(format!("no {SNAPSHOT} snapshot in {}", dir.display())));
    }
    let manifest = read_manifest(dir)?;
    if manifest.entries.is_empty() {
        return Err(CliError::Config(format!("{} records no completed commands", dir.display())));
    }
    let scratch = tempfile::tempdir().map_err(|e| CliError::Runtime(format!("scratch directory: {e}")))?;
    let snap_str = snap.to_string_lossy().into_owned();
    let out_str = scratch.path().to_string_lossy().into_owned();
    for entry in &manifest.entries {
        let mut argv = vec!["draft".to_string()];
        argv.extend(entry.command.iter().cloned());
        argv.extend(["--config".into(), snap_str.clone(), "--out".into(), out_str.clone(), "--quiet".into()]);
        let cli = Cli::try_parse_from(&argv).map_err(|e| CliError::Runtime(format!("replaying {:?}: {e}", entry.command)))?;
        eprintln!("replaying {}", entry.command.join(" "));
        match run(cli) {
            Ok(()) => {}
            Err(e) => return Err(CliError::Runtime(format!("replay of {} failed: {e}", entry.command.join(" ")))),
        }
    }
    let mut diffs = Vec::new();
    let mut identical = 0;
    let mut skipped = 0;
    for entry in &manifest.entries {
        for rel in &entry.timing {
            skipped += 1;
            if !scratch.path().join(rel).exists() {
                diffs.push(format!("{rel}: not produced by the rerun"));
            }
        }
        for rel in &entry.outputs {
            let (a, b) = (dir.join(rel), scratch.path().join(rel));
            let (Ok(x), Ok(y)) = (fs::read(&a), fs::read(&b)) else {
                diffs.push(format!(
                    "{rel}: {}",
                    if a.exists() { "not produced by the rerun" } else { "missing from the original run" }
                ));
                continue;
            };
            if rel.ends_with(".json") {
                let parse = |bytes: &[u8]| serde_json::from_slice::<serde_json::Value>(bytes);
                match (parse(&x), parse(&y)) {
                    (Ok(vx), Ok(vy)) => {
                        let mut d = Vec::new();
                        json_diff(&vx, &vy, "", &mut d);
                        if d.is_empty() {
                            identical += 1;
                        } else {
                            diffs.extend(d.into_iter().take(8).map(|line| format!("{rel}: {line}")));
                        }
                    }
                    _ => diffs.push(format!("{rel}: unreadable JSON")),
                }
            } else if x == y {
                identical += 1;
            } else {
                diffs.push(format!("{rel}: contents differ ({} vs {} bytes)", x.len(), y.len()));
            }
        }
    }
    if diffs.is_empty() {
        println!("reproduced: {identical} outputs identical, {skipped} timing outputs skipped");
        Ok(())
    } else {
        println!("run does not reproduce:");
        for d in &diffs {
            println!("  {d}");
        }
        Err(CliError::Runtime(format!("{} differences against the recorded run", diffs.len())))
    }
}
