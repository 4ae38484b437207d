//! Command-line front end: `gen`, `train`, `eval`, `audit` and `rerun`.
//!
//! Exit codes are 0 on success, 1 for usage errors and 2 for runtime
//! failures. Commands that write a directory default to
//! `$VOTEGRAPH_OUT_DIR`, then `runs/`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{label_dataset, read_jsonl, write_jsonl, DatasetSpec, LabelSpec, LabeledElection, Source};
use crate::election::WelfareKind;
use crate::eval::{attack, audit_axioms, expected_welfare_of, outcomes, EvalReport, AUDIT_PERMUTATIONS};
use crate::models::{
    load_checkpoint, save_checkpoint, GevnConfig, InfoSetting, InputKind, Model, Normalization,
};
use crate::rules::RuleKind;
use crate::train::{
    train_adversarial, train_mimic, train_welfare, AdversarialConfig, Objective,
    OptimConfig, Scenario, TrainOptions, WelfareOptions,
};
use crate::{Error, Result};

pub const OUT_DIR_ENV: &str = "VOTEGRAPH_OUT_DIR";
pub const MANIFEST_FORMAT: &str = "votegraph-manifest";

#[derive(Parser, Debug)]
#[command(name = "votegraph", version, about = "Learned voting rules on election graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a labelled synthetic dataset as JSONL.
    Gen(GenArgs),
    /// Train a mechanism (or strategy network) and write checkpoint and metrics.
    Train(TrainArgs),
    /// Evaluate a mechanism checkpoint on a dataset.
    Eval(EvalArgs),
    /// Audit anonymity, neutrality and monotonicity of a mechanism checkpoint.
    Audit(AuditArgs),
    /// Re-run the command recorded in a manifest.
    Rerun(RerunArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Dirichlet,
    Spatial,
    File,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct GenArgs {
    #[arg(long, value_enum, default_value = "dirichlet")]
    pub source: SourceKind,
    /// Utility CSV for `--source file`.
    #[arg(long)]
    pub path: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub n_min: usize,
    #[arg(long, default_value_t = 10)]
    pub n_max: usize,
    #[arg(long, default_value_t = 2)]
    pub m_min: usize,
    #[arg(long, default_value_t = 5)]
    pub m_max: usize,
    #[arg(long, default_value_t = 20_000)]
    pub count: usize,
    /// `rule:NAME`, `welfare:KIND` or `none`.
    #[arg(long, default_value = "none")]
    pub label: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Mimic,
    Welfare,
    Adversarial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Size {
    Small,
    Standard,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Training JSONL; generated from `--source` and `--seed` when absent.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Validation JSONL; generated when absent.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "dirichlet")]
    pub source: SourceKind,
    /// Size of a generated training set.
    #[arg(long, default_value_t = 20_000)]
    pub count: usize,
    /// Rule to mimic; relabels the training and validation sets.
    #[arg(long)]
    pub rule: Option<String>,
    #[arg(long, default_value = "utilitarian")]
    pub welfare_kind: String,
    /// `welfare` or `rule` for welfare mode.
    #[arg(long, default_value = "welfare")]
    pub loss: String,
    /// `ranking` or `utility`; mimic defaults to ranking, welfare to utility.
    #[arg(long)]
    pub input: Option<String>,
    #[arg(long)]
    pub mono_weight: Option<f64>,
    #[arg(long, default_value_t = crate::losses::MONO_SAMPLES)]
    pub mono_samples: usize,
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long, default_value = "private")]
    pub info: String,
    #[arg(long, default_value_t = 0.2)]
    pub strategic_frac: f64,
    /// Strategy-network output range `lo,hi`; a budget `a` when one number.
    #[arg(long)]
    pub normalization: Option<String>,
    /// Mechanism checkpoint to start from (adversarial mode).
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "small")]
    pub model: Size,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    /// Early-stop after this many stagnant epochs; 0 disables.
    #[arg(long, default_value_t = 30)]
    pub patience: usize,
    #[arg(long, default_value_t = 3e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 20.0)]
    pub warmup_epochs: f64,
    /// Wall-clock cap in seconds. Results then depend on machine speed.
    #[arg(long)]
    pub time_budget: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Overrides the input kind recorded in the checkpoint.
    #[arg(long)]
    pub input: Option<String>,
    /// Strategy-network checkpoint to attack with.
    #[arg(long)]
    pub strategy: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    pub strategic_frac: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct AuditArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub input: Option<String>,
    #[arg(long, default_value_t = AUDIT_PERMUTATIONS)]
    pub permutations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct RerunArgs {
    pub manifest: PathBuf,
}

/// Reproducibility record written next to every command's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub tool_version: String,
    pub command: String,
    /// Full argument vector, replayable with `votegraph rerun`.
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: u64,
    /// Seconds since the Unix epoch.
    pub started_at: u64,
    pub finished_at: Option<u64>,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    fn start(command: &str, args: &[String], config: serde_json::Value, seed: u64) -> Self {
        RunManifest {
            format: MANIFEST_FORMAT.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            args: args.to_vec(),
            config,
            seed,
            started_at: now(),
            finished_at: None,
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")
            .map_err(|e| Error::io(format!("writing manifest {}", path.display()), e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading manifest {}", path.display()), e))?;
        let m: RunManifest = serde_json::from_str(&text)?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::invalid(format!("{} is not a run manifest", path.display())));
        }
        Ok(m)
    }

    fn finish(&mut self, path: &Path, outputs: Vec<PathBuf>) -> Result<()> {
        self.outputs = outputs;
        self.finished_at = Some(now());
        self.write(path)
    }
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Parses `args` (program name first), runs the command and maps the
/// outcome to an exit code.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let text: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli.command, &text) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(Failure::Usage(msg.into()))
}

fn parse<T: std::str::FromStr<Err = Error>>(value: &str) -> CliResult<T> {
    value.parse().map_err(|e: Error| Failure::Usage(e.to_string()))
}

fn execute(command: Command, args: &[String]) -> CliResult<()> {
    match command {
        Command::Gen(a) => cmd_gen(&a, args),
        Command::Train(a) => cmd_train(&a, args),
        Command::Eval(a) => cmd_eval(&a, args),
        Command::Audit(a) => cmd_audit(&a, args),
        Command::Rerun(a) => {
            let m = RunManifest::read(&a.manifest)?;
            if m.args.is_empty() || m.command == "rerun" {
                return usage(format!("{} holds no replayable command", a.manifest.display()));
            }
            let cli = Cli::try_parse_from(&m.args).map_err(|e| Failure::Usage(e.to_string()))?;
            execute(cli.command, &m.args)
        }
    }
}

fn out_dir(flag: &Option<PathBuf>) -> CliResult<PathBuf> {
    let dir = flag
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    std::fs::create_dir_all(&dir)
        .map_err(|e| Error::io(format!("creating output directory {}", dir.display()), e))?;
    Ok(dir)
}

fn source(kind: SourceKind, path: &Option<PathBuf>) -> CliResult<Source> {
    match (kind, path) {
        (SourceKind::Dirichlet, None) => Ok(Source::Dirichlet),
        (SourceKind::Spatial, None) => Ok(Source::Spatial),
        (SourceKind::File, Some(p)) => Ok(Source::File { path: p.clone() }),
        (SourceKind::File, None) => usage("--source file requires --path"),
        (_, Some(_)) => usage("--path is only valid with --source file"),
    }
}

fn cmd_gen(a: &GenArgs, args: &[String]) -> CliResult<()> {
    let spec = DatasetSpec {
        source: source(a.source, &a.path)?,
        n_range: (a.n_min, a.n_max),
        m_range: (a.m_min, a.m_max),
        count: a.count,
        seed: a.seed,
        label: parse(&a.label)?,
    };
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let manifest_path = sibling(&a.out, "manifest.json");
    let mut manifest = RunManifest::start("gen", args, serde_json::to_value(&spec).map_err(Error::from)?, a.seed);
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    manifest.write(&manifest_path)?;
    let data = label_dataset(&spec)?;
    write_jsonl(&data, &a.out)?;
    manifest.finish(&manifest_path, vec![a.out.clone()])?;
    eprintln!("wrote {} elections to {}", data.len(), a.out.display());
    Ok(())
}

/// `path` with `suffix` appended to its file name.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(OsString::from).unwrap_or_default();
    name.push(".");
    name.push(suffix);
    path.with_file_name(name)
}

fn load_split(path: &Option<PathBuf>, spec: DatasetSpec) -> CliResult<Vec<LabeledElection>> {
    match path {
        Some(p) => Ok(read_jsonl(p)?),
        None => Ok(label_dataset(&spec)?),
    }
}

fn relabel(data: &mut [LabeledElection], rule: RuleKind) {
    for e in data {
        e.label = Some(rule.apply(&e.ranking()).winner);
    }
}

fn normalization(flag: &Option<String>, source: SourceKind) -> CliResult<Normalization> {
    let n = match flag.as_deref() {
        None if source == SourceKind::Spatial => Normalization::spatial_range(),
        None => Normalization::Budget { a: 1.0 },
        Some(s) => match s.split_once(',') {
            Some((lo, hi)) => Normalization::Range {
                lo: lo.trim().parse().map_err(|_| Failure::Usage(format!("bad range '{s}'")))?,
                hi: hi.trim().parse().map_err(|_| Failure::Usage(format!("bad range '{s}'")))?,
            },
            None => Normalization::Budget {
                a: s.trim().parse().map_err(|_| Failure::Usage(format!("bad budget '{s}'")))?,
            },
        },
    };
    n.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(n)
}

fn cmd_train(a: &TrainArgs, args: &[String]) -> CliResult<()> {
    let rule = a.rule.as_deref().map(parse::<RuleKind>).transpose()?;
    let kind: WelfareKind = parse(&a.welfare_kind)?;
    let input = match (&a.input, a.mode) {
        (Some(s), _) => parse(s)?,
        (None, Mode::Mimic) => InputKind::Ranking,
        (None, _) => InputKind::Utility,
    };
    if a.mode == Mode::Mimic && rule.is_none() && a.train.is_none() {
        return usage("--mode mimic needs --rule or a labelled --train file");
    }
    let scenario = match (a.mode, &a.scenario) {
        (Mode::Adversarial, Some(s)) => Some(parse::<Scenario>(s)?),
        (Mode::Adversarial, None) => return usage("--mode adversarial requires --scenario"),
        (_, Some(_)) => return usage("--scenario is only valid with --mode adversarial"),
        _ => None,
    };
    let objective: Objective = parse(&a.loss)?;
    let model = match a.model {
        Size::Small => GevnConfig::SMALL,
        Size::Standard => GevnConfig::STANDARD,
    };
    let optim = OptimConfig {
        lr: a.lr,
        batch_size: a.batch_size,
        warmup_epochs: a.warmup_epochs,
        ..OptimConfig::default()
    };
    optim.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let opts = TrainOptions {
        model,
        optim,
        input,
        epochs: a.epochs,
        patience: (a.patience > 0).then_some(a.patience),
        time_budget: a.time_budget.map(Duration::from_secs),
        seed: a.seed,
    };
    let pretrained = match (&a.pretrained, scenario) {
        (Some(p), _) => match load_checkpoint(p)? {
            (Model::Gevn(g), _) => Some(g),
            _ => {
                return Err(Failure::Runtime(Error::Checkpoint(format!(
                    "{} is not a GEVN checkpoint",
                    p.display()
                ))))
            }
        },
        (None, Some(s)) => {
            return Err(Failure::Runtime(Error::invalid(format!(
                "scenario {s} requires --pretrained"
            ))))
        }
        (None, None) => None,
    };
    let src = source(a.source, &None)?;
    let label = match rule {
        Some(r) => LabelSpec::Rule(r),
        None => LabelSpec::None,
    };
    let dir = out_dir(&a.out_dir)?;
    let manifest_path = dir.join("manifest.json");
    let mut manifest =
        RunManifest::start("train", args, serde_json::to_value(a).map_err(Error::from)?, a.seed);
    manifest.write(&manifest_path)?;
    let mut train = load_split(&a.train, DatasetSpec::train(src.clone(), label, a.seed).with_count(a.count))?;
    let mut valid = load_split(&a.valid, DatasetSpec::validation(src, label, a.seed.wrapping_add(1)))?;
    if let Some(r) = rule {
        relabel(&mut train, r);
        relabel(&mut valid, r);
    }
    let ckpt = dir.join("model.ckpt.json");
    let metrics = dir.join("metrics.csv");
    let mut outputs = vec![ckpt.clone(), metrics.clone()];
    let history = match a.mode {
        Mode::Mimic => {
            let out = train_mimic(&train, &valid, &opts)?;
            save_checkpoint(&ckpt, &Model::Gevn(out.model), Some(input))?;
            out.history
        }
        Mode::Welfare => {
            let mut w = WelfareOptions::new(kind, objective);
            w.monotonicity_weight = a.mono_weight;
            w.monotonicity_samples = a.mono_samples;
            let out = train_welfare(&train, &valid, &w, &opts)?;
            save_checkpoint(&ckpt, &Model::Gevn(out.model), Some(input))?;
            out.history
        }
        Mode::Adversarial => {
            let info: InfoSetting = parse(&a.info)?;
            let config = AdversarialConfig {
                strategic_fraction: a.strategic_frac,
                welfare: kind,
                epochs: a.epochs,
                optim,
                seed: a.seed,
                ..AdversarialConfig::new(
                    scenario.expect("checked above"),
                    info,
                    normalization(&a.normalization, a.source)?,
                )
            };
            config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            let out = train_adversarial(&config, pretrained, &train, &valid)?;
            let strategy = dir.join("strategy.ckpt.json");
            save_checkpoint(&ckpt, &Model::Gevn(out.gevn), Some(InputKind::Utility))?;
            save_checkpoint(&strategy, &Model::Gesn(out.gesn), None)?;
            outputs.push(strategy);
            out.history
        }
    };
    history.write_csv(&metrics)?;
    manifest.finish(&manifest_path, outputs)?;
    eprintln!("wrote {} and {}", ckpt.display(), metrics.display());
    Ok(())
}

fn load_mechanism(path: &Path, input: &Option<String>) -> CliResult<(Model, InputKind)> {
    let (model, recorded) = load_checkpoint(path)?;
    if model.mechanism().is_none() {
        return Err(Failure::Runtime(Error::Checkpoint(format!(
            "{} holds a strategy network, not a mechanism",
            path.display()
        ))));
    }
    let input = match input {
        Some(s) => parse(s)?,
        None => recorded.unwrap_or(InputKind::Utility),
    };
    Ok((model, input))
}

fn write_report(dir: &Path, stem: &str, report: &EvalReport) -> Result<Vec<PathBuf>> {
    let json = dir.join(format!("{stem}.json"));
    let csv = dir.join(format!("{stem}.csv"));
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(&json, text.clone() + "\n")
        .map_err(|e| Error::io(format!("writing {}", json.display()), e))?;
    std::fs::write(&csv, report.to_csv())
        .map_err(|e| Error::io(format!("writing {}", csv.display()), e))?;
    println!("{text}");
    Ok(vec![json, csv])
}

fn cmd_eval(a: &EvalArgs, args: &[String]) -> CliResult<()> {
    let (model, input) = load_mechanism(&a.checkpoint, &a.input)?;
    let mech = model.as_mechanism().expect("checked by load_mechanism");
    let data = read_jsonl(&a.data)?;
    if data.is_empty() {
        return Err(Failure::Runtime(Error::invalid(format!("{} is empty", a.data.display()))));
    }
    let dir = out_dir(&a.out_dir)?;
    let manifest_path = dir.join("eval.manifest.json");
    let mut manifest =
        RunManifest::start("eval", args, serde_json::to_value(a).map_err(Error::from)?, a.seed);
    manifest.write(&manifest_path)?;
    let profiles: Vec<_> = data.iter().map(|e| e.ballots(input)).collect();
    let preds = outcomes(mech, &profiles)?;
    let us: Vec<_> = data.iter().map(|e| e.utilities()).collect();
    let mut report = EvalReport {
        elections: data.len(),
        ..EvalReport::default()
    };
    if data.iter().all(|e| e.label.is_some()) {
        let labels: Vec<usize> = data.iter().map(|e| e.label.expect("checked")).collect();
        report.accuracy = Some(crate::eval::agreement(&preds, &labels));
    }
    for kind in WelfareKind::ALL {
        report
            .expected_welfare
            .insert(kind.name().to_string(), expected_welfare_of(&preds, &us, kind));
    }
    if let Some(path) = &a.strategy {
        let Model::Gesn(gesn) = load_checkpoint(path)?.0 else {
            return Err(Failure::Runtime(Error::Checkpoint(format!(
                "{} is not a strategy-network checkpoint",
                path.display()
            ))));
        };
        report.attack = Some(attack(
            mech,
            &gesn,
            &data,
            a.strategic_frac,
            a.seed,
            WelfareKind::Utilitarian,
        )?);
    }
    let outputs = write_report(&dir, "eval", &report)?;
    manifest.finish(&manifest_path, outputs)?;
    Ok(())
}

fn cmd_audit(a: &AuditArgs, args: &[String]) -> CliResult<()> {
    if a.permutations == 0 {
        return usage("--permutations must be at least 1");
    }
    let (model, input) = load_mechanism(&a.checkpoint, &a.input)?;
    let mech = model.as_mechanism().expect("checked by load_mechanism");
    let data = read_jsonl(&a.data)?;
    if data.is_empty() {
        return Err(Failure::Runtime(Error::invalid(format!("{} is empty", a.data.display()))));
    }
    let dir = out_dir(&a.out_dir)?;
    let manifest_path = dir.join("audit.manifest.json");
    let mut manifest =
        RunManifest::start("audit", args, serde_json::to_value(a).map_err(Error::from)?, a.seed);
    manifest.write(&manifest_path)?;
    let profiles: Vec<_> = data.iter().map(|e| e.ballots(input)).collect();
    let report = EvalReport {
        elections: data.len(),
        audit: Some(audit_axioms(mech, &profiles, a.permutations, a.seed)?),
        ..EvalReport::default()
    };
    let outputs = write_report(&dir, "audit", &report)?;
    manifest.finish(&manifest_path, outputs)?;
    Ok(())
}
