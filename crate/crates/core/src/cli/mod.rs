//! The `tracerl` command line tool.
//!
//! Every subcommand that writes files also writes `<subcommand>.manifest.json`
//! next to them, holding the effective settings, seeds and paths.

mod config;

use std::ffi::OsString;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

pub use config::{apply, parse_config_text, Overrides};

use crate::clean::{clean_records, FieldMap, RawRecord};
use crate::error::{Error, Result};
use crate::eval::JudgeEndpoint;
use crate::pipeline::{
    evaluate_outputs, generate_trace, model_config, sft_examples, sspo_examples, EvalReport,
};
use crate::policy::{load_checkpoint, save_checkpoint, ModelConfig, PolicyParams, Tokenizer};
use crate::reward::composite_reward;
use crate::synth::{
    generate_dataset, read_jsonl, read_records, write_jsonl, write_records, TaskSpec,
    DEFAULT_LABELS,
};
use crate::trace::{parse_trace, LabelSet};
use crate::train::{train_sft, train_sspo, TrainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "tracerl",
    version,
    about = "Structured reasoning traces: data, training and evaluation"
)]
pub struct Cli {
    /// Seed for data generation, initialization, shuffling and sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for outputs (default: current directory).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// `key = value` file overriding built-in defaults; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic train/val/test splits.
    GenData(GenDataArgs),
    /// Clean raw analysis records into canonical traces.
    Clean(CleanArgs),
    /// Supervised cold start on teacher traces.
    Sft(SftArgs),
    /// Group-sampled policy optimization from an SFT checkpoint.
    Sspo(SspoArgs),
    /// Greedy-decode a split and report metrics.
    Eval(EvalArgs),
    /// Score one trace against a truth label set.
    ScoreTrace(ScoreTraceArgs),
    /// Summarize a checkpoint or a record file.
    Inspect(InspectArgs),
}

#[derive(Debug, Args, Serialize, Default)]
pub struct TaskFlags {
    /// Comma-separated label set; must include NORM.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_train: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_val: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_test: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub activation_prob: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_labels: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_labels: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
}

#[derive(Debug, Args, Serialize, Default)]
pub struct TrainFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sft_lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sft_epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sft_batch: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rl_lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rl_epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rl_batch: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_accum: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_eps: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kl_beta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adv_eps: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_new_tokens: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rl_queries_per_epoch: Option<usize>,
}

#[derive(Debug, Args, Serialize, Default)]
pub struct ModelFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patch_len: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub enc_layers: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub enc_dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dec_layers: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dec_dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heads: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_seq: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub task: TaskFlags,
}

#[derive(Debug, Args)]
pub struct CleanArgs {
    /// Line-delimited raw records.
    #[arg(long)]
    pub input: PathBuf,
    /// Extra field-name mapping `field=section`; repeatable.
    #[arg(long = "alias")]
    pub aliases: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SftArgs {
    /// Directory holding `train.jsonl` and `task.json` (default: out dir).
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Shorthand for `--sft-epochs`.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(Debug, Args)]
pub struct SspoArgs {
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Cold-start checkpoint; also the frozen reference policy.
    #[arg(long)]
    pub sft_checkpoint: PathBuf,
    /// Shorthand for `--rl-epochs`.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, required_unless_present = "replay_teacher")]
    pub checkpoint: Option<PathBuf>,
    /// `train`, `val` or `test`.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Score the teacher traces instead of model output.
    #[arg(long)]
    pub replay_teacher: bool,
    /// `stub` or a `host:port` judge address.
    #[arg(long)]
    pub judge: Option<String>,
    #[arg(long)]
    pub max_new_tokens: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ScoreTraceArgs {
    /// Trace text file; standard input when absent.
    #[arg(long)]
    pub trace_file: Option<PathBuf>,
    /// Comma-separated truth labels.
    #[arg(long)]
    pub truth: String,
    /// Comma-separated label vocabulary (default: the five default labels).
    #[arg(long)]
    pub labels: Option<String>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// A checkpoint or a line-delimited record file.
    pub path: PathBuf,
}

/// What `run` needs from the outside world.
pub struct Io<'a> {
    pub stdin: &'a mut dyn Read,
    pub stdout: &'a mut dyn Write,
    pub stderr: &'a mut dyn Write,
}

/// Parses arguments, runs the subcommand and returns the exit code. Errors
/// are printed to standard error as `error[<class>]: <message>`.
pub fn run<I, T>(args: I, io: Io<'_>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(io.stdout, "{text}");
            } else {
                let text = text.strip_prefix("error: ").unwrap_or(&text);
                let _ = write!(io.stderr, "error[usage]: {text}");
            }
            return code;
        }
    };
    match execute(&cli, io.stdin, io.stdout, io.stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(io.stderr, "error[{}]: {e}", e.class());
            1
        }
    }
}

/// Convenience wrapper over the process's standard streams.
pub fn run_main() -> i32 {
    let mut stdin = std::io::stdin();
    let mut stdout = std::io::stdout();
    let mut stderr = std::io::stderr();
    run(
        std::env::args_os(),
        Io {
            stdin: &mut stdin,
            stdout: &mut stdout,
            stderr: &mut stderr,
        },
    )
}

pub fn execute(
    cli: &Cli,
    stdin: &mut dyn Read,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<()> {
    let ctx = Context::new(cli)?;
    match &cli.command {
        Command::GenData(a) => cmd_gen_data(&ctx, a, out),
        Command::Clean(a) => cmd_clean(&ctx, a, out, err),
        Command::Sft(a) => cmd_sft(&ctx, a, out),
        Command::Sspo(a) => cmd_sspo(&ctx, a, out),
        Command::Eval(a) => cmd_eval(&ctx, a, out),
        Command::ScoreTrace(a) => cmd_score_trace(a, stdin, out),
        Command::Inspect(a) => cmd_inspect(&a.path, out),
    }
}

struct Context {
    out_dir: PathBuf,
    /// Config file values with the global seed on top.
    base: Overrides,
}

impl Context {
    fn new(cli: &Cli) -> Result<Self> {
        let mut base = match &cli.config {
            Some(p) => config::read_config(p)?,
            None => Overrides::new(),
        };
        config::check_known(
            &base,
            &[
                config::known_fields(&TaskSpec::default()),
                config::known_fields(&TrainConfig::default()),
                config::known_fields(&ModelConfig::for_vocab(1)),
            ],
            &[],
        )?;
        if let Some(seed) = cli.seed {
            base.insert("seed".into(), Value::from(seed));
        }
        Ok(Context {
            out_dir: cli.out_dir.clone().unwrap_or_else(|| PathBuf::from(".")),
            base,
        })
    }

    fn layered<T: Serialize>(&self, flags: &[&T]) -> Overrides {
        let mut o = self.base.clone();
        for f in flags {
            o.extend(config::flag_overrides(f));
        }
        o
    }

    fn ensure_out_dir(&self) -> Result<()> {
        fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis())
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    subcommand: &'a str,
    version: &'static str,
    settings: Value,
    seed: Option<u64>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    started_unix_ms: u128,
    finished_unix_ms: u128,
}

fn write_manifest(
    ctx: &Context,
    subcommand: &str,
    settings: Value,
    seed: Option<u64>,
    inputs: &[&Path],
    outputs: &[&Path],
    started: u128,
) -> Result<()> {
    let m = RunManifest {
        subcommand,
        version: env!("CARGO_PKG_VERSION"),
        settings,
        seed,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
    };
    write_json(&ctx.path(&format!("{subcommand}.manifest.json")), &m)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::json(path.display().to_string(), e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

fn label_list(text: &str) -> LabelSet {
    text.split([',', ';']).collect()
}

/// Task spec from defaults, config and flags. Labels and channels decide
/// the templates, so they are applied first.
fn task_spec(overrides: &Overrides) -> Result<TaskSpec> {
    let labels = match overrides.get("labels") {
        None => DEFAULT_LABELS.iter().collect(),
        Some(Value::String(s)) => label_list(s),
        Some(Value::Array(a)) => a.iter().filter_map(Value::as_str).collect(),
        Some(other) => {
            return Err(Error::InvalidInput(format!(
                "labels must be a list, got {other}"
            )))
        }
    };
    let channels = match overrides.get("channels") {
        None => TaskSpec::default().channels,
        Some(v) => v
            .as_u64()
            .ok_or_else(|| Error::InvalidInput(format!("channels must be a count, got {v}")))?
            as usize,
    };
    let base = TaskSpec::with_labels(labels, channels)?;
    let mut rest = overrides.clone();
    rest.remove("labels");
    rest.remove("templates");
    let spec = apply(&base, &rest)?;
    spec.validate()?;
    Ok(spec)
}

fn train_config(overrides: &Overrides) -> Result<TrainConfig> {
    let cfg = apply(&TrainConfig::default(), overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_gen_data(ctx: &Context, a: &GenDataArgs, out: &mut dyn Write) -> Result<()> {
    let started = unix_ms();
    let spec = task_spec(&ctx.layered(&[&a.task]))?;
    let data = generate_dataset(&spec)?;
    ctx.ensure_out_dir()?;
    let paths = [
        ctx.path("train.jsonl"),
        ctx.path("val.jsonl"),
        ctx.path("test.jsonl"),
        ctx.path("task.json"),
    ];
    write_records(&paths[0], &data.train)?;
    write_records(&paths[1], &data.val)?;
    write_records(&paths[2], &data.test)?;
    write_json(&paths[3], &spec)?;
    let outputs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
    write_manifest(
        ctx,
        "gen-data",
        to_value(&spec),
        Some(spec.seed),
        &[],
        &outputs,
        started,
    )?;
    writeln!(
        out,
        "wrote {} train, {} val, {} test records to {}",
        data.train.len(),
        data.val.len(),
        data.test.len(),
        ctx.out_dir.display()
    )
    .map_err(|e| Error::io("stdout", e))
}

fn cmd_clean(ctx: &Context, a: &CleanArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let started = unix_ms();
    let mut map = FieldMap::default();
    for alias in &a.aliases {
        map = map.parse_alias(alias)?;
    }
    let raw: Vec<RawRecord> = read_jsonl(&a.input)?;
    let (records, report) = clean_records(raw, &map)?;
    ctx.ensure_out_dir()?;
    let (clean_path, report_path) = (ctx.path("clean.jsonl"), ctx.path("clean_report.json"));
    write_jsonl(&clean_path, &records)?;
    write_json(&report_path, &report)?;
    write_manifest(
        ctx,
        "clean",
        json!({ "aliases": a.aliases }),
        None,
        &[&a.input],
        &[&clean_path, &report_path],
        started,
    )?;
    writeln!(err, "{report}").map_err(|e| Error::io("stderr", e))?;
    writeln!(out, "kept {} of {}", report.kept, report.input).map_err(|e| Error::io("stdout", e))
}

fn data_dir<'a>(ctx: &'a Context, given: &'a Option<PathBuf>) -> &'a Path {
    given.as_deref().unwrap_or(&ctx.out_dir)
}

fn cmd_sft(ctx: &Context, a: &SftArgs, out: &mut dyn Write) -> Result<()> {
    let started = unix_ms();
    let dir = data_dir(ctx, &a.data_dir);
    let mut overrides = ctx.layered(&[&a.train]);
    overrides.extend(config::flag_overrides(&a.model));
    if let Some(e) = a.epochs {
        overrides.insert("sft_epochs".into(), Value::from(e));
    }
    let cfg = train_config(&overrides)?;
    let task_path = dir.join("task.json");
    let train_path = dir.join("train.jsonl");
    let spec: TaskSpec = read_json(&task_path)?;
    let records = read_records(&train_path)?;
    let tokenizer = Tokenizer::new(&spec.labels);
    let mut mcfg = apply(&model_config(&spec, &tokenizer, cfg.seed)?, &overrides)?;
    mcfg.vocab_size = tokenizer.len();
    mcfg.channels = spec.channels;
    mcfg.max_patches = spec.steps / mcfg.patch_len.max(1);
    mcfg.seed = cfg.seed;
    let params = PolicyParams::init(&mcfg)?;
    let outcome = train_sft(&sft_examples(&records, &tokenizer), &cfg, params)?;

    ctx.ensure_out_dir()?;
    let (ckpt, log) = (ctx.path("sft.ckpt"), ctx.path("sft_log.jsonl"));
    save_checkpoint(&ckpt, &outcome.params, &tokenizer)?;
    let mut lines = vec![json!({ "epoch": 0, "steps": 0, "loss": outcome.initial_loss })];
    lines.extend(outcome.epochs.iter().map(to_value));
    write_jsonl(&log, &lines)?;
    write_manifest(
        ctx,
        "sft",
        json!({ "train": cfg, "model": mcfg }),
        Some(cfg.seed),
        &[&task_path, &train_path],
        &[&ckpt, &log],
        started,
    )?;
    writeln!(out, "initial loss {:.4}", outcome.initial_loss)
        .map_err(|e| Error::io("stdout", e))?;
    for e in &outcome.epochs {
        writeln!(out, "epoch {} loss {:.4}", e.epoch, e.loss)
            .map_err(|e| Error::io("stdout", e))?;
    }
    Ok(())
}

fn cmd_sspo(ctx: &Context, a: &SspoArgs, out: &mut dyn Write) -> Result<()> {
    let started = unix_ms();
    let dir = data_dir(ctx, &a.data_dir);
    let mut overrides = ctx.layered(&[&a.train]);
    if let Some(e) = a.epochs {
        overrides.insert("rl_epochs".into(), Value::from(e));
    }
    let cfg = train_config(&overrides)?;
    let task_path = dir.join("task.json");
    let train_path = dir.join("train.jsonl");
    let spec: TaskSpec = read_json(&task_path)?;
    let records = read_records(&train_path)?;
    let (params, tokenizer) = load_checkpoint(&a.sft_checkpoint)?;
    let outcome = train_sspo(
        &sspo_examples(&records, &tokenizer),
        &tokenizer,
        &spec.labels,
        &cfg,
        params,
    )?;

    ctx.ensure_out_dir()?;
    let (ckpt, log) = (ctx.path("sspo.ckpt"), ctx.path("sspo_log.jsonl"));
    save_checkpoint(&ckpt, &outcome.params, &tokenizer)?;
    write_jsonl(&log, &outcome.steps)?;
    write_manifest(
        ctx,
        "sspo",
        json!({ "train": cfg }),
        Some(cfg.seed),
        &[&task_path, &train_path, &a.sft_checkpoint],
        &[&ckpt, &log],
        started,
    )?;
    if let (Some(first), Some(last)) = (outcome.steps.first(), outcome.steps.last()) {
        writeln!(
            out,
            "{} steps, mean reward {:.4} -> {:.4}",
            outcome.steps.len(),
            first.mean_total,
            last.mean_total
        )
        .map_err(|e| Error::io("stdout", e))?;
    }
    Ok(())
}

fn cmd_eval(ctx: &Context, a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let started = unix_ms();
    if !["train", "val", "test"].contains(&a.split.as_str()) {
        return Err(Error::InvalidInput(format!("unknown split {:?}", a.split)));
    }
    let dir = data_dir(ctx, &a.data_dir);
    let mut overrides = ctx.base.clone();
    if let Some(n) = a.max_new_tokens {
        overrides.insert("max_new_tokens".into(), Value::from(n));
    }
    let cfg = train_config(&overrides)?;
    let task_path = dir.join("task.json");
    let split_path = dir.join(format!("{}.jsonl", a.split));
    let spec: TaskSpec = read_json(&task_path)?;
    let records = read_records(&split_path)?;
    let mut inputs: Vec<&Path> = vec![&task_path, &split_path];
    let outputs: Vec<(String, LabelSet)> = match (&a.checkpoint, a.replay_teacher) {
        (_, true) => records
            .iter()
            .map(|r| (r.teacher_trace.clone(), r.truth.clone()))
            .collect(),
        (Some(path), false) => {
            inputs.push(path);
            let (params, tokenizer) = load_checkpoint(path)?;
            records
                .iter()
                .map(|r| {
                    Ok((
                        generate_trace(&params, &tokenizer, &r.signal, cfg.max_new_tokens)?,
                        r.truth.clone(),
                    ))
                })
                .collect::<Result<_>>()?
        }
        (None, false) => {
            return Err(Error::InvalidInput(
                "eval needs --checkpoint or --replay-teacher".into(),
            ))
        }
    };
    let judge = a.judge.as_deref().map(JudgeEndpoint::parse);
    let report = evaluate_outputs(&outputs, &spec.labels, judge.as_ref())?;

    ctx.ensure_out_dir()?;
    let report_path = ctx.path(&format!("eval_{}.json", a.split));
    write_json(&report_path, &report)?;
    write_manifest(
        ctx,
        "eval",
        json!({ "split": a.split, "replay_teacher": a.replay_teacher, "judge": a.judge, "max_new_tokens": cfg.max_new_tokens }),
        None,
        &inputs,
        &[&report_path],
        started,
    )?;
    print_report(&report, out).map_err(|e| Error::io("stdout", e))
}

fn print_report(r: &EvalReport, out: &mut dyn Write) -> std::io::Result<()> {
    let m = &r.metrics;
    writeln!(out, "records      {}", r.n)?;
    writeln!(
        out,
        "micro P/R/F1 {:.4} {:.4} {:.4}",
        m.micro_precision, m.micro_recall, m.micro_f1
    )?;
    writeln!(out, "macro F1     {:.4}", m.macro_f1)?;
    writeln!(out, "sample F1    {:.4}", m.sample_f1)?;
    writeln!(out, "SSV          {:.2}", r.ssv)?;
    writeln!(
        out,
        "reward       structure {:.4} diagnosis {:.4} total {:.4}",
        r.mean_structure, r.mean_diagnosis, r.mean_total
    )?;
    if let Some(j) = &r.judge {
        writeln!(
            out,
            "judge        ssv {:.2} gtfa {:.2} sd {:.2} dlc {:.2} es {:.2}",
            j.ssv, j.gtfa, j.sd, j.dlc, j.es
        )?;
    }
    Ok(())
}

fn cmd_score_trace(a: &ScoreTraceArgs, stdin: &mut dyn Read, out: &mut dyn Write) -> Result<()> {
    let text = match &a.trace_file {
        Some(p) => fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => {
            let mut s = String::new();
            stdin
                .read_to_string(&mut s)
                .map_err(|e| Error::io("stdin", e))?;
            s
        }
    };
    let truth = label_list(&a.truth);
    let vocab = match &a.labels {
        Some(l) => label_list(l),
        None => DEFAULT_LABELS.iter().collect(),
    }
    .union(&truth);
    let b = composite_reward(&parse_trace(&text, &vocab), &truth);
    writeln!(
        out,
        "structure {:.4}\ndiagnosis {:.4}\ntotal {:.4}",
        b.structure, b.diagnosis, b.total
    )
    .map_err(|e| Error::io("stdout", e))
}

fn cmd_inspect(path: &Path, out: &mut dyn Write) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let summary = if bytes.starts_with(b"tracerl-checkpoint") {
        let (params, tokenizer) = crate::policy::read_checkpoint(&bytes[..])?;
        let tensors: Vec<Value> = params
            .layout()
            .tensors
            .iter()
            .map(|(name, range, rows, cols)| {
                let norm = params
                    .slice(range)
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt();
                json!({ "name": name, "shape": [rows, cols], "l2": norm })
            })
            .collect();
        json!({
            "kind": "checkpoint",
            "config": params.config(),
            "parameters": params.len(),
            "vocabulary": tokenizer.len(),
            "tensors": tensors,
        })
    } else {
        let records: Vec<Value> = read_jsonl(path)?;
        let mut labels = std::collections::BTreeMap::<String, usize>::new();
        for r in &records {
            for l in r
                .get("labels")
                .and_then(Value::as_array)
                .into_iter()
                .flatten()
            {
                if let Some(s) = l.as_str() {
                    *labels.entry(s.to_string()).or_default() += 1;
                }
            }
        }
        json!({ "kind": "records", "records": records.len(), "label_counts": labels })
    };
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::json("inspect", e))?;
    writeln!(out, "{text}").map_err(|e| Error::io("stdout", e))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}
