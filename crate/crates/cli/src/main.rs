use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use patchprobe_core::localize::{make_provider, RecordingProvider};
use patchprobe_core::pipeline::{run_case, run_corpus, CaseInput, CaseReport, Config, PipelineError};
use patchprobe_core::verify::parse::{parse_strict, VarContext};
use patchprobe_core::verify::{check_expressions, Backend, EquivConfig};
use patchprobe_core::ProviderMode;

#[derive(Parser)]
#[command(name = "patchprobe", version, about = "Patch presence testing on decompiled pseudocode")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the provider mode from the config.
    #[arg(long, value_parser = ["remote", "replay", "heuristic"])]
    provider: Option<String>,
    /// Directory of recorded responses for the replay provider.
    #[arg(long)]
    replay_dir: Option<PathBuf>,
    /// Writes the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Runs one case directory.
    RunCase {
        #[arg(long = "case")]
        case_dir: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Runs every case of a manifest and prints metrics.
    RunCorpus {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Checks two conditions for equivalence under C truthiness.
    CheckEq {
        #[arg(long, allow_hyphen_values = true)]
        lhs: String,
        #[arg(long, allow_hyphen_values = true)]
        rhs: String,
        #[arg(long, default_value_t = 32)]
        width: u32,
        /// Enumerate assignments instead of using a solver.
        #[arg(long)]
        exhaustive: bool,
        /// External SMT-LIB solver executable.
        #[arg(long)]
        solver: Option<String>,
        #[arg(long, default_value_t = 10.0)]
        timeout: f64,
    },
    /// Runs a case and stores every provider response as a replay file.
    Record {
        #[arg(long = "case")]
        case_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

/// Exit status for a failed command.
enum Failure {
    Config(anyhow::Error),
    Case(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Config(e)
    }
}

fn load_config(common: &Common) -> anyhow::Result<Config> {
    let mut cfg = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(mode) = &common.provider {
        cfg.provider.mode = mode.parse::<ProviderMode>().map_err(anyhow::Error::msg)?;
    }
    if let Some(dir) = &common.replay_dir {
        cfg.provider.replay_dir = Some(dir.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_report(path: Option<&Path>, json: &str) -> anyhow::Result<()> {
    if let Some(p) = path {
        std::fs::write(p, json).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn case_line(r: &CaseReport) -> String {
    match (&r.verdict, &r.error) {
        (_, Some(e)) => format!("{}: error: {e}", r.case_id),
        (Some(v), None) => {
            let kind = r.patch_kind.map(|k| format!("{k:?}")).unwrap_or_default();
            let mut s = format!("{}: {} (basis {:?}, kind {kind})", r.case_id, v.value, v.basis);
            if let Some(ok) = r.correct() {
                s.push_str(if ok { " ok" } else { " WRONG" });
            }
            s
        }
        (None, None) => format!("{}: no verdict", r.case_id),
    }
}

fn run_one(case_dir: &Path, common: &Common, record: Option<&Path>) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let input = CaseInput::from_dir(case_dir).map_err(|e| Failure::Case(e.into()))?;
    let provider = make_provider(&cfg.provider).map_err(anyhow::Error::msg)?;
    let report = match record {
        Some(out) => {
            let rec = RecordingProvider::new(provider.as_ref(), out).with_context(|| format!("creating {}", out.display()))?;
            run_case(&input, &cfg, &rec)
        }
        None => run_case(&input, &cfg, provider.as_ref()),
    };
    println!("{}", case_line(&report));
    let json = serde_json::to_string_pretty(&report).context("serializing report")?;
    write_report(common.report.as_deref(), &json)?;
    if report.error.is_some() {
        return Err(Failure::Case(anyhow!("case failed")));
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "undefined".into())
}

fn run_many(manifest: &Path, workers: Option<usize>, common: &Common) -> Result<(), Failure> {
    let mut cfg = load_config(common)?;
    if workers.is_some() {
        cfg.workers = workers;
    }
    let report = run_corpus(manifest, &cfg).map_err(|e| match e {
        PipelineError::ManifestMalformed(_) | PipelineError::Config(_) => Failure::Config(e.into()),
        other => Failure::Case(other.into()),
    })?;
    for c in &report.cases {
        println!("{}", case_line(c));
    }
    let m = &report.metrics;
    println!(
        "tp={} fp={} fn={} tn={} unknown={} errors={} precision={} recall={} f1={}",
        m.tp,
        m.fp,
        m.fn_,
        m.tn,
        m.unknown,
        report.tallies.errors,
        fmt_opt(m.precision),
        fmt_opt(m.recall),
        fmt_opt(m.f1)
    );
    let json = serde_json::to_string_pretty(&report).context("serializing report")?;
    write_report(common.report.as_deref(), &json)?;
    Ok(())
}

fn check_eq(lhs: &str, rhs: &str, width: u32, exhaustive: bool, solver: Option<String>, timeout: f64) -> Result<(), Failure> {
    if width == 0 || width > 64 {
        return Err(Failure::Config(anyhow!("width {width} outside 1..=64")));
    }
    let mut lc = VarContext::canonical();
    let mut rc = VarContext::canonical();
    let l = parse_strict(lhs, &mut lc).with_context(|| format!("parsing `{lhs}`"))?;
    let r = parse_strict(rhs, &mut rc).with_context(|| format!("parsing `{rhs}`"))?;
    let backend = match (exhaustive, solver) {
        (true, _) => Backend::Exhaustive { max_bits: 24 },
        (false, Some(path)) => Backend::External { path, args: vec!["-in".into()] },
        (false, None) => Backend::Builtin,
    };
    let cfg = EquivConfig { width, timeout: Duration::from_secs_f64(timeout.max(0.001)), backend };
    let res = check_expressions(&l, &lc.origin, &r, &rc.origin, &cfg);
    println!("{}", serde_json::to_string(&res).context("serializing result")?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::RunCase { case_dir, common } => run_one(&case_dir, &common, None),
        Command::RunCorpus { manifest, workers, common } => run_many(&manifest, workers, &common),
        Command::CheckEq { lhs, rhs, width, exhaustive, solver, timeout } => {
            check_eq(&lhs, &rhs, width, exhaustive, solver, timeout)
        }
        Command::Record { case_dir, out, common } => run_one(&case_dir, &common, Some(&out)),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Case(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
