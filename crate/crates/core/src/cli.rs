//! Command-line entry point. Exit codes: 0 success, 1 user error, 2
//! internal error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{Config, CONFIG_FILE};
use crate::corpus::{ingest, CorpusError, Store};
use crate::demo;
use crate::eval::{evaluate_dirs, EvalError};
use crate::pipeline::{process_document, run_patients, RunError};
use crate::ruleset::{compile, lint_dir, load_rules_dir, CompiledRuleset};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "trialsift", version, about = "Rule-based trial eligibility screening over clinical notes")]
struct Cli {
    /// Config file; defaults to ./trialsift.toml when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    #[arg(long, global = true)]
    rules: Option<PathBuf>,
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    #[arg(long, global = true)]
    history_threshold_days: Option<i64>,
    /// Record separator regex.
    #[arg(long, global = true)]
    separator: Option<String>,
    /// Record date regex with y, m and d groups; repeatable, replaces the list.
    #[arg(long = "date-pattern", global = true)]
    date_patterns: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load a directory of patient files into the store.
    Ingest { dir: PathBuf },
    /// Rule table checks.
    Ruleset {
        #[command(subcommand)]
        action: RulesetAction,
    },
    /// Process the stored corpus and write predictions.
    Run {
        /// Also write one trace file per document.
        #[arg(long)]
        trace: bool,
        #[arg(long)]
        patient: Option<String>,
    },
    /// Score a predictions directory against gold labels.
    Eval {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Structured report path; defaults to <output>/eval.json.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Trace one document and print the trace file path.
    Trace { doc_id: String },
    /// Trie diagnostics.
    Trie {
        #[command(subcommand)]
        action: TrieAction,
    },
    /// Serve the workbench HTTP interface.
    Serve {
        #[arg(long)]
        address: Option<String>,
        #[arg(long)]
        gold: Option<PathBuf>,
    },
    /// Write the synthetic corpus, gold labels, demo rules and a config.
    Demo {
        dir: PathBuf,
        #[arg(long, default_value_t = demo::DEMO_SEED)]
        seed: u64,
        #[arg(long, default_value_t = demo::DEMO_PATIENTS)]
        patients: usize,
    },
}

#[derive(Debug, Subcommand)]
enum RulesetAction {
    /// Print schema and cross-reference problems with row numbers.
    Lint,
}

#[derive(Debug, Subcommand)]
enum TrieAction {
    /// Node, edge and accepting-node counts per lexical component.
    Dump,
}

#[derive(Debug)]
enum Failure {
    User(String),
    Internal(String),
}

type Outcome = Result<(), Failure>;

fn user(e: impl ToString) -> Failure {
    Failure::User(e.to_string())
}

fn internal(e: impl ToString) -> Failure {
    Failure::Internal(e.to_string())
}

fn corpus_failure(e: CorpusError) -> Failure {
    match e {
        CorpusError::Store(_) => internal(e),
        _ => user(e),
    }
}

fn eval_failure(e: EvalError) -> Failure {
    match e {
        EvalError::Io { ref path, .. } if path.exists() => internal(e),
        _ => user(e),
    }
}

fn run_failure(e: RunError) -> Failure {
    match e {
        RunError::Store(e) => corpus_failure(e),
        other => internal(other),
    }
}

/// Parses `argv` (program name first), runs the subcommand, and returns
/// the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USER } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(Failure::User(m)) => {
            eprintln!("error: {m}");
            EXIT_USER
        }
        Err(Failure::Internal(m)) => {
            eprintln!("internal error: {m}");
            EXIT_INTERNAL
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<Config, Failure> {
    let mut c = Config::discover(cli.config.as_deref()).map_err(user)?;
    if let Some(v) = &cli.store {
        c.store = v.clone();
    }
    if let Some(v) = &cli.rules {
        c.rules = v.clone();
    }
    if let Some(v) = &cli.output {
        c.output = v.clone();
    }
    if let Some(v) = cli.parallelism {
        c.parallelism = v;
    }
    if let Some(v) = cli.history_threshold_days {
        c.history_threshold_days = v;
    }
    if let Some(v) = &cli.separator {
        c.separator = v.clone();
    }
    if !cli.date_patterns.is_empty() {
        c.date_patterns = cli.date_patterns.clone();
    }
    c.validate().map_err(user)?;
    Ok(c)
}

fn load_ruleset(c: &Config) -> Result<CompiledRuleset, Failure> {
    if !c.rules.is_dir() {
        return Err(user(format!("rules directory {} not found", c.rules.display())));
    }
    load_rules_dir(&c.rules).and_then(compile).map_err(user)
}

fn open_store(c: &Config) -> Result<Store, Failure> {
    if !c.store.is_file() {
        return Err(user(format!("no store at {}; run `ingest` first", c.store.display())));
    }
    Store::open(&c.store).map_err(corpus_failure)
}

fn create_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| internal(format!("cannot create {}: {e}", dir.display())))
}

fn execute(cli: Cli) -> Outcome {
    if let Command::Demo { dir, seed, patients } = &cli.command {
        return cmd_demo(dir, *seed, *patients);
    }
    let config = resolve_config(&cli)?;
    match cli.command {
        Command::Ingest { dir } => cmd_ingest(&config, &dir),
        Command::Ruleset { action: RulesetAction::Lint } => cmd_lint(&config),
        Command::Run { trace, patient } => cmd_run(&config, trace, patient.as_deref()),
        Command::Eval { gold, pred, report } => cmd_eval(&config, &gold, &pred, report),
        Command::Trace { doc_id } => cmd_trace(&config, &doc_id),
        Command::Trie { action: TrieAction::Dump } => cmd_trie_dump(&config),
        Command::Serve { address, gold } => cmd_serve(config, address, gold),
        Command::Demo { .. } => unreachable!("handled above"),
    }
}

fn cmd_ingest(c: &Config, dir: &Path) -> Outcome {
    if !dir.is_dir() {
        return Err(user(format!("{} is not a directory", dir.display())));
    }
    let pre = c.preprocessor().map_err(user)?;
    if let Some(parent) = c.store.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let mut store = Store::open(&c.store).map_err(corpus_failure)?;
    let summary = ingest(dir, &mut store, &pre).map_err(corpus_failure)?;
    for w in &summary.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "ingested {} patients, {} documents into {} ({} warnings)",
        summary.patients,
        summary.documents,
        c.store.display(),
        summary.warnings.len()
    );
    Ok(())
}

fn cmd_lint(c: &Config) -> Outcome {
    if !c.rules.is_dir() {
        return Err(user(format!("rules directory {} not found", c.rules.display())));
    }
    let problems = lint_dir(&c.rules);
    if !problems.is_empty() {
        for p in &problems {
            println!("{p}");
        }
        return Err(user(format!("{} problem(s) in {}", problems.len(), c.rules.display())));
    }
    let rs = load_ruleset(c)?;
    let rows: usize = rs.tables().iter().map(|t| t.rows.len()).sum();
    println!("ok: {} tables, {rows} rows, fingerprint {}", rs.tables().len(), rs.fingerprint);
    Ok(())
}

fn cmd_run(c: &Config, trace_on: bool, patient: Option<&str>) -> Outcome {
    let ruleset = load_ruleset(c)?;
    let store = open_store(c)?;
    let patients = match patient {
        Some(id) => match store.patient(id).map_err(corpus_failure)? {
            Some(p) => vec![p],
            None => return Err(user(format!("unknown patient {id}"))),
        },
        None => store.patients().map_err(corpus_failure)?,
    };
    let pred_dir = c.predictions_dir();
    let run = run_patients(&patients, &ruleset, &c.pipeline_options(), c.parallelism, trace_on, Some(&pred_dir))
        .map_err(run_failure)?;
    for w in &run.warnings {
        eprintln!("warning: {w}");
    }
    if trace_on {
        let dir = c.traces_dir();
        create_dir(&dir)?;
        for t in run.results.iter().flat_map(|r| &r.traces) {
            let path = dir.join(format!("{}.jsonl", t.doc_id));
            fs::write(&path, t.to_jsonl()).map_err(|e| internal(format!("{}: {e}", path.display())))?;
        }
    }
    for r in &run.results {
        for (name, d) in &r.timings.0 {
            tracing::debug!(patient = %r.patient_id, component = %name, micros = d.as_micros() as u64, "timing");
        }
    }
    let documents: usize = run.results.iter().map(|r| r.documents.len()).sum();
    println!(
        "run: {} patients, {documents} documents, {} decisions, {} failures -> {}",
        run.results.len(),
        run.decisions().count(),
        run.failures.len(),
        pred_dir.display()
    );
    if !run.failures.is_empty() {
        for (pid, m) in &run.failures {
            eprintln!("failed: {pid}: {m}");
        }
        return Err(internal(format!("{} patient(s) failed", run.failures.len())));
    }
    Ok(())
}

fn cmd_eval(c: &Config, gold: &Path, pred: &Path, report: Option<PathBuf>) -> Outcome {
    for d in [gold, pred] {
        if !d.is_dir() {
            return Err(user(format!("{} is not a directory", d.display())));
        }
    }
    let ruleset = load_ruleset(c)?;
    let criteria: Vec<String> = ruleset.criterion_ids().map(str::to_string).collect();
    let metrics = evaluate_dirs(gold, pred, &criteria).map_err(eval_failure)?;
    let report_path = report.unwrap_or_else(|| c.output.join("eval.json"));
    if let Some(parent) = report_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(&report_path, metrics.to_json()).map_err(|e| internal(format!("{}: {e}", report_path.display())))?;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(metrics.to_tsv().as_bytes());
    eprintln!("report: {}", report_path.display());
    Ok(())
}

fn cmd_trace(c: &Config, doc_id: &str) -> Outcome {
    let ruleset = load_ruleset(c)?;
    let store = open_store(c)?;
    let doc = store
        .document(doc_id)
        .map_err(corpus_failure)?
        .ok_or_else(|| user(format!("unknown document {doc_id}")))?;
    let (_, trace) = process_document(&doc, &ruleset, &c.pipeline_options(), true).map_err(internal)?;
    let trace = trace.ok_or_else(|| internal("trace missing"))?;
    let dir = c.traces_dir();
    create_dir(&dir)?;
    let path = dir.join(format!("{doc_id}.jsonl"));
    fs::write(&path, trace.to_jsonl()).map_err(|e| internal(format!("{}: {e}", path.display())))?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_trie_dump(c: &Config) -> Outcome {
    let ruleset = load_ruleset(c)?;
    println!("component\tnodes\tedges\taccepting");
    for (kind, s) in ruleset.trie_stats() {
        println!("{kind}\t{}\t{}\t{}", s.nodes, s.edges, s.accepting);
    }
    Ok(())
}

fn cmd_serve(mut c: Config, address: Option<String>, gold: Option<PathBuf>) -> Outcome {
    if let Some(a) = address {
        c.serve_address = a;
    }
    if gold.is_some() {
        c.gold = gold;
    }
    let ruleset = load_ruleset(&c)?;
    let store = open_store(&c)?;
    let address = c.serve_address.clone();
    let state = crate::server::AppState::new(c, store, ruleset);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(internal)?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&address).await.map_err(|e| match e.kind() {
            std::io::ErrorKind::AddrInUse | std::io::ErrorKind::AddrNotAvailable | std::io::ErrorKind::InvalidInput => {
                user(format!("{address}: {e}"))
            }
            _ => internal(e),
        })?;
        let bound = listener.local_addr().map_err(internal)?;
        println!("serving on http://{bound}");
        let _ = std::io::stdout().flush();
        crate::server::serve(state, listener).await.map_err(internal)
    })
}

fn cmd_demo(dir: &Path, seed: u64, n: usize) -> Outcome {
    if n == 0 {
        return Err(user("--patients must be at least 1"));
    }
    let patients = demo::generate(seed, n);
    let io = |e: std::io::Error| internal(format!("{}: {e}", dir.display()));
    demo::write_corpus(&patients, &dir.join("corpus"), &dir.join("gold")).map_err(io)?;
    demo::write_rules(&dir.join("rules")).map_err(io)?;
    let config = Config {
        gold: Some("gold".into()),
        ..Config::default()
    };
    fs::write(dir.join(CONFIG_FILE), config.to_toml()).map_err(io)?;
    println!("wrote {n} synthetic patients (seed {seed}) to {}", dir.display());
    println!("next: cd {} && trialsift ingest corpus && trialsift run && trialsift eval --gold gold --pred out/predictions", dir.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_subcommand_is_a_user_error() {
        assert_eq!(dispatch(["trialsift", "frobnicate"]), EXIT_USER);
        assert_eq!(dispatch(["trialsift"]), EXIT_USER);
    }

    #[test]
    fn help_exits_cleanly() {
        assert_eq!(dispatch(["trialsift", "--help"]), EXIT_OK);
    }

    #[test]
    fn flags_override_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("t.toml");
        fs::write(&cfg, "parallelism = 3\nhistory_threshold_days = 10\n").unwrap();
        let cli = Cli::try_parse_from([
            "trialsift",
            "--config",
            cfg.to_str().unwrap(),
            "--parallelism",
            "5",
            "trie",
            "dump",
        ])
        .unwrap();
        let c = resolve_config(&cli).unwrap();
        assert_eq!(c.parallelism, 5);
        assert_eq!(c.history_threshold_days, 10);
        assert_eq!(c.rules, dir.path().join("rules"));
    }

    #[test]
    fn zero_parallelism_is_rejected() {
        let cli = Cli::try_parse_from(["trialsift", "--parallelism", "0", "trie", "dump"]).unwrap();
        assert!(matches!(resolve_config(&cli), Err(Failure::User(_))));
    }
}
