use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};

use plotsynth::bench::{load_suite, markdown_table, BenchError, Harness, SuiteOptions};
use plotsynth::gateway::{Cassette, Gateway};
use plotsynth::pipeline::{Pipeline, RunError};
use plotsynth::record::{load_run, persist_run, RunRecord};
use plotsynth::{ExecutionOutcome, PipelineConfig, TaskInput};

use crate::settings::{prompts, BackendArgs, ConfigArgs};
use crate::Failure;

pub struct RunArgs {
    pub query: String,
    pub dataset: String,
    pub data: Vec<PathBuf>,
    pub task_id: String,
    pub out: PathBuf,
}

fn outcome_summary(o: &ExecutionOutcome) -> String {
    if o.ok {
        let n = o.figures.len();
        format!("ok, {n} figure{} ({} ms)", if n == 1 { "" } else { "s" }, o.wall_time_ms)
    } else {
        let first = o.error_text.as_deref().and_then(|e| e.lines().rev().find(|l| !l.trim().is_empty())).unwrap_or("failed");
        let kind = if o.timed_out { "timed out" } else { "failed" };
        format!("{kind}: {} ({} ms)", first.trim(), o.wall_time_ms)
    }
}

fn ledger_line(r: &RunRecord) -> String {
    let l = r.ledger;
    format!(
        "query expansion {}, code generation {}, visual feedback {}, editor {} (total {})",
        l.query_expansion,
        l.code_generation,
        l.visual_feedback,
        l.editor,
        l.total()
    )
}

pub fn run(args: RunArgs, cfg: &ConfigArgs, backend: &BackendArgs, verbose: bool) -> Result<bool, Failure> {
    let config = cfg.resolve(verbose)?;
    let prompts = prompts(&config)?;
    let mut input = TaskInput::new(&args.task_id, &args.query, &args.dataset);
    for path in &args.data {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string());
        input = input.with_file(name, path);
    }
    let gateway = backend.gateway()?;
    let transport = backend.transport()?;

    let pipeline = Pipeline::new(&gateway, transport.as_ref(), &prompts);
    let (record, failure) = match pipeline.run(&input, &config) {
        Ok(r) => (r, None),
        Err(RunError::Aborted { reason, partial }) => (*partial, Some(reason)),
        Err(e @ (RunError::InvalidConfig(_) | RunError::InvalidInput(_))) => return Err(Failure::Config(e.into())),
    };

    let stored = persist_run(&record, &args.out).map_err(|e| Failure::Run(e.into()))?;
    eprintln!("record: {}", stored.display());
    if let Some(script) = &record.final_script {
        let path = args.out.join("final.py");
        fs::write(&path, &script.source).with_context(|| format!("cannot write {}", path.display())).map_err(Failure::Run)?;
        eprintln!("final script: {}", path.display());
    }
    match &record.final_outcome {
        Some(o) => eprintln!("final outcome: {}", outcome_summary(o)),
        None => eprintln!("final outcome: none"),
    }
    if let Some(f) = record.final_outcome.as_ref().and_then(|o| o.first_figure()) {
        eprintln!("figure: {}", args.out.join(&f.path).display());
    }
    eprintln!("ledger: {}", ledger_line(&record));
    if let Some(reason) = failure {
        return Err(Failure::Run(anyhow!("run aborted: {reason}")));
    }
    Ok(record.executable())
}

pub struct BenchArgs {
    pub suite: PathBuf,
    pub out: PathBuf,
    pub resume: bool,
    pub parallelism: usize,
}

fn bench_error(e: BenchError) -> Failure {
    match e {
        BenchError::InvalidConfig(_) | BenchError::InvalidK(_) => Failure::Config(e.into()),
        BenchError::Io { .. } => Failure::Run(e.into()),
    }
}

fn harness_parts(args: &BenchArgs, cfg: &ConfigArgs, backend: &BackendArgs, verbose: bool) -> Result<(PipelineConfig, Vec<plotsynth::bench::BenchItem>, Gateway), Failure> {
    let config = cfg.resolve(verbose)?;
    let items = load_suite(&args.suite).map_err(|e| Failure::Config(anyhow!(e).context(format!("cannot load suite {}", args.suite.display()))))?;
    Ok((config, items, backend.gateway()?))
}

pub fn bench(args: BenchArgs, cfg: &ConfigArgs, backend: &BackendArgs, verbose: bool) -> Result<bool, Failure> {
    let (config, items, gateway) = harness_parts(&args, cfg, backend, verbose)?;
    let prompts = prompts(&config)?;
    let transport = backend.transport()?;
    let opts = SuiteOptions { resume: args.resume, parallelism: args.parallelism, ..SuiteOptions::new(&args.out) };
    let report = Harness::new(&gateway, transport.as_ref(), &prompts).run_suite(&items, &config, &opts).map_err(bench_error)?;
    eprintln!("{} items: {} run, {} resumed", items.len(), report.executed, report.resumed);
    eprint!("{}", markdown_table(std::slice::from_ref(&report.scorecard)));
    eprintln!("scorecard: {}", args.out.join("scorecard.csv").display());
    Ok(true)
}

pub fn sweep(args: BenchArgs, k_values: &[i64], cfg: &ConfigArgs, backend: &BackendArgs, verbose: bool) -> Result<bool, Failure> {
    let (config, items, gateway) = harness_parts(&args, cfg, backend, verbose)?;
    let prompts = prompts(&config)?;
    let transport = backend.transport()?;
    let opts = SuiteOptions { resume: args.resume, parallelism: args.parallelism, ..SuiteOptions::new(&args.out) };
    let cards = Harness::new(&gateway, transport.as_ref(), &prompts).k_sweep(&items, k_values, &config, &opts).map_err(bench_error)?;
    eprint!("{}", markdown_table(&cards));
    eprintln!("chart: {}", args.out.join("sweep.svg").display());
    Ok(true)
}

fn first_line(text: &str) -> &str {
    text.lines().find(|l| !l.trim().is_empty()).unwrap_or("").trim()
}

pub fn render_record(r: &RunRecord) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "task: {}", r.input.task_id);
    let _ = writeln!(s, "query: {}", r.input.query);
    let _ = writeln!(s, "mode: {}, k = {}", r.config.mode, r.config.k);
    match &r.failure {
        Some(reason) => {
            let _ = writeln!(s, "status: aborted: {reason}");
        }
        None => {
            let _ = writeln!(s, "status: complete");
        }
    }
    let _ = writeln!(s, "\npaths ({}):", r.paths.len());
    for p in &r.paths {
        let _ = writeln!(s, "  [{}] {}", p.index, p.chart_intent.as_deref().unwrap_or_else(|| first_line(&p.plan_text)));
    }
    let _ = writeln!(s, "\ncandidates ({}):", r.candidates.len());
    for (i, c) in r.candidates.iter().enumerate() {
        let outcome = r.outcomes.get(i).map_or("not executed".to_string(), outcome_summary);
        let verdict = r.feedback.iter().find(|f| f.path_index == c.path_index).map_or(String::new(), |f| format!(", review: {}", f.verdict));
        let _ = writeln!(s, "  [{}] {}: {} lines, {outcome}{verdict}", c.path_index, c.origin, c.source.lines().count());
    }
    if let Some(f) = &r.final_script {
        let outcome = r.final_outcome.as_ref().map_or("not executed".to_string(), outcome_summary);
        let _ = writeln!(s, "\nfinal ({}): {} lines, {outcome}", f.origin, f.source.lines().count());
    }
    let _ = writeln!(s, "\nledger: {}", ledger_line(r));
    let _ = writeln!(s, "gateway calls: {} ({} reprompts)", r.transcripts.len(), r.reprompts());
    let t = r.timings;
    let _ = writeln!(
        s,
        "timings: expansion {} ms, branches {} ms, synthesis {} ms, final execution {} ms, total {} ms",
        t.expansion_ms, t.branches_ms, t.synthesis_ms, t.final_execution_ms, t.total_ms
    );
    s
}

pub fn inspect(path: &Path) -> Result<bool, Failure> {
    let record = load_run(path).map_err(|e| Failure::Run(e.into()))?;
    eprint!("{}", render_record(&record));
    Ok(true)
}

pub fn cassette_stats(path: &Path) -> Result<bool, Failure> {
    let cassette = Cassette::load(path).map_err(|e| Failure::Config(e.into()))?;
    eprintln!("{}: {} entries", path.display(), cassette.len());
    for (role, n) in cassette.role_counts() {
        eprintln!("  {role}: {n}");
    }
    Ok(true)
}

pub fn cassette_list(path: &Path) -> Result<bool, Failure> {
    let cassette = Cassette::load(path).map_err(|e| Failure::Config(e.into()))?;
    for e in cassette.entries() {
        eprintln!("{}  {:<8}  {}", &e.fingerprint[..12.min(e.fingerprint.len())], e.role_tag.as_str(), first_line(&e.response_text));
    }
    Ok(true)
}
