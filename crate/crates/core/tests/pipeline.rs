use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use plotsynth::config::{PipelineConfig, PipelineMode};
use plotsynth::demo::{demo_backend, demo_transport, with_demo_rules};
use plotsynth::executor::ProcessTransport;
use plotsynth::gateway::{Gateway, RoleTag, ScriptedBackend};
use plotsynth::ledger::StageLedger;
use plotsynth::pipeline::{Pipeline, RunError};
use plotsynth::prompts::PromptSet;
use plotsynth::record::{load_run, persist_run};
use plotsynth::{Origin, TaskInput};

fn input() -> TaskInput {
    TaskInput::new("q1", "Compare revenue across regions", "Columns: region (str), revenue (float)")
}

fn run_with(backend: ScriptedBackend, config: &PipelineConfig) -> Result<plotsynth::record::RunRecord, RunError> {
    let gateway = Gateway::new(backend);
    let prompts = PromptSet::builtin();
    let transport = demo_transport();
    Pipeline::new(&gateway, &transport, &prompts).run(&input(), config)
}

fn fenced(code: &str) -> String {
    format!("```python\n{code}\n```")
}

#[test]
fn ledger_and_cardinality_laws_hold_for_every_k_and_mode() {
    for k in 1..=8i64 {
        for mode in PipelineMode::ALL {
            let config = PipelineConfig::default().with_k(k).with_mode(mode);
            let r = run_with(demo_backend(), &config).unwrap();
            let k = k as u64;
            let (expected, branches, reviews) = match mode {
                PipelineMode::Full | PipelineMode::BinaryFeedback => (StageLedger::new(1, k, k, 1), k, k),
                PipelineMode::NoFeedback => (StageLedger::new(1, k, 0, 1), k, 0),
                PipelineMode::ZeroShot | PipelineMode::Cot => (StageLedger::new(0, 1, 0, 0), 0, 0),
            };
            assert_eq!(r.ledger, expected, "k={k} mode={mode:?}");
            assert_eq!(r.paths.len() as u64, branches);
            assert_eq!(r.feedback.len() as u64, reviews);
            assert_eq!(r.transcripts.len() as u64, r.ledger.total(), "no reprompts in the demo");
            let final_script = r.final_script.as_ref().unwrap();
            if mode.is_baseline() {
                assert_eq!(r.candidates.len(), 1);
                let origin = if mode == PipelineMode::Cot { Origin::Cot } else { Origin::ZeroShot };
                assert_eq!(final_script.origin, origin);
            } else {
                assert_eq!(r.candidates.len() as u64, k);
                assert_eq!(r.outcomes.len() as u64, k);
                assert_eq!(final_script.origin, Origin::Synthesized);
                let indices: Vec<usize> = r.candidates.iter().map(|c| c.path_index).collect();
                assert_eq!(indices, (1..=k as usize).collect::<Vec<_>>());
            }
            assert!(r.executable());
            assert!(r.outcomes.iter().chain(r.final_outcome.iter()).all(|o| o.is_consistent()));
        }
    }
}

#[test]
fn a_failing_branch_does_not_touch_the_others() {
    let backend = with_demo_rules(
        ScriptedBackend::new().rule(RoleTag::Code, "Chart type: line", fenced("import pandas\n# stub: fail ValueError: bad column")),
    );
    let r = run_with(backend, &PipelineConfig::default()).unwrap();
    let oks: Vec<bool> = r.outcomes.iter().map(|o| o.ok).collect();
    assert_eq!(oks, [true, false, true]);
    assert!(r.outcomes[1].error_text.as_deref().unwrap().contains("ValueError"));
    assert_eq!(r.ledger, StageLedger::new(1, 3, 3, 1));
}

#[test]
fn synthesis_runs_even_when_every_branch_fails() {
    let seen = Arc::new(Mutex::new(String::new()));
    let probe = seen.clone();
    let backend = with_demo_rules(
        ScriptedBackend::new()
            .rule_fn(RoleTag::Code, "Chart type: (\\w+)", |req| {
                let chart = req.last_user_text().lines().find(|l| l.starts_with("Chart type:")).unwrap().to_string();
                fenced(&format!("import pandas\n# {chart}\n# stub: fail KeyError: 'missing'"))
            })
            .rule_fn(RoleTag::Syn, "", move |req| {
                *probe.lock().unwrap() = req.last_user_text().to_string();
                fenced("import matplotlib")
            }),
    );
    let r = run_with(backend, &PipelineConfig::default()).unwrap();
    assert!(r.outcomes.iter().all(|o| !o.ok));
    assert_eq!(r.ledger.editor, 1);
    let prompt = seen.lock().unwrap().clone();
    for chart in ["Chart type: bar", "Chart type: line", "Chart type: scatter"] {
        assert!(prompt.contains(chart), "synthesis prompt lacks candidate `{chart}`");
    }
    assert_eq!(prompt.matches("VERDICT: discard").count(), 3);
}

#[test]
fn results_follow_path_order_whatever_the_completion_order() {
    // branch 1 finishes last, branch 3 first
    let backend = || {
        with_demo_rules(
            ScriptedBackend::new()
                .rule(RoleTag::Code, "Chart type: bar", fenced("import a\n# stub: delay 150"))
                .rule(RoleTag::Code, "Chart type: line", fenced("import b\n# stub: delay 60"))
                .rule(RoleTag::Code, "Chart type: scatter", fenced("import c\n# stub: figures 2")),
        )
    };
    let a = run_with(backend(), &PipelineConfig::default()).unwrap();
    let b = run_with(backend(), &PipelineConfig::default()).unwrap();
    let sources: Vec<&str> = a.candidates.iter().map(|c| c.source.lines().next().unwrap()).collect();
    assert_eq!(sources, ["import a", "import b", "import c"]);
    assert_eq!(a.outcomes[2].figures.len(), 2);
    assert_eq!(a.outcomes[2].figures[1].path, "figures/branch_3/fig_2.png");
    assert!(a.structurally_eq(&b));
    assert_eq!(a.content_hash(), b.content_hash());
}

#[test]
fn branch_parallelism_cap_is_honored() {
    let config = PipelineConfig { parallelism: Some(1), ..PipelineConfig::default().with_k(4) };
    let r = run_with(demo_backend(), &config).unwrap();
    assert_eq!(r.ledger.total(), 10);
}

#[test]
fn branches_run_concurrently_by_default() {
    let backend = with_demo_rules(ScriptedBackend::new().rule(RoleTag::Code, "", fenced("import x\n# stub: delay 300")));
    let start = Instant::now();
    let r = run_with(backend, &PipelineConfig::default().with_k(4)).unwrap();
    // four branches at 300ms each plus the final run at 300ms
    assert!(start.elapsed() < Duration::from_millis(1100), "{:?}", start.elapsed());
    assert_eq!(r.ledger.total(), 10);
}

#[test]
fn images_reach_the_reviewer_only_for_rendered_branches() {
    let backend = || {
        with_demo_rules(
            ScriptedBackend::new()
                .rule(RoleTag::Code, "Chart type: line", fenced("import b\n# stub: fail RuntimeError: nope"))
                .rule(RoleTag::Code, "Chart type: pie", fenced("import d\n# stub: silent")),
        )
    };
    let full = run_with(backend(), &PipelineConfig::default().with_k(4)).unwrap();
    let reviews: Vec<usize> = full.transcripts.iter().filter(|t| t.role_tag == RoleTag::Fb).map(|t| t.images).collect();
    let oks: Vec<usize> = full.outcomes.iter().map(|o| o.ok as usize).collect();
    assert_eq!(oks, [1, 0, 1, 0]);
    assert_eq!(reviews, oks);
    assert!(full.transcripts.iter().filter(|t| t.role_tag != RoleTag::Fb).all(|t| t.images == 0));

    let binary = run_with(backend(), &PipelineConfig::default().with_k(4).with_mode(PipelineMode::BinaryFeedback)).unwrap();
    assert!(binary.transcripts.iter().all(|t| t.images == 0));
    assert_eq!(binary.ledger, StageLedger::new(1, 4, 4, 1));
}

#[test]
fn reprompts_are_in_the_transcript_but_not_the_ledger() {
    let backend = with_demo_rules(
        ScriptedBackend::new().rule(RoleTag::Mpa, "^Request", "PLAN 1: bar\nPLAN 2: line"),
    );
    let r = run_with(backend, &PipelineConfig::default()).unwrap();
    assert_eq!(r.ledger, StageLedger::new(1, 3, 3, 1));
    assert_eq!(r.reprompts(), 1);
    assert_eq!(r.transcripts.len(), 9);
    assert!(r.transcripts[1].reprompt && r.transcripts[1].role_tag == RoleTag::Mpa);
}

#[test]
fn failed_generation_leaves_a_placeholder_and_is_not_counted() {
    let backend = with_demo_rules(ScriptedBackend::new().rule(RoleTag::Code, "Chart type: line|I cannot write that", "I cannot write that."));
    let r = run_with(backend, &PipelineConfig::default()).unwrap();
    assert_eq!(r.ledger, StageLedger::new(1, 2, 2, 1));
    assert_eq!(r.candidates.len(), 3);
    assert!(r.candidates[1].source.starts_with("# code generation failed"));
    assert!(!r.outcomes[1].ok);
    assert!(!r.feedback[1].structured);
    // generation call plus its reprompt
    assert_eq!(r.transcripts.iter().filter(|t| t.role_tag == RoleTag::Code).count(), 4);
}

#[test]
fn reviewer_outage_falls_back_without_aborting() {
    let backend = with_demo_rules(ScriptedBackend::new().rule_fail(RoleTag::Fb, "import matplotlib", "503 from provider"));
    let r = run_with(backend, &PipelineConfig::default()).unwrap();
    assert_eq!(r.ledger.visual_feedback, 0);
    assert_eq!(r.feedback.len(), 3);
    assert!(r.feedback.iter().all(|f| f.raw_text.contains("503")));
    assert_eq!(r.ledger.editor, 1);
}

#[test]
fn expansion_failure_aborts_with_a_partial_record() {
    let backend = with_demo_rules(ScriptedBackend::new().rule(RoleTag::Mpa, "", "no plans here"));
    let err = run_with(backend, &PipelineConfig::default()).unwrap_err();
    let partial = err.partial().expect("partial record");
    assert!(partial.failure.as_deref().unwrap().contains("path expansion"));
    assert_eq!(partial.ledger.total(), 0);
    assert_eq!(partial.transcripts.len(), 2);

    let dir = tempfile::tempdir().unwrap();
    persist_run(partial, dir.path()).unwrap();
    assert_eq!(load_run(dir.path()).unwrap().failure, partial.failure);
}

#[test]
fn synthesis_failure_aborts_after_the_branches() {
    let backend = with_demo_rules(ScriptedBackend::new().rule(RoleTag::Syn, "", "none"));
    let err = run_with(backend, &PipelineConfig::default()).unwrap_err();
    let partial = err.partial().unwrap();
    assert_eq!(partial.ledger, StageLedger::new(1, 3, 3, 0));
    assert!(partial.final_script.is_none());
}

#[test]
fn missing_runner_is_fatal() {
    let gateway = Gateway::new(demo_backend());
    let prompts = PromptSet::builtin();
    let transport = ProcessTransport::new("/nonexistent/runner");
    let err = Pipeline::new(&gateway, &transport, &prompts).run(&input(), &PipelineConfig::default()).unwrap_err();
    assert!(err.to_string().contains("transport unavailable"), "{err}");
}

#[test]
fn run_budget_bounds_a_hanging_branch() {
    let backend = with_demo_rules(ScriptedBackend::new().rule(RoleTag::Code, "Chart type: line", fenced("import x\n# stub: hang")));
    let config = PipelineConfig { run_budget: 0.5, ..PipelineConfig::default() };
    let start = Instant::now();
    let err = run_with(backend, &config).unwrap_err();
    assert!(start.elapsed() < Duration::from_secs(3));
    let partial = err.partial().unwrap();
    assert!(partial.failure.as_deref().unwrap().contains("budget"));
    assert!(partial.outcomes[1].timed_out);
}

#[test]
fn invalid_config_and_input_are_rejected_up_front() {
    let err = run_with(demo_backend(), &PipelineConfig::default().with_k(0)).unwrap_err();
    assert!(matches!(err, RunError::InvalidConfig(ref v) if v[0].message == "k must be ≥ 1"));

    let gateway = Gateway::new(demo_backend());
    let prompts = PromptSet::builtin();
    let transport = demo_transport();
    let blank = TaskInput::new("q", "   ", "d");
    let err = Pipeline::new(&gateway, &transport, &prompts).run(&blank, &PipelineConfig::default()).unwrap_err();
    assert!(matches!(err, RunError::InvalidInput(_)));
    assert_eq!(gateway.transcript_len(), 0);
}

#[test]
fn data_files_are_visible_to_generated_scripts() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("regions.csv");
    std::fs::write(&csv, "region,revenue\nnorth,3\n").unwrap();
    let gateway = Gateway::new(demo_backend());
    let prompts = PromptSet::builtin();
    let transport = plotsynth::executor::StubTransport::new(|job| {
        let ok = job.data_files.iter().any(|f| f.name == "regions.csv" && f.path.exists()) && job.script.contains("regions.csv");
        let result = if ok { plotsynth::executor::StubResult::Render(1) } else { plotsynth::executor::StubResult::Fail("FileNotFoundError".into()) };
        plotsynth::executor::StubAction::now(result)
    });
    let task = input().with_file("regions.csv", &csv);
    let r = Pipeline::new(&gateway, &transport, &prompts).run(&task, &PipelineConfig::default()).unwrap();
    assert!(r.outcomes.iter().all(|o| o.ok));
    assert!(r.executable());
}
