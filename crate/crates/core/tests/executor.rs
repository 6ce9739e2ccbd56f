use std::time::{Duration, Instant};

use proptest::prelude::*;

use plotsynth::executor::{execute, ExecError, ExecRequest, ProcessTransport, StubAction, StubResult, StubTransport, NO_FIGURE};
use plotsynth::{CandidateScript, DataFile, Origin};

fn sh(script: &str) -> ProcessTransport {
    ProcessTransport::from_command(&["sh".into(), "-c".into(), script.into()]).unwrap()
}

fn req(timeout: Duration) -> ExecRequest<'static> {
    ExecRequest { data_files: &[], timeout, max_error_chars: 4000, label: "branch_1" }
}

fn candidate() -> CandidateScript {
    CandidateScript::new(1, "import matplotlib.pyplot as plt\nplt.plot([1, 2])", Origin::MultiPath)
}

const FIGURE_DIR: &str = r#"dir=$(printf '%s' "$payload" | sed 's/.*"figure_dir":"\([^"]*\)".*/\1/')"#;

#[test]
fn process_runner_success_is_routed_to_figures() {
    let t = sh(&format!(
        "payload=$(cat); {FIGURE_DIR}; printf 'png-bytes' > \"$dir/fig_1.png\"; printf 'noise' >&2; echo '{{\"status\":\"ok\",\"figures\":[\"fig_1.png\"]}}'"
    ));
    let o = execute(&candidate(), &req(Duration::from_secs(10)), &t).unwrap();
    assert!(o.ok && o.is_consistent(), "{o:?}");
    assert_eq!(o.figures[0].bytes.as_slice(), b"png-bytes");
}

#[test]
fn process_runner_receives_the_job_on_stdin() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    std::fs::write(&data, "a\n1\n").unwrap();
    let files = [DataFile::new("d.csv", &data)];
    let t = sh(r#"payload=$(cat); printf '{"status":"error","traceback":"%s %s %s"}' "$MPLBACKEND" "$(pwd)" "$(cat d.csv | tr '\n' ' ')""#);
    let request = ExecRequest { data_files: &files, ..req(Duration::from_secs(10)) };
    let o = execute(&candidate(), &request, &t).unwrap();
    let text = o.error_text.unwrap();
    assert!(text.starts_with("Agg "), "{text}");
    assert!(text.contains("plotsynth-job-"), "{text}");
    assert!(text.ends_with("a 1 "), "{text}");
}

#[test]
fn process_runner_error_keeps_the_traceback() {
    let t = sh(r#"cat >/dev/null; printf '%s\n' '{"status":"error","traceback":"Traceback (most recent call last):\nValueError: boom"}'"#);
    let o = execute(&candidate(), &req(Duration::from_secs(10)), &t).unwrap();
    assert!(!o.ok && o.is_consistent());
    assert!(o.error_text.unwrap().ends_with("ValueError: boom"));
}

#[test]
fn process_runner_ok_without_figures_is_a_failure() {
    let t = sh(r#"cat >/dev/null; echo '{"status":"ok","figures":[]}'"#);
    let o = execute(&candidate(), &req(Duration::from_secs(10)), &t).unwrap();
    assert_eq!(o.error_text.as_deref(), Some(NO_FIGURE));
}

#[test]
fn stray_stdout_is_a_protocol_violation() {
    let t = sh(r#"cat >/dev/null; echo 'hello from the script'; echo '{"status":"ok","figures":[]}'"#);
    let o = execute(&candidate(), &req(Duration::from_secs(10)), &t).unwrap();
    let text = o.error_text.unwrap();
    assert!(text.contains("protocol violation") && text.contains("hello from the script"), "{text}");
}

#[test]
fn crashing_runner_reports_status_and_stderr() {
    let t = sh("cat >/dev/null; echo 'Segmentation fault' >&2; exit 139");
    let o = execute(&candidate(), &req(Duration::from_secs(10)), &t).unwrap();
    let text = o.error_text.unwrap();
    assert!(text.contains("139") && text.contains("Segmentation fault"), "{text}");
}

#[test]
fn sleeping_runner_is_killed_at_the_timeout() {
    let t = sh("cat >/dev/null; exec sleep 10");
    let start = Instant::now();
    let o = execute(&candidate(), &req(Duration::from_secs(1)), &t).unwrap();
    assert!(o.timed_out && !o.ok && o.is_consistent());
    assert!(start.elapsed() < Duration::from_secs(3), "{:?}", start.elapsed());
}

#[test]
fn runner_that_ignores_stdin_still_gets_a_result() {
    let t = sh(r#"echo '{"status":"error","traceback":"E"}'"#);
    let o = execute(&candidate(), &req(Duration::from_secs(10)), &t).unwrap();
    assert_eq!(o.error_text.as_deref(), Some("E"));
}

#[test]
fn missing_runner_binary_is_distinct_from_script_failure() {
    let t = ProcessTransport::new("/definitely/not/here");
    assert!(matches!(execute(&candidate(), &req(Duration::from_secs(1)), &t), Err(ExecError::TransportUnavailable(_))));
}

#[test]
fn concurrent_jobs_never_share_directories() {
    let seen = std::sync::Arc::new(std::sync::Mutex::new(Vec::new()));
    let probe = seen.clone();
    let t = StubTransport::new(move |job| {
        probe.lock().unwrap().push((job.work_dir.clone(), job.figure_dir.clone()));
        StubAction::after(Duration::from_millis(50), StubResult::Render(1))
    });
    let outcomes: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = (1..=6)
            .map(|i| {
                let t = &t;
                s.spawn(move || {
                    let label = format!("branch_{i}");
                    let r = ExecRequest { label: &label, ..req(Duration::from_secs(5)) };
                    execute(&candidate(), &r, t).unwrap()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let seen = seen.lock().unwrap();
    let mut dirs: Vec<_> = seen.iter().map(|(w, _)| w.clone()).collect();
    dirs.sort();
    dirs.dedup();
    assert_eq!(dirs.len(), 6);
    let mut names: Vec<_> = outcomes.iter().map(|o| o.figures[0].path.clone()).collect();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), 6);
}

fn arb_behavior() -> impl Strategy<Value = StubAction> {
    let result = prop_oneof![
        (0usize..4).prop_map(StubResult::Render),
        prop_oneof![Just(String::new()), Just("   ".to_string()), ".{0,60}"].prop_map(StubResult::Fail),
        Just(StubResult::Silent),
        Just(StubResult::Hang),
        ".{0,40}".prop_map(StubResult::Garbage),
    ];
    (result, 0u64..60).prop_map(|(result, ms)| StubAction::after(Duration::from_millis(ms), result))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn every_outcome_is_routed_exclusively(action in arb_behavior()) {
        let t = StubTransport::new(move |_| action.clone());
        let timeout = Duration::from_millis(40);
        let start = Instant::now();
        let o = execute(&candidate(), &req(timeout), &t).unwrap();
        prop_assert!(o.is_consistent(), "{:?}", o);
        prop_assert_eq!(o.ok, !o.figures.is_empty());
        prop_assert!(start.elapsed() < timeout + Duration::from_secs(2));
    }
}
