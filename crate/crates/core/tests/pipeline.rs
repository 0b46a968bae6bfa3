mod common;

use std::os::unix::fs::PermissionsExt;
use std::path::Path;
use std::sync::Arc;

use routegen_core::backend::{Backend, ReplayBackend, ReplayStore};
use routegen_core::corpus::Benchmark;
use routegen_core::generator::SamplingConfig;
use routegen_core::ledger::Stage;
use routegen_core::pipeline::{Pipeline, RunConfig, RunMode, RunOutcome, RunRecord, StageLimit, RECORD_FILE};
use routegen_core::report::{pass_table, render, token_table, ReportError};
use routegen_core::router::{RoutingSource, Strategy};

use common::*;

fn config(name: &str, out: &Path, mode: RunMode, n: u32) -> RunConfig {
    let mut cfg = RunConfig::new(name, "three_tasks.jsonl", out);
    cfg.mode = mode;
    cfg.sampling = SamplingConfig::default().with_n(n);
    cfg
}

fn run_with(cfg: RunConfig, bench: &Benchmark, limit: StageLimit) -> RunOutcome {
    Pipeline::new(cfg, bench.clone())
        .with_classifier(Arc::new(fixture_backend("clf", bench.tasks.clone())))
        .with_generator(Arc::new(fixture_backend("gen", bench.tasks.clone())))
        .with_executor("oracle", Arc::new(oracle_executor(&bench.tasks)))
        .run(limit)
        .unwrap()
}

fn run(name: &str, out: &Path, mode: RunMode, n: u32) -> RunOutcome {
    let bench = three_tasks();
    run_with(config(name, out, mode, n), &bench, StageLimit::Evaluate)
}

#[test]
fn forced_direct_spends_nothing_on_routing() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("direct", dir.path(), RunMode::ForcedDirect, 4);
    assert_eq!(out.exit_code(), 0);
    let r = &out.record;
    assert_eq!(r.totals.routing_total, 0);
    assert!(r.routing.is_none());
    for t in &r.tasks {
        assert_eq!(t.strategy, Some(Strategy::Direct));
        assert!(t.decision.is_none());
        assert!(t.routing_transcript.is_empty());
    }
    // Candidates 0 and 1 of every four are correct.
    assert!((r.score(1).unwrap().mean - 0.5).abs() < 1e-12);
}

#[test]
fn forced_icot_uses_two_stages_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("icot", dir.path(), RunMode::ForcedIcot, 4);
    for t in &out.record.tasks {
        assert_eq!(t.strategy, Some(Strategy::Icot));
        let g = t.generation.as_ref().unwrap();
        assert_eq!(g.transcript.len(), 1 + 3 * 4);
        assert_eq!(g.transcript.iter().filter(|r| r.stage == Stage::IcotStage2Prompt).count(), 4);
    }
    // Odd stage-2 calls answer correctly.
    assert!((out.record.score(1).unwrap().mean - 0.5).abs() < 1e-12);
}

#[test]
fn routed_run_counts_routing_tokens_in_the_total() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("routed", dir.path(), RunMode::ExternalClassifier, 4);
    let r = &out.record;
    assert!(r.totals.routing_total > 0);
    let inference: u64 = r.tasks.iter().map(|t| t.cost.as_ref().unwrap().total).sum();
    assert_eq!(r.totals.total, inference + r.totals.routing_total);
    let summary = r.routing.as_ref().unwrap();
    assert_eq!((summary.simple_count, summary.complex_count), (2, 1));
    assert_eq!(summary.distribution(), "2 Simple / 1 Complex (66.67% / 33.33%)");
    assert_eq!(r.settings.classifier_model.as_deref(), Some("clf"));
}

#[test]
fn self_routing_asks_the_generator() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("self", dir.path(), RunMode::SelfRouting, 2);
    let r = &out.record;
    assert_eq!(r.settings.classifier_model.as_deref(), Some("gen"));
    for t in &r.tasks {
        assert_eq!(t.decision.as_ref().unwrap().source, RoutingSource::SelfRouting);
    }
}

#[test]
fn external_labels_route_without_a_backend_call() {
    let dir = tempfile::tempdir().unwrap();
    let mut bench = three_tasks();
    for t in &mut bench.tasks {
        t.external_label = Some(if t.entry_point == "sum_to_n" { "easy" } else { "hard" }.into());
    }
    let out = run_with(config("label", dir.path(), RunMode::ExternalLabel, 2), &bench, StageLimit::Evaluate);
    let strategies: Vec<_> = out.record.tasks.iter().map(|t| t.strategy.unwrap()).collect();
    assert_eq!(strategies, [Strategy::Direct, Strategy::Icot, Strategy::Icot]);
    assert_eq!(out.record.totals.routing_total, 0);
}

#[test]
fn rerun_reuses_every_stage_and_reproduces_the_record() {
    let dir = tempfile::tempdir().unwrap();
    let first = run("routed", dir.path(), RunMode::ExternalClassifier, 3);
    assert!(first.computed > 0);
    let second = run("routed", dir.path(), RunMode::ExternalClassifier, 3);
    assert_eq!(second.computed, 0);
    assert_eq!(second.record.digest, first.record.digest);
    let saved = RunRecord::load(&dir.path().join(RECORD_FILE)).unwrap();
    assert_eq!(saved.digest, first.record.digest);
    assert_eq!(saved.compute_digest(), saved.digest);
}

#[test]
fn changed_settings_invalidate_logged_stages() {
    let dir = tempfile::tempdir().unwrap();
    let first = run("routed", dir.path(), RunMode::ExternalClassifier, 3);
    let changed = run("routed", dir.path(), RunMode::ExternalClassifier, 4);
    assert_ne!(changed.record.digest, first.record.digest);
    // Routing does not depend on n, so only generation and evaluation rerun.
    assert_eq!(changed.computed, 3 * 2);
    assert!(changed.record.tasks.iter().all(|t| t.generation.as_ref().unwrap().candidates.len() == 4));
}

#[test]
fn stage_limit_stops_early() {
    let dir = tempfile::tempdir().unwrap();
    let bench = three_tasks();
    let routed = run_with(config("routed", dir.path(), RunMode::ExternalClassifier, 2), &bench, StageLimit::Route);
    assert!(routed.record.tasks.iter().all(|t| t.decision.is_some() && t.generation.is_none()));
    assert!(routed.record.scores.is_empty());
    let generated = run_with(config("routed", dir.path(), RunMode::ExternalClassifier, 2), &bench, StageLimit::Generate);
    assert_eq!(generated.computed, 3);
    assert!(generated.record.tasks.iter().all(|t| t.generation.is_some() && t.evaluation.is_none()));
}

#[test]
fn report_against_itself_shows_no_change() {
    let dir = tempfile::tempdir().unwrap();
    let rec = run("routed", dir.path(), RunMode::ExternalClassifier, 4).record;
    let table = pass_table(std::slice::from_ref(&rec), 1, Some("routed")).unwrap();
    assert!(table.contains("+0.00%"), "{table}");
}

#[test]
fn report_compares_runs_on_the_same_tasks() {
    let root = tempfile::tempdir().unwrap();
    let base = run("direct", &root.path().join("a"), RunMode::ForcedDirect, 4).record;
    let routed = run("routed", &root.path().join("b"), RunMode::ExternalClassifier, 4).record;
    let runs = vec![base, routed];
    let text = render(&runs, 1, Some("direct"), Some("routed")).unwrap();
    assert!(text.contains("pass@1"), "{text}");
    assert!(text.contains("routed on three_tasks: 2 Simple / 1 Complex"), "{text}");
    let tokens = token_table(&runs, "routed").unwrap();
    assert_eq!(tokens.baselines.len(), 1);
    assert!(tokens.routing.as_ref().unwrap()[0] > 0);
}

#[test]
fn report_rejects_mismatched_task_sets() {
    let root = tempfile::tempdir().unwrap();
    let full = run("direct", &root.path().join("a"), RunMode::ForcedDirect, 2).record;
    let bench = three_tasks();
    let partial_bench = Benchmark::new(bench.name.clone(), bench.tasks[..2].to_vec()).unwrap();
    let partial = run_with(
        config("routed", &root.path().join("b"), RunMode::ExternalClassifier, 2),
        &partial_bench,
        StageLimit::Evaluate,
    )
    .record;
    let err = pass_table(&[full, partial], 1, Some("direct")).unwrap_err();
    assert!(matches!(err, ReportError::BenchmarkMismatch { .. }), "{err}");
}

#[test]
fn config_file_drives_a_replayed_run() {
    let root = tempfile::tempdir().unwrap();
    let bench_path = root.path().join("three_tasks.jsonl");
    std::fs::copy(fixture("three_tasks.jsonl"), &bench_path).unwrap();
    let bench = three_tasks();

    // Record model traffic in-process, as a live run would.
    let store = Arc::new(ReplayStore::open(root.path().join("store.jsonl")).unwrap());
    let clf: Arc<dyn Backend> = Arc::new(ReplayBackend::record(Box::new(fixture_backend("clf", bench.tasks.clone())), store.clone()));
    let generator: Arc<dyn Backend> = Arc::new(ReplayBackend::record(Box::new(fixture_backend("gen", bench.tasks.clone())), store));
    let recorded = Pipeline::new(config("routed", &root.path().join("live"), RunMode::ExternalClassifier, 3), bench.clone())
        .with_classifier(clf)
        .with_generator(generator)
        .with_executor("oracle", Arc::new(oracle_executor(&bench.tasks)))
        .run(StageLimit::Evaluate)
        .unwrap();

    let runner = root.path().join("runner.sh");
    std::fs::write(&runner, "#!/bin/sh\ncat > /dev/null\necho '{\"status\": \"Fail\"}'\n").unwrap();
    std::fs::set_permissions(&runner, std::fs::Permissions::from_mode(0o755)).unwrap();
    let toml_path = root.path().join("run.toml");
    std::fs::write(
        &toml_path,
        format!(
            r#"
name = "routed"
benchmark = "three_tasks.jsonl"
output_dir = "replayed"
mode = "external_classifier"

[sampling]
n = 3

[generator]
model = "gen"
endpoint = "http://127.0.0.1:9/v1"

[classifier]
model = "clf"
endpoint = "http://127.0.0.1:9/v1"

[sandbox]
runner = ["{}"]

[replay]
mode = "replay"
store = "store.jsonl"
"#,
            runner.display()
        ),
    )
    .unwrap();

    let cfg = RunConfig::load(&toml_path).unwrap();
    assert_eq!(cfg.output_dir, root.path().join("replayed"));
    let out = Pipeline::from_config(cfg).unwrap().run(StageLimit::Evaluate).unwrap();
    assert_eq!(out.exit_code(), 0);
    let strategies = |r: &RunRecord| r.tasks.iter().map(|t| t.strategy).collect::<Vec<_>>();
    assert_eq!(strategies(&out.record), strategies(&recorded.record));
    assert_eq!(out.record.totals, recorded.record.totals);
    // The stub runner fails everything.
    assert_eq!(out.record.score(1).unwrap().mean, 0.0);
    assert!(root.path().join("replayed").join(RECORD_FILE).exists());
}

#[test]
fn replay_mode_without_a_store_is_a_config_error() {
    let root = tempfile::tempdir().unwrap();
    let mut cfg = config("routed", root.path(), RunMode::ForcedDirect, 2);
    cfg.replay.mode = routegen_core::pipeline::ReplaySetting::Replay;
    assert!(cfg.validate().is_err());
}

