mod common;

use common::*;
use gramrac_core::llmclient::MockChatTransport;
use gramrac_core::pipeline::{consolidate, load_report, RunMode, RunOptions, REPORT_FILE};

#[test]
fn every_mode_matches_its_golden_report() {
    let fx = fixture();
    let tmp = tempfile::tempdir().unwrap();
    for mode in RunMode::ALL {
        let chat = MockChatTransport::new(fx.llm.clone());
        let out = run(&fx, mode, tmp.path(), &chat, RunOptions::default());
        let report = out.report.expect("complete run");
        let written = std::fs::read_to_string(out.run_dir.join(REPORT_FILE)).unwrap();
        assert_eq!(written, report.to_json());
        assert!(
            matches_golden(mode, &written),
            "{mode} differs from its golden report"
        );
        assert_eq!(report.items.len(), report.n_eligible * report.n_runs);
    }
}

#[test]
fn evidence_sizes_per_mode() {
    let fx = fixture();
    let tmp = tempfile::tempdir().unwrap();
    for (mode, want) in [
        (RunMode::Bm25, 50),
        (RunMode::Rerank, 20),
        (RunMode::RerankCot, 20),
    ] {
        let chat = MockChatTransport::new(fx.llm.clone());
        let report = run(&fx, mode, tmp.path(), &chat, RunOptions::default())
            .report
            .unwrap();
        for it in &report.items {
            assert_eq!(it.n_paragraphs, Some(want), "{mode} {}", it.doc_id);
        }
        for req in chat.captured() {
            let text = &req.messages[0].content;
            assert!(text.contains(&format!("Paragraph {want}:\n")));
            assert!(!text.contains(&format!("Paragraph {}:\n", want + 1)));
        }
    }
}

#[test]
fn baseline_repeats_each_sufficient_item_ten_times() {
    let fx = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let chat = MockChatTransport::new(fx.llm.clone());
    let report = run(
        &fx,
        RunMode::Baseline,
        tmp.path(),
        &chat,
        RunOptions::default(),
    )
    .report
    .unwrap();
    let sufficient = fx.gold.iter().filter(|g| g.sufficient_info).count();
    assert_eq!(report.n_eligible, sufficient);
    assert_eq!(chat.call_count(), sufficient * 10);
    assert!(chat.captured().iter().all(|r| r.temperature == 0.2));
    let table = consolidate(&[report]);
    assert!(table.markdown.contains(" ± "));
}

#[test]
fn human_mode_records_missing_pages_as_item_error() {
    let fx = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let chat = MockChatTransport::new(fx.llm.clone());
    let report = run(
        &fx,
        RunMode::Human,
        tmp.path(),
        &chat,
        RunOptions::default(),
    )
    .report
    .unwrap();
    let bad = report
        .items
        .iter()
        .find(|i| i.doc_id == "osunda" && i.feature_id.as_str() == "GB_107")
        .unwrap();
    assert!(bad.error.as_deref().unwrap().contains("relevant pages"));
    assert!(report.items.iter().filter(|i| i.error.is_none()).count() > 0);
}

#[test]
fn interrupted_run_resumes_without_duplicate_calls() {
    let fx = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let first = MockChatTransport::new(fx.llm.clone());
    let out = run(
        &fx,
        RunMode::Baseline,
        tmp.path(),
        &first,
        RunOptions {
            stop_after_calls: Some(37),
        },
    );
    assert!(out.report.is_none());
    assert_eq!(first.call_count(), 37);

    let second = MockChatTransport::new(fx.llm.clone());
    let out = run(
        &fx,
        RunMode::Baseline,
        tmp.path(),
        &second,
        RunOptions::default(),
    );
    let total = out.report.as_ref().unwrap().items.len();
    assert_eq!(second.call_count(), total - 37);
    assert_eq!(out.skipped_completed, 37);
    let written = std::fs::read_to_string(out.run_dir.join(REPORT_FILE)).unwrap();
    assert!(matches_golden(RunMode::Baseline, &written));

    let third = MockChatTransport::new(fx.llm.clone());
    run(
        &fx,
        RunMode::Baseline,
        tmp.path(),
        &third,
        RunOptions::default(),
    );
    assert_eq!(third.call_count(), 0);
}

#[test]
fn reports_are_deterministic_and_reloadable() {
    let fx = fixture();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let chat = MockChatTransport::new(fx.llm.clone());
        run(
            &fx,
            RunMode::Bm25Cot,
            dir.path(),
            &chat,
            RunOptions::default(),
        );
    }
    let read =
        |d: &tempfile::TempDir, f: &str| std::fs::read(d.path().join("bm25_cot").join(f)).unwrap();
    for f in ["report.json", "metrics.csv", "predictions.jsonl"] {
        assert_eq!(read(&a, f), read(&b, f), "{f}");
    }
    let back = load_report(a.path(), "bm25_cot").unwrap();
    assert_eq!(back.mode, RunMode::Bm25Cot);
    assert!(load_report(a.path(), "nope").is_err());
}
