use std::fs;

use qnn::cli;
use qnn::graph::{Graph, OpType, Vertex};
use qnn::pipeline::{RunReport, Stage};
use qnn::schemes::{AlphaTable, SchemeId};

fn run(args: &[&str]) -> i32 {
    cli::run(std::iter::once("qnn").chain(args.iter().copied()))
}

fn fc_example() -> Graph {
    let mut g = Graph::new();
    g.add_vertex(Vertex::data("input")).unwrap();
    g.add_vertex(Vertex::data("w")).unwrap();
    g.add_vertex(Vertex::op("fc", OpType::FC)).unwrap();
    g.add_edge("input", "fc", 0).unwrap();
    g.add_edge("w", "fc", 1).unwrap();
    g
}

#[test]
fn qag_inserts_two_quantizers_on_the_fc_example() {
    let dir = tempfile::tempdir().unwrap();
    let (src, dst) = (dir.path().join("g.graph"), dir.path().join("gq.graph"));
    fc_example().save(&src).unwrap();
    assert_eq!(run(&["qag", "--in", src.to_str().unwrap(), "--out", dst.to_str().unwrap()]), 0);
    let gq = Graph::load(&dst).unwrap();
    assert_eq!(gq.ids_of(OpType::Quantize).len(), 2);
    assert_eq!(gq.contract_quantizers().unwrap(), fc_example());
}

#[test]
fn qag_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("bad.graph");
    fs::write(&src, "# qnn-graph v1\nvertex a data\nedge a b 0\n").unwrap();
    let out = dir.path().join("o.graph");
    assert_eq!(run(&["qag", "--in", src.to_str().unwrap(), "--out", out.to_str().unwrap()]), 1);
    fc_example().save(&src).unwrap();
    let args = ["qag", "--in", src.to_str().unwrap(), "--out", out.to_str().unwrap(), "--expensive", "input"];
    assert_eq!(run(&args), 1);
}

#[test]
fn optimize_alpha_writes_one_row_per_bitwidth() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("alpha.txt");
    let args = ["optimize-alpha", "--scheme", "clipq", "--bits", "2..8", "--samples", "100000", "--out", out.to_str().unwrap()];
    assert_eq!(run(&args), 0);
    let t = AlphaTable::load(&out).unwrap();
    assert_eq!(t.len(), 7);
    assert!((2..=8).all(|b| t.get(SchemeId::ClipQ, b).is_some()));
    let bad = ["optimize-alpha", "--scheme", "zoomq", "--bits", "3", "--out", out.to_str().unwrap()];
    assert_eq!(run(&bad), 1);
}

#[test]
fn bench_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    let args = ["bench-distributions", "--schemes", "clipq,zoomq,potq", "--bits", "3,5", "--samples", "1000", "--out", out.to_str().unwrap()];
    assert_eq!(run(&args), 0);
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("# qnn-bench v1\n# skipped potq b=5\n"));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1 + 5 * 5);
}

#[test]
fn run_and_search_need_a_seed_and_a_readable_config() {
    assert_eq!(run(&["run", "--config", "missing.cfg", "--seed", "1"]), 1);
    assert_eq!(run(&["run"]), 1);
    assert_eq!(run(&["search", "--qss-epochs", "2"]), 1);
    assert_eq!(run(&["run", "--seed", "1", "--qss-epochs", "0"]), 1);
    assert_eq!(run(&["frobnicate"]), 1);
}

#[test]
fn search_train_report_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        "# qnn-config v1\nsamples = 400\nqss_epochs = 2\nqpl_epochs = 2\nexempt_first_last = false\n",
    )
    .unwrap();
    let s = dir.path().join("s");
    let t = dir.path().join("t");
    let r = dir.path().join("r");
    let base = ["--config", cfg.to_str().unwrap(), "--seed", "4"];
    let with_out = |cmd: &str, out: &std::path::Path| {
        let mut a = vec![cmd];
        a.extend(base);
        a.extend(["--out", out.to_str().unwrap()]);
        run(&a)
    };
    assert_eq!(with_out("search", &s), 0);
    let search = RunReport::load(&s.join("report.toml")).unwrap();
    assert_eq!(search.stage, Stage::Search);
    assert!(fs::read_to_string(s.join("trace.csv")).unwrap().starts_with("# qnn-trace v1"));

    let from = s.join("report.toml");
    assert_eq!(run(&["train", "--from", from.to_str().unwrap(), "--out", t.to_str().unwrap()]), 0);
    assert_eq!(with_out("run", &r), 0);
    assert_eq!(
        fs::read(t.join("report.toml")).unwrap(),
        fs::read(r.join("report.toml")).unwrap()
    );
    assert_eq!(run(&["report", r.join("report.toml").to_str().unwrap()]), 0);
    assert_eq!(run(&["report", cfg.to_str().unwrap()]), 1);
}

#[test]
fn timing_is_opt_in() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let args = ["run", "--seed", "2", "--samples", "300", "--qss-epochs", "1", "--qpl-epochs", "1", "--record-timing", "--out", out.to_str().unwrap()];
    assert_eq!(run(&args), 0);
    assert!(RunReport::load(&out.join("report.toml")).unwrap().wall_clock_secs.is_some());
}
