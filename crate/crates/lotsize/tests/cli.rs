use std::path::PathBuf;
use std::process::{Command, Output};

const E1: &str = "n = 2\ndemand = [3, 4]\nprice1 = [4, 3]\nprice2 = [2, 2]\nbreakpoint = 5\ncapacity = [10, 10]\nholding = [1, 0]\n";

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli");
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn e1_file() -> PathBuf {
    let p = scratch("e1.toml");
    std::fs::write(&p, E1).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lotsize")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn solve_prints_total() {
    let f = e1_file();
    let o = run(&["solve", "--in", f.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "total=18\n");
}

#[test]
fn solve_prints_plan_and_stats() {
    let f = e1_file();
    let stats = scratch("stats.csv");
    let o = run(&["solve", "--in", f.to_str().unwrap(), "--plan", "--stats", stats.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "1 7 p2 4\n2 0 none 0\ntotal 18\n");
    let csv = std::fs::read_to_string(stats).unwrap();
    assert!(csv.starts_with("station,segments,"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn query_prints_value() {
    let f = e1_file();
    let o = run(&["query", "--in", f.to_str().unwrap(), "--station", "1", "--fuel", "2"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "value=12\n");
    let o = run(&["query", "--in", f.to_str().unwrap(), "--station", "1", "--fuel", "11"]);
    assert_eq!(o.status.code(), Some(3));
    let o = run(&["query", "--in", f.to_str().unwrap(), "--station", "3", "--fuel", "0"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn verify_reports_and_dumps() {
    let o = run(&["verify", "--seed", "1", "--count", "0", "--n", "5"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("mismatches=0\n"));
    let report = scratch("report.csv");
    let table = scratch("oracle.csv");
    let o = run(&[
        "verify", "--seed", "9", "--count", "50", "--n", "8",
        "--csv", report.to_str().unwrap(), "--oracle-csv", table.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("cases=50\n"));
    assert_eq!(std::fs::read_to_string(report).unwrap().lines().count(), 51);
    assert!(std::fs::read_to_string(table).unwrap().starts_with("t,i,value\n"));
}

#[test]
fn gen_output_solves() {
    let p = scratch("gen.toml");
    let o = run(&["gen", "--seed", "3", "--n", "12", "--out", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let o = run(&["solve", "--in", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("total="));
}

#[test]
fn bench_writes_csv() {
    let p = scratch("bench.csv");
    let o = run(&["bench", "--sizes", "256,512", "--out", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("median_ratio="));
    assert_eq!(std::fs::read_to_string(p).unwrap().lines().count(), 3);
    let o = run(&["bench", "--sizes", "512,256", "--out", scratch("x.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn bad_input_exits_3() {
    let p = scratch("bad.toml");
    std::fs::write(&p, format!("{E1}extra = 1\n")).unwrap();
    let o = run(&["solve", "--in", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(o.stdout.is_empty());
    assert!(!o.stderr.is_empty());
    std::fs::write(&p, E1.replace("price2 = [2, 2]", "price2 = [5, 2]")).unwrap();
    assert_eq!(run(&["solve", "--in", p.to_str().unwrap()]).status.code(), Some(3));
    assert_eq!(run(&["solve", "--in", "/nonexistent/x.toml"]).status.code(), Some(3));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(3));
    assert_eq!(run(&["solve"]).status.code(), Some(3));
    assert_eq!(run(&[]).status.code(), Some(3));
}
