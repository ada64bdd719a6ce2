use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::{Command, Output};

use ccpftp_cli::output::{records, to_csv};
use ccpftp_cli::{execute, OutputFormat, ReportLevel, RunRequest, EXIT_PARSE, EXIT_VALIDATION};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn ccpftp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccpftp")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn tmp_file(name: &str, body: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ccpftp-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn liquidation_row_for_the_entropic_file() {
    let o = ccpftp(&[scenario("example_4_1.scn").to_str().unwrap(), "--strategies", "liquidate_own"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let row = out.lines().find(|l| l.trim_start().starts_with("liquidate_own")).unwrap();
    assert!(row.contains("0.430528"), "{row}");
}

#[test]
fn two_member_file_prints_the_pair_formula() {
    let o = ccpftp(&[scenario("two_member_symmetric.scn").to_str().unwrap(), "--out", "json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let mc = v["strategies"]["liquidate_own"]["summary"]["mc"].as_f64().unwrap();
    // ϱ/(2n) (δ/σ)² with n = 1, δ = 0.05, σ = 0.2
    assert!((mc - 0.5 * (0.05f64 / 0.2).powi(2)).abs() < 1e-12);
}

#[test]
fn all8_emits_eight_rows() {
    let o = ccpftp(&[scenario("example_4_1.scn").to_str().unwrap(), "--strategies", "all8", "--out", "csv"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().filter(|l| l.contains(",summary,,mc,")).collect();
    assert_eq!(rows.len(), 8);
    let names: Vec<&str> = rows.iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ccpftp_cli::ALL8);
}

#[test]
fn csv_and_json_carry_the_same_numbers() {
    let mut req = RunRequest::new(scenario("example_5_1.scn"));
    req.strategies = vec!["liquidate_own,auction,hedge_then_auction".into()];
    req.paths = Some(200_000);
    req.report = ReportLevel::Full;
    let res = execute(&req).unwrap();
    let recs = records(&res, ReportLevel::Full);
    let csv_text = to_csv(&recs);
    let json: serde_json::Value =
        serde_json::from_str(&ccpftp_cli::output::render(&res, OutputFormat::Json, ReportLevel::Full)).unwrap();
    let mut from_csv = BTreeMap::new();
    let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
    for row in rdr.records() {
        let row = row.unwrap();
        let v: f64 = row[4].parse().unwrap();
        from_csv.insert((row[0].to_string(), row[1].to_string(), row[2].to_string(), row[3].to_string()), v);
    }
    assert_eq!(from_csv.len(), recs.len());
    for ((strategy, section, id, field), v) in &from_csv {
        let root = if strategy.is_empty() { &json["xva"] } else { &json["strategies"][strategy] };
        let sec = &root[section];
        let node = if id.is_empty() { &sec[field] } else { &sec[id][field] };
        assert_eq!(node.as_f64(), Some(*v), "{strategy}/{section}/{id}/{field}");
    }
}

#[test]
fn same_seed_same_output() {
    let args = [
        scenario("example_5_1.scn").to_str().unwrap().to_string(),
        "--strategies".into(),
        "liquidate_own,auction".into(),
        "--paths".into(),
        "200000".into(),
        "--seed".into(),
        "7".into(),
        "--out".into(),
        "csv".into(),
        "--report".into(),
        "full".into(),
    ];
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let a = ccpftp(&args);
    let b = ccpftp(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn uncollateralized_flag_removes_margins() {
    let mut req = RunRequest::new(scenario("example_5_1.scn"));
    req.paths = Some(200_000);
    req.uncollateralized = true;
    let res = execute(&req).unwrap();
    let x = res.xva.unwrap();
    assert!(x.pre.accounts.iter().all(|a| a.im == 0.0 && a.df == 0.0 && a.mva == 0.0));
}

#[test]
fn external_strategies_have_no_xva_rows() {
    let mut req = RunRequest::new(scenario("example_5_1.scn"));
    req.strategies = vec!["liquidate_own,hedge_external".into()];
    req.paths = Some(200_000);
    let res = execute(&req).unwrap();
    let x = res.xva.as_ref().unwrap();
    assert!(x.strategy("liquidate_own").is_some());
    assert!(x.strategy("hedge_external").is_none());
    assert!(res.strategies[1].outcome.is_some());
}

#[test]
fn malformed_file_exits_with_parse_code() {
    let p = tmp_file("bad.scn", "defaulter = \"b\"\n[asset]\nmu = [2.0\n");
    let o = ccpftp(&[p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_PARSE));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.scn:"), "{err}");
}

#[test]
fn inverted_stress_levels_fail_validation() {
    let src = std::fs::read_to_string(scenario("example_5_1.scn"))
        .unwrap()
        .replace("alpha_im = 0.75", "alpha_im = 0.85");
    let p = tmp_file("inverted.scn", &src);
    let o = ccpftp(&[p.to_str().unwrap(), "--no-xva"]);
    assert_eq!(o.status.code(), Some(EXIT_VALIDATION), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn unknown_strategy_is_rejected() {
    let o = ccpftp(&[scenario("example_4_1.scn").to_str().unwrap(), "--strategies", "liquidate_all"]);
    assert_eq!(o.status.code(), Some(EXIT_VALIDATION));
}

#[test]
fn auction_requires_the_xva_study() {
    let o = ccpftp(&[scenario("example_4_1.scn").to_str().unwrap(), "--strategies", "auction"]);
    assert_eq!(o.status.code(), Some(EXIT_VALIDATION));
}

#[test]
fn per_participant_table_lists_every_member() {
    let o = ccpftp(&[scenario("example_4_1.scn").to_str().unwrap(), "--strategies", "hedge_own", "--report", "per_participant"]);
    let out = stdout(&o);
    for id in (1..=15).map(|i| i.to_string()).chain(["c".to_string()]) {
        assert!(out.lines().any(|l| l.trim_start().starts_with(&format!("{id} "))), "missing {id}");
    }
    assert!(out.contains("16.8000"));
}
