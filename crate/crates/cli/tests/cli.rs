mod common;

use std::path::PathBuf;

use common::{bench, bench_path, csv_column, first_value, momentloop, stdout, ALL};
use momentloop::{parse_program, pretty_print};

fn scratch(name: &str, src: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("momentloop-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    std::fs::write(&path, src).unwrap();
    path
}

fn arg(p: &PathBuf) -> &str {
    p.to_str().unwrap()
}

#[test]
fn check_reports_classes() {
    let cases = [
        ("turning_vehicle", "ProbSolvableAfterExactRewrite"),
        ("robotic_arm", "ProbSolvable"),
        ("planar_aerial", "RequiresPce"),
        ("taylor_rule", "RequiresPce"),
    ];
    for (stem, class) in cases {
        let out = momentloop(&["check", arg(&bench_path(stem))]);
        assert!(out.status.success(), "{stem}");
        let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
        assert_eq!(v["class"], class, "{stem}");
        assert!(v["accumulators"].is_array());
        assert!(v["blocking_constructs"].is_array());
    }
}

#[test]
fn unsupported_program_exits_3() {
    let p = scratch("square.pp", "x = 1\nwhile true:\n  x = x*x + 1\nend\n");
    let out = momentloop(&["check", arg(&p)]);
    assert_eq!(out.status.code(), Some(3));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["class"], "Unsupported");
    assert_eq!(v["blocking_constructs"].as_array().unwrap().len(), 1);
    let out = momentloop(&["exact", arg(&p), "--target", "x", "--n", "3"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn input_errors_exit_2() {
    let p = scratch("syntax.pp", "x = = 1\n");
    assert_eq!(momentloop(&["check", arg(&p)]).status.code(), Some(2));
    assert_eq!(momentloop(&["check", "/no/such/file.pp"]).status.code(), Some(2));
    let tv = bench_path("turning_vehicle");
    assert_eq!(momentloop(&["exact", arg(&tv), "--n", "3"]).status.code(), Some(2));
    assert_eq!(
        momentloop(&["exact", arg(&tv), "--target", "nope", "--n", "3"]).status.code(),
        Some(2)
    );
    assert_eq!(
        momentloop(&["approx", arg(&tv), "--target", "x", "--n", "3", "--degree", "3", "--mode", "sideways"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn numeric_failure_exits_1() {
    let p = scratch("gamma.pp", "l = 0\nm = 0\nwhile true:\n  l = l + Gamma(1, 2)\n  m = exp(l)\nend\n");
    let out = momentloop(&["exact", arg(&p), "--target", "m", "--n", "3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverges"));
}

#[test]
fn exact_csv_and_json_agree() {
    let tv = bench_path("turning_vehicle");
    let out = momentloop(&["exact", arg(&tv), "--target", "x", "--target", "x^2", "--n", "20"]);
    assert!(out.status.success());
    let csv = stdout(&out);
    assert_eq!(csv.lines().next(), Some("n,monomial,value,std_error"));
    assert_eq!(csv.lines().count(), 3);
    let x = first_value(&csv, "value");
    assert!((x - 15.60760).abs() < 1e-5);

    let out = momentloop(&["exact", arg(&tv), "--target", "x", "--n", "20", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["table"]["method"]["kind"], "Exact");
    assert_eq!(v["table"]["rows"][0]["monomial"], "x");
    assert_eq!(v["table"]["rows"][0]["value"].as_f64().unwrap(), x);
    assert!(v["rewrite_ms"].as_f64().is_some() && v["engine_ms"].as_f64().is_some());
}

#[test]
fn approx_reports_each_degree() {
    let tv = bench_path("turning_vehicle");
    let out = momentloop(&["approx", arg(&tv), "--target", "x", "--n", "20", "--degree", "3,5,9"]);
    assert!(out.status.success());
    let csv = stdout(&out);
    assert_eq!(csv.lines().next(), Some("degree,n,monomial,value,se,bound,pce_ms,engine_ms"));
    let values = csv_column(&csv, "value");
    let se = csv_column(&csv, "se");
    assert_eq!(values.len(), 3);
    assert!(se[0] >= se[1] && se[1] >= se[2]);
    for (got, want) in values.iter().zip([14.44342, 15.43985, 15.60595]) {
        assert!((got - want).abs() < 1e-4, "{got} vs {want}");
    }

    let out = momentloop(&["approx", arg(&tv), "--target", "x", "--n", "20", "--degree", "3", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let run = &v[0];
    assert_eq!(run["degree"], 3);
    assert_eq!(run["table"]["method"]["kind"], "Pce");
    assert!(!run["sites"].as_array().unwrap().is_empty());
}

#[test]
fn simulation_is_reproducible() {
    let tv = bench_path("turning_vehicle");
    let run = |seed: &str| {
        let out = momentloop(&["simulate", arg(&tv), "--target", "x", "--n", "20", "--samples", "500", "--seed", seed]);
        assert!(out.status.success());
        stdout(&out)
    };
    let a = run("3");
    assert_eq!(a, run("3"));
    assert_ne!(a, run("4"));
    let se = csv_column(&a, "std_error")[0];
    assert!(se > 0.0);
    assert!((first_value(&a, "value") - 15.60760).abs() < 5.0 * se);
}

#[test]
fn emitted_rewrite_parses_and_is_polynomial() {
    let tv = bench_path("turning_vehicle");
    let out = momentloop(&["exact", arg(&tv), "--target", "x", "--n", "20", "--emit-rewritten"]);
    assert!(out.status.success());
    let src = stdout(&out);
    let body = src.split("while true:").nth(1).unwrap();
    assert!(!body.contains("cos(psi") && !body.contains("sin(psi"));
    let p = scratch("rewritten.pp", &src);
    let out = momentloop(&["check", arg(&p)]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["class"], "ProbSolvable");
    let out = momentloop(&["exact", arg(&p), "--target", "x", "--n", "20"]);
    assert!((first_value(&stdout(&out), "value") - 15.60760).abs() < 1e-5);
}

#[test]
fn compare_and_bench_formats() {
    let tv = bench_path("turning_vehicle");
    let out = momentloop(&["compare", arg(&tv), "--samples", "200", "--format", "csv"]);
    assert!(out.status.success());
    let csv = stdout(&out);
    assert_eq!(
        csv.lines().next(),
        Some("benchmark,target,n,sim,sim_se,exact,degree,pce,pce_ms,engine_ms")
    );
    assert_eq!(csv.lines().count(), 4);

    let out = momentloop(&["compare", arg(&tv), "--samples", "0", "--degree", "5", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["name"], "Turning vehicle");
    assert!(v["sim"].is_null());
    assert_eq!(v["pce"].as_array().unwrap().len(), 1);

    let dir = scratch("decay.pp", &std::fs::read_to_string(bench_path("stochastic_decay")).unwrap());
    let dir = dir.parent().unwrap().join("bench");
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::copy(bench_path("stochastic_decay"), dir.join("decay.pp")).unwrap();
    let json = dir.join("report.json");
    let out = momentloop(&["bench", "--dir", arg(&dir), "--samples", "0", "--out", arg(&json)]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("5028.31578"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 1);

    let empty = dir.join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    assert_eq!(momentloop(&["bench", "--dir", arg(&empty)]).status.code(), Some(2));
}

#[test]
fn benchmarks_round_trip_through_the_printer() {
    for stem in ALL {
        let b = bench(stem);
        let printed = pretty_print(&b.program);
        let again = parse_program(&printed).unwrap();
        assert_eq!(again, b.program, "{stem}");
        assert_eq!(pretty_print(&again), printed, "{stem}");
        assert!(!b.target.is_empty() && b.n > 0 && b.degrees.len() == 3, "{stem}");
    }
}
