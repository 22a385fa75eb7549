use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fesqueeze::cli::{run, EXIT_FAILED, EXIT_OK, EXIT_USAGE};
use fesqueeze::{parse_relation, residual, Binding, CandidateFunction, Domain, Var};
use proptest::prelude::*;
use serde_json::Value;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fesqueeze")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn verify_identity_passes() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("v.json");
    let out = bin(&["verify", "--problem", "iterate_sum", "--candidate", "x", "--json", json.to_str().unwrap()]);
    assert_eq!(code(&out), EXIT_OK, "{}", String::from_utf8_lossy(&out.stderr));
    let v = read_json(&json);
    assert_eq!(v["problem"], "iterate_sum");
    assert_eq!(v["stage"], "verify");
    assert_eq!(v["residual_samples"], 1000);
    assert!(v["residual_max"].as_f64().unwrap() <= 1e-9);
    assert!(v.get("envelope").is_none() && v.get("oracle").is_none());
}

#[test]
fn verify_wrong_candidate_fails() {
    // f = 2x at x = 1: 2 + 4 - 2 = 4.
    let rel = parse_relation("f(x) + f(f(x)) = 2*x", Domain::PositiveReals).unwrap();
    let two_x = CandidateFunction::parse("2*x", Domain::PositiveReals).unwrap();
    assert_eq!(residual(&rel, &Binding::new().with(Var::X, 1.0), &two_x).unwrap(), 4.0);

    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("v.json");
    let out = bin(&["verify", "--problem", "iterate_sum", "--candidate", "2*x", "--json", json.to_str().unwrap()]);
    assert_eq!(code(&out), EXIT_FAILED);
    assert!(read_json(&json)["residual_max"].as_f64().unwrap() > 0.1);
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn refine_reports_collapse_coefficient() {
    let dir = tempfile::tempdir().unwrap();
    let (json, csv, svg) = (dir.path().join("r.json"), dir.path().join("r.csv"), dir.path().join("r.svg"));
    let out = bin(&[
        "refine",
        "--problem",
        "shifted_iterate",
        "--tol",
        "1e-8",
        "--json",
        json.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
        "--svg",
        svg.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), EXIT_OK, "{}", String::from_utf8_lossy(&out.stderr));
    let v = read_json(&json);
    assert!((v["envelope"]["c"].as_f64().unwrap() - 2.0).abs() <= 1e-8);
    assert_eq!(v["envelope"]["collapsed"], true);
    let rows = fs::read_to_string(&csv).unwrap();
    assert!(rows.starts_with("n,a_n,b_n,width\n1,1.0,3.0,"));
    let plot = fs::read_to_string(&svg).unwrap();
    assert!(plot.starts_with("<svg") && !plot.contains("<script"));
}

#[test]
fn solve_and_limits_write_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (json, csv, svg) = (dir.path().join("s.json"), dir.path().join("s.csv"), dir.path().join("s.svg"));
    let out = bin(&[
        "solve",
        "--problem",
        "iterate_sum",
        "--json",
        json.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
        "--svg",
        svg.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), EXIT_OK, "{}", String::from_utf8_lossy(&out.stderr));
    let v = read_json(&json);
    assert_eq!(v["oracle"]["converged"], true);
    for key in ["iterations", "update_norm", "clamps", "extrapolations"] {
        assert!(v["oracle"].get(key).is_some(), "{key}");
    }
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 513);
    assert!(fs::read_to_string(&svg).unwrap().matches("<polyline").count() >= 1);

    let out = bin(&["limits", "--problem", "shift_plus_one", "--json", json.to_str().unwrap()]);
    assert_eq!(code(&out), EXIT_OK);
    let v = read_json(&json);
    assert!((v["limits"]["at_zero"]["value"].as_f64().unwrap() - 1.0).abs() <= 1e-3);
    assert_eq!(v["limits"]["monotone_consistent"], true);
}

#[test]
fn json_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for path in [&a, &b] {
        let out = bin(&["verify", "--problem", "cubic_shift", "--candidate", "x^2", "--seed", "7", "--json", path.to_str().unwrap()]);
        assert_eq!(code(&out), EXIT_FAILED);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn corpus_runs_and_honours_override() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("c.json");
    let out = bin(&["corpus", "--json", json.to_str().unwrap()]);
    assert_eq!(code(&out), EXIT_OK, "{}", String::from_utf8_lossy(&out.stdout));
    let rows = read_json(&json);
    assert_eq!(rows.as_array().unwrap().len(), 17);
    assert!(rows.as_array().unwrap().iter().all(|r| r["passed"] == true));

    let alt = tempfile::tempdir().unwrap();
    fs::write(alt.path().join("only.feq"), "name = only\nrelation = f(x) = x\nknown_solution = x\n").unwrap();
    fs::write(alt.path().join("broken.feq"), "name = broken\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_fesqueeze"))
        .arg("corpus")
        .env("FESQUEEZE_CORPUS", alt.path())
        .output()
        .unwrap();
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("only") && table.contains("load error"), "{table}");
    assert_eq!(code(&out), EXIT_FAILED);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.feq");
    fs::write(&bad, "name = bad\nrelation = f(x = x\n").unwrap();
    let cases: [&[&str]; 8] = [
        &[],
        &["bogus"],
        &["verify"],
        &["verify", "--problem", "no_such_problem"],
        &["verify", "--problem", bad.to_str().unwrap()],
        &["solve", "--problem", "iterate_sum", "--damping", "2"],
        &["verify", "--problem", "iterate_sum", "--points", "4"],
        &["verify", "--problem", "midpoint_gap"],
    ];
    for args in cases {
        let out = bin(args);
        assert_eq!(code(&out), EXIT_USAGE, "{args:?}");
        assert!(!out.stderr.is_empty(), "{args:?}");
    }
    assert_eq!(code(&bin(&["--help"])), EXIT_OK);
}

#[test]
fn inequality_candidates_are_checked() {
    assert_eq!(code(&bin(&["verify", "--problem", "midpoint_gap", "--candidate", "3*x - 1"])), EXIT_OK);
    assert_eq!(code(&bin(&["verify", "--problem", "midpoint_gap", "--candidate", "x^2"])), EXIT_FAILED);
}

fn in_process(args: &[String]) -> i32 {
    let mut argv = vec!["fesqueeze".to_string()];
    argv.extend_from_slice(args);
    run(argv, &mut Vec::new(), &mut Vec::new())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unknown_subcommands_are_usage_errors(word in "[a-z]{1,8}") {
        prop_assume!(!["parse", "verify", "refine", "solve", "limits", "corpus", "help"].contains(&word.as_str()));
        prop_assert_eq!(in_process(&[word]), EXIT_USAGE);
    }

    #[test]
    fn malformed_candidates_are_usage_errors(junk in "[()+*/^ ]{1,6}") {
        let args = ["verify", "--problem", "iterate_sum", "--samples", "5", "--candidate", &junk].map(String::from);
        prop_assert_eq!(in_process(&args), EXIT_USAGE);
    }

    #[test]
    fn bad_numbers_are_usage_errors(text in "[a-z]{1,5}|-[0-9]{1,3}") {
        let args = ["verify", "--problem", "iterate_sum", "--samples", &text].map(String::from);
        prop_assert_eq!(in_process(&args), EXIT_USAGE);
    }

    #[test]
    fn exit_status_is_always_in_contract(sub in 0usize..6, tol in prop_oneof![Just(-1.0f64), 1e-12f64..1.0], seed in 0u64..5) {
        let sub = ["parse", "verify", "refine", "solve", "limits", "corpus"][sub];
        let args = [sub, "--problem", "iterate_sum", "--samples", "20", "--tol", &tol.to_string(), "--seed", &seed.to_string()]
            .map(String::from);
        let status = in_process(&args);
        prop_assert!([EXIT_OK, EXIT_FAILED, EXIT_USAGE].contains(&status));
        if tol < 0.0 {
            prop_assert_eq!(status, EXIT_USAGE);
        }
    }
}
