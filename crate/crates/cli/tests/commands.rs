use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ppgof::io::EventsFile;
use ppgof::nulldist::NullTable;
use ppgof::TestReport;

fn ppgof(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ppgof"))
        .args(args)
        .current_dir(cwd)
        .env_remove("PPGOF_CACHE_DIR")
        .output()
        .expect("spawn ppgof")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_table(dir: &Path, m: &str) -> String {
    let name = format!("m{m}.json");
    let o = ppgof(&["calibrate", "--m", m, "--reps", "150", "--n-sim", "300", "--out", &name], dir);
    assert!(o.status.success(), "{}", stderr(&o));
    name
}

#[test]
fn simulate_output_round_trips_through_fit_and_test() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = ppgof(
        &["simulate", "--model", "jm", "--theta", "1,0.1", "--n", "10000", "--horizon", "1", "--seed", "5", "--out", "jm.csv"],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let o = ppgof(&["fit", "--model", "jm", "--data", "jm.csv", "--horizon", "1", "--out", "fit.json"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("n*p"));

    let table = small_table(d, "2");
    let o = ppgof(
        &["test", "--model", "jm", "--data", "jm.csv", "--horizon", "1", "--null-table", &table, "--out", "report.json", "--curves", "curves"],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report: TestReport = serde_json::from_str(&fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.schema_version, 1);
    assert_eq!(report.n, 10_000);
    assert!(report.p_values.is_some());
    for f in ["observed.csv", "fitted_jm.csv", "report_jm.json", "process_jm.csv"] {
        assert!(d.join("curves").join(f).exists(), "{f}");
    }
    let header = fs::read_to_string(d.join("curves/observed.csv")).unwrap();
    assert!(header.starts_with("t,value\n"));
}

#[test]
fn simulate_is_seed_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = |out: &'static str| {
        vec!["simulate", "--model", "weibull", "--t0", "50", "--theta", "86,9", "--n", "500", "--horizon", "50", "--seed", "11", "--out", out]
    };
    assert!(ppgof(&args("a.csv"), d).status.success());
    assert!(ppgof(&args("b.csv"), d).status.success());
    assert_eq!(fs::read(d.join("a.csv")).unwrap(), fs::read(d.join("b.csv")).unwrap());
}

#[test]
fn gap_mode_matches_absolute_times() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = ppgof(
        &["simulate", "--model", "jm", "--theta", "1,0.01", "--n", "10000", "--horizon", "1", "--seed", "8", "--out", "abs.csv"],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let times = EventsFile::read(&d.join("abs.csv"), false, 1.0).unwrap().times;
    let mut prev = 0.0;
    let mut gaps = String::from("# inter-event gaps\n");
    for t in &times {
        gaps.push_str(&format!("{}\n", t - prev));
        prev = *t;
    }
    fs::write(d.join("gaps.txt"), gaps).unwrap();
    let ga = EventsFile::read(&d.join("gaps.txt"), true, 1.0).unwrap().times;
    // gap accumulation may differ from the original times in the last ulp
    assert!(ga.iter().zip(&times).all(|(x, y)| (x - y).abs() <= 1e-12));
    let a = ppgof(&["fit", "--model", "jm", "--data", "gaps.txt", "--gaps", "--horizon", "1"], d);
    let b = ppgof(&["fit", "--model", "jm", "--data", "abs.csv", "--horizon", "1"], d);
    assert!(a.status.success(), "{}", stderr(&a));
    assert!(b.status.success(), "{}", stderr(&b));
    assert_eq!(stdout(&a).lines().next(), stdout(&b).lines().next());
}

#[test]
fn missing_file_names_the_path_and_stage() {
    let dir = tempfile::tempdir().unwrap();
    let o = ppgof(&["fit", "--model", "jm", "--data", "no_such_file.txt", "--gaps"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let msg = stderr(&o);
    assert!(msg.contains("no_such_file.txt"), "{msg}");
    assert!(msg.contains("reading data"), "{msg}");
}

#[test]
fn malformed_data_and_table_mismatch_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("bad.csv"), "time,status\n2,1\n1,1\n").unwrap();
    let o = ppgof(&["fit", "--model", "jm", "--data", "bad.csv"], d);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.csv"));

    fs::write(d.join("ok.csv"), "time\n1\n2\n3\n4\n5\n6\n").unwrap();
    let table = small_table(d, "2");
    let o = ppgof(&["test", "--model", "littlewood", "--data", "ok.csv", "--horizon", "8", "--null-table", &table], d);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("null table"), "{}", stderr(&o));
}

#[test]
fn fail_on_reject_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = ppgof(
        &["simulate", "--model", "weibull", "--t0", "50", "--theta", "86,9", "--n", "1000", "--horizon", "50", "--seed", "2", "--out", "w.csv"],
        d,
    );
    assert!(o.status.success());
    let table = small_table(d, "2");
    let args = ["test", "--model", "gompertz", "--t0", "50", "--data", "w.csv", "--n", "1000", "--horizon", "50", "--null-table", &table];
    let o = ppgof(&args, d);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("reject"));
    let mut strict = args.to_vec();
    strict.push("--fail-on-reject");
    assert_eq!(ppgof(&strict, d).status.code(), Some(2));
}

#[test]
fn calibrate_writes_a_loadable_table() {
    let dir = tempfile::tempdir().unwrap();
    let name = small_table(dir.path(), "3");
    let t = NullTable::load(&dir.path().join(name)).unwrap();
    assert_eq!((t.m, t.reps), (3, 150));
}

#[test]
fn ingest_rates_simulates_a_cohort() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("rates.csv"), "age,rate\n50,0.01\n51,0.02\n52,0.03\n").unwrap();
    let o = ppgof(&["ingest-rates", "--rates", "rates.csv", "--n", "200", "--horizon", "3", "--seed", "4", "--out", "c.csv"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let ev = EventsFile::read(&d.join("c.csv"), false, 1.0).unwrap();
    assert!(!ev.times.is_empty() && ev.times.len() < 200);
    assert!(ev.times.iter().all(|&t| t > 0.0 && t <= 3.0));
}

#[test]
fn study_writes_plot_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = Command::new(env!("CARGO_BIN_EXE_ppgof"))
        .args(["study", "table2", "--arm", "jm", "--reps", "10", "--null-reps", "120", "--out", "out"])
        .current_dir(d)
        .env("PPGOF_CACHE_DIR", d.join("cache"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let arm = d.join("out/jm");
    let reps = fs::read_to_string(arm.join("replications.csv")).unwrap();
    assert!(reps.starts_with("rep,stat_ks,stat_cvm,stat_ad,reject10,reject05,reject01\n"));
    assert_eq!(reps.lines().count(), 11);
    let ecdf = fs::read_to_string(arm.join("ecdf_ad_transformed.csv")).unwrap();
    assert!(ecdf.starts_with("value,ecdf,arm\n"));
    assert!(ecdf.contains(",tested") && ecdf.contains(",target"));
    assert!(arm.join("summary.json").exists());
    assert_eq!(fs::read_dir(d.join("cache")).unwrap().count(), 1);
}

#[test]
fn unknown_study_and_model_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!ppgof(&["study", "table9", "--out", "x"], dir.path()).status.success());
    assert!(!ppgof(&["fit", "--model", "lognormal", "--data", "x"], dir.path()).status.success());
}
