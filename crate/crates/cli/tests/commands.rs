use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qdlag_cli::data_io::{read_dataset, write_dataset};
use qdlag_cli::document::ResultDocument;
use tempfile::TempDir;

fn qdlag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qdlag"))
        .args(args)
        .env_remove("QDLAG_THREADS")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small simulated dataset (K = 2, T = 6, p = 1).
fn simulated(dir: &TempDir, name: &str, replicate: u64) -> PathBuf {
    let out = path(dir, name);
    let rep = replicate.to_string();
    let res = qdlag(&[
        "simulate",
        "--n",
        "150",
        "--k",
        "2",
        "--t",
        "6",
        "--p",
        "1",
        "--seed",
        "7",
        "--replicate",
        &rep,
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    out
}

fn lines(p: &Path) -> Vec<String> {
    std::fs::read_to_string(p)
        .unwrap()
        .lines()
        .map(String::from)
        .collect()
}

#[test]
fn fit_writes_a_converged_document() {
    let dir = TempDir::new().unwrap();
    let data = simulated(&dir, "d.csv", 0);
    let doc = path(&dir, "fit.json");
    let trace = path(&dir, "trace.csv");
    let out = qdlag(&[
        "fit",
        "--data",
        s(&data),
        "--estimator",
        "uni",
        "--tau",
        "0.25",
        "--lambda1",
        "0.1",
        "--lambda2",
        "0.01",
        "--out",
        s(&doc),
        "--trace",
        s(&trace),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let doc = ResultDocument::load(&doc).unwrap();
    assert!(doc.diagnostics.converged);
    assert_eq!((doc.beta.rows, doc.beta.cols), (2, 6));
    // intercept prepended
    assert_eq!(doc.gamma.len(), 2);
    assert_eq!(doc.modes.as_ref().map(Vec::len), Some(2));
    assert_eq!(lines(&trace)[0], "iter,objective,primal_resid,dual_resid");
}

#[test]
fn fit_prints_to_stdout_without_out() {
    let dir = TempDir::new().unwrap();
    let data = simulated(&dir, "d.csv", 0);
    let out = qdlag(&[
        "fit",
        "--data",
        s(&data),
        "--estimator",
        "ridge",
        "--lambda",
        "0.1",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["format"], "qdlag-result");
    assert_eq!(v["tuning"]["alpha"], 0.0);
}

#[test]
fn missing_response_column_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let data = path(&dir, "bad.csv");
    std::fs::write(&data, "z1,x1_01,x1_02,x1_03\n1,2,3,4\n2,3,4,5\n").unwrap();
    let out = qdlag(&[
        "fit",
        "--data",
        s(&data),
        "--estimator",
        "concave",
        "--lambda1",
        "1",
        "--lambda2",
        "1",
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("\"y\""), "{}", stderr(&out));
}

#[test]
fn incomplete_rows_are_listed() {
    let dir = TempDir::new().unwrap();
    let data = path(&dir, "na.csv");
    std::fs::write(&data, "y,x1_1,x1_2,x1_3\n1,2,3,4\n2,NA,4,5\n3,1,,2\n").unwrap();
    let out = qdlag(&[
        "fit",
        "--data",
        s(&data),
        "--estimator",
        "ridge",
        "--lambda",
        "1",
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("[2, 3]"), "{}", stderr(&out));
}

#[test]
fn tuning_flags_must_match_the_estimator() {
    let dir = TempDir::new().unwrap();
    let data = simulated(&dir, "d.csv", 0);
    let out = qdlag(&[
        "fit",
        "--data",
        s(&data),
        "--estimator",
        "uni",
        "--lambda",
        "1",
    ]);
    assert_eq!(code(&out), 2);
    let out = qdlag(&[
        "fit",
        "--data",
        s(&data),
        "--estimator",
        "ridge",
        "--lambda",
        "1",
        "--alpha",
        "0.5",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn iteration_cap_exits_three_unless_allowed() {
    let dir = TempDir::new().unwrap();
    let data = simulated(&dir, "d.csv", 0);
    let doc = path(&dir, "fit.json");
    let args = [
        "fit",
        "--data",
        s(&data),
        "--estimator",
        "concave",
        "--lambda1",
        "0.1",
        "--lambda2",
        "0.01",
        "--max-iter",
        "1",
        "--out",
        s(&doc),
    ];
    let out = qdlag(&args);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(!doc.exists());
    let mut allowed = args.to_vec();
    allowed.push("--allow-nonconverged");
    let out = qdlag(&allowed);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(!ResultDocument::load(&doc).unwrap().diagnostics.converged);
}

#[test]
fn single_cell_cv_reproduces_fit() {
    let dir = TempDir::new().unwrap();
    let data = simulated(&dir, "d.csv", 0);
    let (fit, cv) = (path(&dir, "fit.json"), path(&dir, "cv.json"));
    let common = ["--data", s(&data), "--estimator", "concave", "--tau", "0.5"];
    let mut f = vec!["fit"];
    f.extend(common);
    f.extend(["--lambda1", "0.2", "--lambda2", "0.05", "--out", s(&fit)]);
    assert_eq!(code(&qdlag(&f)), 0);
    let mut c = vec!["cv"];
    c.extend(common);
    c.extend([
        "--grid-l1",
        "0.2",
        "--grid-l2",
        "0.05",
        "--folds",
        "3",
        "--out",
        s(&cv),
    ]);
    let out = qdlag(&c);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let (fit, cv) = (
        ResultDocument::load(&fit).unwrap(),
        ResultDocument::load(&cv).unwrap(),
    );
    assert_eq!(fit.beta, cv.beta);
    assert_eq!(fit.gamma, cv.gamma);
    let sel = cv.selection.unwrap();
    assert_eq!(sel.folds, Some(3));
    assert_eq!(sel.best_index, (0, 0));
}

#[test]
fn cv_writes_a_score_table() {
    let dir = TempDir::new().unwrap();
    let data = simulated(&dir, "d.csv", 0);
    let scores = path(&dir, "scores.csv");
    let out = qdlag(&[
        "cv",
        "--data",
        s(&data),
        "--estimator",
        "uni",
        "--grid-l1",
        "0.01,0.1,1",
        "--grid-l2",
        "0.01,0.1",
        "--scores",
        s(&scores),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = lines(&scores);
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[1].split(',').count(), 3);
}

#[test]
fn more_folds_than_rows_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let data = simulated(&dir, "d.csv", 0);
    let out = qdlag(&[
        "cv",
        "--data",
        s(&data),
        "--estimator",
        "uni",
        "--grid-l1",
        "0.1",
        "--grid-l2",
        "0.1",
        "--folds",
        "151",
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn validation_set_with_other_lag_count_is_rejected() {
    let dir = TempDir::new().unwrap();
    let data = simulated(&dir, "d.csv", 0);
    let other = path(&dir, "v.csv");
    let res = qdlag(&[
        "simulate",
        "--n",
        "50",
        "--k",
        "2",
        "--t",
        "5",
        "--p",
        "1",
        "--out",
        s(&other),
    ]);
    assert_eq!(code(&res), 0);
    let out = qdlag(&[
        "cv",
        "--data",
        s(&data),
        "--estimator",
        "concave",
        "--grid-l1",
        "0.1",
        "--grid-l2",
        "0.1",
        "--validation",
        s(&other),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

fn cv_doc(dir: &TempDir, data: &Path) -> PathBuf {
    let doc = path(dir, "cv.json");
    let out = qdlag(&[
        "cv",
        "--data",
        s(data),
        "--estimator",
        "uni",
        "--tau",
        "0.5",
        "--grid-l1",
        "0.1",
        "--grid-l2",
        "0.01,0.1",
        "--folds",
        "3",
        "--out",
        s(&doc),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    doc
}

fn band_rows(p: &Path) -> Vec<(f64, f64, f64)> {
    let mut rdr = csv::Reader::from_path(p).unwrap();
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            let f = |i: usize| r[i].parse::<f64>().unwrap();
            (f(2), f(3), f(4))
        })
        .collect()
}

#[test]
fn bootstrap_smoke_run() {
    let dir = TempDir::new().unwrap();
    let data = simulated(&dir, "d.csv", 0);
    let doc = cv_doc(&dir, &data);
    let (bands, boot) = (path(&dir, "bands.csv"), path(&dir, "boot.json"));
    let out = qdlag(&[
        "bootstrap",
        "--data",
        s(&data),
        "--cv",
        s(&doc),
        "--replicates",
        "2",
        "--out",
        s(&bands),
        "--doc",
        s(&boot),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        lines(&bands)[0],
        "exposure,lag,estimate,lower,upper,excludes_zero,intensity"
    );
    let rows = band_rows(&bands);
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|(_, lo, hi)| lo <= hi));
    let doc = ResultDocument::load(&boot).unwrap();
    assert_eq!(doc.command, "bootstrap");
    assert_eq!(doc.bootstrap.unwrap().replicates, 2);
}

#[test]
fn wider_level_gives_nested_bands() {
    let dir = TempDir::new().unwrap();
    let data = simulated(&dir, "d.csv", 0);
    let doc = cv_doc(&dir, &data);
    let run = |level: &str| {
        let bands = path(&dir, &format!("bands{level}.csv"));
        let out = qdlag(&[
            "bootstrap",
            "--data",
            s(&data),
            "--cv",
            s(&doc),
            "--replicates",
            "30",
            "--level",
            level,
            "--seed",
            "4",
            "--out",
            s(&bands),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        band_rows(&bands)
    };
    let (wide, narrow) = (run("0.95"), run("0.5"));
    for ((_, wl, wu), (_, nl, nu)) in wide.iter().zip(&narrow) {
        assert!(wl <= nl && nu <= wu);
    }
}

#[test]
fn noise_free_response_gives_degenerate_bands() {
    let dir = TempDir::new().unwrap();
    // y = 1 + x1_2 exactly; an unpenalized-enough fit interpolates it
    let data = path(&dir, "exact.csv");
    let mut text = String::from("y,x1_1,x1_2,x1_3\n");
    for i in 0..60 {
        let v = |j: usize| ((i * 7 + j * 13) % 17) as f64 / 4.0 - 2.0;
        text.push_str(&format!("{},{},{},{}\n", 1.0 + v(2), v(1), v(2), v(3)));
    }
    std::fs::write(&data, text).unwrap();
    let doc = path(&dir, "fit.json");
    let out = qdlag(&[
        "fit",
        "--data",
        s(&data),
        "--estimator",
        "ridge",
        "--lambda",
        "1e-9",
        "--eps1",
        "1e-9",
        "--eps2",
        "1e-9",
        "--max-iter",
        "200000",
        "--out",
        s(&doc),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let bands = path(&dir, "bands.csv");
    let out = qdlag(&[
        "bootstrap",
        "--data",
        s(&data),
        "--cv",
        s(&doc),
        "--replicates",
        "10",
        "--out",
        s(&bands),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for (est, lo, hi) in band_rows(&bands) {
        assert!(hi - lo <= 1e-4, "({lo}, {hi})");
        assert!(lo - 1e-4 <= est && est <= hi + 1e-4);
    }
}

#[test]
fn bootstrap_rejects_data_that_does_not_match_the_document() {
    let dir = TempDir::new().unwrap();
    let data = simulated(&dir, "d.csv", 0);
    let other = simulated(&dir, "o.csv", 1);
    let doc = cv_doc(&dir, &data);
    let out = qdlag(&[
        "bootstrap",
        "--data",
        s(&other),
        "--cv",
        s(&doc),
        "--replicates",
        "2",
        "--out",
        s(&path(&dir, "b.csv")),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn newer_major_schema_is_rejected() {
    let dir = TempDir::new().unwrap();
    let data = simulated(&dir, "d.csv", 0);
    let doc = cv_doc(&dir, &data);
    let mut v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&doc).unwrap()).unwrap();
    v["schema_version"] = "2.0.0".into();
    std::fs::write(&doc, serde_json::to_string(&v).unwrap()).unwrap();
    let out = qdlag(&[
        "bootstrap",
        "--data",
        s(&data),
        "--cv",
        s(&doc),
        "--replicates",
        "2",
        "--out",
        s(&path(&dir, "b.csv")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("schema version"), "{}", stderr(&out));

    v["schema_version"] = "1.4.0".into();
    std::fs::write(&doc, serde_json::to_string(&v).unwrap()).unwrap();
    assert!(ResultDocument::load(&doc).is_ok());
}

#[test]
fn simulate_defaults_have_the_reference_layout() {
    let dir = TempDir::new().unwrap();
    let data = path(&dir, "sim.csv");
    let out = qdlag(&["simulate", "--out", s(&data)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = lines(&data);
    assert_eq!(rows.len(), 501);
    let header: Vec<&str> = rows[0].split(',').collect();
    assert_eq!(header.len(), 1 + 5 + 6 * 30);
    assert_eq!(&header[..3], &["y", "z1", "z2"]);
    assert_eq!(header[6], "x1_01");
    assert_eq!(*header.last().unwrap(), "x6_30");
    let truth: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(path(&dir, "sim.csv.truth.json")).unwrap())
            .unwrap();
    assert_eq!(truth["format"], "qdlag-truth");
    assert_eq!(truth["modes"], serde_json::json!([12, 15, 18, 17, 15, 13]));
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let a = simulated(&dir, "a.csv", 2);
    let b = simulated(&dir, "b.csv", 2);
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn changing_snr_changes_only_the_response() {
    let dir = TempDir::new().unwrap();
    let run = |snr: &str, name: &str| {
        let out = path(&dir, name);
        let res = qdlag(&[
            "simulate",
            "--n",
            "40",
            "--k",
            "2",
            "--t",
            "5",
            "--p",
            "2",
            "--snr",
            snr,
            "--out",
            s(&out),
        ]);
        assert_eq!(code(&res), 0);
        read_dataset(&out).unwrap()
    };
    let (lo, hi) = (run("0.5", "lo.csv"), run("2", "hi.csv"));
    assert_eq!(lo.exposures(), hi.exposures());
    assert_eq!(lo.covariates(), hi.covariates());
    assert_ne!(lo.response(), hi.response());
}

#[test]
fn dataset_csv_round_trips() {
    let dir = TempDir::new().unwrap();
    let a = simulated(&dir, "a.csv", 0);
    let data = read_dataset(&a).unwrap();
    let b = path(&dir, "b.csv");
    write_dataset(&b, &data).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(read_dataset(&b).unwrap(), data);
}

fn bench(dir: &TempDir, name: &str, threads: &str) -> Vec<String> {
    let out = path(dir, name);
    let res = qdlag(&[
        "--threads",
        threads,
        "bench",
        "--models",
        "B,C",
        "--n-list",
        "80,120",
        "--reps",
        "2",
        "--k",
        "2",
        "--t",
        "5",
        "--p",
        "1",
        "--estimators",
        "concave,ridge",
        "--bench-l1",
        "0.1",
        "--bench-l2",
        "10",
        "--bench-lambda",
        "1",
        "--no-timing",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    lines(&out)
}

#[test]
fn bench_rows_cover_every_task_in_order() {
    let dir = TempDir::new().unwrap();
    let rows = bench(&dir, "b.csv", "2");
    // 2 models x 2 sizes x 2 reps x 2 estimators
    assert_eq!(rows.len(), 1 + 16);
    let keys: Vec<Vec<&str>> = rows[1..]
        .iter()
        .map(|r| r.split(',').take(6).collect())
        .collect();
    assert_eq!(keys[0], ["B", "80", "0.5", "normal", "concave", "0"]);
    assert_eq!(keys[1], ["B", "80", "0.5", "normal", "ridge", "0"]);
    assert_eq!(keys[15], ["C", "120", "0.5", "normal", "ridge", "1"]);
    for r in &rows[1..] {
        let fields: Vec<&str> = r.split(',').collect();
        assert!(fields[6].parse::<f64>().unwrap() > 0.0);
        assert_eq!(fields[7], "");
        assert_eq!(fields[10], "");
    }
}

#[test]
fn bench_does_not_depend_on_thread_count() {
    let dir = TempDir::new().unwrap();
    assert_eq!(bench(&dir, "one.csv", "1"), bench(&dir, "three.csv", "3"));
}

#[test]
fn invalid_thread_settings_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    let out = qdlag(&[
        "--threads",
        "0",
        "simulate",
        "--n",
        "5",
        "--out",
        s(&path(&dir, "x.csv")),
    ]);
    assert_eq!(code(&out), 2);
    let out = Command::new(env!("CARGO_BIN_EXE_qdlag"))
        .args(["simulate", "--n", "5", "--out", s(&path(&dir, "x.csv"))])
        .env("QDLAG_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}
