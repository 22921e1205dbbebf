use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hetprobit::gibbs::{run_chain, GibbsConfig};
use hetprobit::io::{read_dataset, write_dataset};
use hetprobit::kernels::KernelSpec;
use hetprobit::model::MixtureTable;
use hetprobit::posterior::{choice_prob_draws, median_and_interval, posterior_predictive_at};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hetprobit"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn simulate(dir: &Path, n: usize, seed: u64) -> String {
    let path = dir.join(format!("sim_{n}_{seed}.csv"));
    let p = path.to_str().unwrap().to_string();
    let o = run(&[
        "simulate",
        "--n",
        &n.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        &p,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    p
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn fit_writes_draws_summary_and_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 20, 1);
    let out = dir.path().join("fit");
    let o = run(&[
        "fit",
        "--data",
        &data,
        "--iterations",
        "300",
        "--burn-in",
        "100",
        "--seed",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let draws = csv_rows(&out.join("draws.csv"));
    assert_eq!(draws[0][..3], ["iteration", "theta.x1", "log_likelihood"]);
    assert_eq!(draws.len(), 1 + 200);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.contains("theta.x1.median,"));
    let diag = csv_rows(&out.join("diagnostics.csv"));
    assert_eq!(
        diag[0],
        ["parameter", "mean", "sd", "ess", "lag1_autocorrelation"]
    );
    assert!(diag.len() >= 2);

    let again = dir.path().join("fit2");
    let o = run(&[
        "fit",
        "--data",
        &data,
        "--iterations",
        "300",
        "--burn-in",
        "100",
        "--seed",
        "5",
        "--out",
        again.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(
        fs::read(out.join("draws.csv")).unwrap(),
        fs::read(again.join("draws.csv")).unwrap()
    );
}

#[test]
fn missing_outcome_column_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    fs::write(&data, "a,b\n1,2\n3,4\n").unwrap();
    let o = run(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("'y'"), "{}", stderr(&o));
}

#[test]
fn predict_reports_points_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 40, 2);
    let out = dir.path().join("pred");
    let o = run(&[
        "predict",
        "--data",
        &data,
        "--iterations",
        "400",
        "--burn-in",
        "200",
        "--points",
        "0.5,1.0;0,0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&out.join("predictions.csv"));
    assert_eq!(
        rows[0],
        [
            "point",
            "x1",
            "x2",
            "probability",
            "decision",
            "probability_lower",
            "probability_upper"
        ]
    );
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1][0], "1");
    assert_eq!(rows[2][0], "2");
    // x'β = 0 at the origin: every draw gives exactly one half.
    let p: f64 = rows[2][3].parse().unwrap();
    assert!((p - 0.5).abs() < 1e-12, "{p}");
    assert_eq!(rows[2][4], "1");
}

#[test]
fn predict_rejects_wrong_point_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 20, 3);
    let o = run(&[
        "predict",
        "--data",
        &data,
        "--iterations",
        "50",
        "--burn-in",
        "10",
        "--points",
        "0.5,1.0,2.0",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn simulate_is_reproducible_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(dir.path(), 10, 9);
    let b = dir.path().join("again.csv");
    let o = run(&[
        "simulate",
        "--n",
        "10",
        "--seed",
        "9",
        "--out",
        b.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let rows = csv_rows(Path::new(&a));
    assert_eq!(rows[0], ["y", "x1", "x2"]);
    assert_eq!(rows.len(), 11);

    let d = read_dataset(Path::new(&a), Some("x1")).unwrap();
    let copy = dir.path().join("copy.csv");
    write_dataset(&copy, &d).unwrap();
    assert_eq!(read_dataset(&copy, Some("x1")).unwrap(), d);
}

#[test]
fn replicate_study_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("study.csv");
    let o = run(&[
        "replicate-study",
        "--n",
        "50",
        "--replications",
        "2",
        "--alphas",
        "0.5,1.5",
        "--iterations",
        "300",
        "--burn-in",
        "100",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&out);
    assert_eq!(rows[0][0], "alpha");
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1][0].parse::<f64>().unwrap(), 0.5);
    assert_eq!(rows[2][0].parse::<f64>().unwrap(), 1.5);
}

#[test]
fn bad_config_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.txt");
    fs::write(&cfg, "n = 50\nbogus = 1\n").unwrap();
    let o = run(&["replicate-study", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bogus"));

    fs::write(&cfg, "replications = 0\n").unwrap();
    let o = run(&["replicate-study", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn predictive_at_training_point_lies_in_choice_probability_band() {
    let dir = tempfile::tempdir().unwrap();
    let data = read_dataset(Path::new(&simulate(dir.path(), 60, 4)), Some("x1")).unwrap();
    let config = GibbsConfig {
        iterations: 2_000,
        burn_in: 1_000,
        seed: 8,
        prediction_points: vec![data.row(0).to_vec()],
        ..GibbsConfig::default()
    };
    let spec = KernelSpec::new(1.5, 1.0).unwrap();
    let draws = run_chain(&data, &spec, &config, &MixtureTable::log_chi2()).unwrap();
    let cp = choice_prob_draws(&draws, &data, 0).unwrap();
    let (_, band) = median_and_interval(&cp, 0.95).unwrap();
    let p = posterior_predictive_at(&draws, 0).unwrap();
    assert!(
        band.lower <= p && p <= band.upper,
        "{p} outside [{}, {}]",
        band.lower,
        band.upper
    );
}
