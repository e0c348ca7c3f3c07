use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_latent-price"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SIM: &[&str] = &[
    "simulate",
    "--theta",
    "1,0.05,0.01",
    "--sigma-bar2",
    "0.0101",
    "--x0",
    "cell:100",
];

fn simulate(dir: &Path, horizon: &str, seed: &str) {
    let mut args = SIM.to_vec();
    args.extend(["--T", horizon, "--seed", seed, "--out", "data.csv"]);
    let o = run(&args, dir);
    assert!(o.status.success(), "{}", stderr(&o));
}

fn value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing"))
        .parse()
        .unwrap()
}

#[test]
fn simulate_same_seed_same_bytes() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    simulate(a.path(), "500", "3");
    simulate(b.path(), "500", "3");
    simulate(c.path(), "500", "4");
    let read = |d: &tempfile::TempDir| fs::read(d.path().join("data.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn dataset_embeds_effective_config() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), "100", "1");
    let text = fs::read_to_string(d.path().join("data.csv")).unwrap();
    for line in ["# config.seed=1", "# config.T=100", "# config.theta=1,0.05,0.01", "# config.dt-sim=0.01"] {
        assert!(text.contains(line), "missing {line}");
    }
}

#[test]
fn estimate_recovers_true_grid_point() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), "10000", "4");
    let o = run(
        &[
            "estimate",
            "--input",
            "data.csv",
            "--out",
            "result.txt",
            "--sigma-bar2",
            "0.0101",
            "--grid-alpha2",
            "1:2:3",
            "--grid-sigma2",
            "0.01:0.015:3",
        ],
        d.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let result = fs::read_to_string(d.path().join("result.txt")).unwrap();
    assert_eq!(value(&result, "alpha2_hat"), 1.0);
    assert_eq!(value(&result, "sigma2_hat"), 0.01);
    assert!(result.contains("config.grid-alpha2=1:2:3"));
    assert!(result.contains("config.sigma-bar2=0.0101"));
    let surface = fs::read_to_string(d.path().join("result.surface.csv")).unwrap();
    assert!(surface.contains("alpha2,sigma2,beta,loglik"));
    assert!(surface.contains("# config.input=data.csv"));
    assert_eq!(value(&stdout(&o), "alpha2_hat"), 1.0);

    let s = run(&["surface", "--input", "result.txt"], d.path());
    assert!(s.status.success(), "{}", stderr(&s));
    let table = stdout(&s);
    let fixed_a = table.lines().filter(|l| l.starts_with("fixed_alpha2,1,")).count();
    let fixed_s = table.lines().filter(|l| l.starts_with("fixed_sigma2,") && l.split(',').nth(2) == Some("0.01")).count();
    assert!(fixed_a >= 1 && fixed_s >= 1, "{table}");
}

#[test]
fn config_file_overlay_and_precedence() {
    let d = tempfile::tempdir().unwrap();
    fs::write(
        d.path().join("run.cfg"),
        "theta=1,0.05,0.01\nsigma_bar2=0.0101\nT=50\nseed=9\nout=from_file.csv\n",
    )
    .unwrap();
    let o = run(&["--config", "run.cfg", "simulate", "--seed", "2"], d.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(d.path().join("from_file.csv")).unwrap();
    assert!(text.contains("# seed=2"));
    assert!(text.contains("# config.T=50"));
    assert!(text.contains("# config.config=run.cfg"));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 52);
}

#[test]
fn unknown_config_key_is_usage_error() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("bad.cfg"), "thetta=1,2,3\n").unwrap();
    let o = run(&["--config", "bad.cfg", "simulate"], d.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[usage]"), "{}", stderr(&o));
}

#[test]
fn unknown_flag_prints_usage() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--no-such-flag"], d.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn missing_required_value_is_usage_error() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--theta", "1,0.05,0.01", "--out", "x.csv"], d.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--sigma-bar2"));
}

#[test]
fn inadmissible_theta_is_usage_error() {
    let d = tempfile::tempdir().unwrap();
    let o = run(
        &["simulate", "--theta", "1,0.05,0.02", "--sigma-bar2", "0.0101", "--out", "x.csv"],
        d.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(!d.path().join("x.csv").exists());
}

#[test]
fn missing_input_is_data_error() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["estimate", "--input", "nope.csv", "--out", "r.txt"], d.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("error[data]"));
}

#[test]
fn malformed_ticks_are_data_error() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("t.csv"), "timestamp,bid,ask,order_flow\n0,100,99,0\n").unwrap();
    let o = run(&["estimate", "--input", "t.csv", "--out", "r.txt"], d.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn empty_grid_is_numerical_error() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), "2000", "1");
    let o = run(
        &[
            "estimate",
            "--input",
            "data.csv",
            "--out",
            "r.txt",
            "--grid-alpha2",
            "0.1:0.2:2",
            "--grid-sigma2",
            "0.5:0.6:2",
        ],
        d.path(),
    );
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error[numerical]"));
}

#[test]
fn filter_trace_has_one_row_per_observation() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), "200", "5");
    let o = run(&["filter", "--input", "data.csv", "--out", "trace.csv"], d.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(d.path().join("trace.csv")).unwrap();
    assert!(text.contains("# config.theta=1,0.05,0.01"));
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "time,mu,log_normalizer");
    assert_eq!(rows.len(), 202);
    for r in &rows[1..] {
        let mu: f64 = r.split(',').nth(1).unwrap().parse().unwrap();
        assert!((-0.5..=0.5).contains(&mu));
    }
}

#[test]
fn estimate_from_raw_ticks_resamples_session_window() {
    let d = tempfile::tempdir().unwrap();
    let mut ticks = String::from("timestamp,bid,ask,order_flow\n");
    for k in 0..400 {
        let t = 3590.0 + 2.5 * k as f64;
        let bid = 100 + ((k / 7) % 3) as i64;
        let flow = (k as f64 * 0.37).sin() * 3.0 + k as f64 * 0.01;
        ticks.push_str(&format!("{t},{bid},{},{flow}\n", bid + 1 + (k % 5 == 0) as i64));
    }
    fs::write(d.path().join("ticks.csv"), ticks).unwrap();
    fs::write(
        d.path().join("session.cfg"),
        "session_open=09:30\nwindow_start=10:30\nwindow_end=10:45\n",
    )
    .unwrap();
    let o = run(
        &[
            "--config",
            "session.cfg",
            "estimate",
            "--input",
            "ticks.csv",
            "--out",
            "r.txt",
            "--grid-alpha2",
            "0.5:40:8",
            "--grid-sigma2",
            "0.01:5:8",
        ],
        d.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let result = fs::read_to_string(d.path().join("r.txt")).unwrap();
    assert_eq!(value(&result, "n_obs"), 901.0);
    assert_eq!(value(&result, "horizon"), 900.0);
    assert!(result.contains("config.input_format=ticks"));
    assert!(result.contains("config.window_start=10:30"));
}

#[test]
fn verify_quick_subset_passes() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["verify", "--quick", "--check", "2", "--check", "7", "--check", "io"], d.path());
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 3);
}

#[test]
fn verify_unknown_check_is_usage_error() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["verify", "--check", "42"], d.path());
    assert_eq!(o.status.code(), Some(2));
}
