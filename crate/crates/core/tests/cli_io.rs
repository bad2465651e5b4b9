use std::fs;
use std::path::Path;

use levcycle::cli::{run_command, EXIT_CONFIG, EXIT_DIVERGED, EXIT_OK};
use levcycle::model::{simulate, ModelParams, State};
use levcycle::output::{trajectory_csv, write_trajectory_csv, TRAJECTORY_HEADER};
use levcycle::stochastic::{GarchParams, GarchShocks};

const PRESETS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/presets");

fn preset(name: &str) -> String {
    format!("{PRESETS}/{name}.conf")
}

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["levcycle"];
    argv.extend_from_slice(args);
    run_command(argv)
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let idx = lines
        .next()
        .unwrap()
        .split(',')
        .position(|h| h == name)
        .unwrap();
    lines
        .map(|l| l.split(',').nth(idx).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn one_step_trajectory_is_header_plus_row() {
    let params = ModelParams::default();
    let traj = simulate(
        &State::initial(&params),
        &params,
        &mut GarchShocks::new(GarchParams::default(), 1),
        1,
    );
    let csv = trajectory_csv(&traj);
    assert_eq!(csv.lines().count(), 2);
    assert_eq!(csv.lines().next().unwrap(), TRAJECTORY_HEADER);
}

#[test]
fn trajectory_csv_reads_back_exactly() {
    let params = ModelParams::default();
    let traj = simulate(
        &State::initial(&params),
        &params,
        &mut GarchShocks::new(GarchParams::default(), 2),
        500,
    );
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    write_trajectory_csv(&traj, &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let width = TRAJECTORY_HEADER.split(',').count();
    for line in text.lines() {
        assert_eq!(line.split(',').count(), width);
    }
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), traj.len());
    for (row, pt) in rows.iter().zip(&traj.points) {
        let s = pt.state.to_array();
        // sigma_sq, w_f, price, n, l_b, p_lag occupy columns 1..=6.
        for (i, v) in s.iter().enumerate() {
            assert_eq!(row[i + 1].parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
        assert_eq!(row[9].parse::<f64>().unwrap().to_bits(), pt.derived.e_b.to_bits());
    }
}

#[test]
fn simulate_large_bank_oscillates() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ii.csv");
    let code = run(&["simulate", "--config", &preset("scenario_ii"), "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    let prices = column(&fs::read_to_string(&out).unwrap(), "price");
    let tail = &prices[1000..];
    let hi = tail.iter().copied().fold(0.0, f64::max);
    let lo = tail.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(hi / lo > 1.5);
    assert!(out.with_file_name("ii.csv.manifest").exists());
}

#[test]
fn unknown_key_exits_4_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    fs::write(&cfg, "alpha = 0.01\nleverage = 3\n").unwrap();
    let out = dir.path().join("x.csv");
    let code = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_CONFIG);
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn invalid_flag_override_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    assert_eq!(run(&["fixed-point", "--alpha", "-1", "--out", out.to_str().unwrap()]), EXIT_CONFIG);
    assert_eq!(run(&["no-such-command"]), EXIT_CONFIG);
    assert!(!out.exists());
}

#[test]
fn divergence_exits_2_and_marks_output_incomplete() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("blowup.csv");
    let code = run(&[
        "simulate",
        "--b",
        "0.4",
        "--alpha",
        "10000",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_DIVERGED);
    assert!(!out.exists());
    let marked = dir.path().join("blowup.csv.incomplete");
    assert!(marked.exists());
    let manifest = fs::read_to_string(dir.path().join("blowup.csv.incomplete.manifest")).unwrap();
    assert!(manifest.contains("# status = diverged"));
}

#[test]
fn rerunning_a_manifest_reproduces_results() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first.csv");
    assert_eq!(
        run(&["simulate", "--config", &preset("scenario_iv"), "--seed", "11", "--out", first.to_str().unwrap()]),
        EXIT_OK
    );
    let manifest = dir.path().join("first.csv.manifest");
    let second = dir.path().join("second.csv");
    assert_eq!(
        run(&["simulate", "--config", manifest.to_str().unwrap(), "--out", second.to_str().unwrap()]),
        EXIT_OK
    );
    assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());
}

fn csv_with_threads(dir: &Path, cmd: &str, cfg: &str, threads: &str) -> Vec<u8> {
    let out = dir.join(format!("{cmd}-{threads}.csv"));
    let code = run(&[cmd, "--config", cfg, "--threads", threads, "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    fs::read(out).unwrap()
}

#[test]
fn sweeps_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.conf");
    fs::write(
        &cfg,
        "a1 = 0.016\nb1 = 0.874\nr_hat = 0.27\nn_steps = 1000\nburn_in = 200\nn_seeds = 3\nb_points = 5\n",
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();
    let one = csv_with_threads(dir.path(), "policy-sweep", cfg, "1");
    let four = csv_with_threads(dir.path(), "policy-sweep", cfg, "4");
    assert_eq!(one, four);
    let one = csv_with_threads(dir.path(), "bifurcation", cfg, "1");
    let three = csv_with_threads(dir.path(), "bifurcation", cfg, "3");
    assert_eq!(one, three);
}

#[test]
fn macro_policy_sweep_minimum_near_constant_leverage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("macro.csv");
    let code = run(&["policy-sweep", "--config", &preset("policy_macro"), "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    let text = fs::read_to_string(&out).unwrap();
    let mut best = (f64::INFINITY, f64::NAN);
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if let Ok(v) = f[6].parse::<f64>() {
            if v < best.0 {
                best = (v, f[0].parse().unwrap());
            }
        }
    }
    assert!(best.1.abs() <= 0.1, "minimum at b = {}", best.1);
}

#[test]
fn every_subcommand_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let small = dir.path().join("small.conf");
    fs::write(&small, "n_steps = 600\nburn_in = 100\nn_seeds = 2\nb_points = 3\n").unwrap();
    let small = small.to_str().unwrap();
    for cmd in ["fixed-point", "stability", "critical-alpha", "theta-sweep", "poincare", "risk"] {
        let out = dir.path().join(format!("{cmd}.csv"));
        let code = run(&[cmd, "--config", small, "--alpha", "0.005", "--out", out.to_str().unwrap()]);
        assert_eq!(code, EXIT_OK, "{cmd}");
        assert!(out.exists() && out.with_file_name(format!("{cmd}.csv.manifest")).exists());
    }
    let out = dir.path().join("lyapunov.csv");
    assert_eq!(
        run(&["lyapunov", "--config", &preset("scenario_ii"), "--out", out.to_str().unwrap()]),
        EXIT_OK
    );
    let exps = column(&fs::read_to_string(&out).unwrap(), "exponent");
    assert!(exps.iter().all(|e| *e > 0.0));
}
