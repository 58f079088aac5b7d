//! End-to-end runs of the `pilqr` binary.

use std::path::Path;
use std::process::{Command, Output};

use pilqr::problem::{constraint_ise, evaluate_total_cost};
use pilqr::systems::{build, lookup};
use pilqr_cli::bench::BENCH_FILE;
use pilqr_cli::config::OUTPUT_DIR_ENV;
use pilqr_cli::output::{
    read_summary, read_trajectory, ITERATIONS_FILE, SUMMARY_FILE, TRAJECTORY_FILE,
};
use tempfile::TempDir;

fn pilqr(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pilqr"));
    cmd.args(args).env_remove(OUTPUT_DIR_ENV);
    cmd
}

fn write_config(dir: &Path, body: &str) -> String {
    let out = dir.join("out");
    let path = dir.join("run.toml");
    std::fs::write(
        &path,
        format!("output_dir = {:?}\n{body}", out.to_str().unwrap()),
    )
    .unwrap();
    path.to_str().unwrap().to_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process exited normally")
}

#[test]
fn solve_point_mass_writes_consistent_outputs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "problem = \"point_mass_surface\"\n");
    let out = pilqr(&["solve", &cfg]).output().unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let dir = tmp.path().join("out");
    for f in [TRAJECTORY_FILE, ITERATIONS_FILE, SUMMARY_FILE] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
    let summary = read_summary(&dir.join(SUMMARY_FILE)).unwrap();
    assert!(summary.converged && summary.ise < 1e-3);

    // re-evaluate from the written trajectory alone
    let entry = lookup("point_mass_surface").unwrap();
    let inst = build(entry.name, &entry.default_params()).unwrap();
    let traj = read_trajectory(&dir.join(TRAJECTORY_FILE)).unwrap();
    let cost = evaluate_total_cost(&inst.ocp, &traj).unwrap();
    let ise = constraint_ise(&inst.ocp, &traj).unwrap();
    assert!(
        (cost - summary.cost).abs() <= 1e-10 * summary.cost.abs().max(1.0),
        "{cost} vs {}",
        summary.cost
    );
    assert!(
        (ise - summary.ise).abs() <= 1e-10,
        "{ise} vs {}",
        summary.ise
    );
}

#[test]
fn output_directory_follows_the_environment() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "problem = \"double_integrator\"\n");
    let redirected = tmp.path().join("elsewhere");
    let out = pilqr(&["solve", &cfg])
        .env(OUTPUT_DIR_ENV, &redirected)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert!(redirected.join(SUMMARY_FILE).is_file());
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn unconstrained_double_integrator_needs_one_iteration() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "problem = \"double_integrator\"\n");
    assert_eq!(code(&pilqr(&["solve", &cfg]).output().unwrap()), 0);
    let summary = read_summary(&tmp.path().join("out").join(SUMMARY_FILE)).unwrap();
    assert_eq!(summary.iterations, 1);
}

#[test]
fn bad_configs_exit_with_one() {
    let tmp = TempDir::new().unwrap();
    for body in [
        "problem = \"point_mass_surface\"\ndt = 0.0\n",
        "problem = \"no_such_problem\"\n",
        "problem = \"double_integrator\"\nunknown_key = 3\n",
        "problem = \"double_integrator\"\n[solver]\nalpha_decay = 0.5\n",
    ] {
        let cfg = write_config(tmp.path(), body);
        let out = pilqr(&["solve", &cfg]).output().unwrap();
        assert_eq!(code(&out), 1, "{body}");
        assert!(!out.stderr.is_empty());
    }
    let missing = tmp.path().join("missing.toml");
    assert_eq!(
        code(
            &pilqr(&["solve", missing.to_str().unwrap()])
                .output()
                .unwrap()
        ),
        1
    );
}

#[test]
fn non_converging_solve_exits_with_two() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "problem = \"planar_arm\"\n[solver]\nmax_iterations = 2\n",
    );
    assert_eq!(code(&pilqr(&["solve", &cfg]).output().unwrap()), 2);
}

#[test]
fn validate_exit_codes() {
    let ok = pilqr(&["validate", "double_integrator_position"])
        .output()
        .unwrap();
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stdout));
    assert_eq!(
        code(
            &pilqr(&["validate", "double_integrator_euler"])
                .output()
                .unwrap()
        ),
        2
    );
    assert_eq!(
        code(&pilqr(&["validate", "no_such_problem"]).output().unwrap()),
        1
    );
    assert_eq!(code(&pilqr(&["validate", ""]).output().unwrap()), 1);
}

#[test]
fn bench_with_one_step_size_skips_the_fit() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "problem = \"double_integrator\"\nhorizon = 1.0\n[bench]\ndt = [0.02]\n",
    );
    let out = pilqr(&["bench", &cfg, "--repetitions", "2"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("linear fit skipped"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    assert!(tmp.path().join("out").join(BENCH_FILE).is_file());
}

#[test]
fn bench_rows_come_out_in_increasing_horizon() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "problem = \"double_integrator_position\"\nhorizon = 1.0\n[bench]\ndt = [0.01, 0.04, 0.02]\nparallel = true\n",
    );
    let out = pilqr(&["bench", &cfg, "--repetitions", "3"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    let mut reader = csv::Reader::from_path(tmp.path().join("out").join(BENCH_FILE)).unwrap();
    let ns: Vec<usize> = reader
        .records()
        .map(|r| r.unwrap()[0].parse().unwrap())
        .collect();
    assert_eq!(ns, vec![25, 50, 100]);
}
