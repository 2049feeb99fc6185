use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_boost-imitator"));
    c.env_remove("BOOST_IMITATOR_OUT");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn collect_train_simulate_pipeline() {
    let work = tempfile::tempdir().unwrap();
    let dir = work.path();
    std::fs::write(dir.join("fast.cfg"), "# short training\nmax_epochs = 15\nseed = 3\n").unwrap();

    let o = run(dir, &["collect", "--out", "res"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(dir, &["train", "--config", "fast.cfg", "--out", "res", "--hidden", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(
        dir,
        &["simulate", "--controller", "ann", "--out", "res", "--duration", "0.02"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(dir, &["evaluate", "--config", "fast.cfg", "--out", "res"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(
        dir,
        &["compare", "--out", "res", "--duration", "0.02", "--stride", "10"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let res = dir.join("res");
    for name in [
        "dataset.csv",
        "model.txt",
        "train_report.txt",
        "train_report.kv",
        "confusion.txt",
        "confusion.kv",
        "trace_fig7_ann.csv",
        "metrics_fig7_ann.txt",
        "evaluation.txt",
        "evaluation.kv",
        "comparison_fig9.csv",
        "comparison_fig9.txt",
    ] {
        assert!(res.join(name).is_file(), "missing {name}");
    }
    // nothing is written outside the output directory
    let mut outside: Vec<PathBuf> = files_under(dir).into_iter().filter(|p| !p.starts_with(&res)).collect();
    outside.retain(|p| p.file_name().unwrap() != "fast.cfg");
    assert!(outside.is_empty(), "{outside:?}");

    let trace = std::fs::read_to_string(res.join("trace_fig7_ann.csv")).unwrap();
    assert!(trace.starts_with("t,v_ref,v_c,i_l,u,load_g\n"));
    let report = std::fs::read_to_string(res.join("train_report.kv")).unwrap();
    assert!(report.contains("hidden_dim = 5") && report.contains("test_accuracy = "));
    let cmp = std::fs::read_to_string(res.join("comparison_fig9.csv")).unwrap();
    assert!(cmp.starts_with("t,v_c_pi,i_l_pi,u_pi,v_c_ann,i_l_ann,u_ann\n"));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let work = tempfile::tempdir().unwrap();
    std::fs::write(work.path().join("bad.cfg"), "seed = 1\n\nhidden_size = 4\n").unwrap();
    let o = run(work.path(), &["simulate", "--config", "bad.cfg", "--out", "res"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("hidden_size") && err.contains("bad.cfg:3"), "{err}");
    assert!(!work.path().join("res").exists());
}

#[test]
fn bad_arguments_exit_with_usage_code() {
    let work = tempfile::tempdir().unwrap();
    assert_eq!(run(work.path(), &["launch"]).status.code(), Some(1));
    assert_eq!(
        run(work.path(), &["simulate", "--controller", "lqr"]).status.code(),
        Some(1)
    );
    assert_eq!(
        run(work.path(), &["simulate", "--scenario", "fig10"]).status.code(),
        Some(1)
    );
    assert_eq!(run(work.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn divergence_exits_with_code_two() {
    let work = tempfile::tempdir().unwrap();
    std::fs::write(
        work.path().join("stiff.cfg"),
        "l = 1e-12\nc_f = 1e-12\nduration = 0.01\n",
    )
    .unwrap();
    let o = run(work.path(), &["simulate", "--config", "stiff.cfg", "--out", "res"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    // the partial trace is kept for diagnosis
    assert!(work.path().join("res/trace_fig7_mpc.csv").is_file());
}

#[test]
fn training_failure_exits_with_code_three() {
    let work = tempfile::tempdir().unwrap();
    std::fs::write(work.path().join("tiny.csv"), "t,v_ref,v_c,i_l,u\n0,95,0,0,1\n").unwrap();
    let o = run(work.path(), &["train", "--dataset", "tiny.csv", "--out", "res"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn output_directory_falls_back_to_environment() {
    let work = tempfile::tempdir().unwrap();
    let o = bin()
        .current_dir(work.path())
        .env("BOOST_IMITATOR_OUT", "env_out")
        .args(["simulate", "--duration", "0.001", "--controller", "pi"])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(work.path().join("env_out/trace_fig7_pi.csv").is_file());
}

#[test]
fn simulate_output_is_byte_identical_across_runs() {
    let work = tempfile::tempdir().unwrap();
    let dir = work.path();
    for out in ["a", "b"] {
        let o = run(
            dir,
            &["simulate", "--scenario", "fig8", "--duration", "0.05", "--out", out],
        );
        assert!(o.status.success());
    }
    for f in ["trace_fig8_mpc.csv", "metrics_fig8_mpc.txt"] {
        assert!(std::fs::read(dir.join("a").join(f)).unwrap() == std::fs::read(dir.join("b").join(f)).unwrap());
    }
}
