use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nphmm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nphmm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn small_run(out: &Path, seed: &str) -> Output {
    nphmm(&[
        "--case",
        "b1_known_nu",
        "--n-blocks",
        "200",
        "--iterations",
        "5",
        "--replicates",
        "1",
        "--seed",
        seed,
        "--out-dir",
        out.to_str().unwrap(),
    ])
}

fn file_names(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    names
}

#[test]
fn small_b1_run_writes_one_trace_and_one_spline() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let res = small_run(&out, "3");
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(
        file_names(&out),
        ["config.txt", "spline_r000.txt", "summary.csv", "trace_r000.csv"]
    );
    let trace = fs::read_to_string(out.join("trace_r000.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(
        lines[0],
        "iter,a_hat,penalized_pll,l2_err_total,l2_err_f1,l2_err_f2,hausdorff"
    );
    assert_eq!(lines.len(), 6);
    for (i, line) in lines[1..].iter().enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 7);
        assert_eq!(cols[0], (i + 1).to_string());
        for c in &cols[1..] {
            assert!(c.parse::<f64>().unwrap().is_finite());
        }
    }
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 6);
    assert_eq!(summary.lines().next().unwrap().split(',').count(), 19);
}

#[test]
fn same_seed_gives_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    assert!(small_run(&a, "11").status.success());
    assert!(small_run(&b, "11").status.success());
    assert!(small_run(&c, "12").status.success());
    for name in ["trace_r000.csv", "summary.csv", "spline_r000.txt"] {
        let fa = fs::read(a.join(name)).unwrap();
        assert_eq!(fa, fs::read(b.join(name)).unwrap(), "{name} differs");
        assert_ne!(fa, fs::read(c.join(name)).unwrap(), "{name} ignores the seed");
    }
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("cfg");
    let cfg = tmp.path().join("exp.cfg");
    fs::write(
        &cfg,
        format!(
            "# small run\ncase=b2_full\nn_blocks=60\nn_a=20\nn_f=20\niterations=4\nreplicates=2\nseed=5\nout_dir={}\n",
            out.display()
        ),
    )
    .unwrap();
    let res = nphmm(&["--config", cfg.to_str().unwrap(), "--iterations", "2"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let written = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(written.contains("case=b2_full\n"));
    assert!(written.contains("iterations=2\n"));
    assert!(written.contains("n_blocks=60\n"));
    for r in ["trace_r000.csv", "trace_r001.csv"] {
        let trace = fs::read_to_string(out.join(r)).unwrap();
        assert_eq!(trace.lines().count(), 3);
        let a_hat: f64 = trace.lines().nth(2).unwrap().split(',').nth(1).unwrap().parse().unwrap();
        assert!(a_hat != 4.0, "bandwidth should be estimated in b2_full");
    }
}

#[test]
fn bad_settings_fail_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("never");
    let res = nphmm(&["--n-blocks", "1", "--out-dir", out.to_str().unwrap()]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("n_blocks"));
    assert!(!out.exists());

    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "colour=blue\n").unwrap();
    let res = nphmm(&["--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert!(!res.status.success());
    assert!(!out.exists());

    let res = nphmm(&["--case", "b3_nothing"]);
    assert!(!res.status.success());
}

#[test]
fn diagnostics_write_mixing_and_tail_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("diag");
    let res = nphmm(&["--diagnostics", "--out-dir", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(file_names(&out), ["mixing.csv", "tail.csv"]);

    let tail = fs::read_to_string(out.join("tail.csv")).unwrap();
    assert_eq!(tail.lines().next().unwrap(), "x,radius,empirical_tail,se,bound,pass");
    assert_eq!(tail.lines().count(), 1 + 4);
    assert!(tail.lines().skip(1).all(|l| l.ends_with(",true")));

    let mixing = fs::read_to_string(out.join("mixing.csv")).unwrap();
    let phi: Vec<(usize, f64)> = mixing
        .lines()
        .skip(1)
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            (c[0].parse().unwrap(), c[1].parse().unwrap())
        })
        .collect();
    assert_eq!(phi.iter().map(|p| p.0).collect::<Vec<_>>(), [1, 2, 4, 8]);
    assert!(phi[3].1 < phi[0].1);
}
