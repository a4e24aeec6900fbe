use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn degtaxis(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_degtaxis"))
        .args(args)
        .env_remove("DGT_OUT")
        .output()
        .expect("binary runs")
}

fn run_in(cfg: &Path, out: &Path, sub: &str) -> Output {
    degtaxis(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        sub,
    ])
}

fn write_cfg(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.cfg");
    fs::write(&p, text).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn smoke_is_deterministic_and_audits_offline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("smoke.cfg");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let o = run_in(&cfg, d, "simulate");
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for f in [
        "series.csv",
        "report.txt",
        "consts.txt",
        "snapshots/u_000000.dgt",
        "snapshots/v_000020.dgt",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
    let report = fs::read_to_string(a.join("report.txt")).unwrap();
    assert!(!report.contains("FAIL"));
    assert!(report.contains("overall = PASS"));
    assert!(fs::read_to_string(a.join("meta.txt"))
        .unwrap()
        .contains("unix_time"));

    let o = degtaxis(&["--out", a.to_str().unwrap(), "audit"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o), report);
    assert_eq!(
        fs::read_to_string(a.join("report_offline.txt")).unwrap(),
        report
    );

    let o = degtaxis(&[
        "snapshot-dump",
        a.join("snapshots/u_000000.dgt").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("16"));
}

#[test]
fn dgt_out_overrides_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let env_dir = tmp.path().join("env");
    let o = Command::new(env!("CARGO_BIN_EXE_degtaxis"))
        .args(["--config", configs().join("smoke.cfg").to_str().unwrap()])
        .args([
            "--out",
            tmp.path().join("flag").to_str().unwrap(),
            "simulate",
        ])
        .env("DGT_OUT", &env_dir)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(env_dir.join("series.csv").exists());
    assert!(!tmp.path().join("flag").exists());
}

#[test]
fn truncated_series_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    assert_eq!(
        run_in(&configs().join("smoke.cfg"), &out, "simulate")
            .status
            .code(),
        Some(0)
    );
    let csv = fs::read_to_string(out.join("series.csv")).unwrap();
    fs::write(out.join("series.csv"), &csv[..csv.len() - 60]).unwrap();
    let o = degtaxis(&["--out", out.to_str().unwrap(), "audit"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn schema_drift_lists_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    assert_eq!(
        run_in(&configs().join("smoke.cfg"), &out, "simulate")
            .status
            .code(),
        Some(0)
    );
    let csv = fs::read_to_string(out.join("series.csv")).unwrap();
    fs::write(out.join("series.csv"), csv.replacen("grad4", "grad5", 1)).unwrap();
    let o = degtaxis(&["--out", out.to_str().unwrap(), "audit"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("grad4"), "{}", stderr(&o));
}

#[test]
fn hand_built_mass_violation_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    assert_eq!(
        run_in(&configs().join("smoke.cfg"), &out, "simulate")
            .status
            .code(),
        Some(0)
    );
    let csv = fs::read_to_string(out.join("series.csv")).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    let mass_col = header.split(',').position(|c| c == "mass").unwrap();
    let rows: Vec<String> = lines
        .take(2)
        .enumerate()
        .map(|(k, row)| {
            let mut cells: Vec<String> = row.split(',').map(String::from).collect();
            if k == 1 {
                cells[mass_col] = "5.0".into();
            }
            cells.join(",")
        })
        .collect();
    fs::write(
        out.join("series.csv"),
        format!("{header}\n{}\n{}\n", rows[0], rows[1]),
    )
    .unwrap();
    let o = degtaxis(&["--out", out.to_str().unwrap(), "audit"]);
    assert_eq!(o.status.code(), Some(3));
    let report = stdout(&o);
    let mass_block = report.split("[static.mass]").nth(1).unwrap();
    assert!(
        mass_block
            .split("\n\n")
            .next()
            .unwrap()
            .contains("status = FAIL"),
        "{report}"
    );
}

#[test]
fn blowup_threshold_halts() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("bump.cfg"))
        .unwrap()
        .replace("grid.nx = 64", "grid.nx = 16")
        .replace("grid.ny = 64", "grid.ny = 16")
        + "stepper.blowup_threshold = 1\n";
    let cfg = write_cfg(tmp.path(), &text);
    let o = run_in(&cfg, &tmp.path().join("r"), "simulate");
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("positivity/threshold"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn bump_reference_mass_verdict() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("bump.cfg"))
        .unwrap()
        .replace("grid.nx = 64", "grid.nx = 32")
        .replace("grid.ny = 64", "grid.ny = 32")
        .replace("time.T = 2", "time.T = 0.5")
        .replace("time.samples = 100", "time.samples = 40");
    let cfg = write_cfg(tmp.path(), &text);
    let out = tmp.path().join("r");
    let o = run_in(&cfg, &out, "simulate");
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    let block = report.split("[static.mass]").nth(1).unwrap();
    assert!(block
        .split("\n\n")
        .next()
        .unwrap()
        .contains("status = PASS"));
}

#[test]
fn config_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let base = fs::read_to_string(configs().join("smoke.cfg")).unwrap();
    let cfg = write_cfg(tmp.path(), &format!("{base}model.ll = 2\n"));
    let o = run_in(&cfg, &tmp.path().join("r"), "simulate");
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 11"), "{}", stderr(&o));

    let cfg = write_cfg(tmp.path(), &base.replace("model.l = 2", "model.l = 0.5"));
    let o = run_in(&cfg, &tmp.path().join("r"), "simulate");
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("l must be ≥ 1"));
}

#[test]
fn lab_constant_sampler_and_bad_p() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "grid.nx = 16\ngrid.ny = 16\nlab.p = 1\nlab.eta = 0.125\nlab.calibration = 100\n\
                lab.validation = 100\nlab.amplitude = 0\nlab.modes = 2\nlab.scalar_samples = 1000\n";
    let cfg = write_cfg(tmp.path(), text);
    let out = tmp.path().join("lab");
    let o = run_in(&cfg, &out, "lab");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary = fs::read_to_string(out.join("lab_summary.txt")).unwrap();
    assert!(
        summary.contains("c_fit = 0.0000000000000000e0"),
        "{summary}"
    );
    assert!(summary.contains("validation_violations = 0"));
    let csv = fs::read_to_string(out.join("lab_samples.csv")).unwrap();
    assert!(csv.starts_with("set,seed,p,eta,c,lhs,t1,t2,t3,t4,rhs,margin\n"));
    assert_eq!(csv.lines().count(), 201);

    let cfg = write_cfg(tmp.path(), &text.replace("lab.p = 1", "lab.p = 0.5"));
    assert_eq!(run_in(&cfg, &out, "lab").status.code(), Some(1));
}

#[test]
fn lab_seed_flag_shifts_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "grid.nx = 16\ngrid.ny = 16\nlab.calibration = 100\nlab.validation = 100\n\
                lab.modes = 2\nlab.scalar_samples = 0\n";
    let cfg = write_cfg(tmp.path(), text);
    let out = tmp.path().join("lab");
    degtaxis(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "1000",
        "lab",
    ]);
    let csv = fs::read_to_string(out.join("lab_samples.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("calibration,1001,"));
}

#[test]
fn converge_homogeneous_and_rejections() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "model.l = 2\nmodel.eps_list = 0.1, 0.01, 0.001\nconverge.grid_list = 8, 16, 32\n\
                stepper.dt_max = 1e-3\ninit.u = constant(0.5)\ninit.v = constant(1)\ntime.T = 0.1\ntime.samples = 50\n";
    let cfg = write_cfg(tmp.path(), text);
    let out = tmp.path().join("conv");
    let o = degtaxis(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--jobs",
        "2",
        "converge",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    for f in [
        "cauchy.csv",
        "residuals.csv",
        "summary.txt",
        "eps2_grid1/series.csv",
        "eps0_grid2/u_final.dgt",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }

    let cfg = write_cfg(tmp.path(), &text.replace("0.1, 0.01, 0.001", "0.01"));
    assert_eq!(run_in(&cfg, &out, "converge").status.code(), Some(1));
}
