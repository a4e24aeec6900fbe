//! Subcommands behind the `degtaxis` binary.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};

use crate::audit::{audit_run, render_report, AuditConsts, FunctionalSeries, SeriesRecorder};
use crate::config::{parse_config, RunConfig};
use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::lab::{
    check_elementary, evaluate_bank, fit_constant, sweep_psi_bound, FieldSampler, InequalitySample,
};
use crate::model::InitialData;
use crate::snapshot;
use crate::stepper::{run, uniform_times, Observer, SnapshotWriter};
use crate::weak::run_convergence_study;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_AUDIT: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "degtaxis",
    version,
    about = "Degenerate nutrient-taxis simulator and estimate auditor"
)]
pub struct Cli {
    /// Run configuration (`section.key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; `DGT_OUT` takes precedence.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Cap on concurrent member runs and sample workers.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run one simulation, write the functional series, snapshots and audit report.
    Simulate,
    /// Re-run the audits on a persisted series.
    Audit {
        /// Series CSV (default `<out>/series.csv`).
        #[arg(long)]
        series: Option<PathBuf>,
        /// Constants file (default `<out>/consts.txt`).
        #[arg(long)]
        consts: Option<PathBuf>,
    },
    /// Calibrate and validate the interpolation-inequality constant.
    Lab,
    /// Run the (eps, grid) convergence matrix.
    Converge,
    /// Pretty-print a `.dgt` snapshot.
    SnapshotDump { file: PathBuf },
}

/// Exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. }
        | Error::InvalidGrid(_)
        | Error::GridMismatch(_)
        | Error::InvalidParameter(_)
        | Error::InadmissibleData(_)
        | Error::Precondition(_) => EXIT_CONFIG,
        Error::NonFinite { .. }
        | Error::BoundaryFlux { .. }
        | Error::Nonpositive { .. }
        | Error::PositivityViolation { .. }
        | Error::SolverStagnation { .. }
        | Error::BlowupThreshold { .. }
        | Error::AmbiguousCase(_)
        | Error::Unsatisfiable { .. } => EXIT_NUMERICAL,
        Error::MissingConstant(_)
        | Error::MissingSeries(_)
        | Error::Schema(_)
        | Error::Format(_)
        | Error::Io(_) => EXIT_IO,
    }
}

struct Context {
    cfg: RunConfig,
    out: PathBuf,
    jobs: usize,
}

fn context(cli: &Cli, env_out: Option<PathBuf>) -> Result<Context> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            parse_config(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = env_out
        .or_else(|| cli.out.clone())
        .unwrap_or_else(|| cfg.out.clone());
    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if jobs == 0 {
        return Err(Error::Config {
            line: 0,
            key: "--jobs".into(),
            msg: "must be at least 1".into(),
        });
    }
    Ok(Context { cfg, out, jobs })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn write_series(path: &Path, s: &FunctionalSeries) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    s.write_csv(BufWriter::new(f))
}

fn unix_seconds() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Parses argv and runs the chosen subcommand; returns the exit status.
pub fn main_with(cli: Cli, env_out: Option<PathBuf>) -> i32 {
    let result = match &cli.command {
        Command::SnapshotDump { file } => dump(file),
        _ => context(&cli, env_out).and_then(|ctx| match &cli.command {
            Command::Simulate => simulate(&ctx),
            Command::Audit { series, consts } => {
                offline_audit(&ctx, series.as_deref(), consts.as_deref())
            }
            Command::Lab => lab(&ctx),
            Command::Converge => converge(&ctx),
            Command::SnapshotDump { .. } => unreachable!(),
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dump(file: &Path) -> Result<i32> {
    let (f, t) = snapshot::load(file)?;
    print!("{}", snapshot::pretty(&f, t));
    Ok(EXIT_OK)
}

fn simulate(ctx: &Context) -> Result<i32> {
    let sim = ctx.cfg.simulation()?;
    let init = InitialData::new(
        sim.init_u.build(sim.grid)?,
        sim.init_v.build(sim.grid)?,
        sim.params.l,
    )?;
    for flag in &init.report.flags {
        eprintln!("warning: {flag}");
    }
    fs::create_dir_all(&ctx.out)?;
    let settings = &ctx.cfg.audit;
    let consts = AuditConsts::for_run(&init, &sim.params, sim.t_end, settings);
    write_file(&ctx.out.join("consts.txt"), &consts.render())?;

    let times = uniform_times(sim.t_end, ctx.cfg.samples);
    let mut rec = SeriesRecorder::new(sim.params, &settings.plist, settings.b);
    let mut snaps = SnapshotWriter {
        dir: ctx.out.join("snapshots"),
    };
    if ctx.cfg.snapshots {
        fs::create_dir_all(&snaps.dir)?;
    }
    let started = Instant::now();
    let outcome = {
        let mut obs: Vec<&mut dyn Observer> = vec![&mut rec];
        if ctx.cfg.snapshots {
            obs.push(&mut snaps);
        }
        run(
            &sim.params,
            &init,
            sim.t_end,
            &times,
            &ctx.cfg.control,
            &mut obs,
        )
    };
    write_series(&ctx.out.join("series.csv"), &rec.series)?;

    let mut meta = String::new();
    let _ = writeln!(meta, "unix_time = {}", unix_seconds());
    let _ = writeln!(meta, "elapsed_s = {:.3}", started.elapsed().as_secs_f64());
    let _ = writeln!(meta, "version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(meta, "seed = {}", ctx.cfg.seed);
    for flag in &init.report.flags {
        let _ = writeln!(meta, "admissibility = {flag}");
    }
    let summary = match outcome {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(meta, "status = failed: {e}");
            write_file(&ctx.out.join("meta.txt"), &meta)?;
            return Err(e);
        }
    };
    let _ = writeln!(meta, "steps = {}", summary.steps);
    let _ = writeln!(meta, "min_dt = {}", fmt_f64(summary.min_dt));
    let _ = writeln!(meta, "max_dt = {}", fmt_f64(summary.max_dt));
    write_file(&ctx.out.join("meta.txt"), &meta)?;
    if !ctx.cfg.audit_enabled {
        return Ok(EXIT_OK);
    }
    let verdicts = audit_run(&rec.series, &consts, &settings.plist)?;
    let report = render_report(&verdicts);
    write_file(&ctx.out.join("report.txt"), &report)?;
    print!("{report}");
    Ok(if verdicts.iter().all(|v| v.pass) {
        EXIT_OK
    } else {
        EXIT_AUDIT
    })
}

/// The p-list encoded in the `lp_<p>` columns of a series.
pub fn plist_from_columns(series: &FunctionalSeries) -> Result<Vec<f64>> {
    series
        .columns()
        .iter()
        .filter_map(|c| c.strip_prefix("lp_"))
        .filter(|rest| !rest.contains('_'))
        .map(|p| {
            p.parse::<f64>()
                .map_err(|_| Error::Schema(format!("bad p tag in column lp_{p}")))
        })
        .collect()
}

fn offline_audit(ctx: &Context, series: Option<&Path>, consts: Option<&Path>) -> Result<i32> {
    let series_path = series.map_or_else(|| ctx.out.join("series.csv"), Path::to_path_buf);
    let consts_path = consts.map_or_else(|| ctx.out.join("consts.txt"), Path::to_path_buf);
    let f = fs::File::open(&series_path)
        .map_err(|e| Error::Io(format!("{}: {e}", series_path.display())))?;
    let s = FunctionalSeries::read_csv(BufReader::new(f))?;
    let plist = plist_from_columns(&s)?;
    s.expect_columns(&crate::audit::column_ids(&plist))?;
    let text = fs::read_to_string(&consts_path)
        .map_err(|e| Error::Io(format!("{}: {e}", consts_path.display())))?;
    let c = AuditConsts::parse(&text)?;
    let verdicts = audit_run(&s, &c, &plist)?;
    let report = render_report(&verdicts);
    if let Some(dir) = series_path.parent() {
        write_file(&dir.join("report_offline.txt"), &report)?;
    }
    print!("{report}");
    Ok(if verdicts.iter().all(|v| v.pass) {
        EXIT_OK
    } else {
        EXIT_AUDIT
    })
}

fn sample_rows(csv: &mut String, set: &str, seeds: &[u64], samples: &[InequalitySample]) {
    for (seed, s) in seeds.iter().zip(samples) {
        let _ = writeln!(
            csv,
            "{set},{seed},{},{},{},{},{},{},{},{},{},{}",
            fmt_f64(s.p),
            fmt_f64(s.eta),
            fmt_f64(s.c),
            fmt_f64(s.lhs),
            fmt_f64(s.t1),
            fmt_f64(s.t2),
            fmt_f64(s.t3),
            fmt_f64(s.t4),
            fmt_f64(s.rhs),
            fmt_f64(s.margin)
        );
    }
}

fn lab(ctx: &Context) -> Result<i32> {
    let g = ctx.cfg.grid()?;
    let lc = &ctx.cfg.lab;
    let sampler = FieldSampler::new(ctx.cfg.seed, lc.modes, lc.amplitude, lc.floor)?;
    let base = ctx.cfg.seed;
    let cal: Vec<u64> = (1..=lc.calibration as u64).map(|k| base + k).collect();
    let val: Vec<u64> = (1..=lc.validation as u64)
        .map(|k| base + lc.calibration as u64 + k)
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.jobs)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    fs::create_dir_all(&ctx.out)?;
    let mut csv = String::from("set,seed,p,eta,c,lhs,t1,t2,t3,t4,rhs,margin\n");
    let mut summary = String::new();
    let mut clean = true;
    for (&p, &eta) in lc.p.iter().zip(&lc.eta) {
        let calib = pool.install(|| evaluate_bank(&sampler, &g, &cal, p, eta, 0.0))?;
        let fit = fit_constant(&calib)?;
        let valid = pool.install(|| evaluate_bank(&sampler, &g, &val, p, eta, fit.c_fit))?;
        let violations = valid.iter().filter(|s| s.margin < 0.0).count();
        let worst = valid.iter().map(|s| s.margin).fold(f64::INFINITY, f64::min);
        sample_rows(&mut csv, "calibration", &cal, &calib);
        sample_rows(&mut csv, "validation", &val, &valid);
        let _ = writeln!(summary, "[p={p} eta={eta}]");
        let _ = writeln!(summary, "c_fit = {}", fmt_f64(fit.c_fit));
        let _ = writeln!(summary, "c_fit_seed = {}", cal[fit.argmax]);
        let _ = writeln!(summary, "validation_samples = {}", valid.len());
        let _ = writeln!(summary, "validation_violations = {violations}");
        let _ = writeln!(summary, "validation_min_margin = {}", fmt_f64(worst));
        let _ = writeln!(summary);
        clean &= violations == 0;
    }
    if lc.scalar_samples > 0 {
        let psi = sweep_psi_bound(lc.scalar_samples, base);
        let elem = check_elementary(lc.scalar_samples, base);
        let _ = writeln!(summary, "[scalar]");
        let _ = writeln!(summary, "psi_samples = {}", psi.samples);
        let _ = writeln!(summary, "psi_violations = {}", psi.violations);
        let _ = writeln!(summary, "psi_min_margin = {}", fmt_f64(psi.min_margin));
        let _ = writeln!(summary, "elementary_samples = {}", elem.samples);
        let _ = writeln!(summary, "elementary_violations = {}", elem.violations);
        let _ = writeln!(summary);
        clean &= psi.violations == 0 && elem.violations == 0;
    }
    let _ = writeln!(summary, "status = {}", if clean { "PASS" } else { "FAIL" });
    write_file(&ctx.out.join("lab_samples.csv"), &csv)?;
    write_file(&ctx.out.join("lab_summary.txt"), &summary)?;
    print!("{summary}");
    Ok(if clean { EXIT_OK } else { EXIT_AUDIT })
}

fn converge(ctx: &Context) -> Result<i32> {
    let study = ctx.cfg.study(ctx.jobs)?;
    fs::create_dir_all(&ctx.out)?;
    let rep = run_convergence_study(&study, Some(&ctx.out))?;
    let factor = ctx.cfg.converge.factor;
    let summary = rep.summary(factor);
    write_file(&ctx.out.join("cauchy.csv"), &rep.cauchy_csv())?;
    write_file(&ctx.out.join("residuals.csv"), &rep.residual_csv())?;
    write_file(&ctx.out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(if rep.passed(factor) {
        EXIT_OK
    } else {
        EXIT_AUDIT
    })
}
