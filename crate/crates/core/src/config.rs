//! Line-oriented `section.key = value` run configuration.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::audit::AuditSettings;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::model::{InitSpec, ModelParams, TaxisScheme};
use crate::stepper::StepControl;

#[derive(Clone, Debug, PartialEq)]
pub struct LabConfig {
    pub p: Vec<f64>,
    pub eta: Vec<f64>,
    pub calibration: usize,
    pub validation: usize,
    pub modes: usize,
    pub amplitude: f64,
    pub floor: f64,
    pub scalar_samples: usize,
}

impl Default for LabConfig {
    fn default() -> Self {
        Self {
            p: vec![1.0],
            eta: vec![0.125],
            calibration: 500,
            validation: 500,
            modes: 4,
            amplitude: 1.0,
            floor: 0.1,
            scalar_samples: 100_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergeConfig {
    pub grid_list: Vec<usize>,
    pub tau: Option<f64>,
    pub bank_size: usize,
    pub factor: f64,
}

impl Default for ConvergeConfig {
    fn default() -> Self {
        Self {
            grid_list: Vec::new(),
            tau: None,
            bank_size: 5,
            factor: 2.0,
        }
    }
}

/// Fully validated configuration. Keys a subcommand needs but the file
/// omits are reported by the accessor for that subcommand.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub lx: f64,
    pub ly: f64,
    pub l: Option<f64>,
    pub eps: Option<f64>,
    pub eps_list: Option<Vec<f64>>,
    pub taxis: TaxisScheme,
    pub init_u: Option<InitSpec>,
    pub init_v: Option<InitSpec>,
    pub t_end: Option<f64>,
    pub samples: usize,
    pub control: StepControl,
    pub audit_enabled: bool,
    pub audit: AuditSettings,
    pub out: PathBuf,
    pub snapshots: bool,
    pub seed: u64,
    pub lab: LabConfig,
    pub converge: ConvergeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            nx: None,
            ny: None,
            lx: 1.0,
            ly: 1.0,
            l: None,
            eps: None,
            eps_list: None,
            taxis: TaxisScheme::Hybrid,
            init_u: None,
            init_v: None,
            t_end: None,
            samples: 100,
            control: StepControl::default(),
            audit_enabled: true,
            audit: AuditSettings::default(),
            out: PathBuf::from("runs/default"),
            snapshots: true,
            seed: 0,
            lab: LabConfig::default(),
            converge: ConvergeConfig::default(),
        }
    }
}

/// Everything a single simulation needs.
#[derive(Clone, Debug, PartialEq)]
pub struct Simulation {
    pub grid: GridSpec,
    pub params: ModelParams,
    pub init_u: InitSpec,
    pub init_v: InitSpec,
    pub t_end: f64,
}

fn missing(key: &str) -> Error {
    Error::Config {
        line: 0,
        key: key.into(),
        msg: "missing required key".into(),
    }
}

impl RunConfig {
    pub fn grid(&self) -> Result<GridSpec> {
        let nx = self.nx.ok_or_else(|| missing("grid.nx"))?;
        let ny = self.ny.ok_or_else(|| missing("grid.ny"))?;
        GridSpec::new(nx, ny, self.lx, self.ly)
    }

    fn common(&self) -> Result<(f64, InitSpec, InitSpec, f64)> {
        Ok((
            self.l.ok_or_else(|| missing("model.l"))?,
            self.init_u.clone().ok_or_else(|| missing("init.u"))?,
            self.init_v.clone().ok_or_else(|| missing("init.v"))?,
            self.t_end.ok_or_else(|| missing("time.T"))?,
        ))
    }

    pub fn simulation(&self) -> Result<Simulation> {
        let (l, init_u, init_v, t_end) = self.common()?;
        let eps = self.eps.ok_or_else(|| missing("model.eps"))?;
        Ok(Simulation {
            grid: self.grid()?,
            params: ModelParams::new(l, eps)?.with_taxis(self.taxis),
            init_u,
            init_v,
            t_end,
        })
    }

    pub fn study(&self, jobs: usize) -> Result<crate::weak::StudyConfig> {
        let (l, init_u, init_v, t_end) = self.common()?;
        let eps_list = self
            .eps_list
            .clone()
            .ok_or_else(|| missing("model.eps_list"))?;
        if self.converge.grid_list.is_empty() {
            return Err(missing("converge.grid_list"));
        }
        Ok(crate::weak::StudyConfig {
            lx: self.lx,
            ly: self.ly,
            l,
            taxis: self.taxis,
            init_u,
            init_v,
            t_end,
            eps_list,
            grid_list: self.converge.grid_list.clone(),
            samples: self.samples,
            tau: self.converge.tau,
            band: self.audit.band,
            bank_size: self.converge.bank_size,
            bank_seed: self.seed,
            plist: self.audit.plist.clone(),
            b: self.audit.b,
            control: self.control,
            jobs,
        })
    }
}

struct Entry<'a> {
    line: usize,
    key: &'a str,
    value: &'a str,
}

impl Entry<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Config {
            line: self.line,
            key: self.key.to_string(),
            msg: msg.into(),
        }
    }

    fn real(&self) -> Result<f64> {
        self.value
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| self.err(format!("expected a finite number, got `{}`", self.value)))
    }

    fn positive(&self) -> Result<f64> {
        let x = self.real()?;
        if x > 0.0 {
            Ok(x)
        } else {
            Err(self.err(format!("must be > 0, got {x}")))
        }
    }

    fn count(&self) -> Result<usize> {
        self.value.parse::<usize>().map_err(|_| {
            self.err(format!(
                "expected a nonnegative integer, got `{}`",
                self.value
            ))
        })
    }

    fn flag(&self) -> Result<bool> {
        match self.value {
            "true" => Ok(true),
            "false" => Ok(false),
            v => Err(self.err(format!("expected true or false, got `{v}`"))),
        }
    }

    fn reals(&self) -> Result<Vec<f64>> {
        self.value
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| {
                        self.err(format!("expected a list of numbers, got `{}`", self.value))
                    })
            })
            .collect()
    }

    fn counts(&self) -> Result<Vec<usize>> {
        self.value
            .split(',')
            .map(|s| {
                s.trim().parse::<usize>().map_err(|_| {
                    self.err(format!("expected a list of integers, got `{}`", self.value))
                })
            })
            .collect()
    }

    fn init(&self) -> Result<InitSpec> {
        let spec: InitSpec = self.value.parse().map_err(|e: String| self.err(e))?;
        if let InitSpec::File(p) = &spec {
            if !p.exists() {
                return Err(self.err(format!("file `{}` does not exist", p.display())));
            }
        }
        Ok(spec)
    }
}

fn check_eps(e: &Entry, x: f64) -> Result<f64> {
    if x > 0.0 && x <= 1.0 {
        Ok(x)
    } else {
        Err(e.err(format!("eps must lie in (0, 1], got {x}")))
    }
}

/// Parses and validates a configuration. `#` starts a comment; every
/// non-blank line must be `key = value` with a known dotted key.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut c = RunConfig::default();
    let mut seen = BTreeMap::<String, usize>::new();
    let mut lab_lines = (0, 0);
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or_else(|| Error::Config {
            line,
            key: body.to_string(),
            msg: "expected `key = value`".into(),
        })?;
        let e = Entry {
            line,
            key: key.trim(),
            value: value.trim(),
        };
        if let Some(first) = seen.insert(e.key.to_string(), line) {
            return Err(e.err(format!("duplicate key (first set on line {first})")));
        }
        match e.key {
            "grid.nx" => c.nx = Some(e.count()?),
            "grid.ny" => c.ny = Some(e.count()?),
            "grid.lx" => c.lx = e.positive()?,
            "grid.ly" => c.ly = e.positive()?,
            "model.l" => {
                let l = e.real()?;
                if !(l >= 1.0) {
                    return Err(e.err(format!("l must be ≥ 1, got {l}")));
                }
                c.l = Some(l);
            }
            "model.eps" => c.eps = Some(check_eps(&e, e.real()?)?),
            "model.eps_list" => {
                let v = e.reals()?;
                for x in &v {
                    check_eps(&e, *x)?;
                }
                c.eps_list = Some(v);
            }
            "model.taxis" => c.taxis = e.value.parse().map_err(|m: String| e.err(m))?,
            "init.u" => c.init_u = Some(e.init()?),
            "init.v" => c.init_v = Some(e.init()?),
            "time.T" => c.t_end = Some(e.positive()?),
            "time.samples" => {
                c.samples = e.count()?;
                if c.samples == 0 {
                    return Err(e.err("need at least one sample"));
                }
            }
            "stepper.cfl" => c.control.cfl = e.positive()?,
            "stepper.dt_min" => c.control.dt_min = e.positive()?,
            "stepper.dt_max" => c.control.dt_max = e.positive()?,
            "stepper.dt" => c.control = StepControl::fixed(e.positive()?),
            "stepper.blowup_threshold" => c.control.blowup_threshold = e.positive()?,
            "stepper.cg_tol" => c.control.cg_tol = e.positive()?,
            "audit.enabled" => c.audit_enabled = e.flag()?,
            "audit.b" => c.audit.b = e.positive()?,
            "audit.c_aux" => {
                c.audit.c_aux = e.real()?;
                if c.audit.c_aux < 0.0 {
                    return Err(e.err("c_aux must be ≥ 0"));
                }
            }
            "audit.c_slack" => c.audit.c_slack = e.positive()?,
            "audit.rel_tol" => c.audit.rel_tol = e.positive()?,
            "audit.band" => c.audit.band = e.positive()?,
            "audit.plist" => {
                let v = e.reals()?;
                if v.iter().any(|p| *p < 1.0) {
                    return Err(e.err("every p must be ≥ 1"));
                }
                c.audit.plist = v;
            }
            "output.dir" => c.out = PathBuf::from(e.value),
            "output.snapshots" => c.snapshots = e.flag()?,
            "seed" => {
                c.seed = e.value.parse().map_err(|_| {
                    e.err(format!("expected an unsigned integer, got `{}`", e.value))
                })?
            }
            "lab.p" => {
                let v = e.reals()?;
                if let Some(p) = v.iter().find(|p| **p < 1.0) {
                    return Err(e.err(format!("p must be ≥ 1, got {p}")));
                }
                c.lab.p = v;
                lab_lines.0 = line;
            }
            "lab.eta" => {
                let v = e.reals()?;
                if v.iter().any(|x| *x <= 0.0) {
                    return Err(e.err("eta must be > 0"));
                }
                c.lab.eta = v;
                lab_lines.1 = line;
            }
            "lab.calibration" | "lab.validation" => {
                let k = e.count()?;
                if k < 100 {
                    return Err(e.err(format!("insufficient samples: need at least 100, got {k}")));
                }
                if e.key == "lab.calibration" {
                    c.lab.calibration = k;
                } else {
                    c.lab.validation = k;
                }
            }
            "lab.modes" => c.lab.modes = e.count()?,
            "lab.amplitude" => {
                c.lab.amplitude = e.real()?;
                if c.lab.amplitude < 0.0 {
                    return Err(e.err("amplitude must be ≥ 0"));
                }
            }
            "lab.floor" => c.lab.floor = e.positive()?,
            "lab.scalar_samples" => c.lab.scalar_samples = e.count()?,
            "converge.grid_list" => c.converge.grid_list = e.counts()?,
            "converge.tau" => c.converge.tau = Some(e.real()?),
            "converge.bank_size" => c.converge.bank_size = e.count()?,
            "converge.factor" => c.converge.factor = e.positive()?,
            _ => return Err(e.err("unknown key")),
        }
    }
    if c.lab.p.len() != c.lab.eta.len() {
        return Err(Error::Config {
            line: lab_lines.0.max(lab_lines.1),
            key: "lab.eta".into(),
            msg: format!(
                "{} values of p but {} of eta",
                c.lab.p.len(),
                c.lab.eta.len()
            ),
        });
    }
    c.control.validate().map_err(|err| Error::Config {
        line: 0,
        key: "stepper".into(),
        msg: err.to_string(),
    })?;
    if let (Some(nx), Some(ny)) = (c.nx, c.ny) {
        GridSpec::new(nx, ny, c.lx, c.ly).map_err(|err| Error::Config {
            line: seen["grid.nx"],
            key: "grid.nx".into(),
            msg: err.to_string(),
        })?;
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "grid.nx = 64\ngrid.ny = 64\nmodel.l = 2\nmodel.eps = 0.01\n\
                           init.u = constant(1)\ninit.v = constant(1)\ntime.T = 1\n";

    #[test]
    fn minimal_config_accepted() {
        let c = parse_config(MINIMAL).unwrap();
        let s = c.simulation().unwrap();
        assert_eq!(s.grid, GridSpec::unit_square(64).unwrap());
        assert_eq!(s.params.l, 2.0);
        assert_eq!(s.init_u, InitSpec::Constant(1.0));
        assert_eq!(s.t_end, 1.0);
    }

    #[test]
    fn small_l_rejected() {
        let err = parse_config(&MINIMAL.replace("model.l = 2", "model.l = 0.5")).unwrap_err();
        assert!(err.to_string().contains("l must be ≥ 1"), "{err}");
        assert!(matches!(err, Error::Config { line: 3, .. }));
    }

    #[test]
    fn unknown_key_reports_line() {
        let text = format!("{MINIMAL}# comment\n\nmodel.ll = 2\n");
        match parse_config(&text).unwrap_err() {
            Error::Config { line, key, .. } => {
                assert_eq!(line, 10);
                assert_eq!(key, "model.ll");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn type_and_range_errors() {
        assert!(matches!(
            parse_config("grid.nx = many\n"),
            Err(Error::Config { line: 1, .. })
        ));
        assert!(parse_config("model.eps = 2\n").is_err());
        assert!(parse_config("lab.p = 0.5\n")
            .unwrap_err()
            .to_string()
            .contains("p must be ≥ 1"));
        assert!(parse_config("lab.calibration = 50\n").is_err());
        assert!(parse_config("init.u = file(/no/such/file.dgt)\n").is_err());
        assert!(parse_config("grid.nx = 1\ngrid.nx = 2\n")
            .unwrap_err()
            .to_string()
            .contains("duplicate"));
        assert!(parse_config("lab.p = 1, 2\n").is_err());
    }

    #[test]
    fn missing_required_key_named() {
        let c = parse_config("grid.nx = 8\ngrid.ny = 8\n").unwrap();
        let err = c.simulation().unwrap_err();
        assert!(err.to_string().contains("model.l"), "{err}");
    }

    #[test]
    fn lists_and_knobs() {
        let c = parse_config(
            "model.eps_list = 0.1, 0.01, 0.001\nconverge.grid_list = 16,32,64\naudit.plist = 2, 4\n\
             stepper.dt = 1e-3\nlab.p = 1, 2\nlab.eta = 0.125, 1\nseed = 7\n",
        )
        .unwrap();
        assert_eq!(c.eps_list, Some(vec![0.1, 0.01, 0.001]));
        assert_eq!(c.converge.grid_list, vec![16, 32, 64]);
        assert_eq!(c.audit.plist, vec![2.0, 4.0]);
        assert_eq!(c.control.dt_min, 1e-3);
        assert_eq!(c.lab.eta, vec![0.125, 1.0]);
        assert_eq!(c.seed, 7);
    }
}
