//! Experiment configuration: the TOML schema, per-experiment defaults and
//! the resolved form that is embedded in every output header.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use spde_lab::drift::DriftSpec;
use spde_lab::grid::SpaceTimeGrid;
use spde_lab::ladder::mollify;
use spde_lab::local_time::{Curve, DEFAULT_BINS};
use spde_lab::noise::Direction;
use spde_lab::solver::InitialCondition;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    KernelBand,
    GaussianVariance,
    MalliavinCompare,
    DerivativeFree,
    LadderConvergence,
    Localtime,
    Moments,
    Permanent,
    SimplexBeta,
}

impl Experiment {
    pub const ALL: [Experiment; 9] = [
        Experiment::KernelBand,
        Experiment::GaussianVariance,
        Experiment::MalliavinCompare,
        Experiment::DerivativeFree,
        Experiment::LadderConvergence,
        Experiment::Localtime,
        Experiment::Moments,
        Experiment::Permanent,
        Experiment::SimplexBeta,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Experiment::KernelBand => "kernel-band",
            Experiment::GaussianVariance => "gaussian-variance",
            Experiment::MalliavinCompare => "malliavin-compare",
            Experiment::DerivativeFree => "derivative-free",
            Experiment::LadderConvergence => "ladder-convergence",
            Experiment::Localtime => "localtime",
            Experiment::Moments => "moments",
            Experiment::Permanent => "permanent",
            Experiment::SimplexBeta => "simplex-beta",
        }
    }

    /// Seeds used when neither the config nor the command line sets any.
    fn default_seeds(&self) -> Option<SeedRange> {
        let count = match self {
            Experiment::KernelBand | Experiment::Permanent => return None,
            Experiment::GaussianVariance => 2000,
            Experiment::MalliavinCompare => 200,
            Experiment::DerivativeFree => 500,
            Experiment::LadderConvergence => 400,
            Experiment::Localtime => 50,
            Experiment::Moments => 5000,
            Experiment::SimplexBeta => 1,
        };
        Some(SeedRange {
            start: 0,
            end: count,
        })
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Experiment {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Experiment::ALL.iter().map(|e| e.as_str()).collect();
                CliError::Config(format!(
                    "unknown experiment `{s}`; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

/// Half-open seed range `start..end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedRange {
    pub start: u64,
    pub end: u64,
}

impl SeedRange {
    pub fn seeds(&self) -> Vec<u64> {
        (self.start..self.end).collect()
    }

    pub fn len(&self) -> usize {
        (self.end - self.start) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

impl fmt::Display for SeedRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

impl FromStr for SeedRange {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        let bad = || {
            CliError::Config(format!(
                "seed range `{s}` is not of the form N..M with N < M"
            ))
        };
        let (a, b) = s.split_once("..").ok_or_else(bad)?;
        let start: u64 = a.trim().parse().map_err(|_| bad())?;
        let end: u64 = b.trim().parse().map_err(|_| bad())?;
        if end <= start {
            return Err(bad());
        }
        Ok(SeedRange { start, end })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub t_end: f64,
    pub nt: usize,
    pub nx: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftConfig {
    /// zero, constant, sign, step, comb, smooth-sine, arctan or mollified-sign.
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectionConfig {
    /// bump, constant or cos.
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

/// The file format. Every field except `experiment` is optional and falls
/// back to the experiment's default.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ConfigFile {
    pub experiment: Option<Experiment>,
    pub grid: Option<GridConfig>,
    pub drift: Option<DriftConfig>,
    pub direction: Option<DirectionConfig>,
    pub initial: Option<String>,
    pub seeds: Option<SeedRange>,
    pub seed_list: Option<Vec<u64>>,
    pub probe: Option<[f64; 2]>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub eps: Option<f64>,
    pub paths: Option<usize>,
    pub samples: Option<usize>,
    pub kappas: Option<Vec<usize>>,
    pub schedule: Option<Vec<[usize; 2]>>,
    pub x: Option<f64>,
    pub t: Option<f64>,
    pub curve_amplitude: Option<f64>,
    pub bins: Option<usize>,
    pub bootstrap: Option<usize>,
    pub m: Option<usize>,
    pub m_max: Option<usize>,
    pub beta: Option<f64>,
    pub sigmas: Option<Vec<f64>>,
    pub gaps: Option<usize>,
    pub positions: Option<Vec<f64>>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }
}

/// Values from the command line, which take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub experiment: Option<Experiment>,
    pub seed: Option<u64>,
    pub seeds: Option<SeedRange>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Seeds {
    Range(SeedRange),
    List(Vec<u64>),
}

impl Seeds {
    pub fn to_vec(&self) -> Vec<u64> {
        match self {
            Seeds::Range(r) => r.seeds(),
            Seeds::List(l) => l.clone(),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Seeds::Range(r) => r.to_string(),
            Seeds::List(l) => {
                let s: Vec<String> = l.iter().map(|v| v.to_string()).collect();
                s.join(",")
            }
        }
    }
}

/// Fully resolved configuration. Only keys the experiment reads are set.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct ResolvedConfig {
    pub experiment: Experiment,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Seeds>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappas: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<[usize; 2]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curve_amplitude: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigmas: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gaps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direction: Option<DirectionConfig>,
    #[serde(skip)]
    pub out: PathBuf,
    #[serde(skip)]
    pub threads: Option<usize>,
}

fn grid(t_end: f64, nt: usize, nx: usize) -> GridConfig {
    GridConfig { t_end, nt, nx }
}

fn drift(name: &str) -> DriftConfig {
    DriftConfig {
        name: name.into(),
        amplitude: None,
        scale: None,
        level: None,
        kappa: None,
    }
}

fn bump() -> DirectionConfig {
    DirectionConfig {
        name: "bump".into(),
        center: Some(0.5),
        width: Some(0.15),
        value: None,
    }
}

fn reject(exp: Experiment, key: &str, set: bool) -> Result<(), CliError> {
    if set {
        return Err(CliError::Config(format!(
            "key `{key}` is not used by experiment {exp}"
        )));
    }
    Ok(())
}

pub fn resolve(file: ConfigFile, cli: Overrides) -> Result<ResolvedConfig, CliError> {
    let exp = cli.experiment.or(file.experiment).ok_or_else(|| {
        CliError::Config("no experiment given; use --experiment or the `experiment` key".into())
    })?;
    let mut seeds = match (cli.seeds, cli.seed, file.seeds, file.seed_list.clone()) {
        (Some(r), _, _, _) => Some(Seeds::Range(r)),
        (None, Some(s), _, _) => {
            let n = file
                .seeds
                .map(|r| r.len())
                .or(file.seed_list.as_ref().map(|l| l.len()));
            let n = n.unwrap_or_else(|| exp.default_seeds().map(|r| r.len()).unwrap_or(1)) as u64;
            Some(Seeds::Range(SeedRange {
                start: s,
                end: s + n,
            }))
        }
        (None, None, Some(_), Some(_)) => {
            return Err(CliError::Config(
                "set either `seeds` or `seed-list`, not both".into(),
            ))
        }
        (None, None, Some(r), None) => Some(Seeds::Range(r)),
        (None, None, None, Some(l)) => Some(Seeds::List(l)),
        (None, None, None, None) => exp.default_seeds().map(Seeds::Range),
    };
    if let Some(Seeds::Range(r)) = &seeds {
        if r.is_empty() {
            return Err(CliError::Config(format!("seed range {r} is empty")));
        }
    }
    if let Some(Seeds::List(l)) = &seeds {
        if l.is_empty() {
            return Err(CliError::Config("seed-list is empty".into()));
        }
    }
    if exp.default_seeds().is_none() {
        seeds = None;
    }

    let f = file;
    let uses = |keys: &[&str]| -> Result<(), CliError> {
        let present = [
            ("grid", f.grid.is_some()),
            ("drift", f.drift.is_some()),
            ("direction", f.direction.is_some()),
            ("initial", f.initial.is_some()),
            ("probe", f.probe.is_some()),
            ("eps", f.eps.is_some()),
            ("paths", f.paths.is_some()),
            ("samples", f.samples.is_some()),
            ("kappas", f.kappas.is_some()),
            ("schedule", f.schedule.is_some()),
            ("x", f.x.is_some()),
            ("t", f.t.is_some()),
            ("curve-amplitude", f.curve_amplitude.is_some()),
            ("bins", f.bins.is_some()),
            ("bootstrap", f.bootstrap.is_some()),
            ("m", f.m.is_some()),
            ("m-max", f.m_max.is_some()),
            ("beta", f.beta.is_some()),
            ("sigmas", f.sigmas.is_some()),
            ("gaps", f.gaps.is_some()),
            ("positions", f.positions.is_some()),
            ("seeds", f.seeds.is_some() || f.seed_list.is_some()),
        ];
        for (key, set) in present {
            if key == "seeds" {
                reject(exp, "seeds", set && exp.default_seeds().is_none())?;
            } else if !keys.contains(&key) {
                reject(exp, key, set)?;
            }
        }
        Ok(())
    };

    let mut r = ResolvedConfig {
        experiment: exp,
        seeds,
        probe: None,
        initial: None,
        eps: None,
        paths: None,
        samples: None,
        kappas: None,
        schedule: None,
        x: None,
        t: None,
        curve_amplitude: None,
        bins: None,
        bootstrap: None,
        m: None,
        m_max: None,
        beta: None,
        sigmas: None,
        gaps: None,
        positions: None,
        grid: None,
        drift: None,
        direction: None,
        out: cli
            .out
            .or(f.out.clone())
            .unwrap_or_else(|| PathBuf::from("results")),
        threads: cli.threads.or(f.threads),
    };
    let initial = || Some(f.initial.clone().unwrap_or_else(|| "zero".into()));
    match exp {
        Experiment::KernelBand => {
            uses(&["gaps", "positions"])?;
            r.gaps = Some(f.gaps.unwrap_or(30));
            r.positions = Some(
                f.positions
                    .clone()
                    .unwrap_or_else(|| vec![0.0, 0.25, 0.5, 0.75, 1.0]),
            );
        }
        Experiment::GaussianVariance => {
            uses(&["grid", "probe"])?;
            r.grid = Some(f.grid.unwrap_or(grid(1.0, 512, 64)));
            r.probe = Some(f.probe.unwrap_or([0.5, 0.5]));
        }
        Experiment::MalliavinCompare => {
            uses(&[
                "grid",
                "drift",
                "direction",
                "initial",
                "probe",
                "eps",
                "paths",
            ])?;
            r.grid = Some(f.grid.unwrap_or(grid(1.0, 512, 64)));
            r.drift = Some(f.drift.clone().unwrap_or_else(|| DriftConfig {
                amplitude: Some(1.0),
                scale: Some(0.25),
                ..drift("arctan")
            }));
            r.direction = Some(f.direction.clone().unwrap_or_else(bump));
            r.initial = initial();
            r.probe = Some(f.probe.unwrap_or([0.5, 0.5]));
            r.eps = f.eps;
            r.paths = Some(f.paths.unwrap_or(2000));
        }
        Experiment::DerivativeFree => {
            uses(&["grid", "direction", "initial", "probe", "eps", "kappas"])?;
            r.grid = Some(f.grid.unwrap_or(grid(1.0, 512, 64)));
            r.direction = Some(f.direction.clone().unwrap_or_else(bump));
            r.initial = initial();
            r.probe = Some(f.probe.unwrap_or([0.5, 0.5]));
            r.eps = f.eps;
            r.kappas = Some(f.kappas.clone().unwrap_or_else(|| vec![1, 10, 100]));
        }
        Experiment::LadderConvergence => {
            uses(&["grid", "drift", "initial", "probe", "schedule"])?;
            r.grid = Some(f.grid.unwrap_or(grid(1.0, 256, 32)));
            r.drift = Some(f.drift.clone().unwrap_or_else(|| drift("step")));
            r.initial = initial();
            r.probe = Some(f.probe.unwrap_or([1.0, 0.5]));
            r.schedule = Some(
                f.schedule
                    .clone()
                    .unwrap_or_else(|| vec![[2, 4], [4, 16], [8, 64], [16, 256]]),
            );
        }
        Experiment::Localtime => {
            uses(&["grid", "x", "t", "curve-amplitude", "bins"])?;
            r.grid = Some(f.grid.unwrap_or(grid(1.0, 8192, 64)));
            r.x = Some(f.x.unwrap_or(0.5));
            r.t = Some(f.t.unwrap_or(1.0));
            r.curve_amplitude = Some(f.curve_amplitude.unwrap_or(0.0));
            r.bins = Some(f.bins.unwrap_or(DEFAULT_BINS));
        }
        Experiment::Moments => {
            uses(&[
                "grid",
                "x",
                "t",
                "curve-amplitude",
                "bins",
                "bootstrap",
                "m-max",
            ])?;
            r.grid = Some(f.grid.unwrap_or(grid(1.0, 8192, 64)));
            r.x = Some(f.x.unwrap_or(0.5));
            r.t = Some(f.t.unwrap_or(1.0));
            r.curve_amplitude = Some(f.curve_amplitude.unwrap_or(0.0));
            r.bins = Some(f.bins.unwrap_or(DEFAULT_BINS));
            r.bootstrap = Some(f.bootstrap.unwrap_or(1000));
            r.m_max = Some(f.m_max.unwrap_or(4));
        }
        Experiment::Permanent => {
            uses(&["m", "sigmas"])?;
            let m = f.m.or(f.sigmas.as_ref().map(|s| s.len())).unwrap_or(2);
            let sigmas = f.sigmas.clone().unwrap_or_else(|| vec![1.0; m]);
            if sigmas.len() != m {
                return Err(CliError::Config(format!(
                    "`sigmas` has {} entries but m = {m}",
                    sigmas.len()
                )));
            }
            r.m = Some(m);
            r.sigmas = Some(sigmas);
        }
        Experiment::SimplexBeta => {
            uses(&["m-max", "beta", "t", "samples"])?;
            r.m_max = Some(f.m_max.unwrap_or(8));
            r.beta = Some(f.beta.unwrap_or(0.75));
            r.t = Some(f.t.unwrap_or(1.0));
            r.samples = Some(f.samples.unwrap_or(200_000));
        }
    }
    r.validate()?;
    Ok(r)
}

impl ResolvedConfig {
    fn validate(&self) -> Result<(), CliError> {
        if let Some(g) = self.grid {
            SpaceTimeGrid::new(g.t_end, g.nt, g.nx)
                .map_err(|e| CliError::Config(format!("grid: {e}")))?;
        }
        if let Some(d) = &self.drift {
            self.drift_spec_of(d)?;
        }
        if let Some(d) = &self.direction {
            direction_of(d, 1.0)?;
        }
        if let Some(i) = &self.initial {
            initial_of(i)?;
        }
        if self
            .kappas
            .as_ref()
            .is_some_and(|k| k.is_empty() || k.contains(&0))
        {
            return Err(CliError::Config(
                "kappas must be a non-empty list of positive integers".into(),
            ));
        }
        if self.schedule.as_ref().is_some_and(|s| s.is_empty()) {
            return Err(CliError::Config("schedule must not be empty".into()));
        }
        if let Some(0) = self.threads {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> SpaceTimeGrid {
        let g = self.grid.expect("experiment has a grid");
        SpaceTimeGrid::new(g.t_end, g.nt, g.nx).expect("validated grid")
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.seeds.as_ref().map(|s| s.to_vec()).unwrap_or_default()
    }

    pub fn probe(&self) -> (f64, f64) {
        let p = self.probe.expect("experiment has a probe");
        (p[0], p[1])
    }

    pub fn drift_spec(&self) -> DriftSpec {
        self.drift_spec_of(self.drift.as_ref().expect("experiment has a drift"))
            .expect("validated drift")
    }

    fn drift_spec_of(&self, d: &DriftConfig) -> Result<DriftSpec, CliError> {
        let need = |v: Option<f64>, key: &str| {
            v.ok_or_else(|| CliError::Config(format!("drift `{}` needs `{key}`", d.name)))
        };
        let spec = match d.name.as_str() {
            "zero" => DriftSpec::zero(),
            "constant" => DriftSpec::constant(need(d.amplitude, "amplitude")?),
            "sign" => DriftSpec::sign(),
            "step" => DriftSpec::step(),
            "comb" => DriftSpec::comb(d.level.unwrap_or(1))
                .map_err(|e| CliError::Config(format!("drift: {e}")))?,
            "smooth-sine" => DriftSpec::smooth_sine(need(d.amplitude, "amplitude")?),
            "arctan" => DriftSpec::arctan(need(d.amplitude, "amplitude")?, need(d.scale, "scale")?),
            "mollified-sign" => {
                let k = d.kappa.ok_or_else(|| {
                    CliError::Config("drift `mollified-sign` needs `kappa`".into())
                })?;
                mollify(&DriftSpec::sign(), k)
                    .map_err(|e| CliError::Config(format!("drift: {e}")))?
                    .to_spec()
            }
            other => return Err(CliError::Config(format!("unknown drift `{other}`"))),
        };
        Ok(spec)
    }

    pub fn direction(&self) -> Direction {
        let t_end = self.grid.map(|g| g.t_end).unwrap_or(1.0);
        direction_of(
            self.direction.as_ref().expect("experiment has a direction"),
            t_end,
        )
        .expect("validated direction")
    }

    pub fn initial_condition(&self) -> InitialCondition {
        initial_of(self.initial.as_deref().unwrap_or("zero")).expect("validated initial condition")
    }

    pub fn curve(&self) -> Curve {
        match self.curve_amplitude {
            Some(a) if a != 0.0 => Curve::sine(a),
            _ => Curve::zero(),
        }
    }

    /// The resolved configuration as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the resolved TOML, in hex.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn direction_of(d: &DirectionConfig, t_end: f64) -> Result<Direction, CliError> {
    match d.name.as_str() {
        "bump" => {
            let width = d.width.unwrap_or(0.15);
            if !(width > 0.0) {
                return Err(CliError::Config(format!(
                    "direction width must be positive, got {width}"
                )));
            }
            Ok(Direction::unit_bump(d.center.unwrap_or(0.5), width, t_end))
        }
        "constant" => Ok(Direction::constant(d.value.unwrap_or(1.0), t_end)),
        "cos" => Ok(Direction::with_norm("cos", (t_end / 2.0).sqrt(), |_, x| {
            (std::f64::consts::PI * x).cos()
        })),
        other => Err(CliError::Config(format!("unknown direction `{other}`"))),
    }
}

fn initial_of(name: &str) -> Result<InitialCondition, CliError> {
    match name {
        "zero" => Ok(InitialCondition::zero()),
        "cos-pi" => Ok(InitialCondition::cos_pi()),
        other => Err(CliError::Config(format!(
            "unknown initial condition `{other}`; use zero or cos-pi"
        ))),
    }
}
