//! TOML run configuration. Unknown keys are rejected and every tolerance
//! must be positive.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use reeb_chords::chord::{ChordGuess, ShootOptions};
use reeb_chords::contact::SamplerConfig;
use reeb_chords::continuation::{CensusOptions, ContinuationOptions, ProbeOptions};
use reeb_chords::floer::{CutoffProfile, GradientFlowOptions};
use reeb_chords::flow::FlowOptions;
use reeb_chords::systems::{builtin_system, BuiltinName, BuiltinParams};
use reeb_chords::{LambdaChoice, SystemDescriptor};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub continuation: ContinuationOptions,
    #[serde(default)]
    pub probe: ProbeOptions,
    #[serde(default)]
    pub census: CensusSection,
    #[serde(default)]
    pub output: OutputSection,
    pub contact_check: Option<ContactCheckSection>,
    pub find_chord: Option<FindChordSection>,
    #[serde(rename = "continue")]
    pub continue_: Option<ContinueSection>,
    pub gradient_flow: Option<GradientFlowSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub name: BuiltinName,
    pub lambda: Option<LambdaChoice>,
    #[serde(default)]
    pub params: BuiltinParams,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub tol: f64,
    pub max_iter: usize,
    pub tau_floor: f64,
    pub samples: usize,
    pub degeneracy_threshold: f64,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = ShootOptions::default();
        SolverSection {
            tol: s.tol,
            max_iter: s.max_iter,
            tau_floor: s.tau_floor,
            samples: s.samples,
            degeneracy_threshold: s.degeneracy_threshold,
            rtol: s.flow.rtol,
            atol: s.flow.atol,
            max_steps: s.flow.max_steps,
        }
    }
}

impl SolverSection {
    pub fn shoot_options(&self) -> ShootOptions {
        ShootOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            tau_floor: self.tau_floor,
            samples: self.samples,
            degeneracy_threshold: self.degeneracy_threshold,
            flow: FlowOptions { rtol: self.rtol, atol: self.atol, max_steps: self.max_steps },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CensusSection {
    pub enabled: bool,
    #[serde(flatten)]
    pub options: CensusOptions,
}

impl Default for CensusSection {
    fn default() -> Self {
        CensusSection { enabled: false, options: CensusOptions::default() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactCheckSection {
    pub mu: Vec<f64>,
    pub sampler: SamplerConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeededGuess {
    pub mu: f64,
    pub u: Vec<f64>,
    pub tau: f64,
    /// Continuation direction in the family parameter.
    #[serde(default = "plus_one")]
    pub direction: f64,
}

fn plus_one() -> f64 {
    1.0
}

impl SeededGuess {
    pub fn guess(&self) -> ChordGuess {
        ChordGuess::new(&self.u, self.tau)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    pub mu: f64,
    /// Range and count of the first Lagrangian coordinate.
    pub first_lo: f64,
    pub first_hi: f64,
    pub count: usize,
    /// Newton start for the second coordinate (solved from the energy).
    pub second_guess: f64,
    pub t_max: f64,
    #[serde(default = "default_scan_dt")]
    pub dt: f64,
}

fn default_scan_dt() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FindChordSection {
    #[serde(default)]
    pub guesses: Vec<SeededGuess>,
    pub scan: Option<ScanSection>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinueSection {
    #[serde(default)]
    pub seeds: Vec<SeededGuess>,
    #[serde(default = "yes")]
    pub probe_events: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowMode {
    Flow,
    Stretch,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradientFlowSection {
    pub mode: FlowMode,
    pub seed: SeededGuess,
    pub mu1: f64,
    pub profile: Option<CutoffProfile>,
    #[serde(default)]
    pub r_list: Vec<f64>,
    /// Relative perturbation applied to the seed path before a flow.
    #[serde(default)]
    pub perturbation: f64,
    #[serde(default)]
    pub options: GradientFlowOptions,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn positive(name: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!("{name} must be positive, got {v}")))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.solver;
        positive("solver.tol", s.tol)?;
        positive("solver.tau_floor", s.tau_floor)?;
        positive("solver.degeneracy_threshold", s.degeneracy_threshold)?;
        positive("solver.rtol", s.rtol)?;
        positive("solver.atol", s.atol)?;
        let c = &self.continuation;
        positive("continuation.ds_init", c.ds_init)?;
        positive("continuation.ds_min", c.ds_min)?;
        positive("continuation.ds_max", c.ds_max)?;
        positive("continuation.refine_tol", c.refine_tol)?;
        positive("continuation.max_turn", c.max_turn)?;
        if !(c.ds_min <= c.ds_init && c.ds_init <= c.ds_max) {
            return Err(ConfigError::Invalid("continuation needs ds_min <= ds_init <= ds_max".into()));
        }
        positive("probe.delta", self.probe.delta)?;
        positive("probe.tol", self.probe.tol)?;
        let cs = &self.census.options;
        positive("census.delta", cs.delta)?;
        positive("census.radius", cs.radius)?;
        positive("census.distinct", cs.distinct)?;
        if let Some(cc) = &self.contact_check {
            positive("contact_check.sampler.tol", cc.sampler.tol)?;
        }
        if let Some(g) = &self.gradient_flow {
            let o = &g.options;
            positive("gradient_flow.options.tol", o.tol)?;
            positive("gradient_flow.options.ds", o.ds)?;
            positive("gradient_flow.options.polish_tol", o.polish_tol)?;
            positive("gradient_flow.options.sigma_floor", o.sigma_floor)?;
            positive("gradient_flow.options.rho", o.rho)?;
            positive("gradient_flow.options.approach_tol", o.approach_tol)?;
        }
        if let Some(sc) = self.find_chord.as_ref().and_then(|f| f.scan.as_ref()) {
            positive("find_chord.scan.t_max", sc.t_max)?;
            positive("find_chord.scan.dt", sc.dt)?;
        }
        Ok(())
    }

    pub fn system(&self) -> reeb_chords::Result<SystemDescriptor> {
        let sys = builtin_system(self.system.name, &self.system.params)?;
        Ok(match self.system.lambda {
            Some(l) => sys.with_lambda(l),
            None => sys,
        })
    }
}
