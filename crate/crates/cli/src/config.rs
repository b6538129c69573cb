//! JSON run configuration.

use std::path::{Path, PathBuf};

use dae_transport_core::measures::MixtureSpec;
use dae_transport_core::verify::SuiteConfig;
use dae_transport_core::{FlowSchedule, GaussianMixture, RetrainMode};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    OneShot,
    Composed,
    Continuous,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::OneShot => "one_shot",
            Mode::Composed => "composed",
            Mode::Continuous => "continuous",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauList {
    pub taus: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Uniform {
    pub t_end: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Single {
    pub t: f64,
}

/// `{"taus": [..]}`, `{"t_end": T, "steps": L}` or `{"t": T}`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Schedule {
    Taus(TauList),
    Uniform(Uniform),
    Single(Single),
}

impl Schedule {
    pub fn flow(&self) -> dae_transport_core::Result<FlowSchedule> {
        match self {
            Schedule::Taus(s) => FlowSchedule::new(s.taus.clone()),
            Schedule::Uniform(s) => FlowSchedule::uniform(s.t_end, s.steps),
            Schedule::Single(s) => FlowSchedule::new(vec![s.t]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Panel {
    pub name: String,
    pub mode: Mode,
    pub schedule: Schedule,
    #[serde(default)]
    pub retrain: Option<RetrainMode>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Particles {
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for Particles {
    fn default() -> Self {
        Self { n: 50, seed: 0 }
    }
}

/// Regular start lattice, `per_axis` points per coordinate.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub per_axis: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "all_formats")]
    pub formats: Vec<Format>,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn all_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json, Format::Svg]
}

fn default_midpoint_every() -> f64 {
    0.2
}

impl Default for Outputs {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            formats: all_formats(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Data measure `μ0`; required by `trajectory` and `pushforward`.
    #[serde(default)]
    pub distribution: Option<MixtureSpec>,
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub schedule: Option<Schedule>,
    #[serde(default)]
    pub retrain: Option<RetrainMode>,
    /// Several runs over the same start points; replaces `mode`/`schedule`.
    #[serde(default)]
    pub panels: Vec<Panel>,
    #[serde(default)]
    pub particles: Particles,
    #[serde(default)]
    pub grid: Option<Grid>,
    /// Evaluation times for `pushforward`.
    #[serde(default)]
    pub times: Vec<f64>,
    #[serde(default = "default_midpoint_every")]
    pub midpoint_every: f64,
    #[serde(default)]
    pub verify: SuiteConfig,
    #[serde(default)]
    pub outputs: Outputs,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Command-line overrides: the seed applies to particles and verification.
    pub fn apply_overrides(&mut self, seed: Option<u64>, out: Option<PathBuf>) {
        if let Some(seed) = seed {
            self.particles.seed = seed;
            self.verify.seed = seed;
        }
        if let Some(dir) = out {
            self.outputs.dir = dir;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.particles.n == 0 {
            return bad("particles.n must be >= 1".into());
        }
        if !(self.midpoint_every > 0.0) {
            return bad(format!("midpoint_every must be > 0, got {}", self.midpoint_every));
        }
        if self.verify.mc_samples < 1_000 {
            return bad(format!("verify.mc_samples must be >= 1000, got {}", self.verify.mc_samples));
        }
        if !self.panels.is_empty() && (self.mode.is_some() || self.schedule.is_some()) {
            return bad("give either panels or a top-level mode/schedule, not both".into());
        }
        for p in self.panels.iter() {
            check_mode_schedule(p.mode, &p.schedule).map_err(|m| CliError::Config(format!("panel {:?}: {m}", p.name)))?;
            if p.name.is_empty() || !p.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.') {
                return bad(format!("panel name {:?} must be non-empty [A-Za-z0-9_.-]", p.name));
            }
        }
        if let (Some(mode), Some(schedule)) = (self.mode, &self.schedule) {
            check_mode_schedule(mode, schedule).map_err(CliError::Config)?;
        }
        if let Some(g) = &self.grid {
            if g.lo.len() != g.hi.len() || g.per_axis == 0 {
                return bad("grid needs lo/hi of equal length and per_axis >= 1".into());
            }
        }
        if let Some(t) = self.times.iter().find(|t| !(**t >= 0.0) || !t.is_finite()) {
            return bad(format!("times must be finite and >= 0, got {t}"));
        }
        Ok(())
    }

    pub fn mixture(&self) -> Result<GaussianMixture> {
        let spec = self
            .distribution
            .as_ref()
            .ok_or_else(|| CliError::Config("missing distribution".into()))?;
        let mix = spec.build()?;
        if let Some(g) = &self.grid {
            if g.lo.len() != mix.dim() {
                return Err(CliError::Config(format!(
                    "grid has dimension {}, distribution {}",
                    g.lo.len(),
                    mix.dim()
                )));
            }
        }
        Ok(mix)
    }

    /// Panels to run: the explicit list or one built from `mode`/`schedule`.
    pub fn resolved_panels(&self) -> Result<Vec<Panel>> {
        if !self.panels.is_empty() {
            return Ok(self.panels.clone());
        }
        match (self.mode, &self.schedule) {
            (Some(mode), Some(schedule)) => Ok(vec![Panel {
                name: mode.as_str().to_string(),
                mode,
                schedule: schedule.clone(),
                retrain: self.retrain,
            }]),
            _ => Err(CliError::Config("trajectory needs panels or mode + schedule".into())),
        }
    }

    pub fn wants(&self, format: Format) -> bool {
        self.outputs.formats.contains(&format)
    }
}

fn check_mode_schedule(mode: Mode, schedule: &Schedule) -> std::result::Result<(), String> {
    match (mode, schedule) {
        (Mode::OneShot, Schedule::Single(_)) => Ok(()),
        (Mode::OneShot, _) => Err("one_shot takes a single {\"t\": ..}".into()),
        (Mode::Continuous, Schedule::Uniform(_)) => Ok(()),
        (Mode::Continuous, _) => Err("continuous takes {\"t_end\": .., \"steps\": ..}".into()),
        (Mode::Composed, Schedule::Single(_)) => Err("composed takes taus or t_end/steps".into()),
        (Mode::Composed, _) => Ok(()),
    }
}
