//! Experiment configuration. Every physical quantity carries its SI unit in
//! the key name.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use smtjsim::analog::{BoardDefaults, PipelineConfig, Polarity};
use smtjsim::anneal::IsingProblem;
use smtjsim::device::{ReducedParams, SmtjParams};
use smtjsim::presets;
use smtjsim::simnet::{DriveWaveform, NetworkSpec, DEFAULT_DELAY_S};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_delay")]
    pub delay_s: f64,
    pub duration_s: f64,
    pub sample_dt_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub board: BoardDefaults,
    pub devices: Vec<DeviceEntry>,
    #[serde(default)]
    pub couplings: Vec<CouplingEntry>,
    #[serde(default)]
    pub drives: Vec<DriveEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anneal: Option<AnnealSection>,
}

fn default_delay() -> f64 {
    DEFAULT_DELAY_S
}

/// A device given by preset name, by full parameters, or by the reduced
/// `(tau at balance, B)` form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeviceEntry {
    Preset { preset: String },
    Explicit(SmtjParams),
    Reduced(ReducedParams),
}

impl DeviceEntry {
    pub fn resolve(&self) -> CliResult<SmtjParams> {
        Ok(match self {
            DeviceEntry::Preset { preset } => presets::device(preset)?,
            DeviceEntry::Explicit(p) => {
                p.validate()?;
                *p
            }
            DeviceEntry::Reduced(r) => SmtjParams::from_reduced(r)?,
        })
    }
}

/// A directed coupling, either the `{gain, polarity}` shorthand built on the
/// board defaults or a full pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingEntry {
    pub source: usize,
    pub target: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polarity: Option<Polarity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<PipelineConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveEntry {
    pub device: usize,
    #[serde(flatten)]
    pub waveform: DriveWaveform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub gains: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealSection {
    /// Symmetric coupling matrix, one row per device.
    pub j: Vec<Vec<f64>>,
    pub gains: Vec<f64>,
    /// Fixed step length; when absent each step lasts
    /// `relaxation_multiple / |lambda_1|` at its gain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_duration_s: Option<f64>,
    #[serde(default = "default_relaxation_multiple")]
    pub relaxation_multiple: f64,
}

fn default_relaxation_multiple() -> f64 {
    100.0
}

impl AnnealSection {
    pub fn problem(&self) -> CliResult<IsingProblem> {
        let n = self.j.len();
        if self.j.iter().any(|row| row.len() != n) {
            return Err(CliError::Config(format!("anneal.j must be square, got {n} rows of unequal length")));
        }
        Ok(IsingProblem::new(n, self.j.concat())?)
    }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialize spec: {e}")))
    }

    pub fn validate(&self) -> CliResult<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(CliError::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("duration_s", self.duration_s)?;
        positive("sample_dt_s", self.sample_dt_s)?;
        if self.devices.is_empty() {
            return Err(CliError::Config("at least one device is required".into()));
        }
        let n = self.devices.len();
        for (k, c) in self.couplings.iter().enumerate() {
            if c.source >= n || c.target >= n {
                return Err(CliError::Config(format!(
                    "couplings[{k}]: device index out of range (have {n} devices)"
                )));
            }
            match (c.pipeline.is_some(), c.gain.is_some() || c.polarity.is_some()) {
                (true, true) => {
                    return Err(CliError::Config(format!(
                        "couplings[{k}]: give either a pipeline or gain/polarity, not both"
                    )))
                }
                (false, false) => {
                    return Err(CliError::Config(format!("couplings[{k}]: missing gain/polarity or pipeline")))
                }
                (false, true) if c.gain.is_none() || c.polarity.is_none() => {
                    return Err(CliError::Config(format!("couplings[{k}]: shorthand needs both gain and polarity")))
                }
                _ => {}
            }
        }
        for d in &self.drives {
            if d.device >= n {
                return Err(CliError::Config(format!("drive for unknown device {}", d.device)));
            }
        }
        if let Some(s) = &self.sweep {
            if s.gains.is_empty() {
                return Err(CliError::Config("sweep.gains is empty".into()));
            }
        }
        if let Some(a) = &self.anneal {
            let p = a.problem()?;
            if p.n != n {
                return Err(CliError::Config(format!("anneal.j is {0}x{0} but there are {n} devices", p.n)));
            }
            if let Some(d) = a.step_duration_s {
                positive("anneal.step_duration_s", d)?;
            }
            positive("anneal.relaxation_multiple", a.relaxation_multiple)?;
        }
        Ok(())
    }

    pub fn resolved_devices(&self) -> CliResult<Vec<SmtjParams>> {
        self.devices
            .iter()
            .enumerate()
            .map(|(k, d)| d.resolve().map_err(|e| CliError::Config(format!("devices[{k}]: {e}"))))
            .collect()
    }

    /// The network with every coupling at its configured gain, or at
    /// `gain` when given.
    pub fn network(&self, gain: Option<f64>) -> CliResult<NetworkSpec> {
        let devices = self.resolved_devices()?;
        let mut net = NetworkSpec::new(devices, self.delay_s);
        for c in &self.couplings {
            let mut cfg = match (&c.pipeline, c.gain, c.polarity) {
                (Some(p), _, _) => *p,
                (None, Some(g), Some(pol)) => {
                    PipelineConfig::between(&self.board, &net.devices[c.source], &net.devices[c.target], g, pol)
                }
                _ => unreachable!("validated"),
            };
            if let Some(g) = gain {
                cfg = cfg.with_gain(g);
            }
            net.set_coupling(c.target, c.source, Some(cfg))?;
        }
        for d in &self.drives {
            net.set_drive(d.device, d.waveform)?;
        }
        Ok(net)
    }

    /// Gain of the first coupling, or zero without couplings.
    pub fn configured_gain(&self) -> CliResult<f64> {
        let Some(c) = self.couplings.first() else {
            return Ok(0.0);
        };
        Ok(match (&c.pipeline, c.gain) {
            (Some(p), _) => p.gain.gain()?,
            (None, Some(g)) => g,
            _ => 0.0,
        })
    }

    /// Gains to evaluate: the sweep list, else the configured gain.
    pub fn gains(&self) -> CliResult<Vec<f64>> {
        match &self.sweep {
            Some(s) => Ok(s.gains.clone()),
            None => Ok(vec![self.configured_gain()?]),
        }
    }

    /// A two-device spec with both directions coupled by the shorthand.
    pub fn symmetric_pair(devices: [DeviceEntry; 2], gain: f64, polarity: Polarity) -> Self {
        let c = |source, target| CouplingEntry {
            source,
            target,
            gain: Some(gain),
            polarity: Some(polarity),
            pipeline: None,
        };
        ExperimentSpec {
            seed: 0,
            delay_s: DEFAULT_DELAY_S,
            duration_s: 1.0,
            sample_dt_s: 1e-5,
            out_dir: None,
            board: BoardDefaults::default(),
            devices: devices.to_vec(),
            couplings: vec![c(0, 1), c(1, 0)],
            drives: Vec::new(),
            sweep: None,
            anneal: None,
        }
    }
}
