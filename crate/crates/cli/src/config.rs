//! Experiment configuration: a TOML document with unit-suffixed physical
//! quantities, validated into core types.

use num_complex::Complex64;
use qmem_core::dynamics::DeviceModel;
use qmem_core::hilbert::HilbertDims;
use qmem_core::measurement::ReadoutModel;
use serde::Deserialize;

use crate::error::CliError;
use crate::units::{FrequencyValue, TimeValue};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub hilbert: Option<HilbertSection>,
    pub device: Option<DeviceSection>,
    pub readout: Option<ReadoutSection>,
    pub experiment: Option<ExperimentSection>,
    pub output: Option<OutputSection>,
    #[serde(default)]
    pub devices: Vec<NamedDeviceSection>,
    pub pipeline: Option<PipelineSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HilbertSection {
    pub n_cav: usize,
    #[serde(default = "default_n_qubit")]
    pub n_qubit: usize,
}

fn default_n_qubit() -> usize {
    2
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSection {
    pub chi: FrequencyValue,
    pub cavity_t1: TimeValue,
    pub cavity_tphi: TimeValue,
    #[serde(default)]
    pub nbar_th: f64,
    pub transmon_t1: TimeValue,
    pub transmon_tphi: TimeValue,
    #[serde(default)]
    pub transmon_pe_th: f64,
    pub f_storage: Option<FrequencyValue>,
    pub f_transmon: Option<FrequencyValue>,
    pub f_readout: Option<FrequencyValue>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedDeviceSection {
    pub name: String,
    #[serde(flatten)]
    pub device: DeviceSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutSection {
    #[serde(default = "default_contrast")]
    pub contrast: f64,
    #[serde(default)]
    pub baseline: f64,
    #[serde(default)]
    pub selective_photon: usize,
    pub shots: Option<u64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_contrast() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: String,
    pub points: Option<usize>,
    pub span: Option<TimeValue>,
    /// Coherent preparation amplitude |α| for t1_coherent (default √2).
    pub alpha: Option<f64>,
    /// Artificial detuning for t2_ramsey (default 5/span).
    pub detuning: Option<FrequencyValue>,
    /// Wigner target: vacuum | fock:N | coherent:RE[,IM] | superposition01.
    pub state: Option<String>,
    pub grid_points: Option<usize>,
    pub grid_halfwidth: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    pub points: Option<usize>,
}

/// Which experiment a config drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    T1Fock,
    T1Coherent,
    T2Ramsey,
    Wigner,
    Nbar,
}

impl ExperimentKind {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        match text {
            "t1_fock" => Ok(Self::T1Fock),
            "t1_coherent" => Ok(Self::T1Coherent),
            "t2_ramsey" => Ok(Self::T2Ramsey),
            "wigner" => Ok(Self::Wigner),
            "nbar" => Ok(Self::Nbar),
            other => Err(CliError::Config(format!(
                "unknown experiment kind '{other}' \
                 (expected t1_fock | t1_coherent | t2_ramsey | wigner | nbar)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::T1Fock => "t1_fock",
            Self::T1Coherent => "t1_coherent",
            Self::T2Ramsey => "t2_ramsey",
            Self::Wigner => "wigner",
            Self::Nbar => "nbar",
        }
    }
}

/// Wigner map target state.
#[derive(Debug, Clone, PartialEq)]
pub enum WignerState {
    Vacuum,
    Fock(usize),
    Coherent(Complex64),
    Superposition01,
}

impl WignerState {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let lower = text.trim().to_ascii_lowercase();
        if lower == "vacuum" {
            return Ok(Self::Vacuum);
        }
        if lower == "superposition01" {
            return Ok(Self::Superposition01);
        }
        if let Some(n) = lower.strip_prefix("fock:") {
            let n: usize = n
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("cannot parse Fock level in '{text}'")))?;
            return Ok(Self::Fock(n));
        }
        if let Some(parts) = lower.strip_prefix("coherent:") {
            let mut split = parts.split(',');
            let re: f64 = split
                .next()
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("cannot parse amplitude in '{text}'")))?;
            let im: f64 = match split.next() {
                Some(s) => s.trim().parse().map_err(|_| {
                    CliError::Config(format!("cannot parse amplitude in '{text}'"))
                })?,
                None => 0.0,
            };
            return Ok(Self::Coherent(Complex64::new(re, im)));
        }
        Err(CliError::Config(format!(
            "unknown wigner state '{text}' \
             (expected vacuum | fock:N | coherent:RE[,IM] | superposition01)"
        )))
    }
}

pub fn load_config(path: &std::path::Path) -> Result<ConfigFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

impl ConfigFile {
    pub fn hilbert_dims(&self) -> Result<HilbertDims, CliError> {
        let section = self.hilbert.clone().unwrap_or(HilbertSection {
            n_cav: HilbertDims::DEFAULT_N_CAV,
            n_qubit: 2,
        });
        Ok(HilbertDims::new(section.n_cav, section.n_qubit)?)
    }

    pub fn readout_model(&self) -> Result<ReadoutModel, CliError> {
        let section = self.readout.clone().unwrap_or(ReadoutSection {
            contrast: 1.0,
            baseline: 0.0,
            selective_photon: 0,
            shots: None,
            seed: 0,
        });
        let ro = ReadoutModel {
            contrast: section.contrast,
            baseline: section.baseline,
            selective_photon: section.selective_photon,
            shots: section.shots,
            rng_seed: section.seed,
        };
        ro.validate()?;
        Ok(ro)
    }

    pub fn device_model(&self) -> Result<DeviceModel, CliError> {
        let section = self
            .device
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [device] section".into()))?;
        device_model_from(section)
    }

    pub fn experiment(&self) -> Result<&ExperimentSection, CliError> {
        self.experiment
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [experiment] section".into()))
    }
}

pub fn device_model_from(section: &DeviceSection) -> Result<DeviceModel, CliError> {
    let model = DeviceModel {
        chi_hz: section.chi.0,
        cavity_t1: section.cavity_t1.0,
        cavity_tphi: section.cavity_tphi.0,
        nbar_th: section.nbar_th,
        transmon_t1: section.transmon_t1.0,
        transmon_tphi: section.transmon_tphi.0,
        transmon_pe_th: section.transmon_pe_th,
        f_storage_hz: section.f_storage.map_or(0.0, |f| f.0),
        f_transmon_hz: section.f_transmon.map_or(0.0, |f| f.0),
        f_readout_hz: section.f_readout.map_or(0.0, |f| f.0),
    };
    model.validate()?;
    Ok(model)
}
