//! Pipeline configuration read from TOML.

use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nnmid::fnsi::StabilizationThresholds;
use nnmid::model::{assemble_beam_model, BeamModelSpec, FeModel, NonlinearBasis};
use nnmid::pipeline::{BasisKind, IdentificationSettings};

/// Invalid configuration, reported with the offending field path.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn invalid(field: &str, msg: impl std::fmt::Display) -> anyhow::Error {
    anyhow!(ConfigError(format!("{field}: {msg}")))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub model: ModelConfig,
    pub excitation: ExcitationConfig,
    pub simulation: SimulationConfig,
    pub identification: IdentificationConfig,
    pub continuation: ContinuationConfig,
    pub phase_resonance: PhaseResonanceConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// `benchmark` or `nominal`; ignored when `spec` is given.
    pub preset: String,
    /// JSON beam specification, relative to the config file.
    pub spec: Option<PathBuf>,
    /// Node carrying the grounded nonlinear springs.
    pub nonlinear_node: usize,
    /// Cubic stiffness (N/m^3).
    pub cubic: f64,
    /// Quadratic stiffness (N/m^2).
    pub quadratic: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { preset: "benchmark".into(), spec: None, nonlinear_node: 14, cubic: 8e9, quadratic: -1.05e7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExcitationConfig {
    pub f_min: f64,
    pub f_max: f64,
    /// Force RMS (N).
    pub rms: f64,
    /// Integration rate (Hz).
    pub sample_rate: f64,
    /// Samples per period at the integration rate.
    pub samples_per_period: usize,
    pub periods: usize,
    pub seed: u64,
}

impl Default for ExcitationConfig {
    fn default() -> Self {
        Self {
            f_min: 5.0,
            f_max: 500.0,
            rms: 15.0,
            sample_rate: 60_000.0,
            samples_per_period: 655_360,
            periods: 20,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub decimation: usize,
    /// Noise standard deviation relative to the reference channel RMS.
    pub noise_level: f64,
    pub noise_seed: u64,
    pub noise_reference_node: usize,
    pub newton_tolerance: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { decimation: 20, noise_level: 0.01, noise_seed: 1, noise_reference_node: 14, newton_tolerance: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentificationConfig {
    /// `spline` or `polynomial`.
    pub basis: String,
    pub spline_segments: usize,
    pub polynomial_degrees: Vec<u32>,
    pub band: [f64; 2],
    pub max_order: usize,
    pub order: Option<usize>,
    pub block_rows: Option<usize>,
    pub discard_periods: usize,
    pub weighting: bool,
    pub frequency_threshold: f64,
    pub damping_threshold: f64,
    pub mac_threshold: f64,
}

impl Default for IdentificationConfig {
    fn default() -> Self {
        let t = StabilizationThresholds::default();
        Self {
            basis: "spline".into(),
            spline_segments: 10,
            polynomial_degrees: vec![2, 3],
            band: [5.0, 500.0],
            max_order: 20,
            order: None,
            block_rows: Some(30),
            discard_periods: 5,
            weighting: true,
            frequency_threshold: t.frequency,
            damping_threshold: t.damping,
            mac_threshold: t.mac,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContinuationConfig {
    /// Modes to continue, numbered from 1.
    pub modes: Vec<usize>,
    /// Node whose displacement defines amplitudes.
    pub designated_node: usize,
    pub max_amplitude: Option<f64>,
    pub max_energy: Option<f64>,
    pub seed_amplitude: f64,
    pub tolerance: f64,
    pub integrator_rtol: f64,
    pub max_points: usize,
    pub orbit_amplitudes: Vec<f64>,
    pub orbit_samples: usize,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        Self {
            modes: vec![1],
            designated_node: 14,
            max_amplitude: Some(1e-3),
            max_energy: None,
            seed_amplitude: 1e-5,
            tolerance: 1e-9,
            integrator_rtol: 1e-10,
            max_points: 2000,
            orbit_amplitudes: vec![5e-4, 1e-3],
            orbit_samples: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseResonanceConfig {
    /// Mode label attached to the ridge, numbered from 1.
    pub mode: usize,
    pub designated_node: usize,
    pub f_start: f64,
    pub f_end: f64,
    pub df: f64,
    /// Force amplitude (N).
    pub amplitude: f64,
    pub settle_periods: usize,
    pub measure_periods: usize,
    pub sample_rate: f64,
    pub steady_tolerance: f64,
    pub min_indicator: f64,
    pub decay_floor: f64,
    pub max_decay_duration: f64,
    pub wavelet_band: [f64; 2],
    pub omega_c: f64,
    pub voices_per_octave: usize,
    pub ridge_stride: usize,
}

impl Default for PhaseResonanceConfig {
    fn default() -> Self {
        Self {
            mode: 1,
            designated_node: 14,
            f_start: 28.0,
            f_end: 40.0,
            df: 0.2,
            amplitude: 3.0,
            settle_periods: 75,
            measure_periods: 5,
            sample_rate: 10_000.0,
            steady_tolerance: 0.01,
            min_indicator: 0.9,
            decay_floor: 0.01,
            max_decay_duration: 60.0,
            wavelet_band: [20.0, 50.0],
            omega_c: 8.0,
            voices_per_octave: 48,
            ridge_stride: 20,
        }
    }
}

/// Loaded configuration plus its location and hash.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: Config,
    pub base_dir: PathBuf,
    pub hash: String,
}

impl Loaded {
    /// Read, apply the seed override and validate.
    pub fn from_path(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let (mut config, base_dir) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| anyhow!(ConfigError(format!("cannot read {}: {e}", p.display()))))?;
                let config: Config = toml::from_str(&text).map_err(|e| anyhow!(ConfigError(e.to_string())))?;
                (config, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (Config::default(), PathBuf::from(".")),
        };
        if let Some(s) = seed {
            config.excitation.seed = s;
            config.simulation.noise_seed = s;
        }
        let loaded = Self { hash: hash_config(&config)?, config, base_dir };
        loaded.validate()?;
        Ok(loaded)
    }

    pub fn seeds(&self) -> BTreeMap<String, u64> {
        BTreeMap::from([
            ("excitation".to_string(), self.config.excitation.seed),
            ("noise".to_string(), self.config.simulation.noise_seed),
        ])
    }

    pub fn beam_spec(&self) -> Result<BeamModelSpec> {
        let m = &self.config.model;
        match &m.spec {
            Some(p) => {
                let path = self.base_dir.join(p);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| invalid("model.spec", format!("cannot read {}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| invalid("model.spec", e))
            }
            None => match m.preset.as_str() {
                "benchmark" => Ok(BeamModelSpec::benchmark()),
                "nominal" => Ok(BeamModelSpec::nominal()),
                other => Err(invalid("model.preset", format!("unknown preset '{other}'"))),
            },
        }
    }

    pub fn fe_model(&self) -> Result<FeModel> {
        Ok(assemble_beam_model(&self.beam_spec()?)?)
    }

    /// Translation DOF of a node.
    pub fn node_dof(fe: &FeModel, node: usize, field: &str) -> Result<usize> {
        fe.translation_dof(node).map_err(|e| invalid(field, e))
    }

    /// True nonlinear springs of the configured model.
    pub fn true_basis(&self, fe: &FeModel) -> Result<NonlinearBasis> {
        let m = &self.config.model;
        let dof = Self::node_dof(fe, m.nonlinear_node, "model.nonlinear_node")?;
        Ok(NonlinearBasis::cubic_quadratic(dof, m.cubic, m.quadratic))
    }

    pub fn identification_settings(&self, nonlinear_dof: usize) -> Result<IdentificationSettings> {
        let c = &self.config.identification;
        let basis = match c.basis.as_str() {
            "spline" => BasisKind::Spline { segments: c.spline_segments },
            "polynomial" => BasisKind::Polynomial { degrees: c.polynomial_degrees.clone() },
            other => return Err(invalid("identification.basis", format!("unknown basis '{other}'"))),
        };
        Ok(IdentificationSettings {
            basis,
            nonlinear_dof,
            band: (c.band[0], c.band[1]),
            discard_periods: c.discard_periods,
            order: c.order,
            diagram: true,
            max_order: c.max_order,
            block_rows: c.block_rows,
            weighting: c.weighting,
            thresholds: StabilizationThresholds {
                frequency: c.frequency_threshold,
                damping: c.damping_threshold,
                mac: c.mac_threshold,
            },
        })
    }

    fn validate(&self) -> Result<()> {
        let c = &self.config;
        let e = &c.excitation;
        if !(e.sample_rate > 0.0) {
            return Err(invalid("excitation.sample_rate", "must be positive"));
        }
        if e.periods == 0 || e.samples_per_period == 0 {
            return Err(invalid("excitation.periods", "periods and samples_per_period must be positive"));
        }
        if !(e.f_min > 0.0 && e.f_max > e.f_min) {
            return Err(invalid("excitation.f_min", "need 0 < f_min < f_max"));
        }
        let s = &c.simulation;
        if s.decimation == 0 || !e.samples_per_period.is_multiple_of(s.decimation) {
            return Err(invalid("simulation.decimation", "must divide excitation.samples_per_period"));
        }
        if !(s.noise_level >= 0.0) {
            return Err(invalid("simulation.noise_level", "must be non-negative"));
        }
        let fs_dec = e.sample_rate / s.decimation as f64;
        if e.f_max >= 0.5 * nnmid::simulate::DECIMATION_CUTOFF * fs_dec {
            return Err(invalid("excitation.f_max", "lies above the anti-alias filter passband"));
        }
        let id = &c.identification;
        if !(id.band[0] > 0.0 && id.band[1] > id.band[0] && id.band[1] < fs_dec / 2.0) {
            return Err(invalid("identification.band", format!("must satisfy 0 < lo < hi < {}", fs_dec / 2.0)));
        }
        if id.discard_periods >= e.periods.saturating_sub(1) {
            return Err(invalid("identification.discard_periods", "leaves fewer than two periods"));
        }
        if let Some(o) = id.order {
            if o == 0 || o % 2 != 0 {
                return Err(invalid("identification.order", "must be a positive even number"));
            }
        }
        let ct = &c.continuation;
        if ct.modes.contains(&0) {
            return Err(invalid("continuation.modes", "modes are numbered from 1"));
        }
        if ct.max_amplitude.is_none() && ct.max_energy.is_none() {
            return Err(invalid("continuation", "set max_amplitude or max_energy"));
        }
        if !(ct.seed_amplitude > 0.0 && ct.tolerance > 0.0 && ct.integrator_rtol > 0.0) {
            return Err(invalid("continuation.seed_amplitude", "seed amplitude and tolerances must be positive"));
        }
        let p = &c.phase_resonance;
        if !(p.f_start > 0.0 && p.f_end >= p.f_start && p.df > 0.0) {
            return Err(invalid("phase_resonance.f_start", "need 0 < f_start <= f_end and df > 0"));
        }
        if p.f_end >= p.sample_rate / 2.0 || p.wavelet_band[1] >= p.sample_rate / 2.0 {
            return Err(invalid("phase_resonance.sample_rate", "Nyquist below the sweep or wavelet band"));
        }
        if p.mode == 0 {
            return Err(invalid("phase_resonance.mode", "modes are numbered from 1"));
        }
        if let Some(spec) = &c.model.spec {
            let path = self.base_dir.join(spec);
            if !path.exists() {
                return Err(invalid("model.spec", format!("{} does not exist", path.display())));
            }
        }
        Ok(())
    }
}

/// SHA-256 of the canonical JSON form of the effective configuration.
pub fn hash_config(config: &Config) -> Result<String> {
    let json = serde_json::to_string(config).context("serializing configuration")?;
    Ok(hex::encode(Sha256::digest(json.as_bytes())))
}
