//! Experiment configuration: a single TOML file with nested sections.
//! Unknown keys are rejected; every run's outputs embed the resolved config
//! and its hash so replays are detectable.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub constants: ConstantsSection,
    pub lasers: LasersSection,
    pub field: FieldSection,
    pub detection: DetectionSection,
    pub initial_state: InitialStateSection,
    pub solver: SolverSection,
    pub nulling: NullingSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            constants: ConstantsSection::default(),
            lasers: LasersSection::default(),
            field: FieldSection::default(),
            detection: DetectionSection::default(),
            initial_state: InitialStateSection::default(),
            solver: SolverSection::default(),
            nulling: NullingSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, laser) in self.lasers.iter() {
            if laser.saturation < 0.0 {
                return Err(Error::Config(format!("lasers.{name}: negative saturation")));
            }
            if laser.linewidth_khz < 0.0 {
                return Err(Error::Config(format!("lasers.{name}: negative linewidth")));
            }
            laser.polarization.parse().map_err(|e| {
                Error::Config(format!("lasers.{name}: {e}"))
            })?;
        }
        if !matches!(self.detection.channel, 455 | 493) {
            return Err(Error::config("detection.channel must be 455 or 493"));
        }
        if self.detection.efficiency <= 0.0 || self.detection.efficiency > 1.0 {
            return Err(Error::config("detection.efficiency must be in (0, 1]"));
        }
        if self.detection.background_cps < 0.0 || self.detection.noise_variance_cps < 0.0 {
            return Err(Error::config("detection background/noise must be non-negative"));
        }
        self.field.axis_vector()?;
        if self.field.points < 2 {
            return Err(Error::config("field.points must be at least 2"));
        }
        if self.solver.zero_tol <= 0.0 || self.solver.dark_tol_factor <= 0.0 {
            return Err(Error::config("solver tolerances must be positive"));
        }
        if self.nulling.integration_time_s <= 0.0 {
            return Err(Error::config("nulling.integration_time_s must be positive"));
        }
        if self.nulling.current_resolution_amp <= 0.0 {
            return Err(Error::config("nulling.current_resolution_amp must be positive"));
        }
        self.initial_state.parse()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON rendering of the resolved config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        format!("{:x}", h.finalize())
    }

    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ConstantsSection {
    /// Optional path to a constants file; the bundled Ba-138 set otherwise.
    pub file: Option<PathBuf>,
}

/// The four drive lasers, keyed by wavelength.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LasersSection {
    pub l455: LaserSection,
    pub l493: LaserSection,
    pub l614: LaserSection,
    pub l650: LaserSection,
}

impl Default for LasersSection {
    fn default() -> Self {
        // experimental defaults: saturations 0.5 / 5 / 15 / 40 and detunings
        // -10 / -20 / -50 / -40 MHz on 455 / 493 / 614 / 650; 493 off.
        LasersSection {
            l455: LaserSection::new(true, -10.0, 0.5),
            l493: LaserSection::new(false, -20.0, 5.0),
            l614: LaserSection::new(true, -50.0, 15.0),
            l650: LaserSection::new(true, -40.0, 40.0),
        }
    }
}

impl LasersSection {
    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &LaserSection)> {
        [
            ("l455", &self.l455),
            ("l493", &self.l493),
            ("l614", &self.l614),
            ("l650", &self.l650),
        ]
        .into_iter()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LaserSection {
    pub enabled: bool,
    pub detuning_mhz: f64,
    pub saturation: f64,
    pub linewidth_khz: f64,
    pub polarization: PolarizationSpec,
}

impl LaserSection {
    fn new(enabled: bool, detuning_mhz: f64, saturation: f64) -> Self {
        LaserSection {
            enabled,
            detuning_mhz,
            saturation,
            linewidth_khz: 500.0,
            polarization: PolarizationSpec::default(),
        }
    }
}

impl Default for LaserSection {
    fn default() -> Self {
        LaserSection::new(false, 0.0, 0.0)
    }
}

/// Polarization: a lab axis name or explicit spherical components as
/// `[re_m1, im_m1, re_0, im_0, re_p1, im_p1]`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum PolarizationSpec {
    Axis(String),
    Spherical([f64; 6]),
}

impl Default for PolarizationSpec {
    fn default() -> Self {
        PolarizationSpec::Axis("x".into())
    }
}

impl PolarizationSpec {
    pub fn parse(&self) -> Result<crate::atomic::PolarizationVector> {
        use crate::atomic::PolarizationVector;
        use num_complex::Complex64 as C64;
        match self {
            PolarizationSpec::Axis(s) => match s.as_str() {
                "x" => Ok(PolarizationVector::linear_x()),
                "y" => Ok(PolarizationVector::linear_y()),
                "z" => Ok(PolarizationVector::linear_z()),
                other => Err(Error::Config(format!(
                    "polarization axis must be x, y, or z (got `{other}`)"
                ))),
            },
            PolarizationSpec::Spherical(c) => {
                let norm = (c.iter().map(|x| x * x).sum::<f64>()).sqrt();
                if norm < 1e-6 {
                    return Err(Error::config("polarization components are all zero"));
                }
                let pol = PolarizationVector {
                    q_minus: C64::new(c[0] / norm, c[1] / norm),
                    q_zero: C64::new(c[2] / norm, c[3] / norm),
                    q_plus: C64::new(c[4] / norm, c[5] / norm),
                };
                pol.validate()?;
                Ok(pol)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct FieldSection {
    /// Scan axis: "x", "y", or "z".
    pub axis: String,
    pub from_gauss: f64,
    pub to_gauss: f64,
    pub points: usize,
    /// Explicit field vector for single-point runs.
    pub vector_gauss: Option<[f64; 3]>,
}

impl Default for FieldSection {
    fn default() -> Self {
        FieldSection {
            axis: "z".into(),
            from_gauss: -1.0,
            to_gauss: 1.0,
            points: 201,
            vector_gauss: None,
        }
    }
}

impl FieldSection {
    pub fn axis_vector(&self) -> Result<[f64; 3]> {
        match self.axis.as_str() {
            "x" => Ok([1.0, 0.0, 0.0]),
            "y" => Ok([0.0, 1.0, 0.0]),
            "z" => Ok([0.0, 0.0, 1.0]),
            other => Err(Error::Config(format!("field.axis must be x, y, or z (got `{other}`)"))),
        }
    }

    pub fn grid(&self) -> Vec<f64> {
        let n = self.points.max(2);
        (0..n)
            .map(|i| {
                self.from_gauss
                    + (self.to_gauss - self.from_gauss) * i as f64 / (n - 1) as f64
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionSection {
    /// Which P -> S photon is filtered: 455 or 493.
    pub channel: u32,
    /// Counts per emitted photon.
    pub efficiency: f64,
    pub background_cps: f64,
    /// sigma(N)^2 of the detector, counts/s.
    pub noise_variance_cps: f64,
}

impl Default for DetectionSection {
    fn default() -> Self {
        DetectionSection {
            channel: 455,
            efficiency: 0.0127,
            background_cps: 10_000.0,
            noise_variance_cps: 60.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct InitialStateSection {
    /// "s-mixture" (diagonal over the S1/2 sublevels) or "maximally-mixed".
    pub kind: String,
}

impl Default for InitialStateSection {
    fn default() -> Self {
        InitialStateSection {
            kind: "s-mixture".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialStateKind {
    SMixture,
    MaximallyMixed,
}

impl InitialStateSection {
    pub fn parse(&self) -> Result<InitialStateKind> {
        match self.kind.as_str() {
            "s-mixture" => Ok(InitialStateKind::SMixture),
            "maximally-mixed" => Ok(InitialStateKind::MaximallyMixed),
            other => Err(Error::Config(format!(
                "initial_state.kind must be s-mixture or maximally-mixed (got `{other}`)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    /// Kernel tolerance relative to the spectral scale.
    pub zero_tol: f64,
    /// Dark/bright separation as a fraction of Gamma(P1/2).
    pub dark_tol_factor: f64,
    /// Model laser linewidths as pure dephasing.
    pub dephasing_enabled: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            zero_tol: 1e-12,
            dark_tol_factor: 1e-6,
            dephasing_enabled: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct NullingSection {
    /// Coil calibration matrix, gauss per ampere, rows = field components.
    pub calibration: [[f64; 3]; 3],
    /// Ambient field to null; `None` draws one from the seed.
    pub offset_gauss: Option<[f64; 3]>,
    /// Magnitude bound for the random offset draw.
    pub offset_max_gauss: f64,
    pub current_resolution_amp: f64,
    pub integration_time_s: f64,
    pub dark_count_rate_cps: f64,
    pub seed: u64,
    /// Half-width of the initial per-axis current scan window, ampere.
    pub window_amp: f64,
    /// Allowed current range per axis (window never leaves it).
    pub current_limit_amp: f64,
    pub points_per_scan: usize,
    /// Fraction of the window around the minimum used for the quadratic fit.
    pub fit_fraction: f64,
    /// Window shrink factor per sweep.
    pub shrink: f64,
    /// First refinement stage: window (A), integration multiplier, sweeps.
    pub stage1_window_amp: f64,
    pub stage1_time_factor: f64,
    pub stage1_sweeps: usize,
    /// Second refinement stage; its sweep currents are averaged.
    pub stage2_window_amp: f64,
    pub stage2_time_factor: f64,
    pub stage2_sweeps: usize,
    pub max_sweeps: usize,
    pub move_tol_amp: f64,
    /// Skip Poisson noise (infinite integration time limit).
    pub noiseless: bool,
}

impl Default for NullingSection {
    fn default() -> Self {
        NullingSection {
            calibration: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            offset_gauss: None,
            offset_max_gauss: 0.5,
            current_resolution_amp: 1e-7,
            integration_time_s: 0.1,
            dark_count_rate_cps: 60.0,
            seed: 1,
            window_amp: 0.75,
            current_limit_amp: 2.0,
            points_per_scan: 15,
            fit_fraction: 0.5,
            shrink: 0.45,
            stage1_window_amp: 0.3,
            stage1_time_factor: 8.0,
            stage1_sweeps: 2,
            stage2_window_amp: 0.12,
            stage2_time_factor: 100.0,
            stage2_sweeps: 3,
            max_sweeps: 14,
            move_tol_amp: 1e-6,
            noiseless: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "[lasers.l455]\nenabled = true\nbogus_knob = 3\n";
        assert!(ExperimentConfig::from_toml(text).is_err());
    }

    #[test]
    fn defaults_match_the_experimental_parameters() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.lasers.l455.saturation, 0.5);
        assert_eq!(cfg.lasers.l614.saturation, 15.0);
        assert_eq!(cfg.lasers.l650.saturation, 40.0);
        assert_eq!(cfg.lasers.l493.saturation, 5.0);
        assert!(!cfg.lasers.l493.enabled);
        assert_eq!(cfg.lasers.l455.detuning_mhz, -10.0);
        assert_eq!(cfg.lasers.l614.detuning_mhz, -50.0);
        assert_eq!(cfg.lasers.l650.detuning_mhz, -40.0);
        assert_eq!(cfg.lasers.l493.detuning_mhz, -20.0);
    }

    #[test]
    fn bad_axis_is_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.field.axis = "w".into();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hash_changes_with_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.lasers.l614.saturation = 5.0;
        assert_ne!(a.hash(), b.hash());
    }
}
