//! Fluorescence observables, field scans, dip metrics, and shot-noise
//! sensitivity.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atomic::{FieldVector, TermLabel};
use crate::config::DetectionSection;
use crate::error::{Error, Result};
use crate::model::CompiledModel;
use crate::solve::{derivative_fluorescence, steady_state_at, DensityMatrix};

/// Which P -> S photon the interference filter passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DetectChannel {
    /// 455 nm: P3/2 -> S1/2.
    Blue455,
    /// 493 nm: P1/2 -> S1/2.
    Green493,
}

impl DetectChannel {
    pub fn from_wavelength(nm: u32) -> Result<Self> {
        match nm {
            455 => Ok(DetectChannel::Blue455),
            493 => Ok(DetectChannel::Green493),
            other => Err(Error::domain(format!("no detection filter at {other} nm"))),
        }
    }

    pub fn upper_term(self) -> TermLabel {
        match self {
            DetectChannel::Blue455 => TermLabel::P32,
            DetectChannel::Green493 => TermLabel::P12,
        }
    }
}

/// Detector model: filtered channel, collection efficiency, background,
/// and the count-noise variance entering the sensitivity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionModel {
    pub channel: DetectChannel,
    /// Counts per emitted photon on the filtered line.
    pub efficiency: f64,
    pub background_cps: f64,
    /// sigma(N)^2, counts/s.
    pub noise_variance_cps: f64,
}

impl DetectionModel {
    pub fn from_config(section: &DetectionSection) -> Result<Self> {
        let model = DetectionModel {
            channel: DetectChannel::from_wavelength(section.channel)?,
            efficiency: section.efficiency,
            background_cps: section.background_cps,
            noise_variance_cps: section.noise_variance_cps,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.efficiency <= 0.0 || self.efficiency > 1.0 {
            return Err(Error::domain("efficiency must be in (0, 1]"));
        }
        if self.background_cps < 0.0 || self.noise_variance_cps < 0.0 {
            return Err(Error::domain("background and noise variance must be non-negative"));
        }
        Ok(())
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_variance_cps.sqrt()
    }
}

/// Observed count rate: `eta * Gamma_partial(P -> S) * pop(P) + background`.
pub fn fluorescence_rate(
    rho: &DensityMatrix,
    detection: &DetectionModel,
    model: &CompiledModel,
) -> f64 {
    let upper = detection.channel.upper_term();
    let gamma_ps = model.gamma_partial(upper, TermLabel::S12);
    let pop = model.basis().term_population(rho.matrix(), upper);
    detection.efficiency * gamma_ps * pop.max(0.0) + detection.background_cps
}

/// The linear part of the fluorescence functional as an operator, so
/// derivative machinery can act on it. `Tr(O rho) + background` equals
/// [`fluorescence_rate`].
pub fn observable_operator(detection: &DetectionModel, model: &CompiledModel) -> Array2<C64> {
    let upper = detection.channel.upper_term();
    let gamma_ps = model.gamma_partial(upper, TermLabel::S12);
    model
        .basis()
        .projector(upper)
        .mapv(|z| z * C64::new(detection.efficiency * gamma_ps, 0.0))
}

/// A fluorescence-versus-field scan along one axis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanResult {
    pub axis: [f64; 3],
    pub b_values: Vec<f64>,
    pub rate: Vec<f64>,
    pub derivative: Option<Vec<f64>>,
    /// Resolved config snapshot for reproducibility.
    pub params: serde_json::Value,
    pub config_hash: String,
}

impl ScanResult {
    pub fn validate(&self) -> Result<()> {
        if self.b_values.len() != self.rate.len() {
            return Err(Error::domain("scan columns have unequal lengths"));
        }
        if let Some(d) = &self.derivative {
            if d.len() != self.b_values.len() {
                return Err(Error::domain("derivative column length mismatch"));
            }
        }
        if self.b_values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("B grid must be strictly monotonic"));
        }
        Ok(())
    }

    pub fn to_csv(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(out, "# config_hash = {}", self.config_hash)?;
        writeln!(out, "B_gauss,rate_counts_per_s,derivative_counts_per_s_per_gauss")?;
        for i in 0..self.b_values.len() {
            match &self.derivative {
                Some(d) => writeln!(
                    out,
                    "{:.12e},{:.12e},{:.12e}",
                    self.b_values[i], self.rate[i], d[i]
                )?,
                None => writeln!(out, "{:.12e},{:.12e},", self.b_values[i], self.rate[i])?,
            }
        }
        Ok(())
    }
}

/// Steady-state fluorescence over a field grid along `axis`.
///
/// Grid points are independent and evaluated in parallel; the optional
/// derivative column uses central differences on the grid away from zero
/// and the perturbative expansion at exactly zero.
pub fn scan_field(
    model: &CompiledModel,
    axis: [f64; 3],
    b_grid: &[f64],
    detection: &DetectionModel,
    with_derivative: bool,
) -> Result<ScanResult> {
    if b_grid.len() < 2 || b_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("B grid must be strictly increasing with >= 2 points"));
    }
    let rate: Result<Vec<f64>> = b_grid
        .par_iter()
        .map(|&b| {
            let rho = steady_state_at(model, &FieldVector::along(axis, b))?;
            Ok(fluorescence_rate(&rho, detection, model))
        })
        .collect();
    let rate = rate?;

    let derivative = if with_derivative {
        let n = b_grid.len();
        let obs = observable_operator(detection, model);
        let mut d = vec![0.0; n];
        for i in 0..n {
            if b_grid[i] == 0.0 {
                d[i] = derivative_fluorescence(model, axis, &obs)?.first;
            } else if i == 0 {
                d[i] = (rate[1] - rate[0]) / (b_grid[1] - b_grid[0]);
            } else if i == n - 1 {
                d[i] = (rate[n - 1] - rate[n - 2]) / (b_grid[n - 1] - b_grid[n - 2]);
            } else {
                d[i] = (rate[i + 1] - rate[i - 1]) / (b_grid[i + 1] - b_grid[i - 1]);
            }
        }
        Some(d)
    } else {
        None
    };

    let result = ScanResult {
        axis,
        b_values: b_grid.to_vec(),
        rate,
        derivative,
        params: model.config().snapshot(),
        config_hash: model.config().hash(),
    };
    result.validate()?;
    Ok(result)
}

/// Width, depth, and maximum-slope metrics of a fluorescence dip.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DipMetrics {
    pub fwhm_gauss: f64,
    pub min_rate: f64,
    pub min_b: f64,
    pub max_rate: f64,
    pub max_slope: f64,
    pub max_slope_b: f64,
}

/// FWHM by linear interpolation between the half-depth crossings, and the
/// maximum |dI/dB| with its location.
pub fn dip_metrics(scan: &ScanResult) -> Result<DipMetrics> {
    scan.validate()?;
    let b = &scan.b_values;
    let y = &scan.rate;
    let n = y.len();
    let (imin, &min_rate) = y
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty scan");
    if imin == 0 || imin == n - 1 {
        return Err(Error::domain("dip minimum sits on the scan edge; dip not bracketed"));
    }
    let max_rate = y.iter().cloned().fold(f64::MIN, f64::max);
    let half = min_rate + 0.5 * (max_rate - min_rate);

    // walk outwards from the minimum to the first half-level crossings
    let mut left = None;
    for i in (1..=imin).rev() {
        if y[i - 1] >= half && y[i] < half {
            let t = (half - y[i]) / (y[i - 1] - y[i]);
            left = Some(b[i] + t * (b[i - 1] - b[i]));
            break;
        }
    }
    let mut right = None;
    for i in imin..n - 1 {
        if y[i] < half && y[i + 1] >= half {
            let t = (half - y[i]) / (y[i + 1] - y[i]);
            right = Some(b[i] + t * (b[i + 1] - b[i]));
            break;
        }
    }
    let (left, right) = match (left, right) {
        (Some(l), Some(r)) => (l, r),
        _ => return Err(Error::domain("half-depth crossings not bracketed by the scan")),
    };

    // maximum |dI/dB|: derivative column when present, else grid differences
    let deriv: Vec<f64> = match &scan.derivative {
        Some(d) => d.clone(),
        None => {
            let mut d = vec![0.0; n];
            for i in 0..n {
                d[i] = if i == 0 {
                    (y[1] - y[0]) / (b[1] - b[0])
                } else if i == n - 1 {
                    (y[n - 1] - y[n - 2]) / (b[n - 1] - b[n - 2])
                } else {
                    (y[i + 1] - y[i - 1]) / (b[i + 1] - b[i - 1])
                };
            }
            d
        }
    };
    let (islope, max_slope) = deriv
        .iter()
        .map(|v| v.abs())
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty derivative");

    Ok(DipMetrics {
        fwhm_gauss: right - left,
        min_rate,
        min_b: b[imin],
        max_rate,
        max_slope,
        max_slope_b: b[islope],
    })
}

/// Shot-noise-limited field sensitivity `Delta B = sigma(N) / (dN/dB)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Sensitivity {
    pub gauss_per_sqrt_hz: f64,
    pub pt_per_sqrt_hz: f64,
}

pub fn sensitivity(max_slope: f64, noise_sigma: f64) -> Result<Sensitivity> {
    if max_slope <= 0.0 {
        return Err(Error::domain("sensitivity needs a positive slope"));
    }
    if noise_sigma < 0.0 {
        return Err(Error::domain("noise sigma must be non-negative"));
    }
    let gauss = noise_sigma / max_slope;
    Ok(Sensitivity {
        gauss_per_sqrt_hz: gauss,
        // 1 G = 1e-4 T = 1e8 pT
        pt_per_sqrt_hz: gauss * 1e8,
    })
}
