//! Plain-text `key = value` constants file: term energies, partial decay
//! rates, and optional g-factor overrides. The bundled `ba138.constants`
//! is the default; every value can be overridden by pointing the config at
//! another file.

use std::collections::BTreeMap;
use std::path::Path;

use crate::atomic::TermLabel;
use crate::error::{Error, Result};

pub const BUNDLED_BA138: &str = include_str!("../../data/ba138.constants");

/// Decay channels of the ion: (upper, lower) term pairs that carry a
/// partial rate in the constants file.
pub const DECAY_CHANNELS: [(TermLabel, TermLabel); 5] = [
    (TermLabel::P12, TermLabel::S12),
    (TermLabel::P12, TermLabel::D32),
    (TermLabel::P32, TermLabel::S12),
    (TermLabel::P32, TermLabel::D32),
    (TermLabel::P32, TermLabel::D52),
];

#[derive(Debug, Clone, PartialEq)]
pub struct IonConstants {
    pub mu_b_over_h_mhz_per_gauss: f64,
    /// Term energies relative to S1/2, in cm^-1.
    pub energy_cm: BTreeMap<TermLabel, f64>,
    /// Partial decay rates in s^-1, keyed by (upper, lower).
    pub gamma_partial: BTreeMap<(TermLabel, TermLabel), f64>,
    /// Optional Lande g-factor overrides.
    pub g_j_override: BTreeMap<TermLabel, f64>,
}

impl IonConstants {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_BA138).expect("bundled constants file must parse")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut mu_b = None;
        let mut energy_cm = BTreeMap::new();
        let mut gamma_partial = BTreeMap::new();
        let mut g_j_override = BTreeMap::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let key = key.trim();
            let value: f64 = value.trim().parse().map_err(|_| {
                Error::Config(format!("line {}: cannot parse value `{}`", lineno + 1, value.trim()))
            })?;

            if key == "mu_b_over_h_mhz_per_gauss" {
                mu_b = Some(value);
            } else if let Some(term) = key.strip_prefix("energy_cm.") {
                energy_cm.insert(parse_term(term, lineno)?, value);
            } else if let Some(rest) = key.strip_prefix("gamma.") {
                let (upper, lower) = rest.split_once('.').ok_or_else(|| {
                    Error::Config(format!("line {}: gamma key needs upper.lower", lineno + 1))
                })?;
                let pair = (parse_term(upper, lineno)?, parse_term(lower, lineno)?);
                if !DECAY_CHANNELS.contains(&pair) {
                    return Err(Error::Config(format!(
                        "line {}: `{}` is not a dipole decay channel of this ion",
                        lineno + 1,
                        key
                    )));
                }
                if value < 0.0 {
                    return Err(Error::Config(format!("line {}: negative decay rate", lineno + 1)));
                }
                gamma_partial.insert(pair, value);
            } else if let Some(term) = key.strip_prefix("g_j.") {
                g_j_override.insert(parse_term(term, lineno)?, value);
            } else {
                return Err(Error::Config(format!("line {}: unknown key `{key}`", lineno + 1)));
            }
        }

        let mu_b_over_h_mhz_per_gauss =
            mu_b.ok_or_else(|| Error::config("missing mu_b_over_h_mhz_per_gauss"))?;
        if mu_b_over_h_mhz_per_gauss <= 0.0 {
            return Err(Error::config("mu_b_over_h_mhz_per_gauss must be positive"));
        }
        for label in TermLabel::ALL {
            if !energy_cm.contains_key(&label) {
                return Err(Error::Config(format!("missing energy_cm.{label}")));
            }
        }
        for pair in DECAY_CHANNELS {
            if !gamma_partial.contains_key(&pair) {
                return Err(Error::Config(format!("missing gamma.{}.{}", pair.0, pair.1)));
            }
        }
        Ok(IonConstants {
            mu_b_over_h_mhz_per_gauss,
            energy_cm,
            gamma_partial,
            g_j_override,
        })
    }

    /// Total linewidth of an upper term: sum of its partial rates, s^-1.
    pub fn gamma_total(&self, upper: TermLabel) -> f64 {
        self.gamma_partial
            .iter()
            .filter(|((u, _), _)| *u == upper)
            .map(|(_, g)| g)
            .sum()
    }

    /// Transition wavelength in nm from the term energy difference.
    pub fn wavelength_nm(&self, upper: TermLabel, lower: TermLabel) -> f64 {
        let de = self.energy_cm[&upper] - self.energy_cm[&lower];
        1e7 / de
    }
}

fn parse_term(s: &str, lineno: usize) -> Result<TermLabel> {
    TermLabel::from_str(s.trim())
        .ok_or_else(|| Error::Config(format!("line {}: unknown term `{s}`", lineno + 1)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_file_parses_and_is_complete() {
        let c = IonConstants::bundled();
        assert_eq!(c.mu_b_over_h_mhz_per_gauss, 1.3996245);
        assert_eq!(c.energy_cm.len(), 5);
        assert_eq!(c.gamma_partial.len(), 5);
        // total linewidths land near the known lifetimes
        let g12 = c.gamma_total(TermLabel::P12);
        let g32 = c.gamma_total(TermLabel::P32);
        assert!((1.0 / g12 - 7.9e-9).abs() < 0.2e-9, "tau(P1/2) = {}", 1.0 / g12);
        assert!((1.0 / g32 - 6.2e-9).abs() < 0.2e-9, "tau(P3/2) = {}", 1.0 / g32);
    }

    #[test]
    fn wavelengths_match_the_level_scheme() {
        let c = IonConstants::bundled();
        assert!((c.wavelength_nm(TermLabel::P32, TermLabel::S12) - 455.4).abs() < 0.5);
        assert!((c.wavelength_nm(TermLabel::P12, TermLabel::S12) - 493.5).abs() < 0.5);
        assert!((c.wavelength_nm(TermLabel::P12, TermLabel::D32) - 649.9).abs() < 0.5);
        assert!((c.wavelength_nm(TermLabel::P32, TermLabel::D52) - 614.3).abs() < 0.5);
        assert!((c.wavelength_nm(TermLabel::P32, TermLabel::D32) - 585.5).abs() < 0.5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "mu_b_over_h_mhz_per_gauss = 1.4\nbogus = 1.0\n";
        assert!(IonConstants::parse(text).is_err());
    }

    #[test]
    fn non_dipole_gamma_keys_are_rejected() {
        let mut text = BUNDLED_BA138.to_string();
        text.push_str("gamma.D5/2.S1/2 = 1.0\n");
        assert!(IonConstants::parse(&text).is_err());
    }

    #[test]
    fn missing_rate_is_rejected() {
        let text = BUNDLED_BA138
            .lines()
            .filter(|l| !l.starts_with("gamma.P3/2.D5/2"))
            .collect::<Vec<_>>()
            .join("\n");
        assert!(IonConstants::parse(&text).is_err());
    }
}
