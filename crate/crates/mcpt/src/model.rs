//! Compiled model: the config turned into cached operators.
//!
//! The Liouvillian is affine in the field, `L(B) = L0 + Bx Lx + By Ly +
//! Bz Lz`, because only the Zeeman term depends on B. The four pieces are
//! built once; a scan point costs one matrix sum plus a solve.

use std::collections::BTreeMap;

use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::atomic::{
    Basis, FieldVector, IonConstants, PhysicalConstants, PolarizationVector, TermLabel,
    TransitionChannel, DECAY_CHANNELS,
};
use crate::config::{ExperimentConfig, InitialStateKind};
use crate::error::{Error, Result};
use crate::liouville::{
    assemble_liouvillian, build_hamiltonian, dephasing_dissipator, dissipator_dim, LaserDrive,
    Superoperator,
};
use crate::solve::DensityMatrix;

pub struct CompiledModel {
    basis: Basis,
    constants: PhysicalConstants,
    ion: IonConstants,
    lasers: Vec<LaserDrive>,
    gamma_totals: BTreeMap<TermLabel, f64>,
    h_static: Array2<C64>,
    h_unit: [Array2<C64>; 3],
    l_static: Superoperator,
    l_unit: [Superoperator; 3],
    rho0: DensityMatrix,
    zero_tol: f64,
    dark_tol: f64,
    config: ExperimentConfig,
}

impl CompiledModel {
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let ion = match &config.constants.file {
            Some(path) => IonConstants::load(path)?,
            None => IonConstants::bundled(),
        };
        let basis = Basis::full(&ion)?;
        let constants = PhysicalConstants::from_ion(&ion);

        let gamma_totals: BTreeMap<TermLabel, f64> = [TermLabel::P12, TermLabel::P32]
            .into_iter()
            .map(|t| (t, ion.gamma_total(t)))
            .collect();

        let mut lasers = Vec::new();
        for (name, section) in config.lasers.iter() {
            let (upper, lower) = match name {
                "l455" => (TermLabel::P32, TermLabel::S12),
                "l493" => (TermLabel::P12, TermLabel::S12),
                "l614" => (TermLabel::P32, TermLabel::D52),
                "l650" => (TermLabel::P12, TermLabel::D32),
                _ => unreachable!(),
            };
            let linewidth = if config.solver.dephasing_enabled {
                2.0 * std::f64::consts::PI * 1e3 * section.linewidth_khz
            } else {
                0.0
            };
            lasers.push(LaserDrive {
                channel: TransitionChannel::from_constants(upper, lower, &ion),
                detuning: PhysicalConstants::mhz_to_rad_s(section.detuning_mhz),
                saturation: section.saturation,
                polarization: section.polarization.parse()?,
                linewidth,
                enabled: section.enabled,
            });
        }

        let h_static = build_hamiltonian(&basis, &lasers, &FieldVector::ZERO, &constants, &gamma_totals)?;
        let unit_fields = [
            FieldVector::new(1.0, 0.0, 0.0),
            FieldVector::new(0.0, 1.0, 0.0),
            FieldVector::new(0.0, 0.0, 1.0),
        ];
        let h_unit = unit_fields
            .map(|f| crate::atomic::zeeman_hamiltonian(&basis, &f, &constants));

        // dissipators: all spontaneous decay channels plus per-laser dephasing
        let mut jumps = Vec::new();
        for (upper, lower) in DECAY_CHANNELS {
            let ch = TransitionChannel::from_constants(upper, lower, &ion);
            jumps.extend(crate::atomic::jump_operators(&basis, &ch));
        }
        let mut dissipators = vec![dissipator_dim(&jumps, basis.len())?];
        for laser in lasers.iter().filter(|l| l.enabled && l.linewidth > 0.0) {
            dissipators.push(dephasing_dissipator(laser.linewidth, &laser.channel, &basis)?);
        }

        let l_static = assemble_liouvillian(&h_static, &dissipators)?;
        let l_unit = [0, 1, 2].map(|i| {
            assemble_liouvillian(&h_unit[i], &[]).expect("coherent superoperator")
        });

        let rho0 = match config.initial_state.parse()? {
            InitialStateKind::SMixture => DensityMatrix::s_mixture(&basis),
            InitialStateKind::MaximallyMixed => DensityMatrix::maximally_mixed(basis.len()),
        };

        let dark_tol = config.solver.dark_tol_factor * gamma_totals[&TermLabel::P12];

        Ok(CompiledModel {
            basis,
            constants,
            ion,
            lasers,
            gamma_totals,
            h_static,
            h_unit,
            l_static,
            l_unit,
            rho0,
            zero_tol: config.solver.zero_tol,
            dark_tol,
            config: config.clone(),
        })
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn constants(&self) -> &PhysicalConstants {
        &self.constants
    }

    pub fn ion(&self) -> &IonConstants {
        &self.ion
    }

    pub fn lasers(&self) -> &[LaserDrive] {
        &self.lasers
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn rho0(&self) -> &DensityMatrix {
        &self.rho0
    }

    /// Kernel tolerance relative to the spectral scale.
    pub fn zero_tol(&self) -> f64 {
        self.zero_tol
    }

    /// Dark/bright separation threshold, s^-1.
    pub fn dark_tol(&self) -> f64 {
        self.dark_tol
    }

    pub fn gamma_total(&self, term: TermLabel) -> f64 {
        *self.gamma_totals.get(&term).unwrap_or(&0.0)
    }

    /// Partial decay rate of one channel, s^-1.
    pub fn gamma_partial(&self, upper: TermLabel, lower: TermLabel) -> f64 {
        *self.ion.gamma_partial.get(&(upper, lower)).unwrap_or(&0.0)
    }

    /// Rotating-frame Hamiltonian at a field, rad/s.
    pub fn hamiltonian(&self, field: &FieldVector) -> Array2<C64> {
        let mut h = self.h_static.clone();
        for (i, b) in [field.bx, field.by, field.bz].into_iter().enumerate() {
            if b != 0.0 {
                h = h + self.h_unit[i].mapv(|z| z * C64::new(b, 0.0));
            }
        }
        h
    }

    /// Full Lindblad generator at a field.
    pub fn liouvillian(&self, field: &FieldVector) -> Superoperator {
        let mut mat = self.l_static.matrix().clone();
        for (i, b) in [field.bx, field.by, field.bz].into_iter().enumerate() {
            if b != 0.0 {
                mat = mat + self.l_unit[i].matrix().mapv(|z| z * C64::new(b, 0.0));
            }
        }
        Superoperator::new(mat).expect("affine combination keeps dimensions")
    }

    /// Coherent superoperator of the unit-field Zeeman term along `axis`;
    /// the `L1` of the perturbative expansion, per gauss.
    pub fn zeeman_superoperator(&self, axis: [f64; 3]) -> Superoperator {
        let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let mut mat = Array2::<C64>::zeros(self.l_static.matrix().raw_dim());
        for (i, a) in axis.into_iter().enumerate() {
            if a != 0.0 {
                mat = mat + self.l_unit[i].matrix().mapv(|z| z * C64::new(a / norm, 0.0));
            }
        }
        Superoperator::new(mat).expect("affine combination keeps dimensions")
    }

    /// Coupling operators of the enabled lasers.
    pub fn enabled_couplings(&self) -> Vec<Array2<C64>> {
        self.lasers
            .iter()
            .filter(|l| l.enabled)
            .map(|l| {
                crate::atomic::coupling_operator(&self.basis, &l.channel, &l.polarization)
                    .expect("validated polarization")
            })
            .collect()
    }

    /// The total drive coupling `sum_k (Omega_k/2) V_k`. Lasers sharing an
    /// upper term interfere, so darkness is a property of this sum, not of
    /// each laser separately.
    pub fn total_coupling(&self) -> Array2<C64> {
        let d = self.basis.len();
        let mut total = Array2::<C64>::zeros((d, d));
        for laser in self.lasers.iter().filter(|l| l.enabled) {
            let gamma = self.gamma_total(laser.channel.upper);
            let omega = crate::liouville::rabi_from_saturation(laser.saturation, gamma)
                .expect("validated saturation");
            let v = crate::atomic::coupling_operator(&self.basis, &laser.channel, &laser.polarization)
                .expect("validated polarization");
            total = total + v.mapv(|z| z * C64::new(omega / 2.0, 0.0));
        }
        total
    }

    /// The laser driving a channel by wavelength key, if present.
    pub fn laser(&self, name: &str) -> Result<&LaserDrive> {
        let (upper, lower) = match name {
            "l455" => (TermLabel::P32, TermLabel::S12),
            "l493" => (TermLabel::P12, TermLabel::S12),
            "l614" => (TermLabel::P32, TermLabel::D52),
            "l650" => (TermLabel::P12, TermLabel::D32),
            other => return Err(Error::domain(format!("unknown laser `{other}`"))),
        };
        self.lasers
            .iter()
            .find(|l| l.channel.upper == upper && l.channel.lower == lower)
            .ok_or_else(|| Error::domain(format!("laser `{name}` not built")))
    }

    /// Default linear polarization used by scans, for symmetry checks.
    pub fn default_polarization() -> PolarizationVector {
        PolarizationVector::linear_x()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{hermitize, is_hermitian, max_abs, trace};
    use crate::liouville::trace_annihilation_defect;

    #[test]
    fn model_builds_with_defaults_and_dimensions_match() {
        let model = CompiledModel::build(&ExperimentConfig::default()).unwrap();
        assert_eq!(model.basis().len(), 18);
        let l = model.liouvillian(&FieldVector::new(0.0, 0.0, 0.1));
        assert_eq!(l.matrix().nrows(), 324);
        assert_eq!(l.dim(), 18);
    }

    #[test]
    fn liouvillian_annihilates_trace_and_preserves_hermiticity() {
        let model = CompiledModel::build(&ExperimentConfig::default()).unwrap();
        let l = model.liouvillian(&FieldVector::new(0.02, -0.3, 0.5));
        let scale = max_abs(l.matrix());
        assert!(trace_annihilation_defect(&l) < 1e-12 * scale * 18.0);

        let raw = Array2::from_shape_fn((18, 18), |(i, j)| {
            C64::new(
                ((3 * i + 7 * j) % 11) as f64 / 11.0 - 0.5,
                ((5 * i + j) % 13) as f64 / 13.0 - 0.5,
            )
        });
        let rho = hermitize(&raw);
        let out = l.apply(&rho);
        assert!(trace(&out).norm() < 1e-10 * max_abs(&out).max(1.0));
        assert!(is_hermitian(&out, 1e-12 * max_abs(&out)));
    }

    #[test]
    fn liouvillian_is_affine_in_the_field() {
        let model = CompiledModel::build(&ExperimentConfig::default()).unwrap();
        let f = FieldVector::new(0.1, 0.2, -0.3);
        let direct = model.liouvillian(&f);
        let manual = {
            let h = model.hamiltonian(&f);
            let l0 = model.liouvillian(&FieldVector::ZERO);
            let h0 = model.hamiltonian(&FieldVector::ZERO);
            let dz = &h - &h0;
            let coherent = assemble_liouvillian(&dz, &[]).unwrap();
            let mut m = l0.matrix().clone();
            m = m + coherent.matrix();
            m
        };
        assert!(max_abs(&(direct.matrix() - &manual)) < 1e-9 * max_abs(&manual));
    }

    #[test]
    fn hamiltonian_block_pattern_matches_the_channel_graph() {
        // with all detunings and the field zero, couplings appear only on
        // the driven channel blocks
        let mut cfg = ExperimentConfig::default();
        for (_, laser) in [
            ("l455", &mut cfg.lasers.l455),
            ("l493", &mut cfg.lasers.l493),
            ("l614", &mut cfg.lasers.l614),
            ("l650", &mut cfg.lasers.l650),
        ] {
            laser.detuning_mhz = 0.0;
            laser.enabled = true;
        }
        let model = CompiledModel::build(&cfg).unwrap();
        let h = model.hamiltonian(&FieldVector::ZERO);
        let b = model.basis();
        let driven: Vec<(TermLabel, TermLabel)> = vec![
            (TermLabel::S12, TermLabel::P32),
            (TermLabel::S12, TermLabel::P12),
            (TermLabel::D52, TermLabel::P32),
            (TermLabel::D32, TermLabel::P12),
        ];
        for i in 0..18 {
            for j in 0..18 {
                if h[(i, j)].norm() > 1e-9 && i != j {
                    let (ti, tj) = (b.sublevel(i).term, b.sublevel(j).term);
                    assert!(
                        driven.contains(&(ti, tj)) || driven.contains(&(tj, ti)),
                        "unexpected coupling between {ti} and {tj}"
                    );
                }
            }
        }
    }

    #[test]
    fn initial_state_is_the_s_mixture() {
        let model = CompiledModel::build(&ExperimentConfig::default()).unwrap();
        let rho0 = model.rho0();
        assert!((rho0.population(0) - 0.5).abs() < 1e-15);
        assert!((rho0.population(1) - 0.5).abs() < 1e-15);
        rho0.validate().unwrap();
    }
}
