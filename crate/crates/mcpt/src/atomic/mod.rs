//! Level structure of the ion: fine-structure terms, Zeeman sublevels,
//! the Zeeman Hamiltonian, and dipole coupling/jump operators.
//!
//! The quantization axis is fixed to lab z; arbitrary field directions go
//! through the full vector (Jx, Jy, Jz), so nothing downstream ever has to
//! re-derive polarization components when the field rotates.

pub mod angular;
pub mod constants_file;

use std::fmt;

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ZERO;
pub use angular::cg_coefficient;
pub use constants_file::{IonConstants, DECAY_CHANNELS};

/// The five fine-structure terms, in canonical basis order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TermLabel {
    S12,
    P12,
    D32,
    P32,
    D52,
}

impl TermLabel {
    pub const ALL: [TermLabel; 5] = [
        TermLabel::S12,
        TermLabel::P12,
        TermLabel::D32,
        TermLabel::P32,
        TermLabel::D52,
    ];

    pub fn from_str(s: &str) -> Option<Self> {
        match s {
            "S1/2" => Some(TermLabel::S12),
            "P1/2" => Some(TermLabel::P12),
            "D3/2" => Some(TermLabel::D32),
            "P3/2" => Some(TermLabel::P32),
            "D5/2" => Some(TermLabel::D52),
            _ => None,
        }
    }

    /// Orbital quantum number L.
    pub fn l(self) -> i32 {
        match self {
            TermLabel::S12 => 0,
            TermLabel::P12 | TermLabel::P32 => 1,
            TermLabel::D32 | TermLabel::D52 => 2,
        }
    }

    /// Doubled total angular momentum 2J.
    pub fn two_j(self) -> i32 {
        match self {
            TermLabel::S12 | TermLabel::P12 => 1,
            TermLabel::D32 | TermLabel::P32 => 3,
            TermLabel::D52 => 5,
        }
    }

    pub fn multiplicity(self) -> usize {
        (self.two_j() + 1) as usize
    }
}

impl fmt::Display for TermLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TermLabel::S12 => "S1/2",
            TermLabel::P12 => "P1/2",
            TermLabel::D32 => "D3/2",
            TermLabel::P32 => "P3/2",
            TermLabel::D52 => "D5/2",
        };
        write!(f, "{s}")
    }
}

/// Lande g-factor `3/2 + [S(S+1) - L(L+1)] / (2 J(J+1))` for doubled
/// spin/total angular momenta.
pub fn lande_g(l: i32, two_s: i32, two_j: i32) -> Result<f64> {
    if l < 0 || two_s < 0 || two_j <= 0 {
        return Err(Error::domain(format!(
            "invalid angular momenta (L={l}, 2S={two_s}, 2J={two_j})"
        )));
    }
    if two_j < (2 * l - two_s).abs() || two_j > 2 * l + two_s {
        return Err(Error::domain(format!(
            "(L={l}, 2S={two_s}, 2J={two_j}) violates the coupling triangle"
        )));
    }
    let s = two_s as f64 / 2.0;
    let j = two_j as f64 / 2.0;
    let lf = l as f64;
    Ok(1.5 + (s * (s + 1.0) - lf * (lf + 1.0)) / (2.0 * j * (j + 1.0)))
}

/// One fine-structure term with its quantum numbers, g-factor and energy
/// offset (rad/s relative to S1/2).
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub label: TermLabel,
    pub l: i32,
    pub two_s: i32,
    pub two_j: i32,
    pub g_j: f64,
    pub energy_offset: f64,
}

/// cm^-1 to rad/s: 2 pi c / (1 cm).
const RAD_S_PER_CM: f64 = 2.0 * std::f64::consts::PI * 2.99792458e10;

impl Term {
    pub fn from_constants(label: TermLabel, constants: &IonConstants) -> Result<Self> {
        let g_j = match constants.g_j_override.get(&label) {
            Some(&g) => g,
            None => lande_g(label.l(), 1, label.two_j())?,
        };
        Ok(Term {
            label,
            l: label.l(),
            two_s: 1,
            two_j: label.two_j(),
            g_j,
            energy_offset: constants.energy_cm[&label] * RAD_S_PER_CM,
        })
    }
}

/// A single Zeeman sublevel |term, mJ>.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Sublevel {
    pub term: TermLabel,
    pub two_mj: i32,
}

impl fmt::Display for Sublevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.two_mj % 2 == 0 {
            write!(f, "|{}, mJ={}>", self.term, self.two_mj / 2)
        } else {
            write!(f, "|{}, mJ={}/2>", self.term, self.two_mj)
        }
    }
}

/// The ordered sublevel basis: S1/2, P1/2, D3/2, P3/2, D5/2 with mJ
/// ascending inside each term. 18 states for the full ion.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    sublevels: Vec<Sublevel>,
    terms: Vec<Term>,
    ranges: Vec<(TermLabel, std::ops::Range<usize>)>,
}

impl Basis {
    pub fn full(constants: &IonConstants) -> Result<Self> {
        let mut sublevels = Vec::with_capacity(18);
        let mut terms = Vec::with_capacity(5);
        let mut ranges = Vec::with_capacity(5);
        for label in TermLabel::ALL {
            let term = Term::from_constants(label, constants)?;
            let start = sublevels.len();
            let two_j = label.two_j();
            let mut two_mj = -two_j;
            while two_mj <= two_j {
                sublevels.push(Sublevel { term: label, two_mj });
                two_mj += 2;
            }
            ranges.push((label, start..sublevels.len()));
            terms.push(term);
        }
        Ok(Basis {
            sublevels,
            terms,
            ranges,
        })
    }

    pub fn len(&self) -> usize {
        self.sublevels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sublevels.is_empty()
    }

    pub fn sublevel(&self, i: usize) -> Sublevel {
        self.sublevels[i]
    }

    pub fn sublevels(&self) -> &[Sublevel] {
        &self.sublevels
    }

    pub fn term(&self, label: TermLabel) -> &Term {
        self.terms
            .iter()
            .find(|t| t.label == label)
            .expect("full basis holds all five terms")
    }

    pub fn term_range(&self, label: TermLabel) -> std::ops::Range<usize> {
        self.ranges
            .iter()
            .find(|(l, _)| *l == label)
            .map(|(_, r)| r.clone())
            .expect("full basis holds all five terms")
    }

    pub fn index_of(&self, term: TermLabel, two_mj: i32) -> Option<usize> {
        let range = self.term_range(term);
        let two_j = term.two_j();
        if two_mj < -two_j || two_mj > two_j || (two_mj - two_j) % 2 != 0 {
            return None;
        }
        Some(range.start + ((two_mj + two_j) / 2) as usize)
    }

    /// Projector onto one term's subspace.
    pub fn projector(&self, label: TermLabel) -> Array2<C64> {
        let d = self.len();
        let mut p = Array2::zeros((d, d));
        for i in self.term_range(label) {
            p[(i, i)] = C64::new(1.0, 0.0);
        }
        p
    }

    /// Total population of one term in a density matrix.
    pub fn term_population(&self, rho: &Array2<C64>, label: TermLabel) -> f64 {
        self.term_range(label).map(|i| rho[(i, i)].re).sum()
    }
}

/// One dipole decay channel upper -> lower with its partial rate (rad/s-
/// compatible s^-1) and informational wavelength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionChannel {
    pub lower: TermLabel,
    pub upper: TermLabel,
    pub wavelength_nm: f64,
    pub gamma_partial: f64,
}

impl TransitionChannel {
    pub fn from_constants(upper: TermLabel, lower: TermLabel, constants: &IonConstants) -> Self {
        TransitionChannel {
            lower,
            upper,
            wavelength_nm: constants.wavelength_nm(upper, lower),
            gamma_partial: constants.gamma_partial[&(upper, lower)],
        }
    }
}

/// Unit conversions and the Bohr magneton; the single source of truth for
/// every constant used downstream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// mu_B / h in MHz per gauss.
    pub mu_b_over_h_mhz_per_gauss: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        PhysicalConstants {
            mu_b_over_h_mhz_per_gauss: 1.3996245,
        }
    }
}

impl PhysicalConstants {
    pub const TESLA_PER_GAUSS: f64 = 1e-4;

    pub fn from_ion(constants: &IonConstants) -> Self {
        PhysicalConstants {
            mu_b_over_h_mhz_per_gauss: constants.mu_b_over_h_mhz_per_gauss,
        }
    }

    pub fn mhz_to_rad_s(f_mhz: f64) -> f64 {
        2.0 * std::f64::consts::PI * 1e6 * f_mhz
    }

    pub fn rad_s_to_mhz(w: f64) -> f64 {
        w / (2.0 * std::f64::consts::PI * 1e6)
    }

    /// Zeeman prefactor mu_B B / hbar in rad/s for a field in gauss.
    pub fn zeeman_rad_s(&self, b_gauss: f64) -> f64 {
        Self::mhz_to_rad_s(self.mu_b_over_h_mhz_per_gauss * b_gauss)
    }
}

/// Magnetic field vector in gauss, lab frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldVector {
    pub bx: f64,
    pub by: f64,
    pub bz: f64,
}

impl FieldVector {
    pub const ZERO: FieldVector = FieldVector {
        bx: 0.0,
        by: 0.0,
        bz: 0.0,
    };

    pub fn new(bx: f64, by: f64, bz: f64) -> Self {
        FieldVector { bx, by, bz }
    }

    pub fn along(axis: [f64; 3], magnitude: f64) -> Self {
        let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        FieldVector {
            bx: magnitude * axis[0] / norm,
            by: magnitude * axis[1] / norm,
            bz: magnitude * axis[2] / norm,
        }
    }

    pub fn magnitude(&self) -> f64 {
        (self.bx * self.bx + self.by * self.by + self.bz * self.bz).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.bx.is_finite() && self.by.is_finite() && self.bz.is_finite()
    }
}

/// Laser polarization in the spherical basis `(e_{-1}, e_0, e_{+1})`
/// relative to the lab z quantization axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarizationVector {
    pub q_minus: C64,
    pub q_zero: C64,
    pub q_plus: C64,
}

impl PolarizationVector {
    /// Linear along x: `(1/sqrt2, 0, -1/sqrt2)`.
    pub fn linear_x() -> Self {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        PolarizationVector {
            q_minus: C64::new(r, 0.0),
            q_zero: ZERO,
            q_plus: C64::new(-r, 0.0),
        }
    }

    /// Linear along y: `(i/sqrt2, 0, i/sqrt2)`.
    pub fn linear_y() -> Self {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        PolarizationVector {
            q_minus: C64::new(0.0, r),
            q_zero: ZERO,
            q_plus: C64::new(0.0, r),
        }
    }

    /// Linear along z (pi light): `(0, 1, 0)`.
    pub fn linear_z() -> Self {
        PolarizationVector {
            q_minus: ZERO,
            q_zero: C64::new(1.0, 0.0),
            q_plus: ZERO,
        }
    }

    pub fn components(&self) -> [(i32, C64); 3] {
        [(-1, self.q_minus), (0, self.q_zero), (1, self.q_plus)]
    }

    pub fn norm_sq(&self) -> f64 {
        self.q_minus.norm_sqr() + self.q_zero.norm_sqr() + self.q_plus.norm_sqr()
    }

    pub fn validate(&self) -> Result<()> {
        if (self.norm_sq() - 1.0).abs() > 1e-10 {
            return Err(Error::domain(format!(
                "polarization not normalized: |e|^2 = {}",
                self.norm_sq()
            )));
        }
        Ok(())
    }
}

/// Zeeman Hamiltonian `(mu_B/hbar) sum_terms g_J (B . J)`, rad/s. Hermitian
/// and block-diagonal over terms; exactly zero at zero field.
pub fn zeeman_hamiltonian(
    basis: &Basis,
    field: &FieldVector,
    constants: &PhysicalConstants,
) -> Array2<C64> {
    let d = basis.len();
    let mut h = Array2::zeros((d, d));
    for label in TermLabel::ALL {
        let term = basis.term(label);
        let range = basis.term_range(label);
        let two_j = term.two_j;
        let block = {
            let jx = angular::jx_matrix(two_j);
            let jy = angular::jy_matrix(two_j);
            let jz = angular::jz_matrix(two_j);
            let pref = constants.zeeman_rad_s(1.0) * term.g_j;
            jx.mapv(|z| z * C64::new(pref * field.bx, 0.0))
                + jy.mapv(|z| z * C64::new(pref * field.by, 0.0))
                + jz.mapv(|z| z * C64::new(pref * field.bz, 0.0))
        };
        h.slice_mut(ndarray::s![range.clone(), range]).assign(&block);
    }
    h
}

/// Dimensionless raising-structure coupling operator for one laser:
/// `V = sum_q e_q sum_m <J_l m; 1 q | J_u m+q> |u, m+q><l, m|`.
///
/// The drive Hamiltonian is then `(Omega/2) (V + V^dag)`.
pub fn coupling_operator(
    basis: &Basis,
    channel: &TransitionChannel,
    pol: &PolarizationVector,
) -> Result<Array2<C64>> {
    pol.validate()?;
    let d = basis.len();
    let two_jl = channel.lower.two_j();
    let two_ju = channel.upper.two_j();
    let mut v = Array2::zeros((d, d));
    for (q, eps) in pol.components() {
        if eps == ZERO {
            continue;
        }
        let mut two_m = -two_jl;
        while two_m <= two_jl {
            let two_mu = two_m + 2 * q;
            if let (Some(li), Some(ui)) = (
                basis.index_of(channel.lower, two_m),
                basis.index_of(channel.upper, two_mu),
            ) {
                let c = cg_coefficient(two_jl, two_m, 2, 2 * q, two_ju, two_mu);
                v[(ui, li)] += eps * C64::new(c, 0.0);
            }
            two_m += 2;
        }
    }
    Ok(v)
}

/// The three spherical jump operators of one decay channel:
/// `A_q = sqrt(gamma_partial) sum_m <J_l m; 1 q | J_u m+q> |l, m><u, m+q|`.
///
/// Their completeness sum `sum_q A_q^dag A_q` is `gamma_partial` times the
/// identity on the upper-term subspace.
pub fn jump_operators(basis: &Basis, channel: &TransitionChannel) -> [Array2<C64>; 3] {
    let d = basis.len();
    let two_jl = channel.lower.two_j();
    let two_ju = channel.upper.two_j();
    let root = channel.gamma_partial.sqrt();
    let mut ops = [
        Array2::zeros((d, d)),
        Array2::zeros((d, d)),
        Array2::zeros((d, d)),
    ];
    for (k, q) in [-1i32, 0, 1].into_iter().enumerate() {
        let mut two_m = -two_jl;
        while two_m <= two_jl {
            let two_mu = two_m + 2 * q;
            if let (Some(li), Some(ui)) = (
                basis.index_of(channel.lower, two_m),
                basis.index_of(channel.upper, two_mu),
            ) {
                let c = cg_coefficient(two_jl, two_m, 2, 2 * q, two_ju, two_mu);
                ops[k][(li, ui)] = C64::new(root * c, 0.0);
            }
            two_m += 2;
        }
    }
    ops
}
