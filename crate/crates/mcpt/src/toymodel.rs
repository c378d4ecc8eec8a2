//! Four-level pedagogical model: ground |g>, excited |e>, and a metastable
//! pair |+>, |-> split by delta. One laser drives g-e, a second drives both
//! +-e and --e with equal strength. With the pair degenerate the
//! antisymmetric combination decouples and the atom goes dark.

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::liouville::{assemble_liouvillian, dissipator, Superoperator};
use crate::solve::{joint_dark_states, steady_state, DensityMatrix};

pub const G: usize = 0;
pub const E: usize = 1;
pub const PLUS: usize = 2;
pub const MINUS: usize = 3;
pub const DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyParams {
    /// Detuning of the laser on g-e, rad/s.
    pub delta_l: f64,
    /// Detuning of the laser on the +/- pair, rad/s.
    pub delta_p: f64,
    /// Splitting of |+> and |->, rad/s.
    pub delta: f64,
    pub omega_l: f64,
    pub omega_p: f64,
    /// Total decay rate of |e>, rad/s.
    pub gamma: f64,
    /// Branching fractions of |e> decay into (g, +, -); sums to one.
    pub branching: [f64; 3],
}

impl Default for ToyParams {
    fn default() -> Self {
        ToyParams {
            delta_l: 0.0,
            delta_p: 0.0,
            delta: 0.0,
            omega_l: 0.3,
            omega_p: 0.3,
            gamma: 1.0,
            branching: [1.0 / 3.0; 3],
        }
    }
}

impl ToyParams {
    pub fn validate(&self) -> Result<()> {
        if self.gamma <= 0.0 {
            return Err(Error::domain("gamma must be positive"));
        }
        if self.branching.iter().any(|&b| b < 0.0) {
            return Err(Error::domain("branching fractions must be non-negative"));
        }
        let sum: f64 = self.branching.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!("branching fractions sum to {sum}, not 1")));
        }
        Ok(())
    }
}

/// Rotating-frame Hamiltonian, basis order (g, e, +, -).
pub fn build_toy_hamiltonian(p: &ToyParams) -> Array2<C64> {
    let mut h = Array2::<C64>::zeros((DIM, DIM));
    h[(E, E)] = C64::new(-p.delta_l, 0.0);
    h[(PLUS, PLUS)] = C64::new(p.delta_p - p.delta_l + p.delta / 2.0, 0.0);
    h[(MINUS, MINUS)] = C64::new(p.delta_p - p.delta_l - p.delta / 2.0, 0.0);
    h[(G, E)] = C64::new(p.omega_l / 2.0, 0.0);
    h[(E, G)] = C64::new(p.omega_l / 2.0, 0.0);
    h[(PLUS, E)] = C64::new(p.omega_p / 2.0, 0.0);
    h[(E, PLUS)] = C64::new(p.omega_p / 2.0, 0.0);
    h[(MINUS, E)] = C64::new(p.omega_p / 2.0, 0.0);
    h[(E, MINUS)] = C64::new(p.omega_p / 2.0, 0.0);
    h
}

/// The total drive coupling (raising structure). Both lasers excite the
/// same |e>, so darkness is about their combined amplitude cancelling, not
/// about each one separately.
pub fn toy_coupling(p: &ToyParams) -> Array2<C64> {
    let mut v = Array2::<C64>::zeros((DIM, DIM));
    v[(E, G)] = C64::new(p.omega_l / 2.0, 0.0);
    v[(E, PLUS)] = C64::new(p.omega_p / 2.0, 0.0);
    v[(E, MINUS)] = C64::new(p.omega_p / 2.0, 0.0);
    v
}

/// Full 16 x 16 Lindblad generator of the model.
pub fn build_toy_liouvillian(p: &ToyParams) -> Result<Superoperator> {
    p.validate()?;
    let h = build_toy_hamiltonian(p);
    let mut jumps = Vec::new();
    for (target, frac) in [(G, p.branching[0]), (PLUS, p.branching[1]), (MINUS, p.branching[2])] {
        if frac > 0.0 {
            let mut a = Array2::<C64>::zeros((DIM, DIM));
            a[(target, E)] = C64::new((p.gamma * frac).sqrt(), 0.0);
            jumps.push(a);
        }
    }
    assemble_liouvillian(&h, &[dissipator(&jumps)?])
}

/// The dark vectors of the model: joint kernel of both couplings that
/// diagonalizes H.
pub fn toy_dark_states(p: &ToyParams) -> Result<Vec<(Array1<C64>, f64)>> {
    let h = build_toy_hamiltonian(p);
    joint_dark_states(&h, &[toy_coupling(p)], 1e-10)
}

/// The antisymmetric metastable combination `(|+> - |->)/sqrt(2)`.
pub fn antisymmetric_state() -> Array1<C64> {
    let mut v = Array1::<C64>::zeros(DIM);
    let r = std::f64::consts::FRAC_1_SQRT_2;
    v[PLUS] = C64::new(r, 0.0);
    v[MINUS] = C64::new(-r, 0.0);
    v
}

/// Steady-state scattering rate `gamma * rho_ee` over a grid of splittings.
pub fn toy_fluorescence_vs_delta(p: &ToyParams, delta_grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    use rayon::prelude::*;
    p.validate()?;
    let rho0 = DensityMatrix::pure(DIM, G);
    delta_grid
        .par_iter()
        .map(|&delta| {
            let params = ToyParams { delta, ..*p };
            let l = build_toy_liouvillian(&params)?;
            let rho = steady_state(&l, &rho0, 1e-9)?;
            Ok((delta, params.gamma * rho.population(E)))
        })
        .collect()
}
