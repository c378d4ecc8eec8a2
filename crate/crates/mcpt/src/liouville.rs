//! Rotating-frame Hamiltonian and Lindblad superoperator assembly.
//!
//! Vectorization is column-stacking (see [`crate::linalg`]); under it the
//! coherent part of the generator is `-i[(I x H) - (H^T x I)]` and a jump
//! operator `A` contributes `conj(A) x A - (1/2) I x A^dag A - (1/2)
//! (A^dag A)^T x I`.

use std::collections::BTreeMap;

use ndarray::{linalg::kron, Array2};
use num_complex::Complex64 as C64;

use crate::atomic::{
    Basis, FieldVector, PhysicalConstants, PolarizationVector, TermLabel, TransitionChannel,
};
use crate::error::{Error, Result};
use crate::linalg::{dagger, unvec_mat, vec_mat, ONE};

/// One laser drive on a dipole channel.
#[derive(Debug, Clone, PartialEq)]
pub struct LaserDrive {
    pub channel: TransitionChannel,
    /// Detuning from the channel resonance, rad/s.
    pub detuning: f64,
    /// Saturation parameter `s = 2 Omega^2 / Gamma^2` with `Gamma` the total
    /// linewidth of the channel's upper term.
    pub saturation: f64,
    pub polarization: PolarizationVector,
    /// Lorentzian laser linewidth as a coherence decay rate, rad/s.
    pub linewidth: f64,
    pub enabled: bool,
}

impl LaserDrive {
    pub fn validate(&self) -> Result<()> {
        if self.saturation < 0.0 {
            return Err(Error::domain("saturation must be non-negative"));
        }
        if self.linewidth < 0.0 {
            return Err(Error::domain("laser linewidth must be non-negative"));
        }
        self.polarization.validate()
    }
}

/// Rabi frequency from a saturation parameter, `Omega = Gamma sqrt(s/2)`.
pub fn rabi_from_saturation(saturation: f64, gamma_total: f64) -> Result<f64> {
    if saturation < 0.0 {
        return Err(Error::domain("saturation must be non-negative"));
    }
    if gamma_total <= 0.0 {
        return Err(Error::domain("gamma_total must be positive"));
    }
    Ok(gamma_total * (saturation / 2.0).sqrt())
}

/// Per-term energy shifts that make every enabled drive time-independent.
#[derive(Debug, Clone, PartialEq)]
pub struct RotatingFrameShifts {
    shifts: BTreeMap<TermLabel, f64>,
}

impl RotatingFrameShifts {
    pub fn shift(&self, term: TermLabel) -> f64 {
        *self.shifts.get(&term).unwrap_or(&0.0)
    }
}

/// Solve the tree constraints `shift(upper) - shift(lower) = -detuning` over
/// the enabled-laser graph, anchoring S1/2 (and the first term of any
/// disconnected component) at zero.
///
/// A loop whose accumulated detunings are inconsistent has no rotating frame
/// and is rejected.
pub fn rotating_frame_shifts(lasers: &[LaserDrive]) -> Result<RotatingFrameShifts> {
    let mut shifts: BTreeMap<TermLabel, f64> = BTreeMap::new();
    let enabled: Vec<&LaserDrive> = lasers.iter().filter(|l| l.enabled).collect();

    // BFS over components in canonical term order so the assignment is stable.
    for root in TermLabel::ALL {
        if shifts.contains_key(&root) {
            continue;
        }
        let touched = enabled
            .iter()
            .any(|l| l.channel.lower == root || l.channel.upper == root);
        if !touched && root != TermLabel::S12 {
            shifts.insert(root, 0.0);
            continue;
        }
        shifts.insert(root, 0.0);
        let mut queue = vec![root];
        while let Some(node) = queue.pop() {
            let node_shift = shifts[&node];
            for laser in &enabled {
                let (lo, up) = (laser.channel.lower, laser.channel.upper);
                let (next, next_shift) = if lo == node {
                    (up, node_shift - laser.detuning)
                } else if up == node {
                    (lo, node_shift + laser.detuning)
                } else {
                    continue;
                };
                match shifts.get(&next) {
                    None => {
                        shifts.insert(next, next_shift);
                        queue.push(next);
                    }
                    Some(&existing) => {
                        if (existing - next_shift).abs() > 1e-6 {
                            return Err(Error::UnsupportedConfiguration(format!(
                                "laser graph loop with inconsistent detunings at {next}: \
                                 no consistent rotating frame ({existing} vs {next_shift} rad/s)"
                            )));
                        }
                    }
                }
            }
        }
    }
    Ok(RotatingFrameShifts { shifts })
}

/// Rotating-frame Hamiltonian: Zeeman term, frame shifts, and drive
/// couplings `(Omega/2)(V + V^dag)` for every enabled laser.
pub fn build_hamiltonian(
    basis: &Basis,
    lasers: &[LaserDrive],
    field: &FieldVector,
    constants: &PhysicalConstants,
    gamma_totals: &BTreeMap<TermLabel, f64>,
) -> Result<Array2<C64>> {
    let mut h = crate::atomic::zeeman_hamiltonian(basis, field, constants);
    let frame = rotating_frame_shifts(lasers)?;
    for label in TermLabel::ALL {
        let s = frame.shift(label);
        for i in basis.term_range(label) {
            h[(i, i)] += C64::new(s, 0.0);
        }
    }
    for laser in lasers.iter().filter(|l| l.enabled) {
        laser.validate()?;
        let gamma = *gamma_totals.get(&laser.channel.upper).ok_or_else(|| {
            Error::domain(format!("no total linewidth for {}", laser.channel.upper))
        })?;
        let omega = rabi_from_saturation(laser.saturation, gamma)?;
        let v = crate::atomic::coupling_operator(basis, &laser.channel, &laser.polarization)?;
        let half = C64::new(omega / 2.0, 0.0);
        h = h + v.mapv(|z| z * half) + dagger(&v).mapv(|z| z * half);
    }
    Ok(h)
}

/// Dense superoperator acting on column-stacked density matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Superoperator {
    mat: Array2<C64>,
    dim: usize,
}

impl Superoperator {
    pub fn new(mat: Array2<C64>) -> Result<Self> {
        let n = mat.nrows();
        if mat.ncols() != n {
            return Err(Error::domain("superoperator must be square"));
        }
        let dim = (n as f64).sqrt().round() as usize;
        if dim * dim != n {
            return Err(Error::domain("superoperator side must be a perfect square"));
        }
        Ok(Superoperator { mat, dim })
    }

    pub fn zeros(dim: usize) -> Self {
        Superoperator {
            mat: Array2::zeros((dim * dim, dim * dim)),
            dim,
        }
    }

    /// Hilbert-space dimension `d`; the matrix is `d^2 x d^2`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.mat
    }

    pub fn into_matrix(self) -> Array2<C64> {
        self.mat
    }

    /// Apply to a density matrix: `unvec(L vec(rho))`.
    pub fn apply(&self, rho: &Array2<C64>) -> Array2<C64> {
        unvec_mat(&self.mat.dot(&vec_mat(rho)))
    }

    pub fn add_assign(&mut self, other: &Superoperator) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::domain(format!(
                "superoperator dimension mismatch: {} vs {}",
                self.dim, other.dim
            )));
        }
        self.mat = &self.mat + &other.mat;
        Ok(())
    }

    pub fn scale(&self, factor: f64) -> Superoperator {
        Superoperator {
            mat: self.mat.mapv(|z| z * C64::new(factor, 0.0)),
            dim: self.dim,
        }
    }
}

/// Lindblad dissipator of a set of jump operators, as a superoperator:
/// `D(rho) = sum_k A_k rho A_k^dag - (1/2){A_k^dag A_k, rho}`.
pub fn dissipator(jumps: &[Array2<C64>]) -> Result<Superoperator> {
    let d = match jumps.first() {
        Some(a) => a.nrows(),
        None => return Err(Error::domain("dissipator of an empty jump list has no dimension")),
    };
    dissipator_dim(jumps, d)
}

/// Like [`dissipator`] but usable with an empty jump list.
pub fn dissipator_dim(jumps: &[Array2<C64>], dim: usize) -> Result<Superoperator> {
    let ident = Array2::<C64>::eye(dim);
    let mut total = Array2::<C64>::zeros((dim * dim, dim * dim));
    for a in jumps {
        if a.nrows() != dim || a.ncols() != dim {
            return Err(Error::domain(format!(
                "jump operator is {}x{}, expected {dim}x{dim}",
                a.nrows(),
                a.ncols()
            )));
        }
        let ada = dagger(a).dot(a);
        let sandwich = kron(&a.mapv(|z| z.conj()), a);
        let left = kron(&ident, &ada);
        let right = kron(&ada.t().to_owned(), &ident);
        total = total + sandwich - left.mapv(|z| 0.5 * z) - right.mapv(|z| 0.5 * z);
    }
    Superoperator::new(total)
}

/// Pure dephasing of a driven channel from the laser linewidth: jump
/// operator `sqrt(2 linewidth) P_upper`, which damps lower-upper coherences
/// at exactly `linewidth` without moving population.
pub fn dephasing_dissipator(
    linewidth: f64,
    channel: &TransitionChannel,
    basis: &Basis,
) -> Result<Superoperator> {
    if linewidth < 0.0 {
        return Err(Error::domain("linewidth must be non-negative"));
    }
    if linewidth == 0.0 {
        return Ok(Superoperator::zeros(basis.len()));
    }
    let jump = basis
        .projector(channel.upper)
        .mapv(|z| z * C64::new((2.0 * linewidth).sqrt(), 0.0));
    dissipator(&[jump])
}

/// Full generator `L = -i[(I x H) - (H^T x I)] + sum_k D_k`.
pub fn assemble_liouvillian(h: &Array2<C64>, dissipators: &[Superoperator]) -> Result<Superoperator> {
    let d = h.nrows();
    if h.ncols() != d {
        return Err(Error::domain("Hamiltonian must be square"));
    }
    let ident = Array2::<C64>::eye(d);
    let minus_i = C64::new(0.0, -1.0);
    let coherent = (kron(&ident, h) - kron(&h.t().to_owned(), &ident)).mapv(|z| z * minus_i);
    let mut total = Superoperator::new(coherent)?;
    for dk in dissipators {
        total.add_assign(dk)?;
    }
    Ok(total)
}

/// Write an operator in the plain-text matrix format used by golden tests:
/// first line `rows cols`, then one row per line as `re im` pairs.
pub fn write_operator_text(m: &Array2<C64>, out: &mut impl std::io::Write) -> std::io::Result<()> {
    writeln!(out, "{} {}", m.nrows(), m.ncols())?;
    for row in m.rows() {
        let line: Vec<String> = row
            .iter()
            .map(|z| format!("{:.17e} {:.17e}", z.re, z.im))
            .collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn read_operator_text(text: &str) -> Result<Array2<C64>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::config("empty operator text"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::config("bad operator header")))
        .collect::<Result<_>>()?;
    if dims.len() != 2 {
        return Err(Error::config("operator header must be `rows cols`"));
    }
    let (rows, cols) = (dims[0], dims[1]);
    let mut m = Array2::from_elem((rows, cols), ONE * C64::new(0.0, 0.0));
    for (i, line) in lines.enumerate() {
        if i >= rows {
            return Err(Error::config("too many rows in operator text"));
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::config("bad operator entry")))
            .collect::<Result<_>>()?;
        if vals.len() != 2 * cols {
            return Err(Error::Config(format!(
                "row {i} has {} numbers, expected {}",
                vals.len(),
                2 * cols
            )));
        }
        for j in 0..cols {
            m[(i, j)] = C64::new(vals[2 * j], vals[2 * j + 1]);
        }
    }
    Ok(m)
}

/// Maximum absolute value of `Tr(L rho)` over the canonical matrix units;
/// equivalently the norm of the trace row functional of `L`.
pub fn trace_annihilation_defect(l: &Superoperator) -> f64 {
    let d = l.dim();
    let mut worst = 0.0f64;
    for col in 0..d * d {
        let mut tr = C64::new(0.0, 0.0);
        for k in 0..d {
            tr += l.matrix()[(k + k * d, col)];
        }
        worst = worst.max(tr.norm());
    }
    worst
}
