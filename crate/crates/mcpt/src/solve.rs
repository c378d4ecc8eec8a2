//! Steady states, Liouvillian spectra, dark-state analysis, perturbative
//! field derivatives, and time evolution.
//!
//! The asymptotic state is defined as the spectral projection of the initial
//! state onto the zero-eigenvalue subspace; at zero field that subspace is
//! degenerate (the dark manifold) and the projection is what makes the
//! steady state well defined at all.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, Norm, OperationNorm, SVD, UPLO};
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::atomic::{Basis, FieldVector, TermLabel};
use crate::error::{Error, Result};
use crate::linalg::{
    bordered_kernel_solve, dagger, eig_full, expm, hermitize, loglog_slope, max_abs, trace,
    unvec_mat, vec_mat, EigenPairs, ONE, ZERO,
};
use crate::liouville::Superoperator;
use crate::model::CompiledModel;

/// A trace-one Hermitian positive density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    mat: Array2<C64>,
}

impl DensityMatrix {
    pub fn new(mat: Array2<C64>) -> Result<Self> {
        let dm = DensityMatrix { mat };
        dm.validate()?;
        Ok(dm)
    }

    /// Wrap without validation; for intermediate states that are checked later.
    pub fn new_unchecked(mat: Array2<C64>) -> Self {
        DensityMatrix { mat }
    }

    /// Pure state |i><i|.
    pub fn pure(dim: usize, i: usize) -> Self {
        let mut m = Array2::zeros((dim, dim));
        m[(i, i)] = ONE;
        DensityMatrix { mat: m }
    }

    /// Equal classical mixture of the listed basis states.
    pub fn mixture(dim: usize, indices: &[usize]) -> Self {
        let mut m = Array2::zeros((dim, dim));
        let w = C64::new(1.0 / indices.len() as f64, 0.0);
        for &i in indices {
            m[(i, i)] = w;
        }
        DensityMatrix { mat: m }
    }

    /// The initial state used throughout: a diagonal mixture over the two
    /// S1/2 sublevels.
    pub fn s_mixture(basis: &Basis) -> Self {
        let idx: Vec<usize> = basis.term_range(TermLabel::S12).collect();
        Self::mixture(basis.len(), &idx)
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        let mut m = Array2::zeros((dim, dim));
        let w = C64::new(1.0 / dim as f64, 0.0);
        for i in 0..dim {
            m[(i, i)] = w;
        }
        DensityMatrix { mat: m }
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.mat
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn population(&self, i: usize) -> f64 {
        self.mat[(i, i)].re
    }

    pub fn validate(&self) -> Result<()> {
        let scale = max_abs(&self.mat).max(1e-300);
        if max_abs(&(&self.mat - &dagger(&self.mat))) > 1e-12 * scale.max(1.0) {
            return Err(Error::numerical("density matrix is not Hermitian"));
        }
        let tr = trace(&self.mat);
        if (tr.re - 1.0).abs() > 1e-10 || tr.im.abs() > 1e-10 {
            return Err(Error::Numerical(format!("density matrix trace is {tr}")));
        }
        let herm = hermitize(&self.mat);
        let (vals, _) = herm
            .eigh(UPLO::Upper)
            .map_err(|e| Error::Numerical(format!("eigh failed: {e}")))?;
        if vals.iter().any(|&x| x < -1e-9) {
            return Err(Error::Numerical(format!(
                "density matrix has negative eigenvalue {}",
                vals.iter().cloned().fold(f64::MAX, f64::min)
            )));
        }
        Ok(())
    }

    fn sanitized(mat: Array2<C64>) -> Result<Self> {
        let herm = hermitize(&mat);
        let tr = trace(&herm);
        if tr.norm() < 1e-14 {
            return Err(Error::numerical("candidate steady state has zero trace"));
        }
        let normed = herm.mapv(|z| z / tr);
        DensityMatrix::new(normed)
    }
}

/// One eigenpair of the Liouvillian, materialized as d x d matrices.
#[derive(Debug, Clone)]
pub struct SpectralMode {
    pub eigenvalue: C64,
    pub right: Array2<C64>,
    pub left: Array2<C64>,
    /// Weight `<left, rho0>` against the reference initial state.
    pub overlap: C64,
}

impl SpectralMode {
    /// Decay rate `-Re(lambda)` in s^-1.
    pub fn decay_rate(&self) -> f64 {
        -self.eigenvalue.re
    }
}

/// Full spectrum of a Liouvillian, sorted by |Re lambda| ascending.
///
/// Right/left eigenvectors are stored as the eigenvector matrix and its
/// inverse; individual modes are materialized on demand.
pub struct Spectrum {
    dim: usize,
    order: Vec<usize>,
    values: Array1<C64>,
    right: Array2<C64>,
    right_inv: Array2<C64>,
    overlaps: Array1<C64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Hilbert-space dimension d.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Eigenvalue of the k-th mode in sorted order.
    pub fn value(&self, k: usize) -> C64 {
        self.values[self.order[k]]
    }

    pub fn overlap(&self, k: usize) -> C64 {
        self.overlaps[self.order[k]]
    }

    /// Largest |lambda|; the natural scale for zero-mode tolerances.
    pub fn scale(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn mode(&self, k: usize) -> SpectralMode {
        let raw = self.order[k];
        let right = unvec_mat(&self.right.column(raw).to_owned());
        let left_vec: Array1<C64> = self.right_inv.row(raw).mapv(|z| z.conj());
        SpectralMode {
            eigenvalue: self.values[raw],
            right,
            left: unvec_mat(&left_vec),
            overlap: self.overlaps[raw],
        }
    }

    /// Sorted indices whose eigenvalue magnitude is below `tol_abs`.
    pub fn kernel_indices(&self, tol_abs: f64) -> Vec<usize> {
        (0..self.len())
            .filter(|&k| self.value(k).norm() < tol_abs)
            .collect()
    }

    /// Reconstruct `sum_i right_i <left_i, rho0>`; equals rho0 when the
    /// eigenbasis is complete.
    pub fn reconstruct(&self, rho0: &Array2<C64>) -> Array2<C64> {
        let coef = self.right_inv.dot(&vec_mat(rho0));
        unvec_mat(&self.right.dot(&coef))
    }

    /// Absolute-diagonal population weight of mode `k` per term manifold.
    pub fn term_weights(&self, k: usize, basis: &Basis) -> std::collections::BTreeMap<TermLabel, f64> {
        let mode = self.mode(k);
        term_weights_of(&mode.right, basis)
    }
}

/// Normalized absolute-diagonal weights of an eigen-matrix per term.
pub fn term_weights_of(
    mat: &Array2<C64>,
    basis: &Basis,
) -> std::collections::BTreeMap<TermLabel, f64> {
    let total: f64 = mat.diag().iter().map(|z| z.norm()).sum();
    let mut out = std::collections::BTreeMap::new();
    for label in TermLabel::ALL {
        let w: f64 = basis
            .term_range(label)
            .map(|i| mat[(i, i)].norm())
            .sum();
        out.insert(label, if total > 0.0 { w / total } else { 0.0 });
    }
    out
}

/// All d^2 eigenpairs of `l`, biorthogonalized, with overlaps against `rho0`.
pub fn liouvillian_spectrum(l: &Superoperator, rho0: &DensityMatrix) -> Result<Spectrum> {
    let EigenPairs {
        values,
        right,
        right_inv,
    } = eig_full(l.matrix())?;
    let overlaps = right_inv.dot(&vec_mat(rho0.matrix()));
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[a]
            .re
            .abs()
            .total_cmp(&values[b].re.abs())
            .then(values[a].im.total_cmp(&values[b].im))
            .then(a.cmp(&b))
    });
    Ok(Spectrum {
        dim: l.dim(),
        order,
        values,
        right,
        right_inv,
        overlaps,
    })
}

/// Right kernel basis `R` (n x k) and biorthogonal left rows `W` (k x n,
/// `W R = I`) of a Liouvillian, from its SVD. `P = R W` is the spectral
/// projector onto the zero-eigenvalue subspace (the kernel of a Lindbladian
/// is semisimple, so right/left null spaces pair up).
///
/// `tol` is relative to the largest singular value.
pub fn kernel_basis(l: &Superoperator, tol: f64) -> Result<(Array2<C64>, Array2<C64>)> {
    use ndarray_linalg::Inverse;
    let n = l.matrix().nrows();
    let (u, sigma, vt) = l
        .matrix()
        .svd(true, true)
        .map_err(|e| Error::Numerical(format!("SVD failed: {e}")))?;
    let u = u.expect("svd requested u");
    let vt = vt.expect("svd requested vt");
    let smax = sigma.iter().cloned().fold(0.0f64, f64::max).max(1e-300);
    let null: Vec<usize> = (0..n).filter(|&j| sigma[j] < tol * smax).collect();
    let k = null.len();
    if k == 0 {
        return Err(Error::IllConditioned(format!(
            "no singular value below {:.3e} (smallest is {:.3e}); no stationary state found",
            tol * smax,
            sigma.iter().cloned().fold(f64::MAX, f64::min)
        )));
    }
    let mut r = Array2::<C64>::zeros((n, k));
    let mut un = Array2::<C64>::zeros((n, k));
    for (c, &j) in null.iter().enumerate() {
        for i in 0..n {
            r[(i, c)] = vt[(j, i)].conj();
            un[(i, c)] = u[(i, j)];
        }
    }
    let g = dagger(&un).dot(&r);
    let g_inv = g.inv().map_err(|_| {
        Error::Numerical(
            "left/right kernel spaces are orthogonal; zero eigenvalue looks defective".into(),
        )
    })?;
    let w = g_inv.dot(&dagger(&un));
    Ok((r, w))
}

/// Asymptotic state `lim_{t->inf} e^{Lt} rho0`: the projection of `rho0`
/// onto the zero-eigenvalue subspace through the biorthogonal kernel pair.
///
/// `tol` is relative to the spectral scale; singular values below
/// `tol * sigma_max` count as the kernel.
pub fn steady_state(l: &Superoperator, rho0: &DensityMatrix, tol: f64) -> Result<DensityMatrix> {
    let (r, w) = kernel_basis(l, tol)?;
    let coords = w.dot(&vec_mat(rho0.matrix()));
    let rho = unvec_mat(&r.dot(&coords));
    let out = DensityMatrix::sanitized(rho)?;
    // stationarity check against the generator itself
    let lv = l.matrix().dot(&vec_mat(out.matrix()));
    let resid = lv.norm_l2();
    let scale = l.matrix().opnorm_one().unwrap_or(1.0);
    if resid > 1e-9 * scale {
        return Err(Error::IllConditioned(format!(
            "projected state is not stationary: |L rho| = {resid:.3e} vs scale {scale:.3e}"
        )));
    }
    Ok(out)
}

pub fn steady_state_from_spectrum(spec: &Spectrum, tol: f64) -> Result<DensityMatrix> {
    let scale = spec.scale();
    let kernel = spec.kernel_indices(tol * scale);
    if kernel.is_empty() {
        return Err(Error::IllConditioned(format!(
            "no eigenvalue with |Re lambda| < {:.3e} (smallest is {:.3e})",
            tol * scale,
            spec.value(0).norm()
        )));
    }
    let d = spec.dim;
    let mut acc = Array2::<C64>::zeros((d, d));
    for k in kernel {
        let mode = spec.mode(k);
        acc = acc + mode.right.mapv(|z| z * mode.overlap);
    }
    DensityMatrix::sanitized(acc)
}

/// Fast steady state through the bordered kernel solve; valid when the
/// kernel is one-dimensional. The residual check rejects degenerate kernels
/// so callers can fall back to the spectral projection.
pub fn steady_state_direct(l: &Superoperator, residual_tol: f64) -> Result<DensityMatrix> {
    let x = bordered_kernel_solve(l.matrix())?;
    let lx = l.matrix().dot(&x);
    let scale = l.matrix().opnorm_one().unwrap_or(1.0);
    let rel = lx.norm_l2() / (scale * x.norm_l2()).max(1e-300);
    if rel > residual_tol {
        return Err(Error::IllConditioned(format!(
            "bordered steady-state residual {rel:.3e} exceeds {residual_tol:.3e} \
             (degenerate kernel?)"
        )));
    }
    DensityMatrix::sanitized(unvec_mat(&x))
}

/// Steady state of `rho0` under the model at field `b`: the direct solve
/// where the kernel is unique, the spectral projection otherwise.
pub fn steady_state_at(model: &CompiledModel, b: &FieldVector) -> Result<DensityMatrix> {
    let l = model.liouvillian(b);
    match steady_state_direct(&l, 1e-9) {
        Ok(rho) => Ok(rho),
        Err(_) => steady_state(&l, model.rho0(), model.zero_tol()),
    }
}

/// Report on the slowest decaying (bright) mode.
#[derive(Debug, Clone)]
pub struct BrightModeReport {
    pub eigenvalue: C64,
    pub lifetime_s: f64,
    pub overlap: C64,
    /// Normalized absolute-diagonal population weights per term manifold.
    pub weights: std::collections::BTreeMap<TermLabel, f64>,
    /// Index into the sorted spectrum.
    pub index: usize,
}

/// The mode with smallest |Re lambda| among those with |Re lambda| >
/// `dark_tol` (s^-1).
pub fn slowest_bright_mode(
    spec: &Spectrum,
    dark_tol: f64,
    basis: &Basis,
) -> Result<BrightModeReport> {
    let k = (0..spec.len())
        .find(|&k| spec.value(k).re.abs() > dark_tol)
        .ok_or_else(|| {
            Error::domain(format!("no mode with |Re lambda| > dark_tol = {dark_tol:.3e}"))
        })?;
    let rate = spec.value(k).re.abs();
    let mode = spec.mode(k);
    Ok(BrightModeReport {
        eigenvalue: spec.value(k),
        lifetime_s: 1.0 / rate,
        overlap: spec.overlap(k),
        weights: trapped_side_weights(&mode, basis),
        index: k,
    })
}

/// Population decomposition of a decaying mode by term manifold.
///
/// A decaying eigen-matrix is traceless: oriented so it adds to the initial
/// state (positive overlap), its positive diagonal marks the initial excess
/// and its negative diagonal the slowly filling population it keeps out of
/// equilibrium. The latter is where the mode "lives"; weights are the
/// negative side normalized per term.
pub fn trapped_side_weights(
    mode: &SpectralMode,
    basis: &Basis,
) -> std::collections::BTreeMap<TermLabel, f64> {
    let orient = if mode.overlap.re < 0.0 { -1.0 } else { 1.0 };
    let trapped = |i: usize| (-orient * mode.right[(i, i)].re).max(0.0);
    let total: f64 = (0..basis.len()).map(trapped).sum();
    let mut out = std::collections::BTreeMap::new();
    for label in TermLabel::ALL {
        let w: f64 = basis.term_range(label).map(trapped).sum();
        out.insert(label, if total > 0.0 { w / total } else { 0.0 });
    }
    out
}

/// Slowest bright decay rate against field magnitude, with a power-law fit
/// over `fit_window` (gauss).
#[derive(Debug, Clone)]
pub struct DecayRateCurve {
    pub axis: [f64; 3],
    pub points: Vec<(f64, f64)>,
    pub fitted_exponent: Option<f64>,
    pub fit_window: (f64, f64),
}

pub fn decay_rate_vs_field(
    model: &CompiledModel,
    axis: [f64; 3],
    b_grid: &[f64],
    fit_window: (f64, f64),
) -> Result<DecayRateCurve> {
    let points: Result<Vec<(f64, f64)>> = b_grid
        .par_iter()
        .map(|&b| {
            let field = FieldVector::along(axis, b);
            let l = model.liouvillian(&field);
            let spec = liouvillian_spectrum(&l, model.rho0())?;
            // threshold just above the numerical-zero floor: the curve must
            // follow the slowest genuinely decaying branch, which at mG
            // fields sits orders of magnitude below the dark/bright split
            // used for lifetime reporting
            let dark_tol = 1e-10 * spec.scale();
            let bright = slowest_bright_mode(&spec, dark_tol, model.basis())?;
            Ok((b, bright.eigenvalue.re.abs()))
        })
        .collect();
    let points = points?;
    let window_pts: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|(b, _)| *b >= fit_window.0 && *b <= fit_window.1)
        .collect();
    let fitted_exponent = if window_pts.len() >= 2 {
        loglog_slope(&window_pts).ok()
    } else {
        None
    };
    Ok(DecayRateCurve {
        axis,
        points,
        fitted_exponent,
        fit_window,
    })
}

/// Time evolution result; `spectral` is false when the eigenbasis was too
/// ill-conditioned and the dense exponential fallback was used.
#[derive(Debug, Clone)]
pub struct Evolution {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    pub spectral: bool,
}

/// Evolve `rho0` to the given ascending times via the spectral
/// decomposition `rho(t) = sum_i e^{lambda_i t} right_i <left_i, rho0>`,
/// falling back to scaling-and-squaring exponentials when the spectrum is
/// numerically defective.
pub fn evolve(l: &Superoperator, rho0: &DensityMatrix, times: &[f64]) -> Result<Evolution> {
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::domain("times must be ascending and non-negative"));
    }
    match eig_full(l.matrix()) {
        Ok(pairs) if eigenbasis_ok(&pairs) => {
            let coef = pairs.right_inv.dot(&vec_mat(rho0.matrix()));
            let states = times
                .iter()
                .map(|&t| {
                    let phased: Array1<C64> = coef
                        .iter()
                        .zip(pairs.values.iter())
                        .map(|(c, lam)| c * (lam * C64::new(t, 0.0)).exp())
                        .collect();
                    let rho = unvec_mat(&pairs.right.dot(&phased));
                    DensityMatrix::new_unchecked(hermitize(&rho))
                })
                .collect();
            Ok(Evolution {
                times: times.to_vec(),
                states,
                spectral: true,
            })
        }
        _ => {
            // dense exponential, stepping between requested times
            let mut states = Vec::with_capacity(times.len());
            let mut current = vec_mat(rho0.matrix());
            let mut t_prev = 0.0;
            for &t in times {
                let dt = t - t_prev;
                if dt > 0.0 {
                    let e = expm(&l.matrix().mapv(|z| z * C64::new(dt, 0.0)));
                    current = e.dot(&current);
                }
                t_prev = t;
                states.push(DensityMatrix::new_unchecked(hermitize(&unvec_mat(&current))));
            }
            Ok(Evolution {
                times: times.to_vec(),
                states,
                spectral: false,
            })
        }
    }
}

fn eigenbasis_ok(pairs: &EigenPairs) -> bool {
    let kappa = pairs.right.opnorm_one().unwrap_or(f64::INFINITY)
        * pairs.right_inv.opnorm_one().unwrap_or(f64::INFINITY);
    kappa.is_finite() && kappa < 1e12
}

/// Dark states: vectors annihilated by every enabled coupling operator that
/// are simultaneously eigenvectors of the rotating-frame Hamiltonian.
#[derive(Debug, Clone)]
pub struct DarkState {
    pub vector: Array1<C64>,
    /// Eigenvalue of H on this vector, rad/s.
    pub energy: f64,
    /// The term manifold holding (essentially all of) the state, if any.
    pub manifold: Option<TermLabel>,
}

#[derive(Debug, Clone, Default)]
pub struct DarkStateSet {
    pub states: Vec<DarkState>,
}

impl DarkStateSet {
    pub fn count_in(&self, label: TermLabel) -> usize {
        self.states
            .iter()
            .filter(|s| s.manifold == Some(label))
            .count()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Joint kernel of the couplings intersected with the eigenvectors of `h`.
/// Returns (vector, energy) pairs; empty when no dark state exists.
pub fn joint_dark_states(
    h: &Array2<C64>,
    couplings: &[Array2<C64>],
    tol: f64,
) -> Result<Vec<(Array1<C64>, f64)>> {
    let d = h.nrows();
    if couplings.is_empty() {
        return Err(Error::domain("dark-state analysis needs at least one coupling"));
    }
    let rows: usize = couplings.len() * d;
    let mut stacked = Array2::<C64>::zeros((rows, d));
    for (k, v) in couplings.iter().enumerate() {
        stacked.slice_mut(ndarray::s![k * d..(k + 1) * d, ..]).assign(v);
    }
    let (_, sigma, vt) = stacked
        .svd(false, true)
        .map_err(|e| Error::Numerical(format!("SVD failed: {e}")))?;
    let vt = vt.expect("svd requested vt");
    let smax = sigma.iter().cloned().fold(0.0f64, f64::max).max(1e-300);
    let null_cols: Vec<usize> = (0..d)
        .filter(|&j| sigma.get(j).map_or(true, |&s| s < 1e-10 * smax))
        .collect();
    if null_cols.is_empty() {
        return Ok(Vec::new());
    }
    // rows of vt beyond the rank span the kernel
    let m = null_cols.len();
    let mut n = Array2::<C64>::zeros((d, m));
    for (c, &j) in null_cols.iter().enumerate() {
        for i in 0..d {
            n[(i, c)] = vt[(j, i)].conj();
        }
    }
    // restrict H to the kernel subspace and diagonalize
    let hn = dagger(&n).dot(h).dot(&n);
    let (evals, evecs) = hn
        .eigh(UPLO::Upper)
        .map_err(|e| Error::Numerical(format!("eigh failed: {e}")))?;
    let h_scale = max_abs(h).max(1e-300);
    let mut out = Vec::new();
    for k in 0..m {
        let w = evecs.column(k).to_owned();
        let v: Array1<C64> = n.dot(&w);
        let hv = h.dot(&v);
        let ev = evals[k];
        let resid: f64 = hv
            .iter()
            .zip(v.iter())
            .map(|(a, b)| (a - b * C64::new(ev, 0.0)).norm_sqr())
            .sum::<f64>()
            .sqrt();
        if resid <= tol * h_scale {
            out.push((v, ev));
        }
    }
    Ok(out)
}

/// Dark-state analysis of the compiled model at a given field. Uses the
/// total drive coupling, so interference between lasers sharing an upper
/// term is accounted for.
pub fn dark_state_analysis(model: &CompiledModel, field: &FieldVector) -> Result<DarkStateSet> {
    let h = model.hamiltonian(field);
    if model.enabled_couplings().is_empty() {
        return Ok(DarkStateSet::default());
    }
    let total = model.total_coupling();
    let found = joint_dark_states(&h, &[total], 1e-10)?;
    let basis = model.basis();

    // Degenerate H eigenvalues leave the basis within a cluster arbitrary
    // (the four dark states can be frame-degenerate across manifolds for
    // particular detunings), so rotate each cluster into term-pure vectors
    // before attributing manifolds.
    let h_scale = max_abs(&h).max(1.0);
    let mut clusters: Vec<Vec<(Array1<C64>, f64)>> = Vec::new();
    for (v, e) in found {
        match clusters
            .iter_mut()
            .find(|c| (c[0].1 - e).abs() < 1e-8 * h_scale)
        {
            Some(c) => c.push((v, e)),
            None => clusters.push(vec![(v, e)]),
        }
    }
    let mut states = Vec::new();
    for cluster in clusters {
        for (vector, energy) in rotate_cluster_by_terms(cluster, basis) {
            let manifold = TermLabel::ALL.into_iter().find(|&label| {
                let w: f64 = basis
                    .term_range(label)
                    .map(|i| vector[i].norm_sqr())
                    .sum();
                w > 1.0 - 1e-6
            });
            states.push(DarkState {
                vector,
                energy,
                manifold,
            });
        }
    }
    Ok(DarkStateSet { states })
}

/// Within a degenerate cluster, iteratively diagonalize each term projector
/// so manifold-pure vectors come out pure; genuinely mixed vectors remain.
fn rotate_cluster_by_terms(
    cluster: Vec<(Array1<C64>, f64)>,
    basis: &Basis,
) -> Vec<(Array1<C64>, f64)> {
    if cluster.len() < 2 {
        return cluster;
    }
    // all members share the same H eigenvalue up to the cluster tolerance
    let e0 = cluster[0].1;
    let mut active: Vec<Array1<C64>> = cluster.into_iter().map(|(v, _)| v).collect();
    let mut out: Vec<(Array1<C64>, f64)> = Vec::new();

    for label in TermLabel::ALL {
        if active.len() < 2 {
            break;
        }
        let k = active.len();
        let range = basis.term_range(label);
        let mut gram = Array2::<C64>::zeros((k, k));
        for a in 0..k {
            for b in 0..k {
                let mut s = ZERO;
                for i in range.clone() {
                    s += active[a][i].conj() * active[b][i];
                }
                gram[(a, b)] = s;
            }
        }
        let (vals, vecs) = match gram.eigh(UPLO::Upper) {
            Ok(x) => x,
            Err(_) => continue,
        };
        let mut remaining = Vec::new();
        for c in 0..k {
            let mut v = Array1::<C64>::zeros(active[0].len());
            for a in 0..k {
                let coef = vecs[(a, c)];
                for i in 0..v.len() {
                    v[i] += coef * active[a][i];
                }
            }
            if vals[c] > 1.0 - 1e-8 {
                out.push((v, e0));
            } else {
                remaining.push(v);
            }
        }
        active = remaining;
    }
    for v in active {
        out.push((v, e0));
    }
    out
}

/// First and second derivatives of a linear observable of the steady state
/// with respect to the field along `axis`, at zero field.
#[derive(Debug, Clone)]
pub struct DerivativeReport {
    /// d I / dB at B = 0, per gauss.
    pub first: f64,
    /// d^2 I / dB^2 at B = 0, per gauss^2.
    pub second: f64,
    /// Zero-field limit of the observable along this axis.
    pub value_at_zero: f64,
    pub kernel_dim: usize,
    pub reduced_dim: usize,
    /// |Tr rho1| and |Tr rho2|; the corrections are traceless by
    /// construction and these record how well that held numerically.
    pub trace_defects: (f64, f64),
}

/// Taylor expansion of the stationary state in the field strength.
///
/// With `L(B) = L0 + B L1` (the Zeeman term is linear in B) the stationary
/// family `rho(B) = rho* + B rho1 + B^2 rho2 + ...` satisfies
/// `L0 rho_n = -L1 rho_{n-1}` plus solvability conditions; the degenerate
/// zero-field kernel is resolved order by order, which pins which kernel
/// element rho* the B -> 0 steady states converge to. Trace conditions fix
/// the remaining kernel components of rho1 and rho2.
pub fn derivative_fluorescence(
    model: &CompiledModel,
    axis: [f64; 3],
    observable: &Array2<C64>,
) -> Result<DerivativeReport> {
    let l0 = model.liouvillian(&FieldVector::ZERO);
    let l1 = model.zeeman_superoperator(axis);
    let (r, w) = kernel_basis(&l0, model.zero_tol())?;
    let k = r.ncols();

    // reduced resolvent: M = L0 + scale R W is invertible; S b solves
    // L0 x = b with W x = 0 for b in range(L0). The kernel shift is scaled
    // to the operator norm to keep M well conditioned.
    let scale = l0.matrix().opnorm_one().unwrap_or(1.0);
    let m = l0.matrix() + &r.dot(&w).mapv(|z| z * C64::new(scale, 0.0));
    let lu = {
        use ndarray_linalg::FactorizeInto;
        m.factorize_into()
            .map_err(|e| Error::Numerical(format!("reduced-resolvent LU failed: {e}")))?
    };
    let solve_s = |b: &Array1<C64>| -> Result<Array1<C64>> {
        use ndarray_linalg::Solve;
        // project off the kernel component first, and clean afterwards
        let wb = w.dot(b);
        let qb = b - &r.dot(&wb);
        let x = Solve::solve(&lu, &qb)
            .map_err(|e| Error::Numerical(format!("resolvent solve failed: {e}")))?;
        let wx = w.dot(&x);
        Ok(&x - &r.dot(&wx))
    };

    let l1m = l1.matrix();
    let apply_t = |cols: &Array2<C64>| -> Result<Array2<C64>> {
        // T x = S(L1 x), columnwise
        let mut out = Array2::<C64>::zeros(cols.raw_dim());
        for (j, col) in cols.columns().into_iter().enumerate() {
            let b = l1m.dot(&col.to_owned());
            out.column_mut(j).assign(&solve_s(&b)?);
        }
        Ok(out)
    };

    let tr_cols = apply_t(&r)?; // T R
    let ttr_cols = apply_t(&tr_cols)?; // T^2 R
    let tttr_cols = apply_t(&ttr_cols)?; // T^3 R

    let project = |cols: &Array2<C64>| -> Array2<C64> { w.dot(&l1m.dot(cols)) };
    let a1 = project(&r); // W L1 R
    let a2 = project(&tr_cols); // W L1 T R
    let a3 = project(&ttr_cols); // W L1 T^2 R
    let a4 = project(&tttr_cols); // W L1 T^3 R

    // trace functional on kernel coordinates
    let d = l0.dim();
    let tau: Array1<C64> = (0..k)
        .map(|j| {
            let mut t = ZERO;
            for i in 0..d {
                t += r[(i + i * d, j)];
            }
            t
        })
        .collect();

    // rank decisions measured against the perturbation scale, not each
    // block's own largest singular value: A1 vanishes identically here
    // (the dark states carry no Zeeman matrix elements among themselves)
    // and must be recognized as the zero matrix, not as full rank noise.
    let block_scale = l1m.opnorm_one().unwrap_or(1.0);
    let (a1_null, a1_left_null, a1_pinv) = svd_null_structure(&a1, block_scale)?;
    let k1 = a1_null.ncols();
    if k1 == 0 {
        return Err(Error::DegenerateKernel {
            rank: 0,
            msg: "first-order solvability admits no stationary direction".into(),
        });
    }

    // B2 = U1^dag A2 V1 on the reduced space
    let b2 = dagger(&a1_left_null).dot(&a2).dot(&a1_null);
    let (b2_null, _, b2_pinv) = svd_null_structure(&b2, block_scale)?;
    if b2_null.ncols() != 1 {
        return Err(Error::DegenerateKernel {
            rank: b2_null.ncols(),
            msg: format!(
                "second-order reduction leaves a {}-dimensional stationary family",
                b2_null.ncols()
            ),
        });
    }
    let z0 = b2_null.column(0).to_owned();

    // c0: normalize trace to one
    let c0_dir = a1_null.dot(&z0);
    let t0 = tau.dot(&c0_dir);
    if t0.norm() < 1e-12 {
        return Err(Error::DegenerateKernel {
            rank: k1,
            msg: "stationary direction is traceless; constraint set cannot normalize it".into(),
        });
    }
    let c0 = c0_dir.mapv(|z| z / t0);

    // c1 = A1^+ (A2 c0) + V1 z1;   B2 z1 = U1^dag (A3 c0 - A2 c1p), plus the
    // trace condition fixing the null component along z0.
    let c1p = a1_pinv.dot(&a2.dot(&c0));
    let rhs1 = dagger(&a1_left_null).dot(&(&a3.dot(&c0) - &a2.dot(&c1p)));
    let z1p = b2_pinv.dot(&rhs1);
    check_consistency(&b2, &z1p, &rhs1, "third-order solvability")?;
    let c1_part = &c1p + &a1_null.dot(&z1p);
    // adding beta * c0 shifts the trace by beta; pick beta so Tr rho1 = 0
    let c1 = &c1_part + &c0.mapv(|z| z * (-(tau.dot(&c1_part))));

    // c2 = A1^+ (A2 c1 - A3 c0) + V1 z2; fourth-order solvability pins z2.
    let c2p = a1_pinv.dot(&(&a2.dot(&c1) - &a3.dot(&c0)));
    let rhs2 = dagger(&a1_left_null).dot(
        &(&(&a3.dot(&c1) - &a4.dot(&c0)) - &a2.dot(&c2p)),
    );
    let z2p = b2_pinv.dot(&rhs2);
    check_consistency(&b2, &z2p, &rhs2, "fourth-order solvability")?;
    let c2_part = &c2p + &a1_null.dot(&z2p);
    let c2 = &c2_part + &c0.mapv(|z| z * (-(tau.dot(&c2_part))));

    // rho* = R c0; rho1 = -T R c0 + R c1; rho2 = T^2 R c0 - T R c1 + R c2
    let rho_star = r.dot(&c0);
    let rho1 = &r.dot(&c1) - &tr_cols.dot(&c0);
    let rho2 = &(&ttr_cols.dot(&c0) - &tr_cols.dot(&c1)) + &r.dot(&c2);

    let obs = |v: &Array1<C64>| -> f64 {
        let m = unvec_mat(v);
        let val = observable
            .rows()
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, o)| o * m[(j, i)])
                    .sum::<C64>()
            })
            .sum::<C64>();
        val.re
    };
    let trace_of = |v: &Array1<C64>| -> f64 {
        let d = l0.dim();
        (0..d).map(|i| v[i + i * d]).sum::<C64>().norm()
    };

    Ok(DerivativeReport {
        first: obs(&rho1),
        second: 2.0 * obs(&rho2),
        value_at_zero: obs(&rho_star),
        kernel_dim: k,
        reduced_dim: k1,
        trace_defects: (trace_of(&rho1), trace_of(&rho2)),
    })
}

fn check_consistency(
    b2: &Array2<C64>,
    z: &Array1<C64>,
    rhs: &Array1<C64>,
    what: &str,
) -> Result<()> {
    let resid = (&b2.dot(z) - rhs)
        .iter()
        .map(|x| x.norm_sqr())
        .sum::<f64>()
        .sqrt();
    let scale = rhs.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    if resid > 1e-6 * scale.max(1e-300) && scale > 1e-12 * max_abs(b2).max(1.0) {
        return Err(Error::DegenerateKernel {
            rank: b2.nrows(),
            msg: format!("{what} is inconsistent (residual {resid:.3e} vs scale {scale:.3e})"),
        });
    }
    Ok(())
}

/// SVD-based (null basis, left-null basis, pseudo-inverse) of a small square
/// matrix; singular values below `1e-10 * max(sigma_max, scale)` count as
/// zero.
fn svd_null_structure(
    a: &Array2<C64>,
    scale: f64,
) -> Result<(Array2<C64>, Array2<C64>, Array2<C64>)> {
    let k = a.nrows();
    let (u, sigma, vt) = a
        .svd(true, true)
        .map_err(|e| Error::Numerical(format!("SVD failed: {e}")))?;
    let u = u.expect("svd requested u");
    let vt = vt.expect("svd requested vt");
    let smax = sigma.iter().cloned().fold(0.0f64, f64::max);
    let cut = smax.max(scale) * 1e-10;
    let rank = sigma.iter().filter(|&&s| s > cut).count();

    let mut null = Array2::<C64>::zeros((k, k - rank));
    let mut left_null = Array2::<C64>::zeros((k, k - rank));
    for (c, j) in (rank..k).enumerate() {
        for i in 0..k {
            null[(i, c)] = vt[(j, i)].conj();
            left_null[(i, c)] = u[(i, j)];
        }
    }
    // pseudo-inverse A^+ = V S^+ U^dag
    let mut pinv = Array2::<C64>::zeros((k, k));
    for j in 0..rank {
        let inv_s = C64::new(1.0 / sigma[j], 0.0);
        for row in 0..k {
            for col in 0..k {
                pinv[(row, col)] += vt[(j, row)].conj() * inv_s * u[(col, j)].conj();
            }
        }
    }
    Ok((null, left_null, pinv))
}

/// Spectrum CSV export: one row per mode.
pub fn spectrum_to_csv(
    spec: &Spectrum,
    basis: &Basis,
    out: &mut impl std::io::Write,
) -> std::io::Result<()> {
    writeln!(
        out,
        "re_lambda,im_lambda,overlap_abs,d32_weight,d52_weight,p12_weight,p32_weight,s_weight"
    )?;
    for k in 0..spec.len() {
        let wts = spec.term_weights(k, basis);
        writeln!(
            out,
            "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            spec.value(k).re,
            spec.value(k).im,
            spec.overlap(k).norm(),
            wts[&TermLabel::D32],
            wts[&TermLabel::D52],
            wts[&TermLabel::P12],
            wts[&TermLabel::P32],
            wts[&TermLabel::S12],
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liouville::{assemble_liouvillian, dissipator};

    fn two_level(gamma: f64, omega: f64, delta: f64) -> Superoperator {
        let mut h = Array2::<C64>::zeros((2, 2));
        h[(0, 1)] = C64::new(omega / 2.0, 0.0);
        h[(1, 0)] = C64::new(omega / 2.0, 0.0);
        h[(1, 1)] = C64::new(-delta, 0.0);
        let mut a = Array2::<C64>::zeros((2, 2));
        a[(0, 1)] = C64::new(gamma.sqrt(), 0.0);
        assemble_liouvillian(&h, &[dissipator(&[a]).unwrap()]).unwrap()
    }

    #[test]
    fn two_level_steady_state_matches_analytic_saturation_formula() {
        let gamma = 1.0;
        for s in [0.1, 0.5, 1.0, 2.0, 8.0] {
            for dg in [-2.0, -0.5, 0.0, 0.7, 3.0] {
                let omega = gamma * (s / 2.0f64).sqrt();
                let delta = dg * gamma;
                let l = two_level(gamma, omega, delta);
                let rho0 = DensityMatrix::pure(2, 0);
                let rho = steady_state(&l, &rho0, 1e-7).unwrap();
                let expect = (s / 2.0) / (1.0 + s + (2.0 * delta / gamma).powi(2));
                assert!(
                    (rho.population(1) - expect).abs() < 1e-10,
                    "s={s} delta={dg}: got {} want {expect}",
                    rho.population(1)
                );
            }
        }
    }

    #[test]
    fn pure_decay_reaches_ground_state_from_any_start() {
        let l = two_level(1.0, 0.0, 0.0);
        for rho0 in [
            DensityMatrix::pure(2, 1),
            DensityMatrix::maximally_mixed(2),
        ] {
            let rho = steady_state(&l, &rho0, 1e-7).unwrap();
            assert!((rho.population(0) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn spectrum_contains_zero_and_matches_closed_form() {
        let gamma = 1.0;
        let omega = 0.9;
        let l = two_level(gamma, omega, 0.0);
        let spec = liouvillian_spectrum(&l, &DensityMatrix::pure(2, 0)).unwrap();
        assert!(spec.value(0).norm() < 1e-10 * spec.scale().max(1.0));
        let disc = C64::new(gamma * gamma - 16.0 * omega * omega, 0.0).sqrt() * C64::new(0.25, 0.0);
        let expect = [
            ZERO,
            C64::new(-gamma / 2.0, 0.0),
            C64::new(-0.75 * gamma, 0.0) + disc,
            C64::new(-0.75 * gamma, 0.0) - disc,
        ];
        for e in expect {
            let best = (0..spec.len())
                .map(|k| (spec.value(k) - e).norm())
                .fold(f64::MAX, f64::min);
            assert!(best < 1e-10, "missing {e}");
        }
    }

    #[test]
    fn spectral_modes_satisfy_eigen_residual_and_biorthogonality() {
        let l = two_level(1.0, 0.7, 0.3);
        let spec = liouvillian_spectrum(&l, &DensityMatrix::pure(2, 0)).unwrap();
        let scale = spec.scale();
        for k in 0..spec.len() {
            let mode = spec.mode(k);
            let lv = l.matrix().dot(&vec_mat(&mode.right));
            let resid: f64 = lv
                .iter()
                .zip(vec_mat(&mode.right).iter())
                .map(|(a, b)| (a - b * mode.eigenvalue).norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(resid < 1e-8 * scale, "eigen residual too big at mode {k}");
            for j in 0..spec.len() {
                let other = spec.mode(j);
                let ip: C64 = vec_mat(&mode.left)
                    .iter()
                    .zip(vec_mat(&other.right).iter())
                    .map(|(a, b)| a.conj() * b)
                    .sum();
                let want = if j == k { 1.0 } else { 0.0 };
                assert!(
                    (ip - C64::new(want, 0.0)).norm() < 1e-8,
                    "biorthogonality failed ({k},{j})"
                );
            }
        }
    }

    #[test]
    fn spectrum_reconstructs_the_initial_state() {
        let l = two_level(1.0, 1.3, -0.4);
        let rho0 = DensityMatrix::maximally_mixed(2);
        let spec = liouvillian_spectrum(&l, &rho0).unwrap();
        let back = spec.reconstruct(rho0.matrix());
        assert!(max_abs(&(&back - rho0.matrix())) < 1e-8);
    }

    #[test]
    fn direct_steady_state_agrees_with_spectral_projection() {
        let l = two_level(1.0, 0.8, 0.2);
        let a = steady_state_direct(&l, 1e-9).unwrap();
        let b = steady_state(&l, &DensityMatrix::pure(2, 0), 1e-7).unwrap();
        assert!(max_abs(&(a.matrix() - b.matrix())) < 1e-10);
    }

    #[test]
    fn evolve_at_zero_time_returns_the_initial_state() {
        let l = two_level(1.0, 0.8, 0.0);
        let rho0 = DensityMatrix::pure(2, 1);
        let ev = evolve(&l, &rho0, &[0.0]).unwrap();
        assert!(max_abs(&(ev.states[0].matrix() - rho0.matrix())) < 1e-12);
    }

    #[test]
    fn evolve_long_time_matches_steady_state() {
        let l = two_level(1.0, 0.8, 0.4);
        let rho0 = DensityMatrix::pure(2, 1);
        let ev = evolve(&l, &rho0, &[200.0]).unwrap();
        let ss = steady_state(&l, &rho0, 1e-7).unwrap();
        assert!(crate::linalg::trace_distance(ev.states[0].matrix(), ss.matrix()) < 1e-8);
    }

    #[test]
    fn evolve_rejects_descending_times() {
        let l = two_level(1.0, 0.8, 0.4);
        assert!(evolve(&l, &DensityMatrix::pure(2, 0), &[1.0, 0.5]).is_err());
    }

    #[test]
    fn density_matrix_validation_catches_bad_inputs() {
        let mut m = Array2::<C64>::zeros((2, 2));
        m[(0, 0)] = C64::new(1.5, 0.0);
        assert!(DensityMatrix::new(m).is_err());
        let mut m2 = Array2::<C64>::zeros((2, 2));
        m2[(0, 0)] = C64::new(1.3, 0.0);
        m2[(1, 1)] = C64::new(-0.3, 0.0);
        assert!(DensityMatrix::new(m2).is_err());
    }
}
