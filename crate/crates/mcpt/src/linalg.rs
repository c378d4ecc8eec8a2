//! Dense complex linear algebra helpers: vectorization, eigendecomposition
//! with biorthogonal left vectors, bordered kernel solves, and the matrix
//! exponential.
//!
//! Vectorization is column-stacking throughout: `vec(rho)[i + j*d] = rho[(i, j)]`,
//! so `vec(A rho B) = (B^T ⊗ A) vec(rho)`.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eig, Inverse, OperationNorm, Solve};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Column-stack a `d x d` matrix into a length `d^2` vector.
pub fn vec_mat(m: &Array2<C64>) -> Array1<C64> {
    let d = m.nrows();
    Array1::from_shape_fn(d * d, |k| m[(k % d, k / d)])
}

/// Inverse of [`vec_mat`].
pub fn unvec_mat(v: &Array1<C64>) -> Array2<C64> {
    let d2 = v.len();
    let d = (d2 as f64).sqrt().round() as usize;
    debug_assert_eq!(d * d, d2, "unvec_mat: length is not a perfect square");
    Array2::from_shape_fn((d, d), |(i, j)| v[i + j * d])
}

pub fn dagger(m: &Array2<C64>) -> Array2<C64> {
    m.t().mapv(|z| z.conj())
}

pub fn trace(m: &Array2<C64>) -> C64 {
    m.diag().sum()
}

/// Replace `m` by its Hermitian part `(m + m^dag)/2`.
pub fn hermitize(m: &Array2<C64>) -> Array2<C64> {
    let md = dagger(m);
    (m + &md).mapv(|z| 0.5 * z)
}

pub fn max_abs(m: &Array2<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn is_hermitian(m: &Array2<C64>, tol: f64) -> bool {
    max_abs(&(m - &dagger(m))) <= tol
}

/// Trace distance `(1/2) ||a - b||_1` between two Hermitian matrices.
pub fn trace_distance(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    use ndarray_linalg::Eigh;
    let diff = hermitize(&(a - b));
    let (vals, _) = diff
        .eigh(ndarray_linalg::UPLO::Upper)
        .expect("trace_distance: eigh failed");
    0.5 * vals.iter().map(|x| x.abs()).sum::<f64>()
}

/// Full eigendecomposition of a general complex matrix together with the
/// inverse of the right-eigenvector matrix.
///
/// Columns of `right` are right eigenvectors; row `i` of `right_inv` is the
/// biorthogonal left functional for mode `i` (`right_inv * right = I` exactly
/// up to the inverse's accuracy).
pub struct EigenPairs {
    pub values: Array1<C64>,
    pub right: Array2<C64>,
    pub right_inv: Array2<C64>,
}

pub fn eig_full(m: &Array2<C64>) -> Result<EigenPairs> {
    let (values, right) = m
        .eig()
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e}")))?;
    let right_inv = right.inv().map_err(|e| {
        Error::Numerical(format!(
            "right-eigenvector matrix is numerically singular (defective spectrum?): {e}"
        ))
    })?;
    Ok(EigenPairs {
        values,
        right,
        right_inv,
    })
}

/// Solve the bordered system `[[M, u], [t^T, 0]] [x; a] = [0; 1]` where `t`
/// is the trace functional and `u = vec(I)`.
///
/// When `M` is a Lindbladian with a one-dimensional kernel this returns the
/// trace-one kernel vector; a multi-dimensional kernel leaves a large
/// residual behind, which the caller must check.
pub fn bordered_kernel_solve(m: &Array2<C64>) -> Result<Array1<C64>> {
    let n = m.nrows();
    let d = (n as f64).sqrt().round() as usize;
    if d * d != n {
        return Err(Error::domain("bordered solve needs a superoperator dimension"));
    }
    let mut big = Array2::<C64>::zeros((n + 1, n + 1));
    big.slice_mut(ndarray::s![..n, ..n]).assign(m);
    for k in 0..d {
        let diag = k + k * d;
        big[(n, diag)] = ONE; // trace row
        big[(diag, n)] = ONE; // vec(I) column
    }
    let mut rhs = Array1::<C64>::zeros(n + 1);
    rhs[n] = ONE;
    let sol = big
        .solve(&rhs)
        .map_err(|e| Error::Numerical(format!("bordered kernel solve failed: {e}")))?;
    Ok(sol.slice(ndarray::s![..n]).to_owned())
}

/// Matrix exponential by Pade-13 scaling and squaring.
pub fn expm(m: &Array2<C64>) -> Array2<C64> {
    const THETA_13: f64 = 5.371920351148152;
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    let n = m.nrows();
    let norm = m.opnorm_one().unwrap_or_else(|_| max_abs(m) * n as f64);
    let s = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil() as i32
    } else {
        0
    };
    let a = m.mapv(|z| z / C64::new(2f64.powi(s), 0.0));

    let ident = Array2::<C64>::eye(n);
    let a2 = a.dot(&a);
    let a4 = a2.dot(&a2);
    let a6 = a2.dot(&a4);

    let u_inner = a6.mapv(|z| z * B[13]) + a4.mapv(|z| z * B[11]) + a2.mapv(|z| z * B[9]);
    let u = a.dot(
        &(a6.dot(&u_inner)
            + a6.mapv(|z| z * B[7])
            + a4.mapv(|z| z * B[5])
            + a2.mapv(|z| z * B[3])
            + ident.mapv(|z| z * B[1])),
    );
    let v_inner = a6.mapv(|z| z * B[12]) + a4.mapv(|z| z * B[10]) + a2.mapv(|z| z * B[8]);
    let v = a6.dot(&v_inner)
        + a6.mapv(|z| z * B[6])
        + a4.mapv(|z| z * B[4])
        + a2.mapv(|z| z * B[2])
        + ident.mapv(|z| z * B[0]);

    let lhs = &v - &u;
    let rhs = &v + &u;
    let mut f = solve_matrix(&lhs, &rhs);
    for _ in 0..s {
        f = f.dot(&f);
    }
    f
}

fn solve_matrix(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    use ndarray_linalg::FactorizeInto;
    let n = a.nrows();
    let lu = a
        .clone()
        .factorize_into()
        .expect("solve_matrix: LU factorization failed");
    let mut out = Array2::<C64>::zeros((n, n));
    for j in 0..n {
        let col = b.column(j).to_owned();
        let x = ndarray_linalg::Solve::solve(&lu, &col).expect("solve_matrix: solve failed");
        out.column_mut(j).assign(&x);
    }
    out
}

/// Least-squares power-law exponent: slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::domain("power-law fit needs at least two positive points"));
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return Err(Error::numerical("degenerate abscissa in power-law fit"));
    }
    Ok((n * sxy - sx * sy) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn vec_unvec_roundtrip_column_stacking() {
        let m = array![
            [C64::new(1.0, 0.0), C64::new(2.0, 1.0)],
            [C64::new(3.0, -1.0), C64::new(4.0, 0.0)]
        ];
        let v = vec_mat(&m);
        // column stacking: (0,0), (1,0), (0,1), (1,1)
        assert_eq!(v[1], C64::new(3.0, -1.0));
        assert_eq!(v[2], C64::new(2.0, 1.0));
        assert_eq!(unvec_mat(&v), m);
    }

    #[test]
    fn expm_matches_diagonal_exponential() {
        let m = array![
            [C64::new(-1.0, 0.0), ZERO],
            [ZERO, C64::new(0.0, 2.0)]
        ];
        let e = expm(&m);
        assert!((e[(0, 0)] - C64::new((-1.0f64).exp(), 0.0)).norm() < 1e-14);
        assert!((e[(1, 1)] - C64::new(0.0, 2.0).exp()).norm() < 1e-14);
        assert!(e[(0, 1)].norm() < 1e-15);
    }

    #[test]
    fn expm_matches_rotation_generator() {
        // exp of [[0, a], [-a, 0]] is a rotation by a.
        let a = 0.7;
        let m = array![
            [ZERO, C64::new(a, 0.0)],
            [C64::new(-a, 0.0), ZERO]
        ];
        let e = expm(&m);
        assert!((e[(0, 0)].re - a.cos()).abs() < 1e-14);
        assert!((e[(0, 1)].re - a.sin()).abs() < 1e-14);
    }

    #[test]
    fn loglog_slope_recovers_exponent() {
        let pts: Vec<(f64, f64)> = (1..20)
            .map(|k| {
                let x = k as f64 * 0.1;
                (x, 3.0 * x.powf(2.5))
            })
            .collect();
        assert!((loglog_slope(&pts).unwrap() - 2.5).abs() < 1e-12);
    }
}
