//! Angular-momentum algebra: Clebsch-Gordan coefficients and spin matrices.
//!
//! All quantum numbers are passed as doubled integers (`two_j = 3` means
//! `j = 3/2`), which keeps half-integer bookkeeping exact.

use ndarray::Array2;
use num_complex::Complex64 as C64;

/// Factorial as f64; exact for the small arguments reached here.
fn fact(n: i32) -> f64 {
    debug_assert!(n >= 0);
    (1..=n as i64).map(|k| k as f64).product()
}

fn triangle_ok(two_j1: i32, two_j2: i32, two_j: i32) -> bool {
    two_j >= (two_j1 - two_j2).abs()
        && two_j <= two_j1 + two_j2
        && (two_j1 + two_j2 - two_j) % 2 == 0
}

/// Clebsch-Gordan coefficient `<j1 m1; j2 m2 | J M>` with the
/// Condon-Shortley phase, computed from the Racah closed form.
///
/// Violated selection rules (`M != m1 + m2`, triangle, `|m| > j`, parity)
/// return exactly 0 rather than an error.
pub fn cg_coefficient(
    two_j1: i32,
    two_m1: i32,
    two_j2: i32,
    two_m2: i32,
    two_j: i32,
    two_m: i32,
) -> f64 {
    if two_m1 + two_m2 != two_m {
        return 0.0;
    }
    if two_m1.abs() > two_j1 || two_m2.abs() > two_j2 || two_m.abs() > two_j {
        return 0.0;
    }
    if (two_j1 - two_m1) % 2 != 0 || (two_j2 - two_m2) % 2 != 0 || (two_j - two_m) % 2 != 0 {
        return 0.0;
    }
    if !triangle_ok(two_j1, two_j2, two_j) {
        return 0.0;
    }

    // Halved (integer-valued) factorial arguments.
    let h = |x: i32| -> i32 {
        debug_assert!(x % 2 == 0);
        x / 2
    };
    let j1pj2mj = h(two_j1 + two_j2 - two_j);
    let j1mj2pj = h(two_j1 - two_j2 + two_j);
    let mj1pj2pj = h(-two_j1 + two_j2 + two_j);
    let j1pj2pj1 = h(two_j1 + two_j2 + two_j) + 1;

    let prefactor = ((two_j + 1) as f64 * fact(j1pj2mj) * fact(j1mj2pj) * fact(mj1pj2pj)
        / fact(j1pj2pj1))
    .sqrt()
        * (fact(h(two_j1 + two_m1))
            * fact(h(two_j1 - two_m1))
            * fact(h(two_j2 + two_m2))
            * fact(h(two_j2 - two_m2))
            * fact(h(two_j + two_m))
            * fact(h(two_j - two_m)))
        .sqrt();

    let k_min = 0
        .max(h(two_j2 - two_j - two_m1))
        .max(h(two_j1 - two_j + two_m2));
    let k_max = j1pj2mj
        .min(h(two_j1 - two_m1))
        .min(h(two_j2 + two_m2));

    let mut sum = 0.0;
    for k in k_min..=k_max {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let denom = fact(k)
            * fact(j1pj2mj - k)
            * fact(h(two_j1 - two_m1) - k)
            * fact(h(two_j2 + two_m2) - k)
            * fact(h(two_j - two_j2 + two_m1) + k)
            * fact(h(two_j - two_j1 - two_m2) + k);
        sum += sign / denom;
    }
    prefactor * sum
}

/// `Jz`, with eigenvalues `m` in units of hbar, for spin `two_j / 2`.
pub fn jz_matrix(two_j: i32) -> Array2<C64> {
    let dim = (two_j + 1) as usize;
    Array2::from_shape_fn((dim, dim), |(r, c)| {
        if r == c {
            C64::new((-two_j + 2 * r as i32) as f64 / 2.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// Raising operator `J+` with `<m+1|J+|m> = sqrt(j(j+1) - m(m+1))`.
pub fn jplus_matrix(two_j: i32) -> Array2<C64> {
    let dim = (two_j + 1) as usize;
    let j = two_j as f64 / 2.0;
    let mut out = Array2::zeros((dim, dim));
    for c in 0..dim.saturating_sub(1) {
        let m = -j + c as f64;
        out[(c + 1, c)] = C64::new((j * (j + 1.0) - m * (m + 1.0)).sqrt(), 0.0);
    }
    out
}

pub fn jx_matrix(two_j: i32) -> Array2<C64> {
    let jp = jplus_matrix(two_j);
    let jm = jp.t().mapv(|z| z.conj());
    (&jp + &jm).mapv(|z| 0.5 * z)
}

pub fn jy_matrix(two_j: i32) -> Array2<C64> {
    let jp = jplus_matrix(two_j);
    let jm = jp.t().mapv(|z| z.conj());
    (&jp - &jm).mapv(|z| C64::new(0.0, -0.5) * z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stretched_state_is_unity() {
        // <1/2 1/2; 1 1 | 3/2 3/2> = 1
        assert!((cg_coefficient(1, 1, 2, 2, 3, 3) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn m_selection_rule_gives_zero() {
        assert_eq!(cg_coefficient(1, 1, 2, 2, 3, 1), 0.0);
        assert_eq!(cg_coefficient(3, 1, 2, 0, 3, 3), 0.0);
    }

    #[test]
    fn triangle_violation_gives_zero() {
        assert_eq!(cg_coefficient(1, 1, 2, 0, 7, 1), 0.0);
    }

    #[test]
    fn known_table_values() {
        // from lowering the stretched |3/2,3/2> = |1/2>|1>:
        // |3/2,1/2> = sqrt(1/3)|-1/2,1> + sqrt(2/3)|1/2,0>
        assert!((cg_coefficient(1, 1, 2, 0, 3, 1) - (2.0f64 / 3.0).sqrt()).abs() < 1e-14);
        assert!((cg_coefficient(1, -1, 2, 2, 3, 1) - (1.0f64 / 3.0).sqrt()).abs() < 1e-14);
        // orthogonal J = 1/2 row with the Condon-Shortley sign:
        // |1/2,1/2> = -sqrt(2/3)|-1/2,1> + sqrt(1/3)|1/2,0>
        assert!((cg_coefficient(1, 1, 2, 0, 1, 1) - (1.0f64 / 3.0).sqrt()).abs() < 1e-14);
        assert!((cg_coefficient(1, -1, 2, 2, 1, 1) + (2.0f64 / 3.0).sqrt()).abs() < 1e-14);
    }

    /// Brute-force completeness: sum over (J, M) of |<j1 m1; j2 m2 | J M>|^2
    /// equals 1 for every (m1, m2) of the couplings used in the model.
    #[test]
    fn completeness_sums_to_one() {
        for two_j1 in [1i32, 3, 5] {
            let two_j2 = 2;
            for two_m1 in (-two_j1..=two_j1).step_by(2) {
                for two_m2 in (-two_j2..=two_j2).step_by(2) {
                    let mut total = 0.0;
                    for two_j in (two_j1 - two_j2).abs()..=(two_j1 + two_j2) {
                        if (two_j1 + two_j2 - two_j) % 2 != 0 {
                            continue;
                        }
                        let c = cg_coefficient(two_j1, two_m1, two_j2, two_m2, two_j, two_m1 + two_m2);
                        total += c * c;
                    }
                    assert!(
                        (total - 1.0).abs() < 1e-12,
                        "completeness failed for 2j1={two_j1} 2m1={two_m1} 2m2={two_m2}: {total}"
                    );
                }
            }
        }
    }

    /// Orthogonality in the other direction: fixed (J, M), sum over (m1, m2).
    #[test]
    fn orthogonality_sums_to_one() {
        for (two_j1, two_j) in [(1, 3), (3, 5), (5, 3), (5, 7)] {
            let two_j2 = 2;
            for two_m in (-two_j..=two_j).step_by(2) {
                let mut total = 0.0;
                for two_m1 in (-two_j1..=two_j1).step_by(2) {
                    let c = cg_coefficient(two_j1, two_m1, two_j2, two_m - two_m1, two_j, two_m);
                    total += c * c;
                }
                assert!(
                    (total - 1.0).abs() < 1e-12,
                    "orthogonality failed for 2j1={two_j1} 2J={two_j} 2M={two_m}: {total}"
                );
            }
        }
    }

    #[test]
    fn spin_matrices_satisfy_commutator() {
        for two_j in [1, 2, 3, 5] {
            let jx = jx_matrix(two_j);
            let jy = jy_matrix(two_j);
            let jz = jz_matrix(two_j);
            let comm = jx.dot(&jy) - jy.dot(&jx);
            let expect = jz.mapv(|z| C64::new(0.0, 1.0) * z);
            let err = (&comm - &expect)
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
            assert!(err < 1e-14, "[Jx,Jy] != iJz for 2j={two_j}");
        }
    }
}
