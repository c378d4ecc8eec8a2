//! Shared oracles for integration tests: independent ODE integrators that
//! never touch the library's spectral/nullspace solvers.

use mcpt::linalg::{hermitize, trace_distance, unvec_mat, vec_mat};
use mcpt::liouville::Superoperator;
use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

/// Adaptive Dormand-Prince 5(4) integration of `dv/dt = L v` from `v0` to
/// `t_final`. Step control on the embedded-error estimate.
pub fn rk45_evolve(l: &Superoperator, rho0: &Array2<C64>, t_final: f64) -> Array2<C64> {
    let m = l.matrix();
    let mut v = vec_mat(rho0);
    let mut t = 0.0f64;

    // conservative initial step from the one-norm of L
    let lnorm: f64 = m
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut h = (0.1 / lnorm).min(t_final);

    let rtol = 1e-11;
    let atol = 1e-13;

    // Dormand-Prince coefficients
    const A21: f64 = 1.0 / 5.0;
    const A31: f64 = 3.0 / 40.0;
    const A32: f64 = 9.0 / 40.0;
    const A41: f64 = 44.0 / 45.0;
    const A42: f64 = -56.0 / 15.0;
    const A43: f64 = 32.0 / 9.0;
    const A51: f64 = 19372.0 / 6561.0;
    const A52: f64 = -25360.0 / 2187.0;
    const A53: f64 = 64448.0 / 6561.0;
    const A54: f64 = -212.0 / 729.0;
    const A61: f64 = 9017.0 / 3168.0;
    const A62: f64 = -355.0 / 33.0;
    const A63: f64 = 46732.0 / 5247.0;
    const A64: f64 = 49.0 / 176.0;
    const A65: f64 = -5103.0 / 18656.0;
    const B1: f64 = 35.0 / 384.0;
    const B3: f64 = 500.0 / 1113.0;
    const B4: f64 = 125.0 / 192.0;
    const B5: f64 = -2187.0 / 6784.0;
    const B6: f64 = 11.0 / 84.0;
    // embedded 4th order
    const E1: f64 = 5179.0 / 57600.0;
    const E3: f64 = 7571.0 / 16695.0;
    const E4: f64 = 393.0 / 640.0;
    const E5: f64 = -92097.0 / 339200.0;
    const E6: f64 = 187.0 / 2100.0;
    const E7: f64 = 1.0 / 40.0;

    let scal = |x: &Array1<C64>, s: f64| x.mapv(|z| z * C64::new(s, 0.0));

    while t < t_final {
        if t + h > t_final {
            h = t_final - t;
        }
        let k1 = m.dot(&v);
        let k2 = m.dot(&(&v + &scal(&k1, A21 * h)));
        let k3 = m.dot(&(&v + &(scal(&k1, A31 * h) + scal(&k2, A32 * h))));
        let k4 = m.dot(&(&v + &(scal(&k1, A41 * h) + scal(&k2, A42 * h) + scal(&k3, A43 * h))));
        let k5 = m.dot(
            &(&v + &(scal(&k1, A51 * h) + scal(&k2, A52 * h) + scal(&k3, A53 * h)
                + scal(&k4, A54 * h))),
        );
        let k6 = m.dot(
            &(&v + &(scal(&k1, A61 * h)
                + scal(&k2, A62 * h)
                + scal(&k3, A63 * h)
                + scal(&k4, A64 * h)
                + scal(&k5, A65 * h))),
        );
        let v5 = &v
            + &(scal(&k1, B1 * h) + scal(&k3, B3 * h) + scal(&k4, B4 * h) + scal(&k5, B5 * h)
                + scal(&k6, B6 * h));
        let k7 = m.dot(&v5);
        let v4 = &v
            + &(scal(&k1, E1 * h) + scal(&k3, E3 * h) + scal(&k4, E4 * h) + scal(&k5, E5 * h)
                + scal(&k6, E6 * h)
                + scal(&k7, E7 * h));

        let mut err: f64 = 0.0;
        for (a, b) in v5.iter().zip(v4.iter()) {
            let sc = atol + rtol * a.norm().max(b.norm());
            err = err.max((a - b).norm() / sc);
        }
        if err <= 1.0 {
            t += h;
            v = v5;
        }
        let factor = (0.9 * err.powf(-0.2)).clamp(0.2, 5.0);
        h = (h * factor).min(t_final.max(1e-300));
        if h <= 0.0 || !h.is_finite() {
            panic!("rk45: step size collapsed at t = {t}");
        }
    }
    hermitize(&unvec_mat(&v))
}

/// Step-doubling exponential integration: propagate with `E = exp(L dt)`,
/// doubling `dt` (by squaring `E`) until the state stops changing or
/// `t_final` is reached. Returns the state and the time actually reached.
///
/// Exact for this linear ODE at every step; the only approximation is the
/// Pade exponential of the smallest step.
pub fn expm_evolve_to_convergence(
    l: &Superoperator,
    rho0: &Array2<C64>,
    t_final: f64,
    settle_tol: f64,
) -> (Array2<C64>, f64) {
    let m = l.matrix();
    let lnorm: f64 = m
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let dt0 = 0.5 / lnorm;
    let mut e = mcpt::linalg::expm(&m.mapv(|z| z * C64::new(dt0, 0.0)));
    let mut v = vec_mat(rho0);
    let mut t = 0.0;
    let mut dt = dt0;

    // walk: apply the current propagator twice per level, then double it
    while t < t_final {
        let v1 = e.dot(&v);
        let v2 = e.dot(&v1);
        let settled = trace_distance(&hermitize(&unvec_mat(&v2)), &hermitize(&unvec_mat(&v))) < settle_tol;
        v = v2;
        t += 2.0 * dt;
        if settled && t > 100.0 * dt0 {
            break;
        }
        e = e.dot(&e);
        dt *= 2.0;
    }
    (hermitize(&unvec_mat(&v)), t)
}

pub fn dm(mat: &Array2<C64>) -> mcpt::solve::DensityMatrix {
    mcpt::solve::DensityMatrix::new_unchecked(mat.clone())
}
