// examine the perturbative cascade's effective matrices
use mcpt::atomic::FieldVector;
use mcpt::config::ExperimentConfig;
use mcpt::linalg::*;
use mcpt::model::CompiledModel;
use mcpt::solve::*;
use ndarray::{Array1, Array2};
use ndarray_linalg::{OperationNorm, SVD};
use num_complex::Complex64 as C64;

#[test]
#[ignore]
fn cascade_structure() {
    let cfg = ExperimentConfig::default();
    let model = CompiledModel::build(&cfg).unwrap();
    let l0 = model.liouvillian(&FieldVector::ZERO);
    let l1 = model.zeeman_superoperator([0.0, 0.0, 1.0]);
    let (r, w) = kernel_basis(&l0, 1e-12).unwrap();
    let k = r.ncols();
    println!("kernel dim {k}");
    // biorthogonality sanity
    let wr = w.dot(&r);
    let mut err: f64 = 0.0;
    for i in 0..k { for j in 0..k {
        let want = if i==j {1.0} else {0.0};
        err = err.max((wr[(i,j)] - C64::new(want,0.0)).norm());
    }}
    println!("WR-I max err {err:.3e}");

    let scale = l0.matrix().opnorm_one().unwrap();
    let m = l0.matrix() + &r.dot(&w).mapv(|z| z * C64::new(scale, 0.0));
    use ndarray_linalg::{FactorizeInto, Solve};
    let lu = m.factorize_into().unwrap();
    let solve_s = |b: &Array1<C64>| -> Array1<C64> {
        let wb = w.dot(b);
        let qb = b - &r.dot(&wb);
        let x = Solve::solve(&lu, &qb).unwrap();
        let wx = w.dot(&x);
        &x - &r.dot(&wx)
    };
    let apply_t = |cols: &Array2<C64>| -> Array2<C64> {
        let mut out = Array2::<C64>::zeros(cols.raw_dim());
        for (j, col) in cols.columns().into_iter().enumerate() {
            let b = l1.matrix().dot(&col.to_owned());
            out.column_mut(j).assign(&solve_s(&b));
        }
        out
    };
    let tr_cols = apply_t(&r);
    let a1 = w.dot(&l1.matrix().dot(&r));
    let a2 = w.dot(&l1.matrix().dot(&tr_cols));
    let (_, s1, _) = a1.svd(false, false).unwrap();
    println!("sigma(A1): {:?}", s1.to_vec());
    let (_, s2, _) = a2.svd(false, false).unwrap();
    println!("sigma(A2): {:?}", s2.to_vec());

    // residual check of S: L0 (S b) should equal Q b
    let b_test = l1.matrix().dot(&r.column(0).to_owned());
    let x = solve_s(&b_test);
    let lx = l0.matrix().dot(&x);
    let wb = w.dot(&b_test);
    let qb = &b_test - &r.dot(&wb);
    let rr: f64 = (&lx - &qb).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
        / qb.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    println!("S residual: {rr:.3e}");
}
