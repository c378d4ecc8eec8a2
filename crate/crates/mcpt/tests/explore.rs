// temporary exploration harness; prints full-model numbers
use mcpt::atomic::{FieldVector, TermLabel};
use mcpt::config::ExperimentConfig;
use mcpt::model::CompiledModel;
use mcpt::observe::{fluorescence_rate, observable_operator, DetectionModel};
use mcpt::solve::*;

#[test]
#[ignore]
fn explore_full_model() {
    let cfg = ExperimentConfig::default();
    let model = CompiledModel::build(&cfg).unwrap();
    let det455 = DetectionModel::from_config(&cfg.detection).unwrap();

    // spectrum at B = 0
    let l0 = model.liouvillian(&FieldVector::ZERO);
    let spec = liouvillian_spectrum(&l0, model.rho0()).unwrap();
    let scale = spec.scale();
    println!("spectral scale = {:.4e}", scale);
    println!("smallest |lambda| modes:");
    for k in 0..14 {
        println!(
            "  k={k:3}  re={:+.6e}  im={:+.6e}  |overlap|={:.3e}",
            spec.value(k).re,
            spec.value(k).im,
            spec.overlap(k).norm()
        );
    }
    let kernel = spec.kernel_indices(model.zero_tol() * scale);
    println!("kernel dim at zero_tol={:.1e}: {}", model.zero_tol(), kernel.len());

    let bright = slowest_bright_mode(&spec, model.dark_tol(), model.basis()).unwrap();
    println!(
        "slowest bright: rate {:.4e} /s  lifetime {:.3} us  weights {:?}",
        bright.eigenvalue.re.abs(),
        bright.lifetime_s * 1e6,
        bright.weights
    );

    // dark states
    let darks0 = dark_state_analysis(&model, &FieldVector::ZERO).unwrap();
    println!(
        "dark states at B=0: total {} (D3/2 {}, D5/2 {})",
        darks0.len(),
        darks0.count_in(TermLabel::D32),
        darks0.count_in(TermLabel::D52)
    );
    let darks1 = dark_state_analysis(&model, &FieldVector::new(0.0, 0.0, 0.1)).unwrap();
    println!("dark states at B=0.1 G: {}", darks1.len());

    // transparency: I(0) vs I(2 G), background-free
    let mut det_nobg = det455;
    det_nobg.background_cps = 0.0;
    let rho_0 = steady_state(&l0, model.rho0(), model.zero_tol()).unwrap();
    let i0 = fluorescence_rate(&rho_0, &det_nobg, &model);
    let rho_2 = steady_state_at(&model, &FieldVector::new(0.0, 0.0, 2.0)).unwrap();
    let i2 = fluorescence_rate(&rho_2, &det_nobg, &model);
    println!("I(0) = {:.6e}  I(2G) = {:.6e}  ratio = {:.3e}", i0, i2, i0 / i2);
    println!("pop(P3/2) at 2 G = {:.4e}", model.basis().term_population(rho_2.matrix(), TermLabel::P32));

    // decay rate vs field (z axis)
    let grid: Vec<f64> = vec![0.0005, 0.001, 0.002, 0.003, 0.005, 0.007, 0.01, 0.02, 0.04];
    let curve = decay_rate_vs_field(&model, [0.0, 0.0, 1.0], &grid, (1e-3, 1e-2)).unwrap();
    println!("decay rate vs B:");
    for (b, r) in &curve.points {
        println!("  B={:.4} G  rate={:.5e} /s  (tau {:.2} us)", b, r, 1e6 / r);
    }
    println!("fitted exponent over [1e-3,1e-2]: {:?}", curve.fitted_exponent);

    // fluorescence scale at the wing for eta calibration
    for b in [0.25, 0.5, 1.0, 1.5, 2.0] {
        let rho = steady_state_at(&model, &FieldVector::new(0.0, 0.0, b)).unwrap();
        println!(
            "B={b:.2} G: pop(P32)={:.5e} pop(P12)={:.5e} I455(net)={:.1} cps",
            model.basis().term_population(rho.matrix(), TermLabel::P32),
            model.basis().term_population(rho.matrix(), TermLabel::P12),
            fluorescence_rate(&rho, &det_nobg, &model)
        );
    }

    // perturbative derivatives at 0 along z
    let obs = observable_operator(&det_nobg, &model);
    match derivative_fluorescence(&model, [0.0, 0.0, 1.0], &obs) {
        Ok(rep) => println!(
            "perturbative: I(0+)={:.4e}  dI/dB={:.4e}  d2I/dB2={:.4e}  (kernel {}, reduced {})",
            rep.value_at_zero, rep.first, rep.second, rep.kernel_dim, rep.reduced_dim
        ),
        Err(e) => println!("perturbative failed: {e}"),
    }
}
