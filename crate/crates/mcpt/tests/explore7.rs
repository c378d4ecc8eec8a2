// curvature balance of I(B) at the null for candidate repump polarizations
use mcpt::config::{ExperimentConfig, PolarizationSpec};
use mcpt::model::CompiledModel;
use mcpt::observe::{observable_operator, DetectionModel};
use mcpt::solve::derivative_fluorescence;

#[test]
#[ignore]
fn curvature_balance() {
    for (name, p650, p614) in [
        (
            "mild ellipticity 0.3",
            [0.675, 0.0, 0.0, 0.298, -0.675, 0.0],
            [0.66, 0.0, 0.0, 0.359, -0.66, 0.0],
        ),
        (
            "strong 0.5/0.52",
            [0.612, 0.0, 0.0, 0.5, -0.612, 0.0],
            [0.6, 0.0, 0.0, 0.52, -0.6, 0.0],
        ),
        (
            "stronger 0.65",
            [0.54, 0.0, 0.0, 0.65, -0.54, 0.0],
            [0.52, 0.0, 0.0, 0.68, -0.52, 0.0],
        ),
        (
            "very strong 0.8",
            [0.42, 0.0, 0.0, 0.8, -0.42, 0.0],
            [0.44, 0.0, 0.0, 0.78, -0.44, 0.0],
        ),
        (
            "mixed phases",
            [0.6, 0.1, 0.0, 0.52, -0.55, 0.2],
            [0.55, -0.15, 0.1, 0.55, -0.58, 0.0],
        ),
    ] {
        let mut cfg = ExperimentConfig::default();
        cfg.lasers.l650.polarization = PolarizationSpec::Spherical(p650);
        cfg.lasers.l614.polarization = PolarizationSpec::Spherical(p614);
        let model = CompiledModel::build(&cfg).unwrap();
        let det = DetectionModel::from_config(&cfg.detection).unwrap();
        let obs = observable_operator(&det, &model);
        let mut curvs = [0.0; 3];
        let mut firsts = [0.0; 3];
        let mut ok = true;
        for (i, axis) in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]].iter().enumerate() {
            match derivative_fluorescence(&model, *axis, &obs) {
                Ok(rep) => {
                    curvs[i] = rep.second;
                    firsts[i] = rep.first;
                }
                Err(e) => {
                    println!("{name}: axis {i} failed: {e}");
                    ok = false;
                }
            }
        }
        if ok {
            println!(
                "{name}: Ixx={:.3e} Iyy={:.3e} Izz={:.3e}  (dI: {:+.1e} {:+.1e} {:+.1e})",
                curvs[0], curvs[1], curvs[2], firsts[0], firsts[1], firsts[2]
            );
        }
    }
}
