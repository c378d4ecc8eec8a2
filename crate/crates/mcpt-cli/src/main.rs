//! Command-line front end: field scans, spectrum tables, decay traces,
//! sensitivity reports, nulling runs, and the four-level toy model.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mcpt::atomic::FieldVector;
use mcpt::config::ExperimentConfig;
use mcpt::error::Error;
use mcpt::model::CompiledModel;
use mcpt::nulling::{
    null_search, random_offset, CoilSystem, MeasurementModel, NullProtocol,
};
use mcpt::observe::{
    dip_metrics, fluorescence_rate, scan_field, sensitivity, DetectionModel,
};
use mcpt::solve::{
    dark_state_analysis, evolve, liouvillian_spectrum, slowest_bright_mode, spectrum_to_csv,
    steady_state_at,
};
use mcpt::toymodel::{toy_fluorescence_vs_delta, ToyParams};

#[derive(Parser)]
#[command(name = "mcpt", version, about = "MCPT ion fluorescence simulator")]
struct Cli {
    /// Config file (TOML). Relative paths are also resolved against
    /// $MCPT_CONFIG_DIR. Defaults to the built-in experimental parameters.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// RNG seed override (nulling).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for grid evaluation.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Steady-state fluorescence against the field along one axis.
    Scan(ScanArgs),
    /// Liouvillian spectrum table at one field point.
    Spectrum(SpectrumArgs),
    /// Time evolution of the fluorescence from the initial state.
    Evolve(EvolveArgs),
    /// Shot-noise sensitivity report.
    Sensitivity(SensitivityArgs),
    /// Simulated three-axis field nulling.
    Null(NullArgs),
    /// Four-level toy model: fluorescence against the metastable splitting.
    Toy(ToyArgs),
    /// Parse and validate the config, print its hash.
    ValidateConfig,
}

#[derive(Args)]
struct ScanArgs {
    /// Detection filter: 455 or 493.
    #[arg(long)]
    detect: Option<u32>,
    #[arg(long)]
    axis: Option<String>,
    #[arg(long)]
    from: Option<f64>,
    #[arg(long)]
    to: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
    /// Add the dI/dB column (perturbative at B = 0, grid differences elsewhere).
    #[arg(long, default_value_t = true)]
    derivative: bool,
}

#[derive(Args)]
struct SpectrumArgs {
    #[arg(long, default_value_t = 0.0)]
    bx: f64,
    #[arg(long, default_value_t = 0.0)]
    by: f64,
    #[arg(long, default_value_t = 0.0)]
    bz: f64,
}

#[derive(Args)]
struct EvolveArgs {
    #[arg(long, default_value_t = 0.0)]
    bx: f64,
    #[arg(long, default_value_t = 0.0)]
    by: f64,
    #[arg(long, default_value_t = 0.0)]
    bz: f64,
    /// Final time in microseconds.
    #[arg(long, default_value_t = 50.0)]
    t_max_us: f64,
    #[arg(long, default_value_t = 201)]
    points: usize,
    #[arg(long)]
    detect: Option<u32>,
}

#[derive(Args)]
struct SensitivityArgs {
    /// sigma(N)^2 in counts/s; detector noise variance.
    #[arg(long)]
    sigma_sq: Option<f64>,
    /// Slope dN/dB in counts/s/gauss; computed from a scan when absent.
    #[arg(long)]
    slope: Option<f64>,
    #[arg(long)]
    detect: Option<u32>,
}

#[derive(Args)]
struct NullArgs {
    /// Disable shot noise (infinite integration limit).
    #[arg(long, default_value_t = false)]
    noiseless: bool,
}

#[derive(Args)]
struct ToyArgs {
    #[arg(long, default_value_t = -4.0)]
    delta_from: f64,
    #[arg(long, default_value_t = 4.0)]
    delta_to: f64,
    #[arg(long, default_value_t = 161)]
    points: usize,
    #[arg(long, default_value_t = 0.2)]
    delta_l: f64,
    #[arg(long, default_value_t = -0.35)]
    delta_p: f64,
    #[arg(long, default_value_t = 0.3)]
    omega_l: f64,
    #[arg(long, default_value_t = 0.3)]
    omega_p: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Domain(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn resolve_config_path(given: &Path) -> PathBuf {
    if given.exists() || given.is_absolute() {
        return given.to_path_buf();
    }
    if let Ok(dir) = std::env::var("MCPT_CONFIG_DIR") {
        let candidate = Path::new(&dir).join(given);
        if candidate.exists() {
            return candidate;
        }
    }
    given.to_path_buf()
}

fn load_config(cli: &Cli) -> mcpt::Result<ExperimentConfig> {
    match &cli.config {
        Some(path) => ExperimentConfig::load(&resolve_config_path(path)),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run(cli: &Cli) -> mcpt::Result<()> {
    let mut config = load_config(cli)?;
    if let Some(seed) = cli.seed {
        config.nulling.seed = seed;
    }

    match &cli.command {
        Command::ValidateConfig => {
            config.validate()?;
            println!("config ok, hash {}", config.hash());
            return Ok(());
        }
        Command::Scan(args) => {
            if let Some(d) = args.detect {
                config.detection.channel = d;
            }
            if let Some(a) = &args.axis {
                config.field.axis = a.clone();
            }
            if let Some(f) = args.from {
                config.field.from_gauss = f;
            }
            if let Some(t) = args.to {
                config.field.to_gauss = t;
            }
            if let Some(p) = args.points {
                config.field.points = p;
            }
            config.validate()?;
            let model = CompiledModel::build(&config)?;
            let detection = DetectionModel::from_config(&config.detection)?;
            let axis = config.field.axis_vector()?;
            let grid = config.field.grid();
            let scan = scan_field(&model, axis, &grid, &detection, args.derivative)?;

            std::fs::create_dir_all(&cli.out)?;
            let csv_path = cli.out.join("scan.csv");
            let mut csv = std::fs::File::create(&csv_path)?;
            scan.to_csv(&mut csv)?;
            let json_path = cli.out.join("scan.json");
            std::fs::write(&json_path, serde_json::to_string_pretty(&scan).unwrap())?;

            match dip_metrics(&scan) {
                Ok(m) => println!(
                    "scan written to {} ({} points); dip: fwhm {:.4} G, min {:.1} cps at {:.4} G, \
                     max |dI/dB| {:.4e} cps/G at {:.4} G",
                    csv_path.display(),
                    scan.b_values.len(),
                    m.fwhm_gauss,
                    m.min_rate,
                    m.min_b,
                    m.max_slope,
                    m.max_slope_b
                ),
                Err(e) => println!(
                    "scan written to {} ({} points); dip metrics unavailable: {e}",
                    csv_path.display(),
                    scan.b_values.len()
                ),
            }
        }
        Command::Spectrum(args) => {
            config.validate()?;
            let model = CompiledModel::build(&config)?;
            let field = FieldVector::new(args.bx, args.by, args.bz);
            let l = model.liouvillian(&field);
            let spec = liouvillian_spectrum(&l, model.rho0())?;

            std::fs::create_dir_all(&cli.out)?;
            let path = cli.out.join("spectrum.csv");
            let mut out = std::fs::File::create(&path)?;
            use std::io::Write;
            writeln!(out, "# config_hash = {}", config.hash())?;
            spectrum_to_csv(&spec, model.basis(), &mut out)?;

            let bright = slowest_bright_mode(&spec, model.dark_tol(), model.basis())?;
            let darks = dark_state_analysis(&model, &field)?;
            println!(
                "spectrum written to {} ({} modes)\ndark states: {} (D3/2: {}, D5/2: {})\n\
                 slowest bright mode: rate {:.4e} /s, lifetime {:.3} us, D3/2 weight {:.1}%",
                path.display(),
                spec.len(),
                darks.len(),
                darks.count_in(mcpt::atomic::TermLabel::D32),
                darks.count_in(mcpt::atomic::TermLabel::D52),
                bright.eigenvalue.re.abs(),
                bright.lifetime_s * 1e6,
                bright.weights[&mcpt::atomic::TermLabel::D32] * 100.0
            );
        }
        Command::Evolve(args) => {
            if let Some(d) = args.detect {
                config.detection.channel = d;
            }
            config.validate()?;
            let model = CompiledModel::build(&config)?;
            let detection = DetectionModel::from_config(&config.detection)?;
            let field = FieldVector::new(args.bx, args.by, args.bz);
            let l = model.liouvillian(&field);
            let times: Vec<f64> = (0..args.points)
                .map(|i| args.t_max_us * 1e-6 * i as f64 / (args.points.max(2) - 1) as f64)
                .collect();
            let ev = evolve(&l, model.rho0(), &times)?;

            std::fs::create_dir_all(&cli.out)?;
            let path = cli.out.join("evolve.csv");
            let mut out = std::fs::File::create(&path)?;
            use std::io::Write;
            writeln!(out, "# config_hash = {}", config.hash())?;
            writeln!(out, "t_s,rate_counts_per_s,p12_pop,p32_pop,d32_pop,d52_pop,s_pop")?;
            use mcpt::atomic::TermLabel as T;
            for (t, rho) in ev.times.iter().zip(ev.states.iter()) {
                let b = model.basis();
                writeln!(
                    out,
                    "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                    t,
                    fluorescence_rate(rho, &detection, &model),
                    b.term_population(rho.matrix(), T::P12),
                    b.term_population(rho.matrix(), T::P32),
                    b.term_population(rho.matrix(), T::D32),
                    b.term_population(rho.matrix(), T::D52),
                    b.term_population(rho.matrix(), T::S12),
                )?;
            }
            println!(
                "evolution written to {} ({} samples, spectral path: {})",
                path.display(),
                ev.times.len(),
                ev.spectral
            );
        }
        Command::Sensitivity(args) => {
            if let Some(d) = args.detect {
                config.detection.channel = d;
            }
            config.validate()?;
            let sigma = match args.sigma_sq {
                Some(v) => {
                    if v < 0.0 {
                        return Err(Error::domain("sigma_sq must be non-negative"));
                    }
                    v.sqrt()
                }
                None => config.detection.noise_variance_cps.sqrt(),
            };
            let slope = match args.slope {
                Some(s) => s,
                None => {
                    let model = CompiledModel::build(&config)?;
                    let detection = DetectionModel::from_config(&config.detection)?;
                    let axis = config.field.axis_vector()?;
                    let grid = config.field.grid();
                    let scan = scan_field(&model, axis, &grid, &detection, true)?;
                    dip_metrics(&scan)?.max_slope
                }
            };
            let s = sensitivity(slope, sigma)?;
            println!(
                "sensitivity: sigma(N) = {:.4} counts/s/sqrt(Hz), slope = {:.4e} counts/s/G",
                sigma, slope
            );
            println!(
                "Delta B = {:.4e} G/sqrt(Hz) = {:.1} pT/sqrt(Hz)",
                s.gauss_per_sqrt_hz, s.pt_per_sqrt_hz
            );
        }
        Command::Null(args) => {
            config.validate()?;
            if args.noiseless {
                config.nulling.noiseless = true;
            }
            let model = CompiledModel::build(&config)?;
            let detection = DetectionModel::from_config(&config.detection)?;
            let n = &config.nulling;
            let offset = match n.offset_gauss {
                Some([x, y, z]) => FieldVector::new(x, y, z),
                None => random_offset(n.seed, n.offset_max_gauss),
            };
            let coils = CoilSystem {
                calibration: n.calibration,
                offset,
                current_resolution: n.current_resolution_amp,
            };
            let meas = MeasurementModel {
                integration_time_s: n.integration_time_s,
                rng_seed: n.seed,
                dark_count_rate: n.dark_count_rate_cps,
            };
            let protocol = NullProtocol::from_config(n);
            let result = null_search(&coils, &model, &detection, &meas, &protocol)?;

            std::fs::create_dir_all(&cli.out)?;
            let log_path = cli.out.join("null_scan.jsonl");
            let mut log = String::new();
            for rec in &result.scan_log {
                log.push_str(&serde_json::to_string(rec).unwrap());
                log.push('\n');
            }
            std::fs::write(&log_path, log)?;
            let res_path = cli.out.join("null_result.json");
            let mut doc = serde_json::to_value(&result).unwrap();
            doc["config_hash"] = serde_json::Value::String(config.hash());
            doc.as_object_mut().unwrap().remove("scan_log");
            std::fs::write(&res_path, serde_json::to_string_pretty(&doc).unwrap())?;

            println!(
                "nulling converged in {} sweeps, {} measurements\n\
                 currents: [{:.6}, {:.6}, {:.6}] A\n\
                 residual |B|: {:.3e} G (estimate {:.3e} G)\nlogs: {}, {}",
                result.sweeps,
                result.evaluations,
                result.currents[0],
                result.currents[1],
                result.currents[2],
                result.residual_gauss,
                result.residual_estimate_gauss,
                log_path.display(),
                res_path.display()
            );
        }
        Command::Toy(args) => {
            let p = ToyParams {
                delta_l: args.delta_l,
                delta_p: args.delta_p,
                omega_l: args.omega_l,
                omega_p: args.omega_p,
                ..ToyParams::default()
            };
            let n = args.points.max(2);
            let grid: Vec<f64> = (0..n)
                .map(|i| {
                    args.delta_from + (args.delta_to - args.delta_from) * i as f64 / (n - 1) as f64
                })
                .collect();
            let curve = toy_fluorescence_vs_delta(&p, &grid)?;

            std::fs::create_dir_all(&cli.out)?;
            let path = cli.out.join("toy.csv");
            let mut out = std::fs::File::create(&path)?;
            use std::io::Write;
            writeln!(out, "# config_hash = {}", config.hash())?;
            writeln!(out, "delta_over_gamma,scatter_rate_over_gamma")?;
            for (d, r) in &curve {
                writeln!(out, "{:.12e},{:.12e}", d, r)?;
            }
            println!("toy-model curve written to {} ({} points)", path.display(), curve.len());
        }
    }

    // every successful data run also drops the resolved config next to it
    std::fs::create_dir_all(&cli.out)?;
    std::fs::write(
        cli.out.join("resolved_config.json"),
        serde_json::to_string_pretty(&config.snapshot()).unwrap(),
    )?;
    Ok(())
}

/// Probe the steady state once so `evolve`/`scan` failures surface early.
#[allow(dead_code)]
fn preflight(model: &CompiledModel) -> mcpt::Result<()> {
    let _ = steady_state_at(model, &FieldVector::new(0.0, 0.0, 0.5))?;
    Ok(())
}
