//! End-to-end acceptance checks. Runs as a plain binary so every criterion
//! prints its own PASS/FAIL line; exits non-zero if any fails.

use std::cell::Cell;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use idep::config::bundled;
use idep::dep::{angular_frequency, crossover_frequency, dep_force_field};
use idep::export::{read_scalar_csv, scalar_csv};
use idep::field::{ScalarQuantity, VectorQuantity};
use idep::geometry::ElectrodeMode;
use idep::metrics::centerline_peak;
use idep::runner::{run, Command};
use idep::solver::{solve_potential, x_face_currents};
use idep::{
    cm_factor, height_decay, parse_config, rasterize, solve_fields, uniformity, Centerline, DeviceSpec,
    DielectricProps, FieldSolution, FluidProps, Grid3, Label, MaterialGrid, Materials, ParticleModel, ParticleState,
    SolveConfig, StepControl, StopRules, Tracer, VectorField3,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

const UM: f64 = 1e-6;
const RES: f64 = 2.0 * UM;
const EPS0: f64 = 8.854187817e-12;

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn cell() -> DielectricProps<f64> {
    DielectricProps::new(2.5, 0.01).unwrap()
}

fn buffer() -> DielectricProps<f64> {
    DielectricProps::new(78.0, 1.76e-3).unwrap()
}

struct Reference {
    spec: DeviceSpec<f64>,
    mg: MaterialGrid<f64>,
    sol: FieldSolution<f64>,
    seconds: f64,
}

fn reference_solve() -> Result<Reference, String> {
    let spec = DeviceSpec::reference(60.0 * UM);
    let t = Instant::now();
    let mg = rasterize(&spec, RES).map_err(|e| e.to_string())?;
    let sol = solve_fields(&mg, &spec, &SolveConfig::default()).map_err(|e| e.to_string())?;
    Ok(Reference { spec, mg, sol, seconds: t.elapsed().as_secs_f64() })
}

fn height_decay_reproduction(p: &Reference) -> Check {
    let heights = [0.0, 30.0 * UM, 60.0 * UM];
    let r = height_decay(&p.sol.grad_e2_magnitude, &p.spec, &heights, Centerline::AlongChannel)
        .map_err(|e| e.to_string())?;
    let [_, a, b] = [r.relative_reduction[0], r.relative_reduction[1], r.relative_reduction[2]];
    let detail =
        format!("reductions {:.1}% and {:.1}% (want 14±8, 53±8), solve {:.0} s", 100.0 * a, 100.0 * b, p.seconds);
    ensure((a - 0.14).abs() <= 0.08 && (b - 0.53).abs() <= 0.08 && b > a && a > 0.0 && p.seconds <= 300.0, detail)
}

fn gap_monotonicity(p: &Reference) -> Check {
    let mut peaks = Vec::new();
    for gap in [40.0, 60.0, 80.0, 100.0] {
        let peak = if gap == 60.0 {
            centerline_peak(&p.sol.grad_e2_magnitude, &p.spec, 0.0, Centerline::AlongChannel)
        } else {
            let spec = p.spec.with_gap(gap * UM);
            rasterize(&spec, RES)
                .and_then(|mg| solve_fields(&mg, &spec, &SolveConfig::default()))
                .and_then(|sol| centerline_peak(&sol.grad_e2_magnitude, &spec, 0.0, Centerline::AlongChannel))
        };
        peaks.push(peak.map_err(|e| e.to_string())?);
    }
    let shown: Vec<String> = peaks.iter().map(|p| format!("{p:.3e}")).collect();
    let detail = format!("peaks [{}] V^2/m^3 for gaps 40, 60, 80, 100 um", shown.join(", "));
    ensure(peaks.windows(2).all(|w| w[1] < w[0]), detail)
}

fn uniformity_above_insulator(p: &Reference) -> Check {
    let low = uniformity(&p.sol.e2, 30.0 * UM).map_err(|e| e.to_string())?.coefficient_of_variation;
    let high = uniformity(&p.sol.e2, 160.0 * UM).map_err(|e| e.to_string())?.coefficient_of_variation;
    ensure(high < low && high < 0.05, format!("CV {low:.4} at 30 um, {high:.4} at 160 um"))
}

fn box_spec(volts: f64) -> DeviceSpec<f64> {
    DeviceSpec {
        channel_length: 100.0 * UM,
        channel_width: 10.0 * UM,
        domain_height: 10.0 * UM,
        insulator_height: 5.0 * UM,
        tip_pairs: vec![],
        electrode_mode: ElectrodeMode::Voltage(volts),
    }
}

fn solver_oracles() -> Check {
    let e = |e: idep::Error| e.to_string();
    let volts = 3.0;
    let spec = box_spec(volts);

    // Uniform conductor.
    let mg = rasterize(&spec, 2.0 * UM).map_err(e)?;
    let sol = solve_potential(&mg, &spec, &SolveConfig::default()).map_err(e)?;
    let g = sol.phi.grid;
    let linear = (0..g.len())
        .map(|n| {
            let [i, j, k] = g.ijk(n);
            (sol.phi.values[n] - volts * g.center(i, j, k)[0] / spec.channel_length).abs()
        })
        .fold(0.0, f64::max);

    // Two layers in series, the second at half the conductivity.
    let grid = Grid3::covering([100.0 * UM, 10.0 * UM, 10.0 * UM], UM, [0.0; 3]).map_err(e)?;
    let labels =
        (0..grid.len()).map(|n| if grid.ijk(n)[0] < grid.nx / 2 { Label::Medium } else { Label::Insulator }).collect();
    let mg2 = MaterialGrid::from_labels(grid, labels, Materials::default()).map_err(e)?;
    let cfg2 = SolveConfig { rel_tolerance: 1e-10, conductivity_ratio: 0.5, ..SolveConfig::default() };
    let sol2 = solve_fields(&mg2, &spec, &cfg2).map_err(e)?;
    let half = spec.channel_length / 2.0;
    let (e1, e2) = (volts / 3.0 / half, 2.0 * volts / 3.0 / half);
    let mut series = 0.0f64;
    for n in 0..grid.len() {
        let [i, _, _] = grid.ijk(n);
        let want = if i < grid.nx / 2 { e1 } else { e2 };
        if i == grid.nx / 2 - 1 || i == grid.nx / 2 {
            continue;
        }
        series = series.max((-sol2.e.values[n][0] - want).abs() / want);
    }
    let iface = sol2.phi().at(grid.nx / 2 - 1, 5, 5) + e1 * 0.5 * UM;
    series = series.max((iface - volts / 3.0).abs() / (volts / 3.0));

    // Maximum principle and conservation on the tip geometry.
    let reference = DeviceSpec::reference(60.0 * UM);
    let mg3 = rasterize(&reference, 5.0 * UM).map_err(e)?;
    let cfg3 = SolveConfig::default();
    let sol3 = solve_potential(&mg3, &reference, &cfg3).map_err(e)?;
    let v = reference.drive_voltage();
    let bounded = sol3.phi.min() > 0.0 && sol3.phi.max() < v;
    let currents = x_face_currents(&mg3, &cfg3, &sol3).map_err(e)?;
    let leak = currents.iter().map(|c| (c - currents[0]).abs()).fold(0.0, f64::max) / currents[0].abs();

    let detail = format!(
        "linear error {:.1e} V (limit {:.1e}); series error {:.2e} (limit 5e-3); max principle {}; current mismatch {:.1e} (limit {:.0e})",
        linear,
        1e-9 * volts,
        series,
        if bounded { "holds" } else { "violated" },
        leak,
        cfg3.rel_tolerance
    );
    ensure(linear < 1e-9 * volts && series < 5e-3 && bounded && leak <= cfg3.rel_tolerance, detail)
}

fn cm_limits() -> Check {
    let e = |e: idep::Error| e.to_string();
    let low = cm_factor(&cell(), &buffer(), angular_frequency(1.0)).map_err(e)?.re;
    let high = cm_factor(&cell(), &buffer(), angular_frequency(1e12)).map_err(e)?.re;
    let low_oracle = (0.01 - 0.00176) / (0.01 + 2.0 * 0.00176);
    let high_oracle = (2.5 - 78.0) / (2.5 + 156.0);

    let rng = TestRng::deterministic_rng(RngAlgorithm::ChaCha);
    let mut runner = TestRunner::new_with_rng(Config { cases: 10_000, ..Config::default() }, rng);
    let inputs = (1.0f64..200.0, 0.0f64..10.0, 1.0f64..200.0, 1e-6f64..10.0, 0.0f64..12.0);
    let cases = Cell::new(0usize);
    let bounded = runner
        .run(&inputs, |(ep, sp, em, sm, lf)| {
            cases.set(cases.get() + 1);
            let k = cm_factor(
                &DielectricProps::new(ep, sp).unwrap(),
                &DielectricProps::new(em, sm).unwrap(),
                angular_frequency(10f64.powf(lf)),
            )
            .unwrap();
            prop_assert!((-0.5..=1.0).contains(&k.re));
            Ok(())
        })
        .is_ok();

    let (p, m) = (cell(), buffer());
    let oracle = ((m.sigma - p.sigma) * (p.sigma + 2.0 * m.sigma)
        / ((p.eps_r - m.eps_r) * (p.eps_r + 2.0 * m.eps_r) * EPS0 * EPS0))
        .sqrt()
        / (2.0 * std::f64::consts::PI);
    let found = crossover_frequency(&p, &m).unwrap_or(f64::NAN);
    let detail = format!(
        "low {low:.4} vs {low_oracle:.4}, high {high:.4} vs {high_oracle:.4}, bounds on {} inputs {}, crossover {found:.4e} Hz vs {oracle:.4e} Hz",
        cases.get(),
        if bounded { "hold" } else { "violated" }
    );
    ensure(
        (low - low_oracle).abs() < 1e-3
            && (high - high_oracle).abs() < 1e-3
            && bounded
            && cases.get() >= 10_000
            && (found - oracle).abs() / oracle < 0.01
            && (oracle - 1.73e6).abs() / 1.73e6 < 0.01,
        detail,
    )
}

fn force_scaling() -> Check {
    let e = |e: idep::Error| e.to_string();
    let spec = DeviceSpec::reference(60.0 * UM);
    let mg = rasterize(&spec, 5.0 * UM).map_err(e)?;
    let cfg = SolveConfig::default();
    let a = solve_fields(&mg, &spec, &cfg).map_err(e)?;
    let b = solve_fields(&mg, &spec.scaled_drive(2.0), &cfg).map_err(e)?;
    let omega = angular_frequency(1e6);
    let model = ParticleModel { radius: 7.5 * UM, props: DielectricProps::new(60.0, 0.2).map_err(e)? };
    let big = ParticleModel { radius: 15.0 * UM, ..model };
    let fa = dep_force_field(&model, &buffer(), omega, &a.grad_e2).map_err(e)?;
    let fb = dep_force_field(&model, &buffer(), omega, &b.grad_e2).map_err(e)?;
    let fr = dep_force_field(&big, &buffer(), omega, &a.grad_e2).map_err(e)?;
    let mag = |v: [f64; 3]| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let mut voltage = 0.0f64;
    let mut radius_exact = true;
    for n in 0..fa.values.len() {
        let (x, y, r) = (mag(fa.values[n]), mag(fb.values[n]), fr.values[n]);
        if x > 0.0 {
            voltage = voltage.max((y / (4.0 * x) - 1.0).abs());
        } else if y != 0.0 {
            voltage = f64::INFINITY;
        }
        radius_exact &= (0..3).all(|c| r[c] == 8.0 * fa.values[n][c]);
    }
    let zero = VectorField3::from_fn(*mg.grid(), VectorQuantity::GradE2, |_| [0.0; 3]);
    let fz = dep_force_field(&model, &buffer(), omega, &zero).map_err(e)?;
    let zero_ok = fz.values.iter().flatten().all(|&c| c == 0.0);
    let detail = format!(
        "voltage x2 error {voltage:.1e} (limit 1e-9); radius x2 gives exactly x8: {radius_exact}; zero gradient gives zero force: {zero_ok}"
    );
    ensure(voltage < 1e-9 && radius_exact && zero_ok, detail)
}

fn trapping(p: &Reference) -> Check {
    let e = |e: idep::Error| e.to_string();
    let medium = buffer();
    let props = DielectricProps::new(60.0, 0.2).map_err(e)?;
    let model = ParticleModel { radius: 7.5 * UM, props };
    let omega = angular_frequency(1e6);
    let re_k = cm_factor(&props, &medium, omega).map_err(e)?.re;
    let start = ParticleState { position: [200.0 * UM, 150.0 * UM, 30.0 * UM], time: 0.0 };
    let outcome = |sign: f64| -> Result<String, String> {
        let force = dep_force_field(&model, &medium, omega, &p.sol.grad_e2).map_err(e)?.scaled(sign);
        let t = Tracer {
            force: &force,
            spec: &p.spec,
            walls: &p.mg,
            model,
            fluid: FluidProps::water_like(medium),
            step: StepControl::default(),
            stop: StopRules::default(),
            ambient: [0.0; 3],
        };
        Ok(t.integrate(start).map_err(e)?.outcome.label())
    };
    let pos = outcome(1.0)?;
    let neg = outcome(-1.0)?;
    let detail = format!("Re K = {re_k:.3} at 1 MHz: {pos}; flipped sign: {neg}");
    ensure(re_k > 0.0 && pos.starts_with("trapped") && !neg.starts_with("trapped"), detail)
}

fn csv_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> =
        std::fs::read_dir(dir).map(|d| d.filter_map(|e| e.ok()).map(|e| e.path()).collect()).unwrap_or_default();
    files.retain(|p: &std::path::PathBuf| p.extension().is_some_and(|x| x == "csv"));
    files.sort();
    files
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap_or_default()))
        .collect()
}

fn determinism_and_round_trips() -> Check {
    let mut cfg = parse_config(bundled("paper_fig4a").unwrap()).map_err(|e| e.to_string())?;
    cfg.device.resolution_um = 10.0;
    cfg.output.format = idep::config::FieldFormat::Csv;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let pool = rayon::ThreadPoolBuilder::new().num_threads(2).build().map_err(|e| e.to_string())?;
    for dir in [&a, &b] {
        pool.install(|| run(Command::Solve, &cfg, dir)).map_err(|f| f.to_string())?;
    }
    let (fa, fb) = (csv_outputs(&a), csv_outputs(&b));
    let identical = !fa.is_empty() && fa == fb;

    let configs_ok = idep::config::BUNDLED
        .iter()
        .all(|(_, text)| parse_config(text).is_ok_and(|c| parse_config(&c.to_string()).is_ok_and(|back| back == c)));

    let phi_text = std::fs::read_to_string(a.join("phi.csv")).map_err(|e| e.to_string())?;
    let phi = read_scalar_csv(&phi_text, ScalarQuantity::Potential).map_err(|e| e.to_string())?;
    let field_ok = scalar_csv(&phi) == phi_text;

    let detail = format!(
        "{} CSV files byte-identical across runs: {identical}; config round-trips exact: {configs_ok}; field CSV round-trip exact: {field_ok}",
        fa.len()
    );
    ensure(identical && configs_ok && field_ok, detail)
}

fn main() -> ExitCode {
    let reference = reference_solve();
    let with_reference = |f: fn(&Reference) -> Check| -> Check {
        match &reference {
            Ok(p) => f(p),
            Err(e) => Err(format!("reference solve failed: {e}")),
        }
    };
    let results: Vec<(&str, Check)> = vec![
        ("height decay", with_reference(height_decay_reproduction)),
        ("gap monotonicity", with_reference(gap_monotonicity)),
        ("uniformity above the insulator", with_reference(uniformity_above_insulator)),
        ("solver oracles", solver_oracles()),
        ("CM factor limits", cm_limits()),
        ("force scaling", force_scaling()),
        ("trapping", with_reference(trapping)),
        ("determinism and round-trips", determinism_and_round_trips()),
    ];
    let mut failed = 0;
    for (n, (name, r)) in results.iter().enumerate() {
        match r {
            Ok(d) => println!("criterion {} ({name}): PASS: {d}", n + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {} ({name}): FAIL: {d}", n + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
