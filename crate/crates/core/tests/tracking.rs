use std::sync::OnceLock;

use idep::dep::{angular_frequency, dep_prefactor_with, force_from_prefactor};
use idep::{
    cm_factor, rasterize, solve_fields, DeviceSpec, DielectricProps, FieldSolution, FluidProps, MaterialGrid,
    ParticleModel, ParticleState, SolveConfig, StepControl, StopRules, Tracer, VectorField3,
};

const UM: f64 = 1e-6;

struct Setup {
    spec: DeviceSpec<f64>,
    mg: MaterialGrid<f64>,
    sol: FieldSolution<f64>,
    model: ParticleModel<f64>,
    medium: DielectricProps<f64>,
    re_k: f64,
}

fn setup() -> &'static Setup {
    static S: OnceLock<Setup> = OnceLock::new();
    S.get_or_init(|| {
        let spec = DeviceSpec::reference(60.0 * UM);
        let mg = rasterize(&spec, 4.0 * UM).unwrap();
        let sol = solve_fields(&mg, &spec, &SolveConfig::default()).unwrap();
        let medium = DielectricProps::new(78.0, 1.76e-3).unwrap();
        let props = DielectricProps::new(60.0, 0.2).unwrap();
        let re_k = cm_factor(&props, &medium, angular_frequency(1e6)).unwrap().re;
        Setup { spec, mg, sol, model: ParticleModel { radius: 7.5 * UM, props }, medium, re_k }
    })
}

fn force(sign: f64) -> VectorField3<f64> {
    let s = setup();
    force_from_prefactor(dep_prefactor_with(s.model.radius, 78.0, sign * s.re_k), &s.sol.grad_e2)
}

fn tracer<'a>(f: &'a VectorField3<f64>, step: StepControl<f64>) -> Tracer<'a, f64> {
    let s = setup();
    Tracer {
        force: f,
        spec: &s.spec,
        walls: &s.mg,
        model: s.model,
        fluid: FluidProps::water_like(s.medium),
        step,
        // The staircased tip front sits up to two 4 µm cells behind the apex.
        stop: StopRules { capture_radius: Some(10.0 * UM), ..StopRules::default() },
        ambient: [0.0; 3],
    }
}

fn release() -> ParticleState<f64> {
    ParticleState { position: [200.0 * UM, 150.0 * UM, 30.0 * UM], time: 0.0 }
}

#[test]
fn positive_dep_climbs_e_squared_into_the_gap() {
    let f = force(1.0);
    let r = tracer(&f, StepControl::default()).integrate(release()).unwrap();
    assert!(r.outcome.is_trapped(), "{:?}", r.outcome);
    let e2 = &setup().sol.e2;
    let along: Vec<f64> = r.samples.iter().map(|s| e2.sample(s.position).unwrap()).collect();
    let first = along[0];
    let last = *along.last().unwrap();
    assert!(last > 10.0 * first, "E² {first:e} -> {last:e}");
    // Gradient ascent up to interpolation error.
    for w in along.windows(2) {
        assert!(w[1] >= w[0] * (1.0 - 1e-2), "E² fell from {:e} to {:e}", w[0], w[1]);
    }
}

#[test]
fn negative_dep_is_not_trapped() {
    let f = force(-1.0);
    let r = tracer(&f, StepControl::default()).integrate(release()).unwrap();
    assert!(!r.outcome.is_trapped(), "{:?}", r.outcome);
}

#[test]
fn halving_the_step_moves_the_endpoint_little() {
    let f = force(1.0);
    let coarse = tracer(&f, StepControl::default()).integrate(release()).unwrap();
    let base = StepControl::<f64>::default();
    let fine_step = StepControl { dt_max: base.dt_max / 2.0, displacement_cap: base.displacement_cap / 2.0, ..base };
    let fine = tracer(&f, fine_step).integrate(release()).unwrap();
    assert_eq!(coarse.outcome, fine.outcome);
    let a = coarse.final_state().position;
    let b = fine.final_state().position;
    let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
    assert!(d < 0.01 * fine.path_length(), "endpoints {d:e} m apart over {:e} m", fine.path_length());
}

#[test]
fn integration_is_deterministic() {
    let f = force(1.0);
    let t = tracer(&f, StepControl::default());
    let a = t.integrate(release()).unwrap();
    let b = t.integrate(release()).unwrap();
    assert_eq!(a.samples, b.samples);
    assert_eq!(a.outcome, b.outcome);
}

#[test]
fn ensemble_capture_follows_the_sign_of_re_k() {
    let lo = [240.0 * UM, 110.0 * UM, 5.0 * UM];
    let hi = [280.0 * UM, 190.0 * UM, 55.0 * UM];
    let pos = force(1.0);
    let neg = force(-1.0);
    let p = tracer(&pos, StepControl::default()).release_grid(lo, hi, [2, 4, 3]).unwrap();
    let n = tracer(&neg, StepControl::default()).release_grid(lo, hi, [2, 4, 3]).unwrap();
    assert!(p.capture_fraction() > 0.0);
    assert_eq!(n.capture_fraction(), 0.0);
}
