//! Cross-module regression checks against frozen oracle values and file-level
//! round trips for the shipped configuration.

use std::path::Path;
use std::sync::OnceLock;

use etcabs::config::RunConfig;
use etcabs::delta::{solve_delta, DeltaSearchParams};
use etcabs::etc::{
    build_extended_field, inter_event_time_oracle, EtcSystem, ExtendedSystem, FieldEval,
    OracleParams,
};
use etcabs::isochron::MuFunction;
use etcabs::ode::{integrate_to, OdeOptions};
use etcabs::poly::Polynomial;

fn shipped_config() -> &'static RunConfig {
    static CFG: OnceLock<RunConfig> = OnceLock::new();
    CFG.get_or_init(|| {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/sec5.toml");
        RunConfig::from_path(&path).expect("shipped config loads")
    })
}

fn shipped_system() -> (EtcSystem, ExtendedSystem) {
    let cfg = shipped_config();
    let n = cfg.system.state_dim;
    let m = cfg.system.input_dim;
    let plant = etcabs::poly::PolyVectorField::new(
        cfg.system
            .plant
            .iter()
            .map(|t| Polynomial::parse(t, n + m).unwrap())
            .collect(),
    );
    let controller = etcabs::poly::PolyVectorField::new(
        cfg.system
            .controller
            .iter()
            .map(|t| Polynomial::parse(t, n).unwrap())
            .collect(),
    );
    let sys = EtcSystem::new(plant, controller, cfg.system.sigma_sq, Some(cfg.system.alpha))
        .unwrap();
    let ext = build_extended_field(&sys).unwrap();
    (sys, ext)
}

fn shipped_mu() -> &'static MuFunction {
    static MU: OnceLock<MuFunction> = OnceLock::new();
    MU.get_or_init(|| {
        let cfg = shipped_config();
        let (sys, ext) = shipped_system();
        let phi = sys.triggering_polynomial();
        let params = DeltaSearchParams {
            lp_samples: cfg.delta.lp_samples,
            seed: cfg.seed,
            max_rounds: cfg.delta.max_rounds,
            coeff_cap_ratio: cfg.delta.coeff_cap_ratio,
            max_boxes: cfg.delta.max_boxes,
        };
        let cert = solve_delta(
            &ext,
            &phi,
            cfg.delta.p,
            cfg.delta.d,
            cfg.delta.z_radius,
            cfg.delta.epsilon,
            &params,
        )
        .unwrap();
        MuFunction::new(cert, cfg.isochron.rho, sys.alpha, sys.theta).unwrap()
    })
}

// frozen from the dense-integration + bisection oracle at abs_tol 1e-9
const TAU_AT_START_POINT: f64 = 7.431237182617e-4;
// frozen from the radial-sweep oracle on the shipped certificate
const RADIUS_ALONG_X_AXIS: f64 = 2.890092254151;

#[test]
fn oracle_regression_at_the_simulation_start() {
    let (sys, ext) = shipped_system();
    let params = OracleParams::new(1e-9, 0.1, 4e-5);
    let tau = inter_event_time_oracle(&sys, &ext, &[1.5, 2.0], &params)
        .unwrap()
        .tau()
        .expect("triggers");
    assert!(
        (tau - TAU_AT_START_POINT).abs() <= 2e-9,
        "tau(1.5, 2) = {tau:.12e}, frozen {TAU_AT_START_POINT:.12e}"
    );
}

#[test]
fn manifold_radius_regression_along_x_axis() {
    let mu = shipped_mu();
    let r = mu
        .manifold_radius_along_ray(&[1.0, 0.0], 4e-4, 1e-9)
        .unwrap();
    assert!(
        (r - RADIUS_ALONG_X_AXIS).abs() <= 1e-6,
        "radius = {r:.12}, frozen {RADIUS_ALONG_X_AXIS}"
    );
}

#[test]
fn first_lie_derivative_matches_flow_derivative_at_start() {
    let (sys, ext) = shipped_system();
    let phi = sys.triggering_polynomial();
    let lie1 = ext.field.lie_derivative(&phi).unwrap();
    let x0 = [1.5, 2.0, 0.0, 0.0];
    let value = lie1.eval(&x0).unwrap();
    // central difference of t -> phi(xi(t)) at t = 0 along the flow
    let eval = FieldEval::new(&ext.field);
    let f = move |y: &[f64], dy: &mut [f64]| eval.eval_into(y, dy);
    let eval2 = FieldEval::new(&ext.field);
    let fneg = move |y: &[f64], dy: &mut [f64]| {
        eval2.eval_into(y, dy);
        for v in dy.iter_mut() {
            *v = -*v;
        }
    };
    let h = 1e-7;
    let opts = OdeOptions::default();
    let plus = integrate_to(&f, &x0, 0.0, h, &opts).unwrap();
    let minus = integrate_to(&fneg, &x0, 0.0, h, &opts).unwrap();
    let fd = (phi.eval(&plus).unwrap() - phi.eval(&minus).unwrap()) / (2.0 * h);
    assert!(
        (fd - value).abs() <= 1e-6 * value.abs().max(1e-12),
        "lie = {value:.9e}, fd = {fd:.9e}"
    );
}

#[test]
fn band_membership_agrees_with_oracle_lower_bounds() {
    use rand::{Rng, SeedableRng};
    let (sys, ext) = shipped_system();
    let mu = shipped_mu();
    let times = &shipped_config().times;
    let params = OracleParams::new(1e-9, 0.5, 4e-5);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xB0B);
    let mut checked = 0;
    while checked < 300 {
        let ang = rng.gen_range(0.0..std::f64::consts::TAU);
        let r = rng.gen_range(0.05..4.0);
        let x = [r * ang.cos(), r * ang.sin()];
        let band = match mu.region_membership(times, &x).unwrap() {
            Some(b) => b,
            None => continue,
        };
        let tau = inter_event_time_oracle(&sys, &ext, &x, &params)
            .unwrap()
            .tau()
            .unwrap_or(f64::INFINITY);
        assert!(
            tau >= times[band - 1] - 1e-6,
            "band {band} claims tau >= {} but oracle found {tau} at {x:?}",
            times[band - 1]
        );
        checked += 1;
    }
}

#[test]
fn certificate_json_reload_reproduces_mu() {
    let mu = shipped_mu();
    let v = mu.cert.to_json();
    let cert = etcabs::delta::DeltaCertificate::from_json(&v).unwrap();
    let mu2 = MuFunction::new(cert, mu.rho, mu.alpha, mu.theta).unwrap();
    for (x, t) in [([1.0, 0.3], 4e-4), ([-2.0, 1.7], 9e-4), ([0.2, -0.1], 2e-3)] {
        assert_eq!(mu.mu_eval(&x, t).unwrap(), mu2.mu_eval(&x, t).unwrap());
    }
}
