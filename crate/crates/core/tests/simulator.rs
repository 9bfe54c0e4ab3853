//! Integration, excitation signals, empirical gains and benchmark rollouts.

use iqc_cert::simulator::{
    build_flight, build_power, empirical_l2_gain, integrate, lowpass_noise, random_state, sinusoid, trapezoid_energy,
    Dynamics, LinearController, PowerNetwork, Signal, ZeroController,
};
use iqc_cert::system_model::LtiSystem;
use nalgebra::{DMatrix, DVector};

/// `‖y‖₂/‖e‖₂` for `1/(s+1)` driven by `sin(0.5 t)` on `[0, 20)`, horizon 30,
/// step 1e-3, zero-order hold and trapezoid energies (exact discretisation
/// in numpy).
const SINUSOID_RATIO: f64 = 0.896_866_960_086_367_5;

fn scalar() -> Dynamics {
    Dynamics::linear(LtiSystem::new(DMatrix::from_element(1, 1, -1.0), DMatrix::from_element(1, 1, 1.0), None).unwrap())
}

#[test]
fn exponential_decay_is_integrated_accurately() {
    let x0 = DVector::from_element(1, 1.0);
    let traj = integrate(&scalar(), &ZeroController { n_a: 1 }, &Signal::zeros(0, 0, 1e-3), &x0, 1.0, 1e-3, None).unwrap();
    assert_eq!(traj.len(), 1001);
    assert!((traj.states.last().unwrap()[0] - (-1.0f64).exp()).abs() < 1e-9);
    assert!(!traj.diverged && traj.in_domain);
}

#[test]
fn equilibrium_stays_put() {
    let f = build_flight().unwrap();
    let x0 = DVector::zeros(f.n_s());
    let traj = integrate(&f.dynamics(), &ZeroController { n_a: 4 }, &Signal::zeros(0, 0, 1e-3), &x0, 2.0, 1e-3, None).unwrap();
    assert!(traj.states.iter().all(|x| x.amax() == 0.0));
}

#[test]
fn sinusoid_gain_matches_exact_discretisation() {
    let h = 1e-3;
    let e = sinusoid(1, 0, 30_001, h, 0.5, 1.0, 20.0);
    let est = empirical_l2_gain(&scalar(), &ZeroController { n_a: 1 }, &[e], 30.0).unwrap();
    assert!((est.gain - SINUSOID_RATIO).abs() < 1e-8, "{}", est.gain);
    // Close to the steady-state magnitude 1/√(1 + ω²).
    assert!((est.gain - 1.0 / 1.25f64.sqrt()).abs() < 5e-3);
}

#[test]
fn zero_energy_excitations_are_rejected() {
    let z = Signal::zeros(1, 100, 1e-2);
    let r = empirical_l2_gain(&scalar(), &ZeroController { n_a: 1 }, &[z.clone(), z.clone()], 1.0);
    assert!(r.is_err());
    let ok = sinusoid(1, 0, 100, 1e-2, 1.0, 1.0, 1.0);
    let est = empirical_l2_gain(&scalar(), &ZeroController { n_a: 1 }, &[z, ok], 1.0).unwrap();
    assert_eq!(est.skipped, 1);
    assert_eq!(est.ratios.len(), 1);
}

#[test]
fn bad_arguments_are_rejected() {
    let x0 = DVector::from_element(1, 1.0);
    let none = Signal::zeros(0, 0, 1e-3);
    assert!(integrate(&scalar(), &ZeroController { n_a: 1 }, &none, &x0, 1.0, 0.0, None).is_err());
    assert!(integrate(&scalar(), &ZeroController { n_a: 1 }, &none, &DVector::zeros(2), 1.0, 1e-3, None).is_err());
    assert!(integrate(&scalar(), &ZeroController { n_a: 2 }, &none, &x0, 1.0, 1e-3, None).is_err());
}

#[test]
fn divergence_is_flagged() {
    let x0 = DVector::from_element(1, 1.0);
    let unstable = LinearController { k: DMatrix::from_element(1, 1, 10.0) };
    let traj = integrate(&scalar(), &unstable, &Signal::zeros(0, 0, 1e-2), &x0, 10.0, 1e-2, None).unwrap();
    assert!(traj.diverged);
    assert!(traj.len() < 1001);
}

#[test]
fn flight_nominal_loop_converges() {
    // The fastest closed-loop pole is near 320 rad/s; RK4 needs h·|λ| < 2.78.
    let f = build_flight().unwrap();
    let x0 = random_state(f.n_s(), 0.1, 7);
    let traj = integrate(&f.dynamics(), &ZeroController { n_a: 4 }, &Signal::zeros(0, 0, 1e-3), &x0, 60.0, 1e-3, Some(&f.cost)).unwrap();
    assert!(!traj.diverged && traj.in_domain);
    let last = traj.states.last().unwrap();
    assert!(last.norm() < 1e-2 * x0.norm(), "{}", last.norm());
    assert!(traj.total_cost() > 0.0);
}

#[test]
fn power_nominal_loop_converges() {
    let p = build_power(&PowerNetwork::ten_generator()).unwrap();
    let x0 = random_state(p.n_s(), 0.1, 3);
    let traj = integrate(&p.dynamics(), &ZeroController { n_a: 10 }, &Signal::zeros(0, 0, 1e-2), &x0, 60.0, 1e-2, None).unwrap();
    assert!(!traj.diverged && traj.in_domain);
    assert!(traj.states.last().unwrap().norm() < 1e-2 * x0.norm());
}

#[test]
fn random_signals_are_reproducible() {
    assert_eq!(random_state(5, 1.0, 9), random_state(5, 1.0, 9));
    assert_ne!(random_state(5, 1.0, 9), random_state(5, 1.0, 10));
    let a = lowpass_noise(3, 500, 1e-2, 2.0, 1.0, 5.0, 4);
    assert_eq!(a.dim(), 3);
    assert!(trapezoid_energy(&a.samples, a.h) > 0.0);
}
