//! Plants, residual blocks, augmentation and nominal controllers.

use iqc_cert::iqc_blocks::{replicate, sector_iqc, static_identity, zames_falb_iqc};
use iqc_cert::linalg::spectral_abscissa;
use iqc_cert::simulator::{build_flight, build_power, PowerNetwork};
use iqc_cert::system_model::{
    augment, is_hurwitz, nominal_controller, LtiSystem, NominalMethod, NonlinearBlock, ResidualChannel, ResidualKind,
};
use iqc_cert::Error;
use nalgebra::DMatrix;

/// Closed-loop spectral abscissae of the bundled benchmarks under their LQR
/// nominal gains, computed independently with scipy's CARE solver.
const FLIGHT_CLOSED_ABSCISSA: f64 = -0.142_491_653_353_842_4;
const POWER_CLOSED_ABSCISSA: f64 = -0.215_430_138_539_982_55;

#[test]
fn hurwitz_scalar_and_double_integrator() {
    assert!(is_hurwitz(&DMatrix::from_element(1, 1, -1.0)).unwrap());
    let di = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    assert!(!is_hurwitz(&di).unwrap());
}

#[test]
fn non_finite_plants_are_rejected() {
    let a = DMatrix::from_element(1, 1, f64::NAN);
    assert!(LtiSystem::new(a, DMatrix::from_element(1, 1, 1.0), None).is_err());
}

#[test]
fn flight_raw_spectrum_touches_zero_and_nominal_stabilises() {
    let f = build_flight().unwrap();
    assert_eq!((f.n_s(), f.n_a()), (15, 4));
    assert!(spectral_abscissa(&f.open_loop.a).unwrap().abs() < 1e-9);
    let ab = spectral_abscissa(&f.closed_loop.a).unwrap();
    assert!((ab - FLIGHT_CLOSED_ABSCISSA).abs() < 1e-6, "{ab}");
    assert!(is_hurwitz(&f.closed_loop.a).unwrap());
}

#[test]
fn power_nominal_stabilises() {
    let p = build_power(&PowerNetwork::ten_generator()).unwrap();
    assert_eq!((p.n_s(), p.n_a()), (20, 10));
    let ab = spectral_abscissa(&p.closed_loop.a).unwrap();
    assert!((ab - POWER_CLOSED_ABSCISSA).abs() < 1e-6, "{ab}");
}

#[test]
fn scalar_riccati_gain() {
    let one = DMatrix::from_element(1, 1, 1.0);
    let plant = LtiSystem::new(DMatrix::zeros(1, 1), one.clone(), None).unwrap();
    let k = nominal_controller(&plant, &NominalMethod::Lqr { q: one.clone(), r: one }).unwrap();
    assert!((k[(0, 0)] + 1.0).abs() < 1e-9);
}

#[test]
fn given_gain_is_returned_unchanged() {
    let plant = LtiSystem::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        None,
    )
    .unwrap();
    let k = DMatrix::from_row_slice(1, 2, &[-1.0, -2.0]);
    assert_eq!(nominal_controller(&plant, &NominalMethod::Given(k.clone())).unwrap(), k);
    let bad = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    assert!(matches!(
        nominal_controller(&plant, &NominalMethod::Given(bad)),
        Err(Error::CertificationImpossible(_))
    ));
}

#[test]
fn unstabilisable_pair_cannot_be_certified() {
    // The second mode is unstable and unreachable from the input.
    let plant = LtiSystem::new(
        DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]),
        DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
        None,
    )
    .unwrap();
    let one = DMatrix::identity(2, 2);
    let r = DMatrix::identity(1, 1);
    assert!(nominal_controller(&plant, &NominalMethod::Lqr { q: one, r }).is_err());
}

#[test]
fn identity_filter_collapses_to_plant() {
    let plant = LtiSystem::new(
        DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -2.0]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        None,
    )
    .unwrap();
    let aug = augment(&plant, &NonlinearBlock::empty(2), &static_identity(0).unwrap()).unwrap();
    assert_eq!(aug.a_bar, plant.a);
    assert_eq!(aug.n_x(), 2);
    assert_eq!(aug.n_v(), 0);
}

#[test]
fn one_state_filter_gives_three_state_augmentation() {
    let plant = LtiSystem::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -1.0]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        None,
    )
    .unwrap();
    let residuals = NonlinearBlock::new(
        2,
        vec![ResidualChannel {
            kind: ResidualKind::SinMinusIdentity,
            argument: vec![1.0, 0.0],
            input: vec![0.0, 1.0],
            domain: std::f64::consts::FRAC_PI_2,
        }],
    )
    .unwrap();
    let aug = augment(&plant, &residuals, &zames_falb_iqc(-1.0, 0.0, 2.0).unwrap()).unwrap();
    assert_eq!(aug.a_bar.shape(), (3, 3));
    // The filter never feeds back into the plant.
    assert_eq!(aug.a_bar.view((0, 2), (2, 1)).amax(), 0.0);
    assert_eq!(aug.a_bar.view((0, 0), (2, 2)), plant.a.view((0, 0), (2, 2)));
}

#[test]
fn flight_zames_falb_augmentation_adds_one_state_per_channel() {
    let f = build_flight().unwrap();
    let zf = zames_falb_iqc(-1.0, 0.0, 1.0).unwrap();
    let filter = replicate(&zf, &[0, 1, 2, 3]).unwrap();
    let aug = augment(&f.closed_loop, &f.residuals, &filter).unwrap();
    assert_eq!(aug.n_x(), 15 + 4);
    // A static sector filter adds none.
    let sec = replicate(&sector_iqc(-1.0, 0.0).unwrap(), &[0, 1, 2, 3]).unwrap();
    assert_eq!(augment(&f.closed_loop, &f.residuals, &sec).unwrap().n_x(), 15);
}

#[test]
fn uncovered_channel_is_rejected() {
    let f = build_flight().unwrap();
    let partial = replicate(&sector_iqc(-1.0, 0.0).unwrap(), &[0, 1]).unwrap();
    assert!(augment(&f.closed_loop, &f.residuals, &partial).is_err());
}

#[test]
fn residual_slope_sectors() {
    let (lo, hi) = ResidualKind::SinMinusIdentity.slope_sector(std::f64::consts::FRAC_PI_2);
    assert!((lo + 1.0).abs() < 1e-15 && hi == 0.0);
    let (lo, hi) = ResidualKind::IdentityMinusSin.slope_sector(std::f64::consts::FRAC_PI_3);
    assert_eq!(lo, 0.0);
    assert!((hi - 0.5).abs() < 1e-15);
}
