//! Policy gradients, Lipschitz bounds, hard thresholding and the sign monitor.

use iqc_cert::gradient_bounds::{check_pointwise, SignClass};
use iqc_cert::policy::{GradientMonitor, Layer, PolicyNet};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn layer(w: DMatrix<f64>) -> Layer {
    let mask = vec![vec![true; w.ncols()]; w.nrows()];
    Layer {
        bias: vec![0.0; w.nrows()],
        weight: w,
        mask,
    }
}

fn two_layer(w1: DMatrix<f64>, w2: DMatrix<f64>) -> PolicyNet {
    let (n_in, n_out) = (w1.ncols(), w2.nrows());
    PolicyNet::new(vec![layer(w1), layer(w2)], vec![vec![true; n_in]; n_out], true).unwrap()
}

fn random_y(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

#[test]
fn input_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let net = PolicyNet::dense(&[4, 6, 5, 3], 1.5, false, &mut rng).unwrap();
    let h = 1e-6;
    for _ in 0..20 {
        let y = random_y(&mut rng, 4, 2.0);
        let jac = net.partial_gradients(&y);
        for j in 0..4 {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[j] += h;
            ym[j] -= h;
            let fd = (net.forward(&yp) - net.forward(&ym)) / (2.0 * h);
            for i in 0..3 {
                assert!((jac[(i, j)] - fd[i]).abs() <= 1e-6, "({i},{j}) {} vs {}", jac[(i, j)], fd[i]);
            }
        }
    }
}

#[test]
fn parameter_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mask = vec![vec![true, false, true], vec![false, true, true]];
    for centered in [true, false] {
        let net = PolicyNet::agents(&mask, &[3, 2], 1.0, centered, &mut rng).unwrap();
        let y = random_y(&mut rng, 3, 1.5);
        let g = random_y(&mut rng, 2, 1.0);
        let vjp = net.param_vjp(&y, &g);
        let p0 = net.params();
        assert_eq!(vjp.len(), net.n_params());
        let h = 1e-6;
        for k in 0..p0.len() {
            let mut plus = net.clone();
            let mut minus = net.clone();
            let mut pp = p0.clone();
            pp[k] += h;
            plus.set_params(&pp).unwrap();
            pp[k] -= 2.0 * h;
            minus.set_params(&pp).unwrap();
            let fd = (g.dot(&plus.forward(&y)) - g.dot(&minus.forward(&y))) / (2.0 * h);
            assert!((vjp[k] - fd).abs() <= 1e-6, "param {k}: {} vs {fd}", vjp[k]);
        }
    }
}

#[test]
fn params_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut net = PolicyNet::dense(&[3, 4, 2], 1.0, false, &mut rng).unwrap();
    let p = net.params();
    net.set_params(&(&p * 2.0)).unwrap();
    assert_eq!(net.params(), &p * 2.0);
    assert!(net.set_params(&DVector::zeros(p.len() + 1)).is_err());
}

#[test]
fn structural_masks_are_enforced() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let mask = vec![vec![true, false], vec![false, true]];
    let net = PolicyNet::agents(&mask, &[4], 1.0, true, &mut rng).unwrap();
    for _ in 0..50 {
        let g = net.partial_gradients(&random_y(&mut rng, 2, 3.0));
        assert_eq!(g[(0, 1)], 0.0);
        assert_eq!(g[(1, 0)], 0.0);
    }
    assert_eq!(net.forward(&DVector::zeros(2)), DVector::zeros(2));
    // A nonzero weight on a masked entry is rejected.
    let mut bad = net.layers.clone();
    let c = bad[0].mask[0].iter().position(|m| !m).unwrap();
    bad[0].weight[(0, c)] = 1.0;
    assert!(PolicyNet::new(bad, mask, true).is_err());
}

#[test]
fn lipschitz_bound_is_the_product_of_spectral_norms() {
    let net = two_layer(
        DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
    );
    assert!((net.lipschitz_upper() - 3.0).abs() < 1e-12);
    let net = two_layer(DMatrix::identity(2, 2) * 2.0, DMatrix::identity(2, 2) * 0.5);
    assert!((net.lipschitz_upper() - 1.0).abs() < 1e-12);
}

#[test]
fn sampled_gradients_respect_the_lipschitz_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    for _ in 0..20 {
        let net = PolicyNet::dense(&[3, 8, 8, 2], 2.0, false, &mut rng).unwrap();
        let bound = net.lipschitz_upper();
        for _ in 0..50 {
            let g = net.partial_gradients(&random_y(&mut rng, 3, 3.0));
            let n = iqc_cert::linalg::spectral_norm(&g);
            assert!(n <= bound * (1.0 + 1e-12), "{n} > {bound}");
        }
    }
}

#[test]
fn hard_threshold_scales_each_layer_equally() {
    let mut net = two_layer(DMatrix::identity(2, 2) * 2.0, DMatrix::identity(2, 2));
    let before = net.clone();
    assert!(net.hard_threshold(1.0).unwrap());
    let factor = 0.5f64.sqrt();
    assert!((net.layers[0].weight[(0, 0)] - 2.0 * factor).abs() < 1e-12);
    assert!((net.layers[1].weight[(0, 0)] - factor).abs() < 1e-12);
    assert!(net.lipschitz_upper() <= 1.0);
    // Idempotent once inside the level.
    let once = net.clone();
    assert!(!net.hard_threshold(1.0).unwrap());
    assert_eq!(net, once);
    // No change when already certified.
    let mut same = before.clone();
    assert!(!same.hard_threshold(5.0).unwrap());
    assert_eq!(same, before);
    assert!(same.hard_threshold(0.0).is_err());
}

#[test]
fn hard_threshold_never_exceeds_level_on_random_nets() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    for _ in 0..200 {
        let mut net = PolicyNet::dense(&[4, 7, 3], rng.random_range(0.5..5.0), false, &mut rng).unwrap();
        let l = rng.random_range(0.05..2.0);
        net.hard_threshold(l).unwrap();
        assert!(net.lipschitz_upper() <= l);
    }
}

#[test]
fn thresholded_policy_satisfies_uniform_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let mut net = PolicyNet::dense(&[2, 6, 2], 3.0, true, &mut rng).unwrap();
    net.hard_threshold(0.4).unwrap();
    let b = iqc_cert::gradient_bounds::GradientBoundSet::uniform(2, 2, 0.4).unwrap();
    let f = |y: &DVector<f64>| net.forward(y);
    for _ in 0..500 {
        let (x, y) = (random_y(&mut rng, 2, 3.0), random_y(&mut rng, 2, 3.0));
        assert!(check_pointwise(&b, &f, &x, &y, 1e-12));
    }
}

#[test]
fn monitor_classifies_mixed_and_masked_entries() {
    let mask = vec![vec![true, true, true, false]];
    let mut m = GradientMonitor::new(mask, GradientMonitor::DEFAULT_WINDOW).unwrap();
    assert!(m.pattern().is_err());
    m.update(&[
        DMatrix::from_row_slice(1, 4, &[-0.2, 0.5, -1.0, 0.0]),
        DMatrix::from_row_slice(1, 4, &[2.0, 0.1, -0.3, 0.0]),
    ])
    .unwrap();
    use SignClass::*;
    assert_eq!(m.pattern().unwrap(), vec![vec![Mixed, Positive, Negative, Zero]]);
    let (lo, hi) = m.range().unwrap();
    assert_eq!((lo[(0, 0)], hi[(0, 0)]), (-0.2, 2.0));
    // Level 2 holds the [−0.2, 2] entry; level 1.5 does not.
    let b = m.export(0.1, 2.0).unwrap();
    assert_eq!(b.xi_lower, DMatrix::from_row_slice(1, 4, &[-2.0, -0.2, -2.0, 0.0]));
    assert_eq!(b.xi_upper, DMatrix::from_row_slice(1, 4, &[2.0, 2.0, 0.2, 0.0]));
    assert!(m.export(0.1, 1.5).is_err());
    assert!(m.pattern_file(0.1, 1.5).is_err());
    assert!(m.pattern_file(0.1, 2.0).is_ok());
    assert!(m.export(0.0, 2.0).is_err());
}

#[test]
fn monitor_sign_margin_must_cover_observations() {
    // A positive entry at 0.3 with ε·l = 0.2 is fine; the lower band is
    // one-sided so only the magnitude matters.
    let mut m = GradientMonitor::new(vec![vec![true]], 5).unwrap();
    m.update(&[DMatrix::from_element(1, 1, 0.3)]).unwrap();
    let b = m.export(0.1, 2.0).unwrap();
    assert_eq!((b.xi_lower[(0, 0)], b.xi_upper[(0, 0)]), (-0.2, 2.0));
    assert!(m.export(0.1, 0.25).is_err());
}

#[test]
fn monitor_window_forgets_old_batches() {
    let mut m = GradientMonitor::new(vec![vec![true]], 2).unwrap();
    m.update(&[DMatrix::from_element(1, 1, -1.0)]).unwrap();
    assert_eq!(m.pattern().unwrap(), vec![vec![SignClass::Negative]]);
    m.update(&[DMatrix::from_element(1, 1, 0.5)]).unwrap();
    assert_eq!(m.pattern().unwrap(), vec![vec![SignClass::Mixed]]);
    m.update(&[DMatrix::from_element(1, 1, 0.7)]).unwrap();
    assert_eq!(m.pattern().unwrap(), vec![vec![SignClass::Positive]]);
    assert!(m.update(&[DMatrix::zeros(2, 1)]).is_err());
    assert!(GradientMonitor::new(vec![vec![true]], 0).is_err());
}

#[test]
fn policy_json_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    let net = PolicyNet::agents(&[vec![true, false], vec![true, true]], &[3], 1.0, true, &mut rng).unwrap();
    let s = serde_json::to_string(&net).unwrap();
    let back: PolicyNet = serde_json::from_str(&s).unwrap();
    assert_eq!(back, net);
}
