mod common;

use common::{max_abs_diff, normal_tensor, random_region, region, rng, styled, two_pass};
use dsu::adaptation::{calibrate, calibrate_strict, fit_shift_region, StatAccumulator};
use dsu::stats::instance_stats;
use dsu::Tensor;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn worked_example() {
    let g = region(vec![2.0], vec![1.0], vec![1.0], vec![0.0], 1.0, 0.5);
    assert_eq!(g.calibrate_mu(0, 5.0), (4.0, true));
}

#[test]
fn centre_statistic_stays_put() {
    let g = region(vec![2.0], vec![0.0], vec![1.0], vec![0.0], 1.0, 0.7);
    assert_eq!(g.calibrate_mu(0, 2.0).0, 2.0);
    assert_eq!(g.calibrate_sigma(0, 1.0).0, 1.0);
}

#[test]
fn full_strength_lands_on_the_nearer_boundary() {
    let g = region(vec![1.0], vec![0.5], vec![2.0], vec![0.25], 2.0, 1.0);
    assert_eq!(g.calibrate_mu(0, 10.0).0, 2.0);
    assert_eq!(g.calibrate_mu(0, -10.0).0, 0.0);
    assert_eq!(g.calibrate_sigma(0, 5.0).0, 2.5);
    assert_eq!(g.calibrate_sigma(0, 0.5).0, 1.5);
}

#[test]
fn inside_region_is_a_no_op() {
    let mut r = rng(30);
    for _ in 0..1000 {
        let c = r.random_range(1..5);
        let omega = r.random_range(0.0..=1.0);
        let g = random_region(&mut r, c, omega);
        let mu: Vec<f64> = (0..c)
            .map(|k| {
                let (lo, hi) = g.mu_interval(k);
                lo + (hi - lo) * r.random_range(0.05..0.95)
            })
            .collect();
        let sigma: Vec<f64> = (0..c)
            .map(|k| {
                let (lo, hi) = g.sigma_interval(k);
                lo + (hi - lo) * r.random_range(0.05..0.95)
            })
            .collect();
        let x = styled(&mut r, &mu, &sigma);
        let out = calibrate(&x, &g, 1e-6).unwrap();
        let scale = x.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max_abs_diff(out.output.data(), x.data()) <= 1e-4 * scale);
        assert_eq!(out.telemetry.fired_fraction(), 0.0);
    }
}

#[test]
fn full_strength_is_idempotent() {
    let mut r = rng(31);
    for _ in 0..1000 {
        let c = r.random_range(1..5);
        let g = random_region(&mut r, c, 1.0);
        let mu: Vec<f64> = (0..c).map(|_| r.random_range(-6.0..6.0)).collect();
        let sigma: Vec<f64> = (0..c).map(|_| r.random_range(0.5..5.0)).collect();
        let x = styled(&mut r, &mu, &sigma);
        let once = calibrate(&x, &g, 0.0).unwrap().output;
        let twice = calibrate(&once, &g, 0.0).unwrap().output;
        assert!(max_abs_diff(once.data(), twice.data()) <= 1e-5);
    }
}

#[test]
fn calibration_contracts_toward_the_centre() {
    let mut r = rng(32);
    for _ in 0..1000 {
        let c = r.random_range(1..5);
        let omega = r.random_range(0.0..=1.0);
        let g = random_region(&mut r, c, omega);
        for k in 0..c {
            let mu = r.random_range(-8.0..8.0);
            let sigma = r.random_range(0.01..6.0);
            assert!((g.calibrate_mu(k, mu).0 - g.mu_bar[k]).abs() <= (mu - g.mu_bar[k]).abs());
            assert!((g.calibrate_sigma(k, sigma).0 - g.sigma_bar[k]).abs() <= (sigma - g.sigma_bar[k]).abs());
        }
    }
}

#[test]
fn calibrated_map_carries_the_new_statistics() {
    let mut r = rng(33);
    for _ in 0..50 {
        let g = random_region(&mut r, 3, 0.5);
        let x = normal_tensor(&mut r, &[4, 3, 3, 3]).map(|v| 3.0 * v + 4.0);
        let out = calibrate(&x, &g, 0.0).unwrap();
        let s = instance_stats(&out.output, 0.0).unwrap();
        assert!(max_abs_diff(s.mu.data(), out.beta.data()) <= 1e-9);
        assert!(max_abs_diff(s.sigma.data(), out.gamma.data()) <= 1e-9);
    }
}

proptest! {
    #[test]
    fn distance_is_non_increasing_in_omega(
        centre in -5.0f64..5.0,
        spread in 0.0f64..2.0,
        n in 0.0f64..3.0,
        value in -20.0f64..20.0,
        w1 in 0.0f64..=1.0,
        w2 in 0.0f64..=1.0,
    ) {
        let (lo, hi) = if w1 <= w2 { (w1, w2) } else { (w2, w1) };
        let d = |omega: f64| {
            let g = region(vec![centre], vec![spread], vec![1.0], vec![0.0], n, omega);
            (g.calibrate_mu(0, value).0 - centre).abs()
        };
        prop_assert!(d(hi) <= d(lo) + 1e-12);
    }
}

#[test]
fn fit_matches_two_pass_oracle() {
    let mut r = rng(34);
    let batches: Vec<Tensor> = (0..8).map(|_| normal_tensor(&mut r, &[8, 3, 2, 2]).map(|v| 2.0 * v + 1.0)).collect();
    let g = fit_shift_region(batches.clone(), 2, 1.0, 0.5, 1e-6).unwrap();
    let mut mu_rows = Vec::new();
    let mut sigma_rows = Vec::new();
    for b in &batches {
        let s = instance_stats(b, 1e-6).unwrap();
        mu_rows.extend(s.mu.data().chunks(3).map(<[f64]>::to_vec));
        sigma_rows.extend(s.sigma.data().chunks(3).map(<[f64]>::to_vec));
    }
    let (mm, ms) = two_pass(&mu_rows);
    let (sm, ss) = two_pass(&sigma_rows);
    assert_eq!(g.count, 64);
    assert!(!g.degenerate);
    assert!(max_abs_diff(&g.mu_bar, &mm) <= 1e-10);
    assert!(max_abs_diff(&g.sigma_mu_bar, &ms) <= 1e-10);
    assert!(max_abs_diff(&g.sigma_bar, &sm) <= 1e-10);
    assert!(max_abs_diff(&g.sigma_sigma_bar, &ss) <= 1e-10);
}

#[test]
fn two_point_fit() {
    let x = Tensor::new([2, 1, 1, 2], vec![0.0, 2.0, 2.0, 4.0]).unwrap();
    let g = fit_shift_region([x], 0, 1.0, 0.5, 0.0).unwrap();
    assert_eq!(g.mu_bar, vec![2.0]);
    assert_eq!(g.sigma_mu_bar, vec![1.0]);
    assert_eq!(g.sigma_sigma_bar, vec![0.0]);
}

#[test]
fn identical_instances_have_zero_spread() {
    let one = normal_tensor(&mut rng(35), &[1, 2, 3, 3]);
    let x = Tensor::concat_rows(&[&one, &one, &one]).unwrap();
    let g = fit_shift_region([x], 0, 1.0, 0.5, 1e-6).unwrap();
    assert!(g.sigma_mu_bar.iter().chain(&g.sigma_sigma_bar).all(|&v| v.abs() < 1e-12));
    let s = instance_stats(&one, 1e-6).unwrap();
    assert!(max_abs_diff(&g.mu_bar, s.mu.data()) <= 1e-12);
}

#[test]
fn merged_accumulators_equal_one_stream() {
    let mut r = rng(36);
    let a = instance_stats(&normal_tensor(&mut r, &[37, 4, 2, 2]), 1e-6).unwrap();
    let b = instance_stats(&normal_tensor(&mut r, &[29, 4, 2, 2]).scale(3.0), 1e-6).unwrap();
    let mut left = StatAccumulator::new(4);
    left.push(&a).unwrap();
    let mut right = StatAccumulator::new(4);
    right.push(&b).unwrap();
    left.merge(&right).unwrap();
    let mut whole = StatAccumulator::new(4);
    whole.push(&a).unwrap();
    whole.push(&b).unwrap();
    let (x, y) = (left.finish(0, 1.0, 0.5).unwrap(), whole.finish(0, 1.0, 0.5).unwrap());
    assert!(max_abs_diff(&x.mu_bar, &y.mu_bar) <= 1e-10);
    assert!(max_abs_diff(&x.sigma_mu_bar, &y.sigma_mu_bar) <= 1e-10);
    assert!(max_abs_diff(&x.sigma_bar, &y.sigma_bar) <= 1e-10);
    assert!(max_abs_diff(&x.sigma_sigma_bar, &y.sigma_sigma_bar) <= 1e-10);
}

#[test]
fn empty_and_single_streams() {
    assert_eq!(
        fit_shift_region(Vec::<Tensor>::new(), 0, 1.0, 0.5, 1e-6).unwrap_err().category(),
        "data"
    );
    let g = fit_shift_region([normal_tensor(&mut rng(37), &[1, 2, 2, 2])], 3, 1.0, 0.5, 1e-6).unwrap();
    assert!(g.degenerate);
    assert!(g.sigma_mu_bar.iter().all(|&v| v == 0.0));
    let x = normal_tensor(&mut rng(38), &[2, 2, 2, 2]);
    assert!(calibrate_strict(&x, &g, 1e-6).is_err());
    assert!(calibrate(&x, &g, 1e-6).is_ok());
}

#[test]
fn channel_mismatch_is_an_error() {
    let g = region(vec![0.0; 3], vec![1.0; 3], vec![1.0; 3], vec![1.0; 3], 1.0, 0.5);
    assert!(calibrate(&normal_tensor(&mut rng(39), &[2, 2, 2, 2]), &g, 1e-6).is_err());
}
