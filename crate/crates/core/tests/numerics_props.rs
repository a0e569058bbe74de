mod common;

use common::*;
use icmix::numerics::{log_sum_exp, sample_beta, softmax_rows, Matrix, RngState};
use icmix::Error;
use proptest::prelude::*;

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(
        values in prop::collection::vec(-1000.0f64..1000.0, 2..40),
        cols in 1usize..8,
    ) {
        let rows = values.len() / cols;
        prop_assume!(rows > 0);
        let m = Matrix::from_shape_vec((rows, cols), values[..rows * cols].to_vec()).unwrap();
        let p = softmax_rows(&m);
        for row in p.rows() {
            prop_assert!(row.iter().all(|v| v.is_finite() && *v >= 0.0));
            prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn log_sum_exp_shift_invariance(
        values in prop::collection::vec(-50.0f64..50.0, 1..30),
        shift in -1e3f64..1e3,
    ) {
        let base = log_sum_exp(&values).unwrap();
        let shifted: Vec<f64> = values.iter().map(|v| v + shift).collect();
        let moved = log_sum_exp(&shifted).unwrap();
        prop_assert!((moved - (base + shift)).abs() <= 1e-9 * (1.0 + shift.abs()));
    }

    #[test]
    fn log_sum_exp_matches_naive_sum(values in prop::collection::vec(-20.0f64..20.0, 1..30)) {
        let naive = values.iter().map(|v| v.exp()).sum::<f64>().ln();
        prop_assert!((log_sum_exp(&values).unwrap() - naive).abs() <= 1e-12);
    }
}

#[test]
fn log_sum_exp_large_magnitudes() {
    let v = log_sum_exp(&[1000.0, 1000.0]).unwrap();
    assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
    let v = log_sum_exp(&[-1000.0, -1000.0]).unwrap();
    assert!((v - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    assert!(matches!(log_sum_exp(&[]), Err(Error::EmptyReduction)));
}

#[test]
fn beta_rejects_bad_shape() {
    let mut rng = RngState::new(0);
    for alpha in [0.0, -1.0, f64::NAN, f64::INFINITY] {
        assert!(matches!(
            sample_beta(alpha, &mut rng),
            Err(Error::InvalidShapeParameter(_))
        ));
    }
}

#[test]
fn beta_one_is_uniform() {
    let mut rng = RngState::new(7);
    let draws: Vec<f64> = (0..20_000)
        .map(|_| sample_beta(1.0, &mut rng).unwrap())
        .collect();
    assert!(draws.iter().all(|&x| (0.0..=1.0).contains(&x)));
    let d = ks_uniform(&draws);
    assert!(d < ks_critical_1pct(draws.len(), None), "KS {d}");
}

#[test]
fn beta_is_symmetric_about_one_half() {
    for (k, alpha) in [0.2, 1.0, 20.0].into_iter().enumerate() {
        let mut rng = RngState::new(100 + k as u64);
        let a: Vec<f64> = (0..10_000)
            .map(|_| sample_beta(alpha, &mut rng).unwrap())
            .collect();
        let b: Vec<f64> = (0..10_000)
            .map(|_| 1.0 - sample_beta(alpha, &mut rng).unwrap())
            .collect();
        let d = ks_two_sample(&a, &b);
        assert!(
            d < ks_critical_1pct(a.len(), Some(b.len())),
            "alpha {alpha}: KS {d}"
        );
    }
}

#[test]
fn beta_streams_repeat_for_a_seed() {
    let draw = |seed| {
        let mut rng = RngState::new(seed);
        (0..64)
            .map(|_| sample_beta(0.2, &mut rng).unwrap().to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(draw(3), draw(3));
    assert_ne!(draw(3), draw(4));
}

#[test]
fn split_streams_are_distinct_and_stable() {
    let root = RngState::new(11);
    let take = |mut r: RngState| (0..8).map(|_| r.next_u64()).collect::<Vec<_>>();
    assert_eq!(take(root.split(0)), take(RngState::new(11).split(0)));
    assert_ne!(take(root.split(0)), take(root.split(1)));
    assert_ne!(take(root.split(0)), take(root.clone()));
}

#[test]
fn permutation_is_a_permutation() {
    let mut rng = RngState::new(5);
    let mut p = rng.permutation(1000);
    p.sort_unstable();
    assert_eq!(p, (0..1000).collect::<Vec<_>>());
}
