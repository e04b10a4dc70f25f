mod common;

use clwe::error::Error;
use clwe::matrix::EmbeddingMatrix;
use clwe::preprocess::{iterative_normalize, length_normalize, mean_center};
use proptest::prelude::*;

fn m(rows: &[&[f64]]) -> EmbeddingMatrix {
    EmbeddingMatrix::from_rows(rows).unwrap()
}

fn assert_fixed_point(out: &EmbeddingMatrix, tol: f64) {
    for n in out.row_norms() {
        assert!((n - 1.0).abs() <= tol, "row norm {n}");
    }
    for c in out.column_means() {
        assert!(c.abs() <= tol, "column mean {c}");
    }
}

// Reference values computed independently by alternating the two steps
// literally in numpy.
#[test]
fn three_row_fixed_point_matches_reference() {
    let x = m(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
    let (out, report) = iterative_normalize(&x, 50, 1e-6).unwrap();
    let expected = [
        [0.25881961449048235, -0.9659259788558012],
        [-0.9659259788558012, 0.25881961449048235],
        [0.7071063643653188, 0.7071063643653188],
    ];
    assert_eq!(report.iterations_run, 20);
    for (row, want) in out.iter_rows().zip(expected) {
        for (a, b) in row.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
    assert_fixed_point(&out, 1e-6);
}

#[test]
fn already_normalized_is_unchanged() {
    let x = m(&[&[1.0, 0.0], &[-1.0, 0.0]]);
    let (out, report) = iterative_normalize(&x, 5, 1e-6).unwrap();
    assert_eq!(out, x);
    assert_eq!(report.iterations_run, 1);
}

#[test]
fn single_iteration_stops_before_renormalizing() {
    let x = m(&[&[3.0, 4.0], &[6.0, 8.0]]);
    let (out, report) = iterative_normalize(&x, 1, 1e-6).unwrap();
    assert_eq!(out, m(&[&[0.0, 0.0], &[0.0, 0.0]]));
    assert_eq!(report.max_row_norm_deviation, 1.0);
    // a second pass would hit the zero rows
    let err = iterative_normalize(&x, 2, 1e-6).unwrap_err();
    assert!(matches!(err, Error::Degenerate(ref s) if s.contains('0')), "{err}");
}

#[test]
fn single_pass_examples() {
    assert_eq!(length_normalize(&m(&[&[3.0, 4.0]])), m(&[&[0.6, 0.8]]));
    assert_eq!(length_normalize(&m(&[&[1.0, 0.0], &[0.0, 2.0]])), m(&[&[1.0, 0.0], &[0.0, 1.0]]));
    assert_eq!(length_normalize(&m(&[&[0.0, 0.0]])), m(&[&[0.0, 0.0]]));
    assert_eq!(mean_center(&m(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap(), m(&[&[-1.0, -1.0], &[1.0, 1.0]]));
    assert_eq!(mean_center(&m(&[&[5.0, 7.0]])).unwrap(), m(&[&[0.0, 0.0]]));
    let centered = m(&[&[-1.0, 0.0], &[1.0, 0.0]]);
    assert_eq!(mean_center(&centered).unwrap(), centered);
    assert!(matches!(mean_center(&EmbeddingMatrix::zeros(0, 3)), Err(Error::Contract(_))));
}

// Twenty alternations suffice once the dimension is moderate; in very low
// dimensions the iteration still converges but can need thousands of steps.
#[test]
fn convergence_within_twenty_iterations_over_many_seeds() {
    let mut failures = Vec::new();
    for seed in 0..300u64 {
        let mut rng = common::rng(seed);
        let d = 8 + (seed as usize % 33);
        let n = d + (seed as usize * 7 % 200);
        let x = common::gaussian(&mut rng, n, d);
        let (_, report) = iterative_normalize(&x, 20, 1e-6).unwrap();
        if report.max_row_norm_deviation >= 1e-6 || report.max_center_magnitude >= 1e-6 {
            failures.push((seed, n, d, report));
        }
    }
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn low_dimensional_inputs_converge_slowly() {
    let mut slow = 0;
    for seed in 0..50u64 {
        let mut rng = common::rng(seed);
        let x = common::gaussian(&mut rng, 4, 2);
        let (_, short) = iterative_normalize(&x, 20, 1e-6).unwrap();
        if short.max_row_norm_deviation >= 1e-6 {
            slow += 1;
        }
        let (out, long) = iterative_normalize(&x, 100_000, 1e-6).unwrap();
        assert_fixed_point(&out, 1e-6);
        assert!(long.iterations_run < 100_000);
    }
    assert!(slow > 0);
}

fn matrix(max_rows: usize, max_dim: usize) -> impl Strategy<Value = EmbeddingMatrix> {
    (1..=max_rows, 1..=max_dim).prop_flat_map(|(r, d)| {
        prop::collection::vec(-10.0f64..10.0, r * d).prop_map(move |v| EmbeddingMatrix::new(r, d, v).unwrap())
    })
}

proptest! {
    #[test]
    fn length_normalize_idempotent(x in matrix(20, 8)) {
        prop_assume!(x.row_norms().iter().all(|&n| n > 1e-6));
        let once = length_normalize(&x);
        let twice = length_normalize(&once);
        for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn length_normalize_preserves_direction(x in matrix(20, 8)) {
        let out = length_normalize(&x);
        for (orig, new) in x.iter_rows().zip(out.iter_rows()) {
            let norm = orig.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (a, b) in orig.iter().zip(new) {
                if norm > 0.0 {
                    prop_assert!((b * norm - a).abs() < 1e-9 * norm.max(1.0));
                } else {
                    prop_assert_eq!(*b, 0.0);
                }
            }
        }
    }

    #[test]
    fn mean_center_idempotent(x in matrix(20, 8)) {
        let once = mean_center(&x).unwrap();
        let twice = mean_center(&once).unwrap();
        for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn converged_output_satisfies_both_conditions(seed in any::<u64>(), d in 2usize..16, extra in 0usize..64) {
        let mut rng = common::rng(seed);
        let x = common::gaussian(&mut rng, d + extra, d);
        let (out, report) = iterative_normalize(&x, 100_000, 1e-6).unwrap();
        prop_assert!(report.max_row_norm_deviation >= 0.0 && report.max_center_magnitude >= 0.0);
        prop_assert!(report.max_row_norm_deviation < 1e-6 && report.max_center_magnitude < 1e-6);
        for n in out.row_norms() {
            prop_assert!((n - 1.0).abs() <= 1e-6);
        }
        for c in out.column_means() {
            prop_assert!(c.abs() <= 1e-6);
        }
    }
}
