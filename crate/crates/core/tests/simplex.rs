use proptest::prelude::*;
use semisgd::lfa::project_simplex;

/// Enumerates every candidate support and keeps the one satisfying the KKT
/// conditions of `min |x - v|^2` over the simplex.
fn kkt_oracle(v: &[f64]) -> Vec<f64> {
    let d = v.len();
    for mask in 1u32..(1 << d) {
        let support: Vec<usize> = (0..d).filter(|i| mask & (1 << i) != 0).collect();
        let tau = (support.iter().map(|&i| v[i]).sum::<f64>() - 1.0) / support.len() as f64;
        let inside = support.iter().all(|&i| v[i] - tau >= 0.0);
        let outside = (0..d)
            .filter(|i| mask & (1 << i) == 0)
            .all(|i| v[i] - tau <= 0.0);
        if inside && outside {
            return (0..d)
                .map(|i| {
                    if mask & (1 << i) != 0 {
                        v[i] - tau
                    } else {
                        0.0
                    }
                })
                .collect();
        }
    }
    unreachable!("some support always satisfies the conditions")
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

proptest! {
    #[test]
    fn matches_kkt_oracle(v in prop::collection::vec(-2.0f64..2.0, 1..=6)) {
        let p = project_simplex(&v).unwrap();
        prop_assert!(max_abs_diff(&p, &kkt_oracle(&v)) <= 1e-9);
    }

    #[test]
    fn lands_in_simplex_and_is_idempotent(v in prop::collection::vec(-50.0f64..50.0, 1..40)) {
        let p = project_simplex(&v).unwrap();
        prop_assert!(p.iter().all(|x| *x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let pp = project_simplex(&p).unwrap();
        prop_assert!(max_abs_diff(&p, &pp) <= 1e-12);
    }

    #[test]
    fn shift_invariant(v in prop::collection::vec(-2.0f64..2.0, 1..8), c in -3.0f64..3.0) {
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let a = project_simplex(&v).unwrap();
        let b = project_simplex(&shifted).unwrap();
        prop_assert!(max_abs_diff(&a, &b) <= 1e-9);
    }
}

#[test]
fn simplex_points_are_fixed() {
    let v = [0.2, 0.3, 0.5];
    assert_eq!(project_simplex(&v).unwrap(), v.to_vec());
    assert_eq!(project_simplex(&[7.0]).unwrap(), vec![1.0]);
    assert_eq!(project_simplex(&[3.0, -1.0]).unwrap(), vec![1.0, 0.0]);
}

#[test]
fn rejects_bad_input() {
    assert!(project_simplex(&[]).is_err());
    assert!(project_simplex(&[f64::NAN, 1.0]).is_err());
}
