mod common;

use common::*;
use esoccp::cones::*;
use esoccp::esoclcp::{demo_instance, demo_solution};
use esoccp::DVector;
use proptest::prelude::*;

fn v(s: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(s)
}

#[test]
fn esoc_membership_examples() {
    assert!(contains(ConeSpec::Esoc(2, 1), &v(&[1.0, 1.0, 0.5])).unwrap());
    assert!(!contains(ConeSpec::Esoc(2, 1), &v(&[1.0, 0.3, 0.5])).unwrap());
    assert!(contains(ConeSpec::Esoc(2, 1), &v(&[1.0, 1.0])).is_err());
}

#[test]
fn printed_solution_and_image_are_in_their_cones() {
    // The printed rationals are rounded, so membership holds to 1e-4 only.
    let (x, u) = demo_solution();
    assert!(contains_tol(ConeSpec::Esoc(3, 2), &stack(&x, &u), 1e-4).unwrap());
    let f = v(&[0.0, 8349.0 / 292.0, 0.0, -3943.0 / 316.0, 4039.0 / 157.0]);
    assert!(contains_tol(ConeSpec::DualEsoc(3, 2), &f, 1e-4).unwrap());
    // The computed solution and its image sit in the cones at the default slack.
    let (x, u, _) = computed_solution();
    let (y, w) = demo_instance().eval_f(&x, &u);
    assert!(contains_tol(ConeSpec::Esoc(3, 2), &stack(&x, &u), 1e-9).unwrap());
    assert!(contains_tol(ConeSpec::DualEsoc(3, 2), &stack(&y, &w), 1e-9).unwrap());
}

#[test]
fn moreau_examples() {
    let m = lorentz_moreau(&v(&[2.0, 1.0, 0.0])).unwrap();
    assert_eq!((m.plus.clone(), m.minus.norm(), m.abs.clone()), (v(&[2.0, 1.0, 0.0]), 0.0, v(&[2.0, 1.0, 0.0])));
    let m = lorentz_moreau(&v(&[-2.0, 1.0, 0.0])).unwrap();
    assert_eq!(m.plus.norm(), 0.0);
    assert_eq!(m.minus, v(&[2.0, -1.0, 0.0]));
    assert_eq!(m.abs, v(&[2.0, -1.0, 0.0]));
    let m = lorentz_moreau(&DVector::zeros(3)).unwrap();
    assert_eq!(m.plus.norm() + m.minus.norm() + m.abs.norm(), 0.0);
}

/// Nearest point of the Lorentz cone by scanning its boundary
/// `(r, r cos a, r sin a)` and the apex.
fn brute_projection(x: &DVector<f64>) -> DVector<f64> {
    let mut best = (x.norm(), DVector::zeros(3));
    let steps = 2000;
    for i in 0..=steps {
        let r = 6.0 * i as f64 / steps as f64;
        for j in 0..720 {
            let a = std::f64::consts::TAU * j as f64 / 720.0;
            let y = v(&[r, r * a.cos(), r * a.sin()]);
            let d = (x - &y).norm();
            if d < best.0 {
                best = (d, y);
            }
        }
    }
    best.1
}

#[test]
fn moreau_outside_case_matches_brute_force() {
    let x = v(&[0.0, 3.0, 4.0]);
    let oracle = brute_projection(&x);
    let m = lorentz_moreau(&x).unwrap();
    assert!((&m.plus - &oracle).amax() < 1e-2, "{oracle}");
    // Frozen from the oracle above, exact to rounding.
    assert!((&m.plus - v(&[2.5, 1.5, 2.0])).amax() < 1e-12);
    assert!((&m.minus - v(&[2.5, -1.5, -2.0])).amax() < 1e-12);
    assert!((&m.abs - v(&[5.0, 0.0, 0.0])).amax() < 1e-12);
}

#[test]
fn complementarity_residual_examples() {
    let o = ConeSpec::NonnegOrthant(2);
    assert_eq!(complementarity_residual(o, &v(&[1.0, 0.0]), &v(&[0.0, 2.0])).unwrap(), 0.0);
    assert_eq!(complementarity_residual(o, &v(&[1.0, 1.0]), &v(&[1.0, 0.0])).unwrap(), 1.0);
    let (x, u, _) = computed_solution();
    let (y, w) = demo_instance().eval_f(&x, &u);
    assert!(complementarity_residual(ConeSpec::Esoc(3, 2), &stack(&x, &u), &stack(&y, &w)).unwrap() <= 1e-6);
    assert!(complementarity_residual(o, &v(&[1.0]), &v(&[1.0, 0.0])).is_err());
}

#[test]
fn dimension_rules() {
    assert!(ConeSpec::Esoc(1, 1).new_checked().is_err());
    assert!(ConeSpec::Esoc(2, 0).new_checked().is_err());
    assert!(ConeSpec::Lorentz(1).new_checked().is_err());
    assert_eq!(ConeSpec::Esoc(3, 2).dim(), 5);
}

#[test]
fn moreau_identity_on_seeded_sample() {
    let mut r = rng(11);
    for _ in 0..1000 {
        let x = uniform_vec(&mut r, 4, -3.0, 3.0);
        let m = lorentz_moreau(&x).unwrap();
        assert!((&x - (&m.plus - &m.minus)).amax() <= 1e-12);
        assert!(m.plus.dot(&m.minus).abs() <= 1e-12);
    }
}

#[test]
fn dual_only_witness_for_each_shape() {
    for (k, l) in [(2, 1), (3, 2), (4, 3)] {
        // e'x = 1 >= |u| = 0.5, but x_2 = 0 < |u|.
        let mut z = DVector::zeros(k + l);
        z[0] = 1.0;
        z[k] = 0.5;
        assert!(contains(ConeSpec::DualEsoc(k, l), &z).unwrap());
        assert!(!contains(ConeSpec::Esoc(k, l), &z).unwrap());
    }
}

proptest! {
    #[test]
    fn moreau_parts(x in prop::collection::vec(-5.0f64..5.0, 2..7)) {
        let x = DVector::from_vec(x);
        let n = x.len();
        let m = lorentz_moreau(&x).unwrap();
        prop_assert!((&x - (&m.plus - &m.minus)).amax() <= 1e-12 * (1.0 + x.amax()));
        prop_assert!(m.plus.dot(&m.minus).abs() <= 1e-12 * (1.0 + x.norm_squared()));
        prop_assert!((&m.abs - (&m.plus + &m.minus)).amax() <= 1e-12 * (1.0 + x.amax()));
        prop_assert!(contains(ConeSpec::Lorentz(n), &m.plus).unwrap());
        prop_assert!(contains(ConeSpec::Lorentz(n), &m.minus).unwrap());
    }

    #[test]
    fn esoc_is_inside_its_dual(seed in any::<u64>(), k in 2usize..6, l in 1usize..4) {
        let mut r = rng(seed);
        let (x, u) = esoc_point(&mut r, k, l);
        let z = stack(&x, &u);
        prop_assert!(contains(ConeSpec::Esoc(k, l), &z).unwrap());
        prop_assert!(contains(ConeSpec::DualEsoc(k, l), &z).unwrap());
    }

    #[test]
    fn homogeneity(seed in any::<u64>(), k in 2usize..5, l in 1usize..3) {
        let mut r = rng(seed);
        let (x, u) = esoc_point(&mut r, k, l);
        let z = stack(&x, &u);
        for cone in [ConeSpec::Esoc(k, l), ConeSpec::DualEsoc(k, l), ConeSpec::Lorentz(k + l)] {
            if contains(cone, &z).unwrap() {
                for t in [0.0, 0.5, 2.0, 10.0] {
                    prop_assert!(contains(cone, &(&z * t)).unwrap());
                }
            }
        }
    }
}
