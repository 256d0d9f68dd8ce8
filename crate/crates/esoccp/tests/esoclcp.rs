mod common;

use common::*;
use esoccp::esoclcp::*;
use esoccp::solvers::{solve_esoclcp, SolverConfig, SolverKind, SolverStatus};
use esoccp::{DMatrix, DVector};
use proptest::prelude::*;

fn v(s: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(s)
}

#[test]
fn classify_examples() {
    let z = DVector::zeros(1);
    let c = classify_pair(&v(&[1.0, 0.0]), &z, &v(&[0.0, 1.0]), &z, 1e-9).unwrap();
    assert_eq!(c.case, PairCase::I);
    let c = classify_pair(&v(&[1.0, 1.0]), &z, &v(&[1.0, 0.0]), &z, 1e-9).unwrap();
    assert_eq!(c.case, PairCase::None);
    assert!(classify_pair(&v(&[1.0]), &z, &v(&[1.0, 0.0]), &z, 1e-9).is_err());
}

#[test]
fn solution_pair_is_case_four() {
    let inst = demo_instance();
    let (x, u, _) = computed_solution();
    let (y, w) = inst.eval_f(&x, &u);
    let c = classify_pair(&x, &u, &y, &w, 1e-6).unwrap();
    assert_eq!(c.case, PairCase::IV);
    let lambda = c.lambda.unwrap();
    assert!((lambda - y.sum() / u.norm()).abs() < 1e-12);
    assert!((&w + &u * lambda).amax() < 1e-6);
    // Printed data: u = (333/2693, -619/2428), v = (-3943/316, 4039/157).
    let (_, ur) = demo_solution();
    assert!((&u - &ur).amax() < 1e-4);
    assert!((&w - v(&[-3943.0 / 316.0, 4039.0 / 157.0])).amax() < 1e-2);
}

#[test]
fn reformulated_values_at_solution() {
    let inst = demo_instance();
    let mix = reformulate_vi(&inst);
    let (x, u, _) = computed_solution();
    let z = mix.forward(&x, &u);
    assert!((mix.f1(&z) - v(&[0.0, 8349.0 / 292.0, 0.0])).amax() < 1e-4);
    assert!(mix.f2(&z).amax() < 1e-9);
    // x~ from the printed rationals (781/641, 0, 999/1328).
    assert!((z.rows(0, 3) - v(&[781.0 / 641.0, 0.0, 999.0 / 1328.0])).amax() < 1e-4);
    assert_eq!(mix.f2(&z).len(), inst.l + 1);
}

#[test]
fn zero_u_and_t_reduce_to_orthant_map() {
    let mut r = rng(3);
    let inst = monotone_instance(&mut r, 3, 2);
    let mix = reformulate_vi(&inst);
    let x = uniform_vec(&mut r, 3, -1.0, 1.0);
    let z = MixCpInstance::stack(&x, &DVector::zeros(2), 0.0);
    assert!((mix.f1(&z) - (&inst.a * &x + &inst.p)).amax() < 1e-14);
    assert_eq!(mix.f2(&z).amax(), 0.0);
}

#[test]
fn jacobian_blocks_match_central_differences() {
    let mut r = rng(17);
    for _ in 0..10 {
        let inst = monotone_instance(&mut r, 3, 2);
        let mix = reformulate_vi(&inst);
        let z = uniform_vec(&mut r, 6, -1.5, 1.5);
        let j = mix.jacobian_blocks(&z);
        let f = |z: &DVector<f64>| {
            let (a, b) = (mix.f1(z), mix.f2(z));
            stack(&a, &b)
        };
        let fd = fd_jacobian(f, &z, 1e-6);
        let mut full = DMatrix::zeros(6, 6);
        full.view_mut((0, 0), (3, 3)).copy_from(&j.ax);
        full.view_mut((0, 3), (3, 3)).copy_from(&j.by);
        full.view_mut((3, 0), (3, 3)).copy_from(&j.cx);
        full.view_mut((3, 3), (3, 3)).copy_from(&j.dy);
        assert!((&full - &fd).amax() <= 1e-6, "{}", (&full - &fd).amax());
    }
}

fn item_i_instance(p: &[f64], c: DMatrix<f64>, q: &[f64]) -> EsocLcpInstance {
    EsocLcpInstance::new(DMatrix::identity(2, 2), DMatrix::zeros(2, 2), c, DMatrix::identity(2, 2), v(p), v(q)).unwrap()
}

#[test]
fn item_i_examples() {
    let inst = item_i_instance(&[0.0, 0.0], DMatrix::zeros(2, 2), &[0.0, 0.0]);
    assert!(reformulate_i(&inst, &DVector::zeros(2), 1e-9).unwrap().holds);
    let inst = item_i_instance(&[-1.0, -1.0], DMatrix::identity(2, 2), &[0.0, 0.0]);
    let rep = reformulate_i(&inst, &v(&[1.0, 1.0]), 1e-9).unwrap();
    assert!(!rep.holds);
    assert!((rep.cone_slack + 2f64.sqrt()).abs() < 1e-12);
    let inst = item_i_instance(&[1.0, 1.0], DMatrix::zeros(2, 2), &[1.0, 0.0]);
    let rep = reformulate_i(&inst, &DVector::zeros(2), 1e-9).unwrap();
    assert!(rep.holds);
    assert!((rep.cone_slack - 1.0).abs() < 1e-12);
}

#[test]
fn back_map_examples() {
    let u = v(&[0.3, -0.4]);
    let (x, u2) = back_map(&MixCpInstance::stack(&DVector::zeros(3), &u, 0.0), 3, 2).unwrap();
    assert_eq!((x.norm(), u2), (0.0, u.clone()));
    assert!(back_map(&MixCpInstance::stack(&DVector::zeros(3), &u, -1.0), 3, 2).is_err());
    let (_, _, z) = computed_solution();
    let (x, _) = back_map(&z, 3, 2).unwrap();
    let (xr, _) = demo_solution();
    assert!((&x - &xr).amax() < 1e-4);
}

#[test]
fn verify_examples() {
    let inst = demo_instance();
    let (x, u, _) = computed_solution();
    assert!(verify_solution(&inst, &x, &u).unwrap().passed);
    let mut xp = x.clone();
    xp[0] += 0.1;
    let rep = verify_solution(&inst, &xp, &u).unwrap();
    assert!(!rep.passed && rep.gap > 1e-3);
    // z = 0 with r in M.
    let inst0 = EsocLcpInstance::new(
        DMatrix::identity(2, 2),
        DMatrix::zeros(2, 1),
        DMatrix::zeros(1, 2),
        DMatrix::identity(1, 1),
        v(&[1.0, 1.0]),
        v(&[1.5]),
    )
    .unwrap();
    let rep = verify_solution(&inst0, &DVector::zeros(2), &DVector::zeros(1)).unwrap();
    assert!(rep.passed && rep.gap == 0.0);
}

#[test]
fn near_singular_blocks_are_flagged() {
    let mut inst = demo_instance();
    assert!(!inst.near_singular());
    inst.a = DMatrix::from_element(3, 3, 1.0);
    inst.refresh_conditioning();
    assert!(inst.near_singular());
}

#[test]
fn rejects_bad_shapes() {
    let e = EsocLcpInstance::new(
        DMatrix::identity(1, 1),
        DMatrix::zeros(1, 1),
        DMatrix::zeros(1, 1),
        DMatrix::identity(1, 1),
        v(&[0.0]),
        v(&[0.0]),
    );
    assert!(e.is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn constructed_case_four_pairs(seed in any::<u64>(), k in 2usize..6, l in 1usize..4) {
        let mut r = rng(seed);
        let u = uniform_vec(&mut r, l, -2.0, 2.0);
        prop_assume!(u.norm() > 1e-3);
        let lambda = r.random_range(0.1..5.0);
        let w = -&u * lambda;
        // y >= 0 with e'y = |v| and a slack s >= 0 orthogonal to y.
        let mut y = uniform_vec(&mut r, k, 0.0, 1.0);
        y[0] = 0.0;
        y *= w.norm() / y.sum().max(1e-12);
        let mut s = DVector::zeros(k);
        s[0] = r.random_range(0.0..2.0);
        let x = s.add_scalar(u.norm());
        let c = classify_pair(&x, &u, &y, &w, 1e-9).unwrap();
        prop_assert_eq!(c.case, PairCase::IV);
        prop_assert!((c.lambda.unwrap() - lambda).abs() <= 1e-9 * lambda.max(1.0));
    }

    #[test]
    fn accepted_roots_with_positive_t_solve_the_problem(seed in any::<u64>()) {
        let mut r = rng(seed);
        let inst = monotone_instance(&mut r, 3, 2);
        let cfg = SolverConfig { tol: 1e-10, max_iter: 200, ..SolverConfig::default() };
        let sol = solve_esoclcp(&inst, SolverKind::Lm, None, &cfg).unwrap();
        let t = sol.z[5];
        prop_assume!(sol.trace.status == SolverStatus::Converged && t > 0.0);
        // The last residual row is t^2 - |u|^2, so the gap shrinks with t + |u|.
        let nu = sol.u.norm();
        prop_assert!((t - nu).abs() * (t + nu) <= 1e-10);
        if t > 1e-3 {
            prop_assert!((t - nu).abs() <= 1e-7);
            prop_assert!(verify_solution(&inst, &sol.x, &sol.u).unwrap().passed);
        }
    }
}

use rand::Rng;
