use std::sync::Arc;

use hho_core::forms::{convective_form, norm_1h, stabilisation_form, BcMode, RhoKind};
use hho_core::mesh::{build_perturbed_polygonal, validate};
use hho_core::polybasis::monomial_exponents;
use hho_core::solver::{relative_residual, CsrMatrix, LinearSolver, SparseLuSolver};
use hho_core::space::HhoSpace;
use hho_core::verification::{eoc, random_vector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const UNIT: [f64; 4] = [0.0, 1.0, 0.0, 1.0];

fn rho_kind() -> impl Strategy<Value = RhoKind> {
    prop_oneof![
        Just(RhoKind::Centered),
        Just(RhoKind::Upwind),
        Just(RhoKind::theta()),
        Just(RhoKind::ScharfetterGummel)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn perturbed_meshes_are_valid_and_closed(n in 1usize..7, amp in 0.0f64..0.3, seed in any::<u64>()) {
        let mesh = build_perturbed_polygonal(n, UNIT, amp, seed).unwrap();
        let report = validate(&mesh);
        prop_assert!(report.is_valid(), "{:?}", report.violations);
        prop_assert!((mesh.area() - 1.0).abs() < 1e-12);
        let sides: usize = mesh.elements.iter().map(|e| e.face_ids.len()).sum();
        prop_assert_eq!(sides, 2 * mesh.num_interior_faces() + mesh.num_boundary_faces());
        for (t, e) in mesh.elements.iter().enumerate() {
            let mut s = [0.0, 0.0];
            for &f in &e.face_ids {
                let nrm = mesh.normal(t, f);
                s[0] += mesh.faces[f].diameter * nrm[0];
                s[1] += mesh.faces[f].diameter * nrm[1];
            }
            prop_assert!(s[0].abs() < 1e-13 && s[1].abs() < 1e-13);
        }
    }

    #[test]
    fn element_projection_reproduces_polynomials(k in 0usize..4, seed in any::<u64>(), coef in prop::collection::vec(-1.0f64..1.0, 10)) {
        let mesh = build_perturbed_polygonal(2, UNIT, 0.2, seed).unwrap();
        let space = HhoSpace::new(Arc::new(mesh), k).unwrap();
        let exps = monomial_exponents(k);
        let p = |x: [f64; 2]| -> f64 {
            exps.iter().zip(&coef).map(|(&(i, j), c)| c * x[0].powi(i as i32) * x[1].powi(j as i32)).sum()
        };
        for t in 0..space.mesh.num_elements() {
            let c = space.project_element(t, p);
            let x = space.centroid(t);
            for y in [x, [x[0] + 0.03, x[1] - 0.02]] {
                prop_assert!((space.eval_element_poly(t, &c, y) - p(y)).abs() < 1e-12);
            }
            let again = space.project_element(t, |y| space.eval_element_poly(t, &c, y));
            for (a, b) in c.iter().zip(&again) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn convective_form_is_skew(k in 0usize..3, seed in any::<u64>()) {
        let mesh = build_perturbed_polygonal(3, UNIT, 0.2, seed).unwrap();
        let space = HhoSpace::new(Arc::new(mesh), k).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, v, z) = (random_vector(&space, &mut rng), random_vector(&space, &mut rng), random_vector(&space, &mut rng));
        let scale = norm_1h(&space, &w) * norm_1h(&space, &v) * norm_1h(&space, &z);
        prop_assert!(convective_form(&space, &w, &v, &v).abs() <= 1e-12 * norm_1h(&space, &w) * norm_1h(&space, &v).powi(2));
        prop_assert!((convective_form(&space, &w, &v, &z) + convective_form(&space, &w, &z, &v)).abs() <= 1e-12 * scale);
    }

    #[test]
    fn convective_stabilisation_is_nonnegative(k in 0usize..3, seed in any::<u64>(), rho in rho_kind(), nu in 1e-3f64..1.0, weak in any::<bool>()) {
        let mesh = build_perturbed_polygonal(3, UNIT, 0.2, seed).unwrap();
        let space = HhoSpace::new(Arc::new(mesh), k).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, v) = (random_vector(&space, &mut rng), random_vector(&space, &mut rng));
        let bc = if weak { BcMode::WeakSkew } else { BcMode::Strong };
        let j = stabilisation_form(&space, rho, nu, bc, true, &w, &v, &v);
        prop_assert!(j >= -1e-13 * norm_1h(&space, &v).powi(2) * norm_1h(&space, &w));
    }

    #[test]
    fn rho_is_nonnegative_and_lipschitz(rho in rho_kind(), a in -50.0f64..50.0, b in -50.0f64..50.0) {
        prop_assert!(rho.rho(a) >= 0.0);
        let l = if matches!(rho, RhoKind::ThetaScheme { .. }) { 2.5 } else { 0.5 };
        prop_assert!((rho.rho(a) - rho.rho(b)).abs() <= l * (a - b).abs() + 1e-12);
    }

    #[test]
    fn eoc_recovers_power_laws(c in 0.01f64..100.0, r in 0.5f64..6.0, levels in 2usize..6) {
        let h: Vec<f64> = (0..levels).map(|i| 0.5f64.powi(i as i32)).collect();
        let e: Vec<f64> = h.iter().map(|h| c * h.powf(r)).collect();
        let rates = eoc(&e, &h);
        prop_assert_eq!(rates.len(), levels - 1);
        for q in &rates {
            prop_assert!((q.unwrap() - r).abs() < 1e-10);
        }
    }

    #[test]
    fn csr_product_matches_dense(n in 1usize..30, entries in prop::collection::vec((0usize..30, 0usize..30, -5.0f64..5.0), 0..120), x in prop::collection::vec(-1.0f64..1.0, 30)) {
        let t: Vec<_> = entries.into_iter().map(|(i, j, v)| (i % n, j % n, v)).collect();
        let a = CsrMatrix::from_triplets(n, n, &t);
        let d = a.to_dense();
        let y = a.mul_vec(&x[..n]);
        let yd = &d * nalgebra::DVector::from_column_slice(&x[..n]);
        for i in 0..n {
            prop_assert!((y[i] - yd[i]).abs() < 1e-12);
        }
        prop_assert_eq!(a.transpose().transpose(), a);
    }

    #[test]
    fn sparse_lu_solves_nonsingular_systems(n in 1usize..60, entries in prop::collection::vec((0usize..60, 0usize..60, -1.0f64..1.0), 0..240), diag in prop::collection::vec(prop_oneof![-3.0f64..-1.0, 1.0f64..3.0], 60)) {
        let mut t: Vec<_> = entries.into_iter().map(|(i, j, v)| (i % n, j % n, 0.3 * v)).collect();
        // row-wise scaled diagonal keeps the matrix nonsingular
        let mut rowsum = vec![0.0f64; n];
        for &(i, _, v) in &t {
            rowsum[i] += v.abs();
        }
        t.extend((0..n).map(|i| (i, i, diag[i] * (1.0 + rowsum[i]))));
        let a = CsrMatrix::from_triplets(n, n, &t);
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = SparseLuSolver::default().solve(&a, &b).unwrap();
        prop_assert!(relative_residual(&a, &x, &b) <= 1e-12);
    }
}
