use std::sync::Arc;

use hho_core::assembly::{dof_count, Assembler, AssemblyError, Problem, State};
use hho_core::forms::{BcMode, FlowParams, RhoKind};
use hho_core::mesh::{build_cartesian, build_perturbed_polygonal, Mesh};
use hho_core::space::HhoSpace;
use hho_core::verification::{condensation_audit, pressure_projection, random_vector, ExactFlow, PolynomialStokes};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const UNIT: [f64; 4] = [0.0, 1.0, 0.0, 1.0];
const ALL_BC: [BcMode; 4] = [BcMode::Strong, BcMode::WeakSkew, BcMode::WeakSymmetric, BcMode::WeakIncomplete];

fn space(mesh: Mesh, k: usize) -> Arc<HhoSpace> {
    Arc::new(HhoSpace::new(Arc::new(mesh), k).unwrap())
}

fn zero_problem(space: Arc<HhoSpace>, bc: BcMode) -> Problem {
    let params = FlowParams { nu: 0.1, bc, rho: RhoKind::ScharfetterGummel, ..Default::default() };
    Problem::new(space, params, |_| [0.0, 0.0], |_| [0.0, 0.0])
}

#[test]
fn single_element_keeps_only_pressure_mean_and_gauge() {
    for k in 0..3 {
        let s = space(build_cartesian(1, 1, UNIT).unwrap(), k);
        let strong = Assembler::new(&zero_problem(s.clone(), BcMode::Strong));
        assert_eq!(strong.n_dof(), 2);
        let weak = Assembler::new(&zero_problem(s, BcMode::WeakSkew));
        assert_eq!(weak.n_dof(), 2 * (k + 1) * 4 + 2);
    }
}

#[test]
fn coupled_unknowns_follow_the_count_formula() {
    let s = space(build_cartesian(2, 2, UNIT).unwrap(), 1);
    assert_eq!(Assembler::new(&zero_problem(s.clone(), BcMode::WeakSkew)).n_dof(), 53);
    assert_eq!(dof_count(&s.mesh, 1, BcMode::WeakSkew), 53);
    for mesh in [build_cartesian(3, 5, UNIT).unwrap(), build_perturbed_polygonal(4, UNIT, 0.2, 3).unwrap()] {
        let (nf, ni, nt) = (mesh.num_faces(), mesh.num_interior_faces(), mesh.num_elements());
        for k in 0..3 {
            let s = space(mesh.clone(), k);
            for bc in ALL_BC {
                let n = Assembler::new(&zero_problem(s.clone(), bc)).n_dof();
                let faces = if bc.is_weak() { nf } else { ni };
                assert_eq!(n, 2 * (k + 1) * faces + nt + 1, "k={k} {bc:?}");
                assert_eq!(n, dof_count(&mesh, k, bc));
            }
        }
    }
}

#[test]
fn zero_data_gives_zero_residual() {
    for bc in ALL_BC {
        let p = zero_problem(space(build_perturbed_polygonal(3, UNIT, 0.2, 1).unwrap(), 1), bc);
        let sys = Assembler::new(&p).assemble(&p, &p.initial_state(), Some(1.0)).unwrap();
        assert_eq!(sys.momentum_residual, 0.0);
        assert_eq!(sys.continuity_residual, 0.0);
        assert!(sys.rhs.iter().all(|&r| r == 0.0));
    }
}

#[test]
fn polynomial_stokes_interpolant_is_a_discrete_solution() {
    for mesh in [build_cartesian(3, 3, UNIT).unwrap(), build_perturbed_polygonal(3, UNIT, 0.25, 4).unwrap()] {
        for k in 0..4 {
            let exact = PolynomialStokes { k, nu: 0.7 };
            let s = space(mesh.clone(), k);
            for bc in ALL_BC {
                let params = FlowParams { nu: exact.nu, convection: false, bc, ..Default::default() };
                let p = Problem::new(s.clone(), params, |x| exact.forcing(x), |x| exact.velocity(x));
                let mut u = s.interpolate(|x| exact.velocity(x));
                u.pressure = pressure_projection(&s, &exact);
                let state = State { u, lambda: 0.0 };
                let sys = Assembler::new(&p).assemble(&p, &state, None).unwrap();
                let f = p.forcing.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
                assert!(sys.momentum_residual <= 1e-10 * f, "k={k} {bc:?}: {:e}", sys.momentum_residual);
                assert!(sys.continuity_residual <= 1e-12 * f, "k={k} {bc:?}: {:e}", sys.continuity_residual);
            }
        }
    }
}

#[test]
fn condensed_step_matches_full_step() {
    for mesh in [build_cartesian(4, 4, UNIT).unwrap(), build_perturbed_polygonal(3, UNIT, 0.2, 8).unwrap()] {
        for k in 0..3 {
            let s = space(mesh.clone(), k);
            for bc in [BcMode::Strong, BcMode::WeakSkew] {
                let err = condensation_audit(&s, bc, 3, 17).unwrap();
                assert!(err <= 1e-11, "k={k} {bc:?}: {err:e}");
            }
        }
    }
}

#[test]
fn zero_condensed_increment_at_a_solution_recovers_nothing() {
    let p = zero_problem(space(build_cartesian(3, 3, UNIT).unwrap(), 2), BcMode::Strong);
    let asm = Assembler::new(&p);
    let sys = asm.assemble(&p, &p.initial_state(), Some(1.0)).unwrap();
    let inc = asm.back_solve(&p, &sys, &vec![0.0; asm.n_dof()]);
    assert_eq!(inc.u, p.space.zero_vector());
    assert_eq!(inc.lambda, 0.0);
}

#[test]
fn assembly_is_reproducible() {
    let s = space(build_perturbed_polygonal(4, UNIT, 0.2, 2).unwrap(), 2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = zero_problem(s.clone(), BcMode::WeakSkew);
    let state = State { u: random_vector(&s, &mut rng), lambda: 0.3 };
    let asm = Assembler::new(&p);
    let a = asm.assemble(&p, &state, Some(2.0)).unwrap();
    let b = Assembler::new(&p).assemble(&p, &state, Some(2.0)).unwrap();
    assert_eq!(a.matrix, b.matrix);
    assert_eq!(a.rhs, b.rhs);
    assert_eq!(a.momentum_residual.to_bits(), b.momentum_residual.to_bits());
}

#[test]
fn malformed_states_are_rejected() {
    let s = space(build_cartesian(2, 2, UNIT).unwrap(), 1);
    let p = zero_problem(s.clone(), BcMode::Strong);
    let asm = Assembler::new(&p);
    let mut short = p.initial_state();
    short.u.pressure.pop();
    assert!(matches!(asm.assemble(&p, &short, None), Err(AssemblyError::DimensionMismatch { what: "pressure", .. })));
    let mut bad = p.initial_state();
    bad.u.elem_block_mut(3)[0] = f64::NAN;
    assert!(matches!(asm.assemble(&p, &bad, None), Err(AssemblyError::NonFinite { element: 3 })));
}
