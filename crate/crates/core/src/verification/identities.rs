//! Algebraic identities of the discrete operators, checked on random data.

use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ibp_audit, random_vector};
use crate::assembly::{assemble_full, Assembler, FullMap, Problem, State};
use crate::forms::{convective_form, convective_form_primal, norm_1h, BcMode, FlowParams, RhoKind};
use crate::hho_local::{divergence_reconstruction, gradient_reconstruction};
use crate::mesh::{build_cartesian, build_perturbed_polygonal, Mesh, MeshError, Point};
use crate::polybasis::{dim_p, monomial_exponents, BasisError};
use crate::solver::{LinearSolver, SolverError, SparseLuSolver};
use crate::space::HhoSpace;

pub const IDENTITY_TOLERANCE: f64 = 1e-11;

/// One identity evaluated on one (mesh, degree) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityCheck {
    pub identity: &'static str,
    pub mesh: String,
    pub k: usize,
    /// Largest relative violation over the trials.
    pub violation: f64,
}

impl IdentityCheck {
    pub fn passed(&self) -> bool {
        self.violation <= IDENTITY_TOLERANCE
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IdentityError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// The unit-square meshes of the identity suite: 2x2, 4x4 and a perturbed
/// hexagon/quadrilateral mesh.
pub fn identity_meshes() -> Result<Vec<(String, Mesh)>, MeshError> {
    let unit = [0.0, 1.0, 0.0, 1.0];
    Ok(vec![
        ("cartesian-2x2".into(), build_cartesian(2, 2, unit)?),
        ("cartesian-4x4".into(), build_cartesian(4, 4, unit)?),
        ("hexagon-perturbed-4x4".into(), build_perturbed_polygonal(4, unit, 0.2, 7)?),
    ])
}

fn ratio(a: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        a.abs() / scale
    } else {
        a.abs()
    }
}

/// `t_h(w, v, v) = 0` relative to `|w|_1h |v|_1h^2`.
pub fn non_dissipation_audit(space: &HhoSpace, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let w = random_vector(space, &mut rng);
        let v = random_vector(space, &mut rng);
        let s = norm_1h(space, &w) * norm_1h(space, &v).powi(2);
        worst = worst.max(ratio(convective_form(space, &w, &v, &v), s));
    }
    worst
}

/// `t_h(w, v, z) = -t_h(w, z, v)` relative to `|w|_1h |v|_1h |z|_1h`.
pub fn skew_symmetry_audit(space: &HhoSpace, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let w = random_vector(space, &mut rng);
        let v = random_vector(space, &mut rng);
        let z = random_vector(space, &mut rng);
        let s = norm_1h(space, &w) * norm_1h(space, &v) * norm_1h(space, &z);
        worst = worst.max(ratio(convective_form(space, &w, &v, &z) + convective_form(space, &w, &z, &v), s));
    }
    worst
}

/// The assembled convective form against its primal definition.
pub fn primal_form_audit(space: &HhoSpace, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let w = random_vector(space, &mut rng);
        let v = random_vector(space, &mut rng);
        let z = random_vector(space, &mut rng);
        let s = norm_1h(space, &w) * norm_1h(space, &v) * norm_1h(space, &z);
        worst = worst.max(ratio(convective_form(space, &w, &v, &z) - convective_form_primal(space, &w, &v, &z), s));
    }
    worst
}

/// Random vector polynomial of total degree `deg`, with its gradient.
struct PolyField {
    exps: Vec<(usize, usize)>,
    coef: [Vec<f64>; 2],
}

impl PolyField {
    fn random(deg: usize, rng: &mut impl Rng) -> Self {
        let exps = monomial_exponents(deg);
        let n = exps.len();
        let coef = [(0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()];
        PolyField { exps, coef }
    }

    fn value(&self, x: Point) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (m, &(i, j)) in self.exps.iter().enumerate() {
            let b = x[0].powi(i as i32) * x[1].powi(j as i32);
            out[0] += self.coef[0][m] * b;
            out[1] += self.coef[1][m] * b;
        }
        out
    }

    /// d v_c / d x_j.
    fn derivative(&self, c: usize, j: usize, x: Point) -> f64 {
        self.exps
            .iter()
            .enumerate()
            .filter(|(_, &(a, b))| if j == 0 { a > 0 } else { b > 0 })
            .map(|(m, &(a, b))| {
                let (a, b) = (a as i32, b as i32);
                let d = if j == 0 {
                    a as f64 * x[0].powi(a - 1) * x[1].powi(b)
                } else {
                    b as f64 * x[0].powi(a) * x[1].powi(b - 1)
                };
                self.coef[c][m] * d
            })
            .sum()
    }
}

/// Commuting properties `G_k I v = pi^k grad v` and `D_k I v = pi^k div v`
/// for random polynomial fields of degree k+1, relative to the projected data.
pub fn commuting_audit(space: &HhoSpace, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = space.k;
    let nk = dim_p(k);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let field = PolyField::random(k + 1, &mut rng);
        let iv = space.interpolate(|x| field.value(x));
        for t in 0..space.mesh.num_elements() {
            let le = space.local(t);
            let local = DVector::from_vec(space.gather(&iv, t));
            let g = gradient_reconstruction(le, k) * &local;
            let d = divergence_reconstruction(le, k) * &local;
            let mut scale: f64 = 0.0;
            let mut err: f64 = 0.0;
            let mut div = vec![0.0; nk];
            for c in 0..2 {
                for j in 0..2 {
                    let p = space.project_element(t, |x| field.derivative(c, j, x));
                    for a in 0..nk {
                        err = err.max((g[(2 * c + j) * nk + a] - p[a]).abs());
                        scale = scale.max(p[a].abs());
                        if c == j {
                            div[a] += p[a];
                        }
                    }
                }
            }
            for a in 0..nk {
                err = err.max((d[a] - div[a]).abs());
            }
            worst = worst.max(ratio(err, scale));
        }
    }
    worst
}

/// `pi^k D_2k = D_k` on random local vectors, relative to `D_2k v`.
pub fn divergence_projection_audit(space: &HhoSpace, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = space.k;
    let (nk, n2k) = (dim_p(k), dim_p(2 * k));
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let v = random_vector(space, &mut rng);
        for t in 0..space.mesh.num_elements() {
            let le = space.local(t);
            let local = DVector::from_vec(space.gather(&v, t));
            let d2 = divergence_reconstruction(le, 2 * k) * &local;
            let dk = divergence_reconstruction(le, k) * &local;
            let mkk = le.ops.mass.view((0, 0), (nk, nk)).into_owned();
            let mk2 = le.ops.mass.view((0, 0), (nk, n2k));
            let proj = mkk.cholesky().expect("element mass matrix is SPD").solve(&(mk2 * &d2));
            worst = worst.max(ratio((proj - dk).amax(), d2.amax()));
        }
    }
    worst
}

/// Newton increment from static condensation plus recovery against the
/// increment of the uncondensed system, at random states.
pub fn condensation_audit(space: &Arc<HhoSpace>, bc: BcMode, trials: usize, seed: u64) -> Result<f64, SolverError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = FlowParams { nu: 0.1, rho: RhoKind::ScharfetterGummel, bc, ..Default::default() };
    let problem = Problem::new(
        space.clone(),
        params,
        |x| [(x[0] * 3.0).sin() + x[1], x[0] * x[1] - 0.5],
        |x| [x[1] * (1.0 - x[1]), 0.2 * x[0]],
    );
    let assembler = Assembler::new(&problem);
    let full_map = FullMap::new(&problem);
    let mut condensed_solver = SparseLuSolver::default();
    let mut full_solver = SparseLuSolver::default();
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let mut u = random_vector(space, &mut rng);
        problem.impose_datum(&mut u);
        let state = State { u, lambda: rng.random_range(-1.0..1.0) };
        let ptc = Some(rng.random_range(0.1..10.0));

        let sys = assembler.assemble(&problem, &state, ptc)?;
        let rhs: Vec<f64> = sys.rhs.iter().map(|v| -v).collect();
        let delta = condensed_solver.solve(&sys.matrix, &rhs)?;
        let inc = assembler.back_solve(&problem, &sys, &delta);
        let condensed = full_map.flatten(&State { u: inc.u, lambda: inc.lambda });

        let (jac, res) = assemble_full(&problem, &state, ptc)?;
        let rhs: Vec<f64> = res.iter().map(|v| -v).collect();
        let full = full_solver.solve(&jac, &rhs)?;

        let scale = full.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = full.iter().zip(&condensed).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst = worst.max(ratio(err, scale));
    }
    Ok(worst)
}

/// Runs every identity on every suite mesh for k in `degrees`.
pub fn identity_suite(degrees: &[usize], trials: usize, seed: u64) -> Result<Vec<IdentityCheck>, IdentityError> {
    let mut out = Vec::new();
    for (name, mesh) in identity_meshes()? {
        let mesh = Arc::new(mesh);
        for &k in degrees {
            let space = Arc::new(HhoSpace::new(mesh.clone(), k)?);
            let mut push = |identity: &'static str, violation: f64| {
                out.push(IdentityCheck { identity, mesh: name.clone(), k, violation })
            };
            push("integration-by-parts", ibp_audit(&space, trials, seed));
            push("non-dissipation", non_dissipation_audit(&space, trials, seed + 1));
            push("skew-symmetry", skew_symmetry_audit(&space, trials, seed + 2));
            push("primal-form", primal_form_audit(&space, trials, seed + 3));
            push("commuting", commuting_audit(&space, trials, seed + 4));
            push("divergence-projection", divergence_projection_audit(&space, trials, seed + 5));
            push("condensation-strong", condensation_audit(&space, BcMode::Strong, trials, seed + 6)?);
            push("condensation-weak", condensation_audit(&space, BcMode::WeakSkew, trials, seed + 7)?);
        }
    }
    Ok(out)
}


/// Largest relative difference between the assembled Jacobian applied to a
/// random direction and the central difference quotient of the residual,
/// over `directions` directions at a random state.
pub fn jacobian_audit(problem: &Problem, directions: usize, step: f64, seed: u64) -> Result<f64, SolverError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let map = FullMap::new(problem);
    let mut u = random_vector(&problem.space, &mut rng);
    problem.impose_datum(&mut u);
    let state = State { u, lambda: rng.random_range(-1.0..1.0) };
    let (jac, _) = assemble_full(problem, &state, None)?;
    let x = map.flatten(&state);
    let residual_at = |y: &[f64]| -> Result<Vec<f64>, SolverError> {
        let mut s = state.clone();
        map.unflatten(y, &mut s);
        Ok(assemble_full(problem, &s, None)?.1)
    };
    let mut worst: f64 = 0.0;
    for _ in 0..directions {
        let d: Vec<f64> = (0..x.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let plus: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
        let minus: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a - step * b).collect();
        let (rp, rm) = (residual_at(&plus)?, residual_at(&minus)?);
        let jd = jac.mul_vec(&d);
        let (mut err, mut scale) = (0.0f64, 0.0f64);
        for i in 0..jd.len() {
            let fd = (rp[i] - rm[i]) / (2.0 * step);
            err += (fd - jd[i]).powi(2);
            scale += jd[i].powi(2);
        }
        worst = worst.max(ratio(err.sqrt(), scale.sqrt()));
    }
    Ok(worst)
}
