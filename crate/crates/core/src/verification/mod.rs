//! Exact solutions, error norms, convergence rates and conservation audits.

mod identities;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::assembly::{Problem, State};
use crate::forms::{peclet, viscous_form, RhoKind};
use crate::hho_local::{directional_derivative, divergence_reconstruction};
use crate::mesh::{build_cartesian, Mesh, MeshError, Point};
use crate::polybasis::dim_p;
use crate::space::{HhoSpace, HhoVector};

pub use identities::{
    commuting_audit, condensation_audit, divergence_projection_audit, identity_meshes, identity_suite, non_dissipation_audit,
    jacobian_audit, primal_form_audit, skew_symmetry_audit, IdentityCheck, IdentityError, IDENTITY_TOLERANCE,
};

/// A smooth exact flow with closed-form derivatives.
pub trait ExactFlow: Sync {
    fn velocity(&self, x: Point) -> [f64; 2];
    /// `g[c][j]` = d u_c / d x_j.
    fn gradient(&self, x: Point) -> [[f64; 2]; 2];
    fn pressure(&self, x: Point) -> f64;
    /// Right-hand side `-nu lap u + (u . grad) u + grad p` (without the
    /// convective term for Stokes flows).
    fn forcing(&self, x: Point) -> [f64; 2];
}

pub const KOVASZNAY_DOMAIN: [f64; 4] = [-0.5, 1.5, 0.0, 2.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kovasznay {
    pub re: f64,
    pub nu: f64,
    pub lambda: f64,
}

impl Kovasznay {
    pub fn new(re: f64) -> Self {
        assert!(re > 0.0, "Reynolds number must be positive");
        let lambda = re / 2.0 - (re * re / 4.0 + 4.0 * PI * PI).sqrt();
        Kovasznay { re, nu: 1.0 / re, lambda }
    }

    /// Uniform `n x n` grid of the reference domain.
    pub fn mesh(n: usize) -> Result<Mesh, MeshError> {
        build_cartesian(n, n, KOVASZNAY_DOMAIN)
    }

    /// Mean of the pressure over the reference domain.
    pub fn pressure_mean(&self) -> f64 {
        let l = self.lambda;
        let [x0, x1, y0, y1] = KOVASZNAY_DOMAIN;
        let int_x = -0.5 * ((2.0 * l * x1).exp() - (2.0 * l * x0).exp()) / (2.0 * l);
        let area = (x1 - x0) * (y1 - y0);
        int_x * (y1 - y0) / area + 0.5 * l * ((4.0 * l).exp() - 1.0)
    }

    pub fn divergence(&self, x: Point) -> f64 {
        let g = self.gradient(x);
        g[0][0] + g[1][1]
    }
}

impl ExactFlow for Kovasznay {
    fn velocity(&self, x: Point) -> [f64; 2] {
        let l = self.lambda;
        let e = (l * x[0]).exp();
        let (s, c) = (2.0 * PI * x[1]).sin_cos();
        [1.0 - e * c, l / (2.0 * PI) * e * s]
    }

    fn gradient(&self, x: Point) -> [[f64; 2]; 2] {
        let l = self.lambda;
        let e = (l * x[0]).exp();
        let (s, c) = (2.0 * PI * x[1]).sin_cos();
        [[-l * e * c, 2.0 * PI * e * s], [l * l / (2.0 * PI) * e * s, l * e * c]]
    }

    fn pressure(&self, x: Point) -> f64 {
        let l = self.lambda;
        -0.5 * (2.0 * l * x[0]).exp() + 0.5 * l * ((4.0 * l).exp() - 1.0)
    }

    fn forcing(&self, x: Point) -> [f64; 2] {
        let l = self.lambda;
        let e = (l * x[0]).exp();
        let (s, c) = (2.0 * PI * x[1]).sin_cos();
        let k2 = 4.0 * PI * PI;
        let lap = [(k2 - l * l) * e * c, l * (l * l - k2) / (2.0 * PI) * e * s];
        let u = self.velocity(x);
        let g = self.gradient(x);
        let conv = [u[0] * g[0][0] + u[1] * g[0][1], u[0] * g[1][0] + u[1] * g[1][1]];
        let gp = [-l * (2.0 * l * x[0]).exp(), 0.0];
        [-self.nu * lap[0] + conv[0] + gp[0], -self.nu * lap[1] + conv[1] + gp[1]]
    }
}

/// Divergence-free velocity in P^{k+1} from a stream function, pressure in P^k.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolynomialStokes {
    pub k: usize,
    pub nu: f64,
}

impl PolynomialStokes {
    fn pw(v: f64, e: i64) -> f64 {
        if e < 0 {
            0.0
        } else {
            v.powi(e as i32)
        }
    }
}

impl ExactFlow for PolynomialStokes {
    fn velocity(&self, x: Point) -> [f64; 2] {
        let m = self.k as i64 + 1;
        let (a, b, s) = (x[0] - 0.3, x[1] + 0.2, x[0] + x[1]);
        [Self::pw(b, m) + 0.5 * Self::pw(s, m), -Self::pw(a, m) - 0.5 * Self::pw(s, m)]
    }

    fn gradient(&self, x: Point) -> [[f64; 2]; 2] {
        let m = self.k as i64 + 1;
        let mf = m as f64;
        let (a, b, s) = (x[0] - 0.3, x[1] + 0.2, x[0] + x[1]);
        let ds = 0.5 * mf * Self::pw(s, m - 1);
        [[ds, mf * Self::pw(b, m - 1) + ds], [-mf * Self::pw(a, m - 1) - ds, -ds]]
    }

    fn pressure(&self, x: Point) -> f64 {
        Self::pw(x[0] + 0.5 * x[1] + 0.1, self.k as i64)
    }

    fn forcing(&self, x: Point) -> [f64; 2] {
        let k = self.k as i64;
        let c = ((k + 1) * k) as f64;
        let (a, b, s) = (x[0] - 0.3, x[1] + 0.2, x[0] + x[1]);
        let lap = [c * (Self::pw(b, k - 1) + Self::pw(s, k - 1)), -c * (Self::pw(a, k - 1) + Self::pw(s, k - 1))];
        let dp = k as f64 * Self::pw(x[0] + 0.5 * x[1] + 0.1, k - 1);
        [-self.nu * lap[0] + dp, -self.nu * lap[1] + 0.5 * dp]
    }
}

/// Errors of a discrete solution against the interpolate of the exact one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteErrors {
    /// `(nu a_h(e, e))^{1/2}` with `e = u_h - I_h u`.
    pub energy: f64,
    /// L2 norm of the element part of `e`.
    pub l2_velocity: f64,
    /// L2 norm of `p_h - pi^k p`, both with zero mean.
    pub l2_pressure: f64,
}

/// Interpolate of the exact velocity with boundary faces set to the problem datum.
pub fn velocity_interpolate(problem: &Problem, exact: &dyn ExactFlow) -> HhoVector {
    problem.space.interpolate(|x| exact.velocity(x))
}

/// Zero-mean projection of the exact pressure (mean-split coefficients).
pub fn pressure_projection(space: &HhoSpace, exact: &dyn ExactFlow) -> Vec<f64> {
    let mut p = space.project_pressure(|x| exact.pressure(x));
    recenter(space, &mut p);
    p
}

/// Shifts element means so the discrete pressure has zero integral.
pub fn recenter(space: &HhoSpace, p: &mut [f64]) {
    let area: f64 = space.mesh.elements.iter().map(|e| e.measure).sum();
    let mean = space.pressure_integral(p) / area;
    let nk = dim_p(space.k);
    for t in 0..space.mesh.num_elements() {
        p[t * nk] -= mean;
    }
}

pub fn energy_error(problem: &Problem, u: &HhoVector, reference: &HhoVector) -> f64 {
    let e = u.sub(reference);
    let p = &problem.params;
    (p.nu * viscous_form(&problem.space, p.bc, p.eta, &e, &e)).max(0.0).sqrt()
}

/// Broken L2 norm of the element velocities.
pub fn element_l2_norm(space: &HhoSpace, u: &HhoVector) -> f64 {
    let nk = dim_p(space.k);
    let s: f64 = (0..space.mesh.num_elements())
        .map(|t| {
            let m = space.local(t).ops.mass.view((0, 0), (nk, nk));
            let b = u.elem_block(t);
            (0..2)
                .map(|c| {
                    let v = DVector::from_column_slice(&b[c * nk..(c + 1) * nk]);
                    v.dot(&(m * &v))
                })
                .sum::<f64>()
        })
        .sum();
    s.max(0.0).sqrt()
}

/// L2 norm of a mean-split pressure field.
pub fn pressure_l2_norm(space: &HhoSpace, p: &[f64]) -> f64 {
    let nk = dim_p(space.k);
    let s: f64 = (0..space.mesh.num_elements())
        .map(|t| {
            let c = DVector::from_vec(space.pressure_to_phi(t, &p[t * nk..(t + 1) * nk]));
            let m = space.local(t).ops.mass.view((0, 0), (nk, nk));
            c.dot(&(m * &c))
        })
        .sum();
    s.max(0.0).sqrt()
}

pub fn discrete_errors(problem: &Problem, state: &State, exact: &dyn ExactFlow) -> DiscreteErrors {
    let space = &problem.space;
    let iu = velocity_interpolate(problem, exact);
    let e = state.u.sub(&iu);
    let mut ph = state.u.pressure.clone();
    recenter(space, &mut ph);
    let pp = pressure_projection(space, exact);
    let ep: Vec<f64> = ph.iter().zip(&pp).map(|(a, b)| a - b).collect();
    DiscreteErrors {
        energy: energy_error(problem, &state.u, &iu),
        l2_velocity: element_l2_norm(space, &e),
        l2_pressure: pressure_l2_norm(space, &ep),
    }
}

/// Broken L2 distance between the element velocities and the exact field.
pub fn error_l2_velocity(space: &HhoSpace, u: &HhoVector, exact: &dyn Fn(Point) -> [f64; 2]) -> f64 {
    let nk = dim_p(space.k);
    (0..space.mesh.num_elements())
        .map(|t| {
            let le = space.local(t);
            let c = space.centroid(t);
            let b = u.elem_block(t);
            (0..le.quad_high.len())
                .map(|q| {
                    let x = le.quad_high.points[q];
                    let ex = exact([x[0] + c[0], x[1] + c[1]]);
                    let mut d = 0.0;
                    for comp in 0..2 {
                        let v: f64 = (0..nk).map(|a| le.phi_high[(q, a)] * b[comp * nk + a]).sum();
                        d += (v - ex[comp]).powi(2);
                    }
                    le.quad_high.weights[q] * d
                })
                .sum::<f64>()
        })
        .sum::<f64>()
        .sqrt()
}

/// L2 distance between the discrete and exact pressures after shifting both to zero mean.
pub fn error_l2_pressure(space: &HhoSpace, p: &[f64], exact: &dyn Fn(Point) -> f64) -> f64 {
    let nk = dim_p(space.k);
    let mut ph = p.to_vec();
    recenter(space, &mut ph);
    let mut integral = 0.0;
    let mut area = 0.0;
    for t in 0..space.mesh.num_elements() {
        let le = space.local(t);
        let c = space.centroid(t);
        for q in 0..le.quad_high.len() {
            let x = le.quad_high.points[q];
            integral += le.quad_high.weights[q] * exact([x[0] + c[0], x[1] + c[1]]);
        }
        area += le.measure;
    }
    let mean = integral / area;
    (0..space.mesh.num_elements())
        .map(|t| {
            let le = space.local(t);
            let c = space.centroid(t);
            let coef = space.pressure_to_phi(t, &ph[t * nk..(t + 1) * nk]);
            (0..le.quad_high.len())
                .map(|q| {
                    let x = le.quad_high.points[q];
                    let v: f64 = (0..nk).map(|a| le.phi_high[(q, a)] * coef[a]).sum();
                    le.quad_high.weights[q] * (v - exact([x[0] + c[0], x[1] + c[1]]) + mean).powi(2)
                })
                .sum::<f64>()
        })
        .sum::<f64>()
        .sqrt()
}

/// Convergence rates between consecutive levels; `None` where an error is not positive.
pub fn eoc(errors: &[f64], h: &[f64]) -> Vec<Option<f64>> {
    assert_eq!(errors.len(), h.len());
    errors
        .windows(2)
        .zip(h.windows(2))
        .map(|(e, h)| {
            assert!(h[1] < h[0], "mesh sizes must decrease");
            if e[0] > 0.0 && e[1] > 0.0 {
                Some((e[0].ln() - e[1].ln()) / (h[0].ln() - h[1].ln()))
            } else {
                None
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelRecord {
    pub h: f64,
    pub n_dof: usize,
    pub nnz: usize,
    pub energy: f64,
    pub l2_velocity: f64,
    pub l2_pressure: f64,
    pub assembly_seconds: f64,
    pub solve_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceRecord {
    pub levels: Vec<LevelRecord>,
}

impl ConvergenceRecord {
    fn rates(&self, f: impl Fn(&LevelRecord) -> f64) -> Vec<Option<f64>> {
        let e: Vec<f64> = self.levels.iter().map(&f).collect();
        let h: Vec<f64> = self.levels.iter().map(|l| l.h).collect();
        let mut out = vec![None];
        if !e.is_empty() {
            out.extend(eoc(&e, &h));
        } else {
            out.clear();
        }
        out
    }

    /// Per-level (energy, L2 velocity, L2 pressure) rates; the first level has none.
    pub fn eoc(&self) -> Vec<[Option<f64>; 3]> {
        let a = self.rates(|l| l.energy);
        let b = self.rates(|l| l.l2_velocity);
        let c = self.rates(|l| l.l2_pressure);
        (0..a.len()).map(|i| [a[i], b[i], c[i]]).collect()
    }
}

/// Element balances and interface flux jumps of a converged strong-mode solution.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxAudit {
    /// Per element: momentum balance residual relative to the magnitude of its terms.
    pub momentum_balance: Vec<f64>,
    /// Per element: largest mass balance residual over the degree-k test functions.
    pub mass_balance: Vec<f64>,
    /// Per interior face: L2 norm of the sum of the two one-sided momentum fluxes.
    pub flux_jump: Vec<f64>,
}

impl FluxAudit {
    pub fn max_momentum(&self) -> f64 {
        self.momentum_balance.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_mass(&self) -> f64 {
        self.mass_balance.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_jump(&self) -> f64 {
        self.flux_jump.iter().copied().fold(0.0, f64::max)
    }
}

struct ElementFluxes {
    /// Per local face, per component: face-basis coefficients of the total flux.
    total: Vec<[DVector<f64>; 2]>,
    momentum: f64,
    mass: f64,
}

fn element_fluxes(problem: &Problem, state: &State, t: usize) -> ElementFluxes {
    let space = &problem.space;
    let params = &problem.params;
    let mesh = &space.mesh;
    let le = space.local(t);
    let layout = le.layout();
    let (k, nk, nf) = (space.k, layout.n_elem(), layout.n_face());
    let nk1 = dim_p(k + 1);
    let nu = params.nu;
    let ul = space.gather(&state.u, t);
    let uc: [Vec<f64>; 2] = [layout.component(&ul, 0), layout.component(&ul, 1)];
    let pc = space.pressure_to_phi(t, state.u.pressure_block(t));
    let ids = &mesh.elements[t].face_ids;
    let w = &le.quad.weights;
    let nq = le.quad.len();

    // element fields
    let ut: Vec<Vec<f64>> = (0..2).map(|c| le.eval_elem(&ul[c * nk..(c + 1) * nk])).collect();
    let pt = le.eval_elem(&pc);
    let d2k = divergence_reconstruction(le, 2 * k) * DVector::from_column_slice(&ul);
    let n2k = dim_p(2 * k);
    let div: Vec<f64> = (0..nq).map(|q| (0..n2k).map(|a| d2k[a] * le.phi[(q, a)]).sum()).collect();

    // terms[c][a]: list of contributions for test function phi_a e_c
    let mut res = DMatrix::<f64>::zeros(nk, 2);
    let mut mag = DMatrix::<f64>::zeros(nk, 2);
    let mut add = |c: usize, a: usize, v: f64, res: &mut DMatrix<f64>| {
        res[(a, c)] += v;
        mag[(a, c)] += v.abs();
    };
    for c in 0..2 {
        let rc = &le.ops.recon * DVector::from_column_slice(&uc[c]);
        let mut grad_r = [vec![0.0; nq], vec![0.0; nq]];
        for q in 0..nq {
            for m in 0..nk1 {
                grad_r[0][q] += le.dphi[0][(q, m)] * rc[m];
                grad_r[1][q] += le.dphi[1][(q, m)] * rc[m];
            }
        }
        for a in 0..nk {
            let (mut visc, mut conv, mut temam, mut pres) = (0.0, 0.0, 0.0, 0.0);
            for q in 0..nq {
                let (dx, dy) = (le.dphi[0][(q, a)], le.dphi[1][(q, a)]);
                visc += w[q] * (grad_r[0][q] * dx + grad_r[1][q] * dy);
                conv += w[q] * ut[c][q] * (ut[0][q] * dx + ut[1][q] * dy);
                temam += w[q] * div[q] * ut[c][q] * le.phi[(q, a)];
                pres += w[q] * pt[q] * if c == 0 { dx } else { dy };
            }
            add(c, a, nu * visc, &mut res);
            if params.convection {
                add(c, a, -conv, &mut res);
                add(c, a, -0.5 * temam, &mut res);
            }
            add(c, a, -pres, &mut res);
            add(c, a, -problem.forcing[t * 2 * nk + c * nk + a], &mut res);
        }
    }

    let mut total = Vec::with_capacity(ids.len());
    let mut mass_res = vec![0.0; nk];
    let mut mass_mag = vec![0.0; nk];
    for (i, &fid) in ids.iter().enumerate() {
        let f = &le.faces[i];
        let fw = f.weights();
        let fq = f.quad.len();
        let mf = le.ops.face_mass[i].clone().cholesky().expect("face mass matrix is SPD");
        let off = layout.face_offset(i);
        let so = layout.scalar_face_offset(i);
        let uf: Vec<Vec<f64>> = (0..2).map(|c| le.eval_face(i, &ul[off + c * nf..off + (c + 1) * nf])).collect();
        let utr: Vec<Vec<f64>> = (0..2).map(|c| le.eval_trace(i, &ul[c * nk..(c + 1) * nk])).collect();
        let ptr = le.eval_trace(i, &pc);
        let wn: Vec<f64> = (0..fq).map(|q| uf[0][q] * f.normal[0] + uf[1][q] * f.normal[1]).collect();
        let stab_on = params.convection
            && params.rho != RhoKind::Centered
            && (params.boundary_stab || !mesh.faces[fid].is_boundary());
        let mut flux: [DVector<f64>; 2] = [DVector::zeros(nf), DVector::zeros(nf)];
        for c in 0..2 {
            let ucv = DVector::from_column_slice(&uc[c]);
            let gn = &le.ops.normal_grad[i] * &ucv;
            let s_rows = le.ops.stab.rows(so, nf) * &ucv;
            let mut mom = DVector::zeros(nf);
            for q in 0..fq {
                let mut v = -nu * gn[q] + ptr[q] * f.normal[c];
                if params.convection {
                    v += 0.5 * wn[q] * (uf[c][q] + utr[c][q]);
                }
                if stab_on {
                    let kappa = nu / f.diameter * params.rho.rho(peclet(f.diameter, wn[q], nu));
                    v -= kappa * (uf[c][q] - utr[c][q]);
                }
                for b in 0..nf {
                    mom[b] += fw[q] * v * f.chi[(q, b)];
                }
            }
            // the boundary residual term enters as -nu * M_F^{-1} S_F u
            flux[c] = mf.solve(&(mom - s_rows * nu));
            let vals: Vec<f64> = (0..fq).map(|q| (0..nf).map(|b| f.chi[(q, b)] * flux[c][b]).sum()).collect();
            for a in 0..nk {
                let s: f64 = (0..fq).map(|q| fw[q] * vals[q] * f.phi[(q, a)]).sum();
                add(c, a, s, &mut res);
            }
        }
        for a in 0..nk {
            let s: f64 = (0..fq).map(|q| fw[q] * wn[q] * f.phi[(q, a)]).sum();
            mass_res[a] -= s;
            mass_mag[a] += s.abs();
        }
        total.push(flux);
    }
    for a in 0..nk {
        let s: f64 = (0..nq).map(|q| w[q] * (ut[0][q] * le.dphi[0][(q, a)] + ut[1][q] * le.dphi[1][(q, a)])).sum();
        mass_res[a] += s;
    }
    let scale = mag.amax().max(f64::MIN_POSITIVE);
    ElementFluxes {
        total,
        momentum: res.amax() / scale,
        mass: mass_res.iter().fold(0.0f64, |m, v| m.max(v.abs())),
    }
}

/// Conservation audit of a converged strong-mode solution.
pub fn flux_audit(problem: &Problem, state: &State) -> FluxAudit {
    let space = &problem.space;
    let mesh = &space.mesh;
    let per: Vec<ElementFluxes> =
        (0..mesh.num_elements()).into_par_iter().map(|t| element_fluxes(problem, state, t)).collect();
    let mut flux_jump = Vec::new();
    for (fid, face) in mesh.faces.iter().enumerate() {
        let (t1, Some(t2)) = face.elements else { continue };
        let i1 = mesh.elements[t1].face_ids.iter().position(|&g| g == fid).unwrap();
        let i2 = mesh.elements[t2].face_ids.iter().position(|&g| g == fid).unwrap();
        let m = &space.local(t1).ops.face_mass[i1];
        let mut s = 0.0;
        for c in 0..2 {
            let d = &per[t1].total[i1][c] + &per[t2].total[i2][c];
            s += d.dot(&(m * &d));
        }
        flux_jump.push(s.max(0.0).sqrt());
    }
    FluxAudit {
        momentum_balance: per.iter().map(|p| p.momentum).collect(),
        mass_balance: per.iter().map(|p| p.mass).collect(),
        flux_jump,
    }
}

/// Random coefficient vector with entries uniform in [-1, 1].
pub fn random_vector(space: &HhoSpace, rng: &mut impl Rng) -> HhoVector {
    let mut v = space.zero_vector();
    for x in v.elem.iter_mut().chain(v.face.iter_mut()).chain(v.pressure.iter_mut()) {
        *x = rng.random_range(-1.0..1.0);
    }
    v
}

/// Both sides of the discrete integration by parts formula and the sum of
/// the magnitudes of their terms.
pub fn ibp_sides(space: &HhoSpace, w: &HhoVector, v: &HhoVector, z: &HhoVector) -> (f64, f64, f64) {
    let mesh = &space.mesh;
    let k = space.k;
    let nk = dim_p(k);
    let n2k = dim_p(2 * k);
    let (mut lhs, mut rhs, mut mag) = (0.0, 0.0, 0.0);
    for t in 0..mesh.num_elements() {
        let le = space.local(t);
        let layout = le.layout();
        let nf = layout.n_face();
        let (wl, vl, zl) = (space.gather(w, t), space.gather(v, t), space.gather(z, t));
        let gw = directional_derivative(le, &wl);
        let gv = &gw * DVector::from_column_slice(&vl);
        let gz = &gw * DVector::from_column_slice(&zl);
        let d2k = divergence_reconstruction(le, 2 * k) * DVector::from_column_slice(&wl);
        let m = le.ops.mass.view((0, 0), (nk, nk));
        for c in 0..2 {
            let vt = DVector::from_column_slice(&vl[c * nk..(c + 1) * nk]);
            let zt = DVector::from_column_slice(&zl[c * nk..(c + 1) * nk]);
            let a = gv.rows(c * nk, nk).dot(&(m * &zt));
            let b = gz.rows(c * nk, nk).dot(&(m * &vt));
            let mut d = 0.0;
            for q in 0..le.quad.len() {
                let div: f64 = (0..n2k).map(|x| d2k[x] * le.phi[(q, x)]).sum();
                let vq: f64 = (0..nk).map(|x| vt[x] * le.phi[(q, x)]).sum();
                let zq: f64 = (0..nk).map(|x| zt[x] * le.phi[(q, x)]).sum();
                d += le.quad.weights[q] * div * vq * zq;
            }
            lhs += a + b + d;
            mag += a.abs() + b.abs() + d.abs();
        }
        for (i, &fid) in mesh.elements[t].face_ids.iter().enumerate() {
            let f = &le.faces[i];
            let off = layout.face_offset(i);
            let wx = le.eval_face(i, &wl[off..off + nf]);
            let wy = le.eval_face(i, &wl[off + nf..off + 2 * nf]);
            let boundary = mesh.faces[fid].is_boundary();
            for c in 0..2 {
                let vf = le.eval_face(i, &vl[off + c * nf..off + (c + 1) * nf]);
                let zf = le.eval_face(i, &zl[off + c * nf..off + (c + 1) * nf]);
                let vt = le.eval_trace(i, &vl[c * nk..(c + 1) * nk]);
                let zt = le.eval_trace(i, &zl[c * nk..(c + 1) * nk]);
                let (mut jump, mut bnd) = (0.0, 0.0);
                for q in 0..f.quad.len() {
                    let wn = wx[q] * f.normal[0] + wy[q] * f.normal[1];
                    jump += f.quad.weights[q] * wn * (vf[q] - vt[q]) * (zf[q] - zt[q]);
                    if boundary {
                        bnd += f.quad.weights[q] * wn * vf[q] * zf[q];
                    }
                }
                rhs += -jump + bnd;
                mag += jump.abs() + bnd.abs();
            }
        }
    }
    (lhs, rhs, mag)
}

/// Largest relative violation of the discrete integration by parts formula
/// over random triples.
pub fn ibp_audit(space: &HhoSpace, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let w = random_vector(space, &mut rng);
        let v = random_vector(space, &mut rng);
        let z = random_vector(space, &mut rng);
        let (l, r, m) = ibp_sides(space, &w, &v, &z);
        if m > 0.0 {
            worst = worst.max((l - r).abs() / m);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kovasznay_lambda() {
        let s = Kovasznay::new(40.0);
        assert!((s.lambda - (20.0 - (400.0 + 4.0 * PI * PI).sqrt())).abs() < 1e-15);
        assert!((s.lambda + 0.963740).abs() < 1e-6);
    }

    #[test]
    fn kovasznay_inflow_profile() {
        let s = Kovasznay::new(40.0);
        for i in 0..10 {
            let y = 0.2 * i as f64;
            assert!((s.velocity([0.0, y])[0] - (1.0 - (2.0 * PI * y).cos())).abs() < 1e-15);
        }
    }

    #[test]
    fn kovasznay_is_divergence_free_and_unforced() {
        let s = Kovasznay::new(40.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x = [rng.random_range(-0.5..1.5), rng.random_range(0.0..2.0)];
            assert!(s.divergence(x).abs() < 1e-12);
            let f = s.forcing(x);
            assert!(f[0].abs() < 1e-12 && f[1].abs() < 1e-12);
        }
    }

    #[test]
    fn kovasznay_gradient_matches_differences() {
        let s = Kovasznay::new(40.0);
        let x = [0.3, 0.7];
        let h = 1e-6;
        let g = s.gradient(x);
        for j in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            for c in 0..2 {
                let fd = (s.velocity(xp)[c] - s.velocity(xm)[c]) / (2.0 * h);
                assert!((fd - g[c][j]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn polynomial_stokes_is_consistent() {
        for k in 0..4 {
            let s = PolynomialStokes { k, nu: 0.7 };
            let x = [0.31, 0.47];
            let g = s.gradient(x);
            assert!((g[0][0] + g[1][1]).abs() < 1e-14);
            let h = 1e-5;
            for j in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[j] += h;
                xm[j] -= h;
                for c in 0..2 {
                    let fd = (s.velocity(xp)[c] - s.velocity(xm)[c]) / (2.0 * h);
                    assert!((fd - g[c][j]).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn eoc_examples() {
        assert_eq!(eoc(&[1.0, 0.25], &[1.0, 0.5]), vec![Some(2.0)]);
        assert_eq!(eoc(&[1.0, 1.0], &[1.0, 0.3]), vec![Some(0.0)]);
        assert_eq!(eoc(&[1.0, 0.0], &[1.0, 0.5]), vec![None]);
        let r = eoc(&[2.28e-6, 1.63e-7], &[1.0, 0.5])[0].unwrap();
        assert!((r - 3.81).abs() < 0.005);
    }
}
