//! Viscous, pressure, convective and convective-stabilisation forms: local
//! matrices, the element residual/Jacobian kernel and global evaluators.

use nalgebra::{DMatrix, DVector};

use crate::hho_local::{LocalDofLayout, LocalElement};
use crate::polybasis::dim_p;
use crate::space::{HhoSpace, HhoVector};

/// Penalty profile of the convective stabilisation, as a function of the
/// oriented local Peclet number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RhoKind {
    Centered,
    Upwind,
    /// Centered for |s| <= `lower`, upwind for |s| >= `upper`, C1 quintic blend between.
    ThetaScheme { lower: f64, upper: f64 },
    ScharfetterGummel,
}

impl RhoKind {
    pub fn theta() -> Self {
        RhoKind::ThetaScheme { lower: 0.5, upper: 1.0 }
    }

    pub fn rho(&self, s: f64) -> f64 {
        match *self {
            RhoKind::Centered => 0.0,
            RhoKind::Upwind => 0.5 * s.abs(),
            RhoKind::ThetaScheme { lower, upper } => (1.0 - theta_profile(s.abs(), lower, upper).0) * 0.5 * s.abs(),
            RhoKind::ScharfetterGummel => {
                if s.abs() < 1e-4 {
                    s * s / 12.0
                } else {
                    let h = 0.5 * s;
                    h / h.tanh() - 1.0
                }
            }
        }
    }

    /// Derivative of `rho`; zero at the upwind kink.
    pub fn drho(&self, s: f64) -> f64 {
        match *self {
            RhoKind::Centered => 0.0,
            RhoKind::Upwind => {
                if s == 0.0 {
                    0.0
                } else {
                    0.5 * s.signum()
                }
            }
            RhoKind::ThetaScheme { lower, upper } => {
                let a = s.abs();
                let (th, dth) = theta_profile(a, lower, upper);
                let da = (1.0 - th) * 0.5 - dth * 0.5 * a;
                if s == 0.0 {
                    0.0
                } else {
                    da * s.signum()
                }
            }
            RhoKind::ScharfetterGummel => {
                if s.abs() < 1e-4 {
                    s / 6.0
                } else {
                    // d/ds [h coth h - 1] with h = s/2
                    let h = 0.5 * s;
                    let sh = h.sinh();
                    0.5 * (1.0 / h.tanh() - h / (sh * sh))
                }
            }
        }
    }

    pub fn is_smooth(&self) -> bool {
        !matches!(self, RhoKind::Upwind)
    }
}

/// Blend weight theta(a) (1 on the centered plateau, 0 on the upwind range) and its derivative.
fn theta_profile(a: f64, lower: f64, upper: f64) -> (f64, f64) {
    if a <= lower {
        (1.0, 0.0)
    } else if a >= upper {
        (0.0, 0.0)
    } else {
        let w = upper - lower;
        let x = (a - lower) / w;
        // quintic with zero first and second derivatives at both ends
        let s = x * x * x * (10.0 - 15.0 * x + 6.0 * x * x);
        let ds = 30.0 * x * x * (1.0 - x) * (1.0 - x) / w;
        (1.0 - s, -ds)
    }
}

/// Oriented local Peclet number h_F (w . n) / nu.
pub fn peclet(h_f: f64, w_dot_n: f64, nu: f64) -> f64 {
    assert!(nu > 0.0, "viscosity must be positive");
    h_f * w_dot_n / nu
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcMode {
    Strong,
    WeakSkew,
    WeakSymmetric,
    WeakIncomplete,
}

impl BcMode {
    pub fn is_weak(&self) -> bool {
        !matches!(self, BcMode::Strong)
    }

    /// Sign of the Nitsche adjoint term.
    pub fn sigma(&self) -> f64 {
        match self {
            BcMode::Strong | BcMode::WeakSkew => 1.0,
            BcMode::WeakSymmetric => -1.0,
            BcMode::WeakIncomplete => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams {
    pub nu: f64,
    /// Disable for Stokes.
    pub convection: bool,
    pub rho: RhoKind,
    pub bc: BcMode,
    pub eta: f64,
    /// Convective stabilisation on boundary faces.
    pub boundary_stab: bool,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams { nu: 1.0, convection: true, rho: RhoKind::Upwind, bc: BcMode::Strong, eta: 1.0, boundary_stab: true }
    }
}

/// Values of the local state at quadrature points.
struct LocalFields {
    /// u_T components at element points.
    ut: [Vec<f64>; 2],
    /// grad u_T components: `gut[c][e][q]` = d u_c / d x_e.
    gut: [[Vec<f64>; 2]; 2],
    /// per face: (u_F components, u_T traces, u_F . n) at face points.
    faces: Vec<([Vec<f64>; 2], [Vec<f64>; 2], Vec<f64>)>,
}

fn local_fields(le: &LocalElement, u: &[f64], with_grad: bool) -> LocalFields {
    let layout = le.layout();
    let (nk, nf) = (layout.n_elem(), layout.n_face());
    let nq = le.quad.len();
    let mut ut = [vec![0.0; nq], vec![0.0; nq]];
    let mut gut = [[vec![0.0; nq], vec![0.0; nq]], [vec![0.0; nq], vec![0.0; nq]]];
    for c in 0..2 {
        let coef = &u[c * nk..(c + 1) * nk];
        for q in 0..nq {
            let (mut v, mut gx, mut gy) = (0.0, 0.0, 0.0);
            for a in 0..nk {
                v += le.phi[(q, a)] * coef[a];
                if with_grad {
                    gx += le.dphi[0][(q, a)] * coef[a];
                    gy += le.dphi[1][(q, a)] * coef[a];
                }
            }
            ut[c][q] = v;
            gut[c][0][q] = gx;
            gut[c][1][q] = gy;
        }
    }
    let faces = le
        .faces
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let off = layout.face_offset(i);
            let uf = [le.eval_face(i, &u[off..off + nf]), le.eval_face(i, &u[off + nf..off + 2 * nf])];
            let tr = [le.eval_trace(i, &u[..nk]), le.eval_trace(i, &u[nk..2 * nk])];
            let wn = (0..f.quad.len()).map(|q| uf[0][q] * f.normal[0] + uf[1][q] * f.normal[1]).collect();
            (uf, tr, wn)
        })
        .collect();
    LocalFields { ut, gut, faces }
}

/// Scalar matrix C with t_T(w, v, z) = sum_c z_c^T C v_c (reformulated
/// Temam form, boundary face terms included).
pub fn convection_matrix(le: &LocalElement, w: &[f64]) -> DMatrix<f64> {
    let fields = local_fields(le, w, false);
    convection_matrix_from(le, &fields)
}

fn convection_matrix_from(le: &LocalElement, fields: &LocalFields) -> DMatrix<f64> {
    let layout = le.layout();
    let (nk, nf, ns) = (layout.n_elem(), layout.n_face(), layout.scalar_size());
    let mut c = DMatrix::zeros(ns, ns);
    // adv[q][a] = w_T . grad phi_a
    let nq = le.quad.len();
    let mut adv = vec![0.0; nk];
    for q in 0..nq {
        let wq = 0.5 * le.quad.weights[q];
        for (a, ad) in adv.iter_mut().enumerate() {
            *ad = fields.ut[0][q] * le.dphi[0][(q, a)] + fields.ut[1][q] * le.dphi[1][(q, a)];
        }
        for b in 0..nk {
            let pb = le.phi[(q, b)];
            for a in 0..nk {
                c[(a, b)] += wq * (le.phi[(q, a)] * adv[b] - pb * adv[a]);
            }
        }
    }
    for (i, f) in le.faces.iter().enumerate() {
        let so = layout.scalar_face_offset(i);
        let wn = &fields.faces[i].2;
        for q in 0..f.quad.len() {
            let s = 0.5 * f.quad.weights[q] * wn[q];
            for a in 0..nk {
                let pa = s * f.phi[(q, a)];
                for b in 0..nf {
                    let v = pa * f.chi[(q, b)];
                    c[(a, so + b)] += v;
                    c[(so + b, a)] -= v;
                }
            }
        }
    }
    c
}

/// Vector-layout matrix D with t_T(delta, v, .) = D delta (derivative of the
/// convective residual with respect to the advecting field).
pub fn convection_w_derivative(le: &LocalElement, v: &[f64]) -> DMatrix<f64> {
    let fields = local_fields(le, v, true);
    convection_w_derivative_from(le, &fields)
}

fn convection_w_derivative_from(le: &LocalElement, fields: &LocalFields) -> DMatrix<f64> {
    let layout = le.layout();
    let (nk, nf) = (layout.n_elem(), layout.n_face());
    let n = layout.size();
    let mut d = DMatrix::zeros(n, n);
    for q in 0..le.quad.len() {
        let wq = 0.5 * le.quad.weights[q];
        for c in 0..2 {
            let vc = fields.ut[c][q];
            for e in 0..2 {
                let dv = fields.gut[c][e][q];
                for a in 0..nk {
                    let row = c * nk + a;
                    let coef = wq * (dv * le.phi[(q, a)] - vc * le.dphi[e][(q, a)]);
                    for b in 0..nk {
                        d[(row, e * nk + b)] += coef * le.phi[(q, b)];
                    }
                }
            }
        }
    }
    for (i, f) in le.faces.iter().enumerate() {
        let off = layout.face_offset(i);
        let (vf, vt, _) = &fields.faces[i];
        for q in 0..f.quad.len() {
            let wq = 0.5 * f.quad.weights[q];
            for c in 0..2 {
                for e in 0..2 {
                    let ne = f.normal[e];
                    let ce = wq * ne * vf[c][q];
                    let fe = wq * ne * vt[c][q];
                    for b in 0..nf {
                        let col = off + e * nf + b;
                        let xb = f.chi[(q, b)];
                        for a in 0..nk {
                            d[(c * nk + a, col)] += ce * xb * f.phi[(q, a)];
                        }
                        for a in 0..nf {
                            d[(off + c * nf + a, col)] -= fe * xb * f.chi[(q, a)];
                        }
                    }
                }
            }
        }
    }
    d
}

/// Scalar matrix E with j_T(w; v, z) = sum_c z_c^T E v_c over the faces where
/// `mask` is true.
pub fn jump_penalty_matrix(le: &LocalElement, w: &[f64], rho: RhoKind, nu: f64, mask: &[bool]) -> DMatrix<f64> {
    let fields = local_fields(le, w, false);
    jump_penalty_from(le, &fields, rho, nu, mask)
}

fn jump_penalty_from(le: &LocalElement, fields: &LocalFields, rho: RhoKind, nu: f64, mask: &[bool]) -> DMatrix<f64> {
    let layout = le.layout();
    let (nk, nf, ns) = (layout.n_elem(), layout.n_face(), layout.scalar_size());
    let mut e = DMatrix::zeros(ns, ns);
    let mut jmp = vec![0.0; nk + nf];
    for (i, f) in le.faces.iter().enumerate() {
        if !mask[i] {
            continue;
        }
        let so = layout.scalar_face_offset(i);
        let wn = &fields.faces[i].2;
        for q in 0..f.quad.len() {
            let kappa = nu / f.diameter * rho.rho(peclet(f.diameter, wn[q], nu));
            if kappa == 0.0 {
                continue;
            }
            let s = f.quad.weights[q] * kappa;
            for a in 0..nk {
                jmp[a] = -f.phi[(q, a)];
            }
            for b in 0..nf {
                jmp[nk + b] = f.chi[(q, b)];
            }
            for (x, &jx) in jmp.iter().enumerate() {
                let rx = if x < nk { x } else { so + x - nk };
                let sx = s * jx;
                for (y, &jy) in jmp.iter().enumerate() {
                    let ry = if y < nk { y } else { so + y - nk };
                    e[(rx, ry)] += sx * jy;
                }
            }
        }
    }
    e
}

/// Vector-layout derivative of j_T(w; v, .) with respect to w (only w_F enters).
pub fn jump_penalty_w_derivative(le: &LocalElement, w: &[f64], v: &[f64], rho: RhoKind, nu: f64, mask: &[bool]) -> DMatrix<f64> {
    let fw = local_fields(le, w, false);
    let fv = local_fields(le, v, false);
    jump_penalty_w_derivative_from(le, &fw, &fv, rho, nu, mask)
}

fn jump_penalty_w_derivative_from(
    le: &LocalElement,
    fw: &LocalFields,
    fv: &LocalFields,
    rho: RhoKind,
    nu: f64,
    mask: &[bool],
) -> DMatrix<f64> {
    let layout = le.layout();
    let (nk, nf) = (layout.n_elem(), layout.n_face());
    let n = layout.size();
    let mut d = DMatrix::zeros(n, n);
    for (i, f) in le.faces.iter().enumerate() {
        if !mask[i] {
            continue;
        }
        let off = layout.face_offset(i);
        let wn = &fw.faces[i].2;
        let (vf, vt, _) = &fv.faces[i];
        for q in 0..f.quad.len() {
            let dr = rho.drho(peclet(f.diameter, wn[q], nu));
            if dr == 0.0 {
                continue;
            }
            for c in 0..2 {
                let jump = vf[c][q] - vt[c][q];
                for e in 0..2 {
                    let s = f.quad.weights[q] * dr * f.normal[e] * jump;
                    for b in 0..nf {
                        let col = off + e * nf + b;
                        let sb = s * f.chi[(q, b)];
                        for a in 0..nk {
                            d[(c * nk + a, col)] -= sb * f.phi[(q, a)];
                        }
                        for a in 0..nf {
                            d[(off + c * nf + a, col)] += sb * f.chi[(q, a)];
                        }
                    }
                }
            }
        }
    }
    d
}

/// Pressure coupling B (`N_k x size`) in the mean-split pressure basis:
/// `q^T B v = -int_T D_k v q`, with face columns of boundary faces dropped
/// when `drop` is set for them.
pub fn pressure_coupling_matrix(space: &HhoSpace, t: usize, drop: &[bool]) -> DMatrix<f64> {
    let le = space.local(t);
    let layout = le.layout();
    let (nk, nf) = (layout.n_elem(), layout.n_face());
    let avg = space.basis_averages(t);
    let mut b = DMatrix::zeros(nk, layout.size());
    // -int D v psi_a = int v_T . grad phi_a - sum_F int (v_F . n) psi_a
    for q in 0..le.quad.len() {
        let wq = le.quad.weights[q];
        for a in 1..nk {
            for c in 0..2 {
                let g = wq * le.dphi[c][(q, a)];
                for bb in 0..nk {
                    b[(a, c * nk + bb)] += g * le.phi[(q, bb)];
                }
            }
        }
    }
    for (i, f) in le.faces.iter().enumerate() {
        if drop[i] {
            continue;
        }
        let off = layout.face_offset(i);
        for q in 0..f.quad.len() {
            let wq = f.quad.weights[q];
            for a in 0..nk {
                let psi = if a == 0 { 1.0 } else { f.phi[(q, a)] - avg[a] };
                for c in 0..2 {
                    let s = wq * psi * f.normal[c];
                    for bb in 0..nf {
                        b[(a, off + c * nf + bb)] -= s * f.chi[(q, bb)];
                    }
                }
            }
        }
    }
    b
}

/// Boundary information for one local face.
#[derive(Debug, Clone, Copy)]
pub struct FaceBoundary<'a> {
    pub is_boundary: bool,
    /// Face coefficients of the Dirichlet datum (vector, component-major).
    pub datum: &'a [f64],
}

/// Element residual and Jacobian over `[u (local vector layout), p (mean-split)]`.
#[derive(Debug, Clone)]
pub struct LocalSystem {
    pub residual: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub n_velocity: usize,
}

/// Local contribution of element `t` to the momentum and mass equations.
///
/// Momentum rows: nu a + t + j + b(., p) - (f, v_T) (+ ptc mass on element
/// rows in the Jacobian); mass rows: -b(u, q) plus the boundary datum flux in
/// weak modes. The gauge multiplier is added by the assembler.
#[allow(clippy::too_many_arguments)]
pub fn element_system(
    space: &HhoSpace,
    params: &FlowParams,
    t: usize,
    u: &[f64],
    p: &[f64],
    forcing: &[f64],
    boundary: &[FaceBoundary],
    ptc: Option<f64>,
) -> LocalSystem {
    let le = space.local(t);
    let layout = le.layout();
    let (nk, nf, ns) = (layout.n_elem(), layout.n_face(), layout.scalar_size());
    let n = layout.size();
    let m = n + nk;
    let nu = params.nu;
    let mut jac = DMatrix::zeros(m, m);

    // viscous
    for c in 0..2 {
        for j in 0..ns {
            let cj = layout.vector_index(c, j);
            for i in 0..ns {
                jac[(layout.vector_index(c, i), cj)] = nu * le.ops.visc[(i, j)];
            }
        }
    }
    let mut rhs_data = DVector::zeros(m);
    for (i, fb) in boundary.iter().enumerate() {
        if !(fb.is_boundary && params.bc.is_weak()) {
            continue;
        }
        let f = &le.faces[i];
        let ng = &le.ops.normal_grad[i];
        let sigma = params.bc.sigma();
        let so = layout.scalar_face_offset(i);
        let fw = f.weights();
        // -int (grad R u n) . v_F  and  sigma int u_F . (grad R v n)
        let mut n1 = DMatrix::<f64>::zeros(nf, ns);
        for q in 0..f.quad.len() {
            for a in 0..nf {
                let s = fw[q] * f.chi[(q, a)];
                for j in 0..ns {
                    n1[(a, j)] -= s * ng[(q, j)];
                }
            }
        }
        let pen = params.eta / f.diameter;
        let g: Vec<Vec<f64>> = (0..2).map(|c| le.eval_face(i, &fb.datum[c * nf..(c + 1) * nf])).collect();
        for c in 0..2 {
            for a in 0..nf {
                let row = layout.vector_index(c, so + a);
                for j in 0..ns {
                    let col = layout.vector_index(c, j);
                    jac[(row, col)] += nu * n1[(a, j)];
                    jac[(col, row)] -= nu * sigma * n1[(a, j)];
                }
                for b in 0..nf {
                    jac[(row, layout.vector_index(c, so + b))] += nu * pen * le.ops.face_mass[i][(a, b)];
                }
            }
            // datum: -sigma int g . (grad R v n) - eta/h int g . v_F
            for j in 0..ns {
                let s: f64 = (0..f.quad.len()).map(|q| fw[q] * g[c][q] * ng[(q, j)]).sum();
                rhs_data[layout.vector_index(c, j)] -= nu * sigma * s;
            }
            for a in 0..nf {
                let s: f64 = (0..nf).map(|b| le.ops.face_mass[i][(a, b)] * fb.datum[c * nf + b]).sum();
                rhs_data[layout.vector_index(c, so + a)] -= nu * pen * s;
            }
        }
    }

    let mask: Vec<bool> = boundary.iter().map(|b| params.boundary_stab || !b.is_boundary).collect();
    // derivative of the convective terms with respect to the advecting field;
    // everything else in the velocity block is linear in the state
    let mut dm = DMatrix::zeros(n, n);
    if params.convection {
        let fields = local_fields(le, u, true);
        let cm = convection_matrix_from(le, &fields);
        dm = convection_w_derivative_from(le, &fields);
        let stab = params.rho != RhoKind::Centered;
        if stab {
            let em = jump_penalty_from(le, &fields, params.rho, nu, &mask);
            dm += jump_penalty_w_derivative_from(le, &fields, &fields, params.rho, nu, &mask);
            add_scalar_blocks(&mut jac, &layout, &(cm + em));
        } else {
            add_scalar_blocks(&mut jac, &layout, &cm);
        }
        // weak boundary terms depending on w
        for (i, fb) in boundary.iter().enumerate() {
            if !(fb.is_boundary && params.bc.is_weak()) {
                continue;
            }
            let f = &le.faces[i];
            let off = layout.face_offset(i);
            let fw = f.weights();
            let (uf, _, wn) = &fields.faces[i];
            let g: Vec<Vec<f64>> = (0..2).map(|c| le.eval_face(i, &fb.datum[c * nf..(c + 1) * nf])).collect();
            for q in 0..f.quad.len() {
                // 1/2 int (w_F . n)(g . z_F)
                let s = 0.5 * fw[q];
                for c in 0..2 {
                    for a in 0..nf {
                        let row = off + c * nf + a;
                        let za = f.chi[(q, a)];
                        rhs_data[row] += s * wn[q] * g[c][q] * za;
                        for e in 0..2 {
                            for b in 0..nf {
                                dm[(row, off + e * nf + b)] += s * f.normal[e] * f.chi[(q, b)] * g[c][q] * za;
                            }
                        }
                    }
                }
                if stab && params.boundary_stab {
                    // int (nu/h) rho(Pe) (u_F - g) . z_F
                    let pe = peclet(f.diameter, wn[q], nu);
                    let kappa = nu / f.diameter * params.rho.rho(pe);
                    let dr = params.rho.drho(pe);
                    for c in 0..2 {
                        let diff = uf[c][q] - g[c][q];
                        for a in 0..nf {
                            let row = off + c * nf + a;
                            let za = fw[q] * f.chi[(q, a)];
                            rhs_data[row] -= za * kappa * g[c][q];
                            for b in 0..nf {
                                jac[(row, off + c * nf + b)] += za * kappa * f.chi[(q, b)];
                                for e in 0..2 {
                                    dm[(row, off + e * nf + b)] += za * dr * f.normal[e] * f.chi[(q, b)] * diff;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let uvec = DVector::from_column_slice(u);
    let lin = jac.view((0, 0), (n, n)) * &uvec;
    let mut jv = jac.view_mut((0, 0), (n, n));
    jv += &dm;
    let mut res = DVector::zeros(m);
    res.rows_mut(0, n).copy_from(&lin);
    finish(space, params, t, le, &layout, jac, res, rhs_data, u, p, forcing, boundary, ptc)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    space: &HhoSpace,
    params: &FlowParams,
    t: usize,
    le: &LocalElement,
    layout: &LocalDofLayout,
    mut jac: DMatrix<f64>,
    mut res: DVector<f64>,
    rhs_data: DVector<f64>,
    u: &[f64],
    p: &[f64],
    forcing: &[f64],
    boundary: &[FaceBoundary],
    ptc: Option<f64>,
) -> LocalSystem {
    let n = layout.size();
    let nk = layout.n_elem();
    let nf = layout.n_face();
    let drop: Vec<bool> = boundary.iter().map(|b| b.is_boundary && params.bc.is_weak()).collect();
    let b = pressure_coupling_matrix(space, t, &drop);
    let pv = DVector::from_column_slice(p);
    let uv = DVector::from_column_slice(u);
    let bt_p = b.transpose() * &pv;
    let bu = &b * &uv;
    for i in 0..n {
        res[i] += bt_p[i] + rhs_data[i];
    }
    for a in 0..nk {
        res[n + a] = -bu[a];
    }
    for i in 0..2 * nk {
        res[i] -= forcing[i];
    }
    // boundary datum flux in the mass rows (weak modes)
    let avg = space.basis_averages(t);
    for (i, fb) in boundary.iter().enumerate() {
        if !drop[i] {
            continue;
        }
        let f = &le.faces[i];
        let gn: Vec<f64> = {
            let gx = le.eval_face(i, &fb.datum[..nf]);
            let gy = le.eval_face(i, &fb.datum[nf..2 * nf]);
            (0..f.quad.len()).map(|q| gx[q] * f.normal[0] + gy[q] * f.normal[1]).collect()
        };
        for a in 0..nk {
            let s: f64 = (0..f.quad.len())
                .map(|q| {
                    let psi = if a == 0 { 1.0 } else { f.phi[(q, a)] - avg[a] };
                    f.quad.weights[q] * gn[q] * psi
                })
                .sum();
            res[n + a] += s;
        }
    }
    jac.view_mut((0, n), (n, nk)).copy_from(&b.transpose());
    jac.view_mut((n, 0), (nk, n)).copy_from(&(-&b));
    if let Some(inv_dt) = ptc {
        for c in 0..2 {
            for a in 0..nk {
                for bb in 0..nk {
                    jac[(c * nk + a, c * nk + bb)] += inv_dt * le.ops.mass[(a, bb)];
                }
            }
        }
    }
    LocalSystem { residual: res, jacobian: jac, n_velocity: n }
}

fn add_scalar_blocks(jac: &mut DMatrix<f64>, layout: &LocalDofLayout, s: &DMatrix<f64>) {
    let ns = layout.scalar_size();
    for c in 0..2 {
        for j in 0..ns {
            let cj = layout.vector_index(c, j);
            for i in 0..ns {
                jac[(layout.vector_index(c, i), cj)] += s[(i, j)];
            }
        }
    }
}

fn local_dot(layout: &LocalDofLayout, z: &[f64], m: &DMatrix<f64>, v: &[f64]) -> f64 {
    let mut s = 0.0;
    for c in 0..2 {
        let zc = DVector::from_vec(layout.component(z, c));
        let vc = DVector::from_vec(layout.component(v, c));
        s += zc.dot(&(m * vc));
    }
    s
}

/// Viscous form a_h(u, v) (without the viscosity), with homogeneous Nitsche
/// terms in weak modes.
pub fn viscous_form(space: &HhoSpace, bc: BcMode, eta: f64, u: &HhoVector, v: &HhoVector) -> f64 {
    let mesh = &space.mesh;
    let mut total = 0.0;
    for t in 0..mesh.num_elements() {
        let le = space.local(t);
        let layout = le.layout();
        let (ul, vl) = (space.gather(u, t), space.gather(v, t));
        total += local_dot(&layout, &vl, &le.ops.visc, &ul);
        if !bc.is_weak() {
            continue;
        }
        let nf = layout.n_face();
        for (i, &fid) in mesh.elements[t].face_ids.iter().enumerate() {
            if !mesh.faces[fid].is_boundary() {
                continue;
            }
            let f = &le.faces[i];
            let ng = &le.ops.normal_grad[i];
            let off = layout.face_offset(i);
            for c in 0..2 {
                let uc = layout.component(&ul, c);
                let vc = layout.component(&vl, c);
                let gu = ng * DVector::from_vec(uc);
                let gv = ng * DVector::from_vec(vc);
                let uf = le.eval_face(i, &ul[off + c * nf..off + (c + 1) * nf]);
                let vf = le.eval_face(i, &vl[off + c * nf..off + (c + 1) * nf]);
                for q in 0..f.quad.len() {
                    total += f.quad.weights[q]
                        * (-gu[q] * vf[q] + bc.sigma() * uf[q] * gv[q] + eta / f.diameter * uf[q] * vf[q]);
                }
            }
        }
    }
    total
}

/// Pressure coupling b_h(v, q) with `q` in mean-split coefficients.
pub fn pressure_form(space: &HhoSpace, bc: BcMode, v: &HhoVector, q: &[f64]) -> f64 {
    let mesh = &space.mesh;
    let nk = dim_p(space.k);
    let mut total = 0.0;
    for t in 0..mesh.num_elements() {
        let drop: Vec<bool> =
            mesh.elements[t].face_ids.iter().map(|&f| bc.is_weak() && mesh.faces[f].is_boundary()).collect();
        let b = pressure_coupling_matrix(space, t, &drop);
        let vl = DVector::from_vec(space.gather(v, t));
        let ql = DVector::from_column_slice(&q[t * nk..(t + 1) * nk]);
        total += ql.dot(&(b * vl));
    }
    total
}

/// Convective trilinear form t_h(w, v, z) (homogeneous boundary data).
pub fn convective_form(space: &HhoSpace, w: &HhoVector, v: &HhoVector, z: &HhoVector) -> f64 {
    (0..space.mesh.num_elements())
        .map(|t| {
            let le = space.local(t);
            let c = convection_matrix(le, &space.gather(w, t));
            local_dot(&le.layout(), &space.gather(z, t), &c, &space.gather(v, t))
        })
        .sum()
}

/// t_h from its primal definition with the directional derivative and the
/// degree-2k divergence reconstructions, plus the boundary term.
pub fn convective_form_primal(space: &HhoSpace, w: &HhoVector, v: &HhoVector, z: &HhoVector) -> f64 {
    use crate::hho_local::{directional_derivative, divergence_reconstruction};
    let mesh = &space.mesh;
    let k = space.k;
    let nk = dim_p(k);
    let n2k = dim_p(2 * k);
    let mut total = 0.0;
    for t in 0..mesh.num_elements() {
        let le = space.local(t);
        let layout = le.layout();
        let (wl, vl, zl) = (space.gather(w, t), space.gather(v, t), space.gather(z, t));
        let gw = directional_derivative(le, &wl) * DVector::from_column_slice(&vl);
        let d2k = divergence_reconstruction(le, 2 * k) * DVector::from_column_slice(&wl);
        for q in 0..le.quad.len() {
            let wq = le.quad.weights[q];
            let div: f64 = (0..n2k).map(|a| d2k[a] * le.phi[(q, a)]).sum();
            for c in 0..2 {
                let g: f64 = (0..nk).map(|a| gw[c * nk + a] * le.phi[(q, a)]).sum();
                let zc: f64 = (0..nk).map(|a| zl[c * nk + a] * le.phi[(q, a)]).sum();
                let vc: f64 = (0..nk).map(|a| vl[c * nk + a] * le.phi[(q, a)]).sum();
                total += wq * (g * zc + 0.5 * div * vc * zc);
            }
        }
        let nf = layout.n_face();
        for (i, &fid) in mesh.elements[t].face_ids.iter().enumerate() {
            let f = &le.faces[i];
            let off = layout.face_offset(i);
            let wn: Vec<f64> = {
                let wx = le.eval_face(i, &wl[off..off + nf]);
                let wy = le.eval_face(i, &wl[off + nf..off + 2 * nf]);
                (0..f.quad.len()).map(|q| wx[q] * f.normal[0] + wy[q] * f.normal[1]).collect()
            };
            for c in 0..2 {
                let vf = le.eval_face(i, &vl[off + c * nf..off + (c + 1) * nf]);
                let zf = le.eval_face(i, &zl[off + c * nf..off + (c + 1) * nf]);
                let vt = le.eval_trace(i, &vl[c * nk..(c + 1) * nk]);
                let zt = le.eval_trace(i, &zl[c * nk..(c + 1) * nk]);
                for q in 0..f.quad.len() {
                    let mut s = 0.5 * wn[q] * (vf[q] - vt[q]) * (zf[q] - zt[q]);
                    if mesh.faces[fid].is_boundary() {
                        s -= 0.5 * wn[q] * vf[q] * zf[q];
                    }
                    total += f.quad.weights[q] * s;
                }
            }
        }
    }
    total
}

/// Convective stabilisation j_h(w; v, z) (homogeneous boundary data in weak modes).
#[allow(clippy::too_many_arguments)]
pub fn stabilisation_form(
    space: &HhoSpace,
    rho: RhoKind,
    nu: f64,
    bc: BcMode,
    boundary_stab: bool,
    w: &HhoVector,
    v: &HhoVector,
    z: &HhoVector,
) -> f64 {
    let mesh = &space.mesh;
    let mut total = 0.0;
    for t in 0..mesh.num_elements() {
        let le = space.local(t);
        let layout = le.layout();
        let ids = &mesh.elements[t].face_ids;
        let mask: Vec<bool> = ids.iter().map(|&f| boundary_stab || !mesh.faces[f].is_boundary()).collect();
        let (wl, vl, zl) = (space.gather(w, t), space.gather(v, t), space.gather(z, t));
        let e = jump_penalty_matrix(le, &wl, rho, nu, &mask);
        total += local_dot(&layout, &zl, &e, &vl);
        if !(bc.is_weak() && boundary_stab) {
            continue;
        }
        let nf = layout.n_face();
        for (i, &fid) in ids.iter().enumerate() {
            if !mesh.faces[fid].is_boundary() {
                continue;
            }
            let f = &le.faces[i];
            let off = layout.face_offset(i);
            let wx = le.eval_face(i, &wl[off..off + nf]);
            let wy = le.eval_face(i, &wl[off + nf..off + 2 * nf]);
            for c in 0..2 {
                let vf = le.eval_face(i, &vl[off + c * nf..off + (c + 1) * nf]);
                let zf = le.eval_face(i, &zl[off + c * nf..off + (c + 1) * nf]);
                for q in 0..f.quad.len() {
                    let wn = wx[q] * f.normal[0] + wy[q] * f.normal[1];
                    let kappa = nu / f.diameter * rho.rho(peclet(f.diameter, wn, nu));
                    total += f.quad.weights[q] * kappa * vf[q] * zf[q];
                }
            }
        }
    }
    total
}

/// Global discrete H1 norm.
pub fn norm_1h(space: &HhoSpace, v: &HhoVector) -> f64 {
    let mesh = &space.mesh;
    let mut s = 0.0;
    for t in 0..mesh.num_elements() {
        let n = crate::hho_local::local_norm_1t(space.local(t), &space.gather(v, t));
        s += n * n;
    }
    let nf = space.k + 1;
    for (f, face) in mesh.faces.iter().enumerate() {
        if face.is_boundary() {
            let t = face.elements.0;
            let i = mesh.elements[t].face_ids.iter().position(|&g| g == f).unwrap();
            let le = space.local(t);
            let m = &le.ops.face_mass[i];
            let b = v.face_block(f);
            for c in 0..2 {
                let x = DVector::from_column_slice(&b[c * nf..(c + 1) * nf]);
                s += x.dot(&(m * &x)) / face.diameter;
            }
        }
    }
    s.max(0.0).sqrt()
}
