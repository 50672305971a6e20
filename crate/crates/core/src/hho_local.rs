//! Element-local HHO reconstructions.
//!
//! Everything here is expressed in coordinates relative to the element
//! centroid, so elements that are translates of each other share one
//! [`LocalElement`]. Operators are built for a single scalar component; the
//! vector-valued operators act componentwise and are obtained with
//! [`LocalDofLayout::vectorize`].

use nalgebra::{DMatrix, SymmetricEigen};

use crate::mesh::{Mesh, Point};
use crate::polybasis::{
    dim_p, element_exactness, element_quadrature, face_exactness, face_quadrature, BasisError, ElementBasis, FaceBasis,
    Orthonormalization, Quadrature,
};

/// Local unknown layout. Scalar layout: `[v_T (N_k), v_F0 (k+1), v_F1, ...]`.
/// Vector layout: `[v_T x, v_T y, (v_F x, v_F y) per face]`, each block
/// component-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalDofLayout {
    pub k: usize,
    pub n_faces: usize,
}

impl LocalDofLayout {
    pub const DIM: usize = 2;

    pub fn n_elem(&self) -> usize {
        dim_p(self.k)
    }

    pub fn n_face(&self) -> usize {
        self.k + 1
    }

    pub fn scalar_size(&self) -> usize {
        self.n_elem() + self.n_faces * self.n_face()
    }

    pub fn size(&self) -> usize {
        Self::DIM * self.scalar_size()
    }

    pub fn pressure_size(&self) -> usize {
        self.n_elem()
    }

    pub fn face_offset(&self, i: usize) -> usize {
        Self::DIM * self.n_elem() + i * Self::DIM * self.n_face()
    }

    /// Scalar offset of face block `i`.
    pub fn scalar_face_offset(&self, i: usize) -> usize {
        self.n_elem() + i * self.n_face()
    }

    /// Vector-layout index of scalar index `s` for component `c`.
    pub fn vector_index(&self, c: usize, s: usize) -> usize {
        let ne = self.n_elem();
        if s < ne {
            c * ne + s
        } else {
            let nf = self.n_face();
            let (f, b) = ((s - ne) / nf, (s - ne) % nf);
            self.face_offset(f) + c * nf + b
        }
    }

    /// Block-diagonal lift of a scalar operator with `rows_per_comp` rows per
    /// component: output rows `c * rows_per_comp + r`, vector-layout columns.
    pub fn vectorize(&self, scalar: &DMatrix<f64>) -> DMatrix<f64> {
        let (r, ns) = scalar.shape();
        assert_eq!(ns, self.scalar_size());
        let mut out = DMatrix::zeros(Self::DIM * r, self.size());
        for c in 0..Self::DIM {
            for s in 0..ns {
                let col = self.vector_index(c, s);
                for i in 0..r {
                    out[(c * r + i, col)] = scalar[(i, s)];
                }
            }
        }
        out
    }

    /// Lift of a scalar square operator on local unknowns to the vector layout.
    pub fn vectorize_square(&self, scalar: &DMatrix<f64>) -> DMatrix<f64> {
        let ns = self.scalar_size();
        assert_eq!(scalar.shape(), (ns, ns));
        let mut out = DMatrix::zeros(self.size(), self.size());
        for c in 0..Self::DIM {
            for j in 0..ns {
                let cj = self.vector_index(c, j);
                for i in 0..ns {
                    out[(self.vector_index(c, i), cj)] = scalar[(i, j)];
                }
            }
        }
        out
    }

    /// Extracts component `c` of a vector-layout local vector in scalar layout.
    pub fn component(&self, v: &[f64], c: usize) -> Vec<f64> {
        (0..self.scalar_size()).map(|s| v[self.vector_index(c, s)]).collect()
    }
}

/// A face as seen from the element, in centroid-relative coordinates.
#[derive(Debug, Clone)]
pub struct LocalFace {
    /// Outward from the element.
    pub normal: Point,
    pub diameter: f64,
    /// +1 when the element owns the face.
    pub orientation: f64,
    pub quad: Quadrature,
    pub basis: FaceBasis,
    /// Element basis (degree `L`) values at the face points, `nq x N_L`.
    pub phi: DMatrix<f64>,
    pub dphi: [DMatrix<f64>; 2],
    /// Face basis values at the face points, `nq x (k+1)`.
    pub chi: DMatrix<f64>,
}

impl LocalFace {
    pub fn weights(&self) -> &[f64] {
        &self.quad.weights
    }
}

/// Reconstruction operators for one scalar component.
#[derive(Debug, Clone)]
pub struct LocalOperators {
    pub layout: LocalDofLayout,
    /// Element Gram on the full basis (degree `L`).
    pub mass: DMatrix<f64>,
    pub face_mass: Vec<DMatrix<f64>>,
    /// Gradient reconstruction into P^k, one matrix per direction (`N_k x n_s`).
    pub grad_k: [DMatrix<f64>; 2],
    /// Gradient reconstruction into P^2k (`N_2k x n_s`).
    pub grad_2k: [DMatrix<f64>; 2],
    /// Velocity reconstruction into P^{k+1} (`N_{k+1} x n_s`).
    pub recon: DMatrix<f64>,
    /// Gradient Gram on P^{k+1}.
    pub stiffness: DMatrix<f64>,
    pub stab: DMatrix<f64>,
    /// `recon^T stiffness recon + stab`.
    pub visc: DMatrix<f64>,
    /// Values of grad(R v) . n at the face points, per face (`nq x n_s`).
    pub normal_grad: Vec<DMatrix<f64>>,
    /// Gram of the local discrete H1 norm.
    pub norm1: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct LocalElement {
    pub k: usize,
    pub measure: f64,
    pub diameter: f64,
    /// Degree `max(k+1, 2k)` basis centred at the origin.
    pub basis: ElementBasis,
    pub quad: Quadrature,
    /// Over-integration rule for data and errors.
    pub quad_high: Quadrature,
    /// Basis values and gradients at `quad` points, `nq x N_L`.
    pub phi: DMatrix<f64>,
    pub dphi: [DMatrix<f64>; 2],
    /// Degree-k basis values at `quad_high` points.
    pub phi_high: DMatrix<f64>,
    pub faces: Vec<LocalFace>,
    pub ops: LocalOperators,
}

/// Extra exactness of the data/error rule over the element rule.
pub const DATA_EXTRA_EXACTNESS: usize = 3;

impl LocalElement {
    pub fn new(mesh: &Mesh, t: usize, k: usize, policy: Orthonormalization) -> Result<Self, BasisError> {
        let e = &mesh.elements[t];
        let c = e.centroid;
        let shift = [-c[0], -c[1]];
        let big = (k + 1).max(2 * k);
        let ex = element_exactness(k);
        let quad = element_quadrature(mesh, t, ex).translated(shift);
        let quad_high = element_quadrature(mesh, t, ex + DATA_EXTRA_EXACTNESS).translated(shift);
        let gram_quad = element_quadrature(mesh, t, 2 * big).translated(shift);
        let basis = ElementBasis::new([0.0, 0.0], e.diameter, big, &gram_quad, policy)?;
        let (phi, dphi) = tables(&basis, &quad.points);
        let nk = dim_p(k);
        let phi_high = DMatrix::from_fn(quad_high.len(), nk, |q, a| basis.eval(quad_high.points[q])[a]);
        let mut faces = Vec::with_capacity(e.face_ids.len());
        for &f in &e.face_ids {
            let face = &mesh.faces[f];
            let fq = face_quadrature(mesh, f, face_exactness(k)).translated(shift);
            let mid = [face.midpoint[0] + shift[0], face.midpoint[1] + shift[1]];
            let fb = FaceBasis::new(mid, face.tangent(), 0.5 * face.diameter, k, policy)?;
            let (fphi, fdphi) = tables(&basis, &fq.points);
            let chi = DMatrix::from_fn(fq.len(), k + 1, |q, b| fb.eval(fq.points[q])[b]);
            faces.push(LocalFace {
                normal: mesh.normal(t, f),
                diameter: face.diameter,
                orientation: mesh.orientation(t, f),
                quad: fq,
                basis: fb,
                phi: fphi,
                dphi: fdphi,
                chi,
            });
        }
        let mut le = LocalElement {
            k,
            measure: e.measure,
            diameter: e.diameter,
            basis,
            quad,
            quad_high,
            phi,
            dphi,
            phi_high,
            faces,
            ops: LocalOperators::placeholder(),
        };
        le.ops = le.build_operators()?;
        Ok(le)
    }

    pub fn layout(&self) -> LocalDofLayout {
        LocalDofLayout { k: self.k, n_faces: self.faces.len() }
    }

    fn build_operators(&self) -> Result<LocalOperators, BasisError> {
        let k = self.k;
        let layout = self.layout();
        let ns = layout.scalar_size();
        let nk = dim_p(k);
        let nk1 = dim_p(k + 1);
        let w = &self.quad.weights;
        let mass = weighted_gram(&self.phi, &self.phi, w);
        let face_mass: Vec<_> = self.faces.iter().map(|f| weighted_gram(&f.chi, &f.chi, f.weights())).collect();
        let grad_k = self.gradient_scalar(k, &mass)?;
        let grad_2k = self.gradient_scalar(2 * k, &mass)?;

        // velocity reconstruction
        let gx = self.dphi[0].columns(0, nk1);
        let gy = self.dphi[1].columns(0, nk1);
        let stiffness = weighted_gram(&gx.into_owned(), &gx.into_owned(), w) + weighted_gram(&gy.into_owned(), &gy.into_owned(), w);
        let mut rhs = DMatrix::zeros(nk1, ns);
        rhs.view_mut((0, 0), (nk1, nk)).copy_from(&stiffness.view((0, 0), (nk1, nk)));
        for (i, f) in self.faces.iter().enumerate() {
            let dn = &f.dphi[0].columns(0, nk1) * f.normal[0] + &f.dphi[1].columns(0, nk1) * f.normal[1];
            let tr = f.phi.columns(0, nk).into_owned();
            let m_el = weighted_gram(&dn, &tr, f.weights());
            let m_f = weighted_gram(&dn, &f.chi, f.weights());
            let mut blk = rhs.view_mut((0, 0), (nk1, nk));
            blk -= &m_el;
            rhs.view_mut((0, layout.scalar_face_offset(i)), (nk1, k + 1)).copy_from(&m_f);
        }
        let mut recon = DMatrix::zeros(nk1, ns);
        if nk1 > 1 {
            let kred = stiffness.view((1, 1), (nk1 - 1, nk1 - 1)).into_owned();
            let chol = kred.cholesky().ok_or(BasisError::SingularGram { condition: f64::INFINITY })?;
            let sol = chol.solve(&rhs.rows(1, nk1 - 1).into_owned());
            recon.rows_mut(1, nk1 - 1).copy_from(&sol);
        }
        // mean condition: int R v = int v_T
        let means: Vec<f64> = (0..nk1).map(|m| self.phi.column(m).dot(&nalgebra::DVector::from_column_slice(w))).collect();
        for s in 0..ns {
            let mut target = if s < nk { means[s] } else { 0.0 };
            for m in 1..nk1 {
                target -= means[m] * recon[(m, s)];
            }
            recon[(0, s)] = target / means[0];
        }

        // stabilisation
        let mk = mass.view((0, 0), (nk, nk)).into_owned();
        let mk_chol = mk.clone().cholesky().ok_or(BasisError::SingularGram { condition: f64::INFINITY })?;
        let elem_proj = mk_chol.solve(&(mass.view((0, 0), (nk, nk1)) * &recon));
        let mut delta_t = elem_proj;
        for b in 0..nk {
            delta_t[(b, b)] -= 1.0;
        }
        let mut stab = DMatrix::zeros(ns, ns);
        let mut normal_grad = Vec::with_capacity(self.faces.len());
        let mut norm1 = DMatrix::zeros(ns, ns);
        {
            let gxk = self.dphi[0].columns(0, nk).into_owned();
            let gyk = self.dphi[1].columns(0, nk).into_owned();
            let g = weighted_gram(&gxk, &gxk, w) + weighted_gram(&gyk, &gyk, w);
            norm1.view_mut((0, 0), (nk, nk)).copy_from(&g);
        }
        for (i, f) in self.faces.iter().enumerate() {
            let nq = f.quad.len();
            let off = layout.scalar_face_offset(i);
            let fw = f.weights();
            let phik1 = f.phi.columns(0, nk1).into_owned();
            let phik = f.phi.columns(0, nk).into_owned();
            let mf_chol = face_mass[i].clone().cholesky().ok_or(BasisError::SingularGram { condition: f64::INFINITY })?;
            // face projection of R v, evaluated at the face points
            let proj_f = &f.chi * mf_chol.solve(&(weighted_gram(&f.chi, &phik1, fw) * &recon));
            let mut delta = proj_f - &phik * &delta_t;
            let mut jump = DMatrix::zeros(nq, ns);
            jump.view_mut((0, 0), (nq, nk)).copy_from(&(-&phik));
            for q in 0..nq {
                for b in 0..=k {
                    delta[(q, off + b)] -= f.chi[(q, b)];
                    jump[(q, off + b)] += f.chi[(q, b)];
                }
            }
            stab += weighted_gram(&delta, &delta, fw) / f.diameter;
            norm1 += weighted_gram(&jump, &jump, fw) / f.diameter;
            let dn = &f.dphi[0].columns(0, nk1) * f.normal[0] + &f.dphi[1].columns(0, nk1) * f.normal[1];
            normal_grad.push(dn * &recon);
        }
        let visc = recon.transpose() * &stiffness * &recon + &stab;
        Ok(LocalOperators { layout, mass, face_mass, grad_k, grad_2k, recon, stiffness, stab, visc, normal_grad, norm1 })
    }

    /// Scalar gradient reconstruction into P^l, from the form with the
    /// volumetric gradient of v_T and boundary differences.
    fn gradient_scalar(&self, l: usize, mass: &DMatrix<f64>) -> Result<[DMatrix<f64>; 2], BasisError> {
        let layout = self.layout();
        let (nl, nk, ns) = (dim_p(l), dim_p(self.k), layout.scalar_size());
        let ml = mass.view((0, 0), (nl, nl)).into_owned();
        let chol = ml.cholesky().ok_or(BasisError::SingularGram { condition: f64::INFINITY })?;
        let phil = self.phi.columns(0, nl).into_owned();
        let mut out = [DMatrix::zeros(nl, ns), DMatrix::zeros(nl, ns)];
        for (j, o) in out.iter_mut().enumerate() {
            let mut b = DMatrix::zeros(nl, ns);
            let dk = self.dphi[j].columns(0, nk).into_owned();
            b.view_mut((0, 0), (nl, nk)).copy_from(&weighted_gram(&phil, &dk, &self.quad.weights));
            for (i, f) in self.faces.iter().enumerate() {
                let n = f.normal[j];
                let fl = f.phi.columns(0, nl).into_owned();
                let fk = f.phi.columns(0, nk).into_owned();
                let mut blk = b.view_mut((0, 0), (nl, nk));
                blk -= weighted_gram(&fl, &fk, f.weights()) * n;
                b.view_mut((0, layout.scalar_face_offset(i)), (nl, self.k + 1))
                    .copy_from(&(weighted_gram(&fl, &f.chi, f.weights()) * n));
            }
            *o = chol.solve(&b);
        }
        Ok(out)
    }

    /// Values at the element points of the degree-k polynomial with coefficients `c`.
    pub fn eval_elem(&self, c: &[f64]) -> Vec<f64> {
        let nk = dim_p(self.k);
        (0..self.quad.len()).map(|q| (0..nk).map(|a| self.phi[(q, a)] * c[a]).sum()).collect()
    }

    /// Values at face `i` points of the face polynomial with coefficients `c`.
    pub fn eval_face(&self, i: usize, c: &[f64]) -> Vec<f64> {
        let f = &self.faces[i];
        (0..f.quad.len()).map(|q| (0..=self.k).map(|b| f.chi[(q, b)] * c[b]).sum()).collect()
    }

    /// Values at face `i` points of the element polynomial with coefficients `c`.
    pub fn eval_trace(&self, i: usize, c: &[f64]) -> Vec<f64> {
        let f = &self.faces[i];
        (0..f.quad.len()).map(|q| c.iter().enumerate().map(|(a, ca)| f.phi[(q, a)] * ca).sum()).collect()
    }
}

impl LocalOperators {
    fn placeholder() -> Self {
        let z = DMatrix::zeros(0, 0);
        LocalOperators {
            layout: LocalDofLayout { k: 0, n_faces: 0 },
            mass: z.clone(),
            face_mass: Vec::new(),
            grad_k: [z.clone(), z.clone()],
            grad_2k: [z.clone(), z.clone()],
            recon: z.clone(),
            stiffness: z.clone(),
            stab: z.clone(),
            visc: z.clone(),
            normal_grad: Vec::new(),
            norm1: z,
        }
    }
}

/// `a^T diag(w) b`.
pub fn weighted_gram(a: &DMatrix<f64>, b: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut wb = b.clone();
    for (q, &wq) in w.iter().enumerate() {
        wb.row_mut(q).scale_mut(wq);
    }
    a.transpose() * wb
}

fn tables(basis: &ElementBasis, points: &[Point]) -> (DMatrix<f64>, [DMatrix<f64>; 2]) {
    let n = basis.dim();
    let mut phi = DMatrix::zeros(points.len(), n);
    let mut dx = DMatrix::zeros(points.len(), n);
    let mut dy = DMatrix::zeros(points.len(), n);
    for (q, &x) in points.iter().enumerate() {
        let v = basis.eval(x);
        let g = basis.eval_grad(x);
        for a in 0..n {
            phi[(q, a)] = v[a];
            dx[(q, a)] = g[a][0];
            dy[(q, a)] = g[a][1];
        }
    }
    (phi, [dx, dy])
}

/// Vector gradient reconstruction into P^l for l in {k, 2k}: rows are
/// `(2 * c + j) * N_l + a` for component c and direction j.
pub fn gradient_reconstruction(le: &LocalElement, l: usize) -> DMatrix<f64> {
    let layout = le.layout();
    let g = if l == le.k {
        &le.ops.grad_k
    } else if l == 2 * le.k {
        &le.ops.grad_2k
    } else {
        panic!("gradient reconstruction only for degrees k and 2k");
    };
    let nl = g[0].nrows();
    let mut out = DMatrix::zeros(4 * nl, layout.size());
    for c in 0..2 {
        for j in 0..2 {
            for s in 0..layout.scalar_size() {
                let col = layout.vector_index(c, s);
                for a in 0..nl {
                    out[((2 * c + j) * nl + a, col)] = g[j][(a, s)];
                }
            }
        }
    }
    out
}

/// Divergence reconstruction into P^l, the trace of the gradient reconstruction.
pub fn divergence_reconstruction(le: &LocalElement, l: usize) -> DMatrix<f64> {
    let g = gradient_reconstruction(le, l);
    let nl = g.nrows() / 4;
    // trace: (c, j) = (0, 0) and (1, 1)
    g.rows(0, nl) + g.rows(3 * nl, nl)
}

/// Vector velocity reconstruction, rows `c * N_{k+1} + m`.
pub fn velocity_reconstruction(le: &LocalElement) -> DMatrix<f64> {
    le.layout().vectorize(&le.ops.recon)
}

pub fn stabilisation_matrix(le: &LocalElement) -> DMatrix<f64> {
    le.layout().vectorize_square(&le.ops.stab)
}

pub fn viscous_matrix(le: &LocalElement) -> DMatrix<f64> {
    le.layout().vectorize_square(&le.ops.visc)
}

/// Directional derivative reconstruction along the local vector `w`, as a
/// matrix from local vectors to P^k(T)^2 coefficients (rows `c * N_k + a`).
pub fn directional_derivative(le: &LocalElement, w: &[f64]) -> DMatrix<f64> {
    let layout = le.layout();
    let (nk, ns) = (layout.n_elem(), layout.scalar_size());
    let wt: Vec<Vec<f64>> = (0..2).map(|c| le.eval_elem(&w[c * nk..(c + 1) * nk])).collect();
    let mut rhs = DMatrix::zeros(nk, ns);
    for q in 0..le.quad.len() {
        let wq = le.quad.weights[q];
        for b in 0..nk {
            let adv = wt[0][q] * le.dphi[0][(q, b)] + wt[1][q] * le.dphi[1][(q, b)];
            for a in 0..nk {
                rhs[(a, b)] += wq * adv * le.phi[(q, a)];
            }
        }
    }
    for (i, f) in le.faces.iter().enumerate() {
        let off = layout.face_offset(i);
        let nf = layout.n_face();
        let wn: Vec<f64> = {
            let wx = le.eval_face(i, &w[off..off + nf]);
            let wy = le.eval_face(i, &w[off + nf..off + 2 * nf]);
            (0..f.quad.len()).map(|q| wx[q] * f.normal[0] + wy[q] * f.normal[1]).collect()
        };
        let so = layout.scalar_face_offset(i);
        for q in 0..f.quad.len() {
            let c = f.quad.weights[q] * wn[q];
            for a in 0..nk {
                let za = c * f.phi[(q, a)];
                for b in 0..nf {
                    rhs[(a, so + b)] += za * f.chi[(q, b)];
                }
                for b in 0..nk {
                    rhs[(a, b)] -= za * f.phi[(q, b)];
                }
            }
        }
    }
    let mk = le.ops.mass.view((0, 0), (nk, nk)).into_owned();
    let g = mk.cholesky().expect("element mass matrix is SPD").solve(&rhs);
    layout.vectorize(&g)
}

/// Local discrete H1 norm of a vector-layout local vector.
pub fn local_norm_1t(le: &LocalElement, v: &[f64]) -> f64 {
    let layout = le.layout();
    let mut s = 0.0;
    for c in 0..2 {
        let vc = nalgebra::DVector::from_vec(layout.component(v, c));
        s += vc.dot(&(&le.ops.norm1 * &vc));
    }
    s.max(0.0).sqrt()
}

/// Eigenvalues of the vector viscous matrix, ascending.
pub fn viscous_spectrum(le: &LocalElement) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(viscous_matrix(le)).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}
