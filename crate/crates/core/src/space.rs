//! The global hybrid space: per-element local data (shared between
//! translated copies of the same element shape) and global coefficient vectors.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::hho_local::{LocalDofLayout, LocalElement, DATA_EXTRA_EXACTNESS};
use crate::mesh::{Mesh, Point};
use crate::polybasis::{dim_p, face_exactness, face_quadrature, BasisError, FaceBasis, Orthonormalization, Quadrature};

#[derive(Debug)]
pub struct HhoSpace {
    pub mesh: Arc<Mesh>,
    pub k: usize,
    pub policy: Orthonormalization,
    shape_of: Vec<usize>,
    shapes: Vec<LocalElement>,
    face_bases: Vec<FaceBasis>,
    face_quads: Vec<Quadrature>,
}

/// Coefficients over element velocities, face velocities and element pressures.
///
/// Element and face velocity blocks are component-major. Element pressures use
/// the basis `{1, phi_1 - avg(phi_1), ..., phi_{N-1} - avg(phi_{N-1})}`, so the
/// first coefficient of each block is the element mean.
#[derive(Debug, Clone, PartialEq)]
pub struct HhoVector {
    pub k: usize,
    pub elem: Vec<f64>,
    pub face: Vec<f64>,
    pub pressure: Vec<f64>,
}

impl HhoVector {
    pub fn n_elem(&self) -> usize {
        2 * dim_p(self.k)
    }

    pub fn n_face(&self) -> usize {
        2 * (self.k + 1)
    }

    pub fn n_pressure(&self) -> usize {
        dim_p(self.k)
    }

    pub fn elem_block(&self, t: usize) -> &[f64] {
        let n = self.n_elem();
        &self.elem[t * n..(t + 1) * n]
    }

    pub fn elem_block_mut(&mut self, t: usize) -> &mut [f64] {
        let n = self.n_elem();
        &mut self.elem[t * n..(t + 1) * n]
    }

    pub fn face_block(&self, f: usize) -> &[f64] {
        let n = self.n_face();
        &self.face[f * n..(f + 1) * n]
    }

    pub fn face_block_mut(&mut self, f: usize) -> &mut [f64] {
        let n = self.n_face();
        &mut self.face[f * n..(f + 1) * n]
    }

    pub fn pressure_block(&self, t: usize) -> &[f64] {
        let n = self.n_pressure();
        &self.pressure[t * n..(t + 1) * n]
    }

    pub fn pressure_block_mut(&mut self, t: usize) -> &mut [f64] {
        let n = self.n_pressure();
        &mut self.pressure[t * n..(t + 1) * n]
    }

    pub fn axpy(&mut self, a: f64, x: &HhoVector) {
        for (y, x) in self.elem.iter_mut().zip(&x.elem) {
            *y += a * x;
        }
        for (y, x) in self.face.iter_mut().zip(&x.face) {
            *y += a * x;
        }
        for (y, x) in self.pressure.iter_mut().zip(&x.pressure) {
            *y += a * x;
        }
    }

    pub fn scaled(&self, a: f64) -> HhoVector {
        let mut v = self.clone();
        v.elem.iter_mut().chain(v.face.iter_mut()).chain(v.pressure.iter_mut()).for_each(|x| *x *= a);
        v
    }

    pub fn sub(&self, other: &HhoVector) -> HhoVector {
        let mut v = self.clone();
        v.axpy(-1.0, other);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.elem.iter().chain(&self.face).chain(&self.pressure).all(|x| x.is_finite())
    }

    /// Zeroes the face blocks of boundary faces.
    pub fn clear_boundary(&mut self, mesh: &Mesh) {
        for (f, face) in mesh.faces.iter().enumerate() {
            if face.is_boundary() {
                self.face_block_mut(f).fill(0.0);
            }
        }
    }
}

impl HhoSpace {
    pub fn new(mesh: Arc<Mesh>, k: usize) -> Result<Self, BasisError> {
        Self::with_policy(mesh, k, Orthonormalization::default())
    }

    pub fn with_policy(mesh: Arc<Mesh>, k: usize, policy: Orthonormalization) -> Result<Self, BasisError> {
        let scale = mesh.h;
        let mut keys: HashMap<Vec<i64>, usize> = HashMap::new();
        let mut representatives = Vec::new();
        let mut shape_of = Vec::with_capacity(mesh.num_elements());
        for t in 0..mesh.num_elements() {
            let key = shape_key(&mesh, t, scale);
            let next = representatives.len();
            let id = *keys.entry(key).or_insert(next);
            if id == next {
                representatives.push(t);
            }
            shape_of.push(id);
        }
        let shapes = representatives
            .par_iter()
            .map(|&t| LocalElement::new(&mesh, t, k, policy))
            .collect::<Result<Vec<_>, _>>()?;
        let mut face_bases = Vec::with_capacity(mesh.num_faces());
        let mut face_quads = Vec::with_capacity(mesh.num_faces());
        for (f, face) in mesh.faces.iter().enumerate() {
            face_bases.push(FaceBasis::new(face.midpoint, face.tangent(), 0.5 * face.diameter, k, policy)?);
            face_quads.push(face_quadrature(&mesh, f, face_exactness(k) + DATA_EXTRA_EXACTNESS));
        }
        Ok(HhoSpace { mesh, k, policy, shape_of, shapes, face_bases, face_quads })
    }

    pub fn local(&self, t: usize) -> &LocalElement {
        &self.shapes[self.shape_of[t]]
    }

    pub fn num_shapes(&self) -> usize {
        self.shapes.len()
    }

    pub fn layout(&self, t: usize) -> LocalDofLayout {
        LocalDofLayout { k: self.k, n_faces: self.mesh.elements[t].face_ids.len() }
    }

    pub fn face_basis(&self, f: usize) -> &FaceBasis {
        &self.face_bases[f]
    }

    /// Over-integrating face rule used for data projection.
    pub fn face_data_quadrature(&self, f: usize) -> &Quadrature {
        &self.face_quads[f]
    }

    pub fn centroid(&self, t: usize) -> Point {
        self.mesh.elements[t].centroid
    }

    pub fn zero_vector(&self) -> HhoVector {
        let nk = dim_p(self.k);
        HhoVector {
            k: self.k,
            elem: vec![0.0; 2 * nk * self.mesh.num_elements()],
            face: vec![0.0; 2 * (self.k + 1) * self.mesh.num_faces()],
            pressure: vec![0.0; nk * self.mesh.num_elements()],
        }
    }

    /// Local velocity vector of element `t` in the local vector layout.
    pub fn gather(&self, v: &HhoVector, t: usize) -> Vec<f64> {
        let e = &self.mesh.elements[t];
        let mut out = Vec::with_capacity(self.layout(t).size());
        out.extend_from_slice(v.elem_block(t));
        for &f in &e.face_ids {
            out.extend_from_slice(v.face_block(f));
        }
        out
    }

    /// Element projection of a scalar function onto P^k(T), in the element basis.
    pub fn project_element(&self, t: usize, f: impl Fn(Point) -> f64) -> Vec<f64> {
        let le = self.local(t);
        let nk = dim_p(self.k);
        let c = self.centroid(t);
        let mut mom = nalgebra::DVector::zeros(nk);
        for (q, x) in le.quad_high.points.iter().enumerate() {
            let fx = le.quad_high.weights[q] * f([x[0] + c[0], x[1] + c[1]]);
            for a in 0..nk {
                mom[a] += fx * le.phi_high[(q, a)];
            }
        }
        let m = le.ops.mass.view((0, 0), (nk, nk)).into_owned();
        m.cholesky().expect("element mass matrix is SPD").solve(&mom).iter().copied().collect()
    }

    /// Face projection of a scalar function onto P^k(F), in the face basis.
    pub fn project_face(&self, f: usize, g: impl Fn(Point) -> f64) -> Vec<f64> {
        crate::polybasis::l2_project_face(g, &self.face_bases[f], &self.face_quads[f], self.k).expect("face mass matrix is SPD")
    }

    /// Global interpolator of a vector field.
    pub fn interpolate(&self, v: impl Fn(Point) -> [f64; 2] + Sync) -> HhoVector {
        let mut out = self.zero_vector();
        let nk = dim_p(self.k);
        let elems: Vec<Vec<f64>> = (0..self.mesh.num_elements())
            .into_par_iter()
            .map(|t| {
                let mut b = self.project_element(t, |x| v(x)[0]);
                b.extend(self.project_element(t, |x| v(x)[1]));
                b
            })
            .collect();
        for (t, b) in elems.into_iter().enumerate() {
            out.elem[t * 2 * nk..(t + 1) * 2 * nk].copy_from_slice(&b);
        }
        for f in 0..self.mesh.num_faces() {
            let mut b = self.project_face(f, |x| v(x)[0]);
            b.extend(self.project_face(f, |x| v(x)[1]));
            out.face_block_mut(f).copy_from_slice(&b);
        }
        out
    }

    /// Element pressure coefficients (mean-split basis) of the projection of `p`.
    pub fn project_pressure(&self, p: impl Fn(Point) -> f64 + Sync) -> Vec<f64> {
        let blocks: Vec<Vec<f64>> = (0..self.mesh.num_elements())
            .into_par_iter()
            .map(|t| self.phi_to_pressure(t, &self.project_element(t, &p)))
            .collect();
        blocks.concat()
    }

    /// Averages over the element of the degree-k basis functions.
    pub fn basis_averages(&self, t: usize) -> Vec<f64> {
        let le = self.local(t);
        let nk = dim_p(self.k);
        (0..nk)
            .map(|a| (0..le.quad.len()).map(|q| le.quad.weights[q] * le.phi[(q, a)]).sum::<f64>() / le.measure)
            .collect()
    }

    /// Converts mean-split pressure coefficients to element-basis coefficients.
    pub fn pressure_to_phi(&self, t: usize, p: &[f64]) -> Vec<f64> {
        let avg = self.basis_averages(t);
        let mut c = p.to_vec();
        let mut mean_part = p[0];
        for a in 1..p.len() {
            mean_part -= p[a] * avg[a];
        }
        // avg[0] is the (constant) value of phi_0
        c[0] = mean_part / avg[0];
        c
    }

    /// Inverse of [`HhoSpace::pressure_to_phi`].
    pub fn phi_to_pressure(&self, t: usize, c: &[f64]) -> Vec<f64> {
        let avg = self.basis_averages(t);
        let mut p = c.to_vec();
        p[0] = c.iter().zip(&avg).map(|(c, a)| c * a).sum();
        p
    }

    /// Pressure value at physical point `x` of element `t`.
    pub fn eval_pressure(&self, t: usize, p: &[f64], x: Point) -> f64 {
        let c = self.pressure_to_phi(t, p);
        self.eval_element_poly(t, &c, x)
    }

    /// Value at physical point `x` of the degree-k element polynomial with basis coefficients `c`.
    pub fn eval_element_poly(&self, t: usize, c: &[f64], x: Point) -> f64 {
        let ct = self.centroid(t);
        let v = self.local(t).basis.eval([x[0] - ct[0], x[1] - ct[1]]);
        c.iter().zip(&v).map(|(a, b)| a * b).sum()
    }

    /// Element velocity at physical point `x`.
    pub fn eval_velocity(&self, u: &HhoVector, t: usize, x: Point) -> [f64; 2] {
        let nk = dim_p(self.k);
        let b = u.elem_block(t);
        [self.eval_element_poly(t, &b[..nk], x), self.eval_element_poly(t, &b[nk..], x)]
    }

    /// Face velocity of face `f` at physical point `x` on the face.
    pub fn eval_face_velocity(&self, u: &HhoVector, f: usize, x: Point) -> [f64; 2] {
        let nf = self.k + 1;
        let v = self.face_bases[f].eval(x);
        let b = u.face_block(f);
        let dot = |c: &[f64]| c.iter().zip(&v).map(|(a, b)| a * b).sum();
        [dot(&b[..nf]), dot(&b[nf..])]
    }

    /// Integral of the discrete pressure over the domain.
    pub fn pressure_integral(&self, p: &[f64]) -> f64 {
        let nk = dim_p(self.k);
        (0..self.mesh.num_elements()).map(|t| p[t * nk] * self.mesh.elements[t].measure).sum()
    }
}

/// Quantised centroid-relative geometry, including per-face orientation, so
/// translated copies of an element map to the same key.
fn shape_key(mesh: &Mesh, t: usize, scale: f64) -> Vec<i64> {
    let e = &mesh.elements[t];
    let c = e.centroid;
    let q = |v: f64| (v / scale * 1e10).round() as i64;
    let mut key = vec![e.vertex_ids.len() as i64, q(e.diameter), q(e.measure / scale)];
    for &v in &e.vertex_ids {
        let p = mesh.vertices[v];
        key.push(q(p[0] - c[0]));
        key.push(q(p[1] - c[1]));
    }
    for &f in &e.face_ids {
        let face = &mesh.faces[f];
        key.push(q(face.midpoint[0] - c[0]));
        key.push(q(face.midpoint[1] - c[1]));
        key.push(mesh.orientation(t, f) as i64);
    }
    key
}
