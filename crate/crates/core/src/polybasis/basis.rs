use nalgebra::{DMatrix, SymmetricEigen};

use super::quadrature::Quadrature;
use super::BasisError;
use crate::mesh::Point;

/// Gram condition number above which `Orthonormalization::Auto` switches to the
/// Cholesky-orthonormalised basis.
pub const GRAM_CONDITION_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Orthonormalization {
    Never,
    Auto,
    #[default]
    Always,
}

/// Dimension of the bivariate polynomials of total degree at most `l`.
pub fn dim_p(l: usize) -> usize {
    (l + 1) * (l + 2) / 2
}

/// Exponents of the graded monomial ordering: (0,0), (1,0), (0,1), (2,0), (1,1), (0,2), ...
pub fn monomial_exponents(l: usize) -> Vec<(usize, usize)> {
    let mut e = Vec::with_capacity(dim_p(l));
    for d in 0..=l {
        for j in 0..=d {
            e.push((d - j, j));
        }
    }
    e
}

/// Scaled monomials ((x - x_T)/h_T)^a, optionally orthonormalised by a lower
/// triangular change of basis, so every lower degree is a prefix. The
/// orthonormalisation is with respect to the mean inner product (1/|T|) (p, q)_T,
/// so basis values stay O(1) like the monomials.
#[derive(Debug, Clone)]
pub struct ElementBasis {
    pub degree: usize,
    pub center: Point,
    pub scale: f64,
    exponents: Vec<(usize, usize)>,
    /// Row i holds the monomial coefficients of basis function i.
    pub transform: Option<DMatrix<f64>>,
    /// Condition number of the scaled-monomial Gram matrix.
    pub monomial_condition: f64,
}

impl ElementBasis {
    /// `quad` must integrate polynomials of degree `2 * degree` exactly.
    pub fn new(
        center: Point,
        scale: f64,
        degree: usize,
        quad: &Quadrature,
        policy: Orthonormalization,
    ) -> Result<Self, BasisError> {
        let mut b = ElementBasis {
            degree,
            center,
            scale,
            exponents: monomial_exponents(degree),
            transform: None,
            monomial_condition: 1.0,
        };
        let gram = b.gram(quad) / quad.measure();
        let eig = SymmetricEigen::new(gram.clone());
        let (lo, hi) = eig.eigenvalues.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        b.monomial_condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        let orthonormalize = match policy {
            Orthonormalization::Never => false,
            Orthonormalization::Auto => b.monomial_condition > GRAM_CONDITION_LIMIT,
            Orthonormalization::Always => true,
        };
        if orthonormalize {
            let chol = gram
                .cholesky()
                .ok_or(BasisError::SingularGram { condition: b.monomial_condition })?;
            let l = chol.l();
            let n = l.nrows();
            let inv = l
                .solve_lower_triangular(&DMatrix::identity(n, n))
                .ok_or(BasisError::SingularGram { condition: b.monomial_condition })?;
            b.transform = Some(inv);
        } else if !b.monomial_condition.is_finite() {
            return Err(BasisError::SingularGram { condition: b.monomial_condition });
        }
        Ok(b)
    }

    pub fn dim(&self) -> usize {
        self.exponents.len()
    }

    pub fn exponents(&self) -> &[(usize, usize)] {
        &self.exponents
    }

    fn scaled(&self, x: Point) -> (f64, f64) {
        ((x[0] - self.center[0]) / self.scale, (x[1] - self.center[1]) / self.scale)
    }

    fn monomials(&self, x: Point, out: &mut [f64]) {
        let (xi, eta) = self.scaled(x);
        let p = self.degree;
        let mut px = vec![1.0; p + 1];
        let mut py = vec![1.0; p + 1];
        for i in 1..=p {
            px[i] = px[i - 1] * xi;
            py[i] = py[i - 1] * eta;
        }
        for (o, &(a, b)) in out.iter_mut().zip(&self.exponents) {
            *o = px[a] * py[b];
        }
    }

    fn monomial_grads(&self, x: Point, out: &mut [[f64; 2]]) {
        let (xi, eta) = self.scaled(x);
        let p = self.degree;
        let mut px = vec![1.0; p + 1];
        let mut py = vec![1.0; p + 1];
        for i in 1..=p {
            px[i] = px[i - 1] * xi;
            py[i] = py[i - 1] * eta;
        }
        let s = 1.0 / self.scale;
        for (o, &(a, b)) in out.iter_mut().zip(&self.exponents) {
            let dx = if a > 0 { a as f64 * px[a - 1] * py[b] * s } else { 0.0 };
            let dy = if b > 0 { b as f64 * px[a] * py[b - 1] * s } else { 0.0 };
            *o = [dx, dy];
        }
    }

    /// Basis values at `x`.
    pub fn eval(&self, x: Point) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        self.monomials(x, &mut m);
        match &self.transform {
            None => m,
            Some(t) => apply_lower(t, &m),
        }
    }

    /// Basis gradients at `x`.
    pub fn eval_grad(&self, x: Point) -> Vec<[f64; 2]> {
        let mut g = vec![[0.0; 2]; self.dim()];
        self.monomial_grads(x, &mut g);
        match &self.transform {
            None => g,
            Some(t) => {
                let gx: Vec<f64> = g.iter().map(|v| v[0]).collect();
                let gy: Vec<f64> = g.iter().map(|v| v[1]).collect();
                let ax = apply_lower(t, &gx);
                let ay = apply_lower(t, &gy);
                ax.into_iter().zip(ay).map(|(a, b)| [a, b]).collect()
            }
        }
    }

    /// Gram matrix of the current basis under `quad`.
    pub fn gram(&self, quad: &Quadrature) -> DMatrix<f64> {
        let n = self.dim();
        let mut g = DMatrix::zeros(n, n);
        for (x, &w) in quad.points.iter().zip(&quad.weights) {
            let v = self.eval(*x);
            for j in 0..n {
                let wj = w * v[j];
                for i in j..n {
                    g[(i, j)] += wj * v[i];
                }
            }
        }
        g.fill_upper_triangle_with_lower_triangle();
        g
    }

    /// Coefficients, in this basis, of the monomial-basis coefficient vector `m`
    /// (with `m` indexed like `exponents`, degree at most `self.degree`).
    pub fn from_monomial_coefficients(&self, m: &[f64]) -> Vec<f64> {
        match &self.transform {
            None => m.to_vec(),
            Some(t) => {
                // phi = T mono  =>  sum c_i phi_i = sum m_j mono_j  =>  T^T c = m
                let n = m.len();
                let mut c = m.to_vec();
                for i in (0..n).rev() {
                    let mut s = c[i];
                    for j in i + 1..n {
                        s -= t[(j, i)] * c[j];
                    }
                    c[i] = s / t[(i, i)];
                }
                c
            }
        }
    }
}

fn apply_lower(t: &DMatrix<f64>, m: &[f64]) -> Vec<f64> {
    let n = m.len();
    (0..n).map(|i| (0..=i).map(|j| t[(i, j)] * m[j]).sum()).collect()
}

/// 1D scaled monomials in the face coordinate s = (x - x_F) . t_F / (h_F / 2), in [-1, 1].
#[derive(Debug, Clone)]
pub struct FaceBasis {
    pub degree: usize,
    pub midpoint: Point,
    pub tangent: Point,
    pub half_length: f64,
    pub transform: Option<DMatrix<f64>>,
}

impl FaceBasis {
    pub fn new(midpoint: Point, tangent: Point, half_length: f64, degree: usize, policy: Orthonormalization) -> Result<Self, BasisError> {
        let n = degree + 1;
        // exact mean Gram of s^i on [-1, 1]
        let gram = DMatrix::from_fn(n, n, |i, j| if (i + j) % 2 == 1 { 0.0 } else { 1.0 / (i + j + 1) as f64 });
        let eig = SymmetricEigen::new(gram.clone());
        let (lo, hi) = eig.eigenvalues.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        let orthonormalize = match policy {
            Orthonormalization::Never => false,
            Orthonormalization::Auto => condition > GRAM_CONDITION_LIMIT,
            Orthonormalization::Always => true,
        };
        let transform = if orthonormalize {
            let l = gram.cholesky().ok_or(BasisError::SingularGram { condition })?.l();
            Some(l.solve_lower_triangular(&DMatrix::identity(n, n)).ok_or(BasisError::SingularGram { condition })?)
        } else {
            None
        };
        Ok(FaceBasis { degree, midpoint, tangent, half_length, transform })
    }

    pub fn dim(&self) -> usize {
        self.degree + 1
    }

    pub fn coordinate(&self, x: Point) -> f64 {
        ((x[0] - self.midpoint[0]) * self.tangent[0] + (x[1] - self.midpoint[1]) * self.tangent[1]) / self.half_length
    }

    pub fn eval(&self, x: Point) -> Vec<f64> {
        let s = self.coordinate(x);
        let mut m = vec![1.0; self.dim()];
        for i in 1..m.len() {
            m[i] = m[i - 1] * s;
        }
        match &self.transform {
            None => m,
            Some(t) => apply_lower(t, &m),
        }
    }

    pub fn gram(&self, quad: &Quadrature) -> DMatrix<f64> {
        let n = self.dim();
        let mut g = DMatrix::zeros(n, n);
        for (x, &w) in quad.points.iter().zip(&quad.weights) {
            let v = self.eval(*x);
            for i in 0..n {
                for j in 0..n {
                    g[(i, j)] += w * v[i] * v[j];
                }
            }
        }
        g
    }
}
