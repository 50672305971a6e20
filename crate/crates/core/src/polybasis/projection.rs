use nalgebra::{DMatrix, DVector};

use super::basis::{dim_p, ElementBasis, FaceBasis};
use super::quadrature::Quadrature;
use super::BasisError;
use crate::mesh::Point;
use crate::space::{HhoSpace, HhoVector};

/// Solves `gram * c = moments` by Cholesky.
pub fn project_with(gram: &DMatrix<f64>, moments: &DVector<f64>) -> Result<DVector<f64>, BasisError> {
    let chol = gram.clone().cholesky().ok_or(BasisError::SingularGram { condition: f64::INFINITY })?;
    Ok(chol.solve(moments))
}

/// Coefficients of the L2 projection of `f` onto the first `dim_p(l)` functions of `basis`.
pub fn l2_project_element(
    f: impl Fn(Point) -> f64,
    basis: &ElementBasis,
    quad: &Quadrature,
    l: usize,
) -> Result<Vec<f64>, BasisError> {
    let n = dim_p(l);
    assert!(n <= basis.dim(), "projection degree {l} exceeds basis degree {}", basis.degree);
    let mut gram = DMatrix::zeros(n, n);
    let mut mom = DVector::zeros(n);
    for (x, &w) in quad.points.iter().zip(&quad.weights) {
        let v = basis.eval(*x);
        let fx = f(*x);
        for i in 0..n {
            mom[i] += w * fx * v[i];
            for j in 0..n {
                gram[(i, j)] += w * v[i] * v[j];
            }
        }
    }
    Ok(project_with(&gram, &mom)?.iter().copied().collect())
}

/// Coefficients of the L2 projection of `f` onto the first `l + 1` functions of `basis`.
pub fn l2_project_face(f: impl Fn(Point) -> f64, basis: &FaceBasis, quad: &Quadrature, l: usize) -> Result<Vec<f64>, BasisError> {
    let n = l + 1;
    assert!(n <= basis.dim());
    let mut gram = DMatrix::zeros(n, n);
    let mut mom = DVector::zeros(n);
    for (x, &w) in quad.points.iter().zip(&quad.weights) {
        let v = basis.eval(*x);
        let fx = f(*x);
        for i in 0..n {
            mom[i] += w * fx * v[i];
            for j in 0..n {
                gram[(i, j)] += w * v[i] * v[j];
            }
        }
    }
    Ok(project_with(&gram, &mom)?.iter().copied().collect())
}

/// The global interpolator: element blocks are element projections of `v`,
/// face blocks are face projections of its trace.
pub fn interpolate(v: impl Fn(Point) -> [f64; 2] + Sync, space: &HhoSpace) -> HhoVector {
    space.interpolate(v)
}
