//! Scaled polynomial bases, quadrature rules and L2 projectors.

mod basis;
mod projection;
pub mod quadrature;

pub use basis::{dim_p, monomial_exponents, ElementBasis, FaceBasis, Orthonormalization, GRAM_CONDITION_LIMIT};
pub use projection::{interpolate, l2_project_element, l2_project_face, project_with};
pub use quadrature::{element_quadrature, face_quadrature, Quadrature};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("Gram matrix is not positive definite (condition number {condition:e})")]
    SingularGram { condition: f64 },
}

/// Default element quadrature exactness for degree `k`.
pub fn element_exactness(k: usize) -> usize {
    (2 * (k + 1)).max(4 * k)
}

/// Default face quadrature exactness for degree `k`.
pub fn face_exactness(k: usize) -> usize {
    (2 * (k + 1)).max(3 * k + 1)
}
