//! Nonlinear and linear solvers.

pub mod lu;
mod ptc;
pub mod sparse;

use nalgebra::DVector;
use thiserror::Error;

use crate::assembly::AssemblyError;
pub use lu::{SparseLu, SymbolicLu};
pub use ptc::{solve_steady, IterateRecord, PtcSettings, SolveReport, SolveStatus};
pub use sparse::CsrMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("matrix is {rows} x {cols}, expected square")]
    DimensionMismatch { rows: usize, cols: usize },
    #[error("matrix pattern differs from the analysed one")]
    PatternMismatch,
    #[error("zero pivot for unknown {index} (front {front})")]
    SingularPivot { index: usize, front: usize },
    #[error("dense factorisation is singular")]
    SingularDense,
    #[error("relative backward error {error:e} above tolerance")]
    BackwardError { error: f64 },
    #[error("non-finite value in the solution")]
    NonFinite,
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error("residual increased {count} times in a row (iteration {iteration})")]
    Divergence { iteration: usize, count: usize },
    #[error("no convergence after {iterations} iterations")]
    IterationLimit { iterations: usize },
}

/// Relative backward residual accepted by the linear solvers.
pub const BACKWARD_TOLERANCE: f64 = 1e-10;

/// A direct solver for `A x = b`.
pub trait LinearSolver {
    fn name(&self) -> &'static str;
    fn solve(&mut self, a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>, SolverError>;
}

pub fn relative_residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.mul_vec(x);
    let r: f64 = ax.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nb == 0.0 {
        r
    } else {
        r / nb
    }
}

/// Built-in multifrontal LU; the symbolic analysis is reused while the
/// pattern stays the same.
#[derive(Debug, Clone)]
pub struct SparseLuSolver {
    symbolic: Option<SymbolicLu>,
    pub refinement_steps: usize,
}

impl Default for SparseLuSolver {
    fn default() -> Self {
        SparseLuSolver { symbolic: None, refinement_steps: 3 }
    }
}

impl SparseLuSolver {
    pub fn symbolic(&self) -> Option<&SymbolicLu> {
        self.symbolic.as_ref()
    }
}

impl LinearSolver for SparseLuSolver {
    fn name(&self) -> &'static str {
        "multifrontal-lu"
    }

    fn solve(&mut self, a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>, SolverError> {
        if !self.symbolic.as_ref().is_some_and(|s| s.matches(a)) {
            self.symbolic = Some(SymbolicLu::analyze(a)?);
        }
        let sym = self.symbolic.as_ref().unwrap();
        let lu = SparseLu::factor(sym, a)?;
        let mut x = lu.solve_with(sym, b);
        let mut err = relative_residual(a, &x, b);
        for _ in 0..self.refinement_steps {
            if err <= 1e-15 {
                break;
            }
            let ax = a.mul_vec(&x);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
            let d = lu.solve_with(sym, &r);
            let trial: Vec<f64> = x.iter().zip(&d).map(|(p, q)| p + q).collect();
            let e = relative_residual(a, &trial, b);
            if e < err {
                x = trial;
                err = e;
            } else {
                break;
            }
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(SolverError::NonFinite);
        }
        if err > BACKWARD_TOLERANCE {
            return Err(SolverError::BackwardError { error: err });
        }
        Ok(x)
    }
}

/// Dense LU with partial pivoting; an oracle for small systems.
#[derive(Debug, Clone, Copy, Default)]
pub struct DenseLuSolver;

impl LinearSolver for DenseLuSolver {
    fn name(&self) -> &'static str {
        "dense-lu"
    }

    fn solve(&mut self, a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>, SolverError> {
        if a.nrows != a.ncols {
            return Err(SolverError::DimensionMismatch { rows: a.nrows, cols: a.ncols });
        }
        let x = a.to_dense().lu().solve(&DVector::from_column_slice(b)).ok_or(SolverError::SingularDense)?;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(SolverError::NonFinite);
        }
        Ok(x.iter().copied().collect())
    }
}
