//! Hybrid high-order discretisation of the steady incompressible
//! Navier-Stokes equations on polygonal meshes.

pub mod assembly;
pub mod forms;
pub mod hho_local;
pub mod mesh;
pub mod polybasis;
pub mod solver;
pub mod space;
pub mod verification;
