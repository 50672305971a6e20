//! Global assembly with static condensation.
//!
//! Globally coupled unknowns: active face velocities, one pressure mean per
//! element and the gauge multiplier. Element velocities and the zero-mean part
//! of each element pressure are eliminated element by element.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::forms::{element_system, BcMode, FaceBoundary, FlowParams, LocalSystem};
use crate::mesh::{Mesh, Point};
use crate::polybasis::dim_p;
use crate::solver::sparse::CsrMatrix;
use crate::space::{HhoSpace, HhoVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error("state has {found} {what} coefficients, expected {expected}")]
    DimensionMismatch { what: &'static str, expected: usize, found: usize },
    #[error("non-finite entry in the local system of element {element}")]
    NonFinite { element: usize },
    #[error("singular element block in element {element}")]
    SingularLocal { element: usize },
}

/// Numbering of the condensed unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalDofMap {
    pub k: usize,
    /// First global index of each face block; `None` for faces fixed by the
    /// boundary condition.
    pub face_offset: Vec<Option<usize>>,
    /// Offset of each element velocity block in [`HhoVector::elem`].
    pub elem_offset: Vec<usize>,
    /// Global index of each element pressure mean.
    pub mean_index: Vec<usize>,
    pub gauge: usize,
}

impl GlobalDofMap {
    pub fn new(mesh: &Mesh, k: usize, bc: BcMode) -> Self {
        let nf = 2 * (k + 1);
        let mut next = 0;
        let face_offset = mesh
            .faces
            .iter()
            .map(|f| {
                if f.is_boundary() && !bc.is_weak() {
                    None
                } else {
                    next += nf;
                    Some(next - nf)
                }
            })
            .collect();
        let ne = 2 * dim_p(k);
        let elem_offset = (0..mesh.num_elements()).map(|t| t * ne).collect();
        let mean_index: Vec<usize> = (0..mesh.num_elements()).map(|t| next + t).collect();
        let gauge = next + mesh.num_elements();
        GlobalDofMap { k, face_offset, elem_offset, mean_index, gauge }
    }

    pub fn n_dof(&self) -> usize {
        self.gauge + 1
    }

    pub fn n_face_dofs(&self) -> usize {
        self.mean_index.first().copied().unwrap_or(self.gauge)
    }
}

/// Size of the condensed system.
pub fn dof_count(mesh: &Mesh, k: usize, bc: BcMode) -> usize {
    let faces = mesh.faces.iter().filter(|f| bc.is_weak() || !f.is_boundary()).count();
    2 * (k + 1) * faces + mesh.num_elements() + 1
}

/// Discrete problem data: space, parameters, forcing moments and boundary datum.
#[derive(Debug, Clone)]
pub struct Problem {
    pub space: Arc<HhoSpace>,
    pub params: FlowParams,
    /// Per element, `int_T f . phi_a` for both components (component-major).
    pub forcing: Vec<f64>,
    /// Per face, coefficients of the face projection of the Dirichlet datum.
    pub datum: Vec<f64>,
}

impl Problem {
    pub fn new(
        space: Arc<HhoSpace>,
        params: FlowParams,
        forcing: impl Fn(Point) -> [f64; 2] + Sync,
        datum: impl Fn(Point) -> [f64; 2] + Sync,
    ) -> Self {
        assert!(params.nu > 0.0, "viscosity must be positive");
        let mesh = &space.mesh;
        let nk = dim_p(space.k);
        let blocks: Vec<Vec<f64>> = (0..mesh.num_elements())
            .into_par_iter()
            .map(|t| {
                let le = space.local(t);
                let c = space.centroid(t);
                let mut m = vec![0.0; 2 * nk];
                for (q, x) in le.quad_high.points.iter().enumerate() {
                    let fx = forcing([x[0] + c[0], x[1] + c[1]]);
                    let w = le.quad_high.weights[q];
                    for a in 0..nk {
                        m[a] += w * fx[0] * le.phi_high[(q, a)];
                        m[nk + a] += w * fx[1] * le.phi_high[(q, a)];
                    }
                }
                m
            })
            .collect();
        let nf = 2 * (space.k + 1);
        let mut d = vec![0.0; nf * mesh.num_faces()];
        for (f, face) in mesh.faces.iter().enumerate() {
            if face.is_boundary() {
                let mut b = space.project_face(f, |x| datum(x)[0]);
                b.extend(space.project_face(f, |x| datum(x)[1]));
                d[f * nf..(f + 1) * nf].copy_from_slice(&b);
            }
        }
        Problem { space, params, forcing: blocks.concat(), datum: d }
    }

    /// Zero state with boundary faces set to the datum.
    pub fn initial_state(&self) -> State {
        let mut u = self.space.zero_vector();
        self.impose_datum(&mut u);
        State { u, lambda: 0.0 }
    }

    /// Overwrites boundary face blocks with the datum.
    pub fn impose_datum(&self, u: &mut HhoVector) {
        let nf = 2 * (self.space.k + 1);
        for (f, face) in self.space.mesh.faces.iter().enumerate() {
            if face.is_boundary() {
                u.face_block_mut(f).copy_from_slice(&self.datum[f * nf..(f + 1) * nf]);
            }
        }
    }

    fn boundary_of(&self, t: usize) -> Vec<FaceBoundary<'_>> {
        let nf = 2 * (self.space.k + 1);
        let mesh = &self.space.mesh;
        mesh.elements[t]
            .face_ids
            .iter()
            .map(|&f| FaceBoundary { is_boundary: mesh.faces[f].is_boundary(), datum: &self.datum[f * nf..(f + 1) * nf] })
            .collect()
    }

    /// Local residual and Jacobian of element `t` at `state`.
    pub fn local_system(&self, state: &State, t: usize, ptc: Option<f64>) -> LocalSystem {
        let space = &self.space;
        let nk = dim_p(space.k);
        let u = space.gather(&state.u, t);
        let boundary = self.boundary_of(t);
        element_system(
            space,
            &self.params,
            t,
            &u,
            state.u.pressure_block(t),
            &self.forcing[t * 2 * nk..(t + 1) * 2 * nk],
            &boundary,
            ptc,
        )
    }

    fn check(&self, state: &State) -> Result<(), AssemblyError> {
        let z = self.space.zero_vector();
        for (what, e, f) in [
            ("element velocity", z.elem.len(), state.u.elem.len()),
            ("face velocity", z.face.len(), state.u.face.len()),
            ("pressure", z.pressure.len(), state.u.pressure.len()),
        ] {
            if e != f {
                return Err(AssemblyError::DimensionMismatch { what, expected: e, found: f });
            }
        }
        Ok(())
    }
}

/// Discrete velocity/pressure pair plus the gauge multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub u: HhoVector,
    pub lambda: f64,
}

/// Per-element data for recovering the eliminated unknowns.
#[derive(Debug, Clone)]
pub struct CondensationRecord {
    /// `J_II^{-1} J_IG`.
    pub coupling: DMatrix<f64>,
    /// `J_II^{-1} r_I`.
    pub interior_rhs: DVector<f64>,
}

/// Condensed Newton system `matrix * delta = -rhs`.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub records: Vec<CondensationRecord>,
    /// Euclidean norm of the momentum rows of the full residual.
    pub momentum_residual: f64,
    /// Euclidean norm of the mass rows of the full residual.
    pub continuity_residual: f64,
    /// Value of the gauge constraint.
    pub gauge_residual: f64,
}

/// Increment of all unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct Increment {
    pub u: HhoVector,
    pub lambda: f64,
}

impl State {
    pub fn apply(&mut self, d: &Increment) {
        self.u.axpy(1.0, &d.u);
        self.lambda += d.lambda;
    }
}

/// Element split into condensed (`interior`) and global (`coupled`) local indices.
#[derive(Debug, Clone)]
struct ElementSplit {
    interior: Vec<usize>,
    coupled: Vec<usize>,
    /// Global index of each coupled local index.
    global: Vec<usize>,
    /// CSR value positions of the `coupled x coupled` block, column-major,
    /// `usize::MAX` for entries outside the pattern.
    scatter: Vec<usize>,
    gauge_row: usize,
    gauge_col: usize,
}

/// Reusable condensed-assembly structure for one problem.
#[derive(Debug, Clone)]
pub struct Assembler {
    pub map: GlobalDofMap,
    pattern: CsrMatrix,
    splits: Vec<ElementSplit>,
}

impl Assembler {
    pub fn new(problem: &Problem) -> Self {
        let space = &problem.space;
        let mesh = &space.mesh;
        let map = GlobalDofMap::new(mesh, space.k, problem.params.bc);
        let nk = dim_p(space.k);
        let nf = 2 * (space.k + 1);
        let mut splits = Vec::with_capacity(mesh.num_elements());
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); map.n_dof()];
        for t in 0..mesh.num_elements() {
            let layout = space.layout(t);
            let n = layout.size();
            let mut interior: Vec<usize> = (0..2 * nk).collect();
            interior.extend(n + 1..n + nk);
            let mut coupled = Vec::new();
            let mut global = Vec::new();
            for (i, &f) in mesh.elements[t].face_ids.iter().enumerate() {
                if let Some(off) = map.face_offset[f] {
                    let lo = layout.face_offset(i);
                    for j in 0..nf {
                        coupled.push(lo + j);
                        global.push(off + j);
                    }
                }
            }
            coupled.push(n);
            global.push(map.mean_index[t]);
            let mean = map.mean_index[t];
            for &r in &global {
                for &c in &global {
                    // the mean/mean entry vanishes identically
                    if !(r == mean && c == mean) {
                        rows[r].push(c);
                    }
                }
            }
            rows[mean].push(map.gauge);
            rows[map.gauge].push(mean);
            splits.push(ElementSplit { interior, coupled, global, scatter: Vec::new(), gauge_row: 0, gauge_col: 0 });
        }
        for r in rows.iter_mut() {
            r.sort_unstable();
            r.dedup();
        }
        let pattern = CsrMatrix::from_pattern(map.n_dof(), &rows);
        for (t, s) in splits.iter_mut().enumerate() {
            let m = s.global.len();
            let mut scatter = Vec::with_capacity(m * m);
            for j in 0..m {
                for i in 0..m {
                    scatter.push(pattern.position(s.global[i], s.global[j]).unwrap_or(usize::MAX));
                }
            }
            s.scatter = scatter;
            s.gauge_row = pattern.position(map.gauge, map.mean_index[t]).unwrap();
            s.gauge_col = pattern.position(map.mean_index[t], map.gauge).unwrap();
        }
        Assembler { map, pattern, splits }
    }

    pub fn n_dof(&self) -> usize {
        self.map.n_dof()
    }

    pub fn nnz(&self) -> usize {
        self.pattern.nnz()
    }

    /// Assembles and condenses the Newton system at `state`.
    pub fn assemble(&self, problem: &Problem, state: &State, ptc: Option<f64>) -> Result<AssembledSystem, AssemblyError> {
        problem.check(state)?;
        let space = &problem.space;
        let mesh = &space.mesh;
        let nk = dim_p(space.k);
        struct Local {
            schur: DMatrix<f64>,
            rhs: DVector<f64>,
            record: CondensationRecord,
            residual: DVector<f64>,
        }
        let locals: Vec<Result<Local, AssemblyError>> = (0..mesh.num_elements())
            .into_par_iter()
            .map(|t| {
                let sys = problem.local_system(state, t, ptc);
                if !sys.jacobian.iter().chain(sys.residual.iter()).all(|x| x.is_finite()) {
                    return Err(AssemblyError::NonFinite { element: t });
                }
                let sp = &self.splits[t];
                let (ii, gg) = (&sp.interior, &sp.coupled);
                let j_ii = sys.jacobian.select_rows(ii).select_columns(ii);
                let j_ig = sys.jacobian.select_rows(ii).select_columns(gg);
                let j_gi = sys.jacobian.select_rows(gg).select_columns(ii);
                let j_gg = sys.jacobian.select_rows(gg).select_columns(gg);
                let r_i = DVector::from_iterator(ii.len(), ii.iter().map(|&i| sys.residual[i]));
                let r_g = DVector::from_iterator(gg.len(), gg.iter().map(|&i| sys.residual[i]));
                let lu = j_ii.full_piv_lu();
                let x = lu.solve(&j_ig).ok_or(AssemblyError::SingularLocal { element: t })?;
                let y = lu.solve(&r_i).ok_or(AssemblyError::SingularLocal { element: t })?;
                let schur = j_gg - &j_gi * &x;
                let rhs = r_g - &j_gi * &y;
                Ok(Local { schur, rhs, record: CondensationRecord { coupling: x, interior_rhs: y }, residual: sys.residual })
            })
            .collect();

        let mut matrix = self.pattern.clone();
        let mut rhs = vec![0.0; self.n_dof()];
        let mut records = Vec::with_capacity(locals.len());
        let nfd = 2 * (space.k + 1);
        let mut face_res = vec![0.0; nfd * mesh.num_faces()];
        let mut elem_sq = 0.0;
        let mut mass_sq = 0.0;
        let mut gauge = 0.0;
        for (t, loc) in locals.into_iter().enumerate() {
            let loc = loc?;
            let sp = &self.splits[t];
            let m = sp.global.len();
            for j in 0..m {
                for i in 0..m {
                    let p = sp.scatter[j * m + i];
                    if p != usize::MAX {
                        matrix.values[p] += loc.schur[(i, j)];
                    }
                }
                rhs[sp.global[j]] += loc.rhs[j];
            }
            let measure = mesh.elements[t].measure;
            let mean = self.map.mean_index[t];
            matrix.values[sp.gauge_row] += measure;
            matrix.values[sp.gauge_col] += measure;
            rhs[mean] += state.lambda * measure;
            gauge += measure * state.u.pressure_block(t)[0];

            let layout = space.layout(t);
            let n = layout.size();
            elem_sq += loc.residual.rows(0, 2 * nk).norm_squared();
            for (i, &f) in mesh.elements[t].face_ids.iter().enumerate() {
                let lo = layout.face_offset(i);
                for j in 0..nfd {
                    face_res[f * nfd + j] += loc.residual[lo + j];
                }
            }
            let mut pm = loc.residual.rows(n, nk).into_owned();
            pm[0] += state.lambda * measure;
            mass_sq += pm.norm_squared();
            records.push(loc.record);
        }
        rhs[self.map.gauge] = gauge;
        let face_sq: f64 = mesh
            .faces
            .iter()
            .enumerate()
            .filter(|(f, _)| self.map.face_offset[*f].is_some())
            .map(|(f, _)| face_res[f * nfd..(f + 1) * nfd].iter().map(|x| x * x).sum::<f64>())
            .sum();
        Ok(AssembledSystem {
            matrix,
            rhs,
            records,
            momentum_residual: (elem_sq + face_sq).sqrt(),
            continuity_residual: mass_sq.sqrt(),
            gauge_residual: gauge,
        })
    }

    /// Recovers the full increment from the condensed one.
    pub fn back_solve(&self, problem: &Problem, sys: &AssembledSystem, delta: &[f64]) -> Increment {
        let space = &problem.space;
        let mesh = &space.mesh;
        let nk = dim_p(space.k);
        let mut u = space.zero_vector();
        for (f, off) in self.map.face_offset.iter().enumerate() {
            if let Some(o) = off {
                let nfd = 2 * (space.k + 1);
                u.face_block_mut(f).copy_from_slice(&delta[*o..*o + nfd]);
            }
        }
        let interiors: Vec<DVector<f64>> = (0..mesh.num_elements())
            .into_par_iter()
            .map(|t| {
                let sp = &self.splits[t];
                let rec = &sys.records[t];
                let dg = DVector::from_iterator(sp.global.len(), sp.global.iter().map(|&g| delta[g]));
                -(&rec.interior_rhs) - &rec.coupling * dg
            })
            .collect();
        for (t, di) in interiors.iter().enumerate() {
            u.elem_block_mut(t).copy_from_slice(&di.as_slice()[..2 * nk]);
            let pb = u.pressure_block_mut(t);
            pb[0] = delta[self.map.mean_index[t]];
            pb[1..].copy_from_slice(&di.as_slice()[2 * nk..]);
        }
        Increment { u, lambda: delta[self.map.gauge] }
    }
}

/// Index map of the uncondensed system: element velocities, active faces,
/// pressures (mean-split), gauge.
#[derive(Debug, Clone)]
pub struct FullMap {
    pub n_elem_dofs: usize,
    pub face_offset: Vec<Option<usize>>,
    pub pressure_offset: usize,
    pub gauge: usize,
}

impl FullMap {
    pub fn new(problem: &Problem) -> Self {
        let space = &problem.space;
        let map = GlobalDofMap::new(&space.mesh, space.k, problem.params.bc);
        let ne = 2 * dim_p(space.k) * space.mesh.num_elements();
        let nfd = map.n_face_dofs();
        FullMap {
            n_elem_dofs: ne,
            face_offset: map.face_offset.iter().map(|o| o.map(|x| x + ne)).collect(),
            pressure_offset: ne + nfd,
            gauge: ne + nfd + dim_p(space.k) * space.mesh.num_elements(),
        }
    }

    pub fn size(&self) -> usize {
        self.gauge + 1
    }

    /// Global index of each local unknown of element `t` (`None` if fixed).
    pub fn local_indices(&self, problem: &Problem, t: usize) -> Vec<Option<usize>> {
        let space = &problem.space;
        let nk = dim_p(space.k);
        let nfd = 2 * (space.k + 1);
        let mut out: Vec<Option<usize>> = (0..2 * nk).map(|i| Some(t * 2 * nk + i)).collect();
        for &f in &space.mesh.elements[t].face_ids {
            match self.face_offset[f] {
                Some(o) => out.extend((0..nfd).map(|j| Some(o + j))),
                None => out.extend((0..nfd).map(|_| None)),
            }
        }
        out.extend((0..nk).map(|a| Some(self.pressure_offset + t * nk + a)));
        out
    }

    /// Flattens a state into the full unknown vector.
    pub fn flatten(&self, state: &State) -> Vec<f64> {
        let mut x = vec![0.0; self.size()];
        x[..self.n_elem_dofs].copy_from_slice(&state.u.elem);
        let nfd = state.u.n_face();
        for (f, o) in self.face_offset.iter().enumerate() {
            if let Some(o) = o {
                x[*o..*o + nfd].copy_from_slice(state.u.face_block(f));
            }
        }
        x[self.pressure_offset..self.gauge].copy_from_slice(&state.u.pressure);
        x[self.gauge] = state.lambda;
        x
    }

    /// Writes a full unknown vector back into `state`; fixed faces are untouched.
    pub fn unflatten(&self, x: &[f64], state: &mut State) {
        state.u.elem.copy_from_slice(&x[..self.n_elem_dofs]);
        let nfd = state.u.n_face();
        for (f, o) in self.face_offset.iter().enumerate() {
            if let Some(o) = o {
                state.u.face_block_mut(f).copy_from_slice(&x[*o..*o + nfd]);
            }
        }
        state.u.pressure.copy_from_slice(&x[self.pressure_offset..self.gauge]);
        state.lambda = x[self.gauge];
    }
}

/// Uncondensed Jacobian and residual, used as an oracle for the condensed path.
pub fn assemble_full(problem: &Problem, state: &State, ptc: Option<f64>) -> Result<(CsrMatrix, Vec<f64>), AssemblyError> {
    problem.check(state)?;
    let fm = FullMap::new(problem);
    let mesh = &problem.space.mesh;
    let nk = dim_p(problem.space.k);
    let mut trip = Vec::new();
    let mut res = vec![0.0; fm.size()];
    for t in 0..mesh.num_elements() {
        let sys = problem.local_system(state, t, ptc);
        if !sys.jacobian.iter().chain(sys.residual.iter()).all(|x| x.is_finite()) {
            return Err(AssemblyError::NonFinite { element: t });
        }
        let idx = fm.local_indices(problem, t);
        for (i, gi) in idx.iter().enumerate() {
            let Some(gi) = gi else { continue };
            res[*gi] += sys.residual[i];
            for (j, gj) in idx.iter().enumerate() {
                if let Some(gj) = gj {
                    let v = sys.jacobian[(i, j)];
                    if v != 0.0 {
                        trip.push((*gi, *gj, v));
                    }
                }
            }
        }
        let measure = mesh.elements[t].measure;
        let mean = fm.pressure_offset + t * nk;
        trip.push((mean, fm.gauge, measure));
        trip.push((fm.gauge, mean, measure));
        res[mean] += state.lambda * measure;
        res[fm.gauge] += measure * state.u.pressure_block(t)[0];
    }
    Ok((CsrMatrix::from_triplets(fm.size(), fm.size(), &trip), res))
}
