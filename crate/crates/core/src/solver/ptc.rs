//! Pseudo-transient continuation with SER time-step control.

use std::time::Instant;

use super::{LinearSolver, SolverError};
use crate::assembly::{Assembler, Problem, State};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PtcSettings {
    pub dtau0: f64,
    pub dtau_max: f64,
    /// Tolerance on the Euclidean norm of the momentum residual.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub ser_exponent: f64,
    /// Consecutive residual increases treated as divergence.
    pub divergence_window: usize,
    /// Start nonlinear solves from the Stokes solution with the same data
    /// instead of the zero state.
    pub stokes_start: bool,
}

impl Default for PtcSettings {
    fn default() -> Self {
        PtcSettings { dtau0: 1.0, dtau_max: 1e12, tolerance: 1e-12, max_iterations: 100, ser_exponent: 1.0, divergence_window: 5, stokes_start: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterateRecord {
    pub momentum_residual: f64,
    pub continuity_residual: f64,
    pub gauge_residual: f64,
    pub dtau: f64,
    pub assembly_seconds: f64,
    pub solve_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolveStatus {
    Converged,
    Failed(SolverError),
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    /// One record per assembled iterate; the last one is the final state.
    pub history: Vec<IterateRecord>,
    /// Iterates of the Stokes start, if any.
    pub warmup: Vec<IterateRecord>,
    pub status: SolveStatus,
    pub state: State,
    pub n_dof: usize,
    pub nnz: usize,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    pub fn iterations(&self) -> usize {
        self.history.len().saturating_sub(1)
    }

    pub fn final_residual(&self) -> f64 {
        self.history.last().map_or(f64::INFINITY, |r| r.momentum_residual)
    }

    pub fn assembly_seconds(&self) -> f64 {
        self.warmup.iter().chain(&self.history).map(|r| r.assembly_seconds).sum()
    }

    pub fn solve_seconds(&self) -> f64 {
        self.warmup.iter().chain(&self.history).map(|r| r.solve_seconds).sum()
    }
}

/// Runs PTC-Newton from `initial`, or from the problem's initial state
/// (optionally replaced by the Stokes solution).
///
/// Linear problems (convection disabled) are solved without pseudo-time terms.
pub fn solve_steady(
    problem: &Problem,
    settings: &PtcSettings,
    linear: &mut dyn LinearSolver,
    initial: Option<State>,
) -> SolveReport {
    assert!(settings.dtau0 > 0.0 && settings.tolerance > 0.0);
    let mut warmup = Vec::new();
    let initial = match initial {
        Some(s) => s,
        None if settings.stokes_start && problem.params.convection => {
            let mut stokes = problem.clone();
            stokes.params.convection = false;
            // one exact step of the linear problem is enough for a start
            let one = PtcSettings { max_iterations: 1, stokes_start: false, ..*settings };
            let pre = solve_steady(&stokes, &one, linear, None);
            match pre.status {
                SolveStatus::Converged | SolveStatus::Failed(SolverError::IterationLimit { .. }) => {}
                _ => return pre,
            }
            warmup = pre.history;
            pre.state
        }
        None => problem.initial_state(),
    };
    let pseudo_time = problem.params.convection;
    let assembler = Assembler::new(problem);
    let mut state = initial;
    let mut history: Vec<IterateRecord> = Vec::new();
    let mut dtau = settings.dtau0;
    let mut increases = 0;
    let report = |history, status, state| SolveReport {
        history,
        warmup: warmup.clone(),
        status,
        state,
        n_dof: assembler.n_dof(),
        nnz: assembler.nnz(),
    };
    for it in 0..=settings.max_iterations {
        let t0 = Instant::now();
        let sys = match assembler.assemble(problem, &state, pseudo_time.then(|| 1.0 / dtau)) {
            Ok(s) => s,
            Err(e) => return report(history, SolveStatus::Failed(e.into()), state),
        };
        let assembly_seconds = t0.elapsed().as_secs_f64();
        let r = sys.momentum_residual;
        let prev = history.last().map(|h: &IterateRecord| h.momentum_residual);
        history.push(IterateRecord {
            momentum_residual: r,
            continuity_residual: sys.continuity_residual,
            gauge_residual: sys.gauge_residual,
            dtau,
            assembly_seconds,
            solve_seconds: 0.0,
        });
        if !r.is_finite() {
            return report(history, SolveStatus::Failed(SolverError::NonFinite), state);
        }
        if r <= settings.tolerance {
            return report(history, SolveStatus::Converged, state);
        }
        if let Some(p) = prev {
            increases = if r > p { increases + 1 } else { 0 };
            if increases >= settings.divergence_window {
                return report(history, SolveStatus::Failed(SolverError::Divergence { iteration: it, count: increases }), state);
            }
        }
        if it == settings.max_iterations {
            break;
        }
        let t1 = Instant::now();
        let rhs: Vec<f64> = sys.rhs.iter().map(|v| -v).collect();
        let delta = match linear.solve(&sys.matrix, &rhs) {
            Ok(d) => d,
            Err(e) => return report(history, SolveStatus::Failed(e), state),
        };
        let inc = assembler.back_solve(problem, &sys, &delta);
        state.apply(&inc);
        history.last_mut().unwrap().solve_seconds = t1.elapsed().as_secs_f64();
        if let Some(p) = prev {
            dtau = (dtau * (p / r).powf(settings.ser_exponent)).min(settings.dtau_max);
        }
    }
    report(history, SolveStatus::Failed(SolverError::IterationLimit { iterations: settings.max_iterations }), state)
}
