use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hsi::{normalize_abundances, AbundanceMatrix, EndmemberMatrix, HsiImage};

/// One outer iteration of an iterative solver.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    /// 1-based iteration counter `t`.
    pub iteration: usize,
    /// Cost at the iterate the step started from.
    pub cost_start: f64,
    /// Cost at the accepted trial point before projection onto the box.
    pub cost_trial: f64,
    /// Cost at the new (projected) iterate.
    pub cost: f64,
    pub step: f64,
    pub halvings: usize,
    pub rel_change_a: f64,
    pub rel_change_s: f64,
    /// Seconds since the solver started.
    pub elapsed: f64,
    pub rmse_a: Option<f64>,
    /// Line search exhausted and the plain ALS step was taken.
    pub fallback: bool,
    /// Quasi-Newton direction was not a descent direction; history cleared.
    pub restarted: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverTrace {
    pub initial_cost: f64,
    pub entries: Vec<TraceEntry>,
    pub converged: bool,
    /// Endmembers whose abundances vanished so their scaling was frozen.
    pub absent_endmembers: Vec<usize>,
    /// The line search found no acceptable point and the solver stopped early.
    pub stalled: bool,
}

impl SolverTrace {
    pub fn iterations(&self) -> usize {
        self.entries.len()
    }

    pub fn final_cost(&self) -> f64 {
        self.entries.last().map_or(self.initial_cost, |e| e.cost)
    }

    /// First iteration whose cost is at or below `target`, or 0 if the
    /// initial point already is.
    pub fn iterations_to_reach(&self, target: f64) -> Option<usize> {
        if self.initial_cost <= target {
            return Some(0);
        }
        self.entries.iter().find(|e| e.cost <= target).map(|e| e.iteration)
    }
}

/// Output shared by every unmixer.
#[derive(Debug, Clone)]
pub struct UnmixResult {
    pub abundances: AbundanceMatrix,
    pub s_x: DVector<f64>,
    pub s_e: DVector<f64>,
    pub reconstruction: HsiImage,
    pub trace: SolverTrace,
    /// Outer iterations for iterative solvers, worst per-pixel active-set
    /// iterations for the fully constrained solver.
    pub iterations: usize,
    /// Pixels whose scaled abundances were all zero.
    pub degenerate: Vec<usize>,
    pub warnings: Vec<String>,
}

impl UnmixResult {
    /// Normalizes `a_s` and recomposes the image from the stored factors.
    pub(crate) fn from_scaled(
        like: &HsiImage,
        e: &EndmemberMatrix,
        a_s: &DMatrix<f64>,
        s_e: DVector<f64>,
        trace: SolverTrace,
        iterations: usize,
        warnings: Vec<String>,
    ) -> Result<Self> {
        let norm = normalize_abundances(a_s)?;
        let recon = recompose(e.data(), &s_e, norm.abundances.data(), &norm.s_x);
        let reconstruction = HsiImage::with_shape(recon, like.width(), like.height())?;
        let degenerate = norm.degenerate.clone();
        Ok(Self {
            abundances: norm.abundances,
            s_x: norm.s_x,
            s_e,
            reconstruction,
            trace,
            iterations,
            degenerate,
            warnings,
        })
    }
}

/// `E · diag(s_e) · A · diag(s_x)`.
pub fn recompose(e: &DMatrix<f64>, s_e: &DVector<f64>, a: &DMatrix<f64>, s_x: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = a.clone();
    for (k, mut row) in scaled.row_iter_mut().enumerate() {
        row *= s_e[k];
    }
    for (n, mut col) in scaled.column_iter_mut().enumerate() {
        col *= s_x[n];
    }
    e * scaled
}

pub(crate) fn check_shapes(x: &HsiImage, e: &EndmemberMatrix) -> Result<()> {
    if x.bands() != e.bands() {
        return Err(Error::DimensionMismatch(format!(
            "image has {} bands, endmembers {}",
            x.bands(),
            e.bands()
        )));
    }
    if e.bands() < e.count() {
        return Err(Error::DimensionMismatch(format!(
            "{} bands cannot resolve {} endmembers",
            e.bands(),
            e.count()
        )));
    }
    Ok(())
}
