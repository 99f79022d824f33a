//! Baseline unmixers: fully constrained (LMM) and scaled (SLMM).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::cls::{active_set, solve_nnls_clipped, validate_gram, Bounds, LeastSquaresFactor};
use crate::error::Result;
use crate::hsi::{EndmemberMatrix, HsiImage};
use crate::result::{check_shapes, SolverTrace, UnmixResult};

/// Per-pixel fully constrained least squares.
pub fn unmix_lmm(x: &HsiImage, e: &EndmemberMatrix) -> Result<UnmixResult> {
    check_shapes(x, e)?;
    let gram = e.data().tr_mul(e.data());
    validate_gram(&gram)?;
    let linear = e.data().tr_mul(x.data());
    let k = e.count();

    let cols: Vec<(DVector<f64>, usize)> = (0..x.pixels())
        .into_par_iter()
        .map(|n| active_set(&gram, &linear.column(n).into_owned(), Bounds::simplex()))
        .collect::<Result<_>>()?;

    let iterations = cols.iter().map(|(_, it)| *it).max().unwrap_or(0);
    let mut a = DMatrix::zeros(k, x.pixels());
    for (n, (col, _)) in cols.into_iter().enumerate() {
        a.set_column(n, &col);
    }
    let trace = SolverTrace { converged: true, ..SolverTrace::default() };
    UnmixResult::from_scaled(x, e, &a, DVector::from_element(k, 1.0), trace, iterations, Vec::new())
}

/// Clipped unconstrained solve followed by per-pixel normalization.
pub fn unmix_slmm(x: &HsiImage, e: &EndmemberMatrix) -> Result<UnmixResult> {
    check_shapes(x, e)?;
    let factor = LeastSquaresFactor::new(e.data())?;
    let mut warnings = Vec::new();
    if factor.is_ill_conditioned() {
        warnings.push(format!("endmember matrix condition number {:e}", factor.condition_number()));
    }
    let a_s = solve_nnls_clipped(e.data(), x.data(), f64::INFINITY)?;
    let trace = SolverTrace { converged: true, ..SolverTrace::default() };
    let mut r = UnmixResult::from_scaled(x, e, &a_s, DVector::from_element(e.count(), 1.0), trace, 1, warnings)?;
    if !r.degenerate.is_empty() {
        r.warnings.push(format!("{} pixels unmixed to zero", r.degenerate.len()));
    }
    Ok(r)
}
