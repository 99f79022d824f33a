use nalgebra::{DMatrix, DVector};

use super::{AbundanceMatrix, HsiImage};
use crate::error::{Error, Result};

/// Reconstruction RMSE over all bands and pixels.
pub fn rmse_x(x_true: &HsiImage, x_est: &HsiImage) -> Result<f64> {
    let (a, b) = (x_true.data(), x_est.data());
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch(format!(
            "images are {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let sq: f64 = a.iter().zip(b.iter()).map(|(u, v)| (u - v) * (u - v)).sum();
    Ok((sq / a.len() as f64).sqrt())
}

/// Abundance RMSE, normalized by `K·N`.
pub fn rmse_a(a_true: &AbundanceMatrix, a_est: &AbundanceMatrix) -> Result<f64> {
    if !a_true.is_normalized() || !a_est.is_normalized() {
        return Err(Error::InvalidInput("rmse_a requires normalized abundances".into()));
    }
    let (a, b) = (a_true.data(), a_est.data());
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch(format!(
            "abundances are {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let sq: f64 = a.iter().zip(b.iter()).map(|(u, v)| (u - v) * (u - v)).sum();
    Ok((sq / a.len() as f64).sqrt())
}

/// Spectral angle between two spectra, in degrees.
pub fn sad(e1: &[f64], e2: &[f64]) -> Result<f64> {
    if e1.len() != e2.len() {
        return Err(Error::DimensionMismatch(format!("spectra of length {} and {}", e1.len(), e2.len())));
    }
    let n1 = e1.iter().map(|v| v * v).sum::<f64>().sqrt();
    let n2 = e2.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::InvalidInput("spectral angle of a zero vector".into()));
    }
    // 2·atan2(|u − v|, |u + v|) stays accurate near 0° and 180°, unlike acos.
    let (mut diff, mut sum) = (0.0, 0.0);
    for (a, b) in e1.iter().zip(e2) {
        let (u, v) = (a / n1, b / n2);
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    Ok((2.0 * diff.sqrt().atan2(sum.sqrt())).to_degrees())
}

/// Result of splitting scaled abundances into fractions and pixel scalings.
#[derive(Debug, Clone)]
pub struct NormalizedAbundances {
    pub abundances: AbundanceMatrix,
    pub s_x: DVector<f64>,
    /// Pixels whose column summed to zero; their abundances stay zero and
    /// their scaling is reported as 0.
    pub degenerate: Vec<usize>,
}

/// Splits non-negative `A_s` into column-stochastic abundances and the
/// per-pixel column sums.
pub fn normalize_abundances(a_s: &DMatrix<f64>) -> Result<NormalizedAbundances> {
    let (k, n) = a_s.shape();
    if k == 0 || n == 0 {
        return Err(Error::InvalidInput("empty abundance matrix".into()));
    }
    let mut out = DMatrix::zeros(k, n);
    let mut s_x = DVector::zeros(n);
    let mut degenerate = Vec::new();
    for (j, col) in a_s.column_iter().enumerate() {
        if let Some(i) = col.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(format!("A_s[{i}, {j}] = {} is not a non-negative number", col[i])));
        }
        let s: f64 = col.sum();
        if s > 0.0 {
            s_x[j] = s;
            out.column_mut(j).copy_from(&(col / s));
        } else {
            degenerate.push(j);
        }
    }
    Ok(NormalizedAbundances {
        abundances: AbundanceMatrix::normalized_with_degenerate(out, degenerate.clone()),
        s_x,
        degenerate,
    })
}
