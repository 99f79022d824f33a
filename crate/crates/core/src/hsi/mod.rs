//! Images, endmembers, abundances and scaling factors.
//!
//! All matrices are stored column-major with one column per pixel (or per
//! endmember), so a pixel spectrum is a contiguous slice.

pub mod io;
mod metrics;

pub use metrics::{normalize_abundances, rmse_a, rmse_x, sad, NormalizedAbundances};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerance on abundance non-negativity.
pub const ANC_TOLERANCE: f64 = 1e-12;
/// Tolerance on per-column abundance sums.
pub const ASC_TOLERANCE: f64 = 1e-9;

fn check_finite(data: &DMatrix<f64>) -> Result<()> {
    for (col, column) in data.column_iter().enumerate() {
        if let Some(row) = column.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row, col });
        }
    }
    Ok(())
}

/// A hyperspectral image: `bands × pixels`, one spectrum per column.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiImage {
    data: DMatrix<f64>,
    width: usize,
    height: usize,
}

impl HsiImage {
    /// Wraps a `P × N` matrix as an `N × 1` image.
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        let n = data.ncols();
        Self::with_shape(data, n, 1)
    }

    pub fn with_shape(data: DMatrix<f64>, width: usize, height: usize) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::InvalidInput("image must have at least one band and one pixel".into()));
        }
        if width * height != data.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} grid does not match {} pixels",
                width,
                height,
                data.ncols()
            )));
        }
        check_finite(&data)?;
        Ok(Self { data, width, height })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    pub fn bands(&self) -> usize {
        self.data.nrows()
    }

    pub fn pixels(&self) -> usize {
        self.data.ncols()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel(&self, n: usize) -> &[f64] {
        let p = self.bands();
        &self.data.as_slice()[n * p..(n + 1) * p]
    }
}

/// Reference endmember spectra, `bands × K`.
#[derive(Debug, Clone, PartialEq)]
pub struct EndmemberMatrix {
    data: DMatrix<f64>,
    labels: Option<Vec<String>>,
}

impl EndmemberMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::InvalidInput("endmember matrix is empty".into()));
        }
        check_finite(&data)?;
        for (k, col) in data.column_iter().enumerate() {
            if let Some(p) = col.iter().position(|&v| v < 0.0) {
                return Err(Error::InvalidInput(format!(
                    "endmember {k} has negative reflectance at band {p}"
                )));
            }
            if col.norm() == 0.0 {
                return Err(Error::InvalidInput(format!("endmember {k} is the zero vector")));
            }
        }
        Ok(Self { data, labels: None })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.count() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} endmembers",
                labels.len(),
                self.count()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn bands(&self) -> usize {
        self.data.nrows()
    }

    pub fn count(&self) -> usize {
        self.data.ncols()
    }

    /// Endmembers reordered so that column `k` of the result is column
    /// `order[k]` of `self`.
    pub fn reordered(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.count() {
            return Err(Error::DimensionMismatch("permutation length".into()));
        }
        let data = DMatrix::from_fn(self.bands(), self.count(), |p, k| self.data[(p, order[k])]);
        let labels = self
            .labels
            .as_ref()
            .map(|l| order.iter().map(|&i| l[i].clone()).collect());
        Ok(Self { data, labels })
    }
}

/// Abundance fractions, `K × N`.
#[derive(Debug, Clone, PartialEq)]
pub struct AbundanceMatrix {
    data: DMatrix<f64>,
    normalized: bool,
    degenerate: Vec<usize>,
}

impl AbundanceMatrix {
    /// Non-negative abundances without a sum-to-one requirement.
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::InvalidInput("abundance matrix is empty".into()));
        }
        check_finite(&data)?;
        for (n, col) in data.column_iter().enumerate() {
            if let Some(k) = col.iter().position(|&v| v < -ANC_TOLERANCE) {
                return Err(Error::InvalidInput(format!(
                    "negative abundance {} at endmember {k}, pixel {n}",
                    col[k]
                )));
            }
        }
        Ok(Self { data, normalized: false, degenerate: Vec::new() })
    }

    /// Abundances that must satisfy both ANC and ASC.
    pub fn normalized(data: DMatrix<f64>) -> Result<Self> {
        let mut a = Self::new(data)?;
        for (n, col) in a.data.column_iter().enumerate() {
            let s = col.sum();
            if (s - 1.0).abs() > ASC_TOLERANCE {
                return Err(Error::InvalidInput(format!("pixel {n} abundances sum to {s}")));
            }
        }
        a.normalized = true;
        Ok(a)
    }

    /// Normalized abundances where the listed columns are all-zero and
    /// excluded from the sum-to-one requirement.
    pub(crate) fn normalized_with_degenerate(data: DMatrix<f64>, degenerate: Vec<usize>) -> Self {
        Self { data, normalized: true, degenerate }
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Pixels whose unnormalized abundances were all zero.
    pub fn degenerate(&self) -> &[usize] {
        &self.degenerate
    }

    pub fn endmembers(&self) -> usize {
        self.data.nrows()
    }

    pub fn pixels(&self) -> usize {
        self.data.ncols()
    }

    /// Rows reordered so that row `k` of the result is row `order[k]`.
    pub fn reordered(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.endmembers() {
            return Err(Error::DimensionMismatch("permutation length".into()));
        }
        let data = DMatrix::from_fn(self.endmembers(), self.pixels(), |k, n| self.data[(order[k], n)]);
        Ok(Self { data, normalized: self.normalized, degenerate: self.degenerate.clone() })
    }
}

/// Endmember and pixel scaling factors with their box bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingState {
    pub s_e: DVector<f64>,
    pub s_x: DVector<f64>,
    pub lower: f64,
    pub upper: f64,
}

impl ScalingState {
    pub fn new(s_e: DVector<f64>, s_x: DVector<f64>, lower: f64, upper: f64) -> Result<Self> {
        if !(lower > 0.0 && upper >= lower) {
            return Err(Error::InvalidInput(format!("invalid scaling bounds [{lower}, {upper}]")));
        }
        if let Some(k) = s_e.iter().position(|&s| !(lower..=upper).contains(&s)) {
            return Err(Error::InvalidInput(format!(
                "s_E[{k}] = {} outside [{lower}, {upper}]",
                s_e[k]
            )));
        }
        if let Some(n) = s_x.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidInput(format!("s_X[{n}] = {} is not positive", s_x[n])));
        }
        Ok(Self { s_e, s_x, lower, upper })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_rejects_nan() {
        let mut m = DMatrix::from_element(2, 3, 0.5);
        m[(1, 2)] = f64::NAN;
        assert!(matches!(HsiImage::new(m), Err(Error::NonFinite { row: 1, col: 2 })));
    }

    #[test]
    fn image_shape_must_match() {
        let m = DMatrix::from_element(2, 6, 0.5);
        assert!(HsiImage::with_shape(m.clone(), 2, 3).is_ok());
        assert!(HsiImage::with_shape(m, 4, 2).is_err());
    }

    #[test]
    fn pixel_slices_are_columns() {
        let m = DMatrix::from_column_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let img = HsiImage::new(m).unwrap();
        assert_eq!(img.pixel(1), &[3.0, 4.0]);
    }

    #[test]
    fn endmembers_reject_negative_and_zero_columns() {
        let neg = DMatrix::from_column_slice(2, 1, &[0.1, -0.2]);
        assert!(EndmemberMatrix::new(neg).is_err());
        let zero = DMatrix::from_column_slice(2, 2, &[0.1, 0.2, 0.0, 0.0]);
        assert!(EndmemberMatrix::new(zero).is_err());
    }

    #[test]
    fn normalized_abundances_check_sums() {
        let ok = DMatrix::from_column_slice(2, 2, &[0.25, 0.75, 1.0, 0.0]);
        assert!(AbundanceMatrix::normalized(ok).unwrap().is_normalized());
        let bad = DMatrix::from_column_slice(2, 1, &[0.5, 0.6]);
        assert!(AbundanceMatrix::normalized(bad).is_err());
    }

    #[test]
    fn scaling_state_bounds() {
        let s_e = DVector::from_vec(vec![0.5, 2.0]);
        let s_x = DVector::from_vec(vec![1.0]);
        assert!(ScalingState::new(s_e.clone(), s_x.clone(), 0.2, 5.0).is_ok());
        assert!(ScalingState::new(s_e.clone(), s_x.clone(), 1.0, 5.0).is_err());
        assert!(ScalingState::new(s_e, s_x.clone(), 5.0, 0.2).is_err());
        let ones = DVector::from_element(2, 1.0);
        assert!(ScalingState::new(ones, s_x, 1.0, 1.0).is_ok());
    }
}
