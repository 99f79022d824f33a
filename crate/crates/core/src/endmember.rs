//! Endmember extraction and identifiability checks.

use nalgebra::{DMatrix, DVector, SymmetricEigen, QR};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cls::nnls;
use crate::error::{Error, Result};
use crate::hsi::{sad, AbundanceMatrix, EndmemberMatrix, HsiImage};

/// Relative threshold below which `|xᵀv|` counts as zero.
const PROJECTION_TOL: f64 = 1e-9;

/// Direction `v` of the affine slice `xᵀv = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSpec {
    v: DVector<f64>,
}

impl ProjectionSpec {
    pub fn new(v: DVector<f64>) -> Result<Self> {
        if v.is_empty() || v.iter().any(|c| !c.is_finite()) || v.norm() == 0.0 {
            return Err(Error::InvalidInput("projection vector must be finite and nonzero".into()));
        }
        Ok(Self { v })
    }

    /// Unit-norm mean spectrum of `x`.
    pub fn mean_spectrum(x: &HsiImage) -> Result<Self> {
        let mean = x.data().column_mean();
        let norm = mean.norm();
        if norm == 0.0 {
            return Err(Error::InvalidInput("mean spectrum is zero".into()));
        }
        Self::new(mean / norm)
    }

    pub fn v(&self) -> &DVector<f64> {
        &self.v
    }

    /// Pixels whose inner product with `v` is too small to divide by.
    pub fn degenerate_pixels(&self, x: &HsiImage) -> Result<Vec<usize>> {
        if x.bands() != self.v.len() {
            return Err(Error::DimensionMismatch(format!(
                "projection vector has {} bands, image {}",
                self.v.len(),
                x.bands()
            )));
        }
        let max_norm = x.data().column_iter().map(|c| c.norm()).fold(0.0, f64::max);
        let tol = PROJECTION_TOL * self.v.norm() * max_norm;
        let dots = x.data().tr_mul(&self.v);
        Ok((0..x.pixels()).filter(|&n| dots[n].abs() <= tol).collect())
    }
}

/// `x ↦ x / (xᵀv)` for every pixel.
pub fn perspective_project(x: &HsiImage, spec: &ProjectionSpec) -> Result<HsiImage> {
    let bad = spec.degenerate_pixels(x)?;
    if !bad.is_empty() {
        return Err(Error::DegenerateProjection { indices: bad });
    }
    let mut out = x.data().clone();
    for mut col in out.column_iter_mut() {
        let d = col.dot(spec.v());
        col /= d;
    }
    HsiImage::with_shape(out, x.width(), x.height())
}

/// Pixel indices chosen by vertex component analysis.
pub fn vca_select(x: &HsiImage, k: usize, seed: u64) -> Result<Vec<usize>> {
    let (p, n) = (x.bands(), x.pixels());
    if k == 0 || n < k || p < k {
        return Err(Error::InvalidInput(format!("cannot extract {k} endmembers from {n} pixels of {p} bands")));
    }
    let data = x.data();
    let eig = SymmetricEigen::new(data * data.transpose());
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]];
    let kth = eig.eigenvalues[order[k - 1]];
    if !(top > 0.0) || kth <= 1e-13 * top {
        return Err(Error::RankDeficient { smallest: kth.max(0.0).sqrt() });
    }
    let basis = DMatrix::from_fn(p, k, |r, c| eig.eigenvectors[(r, order[c])]);
    let y = basis.tr_mul(data);

    let argmax = |score: &dyn Fn(usize) -> f64| {
        (0..n).fold((0, f64::NEG_INFINITY), |best, j| {
            let s = score(j);
            if s > best.1 {
                (j, s)
            } else {
                best
            }
        })
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = vec![argmax(&|j| y.column(j).norm()).0];
    while picked.len() < k {
        let span = DMatrix::from_fn(k, picked.len(), |r, c| y[(r, picked[c])]);
        let q = QR::new(span).q();
        let mut f = DVector::zeros(k);
        for _ in 0..100 {
            let w: DVector<f64> = DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
            f = &w - &q * q.tr_mul(&w);
            if f.norm() > 1e-8 * w.norm() {
                break;
            }
        }
        let (j, score) = argmax(&|j| f.dot(&y.column(j)).abs());
        if !(score > 0.0) || picked.contains(&j) {
            return Err(Error::RankDeficient { smallest: 0.0 });
        }
        picked.push(j);
    }
    Ok(picked)
}

/// Vertex component analysis; returns actual pixel spectra of `x`.
pub fn vca_extract(x: &HsiImage, k: usize, seed: u64) -> Result<EndmemberMatrix> {
    endmembers_from_pixels(x, &vca_select(x, k, seed)?)
}

/// Selected pixel spectra as endmembers. Negative entries, which only
/// noise can produce, are set to zero.
pub fn endmembers_from_pixels(x: &HsiImage, indices: &[usize]) -> Result<EndmemberMatrix> {
    if let Some(&j) = indices.iter().find(|&&j| j >= x.pixels()) {
        return Err(Error::InvalidInput(format!("pixel {j} out of range")));
    }
    let cols: Vec<_> = indices.iter().map(|&j| x.data().column(j).map(|v| v.max(0.0))).collect();
    EndmemberMatrix::new(DMatrix::from_columns(&cols))
}

/// Correspondence between estimated and reference endmembers.
#[derive(Debug, Clone, PartialEq)]
pub struct EndmemberMatch {
    /// `permutation[k]` is the estimated endmember paired with reference `k`.
    pub permutation: Vec<usize>,
    /// Least-squares ratio `⟨ê, e⟩ / ⟨e, e⟩` per reference endmember.
    pub scaling: DVector<f64>,
    /// Spectral angle per pair, in degrees.
    pub sad: Vec<f64>,
    pub mean_sad: f64,
}

/// Pairs endmembers by the assignment minimizing the total spectral angle.
pub fn match_endmembers(estimated: &EndmemberMatrix, reference: &EndmemberMatrix) -> Result<EndmemberMatch> {
    let k = reference.count();
    if estimated.count() != k || estimated.bands() != reference.bands() {
        return Err(Error::DimensionMismatch(format!(
            "estimated {}x{} vs reference {}x{}",
            estimated.bands(),
            estimated.count(),
            reference.bands(),
            k
        )));
    }
    let col = |m: &EndmemberMatrix, j: usize| m.data().column(j).into_owned();
    let mut angles = vec![vec![0.0; k]; k];
    for (i, row) in angles.iter_mut().enumerate() {
        for (j, a) in row.iter_mut().enumerate() {
            *a = sad(col(reference, i).as_slice(), col(estimated, j).as_slice())?;
        }
    }
    let permutation = hungarian(&angles);
    let sads: Vec<f64> = (0..k).map(|i| angles[i][permutation[i]]).collect();
    let scaling = DVector::from_fn(k, |i, _| {
        let e = col(reference, i);
        col(estimated, permutation[i]).dot(&e) / e.dot(&e)
    });
    Ok(EndmemberMatch {
        mean_sad: sads.iter().sum::<f64>() / k as f64,
        permutation,
        scaling,
        sad: sads,
    })
}

/// Minimum-cost perfect assignment on a square matrix; `result[row] = col`.
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut result = vec![0; n];
    for j in 1..=n {
        result[owner[j] - 1] = j - 1;
    }
    result
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScatterCheck {
    Pass,
    /// A boundary direction of the inscribed cone outside `cone(A)`.
    Fail { witness: DVector<f64> },
}

impl ScatterCheck {
    pub fn passed(&self) -> bool {
        matches!(self, Self::Pass)
    }
}

/// Samples unit directions `x` with `1ᵀx = √(K−1)` and tests whether each
/// is a non-negative combination of abundance columns.
pub fn check_sufficiently_scattered(a: &AbundanceMatrix, directions: usize, seed: u64) -> Result<ScatterCheck> {
    if !a.is_normalized() {
        return Err(Error::InvalidInput("abundances must be normalized".into()));
    }
    let k = a.endmembers();
    if k < 2 {
        return Err(Error::InvalidInput("the cone test needs at least two endmembers".into()));
    }
    let kf = k as f64;
    let along = ((kf - 1.0) / kf).sqrt() / kf.sqrt();
    let across = (1.0 / kf).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..directions {
        let mut w: DVector<f64> = DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
        loop {
            let mean = w.mean();
            w.add_scalar_mut(-mean);
            if w.norm() > 1e-8 {
                break;
            }
            w = DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
        }
        w.normalize_mut();
        let x = DVector::from_element(k, along) + w * across;
        let c = nnls(a.data(), &x)?;
        if (a.data() * c - &x).norm() > 1e-8 {
            return Ok(ScatterCheck::Fail { witness: x });
        }
    }
    Ok(ScatterCheck::Pass)
}
