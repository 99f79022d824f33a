//! Synthetic scenes: spatially correlated abundances, scaled mixtures with
//! calibrated noise, and topographic variability through a simplified
//! Hapke reflectance model.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::hsi::{AbundanceMatrix, EndmemberMatrix, HsiImage, ScalingState};

/// Independent random streams derived from one seed.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
enum Stream {
    Abundances = 1,
    Scalings = 2,
    Noise = 3,
    Terrain = 4,
    Spectra = 5,
}

fn rng_for(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Parameters of the random abundance maps.
#[derive(Debug, Clone, PartialEq)]
pub struct GrfSpec {
    pub width: usize,
    pub height: usize,
    /// Standard deviation of the smoothing kernel, in pixels.
    pub correlation_length: f64,
    pub endmembers: usize,
    pub seed: u64,
    /// Gain applied to the standardized fields before the softmax; larger
    /// values give purer pixels.
    pub sharpness: f64,
}

impl GrfSpec {
    pub fn new(width: usize, height: usize, endmembers: usize, seed: u64) -> Self {
        Self { width, height, correlation_length: 15.0, endmembers, seed, sharpness: 3.0 }
    }

    fn validate(&self) -> Result<()> {
        if self.width * self.height == 0 || self.endmembers == 0 {
            return Err(Error::InvalidInput("abundance map needs at least one pixel and one endmember".into()));
        }
        if !(self.correlation_length > 0.0 && self.correlation_length.is_finite()) {
            return Err(Error::InvalidInput(format!("correlation length {}", self.correlation_length)));
        }
        if !(self.sharpness >= 0.0 && self.sharpness.is_finite()) {
            return Err(Error::InvalidInput(format!("sharpness {}", self.sharpness)));
        }
        Ok(())
    }
}

/// In-place 2-D FFT of a row-major `height × width` buffer.
fn fft2(buf: &mut [Complex<f64>], width: usize, height: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(width), planner.plan_fft_inverse(height))
    } else {
        (planner.plan_fft_forward(width), planner.plan_fft_forward(height))
    };
    row.process(buf);
    let mut t = vec![Complex::default(); buf.len()];
    transpose(buf, &mut t, width, height);
    col.process(&mut t);
    transpose(&t, buf, height, width);
}

/// Row-major `height × width` into row-major `width × height`.
fn transpose<T: Copy>(src: &[T], dst: &mut [T], width: usize, height: usize) {
    for r in 0..height {
        for c in 0..width {
            dst[c * height + r] = src[r * width + c];
        }
    }
}

fn frequency(i: usize, n: usize) -> f64 {
    let i = i as f64;
    let n_f = n as f64;
    if i < n_f / 2.0 {
        i / n_f
    } else {
        (i - n_f) / n_f
    }
}

/// White noise convolved (periodically) with a Gaussian kernel of standard
/// deviation `sigma`, standardized to zero mean and unit variance.
/// Row-major, `height × width`.
fn smooth_field(rng: &mut ChaCha8Rng, width: usize, height: usize, sigma: f64) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..width * height)
        .map(|_| Complex::new(StandardNormal.sample(rng), 0.0))
        .collect();
    fft2(&mut buf, width, height, false);
    for r in 0..height {
        let fy = frequency(r, height);
        for c in 0..width {
            let fx = frequency(c, width);
            buf[r * width + c] *= (-2.0 * PI * PI * sigma * sigma * (fx * fx + fy * fy)).exp();
        }
    }
    fft2(&mut buf, width, height, true);
    let mut field: Vec<f64> = buf.iter().map(|v| v.re).collect();
    let n = field.len() as f64;
    let mean = field.iter().sum::<f64>() / n;
    let std = (field.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    for v in &mut field {
        *v = if std > 0.0 { (*v - mean) / std } else { 0.0 };
    }
    field
}

/// Smooth random abundance maps: one Gaussian-filtered noise field per
/// endmember, pushed through a per-pixel softmax. Pixel `n` is at row
/// `n / width`, column `n % width`.
pub fn generate_grf_abundances(spec: &GrfSpec) -> Result<AbundanceMatrix> {
    spec.validate()?;
    let (k, n) = (spec.endmembers, spec.width * spec.height);
    if k == 1 {
        return AbundanceMatrix::normalized(DMatrix::from_element(1, n, 1.0));
    }
    let mut rng = rng_for(spec.seed, Stream::Abundances);
    let fields: Vec<Vec<f64>> = (0..k)
        .map(|_| smooth_field(&mut rng, spec.width, spec.height, spec.correlation_length))
        .collect();
    let mut a = DMatrix::zeros(k, n);
    for j in 0..n {
        let top = (0..k).map(|i| fields[i][j]).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for i in 0..k {
            let v = (spec.sharpness * (fields[i][j] - top)).exp();
            a[(i, j)] = v;
            sum += v;
        }
        a.column_mut(j).unscale_mut(sum);
    }
    AbundanceMatrix::normalized(a)
}

/// Smooth, strictly positive reflectance spectra in roughly `[0.05, 0.9]`:
/// a sloped baseline plus a few Gaussian absorption and reflection bands.
pub fn synthetic_endmembers(bands: usize, count: usize, seed: u64) -> Result<EndmemberMatrix> {
    if bands < 2 || count == 0 {
        return Err(Error::InvalidInput("need at least two bands and one endmember".into()));
    }
    let mut rng = rng_for(seed, Stream::Spectra);
    let mut e = DMatrix::zeros(bands, count);
    for k in 0..count {
        let base = 0.2 + 0.5 * rng.random::<f64>();
        let slope = rng.random::<f64>() - 0.5;
        let bumps: Vec<(f64, f64, f64)> = (0..4)
            .map(|_| (rng.random::<f64>(), 0.04 + 0.15 * rng.random::<f64>(), rng.random::<f64>() - 0.5))
            .collect();
        let raw: Vec<f64> = (0..bands)
            .map(|b| {
                let t = b as f64 / (bands - 1) as f64;
                base + 0.4 * slope * (t - 0.5)
                    + bumps.iter().map(|(c, w, h)| 0.6 * h * (-0.5 * ((t - c) / w).powi(2)).exp()).sum::<f64>()
            })
            .collect();
        let (lo, hi) = raw.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        // keep the shape, squeeze the range into the physical window
        let top = 0.3 + 0.6 * rng.random::<f64>();
        for (b, v) in raw.iter().enumerate() {
            e[(b, k)] = 0.05 + (top - 0.05) * (v - lo) / (hi - lo).max(1e-12);
        }
    }
    EndmemberMatrix::new(e)
}

/// Gaussian noise with variance set from the mean signal power.
fn add_noise(clean: &DMatrix<f64>, snr_db: f64, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
    if snr_db.is_nan() {
        return Err(Error::InvalidInput("SNR is NaN".into()));
    }
    if snr_db == f64::INFINITY {
        return Ok(DMatrix::zeros(clean.nrows(), clean.ncols()));
    }
    let power = clean.norm_squared() / clean.len() as f64;
    let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let dist = Normal::new(0.0, sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(DMatrix::from_fn(clean.nrows(), clean.ncols(), |_, _| dist.sample(rng)))
}

/// `10·log10(signal power / noise power)` of a clean/noise pair.
pub fn empirical_snr_db(clean: &DMatrix<f64>, noise: &DMatrix<f64>) -> f64 {
    10.0 * (clean.norm_squared() / noise.norm_squared()).log10()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Range of the uniform scaling draws.
    pub s_range: (f64, f64),
    /// `f64::INFINITY` disables noise.
    pub snr_db: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn new(width: usize, height: usize, seed: u64) -> Self {
        Self { width, height, s_range: (1.0 / 3.0, 3.0), snr_db: 40.0, seed }
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub image: HsiImage,
    pub clean: DMatrix<f64>,
    pub noise: DMatrix<f64>,
    pub scaling: ScalingState,
}

/// Mixtures `E₀·diag(s_E)·A·diag(s_X)` plus white noise. `s_E` is drawn
/// before `s_X`, both uniformly from `s_range`.
pub fn generate_2lmm_scene(e0: &EndmemberMatrix, a_gt: &AbundanceMatrix, spec: &SceneSpec) -> Result<Scene> {
    if !a_gt.is_normalized() {
        return Err(Error::InvalidInput("ground-truth abundances must be normalized".into()));
    }
    if a_gt.endmembers() != e0.count() {
        return Err(Error::DimensionMismatch(format!(
            "{} abundance rows for {} endmembers",
            a_gt.endmembers(),
            e0.count()
        )));
    }
    let (lo, hi) = spec.s_range;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(Error::InvalidInput(format!("invalid scaling range [{lo}, {hi}]")));
    }
    let (k, n) = (e0.count(), a_gt.pixels());
    let mut rng = rng_for(spec.seed, Stream::Scalings);
    let mut draw = || if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let s_e = DVector::from_fn(k, |_, _| draw());
    let s_x = DVector::from_fn(n, |_, _| draw());
    let clean = crate::result::recompose(e0.data(), &s_e, a_gt.data(), &s_x);
    let noise = add_noise(&clean, spec.snr_db, &mut rng_for(spec.seed, Stream::Noise))?;
    let image = HsiImage::with_shape(&clean + &noise, spec.width, spec.height)?;
    Ok(Scene { image, clean, noise, scaling: ScalingState::new(s_e, s_x, lo, hi)? })
}

fn check_cosine(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} = {v} outside (0, 1]")))
    }
}

/// Reflectance relative to a white panel for single-scattering albedo `w`
/// with isotropic scattering:
/// `w / ((1 + 2μ√(1−w))(1 + 2μ₀√(1−w)))`.
pub fn hapke_relative_reflectance(w: f64, mu: f64, mu0: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::InvalidInput(format!("albedo {w} outside [0, 1]")));
    }
    check_cosine("mu", mu)?;
    check_cosine("mu0", mu0)?;
    let g = (1.0 - w).sqrt();
    Ok(w / ((1.0 + 2.0 * mu * g) * (1.0 + 2.0 * mu0 * g)))
}

/// Inverse of [`hapke_relative_reflectance`] in `w`.
pub fn hapke_invert(y: f64, mu: f64, mu0: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&y) {
        return Err(Error::NonPhysical(y));
    }
    check_cosine("mu", mu)?;
    check_cosine("mu0", mu0)?;
    // (4yμμ₀ + 1)u² + 2y(μ + μ₀)u + (y − 1) = 0 with u = √(1 − w); the
    // rationalized root avoids cancellation.
    let a = 4.0 * y * mu * mu0 + 1.0;
    let b = 2.0 * y * (mu + mu0);
    let c = 1.0 - y;
    let u = 2.0 * c / (b + (b * b + 4.0 * a * c).sqrt());
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::NonPhysical(y));
    }
    Ok(1.0 - u * u)
}

/// Height grid, row-major with `rows × cols` cells of `cell_size` metres.
#[derive(Debug, Clone, PartialEq)]
pub struct Dsm {
    heights: DMatrix<f64>,
    cell_size: f64,
}

impl Dsm {
    pub fn new(heights: DMatrix<f64>, cell_size: f64) -> Result<Self> {
        if let Some(i) = heights.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: i % heights.nrows().max(1), col: i / heights.nrows().max(1) });
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::InvalidInput(format!("cell size {cell_size}")));
        }
        Ok(Self { heights, cell_size })
    }

    /// Gaussian-smoothed random terrain with standard deviation `relief`.
    pub fn synthetic(width: usize, height: usize, cell_size: f64, relief: f64, correlation_length: f64, seed: u64) -> Result<Self> {
        if width * height == 0 || !(correlation_length > 0.0) || !(relief >= 0.0) {
            return Err(Error::InvalidInput("invalid terrain parameters".into()));
        }
        let mut rng = rng_for(seed, Stream::Terrain);
        let field = smooth_field(&mut rng, width, height, correlation_length);
        Self::new(DMatrix::from_fn(height, width, |r, c| relief * field[r * width + c]), cell_size)
    }

    pub fn heights(&self) -> &DMatrix<f64> {
        &self.heights
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn width(&self) -> usize {
        self.heights.ncols()
    }

    pub fn height(&self) -> usize {
        self.heights.nrows()
    }

    /// Unit surface normal from central differences, one-sided at edges.
    fn normal(&self, r: usize, c: usize) -> Vector3<f64> {
        let h = &self.heights;
        let diff = |lo: f64, hi: f64, span: usize| (hi - lo) / (span as f64 * self.cell_size);
        let (rows, cols) = h.shape();
        let dzdx = match c {
            0 => diff(h[(r, 0)], h[(r, 1)], 1),
            _ if c == cols - 1 => diff(h[(r, c - 1)], h[(r, c)], 1),
            _ => diff(h[(r, c - 1)], h[(r, c + 1)], 2),
        };
        let dzdy = match r {
            0 => diff(h[(0, c)], h[(1, c)], 1),
            _ if r == rows - 1 => diff(h[(r - 1, c)], h[(r, c)], 1),
            _ => diff(h[(r - 1, c)], h[(r + 1, c)], 2),
        };
        Vector3::new(-dzdx, -dzdy, 1.0).normalize()
    }
}

/// Per-pixel illumination and viewing cosines, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HapkeGeometry {
    pub mu: Vec<f64>,
    pub mu0: Vec<f64>,
    pub width: usize,
    pub height: usize,
}

impl HapkeGeometry {
    /// Nadir view and zenith sun everywhere.
    pub fn reference(width: usize, height: usize) -> Self {
        Self { mu: vec![1.0; width * height], mu0: vec![1.0; width * height], width, height }
    }
}

fn unit(v: Vector3<f64>, name: &str) -> Result<Vector3<f64>> {
    if (v.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("{name} direction is not a unit vector")));
    }
    Ok(v)
}

/// Unit vector towards the sun from its zenith angle and its azimuth
/// clockwise from +y, both in degrees.
pub fn sun_direction(zenith_deg: f64, azimuth_deg: f64) -> Vector3<f64> {
    let (z, a) = (zenith_deg.to_radians(), azimuth_deg.to_radians());
    Vector3::new(z.sin() * a.sin(), z.sin() * a.cos(), z.cos())
}

/// Cosines of incidence (`μ₀ = n·sun`) and emergence (`μ = n·view`).
/// Cells facing away from the sun or the sensor are rejected.
pub fn dsm_to_geometry(dsm: &Dsm, sun: Vector3<f64>, view: Vector3<f64>) -> Result<HapkeGeometry> {
    let (rows, cols) = dsm.heights.shape();
    if rows < 3 || cols < 3 {
        return Err(Error::InvalidInput(format!("DSM is {rows}x{cols}, need at least 3x3")));
    }
    let sun = unit(sun, "sun")?;
    let view = unit(view, "view")?;
    let mut mu = Vec::with_capacity(rows * cols);
    let mut mu0 = Vec::with_capacity(rows * cols);
    let mut shadowed = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let n = dsm.normal(r, c);
            let (m, m0) = (n.dot(&view).min(1.0), n.dot(&sun).min(1.0));
            if m <= 0.0 || m0 <= 0.0 {
                shadowed.push(r * cols + c);
            }
            mu.push(m);
            mu0.push(m0);
        }
    }
    if !shadowed.is_empty() {
        return Err(Error::Shadowed { indices: shadowed });
    }
    Ok(HapkeGeometry { mu, mu0, width: cols, height: rows })
}

#[derive(Debug, Clone)]
pub struct HapkeScene {
    pub image: HsiImage,
    pub clean: DMatrix<f64>,
    pub noise: DMatrix<f64>,
    /// Single-scattering albedo of each reference endmember.
    pub albedo: DMatrix<f64>,
    /// Endmember matrix seen by each pixel.
    pub pixel_endmembers: Vec<DMatrix<f64>>,
    pub geometry: HapkeGeometry,
}

/// Renders reference reflectances (taken at nadir view and zenith sun)
/// under per-pixel geometry and mixes them linearly.
pub fn generate_hapke_scene(
    e0: &EndmemberMatrix,
    a_gt: &AbundanceMatrix,
    geometry: &HapkeGeometry,
    snr_db: f64,
    seed: u64,
) -> Result<HapkeScene> {
    let (p, k, n) = (e0.bands(), e0.count(), a_gt.pixels());
    if a_gt.endmembers() != k {
        return Err(Error::DimensionMismatch(format!("{} abundance rows for {k} endmembers", a_gt.endmembers())));
    }
    if geometry.mu.len() != n || geometry.mu0.len() != n || geometry.width * geometry.height != n {
        return Err(Error::DimensionMismatch(format!("geometry has {} cells for {n} pixels", geometry.mu.len())));
    }
    let mut albedo = DMatrix::zeros(p, k);
    for (i, v) in e0.data().iter().enumerate() {
        albedo[(i % p, i / p)] = hapke_invert(*v, 1.0, 1.0)?;
    }
    let mut pixel_endmembers = Vec::with_capacity(n);
    let mut clean = DMatrix::zeros(p, n);
    for j in 0..n {
        let (mu, mu0) = (geometry.mu[j], geometry.mu0[j]);
        let mut en = DMatrix::zeros(p, k);
        for (i, w) in albedo.iter().enumerate() {
            en[(i % p, i / p)] = hapke_relative_reflectance(*w, mu, mu0)?;
        }
        clean.set_column(j, &(&en * a_gt.data().column(j)));
        pixel_endmembers.push(en);
    }
    let noise = add_noise(&clean, snr_db, &mut rng_for(seed, Stream::Noise))?;
    let image = HsiImage::with_shape(&clean + &noise, geometry.width, geometry.height)?;
    Ok(HapkeScene { image, clean, noise, albedo, pixel_endmembers, geometry: geometry.clone() })
}
