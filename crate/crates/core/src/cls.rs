//! Constrained least-squares kernels shared by the unmixers.

use nalgebra::{DMatrix, DVector, SymmetricEigen, QR, SVD};

use crate::error::{Error, Result};

/// Condition number above which clipped normal-equation solutions should
/// not be trusted.
pub const CONDITION_WARNING: f64 = 1e10;

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstraintKind {
    /// `a ≥ 0`, `1ᵀa = 1`.
    Simplex,
    /// `lo ≤ a ≤ hi` elementwise; `hi` may be infinite.
    Box { lo: f64, hi: f64 },
}

/// `min ½ aᵀ G a − cᵀ a` under simplex or box constraints. With `G = EᵀE`
/// and `c = Eᵀx` this is `min ½‖x − E a‖²` up to a constant.
#[derive(Debug, Clone)]
pub struct QpProblem {
    gram: DMatrix<f64>,
    linear: DVector<f64>,
    constraint: ConstraintKind,
}

impl QpProblem {
    pub fn new(gram: DMatrix<f64>, linear: DVector<f64>, constraint: ConstraintKind) -> Result<Self> {
        validate_gram(&gram)?;
        if linear.len() != gram.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "linear term has {} entries for a {}x{} gram",
                linear.len(),
                gram.nrows(),
                gram.ncols()
            )));
        }
        if let ConstraintKind::Box { lo, hi } = constraint {
            if !(lo.is_finite() && hi >= lo) {
                return Err(Error::InvalidInput(format!("invalid box [{lo}, {hi}]")));
            }
        }
        Ok(Self { gram, linear, constraint })
    }

    /// Builds `EᵀE` and `Eᵀx`.
    pub fn from_least_squares(e: &DMatrix<f64>, x: &DVector<f64>, constraint: ConstraintKind) -> Result<Self> {
        if e.nrows() != x.len() {
            return Err(Error::DimensionMismatch("spectrum length".into()));
        }
        Self::new(e.tr_mul(e), e.tr_mul(x), constraint)
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.linear
    }

    pub fn constraint(&self) -> ConstraintKind {
        self.constraint
    }

    pub fn objective(&self, a: &DVector<f64>) -> f64 {
        0.5 * a.dot(&(&self.gram * a)) - self.linear.dot(a)
    }

    /// Largest violation of the KKT conditions at `a`.
    pub fn kkt_residual(&self, a: &DVector<f64>) -> f64 {
        let g = &self.gram * a - &self.linear;
        let k = a.len();
        match self.constraint {
            ConstraintKind::Simplex => {
                let free: Vec<usize> = (0..k).filter(|&i| a[i] > 0.0).collect();
                let nu = if free.is_empty() {
                    0.0
                } else {
                    -free.iter().map(|&i| g[i]).sum::<f64>() / free.len() as f64
                };
                let mut r = (a.sum() - 1.0).abs();
                for i in 0..k {
                    let mu = g[i] + nu;
                    r = r.max((-a[i]).max(0.0));
                    r = r.max(if a[i] > 0.0 { mu.abs() } else { (-mu).max(0.0) });
                }
                r
            }
            ConstraintKind::Box { lo, hi } => {
                let mut r: f64 = 0.0;
                for i in 0..k {
                    r = r.max((lo - a[i]).max(0.0)).max((a[i] - hi).max(0.0));
                    let v = if a[i] <= lo {
                        (-g[i]).max(0.0)
                    } else if a[i] >= hi {
                        g[i].max(0.0)
                    } else {
                        g[i].abs()
                    };
                    r = r.max(v);
                }
                r
            }
        }
    }
}

pub(crate) fn validate_gram(gram: &DMatrix<f64>) -> Result<()> {
    let k = gram.nrows();
    if k == 0 || gram.ncols() != k {
        return Err(Error::DimensionMismatch(format!("gram matrix is {}x{}", k, gram.ncols())));
    }
    for i in 0..k {
        for j in 0..i {
            if (gram[(i, j)] - gram[(j, i)]).abs() > SYMMETRY_TOL {
                return Err(Error::InvalidInput(format!("gram matrix not symmetric at ({i}, {j})")));
            }
        }
    }
    let min_eig = SymmetricEigen::new(gram.clone()).eigenvalues.min();
    if min_eig < -PSD_TOL {
        return Err(Error::NotPositiveSemidefinite { min_eigenvalue: min_eig });
    }
    Ok(())
}

/// Fully constrained least squares for one pixel.
pub fn solve_simplex_qp(p: &QpProblem) -> Result<DVector<f64>> {
    match p.constraint {
        ConstraintKind::Simplex => active_set(&p.gram, &p.linear, Bounds::simplex()).map(|(a, _)| a),
        ConstraintKind::Box { .. } => Err(Error::InvalidInput("solve_simplex_qp needs a simplex constraint".into())),
    }
}

pub fn solve_box_qp(p: &QpProblem) -> Result<DVector<f64>> {
    match p.constraint {
        ConstraintKind::Box { lo, hi } => {
            active_set(&p.gram, &p.linear, Bounds { lo, hi, sum_to_one: false }).map(|(a, _)| a)
        }
        ConstraintKind::Simplex => Err(Error::InvalidInput("solve_box_qp needs a box constraint".into())),
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Bounds {
    lo: f64,
    hi: f64,
    sum_to_one: bool,
}

impl Bounds {
    pub(crate) fn simplex() -> Self {
        Self { lo: 0.0, hi: f64::INFINITY, sum_to_one: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Free,
    Lower,
    Upper,
}

fn solve_dense(m: DMatrix<f64>, rhs: DVector<f64>) -> DVector<f64> {
    if let Some(x) = m.clone().full_piv_lu().solve(&rhs) {
        if x.iter().all(|v| v.is_finite()) {
            return x;
        }
    }
    SVD::new(m, true, true)
        .solve(&rhs, 1e-13)
        .unwrap_or_else(|_| DVector::zeros(rhs.len()))
}

/// Primal active-set method. Ties between blocking or releasable
/// constraints go to the lowest index. Also returns the iteration count.
pub(crate) fn active_set(gram: &DMatrix<f64>, linear: &DVector<f64>, b: Bounds) -> Result<(DVector<f64>, usize)> {
    let k = linear.len();
    let scale = gram.amax().max(linear.amax()).max(1.0);
    let tol = 1e-13 * scale;
    let mut status = vec![Status::Free; k];
    let mut a = if b.sum_to_one {
        DVector::from_element(k, 1.0 / k as f64)
    } else {
        DVector::from_fn(k, |_, _| 0.0_f64.clamp(b.lo, b.hi))
    };
    let max_iter = 100 * (k + 1);

    for iter in 0..max_iter {
        let g = gram * &a - linear;
        let free: Vec<usize> = (0..k).filter(|&i| status[i] == Status::Free).collect();
        let nf = free.len();

        let mut p = DVector::zeros(k);
        let mut nu = 0.0;
        if nf > 0 {
            let dim = if b.sum_to_one { nf + 1 } else { nf };
            let mut m = DMatrix::zeros(dim, dim);
            let mut rhs = DVector::zeros(dim);
            for (r, &i) in free.iter().enumerate() {
                for (c, &j) in free.iter().enumerate() {
                    m[(r, c)] = gram[(i, j)];
                }
                rhs[r] = -g[i];
                if b.sum_to_one {
                    m[(r, nf)] = 1.0;
                    m[(nf, r)] = 1.0;
                }
            }
            let sol = solve_dense(m, rhs);
            for (r, &i) in free.iter().enumerate() {
                p[i] = sol[r];
            }
            if b.sum_to_one {
                nu = sol[nf];
            }
        }

        let step_norm = p.amax();
        if step_norm <= 1e-14 * (1.0 + a.amax()) {
            // Stationary on the working set: check multipliers of the bound
            // constraints and release the most violated one.
            if b.sum_to_one && nf > 0 {
                nu = -free.iter().map(|&i| g[i]).sum::<f64>() / nf as f64;
            }
            let mut worst: Option<(usize, f64)> = None;
            for i in 0..k {
                let lambda = match status[i] {
                    Status::Free => continue,
                    Status::Lower => g[i] + nu,
                    Status::Upper => -(g[i] + nu),
                };
                if lambda < -tol && worst.map_or(true, |(_, w)| lambda < w) {
                    worst = Some((i, lambda));
                }
            }
            match worst {
                Some((i, _)) => status[i] = Status::Free,
                None => return Ok((finish(a, &status, b), iter + 1)),
            }
            continue;
        }

        let mut alpha = 1.0;
        let mut blocking: Option<(usize, Status)> = None;
        for &i in &free {
            let (limit, kind) = if p[i] < 0.0 {
                ((b.lo - a[i]) / p[i], Status::Lower)
            } else if p[i] > 0.0 && b.hi.is_finite() {
                ((b.hi - a[i]) / p[i], Status::Upper)
            } else {
                continue;
            };
            let limit = limit.max(0.0);
            if limit < alpha {
                alpha = limit;
                blocking = Some((i, kind));
            }
        }
        a.axpy(alpha, &p, 1.0);
        if let Some((i, kind)) = blocking {
            status[i] = kind;
            a[i] = if kind == Status::Lower { b.lo } else { b.hi };
        }
    }
    Err(Error::NoConvergence(max_iter))
}

fn finish(mut a: DVector<f64>, status: &[Status], b: Bounds) -> DVector<f64> {
    for (i, s) in status.iter().enumerate() {
        match s {
            Status::Lower => a[i] = b.lo,
            Status::Upper => a[i] = b.hi,
            Status::Free => a[i] = a[i].clamp(b.lo, b.hi),
        }
    }
    if b.sum_to_one {
        // absorb rounding drift into the largest free component
        let drift = 1.0 - a.sum();
        if let Some(i) = (0..a.len()).filter(|&i| status[i] == Status::Free).max_by(|&i, &j| a[i].total_cmp(&a[j])) {
            a[i] += drift;
        }
    }
    a
}

/// Orthogonal factorization of an endmember matrix, reused across solves.
#[derive(Debug, Clone)]
pub struct LeastSquaresFactor {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    condition: f64,
}

impl LeastSquaresFactor {
    pub fn new(e: &DMatrix<f64>) -> Result<Self> {
        let (p, k) = e.shape();
        if p < k {
            return Err(Error::DimensionMismatch(format!("{p} bands cannot resolve {k} endmembers")));
        }
        let sv = SVD::new(e.clone(), false, false).singular_values;
        let (smax, smin) = (sv.max(), sv.min());
        if smin <= smax * f64::EPSILON * p.max(k) as f64 {
            return Err(Error::RankDeficient { smallest: smin });
        }
        let qr = QR::new(e.clone());
        Ok(Self { q: qr.q(), r: qr.r(), condition: smax / smin })
    }

    /// Ratio of extreme singular values of `E`.
    pub fn condition_number(&self) -> f64 {
        self.condition
    }

    pub fn is_ill_conditioned(&self) -> bool {
        self.condition > CONDITION_WARNING
    }

    /// Unconstrained least-squares coefficients `(EᵀE)⁻¹EᵀX`.
    pub fn solve(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.q.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "image has {} bands, endmembers {}",
                x.nrows(),
                self.q.nrows()
            )));
        }
        let qtx = self.q.tr_mul(x);
        self.r
            .solve_upper_triangular(&qtx)
            .ok_or(Error::RankDeficient { smallest: 0.0 })
    }
}

/// `max{(EᵀE)⁻¹EᵀX, 0}` clipped above at `hi`.
pub fn solve_nnls_clipped(e: &DMatrix<f64>, x: &DMatrix<f64>, hi: f64) -> Result<DMatrix<f64>> {
    let factor = LeastSquaresFactor::new(e)?;
    Ok(factor.solve(x)?.map(|v| v.clamp(0.0, hi)))
}

/// Lawson–Hanson non-negative least squares, `min ‖A c − b‖` with `c ≥ 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let (m, n) = a.shape();
    if b.len() != m {
        return Err(Error::DimensionMismatch("nnls right-hand side".into()));
    }
    let tol = 10.0 * f64::EPSILON * a.amax().max(1.0) * (m.max(n) as f64);
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let max_outer = 3 * n.max(m) + 10;

    let ls_on = |set: &[usize]| -> DVector<f64> {
        let sub = DMatrix::from_fn(m, set.len(), |r, c| a[(r, set[c])]);
        SVD::new(sub, true, true)
            .solve(b, 1e-12)
            .unwrap_or_else(|_| DVector::zeros(set.len()))
    };

    for _ in 0..max_outer {
        let w = a.tr_mul(&(b - a * &x));
        let cand = (0..n)
            .filter(|&j| !passive[j])
            .fold(None::<(usize, f64)>, |best, j| match best {
                Some((_, bw)) if w[j] <= bw => best,
                _ => Some((j, w[j])),
            });
        match cand {
            Some((j, wj)) if wj > tol => passive[j] = true,
            _ => return Ok(x),
        }
        for _ in 0..(3 * n + 10) {
            let set: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let s = ls_on(&set);
            if s.iter().all(|&v| v > 0.0) {
                for (c, &j) in set.iter().enumerate() {
                    x[j] = s[c];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (c, &j) in set.iter().enumerate() {
                if s[c] <= 0.0 {
                    let t = x[j] / (x[j] - s[c]);
                    if t < alpha {
                        alpha = t;
                    }
                }
            }
            for (c, &j) in set.iter().enumerate() {
                x[j] += alpha * (s[c] - x[j]);
                if x[j] <= tol {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
        }
    }
    Err(Error::NoConvergence(max_outer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_problem(x: &[f64]) -> QpProblem {
        let k = x.len();
        QpProblem::new(DMatrix::identity(k, k), DVector::from_column_slice(x), ConstraintKind::Simplex).unwrap()
    }

    #[test]
    fn simplex_point_already_feasible() {
        let a = solve_simplex_qp(&identity_problem(&[0.3, 0.7])).unwrap();
        assert!((a[0] - 0.3).abs() < 1e-12 && (a[1] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn simplex_projection_onto_vertex() {
        let a = solve_simplex_qp(&identity_problem(&[2.0, 0.0])).unwrap();
        assert_eq!(a.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn rejects_indefinite_gram() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let r = QpProblem::new(g, DVector::zeros(2), ConstraintKind::Simplex);
        assert!(matches!(r, Err(Error::NotPositiveSemidefinite { .. })));
    }

    #[test]
    fn rejects_asymmetric_gram() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(QpProblem::new(g, DVector::zeros(2), ConstraintKind::Simplex).is_err());
    }

    fn random_instance(rng: &mut ChaCha8Rng, p: usize, k: usize) -> (DMatrix<f64>, DVector<f64>) {
        let e = DMatrix::from_fn(p, k, |_, _| rng.random::<f64>());
        let x = DVector::from_fn(p, |_, _| rng.random::<f64>() * 1.5);
        (e, x)
    }

    // Grid over barycentric coordinates at resolution 1e-3.
    fn grid_min(p: &QpProblem) -> f64 {
        let steps = 1000;
        let mut best = f64::INFINITY;
        for i in 0..=steps {
            for j in 0..=(steps - i) {
                let a = DVector::from_vec(vec![
                    i as f64 / steps as f64,
                    j as f64 / steps as f64,
                    (steps - i - j) as f64 / steps as f64,
                ]);
                best = best.min(p.objective(&a));
            }
        }
        best
    }

    #[test]
    fn simplex_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (e, x) = random_instance(&mut rng, 5, 3);
        let p = QpProblem::from_least_squares(&e, &x, ConstraintKind::Simplex).unwrap();
        let a = solve_simplex_qp(&p).unwrap();
        let gap = p.objective(&a) - grid_min(&p);
        assert!(gap <= 1e-12, "solver worse than grid: {gap}");
        assert!(gap > -1e-3, "grid better than expected: {gap}");
        assert!(p.kkt_residual(&a) <= 1e-8);
    }

    #[test]
    fn simplex_interior_matches_lagrange_closed_form() {
        // E close to identity and x near the simplex centre keep all
        // components strictly positive.
        let e = DMatrix::from_row_slice(4, 3, &[1.0, 0.1, 0.0, 0.0, 1.0, 0.2, 0.1, 0.0, 1.0, 0.3, 0.3, 0.3]);
        let x = DVector::from_vec(vec![0.4, 0.3, 0.35, 0.3]);
        let p = QpProblem::from_least_squares(&e, &x, ConstraintKind::Simplex).unwrap();
        let a = solve_simplex_qp(&p).unwrap();
        assert!(a.iter().all(|&v| v > 0.0));
        let gi = p.gram().clone().try_inverse().unwrap();
        let ones = DVector::from_element(3, 1.0);
        let gic = &gi * p.linear();
        let gi1 = &gi * &ones;
        let nu = (ones.dot(&gic) - 1.0) / ones.dot(&gi1);
        let closed = gic - gi1 * nu;
        assert!((a - closed).amax() < 1e-8);
    }

    #[test]
    fn simplex_output_is_exactly_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let (e, x) = random_instance(&mut rng, 6, 4);
            let p = QpProblem::from_least_squares(&e, &x, ConstraintKind::Simplex).unwrap();
            let a = solve_simplex_qp(&p).unwrap();
            assert!(a.iter().all(|&v| v >= 0.0));
            assert!((a.sum() - 1.0).abs() <= 1e-12);
            assert!(p.kkt_residual(&a) <= 1e-8, "kkt {}", p.kkt_residual(&a));
            assert_eq!(a, solve_simplex_qp(&p).unwrap());
        }
    }

    #[test]
    fn box_qp_clamps_identity() {
        let p = QpProblem::new(
            DMatrix::identity(3, 3),
            DVector::from_vec(vec![-0.5, 0.4, 3.0]),
            ConstraintKind::Box { lo: 0.0, hi: 1.0 },
        )
        .unwrap();
        let a = solve_box_qp(&p).unwrap();
        assert_eq!(a.as_slice(), &[0.0, 0.4, 1.0]);
        assert!(solve_simplex_qp(&p).is_err());
    }

    #[test]
    fn nnls_clipped_identity() {
        let e = DMatrix::identity(3, 3);
        let x = DMatrix::from_row_slice(3, 2, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        assert!((solve_nnls_clipped(&e, &x, f64::INFINITY).unwrap() - &x).amax() < 1e-15);
        let mut y = x.clone();
        y[(1, 1)] = -0.1;
        let r = solve_nnls_clipped(&e, &y, f64::INFINITY).unwrap();
        assert_eq!(r[(1, 1)], 0.0);
        let r = solve_nnls_clipped(&e, &x, 0.35).unwrap();
        assert_eq!(r[(2, 1)], 0.35);
    }

    #[test]
    fn nnls_clipped_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let e = DMatrix::from_fn(6, 3, |_, _| rng.random::<f64>() + 0.1);
        let x = DMatrix::from_fn(6, 4, |_, _| rng.random::<f64>() - 0.2);
        // normal equations solved by Cholesky, an independent route
        let chol = e.tr_mul(&e).cholesky().unwrap();
        let oracle = chol.solve(&e.tr_mul(&x)).map(|v| v.max(0.0));
        let got = solve_nnls_clipped(&e, &x, f64::INFINITY).unwrap();
        assert!((got - oracle).amax() < 1e-10);
    }

    #[test]
    fn nnls_clipped_orthonormal_is_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let m = DMatrix::from_fn(5, 2, |_, _| rng.random::<f64>());
        let q = QR::new(m).q();
        let x = DMatrix::from_fn(5, 3, |_, _| rng.random::<f64>() - 0.5);
        let expected = q.tr_mul(&x).map(|v| v.max(0.0));
        let got = solve_nnls_clipped(&q, &x, f64::INFINITY).unwrap();
        assert!((got - expected).amax() < 1e-12);
    }

    #[test]
    fn rank_deficient_names_singular_value() {
        let e = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        match LeastSquaresFactor::new(&e) {
            Err(Error::RankDeficient { smallest }) => assert!(smallest < 1e-12),
            other => panic!("expected rank error, got {other:?}"),
        }
    }

    #[test]
    fn condition_number_reported() {
        let e = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-3]);
        let f = LeastSquaresFactor::new(&e).unwrap();
        assert!((f.condition_number() - 1e3).abs() < 1e-6);
        assert!(!f.is_ill_conditioned());
    }

    #[test]
    fn lawson_hanson_basic() {
        let a = DMatrix::identity(2, 2);
        let b = DVector::from_vec(vec![1.0, -1.0]);
        let c = nnls(&a, &b).unwrap();
        assert_eq!(c.as_slice(), &[1.0, 0.0]);

        // wide matrix: b in the cone of the columns
        let a = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.5, 0.2, 0.0, 1.0, 0.5, 0.8]);
        let b = DVector::from_vec(vec![0.3, 0.7]);
        let c = nnls(&a, &b).unwrap();
        assert!(c.iter().all(|&v| v >= 0.0));
        assert!((&a * &c - &b).norm() < 1e-12);
    }
}
