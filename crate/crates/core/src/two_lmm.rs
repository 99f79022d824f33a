//! Doubly scaled mixing model: `X ≈ E · diag(s_E) · A_s` with box bounds on
//! both factors, solved by alternating least squares or by L-BFGS using the
//! ALS displacement as a nonlinear preconditioner.

use std::collections::VecDeque;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::cls::LeastSquaresFactor;
use crate::error::{Error, Result};
use crate::hsi::{normalize_abundances, rmse_a, AbundanceMatrix, EndmemberMatrix, HsiImage};
use crate::result::{check_shapes, SolverTrace, TraceEntry, UnmixResult};

/// Where the line-search cost test is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcceptancePoint {
    /// At `z + γp` before projecting onto the box.
    PreClip,
    /// At the projected point.
    PostClip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoLmmConfig {
    pub lower: f64,
    pub upper: f64,
    pub eps_a: f64,
    pub eps_s: f64,
    pub max_iter: usize,
    /// Number of stored curvature pairs. Zero turns L-BFGS into a damped ALS.
    pub memory: usize,
    pub initial_step: f64,
    pub shrink: f64,
    pub max_halvings: usize,
    pub acceptance_point: AcceptancePoint,
    /// Skip the line search and always take `γ = 1`.
    pub force_unit_step: bool,
}

impl Default for TwoLmmConfig {
    fn default() -> Self {
        Self {
            lower: 0.2,
            upper: 5.0,
            eps_a: 1e-6,
            eps_s: 1e-6,
            max_iter: 500,
            memory: 5,
            initial_step: 1.0,
            shrink: 0.5,
            max_halvings: 30,
            acceptance_point: AcceptancePoint::PreClip,
            force_unit_step: false,
        }
    }
}

impl TwoLmmConfig {
    /// Symmetric bounds `[1/α, α]`.
    pub fn with_alpha(alpha: f64) -> Self {
        Self { lower: 1.0 / alpha, upper: alpha, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lower > 0.0 && self.upper >= self.lower) {
            return Err(Error::InvalidInput(format!("invalid bounds [{}, {}]", self.lower, self.upper)));
        }
        if !(self.eps_a > 0.0 && self.eps_s > 0.0) {
            return Err(Error::InvalidInput("termination thresholds must be positive".into()));
        }
        if !(self.initial_step > 0.0 && self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::InvalidInput("invalid line-search parameters".into()));
        }
        Ok(())
    }
}

/// Solver variables: scaled abundances (`K × N`) and endmember scalings.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLmmState {
    pub a_s: DMatrix<f64>,
    pub s_e: DVector<f64>,
}

impl TwoLmmState {
    /// `A_s = 1/K`, `s_E = 1` (moved into the bounds if necessary).
    pub fn uniform(k: usize, n: usize, config: &TwoLmmConfig) -> Self {
        Self {
            a_s: DMatrix::from_element(k, n, (1.0 / k as f64).min(config.upper)),
            s_e: DVector::from_element(k, 1.0f64.clamp(config.lower, config.upper)),
        }
    }

    /// `vec(A_s)` (column-major) followed by `s_E`.
    pub fn pack(&self) -> DVector<f64> {
        let mut z = DVector::zeros(self.a_s.len() + self.s_e.len());
        z.as_mut_slice()[..self.a_s.len()].copy_from_slice(self.a_s.as_slice());
        z.as_mut_slice()[self.a_s.len()..].copy_from_slice(self.s_e.as_slice());
        z
    }

    pub fn unpack(z: &DVector<f64>, k: usize, n: usize) -> Result<Self> {
        if z.len() != k * n + k {
            return Err(Error::DimensionMismatch(format!("packed length {} for K={k}, N={n}", z.len())));
        }
        Ok(Self {
            a_s: DMatrix::from_column_slice(k, n, &z.as_slice()[..k * n]),
            s_e: DVector::from_column_slice(&z.as_slice()[k * n..]),
        })
    }

    fn is_feasible(&self, lower: f64, upper: f64) -> bool {
        self.a_s.iter().all(|&v| (0.0..=upper).contains(&v)) && self.s_e.iter().all(|&v| (lower..=upper).contains(&v))
    }

    fn clipped(mut self, lower: f64, upper: f64) -> Self {
        self.a_s.apply(|v| *v = v.clamp(0.0, upper));
        self.s_e.apply(|v| *v = v.clamp(lower, upper));
        self
    }
}

/// Rolling buffer of curvature pairs `(Δz, Δg)` where `g = −𝒫(z)`.
#[derive(Debug, Clone, Default)]
pub struct LbfgsHistory {
    capacity: usize,
    pairs: VecDeque<(DVector<f64>, DVector<f64>, f64)>,
}

impl LbfgsHistory {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, pairs: VecDeque::with_capacity(capacity) }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }

    /// Stores the pair unless its curvature is too small. Returns whether
    /// it was kept.
    pub fn push(&mut self, dz: DVector<f64>, dg: DVector<f64>) -> bool {
        if self.capacity == 0 {
            return false;
        }
        let curv = dz.dot(&dg);
        if !(curv > 1e-12 * dz.norm() * dg.norm()) {
            return false;
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back((dz, dg, 1.0 / curv));
        true
    }

    /// Two-loop recursion: returns `H·q` for the implicit inverse Hessian.
    pub fn apply(&self, q: &DVector<f64>) -> DVector<f64> {
        let mut q = q.clone();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * s.dot(&q);
            q.axpy(-a, y, 1.0);
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            q *= s.dot(y) / y.dot(y);
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * y.dot(&q);
            q.axpy(a - b, s, 1.0);
        }
        q
    }
}

/// Data and precomputed factorizations for one unmixing problem.
#[derive(Debug, Clone)]
pub struct TwoLmm<'a> {
    x: &'a HsiImage,
    e: &'a EndmemberMatrix,
    config: TwoLmmConfig,
    /// `(EᵀE)⁻¹EᵀX`
    ls: DMatrix<f64>,
    /// `EᵀX`
    cross: DMatrix<f64>,
    /// `EᵀE`
    gram: DMatrix<f64>,
    truth: Option<&'a AbundanceMatrix>,
    warnings: Vec<String>,
}

impl<'a> TwoLmm<'a> {
    pub fn new(x: &'a HsiImage, e: &'a EndmemberMatrix, config: TwoLmmConfig) -> Result<Self> {
        check_shapes(x, e)?;
        config.validate()?;
        let factor = LeastSquaresFactor::new(e.data())?;
        let mut warnings = Vec::new();
        if factor.is_ill_conditioned() {
            warnings.push(format!("endmember matrix condition number {:e}", factor.condition_number()));
        }
        Ok(Self {
            ls: factor.solve(x.data())?,
            cross: e.data().tr_mul(x.data()),
            gram: e.data().tr_mul(e.data()),
            x,
            e,
            config,
            truth: None,
            warnings,
        })
    }

    /// Records abundance RMSE against `truth` at every iteration.
    pub fn with_truth(mut self, truth: &'a AbundanceMatrix) -> Result<Self> {
        if truth.data().shape() != (self.k(), self.n()) {
            return Err(Error::DimensionMismatch("ground-truth abundances".into()));
        }
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn config(&self) -> &TwoLmmConfig {
        &self.config
    }

    fn k(&self) -> usize {
        self.e.count()
    }

    fn n(&self) -> usize {
        self.x.pixels()
    }

    fn check_state(&self, s: &TwoLmmState) -> Result<()> {
        check_state(self.x, self.e, s)
    }

    pub fn cost(&self, s: &TwoLmmState) -> Result<f64> {
        cost(self.x, self.e, s)
    }

    pub fn gradient(&self, s: &TwoLmmState) -> Result<DVector<f64>> {
        gradient(self.x, self.e, s)
    }

    /// Abundance block update for fixed `s_E`.
    pub fn als_update_a(&self, s_e: &DVector<f64>) -> Result<DMatrix<f64>> {
        if s_e.len() != self.k() {
            return Err(Error::DimensionMismatch("s_E length".into()));
        }
        if let Some(i) = s_e.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::InvalidInput(format!("s_E[{i}] = {} is not positive", s_e[i])));
        }
        let upper = self.config.upper;
        let mut a = self.ls.clone();
        for (k, mut row) in a.row_iter_mut().enumerate() {
            let inv = 1.0 / s_e[k];
            row.apply(|v| *v = (*v * inv).clamp(0.0, upper));
        }
        Ok(a)
    }

    /// One Gauss–Seidel sweep over the endmember scalings in ascending
    /// order. Endmembers with identically zero abundance keep their current
    /// scaling and are listed in the second return value.
    pub fn als_update_se(&self, a_s: &DMatrix<f64>, s_e: &DVector<f64>) -> Result<(DVector<f64>, Vec<usize>)> {
        let k = self.k();
        if a_s.shape() != (k, self.n()) || s_e.len() != k {
            return Err(Error::DimensionMismatch("state shape".into()));
        }
        let outer = a_s * a_s.transpose();
        let mut s = s_e.clone();
        let mut absent = Vec::new();
        for i in 0..k {
            let denom = self.gram[(i, i)] * outer[(i, i)];
            if outer[(i, i)] == 0.0 || denom == 0.0 {
                absent.push(i);
                continue;
            }
            let mut num = a_s.row(i).dot(&self.cross.row(i));
            for j in 0..k {
                if j != i {
                    num -= self.gram[(i, j)] * s[j] * outer[(i, j)];
                }
            }
            s[i] = (num / denom).clamp(self.config.lower, self.config.upper);
        }
        Ok((s, absent))
    }

    fn als_step(&self, s: &TwoLmmState) -> Result<(TwoLmmState, Vec<usize>)> {
        let a_s = self.als_update_a(&s.s_e)?;
        let (s_e, absent) = self.als_update_se(&a_s, &s.s_e)?;
        Ok((TwoLmmState { a_s, s_e }, absent))
    }

    /// `𝒫(z) = z⁺ − z` for one full ALS iteration from `s`.
    pub fn precondition(&self, s: &TwoLmmState) -> Result<DVector<f64>> {
        self.check_state(s)?;
        Ok(self.als_step(s)?.0.pack() - s.pack())
    }

    fn init_state(&self, init: Option<TwoLmmState>) -> Result<TwoLmmState> {
        let s = init.unwrap_or_else(|| TwoLmmState::uniform(self.k(), self.n(), &self.config));
        self.check_state(&s)?;
        if !s.is_feasible(self.config.lower, self.config.upper) {
            return Err(Error::InvalidInput("initial state violates the box bounds".into()));
        }
        Ok(s)
    }

    fn abundance_error(&self, s: &TwoLmmState) -> Result<Option<f64>> {
        match self.truth {
            Some(t) => Ok(Some(rmse_a(t, &normalize_abundances(&s.a_s)?.abundances)?)),
            None => Ok(None),
        }
    }

    fn finish(&self, s: TwoLmmState, trace: SolverTrace) -> Result<UnmixResult> {
        let mut warnings = self.warnings.clone();
        if !trace.absent_endmembers.is_empty() {
            warnings.push(format!("endmembers {:?} absent from the scene", trace.absent_endmembers));
        }
        if trace.stalled {
            warnings.push("line search stalled: no acceptable step, not even the ALS point".to_string());
        }
        let iterations = trace.iterations();
        UnmixResult::from_scaled(self.x, self.e, &s.a_s, s.s_e, trace, iterations, warnings)
    }

    /// Plain alternation of the two block updates.
    pub fn solve_als(&self, init: Option<TwoLmmState>) -> Result<UnmixResult> {
        let start = Instant::now();
        let mut state = self.init_state(init)?;
        let mut cost = self.cost(&state)?;
        let mut trace = SolverTrace { initial_cost: cost, ..SolverTrace::default() };
        if !cost.is_finite() {
            return Err(Error::NonFiniteCost(0));
        }
        for t in 1..=self.config.max_iter {
            let (next, absent) = self.als_step(&state)?;
            merge_absent(&mut trace.absent_endmembers, absent);
            let new_cost = self.cost(&next)?;
            if !new_cost.is_finite() {
                return Err(Error::NonFiniteCost(t));
            }
            let (ra, rs) = relative_changes(&state, &next);
            trace.entries.push(TraceEntry {
                iteration: t,
                cost_start: cost,
                cost_trial: new_cost,
                cost: new_cost,
                step: 1.0,
                halvings: 0,
                rel_change_a: ra,
                rel_change_s: rs,
                elapsed: start.elapsed().as_secs_f64(),
                rmse_a: self.abundance_error(&next)?,
                fallback: false,
                restarted: false,
            });
            state = next;
            cost = new_cost;
            if ra <= self.config.eps_a && rs <= self.config.eps_s {
                trace.converged = true;
                break;
            }
        }
        self.finish(state, trace)
    }

    /// L-BFGS on the packed variables with the ALS displacement standing in
    /// for the negative gradient, non-monotone backtracking and projection
    /// of each accepted step onto the box.
    pub fn solve_lbfgs(&self, init: Option<TwoLmmState>) -> Result<UnmixResult> {
        let start = Instant::now();
        let cfg = &self.config;
        let (k, n) = (self.k(), self.n());
        let mut state = self.init_state(init)?;
        let mut z = state.pack();
        let mut cost = self.cost(&state)?;
        if !cost.is_finite() {
            return Err(Error::NonFiniteCost(0));
        }
        let mut trace = SolverTrace { initial_cost: cost, ..SolverTrace::default() };
        let mut history = LbfgsHistory::new(cfg.memory);

        let (mut als_next, absent) = self.als_step(&state)?;
        merge_absent(&mut trace.absent_endmembers, absent);
        let mut dir = als_next.pack() - &z;

        for t in 1..=cfg.max_iter {
            let mut restarted = false;
            let p = if history.is_empty() {
                dir.clone()
            } else {
                let p = history.apply(&dir);
                let g = self.gradient(&state)?;
                if g.dot(&p) >= 0.0 {
                    history.clear();
                    restarted = true;
                    dir.clone()
                } else {
                    p
                }
            };

            let threshold = (1.0 + (-(t as f64)).exp()) * cost;
            let mut gamma = cfg.initial_step;
            let mut halvings = 0;
            let mut fallback = false;
            let (trial, trial_cost) = loop {
                let candidate = if history.is_empty() && gamma == 1.0 {
                    // the unit step along 𝒫 is exactly the ALS iterate
                    als_next.clone()
                } else {
                    TwoLmmState::unpack(&(&z + &p * gamma), k, n)?
                };
                let test_cost = match cfg.acceptance_point {
                    AcceptancePoint::PreClip => self.cost(&candidate)?,
                    AcceptancePoint::PostClip => self.cost(&candidate.clone().clipped(cfg.lower, cfg.upper))?,
                };
                if cfg.force_unit_step || test_cost <= threshold {
                    break (candidate, test_cost);
                }
                if halvings == cfg.max_halvings {
                    history.clear();
                    fallback = true;
                    let c = match cfg.acceptance_point {
                        AcceptancePoint::PreClip => self.cost(&als_next)?,
                        AcceptancePoint::PostClip => self.cost(&als_next.clone().clipped(cfg.lower, cfg.upper))?,
                    };
                    if c <= threshold {
                        gamma = 1.0;
                        break (als_next.clone(), c);
                    }
                    // the ALS point from a non-ALS iterate can raise the cost; stay put
                    gamma = 0.0;
                    break (state.clone(), cost);
                }
                gamma *= cfg.shrink;
                halvings += 1;
            };

            let next = if trial.is_feasible(cfg.lower, cfg.upper) { trial } else { trial.clipped(cfg.lower, cfg.upper) };
            let new_cost = self.cost(&next)?;
            if !new_cost.is_finite() || !trial_cost.is_finite() {
                return Err(Error::NonFiniteCost(t));
            }
            let (ra, rs) = relative_changes(&state, &next);

            if gamma == 0.0 {
                trace.entries.push(TraceEntry {
                    iteration: t,
                    cost_start: cost,
                    cost_trial: trial_cost,
                    cost: new_cost,
                    step: 0.0,
                    halvings,
                    rel_change_a: ra,
                    rel_change_s: rs,
                    elapsed: start.elapsed().as_secs_f64(),
                    rmse_a: self.abundance_error(&next)?,
                    fallback,
                    restarted,
                });
                trace.stalled = true;
                break;
            }

            let (next_als, absent) = self.als_step(&next)?;
            merge_absent(&mut trace.absent_endmembers, absent);
            let next_z = next.pack();
            let next_als_z = next_als.pack();
            let next_dir = &next_als_z - &next_z;
            history.push(&next_z - &z, &dir - &next_dir);

            trace.entries.push(TraceEntry {
                iteration: t,
                cost_start: cost,
                cost_trial: trial_cost,
                cost: new_cost,
                step: gamma,
                halvings,
                rel_change_a: ra,
                rel_change_s: rs,
                elapsed: start.elapsed().as_secs_f64(),
                rmse_a: self.abundance_error(&next)?,
                fallback,
                restarted,
            });

            state = next;
            z = next_z;
            cost = new_cost;
            als_next = next_als;
            dir = next_dir;
            if ra <= cfg.eps_a && rs <= cfg.eps_s {
                trace.converged = true;
                break;
            }
        }
        self.finish(state, trace)
    }
}

fn merge_absent(into: &mut Vec<usize>, new: Vec<usize>) {
    for i in new {
        if !into.contains(&i) {
            into.push(i);
        }
    }
    into.sort_unstable();
}

fn relative_changes(old: &TwoLmmState, new: &TwoLmmState) -> (f64, f64) {
    let rel = |d: f64, base: f64| if base > 0.0 { d / base } else { d };
    (
        rel((&new.a_s - &old.a_s).norm(), old.a_s.norm()),
        rel((&new.s_e - &old.s_e).norm(), old.s_e.norm()),
    )
}

fn check_state(x: &HsiImage, e: &EndmemberMatrix, s: &TwoLmmState) -> Result<()> {
    let (k, n) = (e.count(), x.pixels());
    if x.bands() != e.bands() {
        return Err(Error::DimensionMismatch(format!("image has {} bands, endmembers {}", x.bands(), e.bands())));
    }
    if s.a_s.shape() != (k, n) || s.s_e.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "state is {:?} + {}, problem needs {k}x{n} + {k}",
            s.a_s.shape(),
            s.s_e.len(),
        )));
    }
    Ok(())
}

/// `E · diag(s_E) · A_s − X`
fn residual(x: &HsiImage, e: &EndmemberMatrix, s: &TwoLmmState) -> DMatrix<f64> {
    let mut scaled = s.a_s.clone();
    for (k, mut row) in scaled.row_iter_mut().enumerate() {
        row *= s.s_e[k];
    }
    e.data() * scaled - x.data()
}

/// `‖X − E·diag(s_E)·A_s‖_F²`
pub fn cost(x: &HsiImage, e: &EndmemberMatrix, state: &TwoLmmState) -> Result<f64> {
    check_state(x, e, state)?;
    Ok(residual(x, e, state).norm_squared())
}

/// Gradient of [`cost`] in packed layout: `2·diag(s_E)·EᵀR` for the
/// abundances, then `2·Σₙ (EᵀR)ₖₙ A_s,ₖₙ` for each scaling.
pub fn gradient(x: &HsiImage, e: &EndmemberMatrix, state: &TwoLmmState) -> Result<DVector<f64>> {
    check_state(x, e, state)?;
    let er = e.data().tr_mul(&residual(x, e, state));
    let (k, n) = (e.count(), x.pixels());
    let mut g = DVector::zeros(k * n + k);
    for j in 0..n {
        for i in 0..k {
            g[j * k + i] = 2.0 * state.s_e[i] * er[(i, j)];
        }
    }
    for i in 0..k {
        g[k * n + i] = 2.0 * er.row(i).dot(&state.a_s.row(i));
    }
    Ok(g)
}

pub fn solve_als(x: &HsiImage, e: &EndmemberMatrix, config: &TwoLmmConfig, init: Option<TwoLmmState>) -> Result<UnmixResult> {
    TwoLmm::new(x, e, config.clone())?.solve_als(init)
}

pub fn solve_lbfgs(x: &HsiImage, e: &EndmemberMatrix, config: &TwoLmmConfig, init: Option<TwoLmmState>) -> Result<UnmixResult> {
    TwoLmm::new(x, e, config.clone())?.solve_lbfgs(init)
}
