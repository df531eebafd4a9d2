//! Grid-initialized damped Newton minimization of `E(x)`.
//!
//! The iteration is `x_{k+1} = x_k − γ H̃⁻¹ ∇E(x_k)` where `H̃ = ∇²E + λI`.
//! `λ` stays zero whenever the pure Newton direction is a descent direction,
//! and otherwise starts at `λ₀` and doubles. The step length `γ` is halved
//! (at most [`MAX_BACKTRACKS`] times) while the trial point leaves `Ω` or
//! increases `E`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::calculus::{derivatives, Derivatives};
use crate::error::{Error, Result};
use crate::frame::{error_value, FrameFamily, Measurement, ParameterPoint};
use crate::scalar::{is_finite, lit, to_f64, Real};

pub const MAX_BACKTRACKS: usize = 20;

/// Largest admissible Hessian shift relative to `‖∇²E‖`.
pub const MAX_SHIFT_RATIO: f64 = 1e12;

/// Rectangular grid of parameter points.
///
/// Coordinate `p` takes `counts[p]` equispaced values from `lower[p]` to
/// `upper[p]` inclusive; a count of one places the single value at `lower[p]`.
/// Points are enumerated in lexicographic index order with the first
/// coordinate most significant.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec<T: Real> {
    lower: DVector<T>,
    upper: DVector<T>,
    counts: Vec<usize>,
}

impl<T: Real> GridSpec<T> {
    pub fn new(lower: DVector<T>, upper: DVector<T>, counts: Vec<usize>) -> Result<Self> {
        if lower.len() != upper.len() || lower.len() != counts.len() {
            return Err(Error::DimensionMismatch {
                what: "grid bounds",
                expected: lower.len(),
                found: if upper.len() != lower.len() { upper.len() } else { counts.len() },
            });
        }
        if lower.is_empty() {
            return Err(Error::Invalid("grid must have at least one axis".into()));
        }
        for p in 0..lower.len() {
            if !(is_finite(lower[p]) && is_finite(upper[p])) {
                return Err(Error::NonFinite("grid bounds"));
            }
            if lower[p] >= upper[p] {
                return Err(Error::Invalid(format!(
                    "grid lower bound must be below upper bound on axis {p} ({} >= {})",
                    to_f64(lower[p]),
                    to_f64(upper[p])
                )));
            }
            if counts[p] == 0 {
                return Err(Error::Invalid(format!("grid count on axis {p} must be positive")));
            }
        }
        Ok(Self { lower, upper, counts })
    }

    pub fn from_slices(lower: &[T], upper: &[T], counts: &[usize]) -> Result<Self> {
        Self::new(
            DVector::from_column_slice(lower),
            DVector::from_column_slice(upper),
            counts.to_vec(),
        )
    }

    /// Square grid `[lo, hi]^dim` with `count` points per axis.
    pub fn uniform(dim: usize, lo: T, hi: T, count: usize) -> Result<Self> {
        Self::new(
            DVector::from_element(dim, lo),
            DVector::from_element(dim, hi),
            vec![count; dim],
        )
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn lower(&self) -> &DVector<T> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<T> {
        &self.upper
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.counts.iter().product()
    }

    /// Per-axis indices of flat index `flat`.
    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for p in (0..self.dim()).rev() {
            idx[p] = flat % self.counts[p];
            flat /= self.counts[p];
        }
        idx
    }

    pub fn coords(&self, flat: usize) -> DVector<T> {
        let idx = self.multi_index(flat);
        DVector::from_fn(self.dim(), |p, _| {
            if self.counts[p] == 1 {
                self.lower[p]
            } else {
                let frac = lit::<T>(idx[p] as f64) / lit::<T>((self.counts[p] - 1) as f64);
                self.lower[p] + (self.upper[p] - self.lower[p]) * frac
            }
        })
    }

    pub fn point(&self, flat: usize) -> ParameterPoint<T> {
        ParameterPoint::new(self.coords(flat)).expect("grid coordinates are finite")
    }

    pub fn points(&self) -> impl Iterator<Item = ParameterPoint<T>> + '_ {
        (0..self.total()).map(|i| self.point(i))
    }
}

/// `E` at every grid point, `None` outside `Ω`. Evaluated in parallel; the
/// output is in grid order.
pub fn evaluate_grid<T: Real, F: FrameFamily<T> + ?Sized>(
    family: &F,
    w: &Measurement<T>,
    grid: &GridSpec<T>,
) -> Result<Vec<Option<T>>> {
    if grid.dim() != family.dims().p {
        return Err(Error::DimensionMismatch {
            what: "grid dimension",
            expected: family.dims().p,
            found: grid.dim(),
        });
    }
    w.expect_len(family.dims().n)?;
    Ok((0..grid.total())
        .into_par_iter()
        .map(|i| {
            let x = grid.point(i);
            if family.contains(&x) {
                error_value(family, &x, w).ok()
            } else {
                None
            }
        })
        .collect())
}

/// Index and value of the smallest entry, earliest index on ties.
pub(crate) fn argmin<T: Real>(values: &[Option<T>]) -> Option<(usize, T)> {
    values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .fold(None, |best, (i, v)| match best {
            Some((_, b)) if b <= v => best,
            _ => Some((i, v)),
        })
}

/// In-domain grid point with the smallest `E`.
pub fn grid_search<T: Real, F: FrameFamily<T> + ?Sized>(
    family: &F,
    w: &Measurement<T>,
    grid: &GridSpec<T>,
) -> Result<ParameterPoint<T>> {
    let values = evaluate_grid(family, w, grid)?;
    let (index, _) = argmin(&values).ok_or(Error::EmptyDomain)?;
    Ok(grid.point(index))
}

/// Newton solver settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig<T: Real> {
    /// Initial step length `γ ∈ (0, 1]`.
    pub step_size: T,
    pub max_iters: usize,
    /// Stop once `‖∇E‖ < grad_tol`.
    pub grad_tol: T,
    /// Stop once `‖x_{k+1} − x_k‖ < step_tol`.
    pub step_tol: T,
    /// First non-zero Hessian shift tried when the Newton direction fails.
    pub regularization: T,
    pub grid: GridSpec<T>,
}

impl<T: Real> SolverConfig<T> {
    /// Defaults: `γ = 1`, 100 iterations, `grad_tol = 1e-10`,
    /// `step_tol = 1e-12`, `λ₀ = 1e-8`.
    pub fn new(grid: GridSpec<T>) -> Self {
        Self {
            step_size: T::one(),
            max_iters: 100,
            grad_tol: lit(1e-10),
            step_tol: lit(1e-12),
            regularization: lit(1e-8),
            grid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > T::zero() && self.step_size <= T::one()) {
            return Err(Error::Invalid(format!(
                "step size must lie in (0, 1], got {}",
                to_f64(self.step_size)
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Invalid("max_iters must be positive".into()));
        }
        if !(self.grad_tol > T::zero() && self.step_tol > T::zero()) {
            return Err(Error::Invalid("tolerances must be positive".into()));
        }
        if !(self.regularization >= T::zero() && is_finite(self.regularization)) {
            return Err(Error::Invalid("regularization must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Why the Newton loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    GradientConverged,
    StepConverged,
    MaxIters,
    LeftDomain,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::GradientConverged => "GradientConverged",
            SolveStatus::StepConverged => "StepConverged",
            SolveStatus::MaxIters => "MaxIters",
            SolveStatus::LeftDomain => "LeftDomain",
        }
    }
}

/// One recorded iterate `(x_k, E(x_k), ‖∇E(x_k)‖)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Iterate<T: Real> {
    pub point: ParameterPoint<T>,
    pub value: T,
    pub grad_norm: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult<T: Real> {
    pub minimizer: ParameterPoint<T>,
    pub value: T,
    /// The grid point the iteration started from is `iterates[0]`.
    pub iterates: Vec<Iterate<T>>,
    pub status: SolveStatus,
}

impl<T: Real> SolveResult<T> {
    /// Number of Newton steps taken.
    pub fn steps(&self) -> usize {
        self.iterates.len() - 1
    }
}

/// Newton direction `H̃⁻¹g` with the smallest shift (zero, then `λ₀`
/// doubling) for which the system is solvable and `⟨g, H̃⁻¹g⟩ > 0`.
pub fn shifted_direction<T: Real>(
    hessian: &DMatrix<T>,
    gradient: &DVector<T>,
    regularization: T,
) -> Result<(DVector<T>, T)> {
    let n = gradient.len();
    let scale = hessian.norm();
    let base = if scale > T::zero() { scale } else { T::one() };
    let limit = lit::<T>(MAX_SHIFT_RATIO) * base;
    let mut shift = T::zero();
    loop {
        let shifted = hessian + DMatrix::identity(n, n) * shift;
        if let Some(d) = shifted.lu().solve(gradient) {
            if d.iter().all(|v| is_finite(*v)) && gradient.dot(&d) > T::zero() {
                return Ok((d, shift));
            }
        }
        shift = if shift > T::zero() {
            shift + shift
        } else if regularization > T::zero() {
            regularization
        } else {
            lit::<T>(1e-10) * base
        };
        if shift > limit {
            return Err(Error::SingularHessian { shift: to_f64(shift) });
        }
    }
}

fn step_from<T: Real, F: FrameFamily<T> + ?Sized>(
    family: &F,
    w: &Measurement<T>,
    x: &ParameterPoint<T>,
    current: &Derivatives<T>,
    cfg: &SolverConfig<T>,
) -> Result<ParameterPoint<T>> {
    if current.gradient.iter().all(|g| *g == T::zero()) {
        return Ok(x.clone());
    }
    let (direction, _) = shifted_direction(&current.hessian, &current.gradient, cfg.regularization)?;
    let mut gamma = cfg.step_size;
    let mut any_inside = false;
    for _ in 0..=MAX_BACKTRACKS {
        let trial = x.coords() - &direction * gamma;
        if let Ok(trial) = ParameterPoint::new(trial) {
            if family.contains(&trial) {
                any_inside = true;
                if let Ok(value) = error_value(family, &trial, w) {
                    if value <= current.value {
                        return Ok(trial);
                    }
                }
            }
        }
        gamma *= lit::<T>(0.5);
    }
    if any_inside {
        // No trial decreased E: stay put so the caller sees a zero step.
        Ok(x.clone())
    } else {
        Err(Error::LeftDomain)
    }
}

/// One damped, backtracked Newton step from `x_k`.
pub fn newton_step<T: Real, F: FrameFamily<T> + ?Sized>(
    family: &F,
    w: &Measurement<T>,
    x_k: &ParameterPoint<T>,
    cfg: &SolverConfig<T>,
) -> Result<ParameterPoint<T>> {
    cfg.validate()?;
    let current = derivatives(family, x_k, w)?;
    step_from(family, w, x_k, &current, cfg)
}

/// Newton iteration started from a given point.
pub fn refine<T: Real, F: FrameFamily<T> + ?Sized>(
    family: &F,
    w: &Measurement<T>,
    start: ParameterPoint<T>,
    cfg: &SolverConfig<T>,
) -> Result<SolveResult<T>> {
    cfg.validate()?;
    let mut x = start;
    let mut current = derivatives(family, &x, w)?;
    let mut iterates = Vec::new();
    let status = loop {
        let grad_norm = current.gradient.norm();
        iterates.push(Iterate {
            point: x.clone(),
            value: current.value,
            grad_norm,
        });
        if grad_norm < cfg.grad_tol {
            break SolveStatus::GradientConverged;
        }
        if iterates.len() > cfg.max_iters {
            break SolveStatus::MaxIters;
        }
        let next = match step_from(family, w, &x, &current, cfg) {
            Ok(next) => next,
            Err(Error::LeftDomain) => break SolveStatus::LeftDomain,
            Err(e) => return Err(e),
        };
        let moved = (next.coords() - x.coords()).norm();
        if next == x {
            break SolveStatus::StepConverged;
        }
        x = next;
        current = derivatives(family, &x, w)?;
        if moved < cfg.step_tol {
            iterates.push(Iterate {
                point: x.clone(),
                value: current.value,
                grad_norm: current.gradient.norm(),
            });
            break SolveStatus::StepConverged;
        }
    };
    let last = iterates.last().expect("at least one iterate");
    Ok(SolveResult {
        minimizer: last.point.clone(),
        value: last.value,
        status,
        iterates,
    })
}

/// Grid search followed by Newton refinement.
pub fn localize<T: Real, F: FrameFamily<T> + ?Sized>(
    family: &F,
    w: &Measurement<T>,
    cfg: &SolverConfig<T>,
) -> Result<SolveResult<T>> {
    cfg.validate()?;
    let start = grid_search(family, w, &cfg.grid)?;
    refine(family, w, start, cfg)
}
