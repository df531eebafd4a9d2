//! Trajectory estimation from FDOA time series.
//!
//! Over `[t₀, t₁]` the target path minimizes
//! `Ê(x) = ∫ ‖F*(x(t))ẋ(t) − w(t)‖² dt`. Any minimizer satisfies the
//! Euler–Lagrange equation `F(x) d/dt[F*(x)ẋ − w] = 0`. Since
//! `d/dt F*(x)ẋ = F*ẍ + Σ_m ẋ_m (∂F*/∂x_m) ẋ` and `F` has full row rank on
//! `Ω`, this is the explicit second-order system
//!
//! ```text
//! ẍ = (FF*)⁻¹ F [ẇ − Σ_m ẋ_m (∂F*/∂x_m) ẋ]
//! ```
//!
//! which is integrated with classical RK4 from many initial states; the
//! candidate path with the smallest `Ê` wins.

use std::io::{self, Write};

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frame::{DualFrame, FrameFamily, JetOrder, ParameterPoint};
use crate::newton::GridSpec;
use crate::scalar::{format_number, infinity, is_finite, lit, to_f64, Real};

/// Relative tolerance on the spacing of a uniform time grid.
pub const UNIFORM_SPACING_TOLERANCE: f64 = 1e-12;

fn spacing_tolerance<T: Real>() -> T {
    lit::<T>(UNIFORM_SPACING_TOLERANCE).max(lit::<T>(100.0) * T::default_epsilon())
}

fn check_grid<T: Real>(times: &[T]) -> Result<T> {
    if times.len() < 3 {
        return Err(Error::Invalid(format!(
            "time grid needs at least 3 samples, got {}",
            times.len()
        )));
    }
    if !times.iter().all(|t| is_finite(*t)) {
        return Err(Error::NonFinite("time grid"));
    }
    let k = times.len() - 1;
    let dt = (times[k] - times[0]) / lit::<T>(k as f64);
    if dt <= T::zero() {
        return Err(Error::Invalid("time grid must be strictly increasing".into()));
    }
    let tol = spacing_tolerance::<T>() * dt;
    for (i, pair) in times.windows(2).enumerate() {
        let step = pair[1] - pair[0];
        if step <= T::zero() {
            return Err(Error::Invalid(format!("time grid not increasing at sample {}", i + 1)));
        }
        if (step - dt).abs() > tol {
            return Err(Error::Invalid(format!("time grid not uniform at sample {}", i + 1)));
        }
    }
    Ok(dt)
}

/// Second-order finite-difference derivative of nodal samples: central in
/// the interior, three-point one-sided at the ends.
pub fn nodal_derivative<T: Real>(values: &[DVector<T>], dt: T) -> Vec<DVector<T>> {
    let k = values.len() - 1;
    let two_dt = dt + dt;
    let three = lit::<T>(3.0);
    let four = lit::<T>(4.0);
    (0..=k)
        .map(|i| {
            if i == 0 {
                (&values[0] * -three + &values[1] * four - &values[2]) / two_dt
            } else if i == k {
                (&values[k] * three - &values[k - 1] * four + &values[k - 2]) / two_dt
            } else {
                (&values[i + 1] - &values[i - 1]) / two_dt
            }
        })
        .collect()
}

/// Uniformly sampled measurements `w(t_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries<T: Real> {
    times: Vec<T>,
    values: Vec<DVector<T>>,
    rates: Vec<DVector<T>>,
    dt: T,
}

impl<T: Real> TimeSeries<T> {
    pub fn new(times: Vec<T>, values: Vec<DVector<T>>) -> Result<Self> {
        let dt = check_grid(&times)?;
        if values.len() != times.len() {
            return Err(Error::DimensionMismatch {
                what: "time-series samples",
                expected: times.len(),
                found: values.len(),
            });
        }
        let n = values[0].len();
        for v in &values {
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "measurement length",
                    expected: n,
                    found: v.len(),
                });
            }
            if !v.iter().all(|c| is_finite(*c)) {
                return Err(Error::NonFinite("time-series sample"));
            }
        }
        let rates = nodal_derivative(&values, dt);
        Ok(Self { times, values, rates, dt })
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn values(&self) -> &[DVector<T>] {
        &self.values
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.values[0].len()
    }

    /// Finite-difference `ẇ` at the sample times.
    pub fn nodal_rates(&self) -> &[DVector<T>] {
        &self.rates
    }
}

/// Source of `ẇ(t)` for the Euler–Lagrange integrator.
pub trait RateSource<T: Real>: Sync {
    fn rate_at(&self, t: T) -> Result<DVector<T>>;
}

/// Sampled data: nodal finite differences, linearly interpolated between
/// nodes.
impl<T: Real> RateSource<T> for TimeSeries<T> {
    fn rate_at(&self, t: T) -> Result<DVector<T>> {
        let k = self.times.len() - 1;
        let s = (t - self.times[0]) / self.dt;
        let floor = s.floor().max(T::zero());
        let i = to_f64(floor).min((k - 1) as f64) as usize;
        let frac = s - lit::<T>(i as f64);
        Ok(&self.rates[i] * (T::one() - frac) + &self.rates[i + 1] * frac)
    }
}

/// `ẇ(t)` given in closed form.
pub struct RateFn<G>(pub G);

impl<T: Real, G: Fn(T) -> Result<DVector<T>> + Sync> RateSource<T> for RateFn<G> {
    fn rate_at(&self, t: T) -> Result<DVector<T>> {
        (self.0)(t)
    }
}

/// Positions and velocities on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Real> {
    pub times: Vec<T>,
    pub positions: Vec<DVector<T>>,
    pub velocities: Vec<DVector<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// CSV with header `t,x_1..x_M,v_1..v_M`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let m = self.positions.first().map_or(0, |p| p.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=m).map(|i| format!("x_{i}")));
        header.extend((1..=m).map(|i| format!("v_{i}")));
        writeln!(out, "{}", header.join(","))?;
        for k in 0..self.len() {
            let row: Vec<String> = std::iter::once(&self.times[k])
                .chain(self.positions[k].iter())
                .chain(self.velocities[k].iter())
                .map(|v| format_number(*v))
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn check_congruent<T: Real>(traj: &Trajectory<T>, data: &TimeSeries<T>) -> Result<()> {
    if traj.positions.len() != traj.times.len() || traj.velocities.len() != traj.times.len() {
        return Err(Error::Invalid("trajectory arrays have different lengths".into()));
    }
    if traj.times.len() != data.len() {
        return Err(Error::DimensionMismatch {
            what: "trajectory samples",
            expected: data.len(),
            found: traj.times.len(),
        });
    }
    let tol = spacing_tolerance::<T>() * data.dt();
    if traj.times.iter().zip(data.times()).any(|(a, b)| (*a - *b).abs() > tol) {
        return Err(Error::Invalid("trajectory and data use different time grids".into()));
    }
    Ok(())
}

fn misfits<T: Real, F: FrameFamily<T> + ?Sized>(
    family: &F,
    traj: &Trajectory<T>,
    data: &TimeSeries<T>,
) -> Result<Vec<DVector<T>>> {
    traj.positions
        .iter()
        .zip(&traj.velocities)
        .zip(data.values())
        .map(|((x, v), w)| {
            let jet = family.jet(&ParameterPoint::new(x.clone())?, JetOrder::Value)?;
            crate::frame::singular_range(jet.synthesis())?;
            Ok(jet.synthesis().tr_mul(v) - w)
        })
        .collect()
}

/// `Ê` by the composite trapezoid rule on the shared time grid.
pub fn functional_value<T: Real, F: FrameFamily<T> + ?Sized>(
    family: &F,
    traj: &Trajectory<T>,
    data: &TimeSeries<T>,
) -> Result<T> {
    check_congruent(traj, data)?;
    let integrand: Vec<T> = misfits(family, traj, data)?
        .iter()
        .map(|r| r.norm_squared())
        .collect();
    let half = lit::<T>(0.5);
    Ok(traj
        .times
        .windows(2)
        .zip(integrand.windows(2))
        .fold(T::zero(), |acc, (t, e)| acc + (t[1] - t[0]) * half * (e[0] + e[1])))
}

/// Acceleration solving the Euler–Lagrange equation at state `(x, v)`.
pub fn el_acceleration<T: Real, F: FrameFamily<T> + ?Sized>(
    family: &F,
    x: &ParameterPoint<T>,
    v: &DVector<T>,
    wdot: &DVector<T>,
) -> Result<DVector<T>> {
    let dims = family.dims();
    if v.len() != dims.p || wdot.len() != dims.n {
        return Err(Error::DimensionMismatch {
            what: "velocity or rate",
            expected: if v.len() != dims.p { dims.p } else { dims.n },
            found: if v.len() != dims.p { v.len() } else { wdot.len() },
        });
    }
    let jet = family.jet(x, JetOrder::First)?;
    let dual = DualFrame::new(jet.synthesis())?;
    let mut forcing = wdot.clone();
    for (m, d) in jet.partials().iter().enumerate() {
        forcing -= d.tr_mul(v) * v[m];
    }
    Ok(dual.coefficients(&forcing))
}

/// `F(x(t)) d/dt[F*(x(t))ẋ(t) − w(t)]` at every sample, with the time
/// derivative taken by [`nodal_derivative`].
pub fn el_residual<T: Real, F: FrameFamily<T> + ?Sized>(
    family: &F,
    traj: &Trajectory<T>,
    data: &TimeSeries<T>,
) -> Result<Vec<DVector<T>>> {
    check_congruent(traj, data)?;
    let r = misfits(family, traj, data)?;
    let dr = nodal_derivative(&r, data.dt());
    traj.positions
        .iter()
        .zip(&dr)
        .map(|(x, d)| {
            let jet = family.jet(&ParameterPoint::new(x.clone())?, JetOrder::Value)?;
            Ok(jet.synthesis() * d)
        })
        .collect()
}

/// Result of an integration; `left_domain_at` is the index of the first
/// step whose stage points left `Ω`, in which case the trajectory stops at
/// the last good sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Integration<T: Real> {
    pub trajectory: Trajectory<T>,
    pub left_domain_at: Option<usize>,
}

impl<T: Real> Integration<T> {
    pub fn completed(&self) -> bool {
        self.left_domain_at.is_none()
    }
}

fn leaves_domain(err: &Error) -> bool {
    matches!(
        err,
        Error::RankDeficient { .. } | Error::NearSingular { .. } | Error::NonFinite(_) | Error::LeftDomain
    )
}

/// Classical RK4 on `(ẋ, v̇) = (v, el_acceleration(x, v, ẇ(t)))` over `times`.
pub fn integrate_with<T: Real, F: FrameFamily<T> + ?Sized, R: RateSource<T> + ?Sized>(
    family: &F,
    x0: &DVector<T>,
    v0: &DVector<T>,
    times: &[T],
    rates: &R,
) -> Result<Integration<T>> {
    let p = family.dims().p;
    if x0.len() != p || v0.len() != p {
        return Err(Error::DimensionMismatch {
            what: "initial state",
            expected: p,
            found: if x0.len() != p { x0.len() } else { v0.len() },
        });
    }
    let half = lit::<T>(0.5);
    let sixth = lit::<T>(1.0 / 6.0);
    let two = lit::<T>(2.0);
    let accel = |x: &DVector<T>, v: &DVector<T>, t: T| -> Result<DVector<T>> {
        el_acceleration(family, &ParameterPoint::new(x.clone())?, v, &rates.rate_at(t)?)
    };

    let mut traj = Trajectory {
        times: Vec::with_capacity(times.len()),
        positions: Vec::with_capacity(times.len()),
        velocities: Vec::with_capacity(times.len()),
    };
    let mut x = x0.clone();
    let mut v = v0.clone();
    let start = ParameterPoint::new(x.clone())?;
    if !family.contains(&start) {
        return Ok(Integration {
            trajectory: traj,
            left_domain_at: Some(0),
        });
    }
    traj.times.push(times[0]);
    traj.positions.push(x.clone());
    traj.velocities.push(v.clone());

    for k in 0..times.len() - 1 {
        let t = times[k];
        let h = times[k + 1] - t;
        let stage = || -> Result<(DVector<T>, DVector<T>)> {
            let a1 = accel(&x, &v, t)?;
            let (x2, v2) = (&x + &v * (half * h), &v + &a1 * (half * h));
            let a2 = accel(&x2, &v2, t + half * h)?;
            let (x3, v3) = (&x + &v2 * (half * h), &v + &a2 * (half * h));
            let a3 = accel(&x3, &v3, t + half * h)?;
            let (x4, v4) = (&x + &v3 * h, &v + &a3 * h);
            let a4 = accel(&x4, &v4, t + h)?;
            let dx = (&v + &v2 * two + &v3 * two + &v4) * (h * sixth);
            let dv = (a1 + a2 * two + a3 * two + a4) * (h * sixth);
            Ok((&x + dx, &v + dv))
        };
        let next = match stage() {
            Ok((xn, vn)) => match ParameterPoint::new(xn.clone()) {
                Ok(pt) if family.contains(&pt) => Ok((xn, vn)),
                _ => Err(Error::LeftDomain),
            },
            Err(e) if leaves_domain(&e) => Err(Error::LeftDomain),
            Err(e) => return Err(e),
        };
        match next {
            Ok((xn, vn)) => {
                x = xn;
                v = vn;
                traj.times.push(times[k + 1]);
                traj.positions.push(x.clone());
                traj.velocities.push(v.clone());
            }
            Err(_) => {
                return Ok(Integration {
                    trajectory: traj,
                    left_domain_at: Some(k),
                })
            }
        }
    }
    Ok(Integration {
        trajectory: traj,
        left_domain_at: None,
    })
}

/// RK4 integration driven by sampled data, with `ẇ` from finite
/// differences of the samples.
pub fn integrate_trajectory<T: Real, F: FrameFamily<T> + ?Sized>(
    family: &F,
    x0: &DVector<T>,
    v0: &DVector<T>,
    data: &TimeSeries<T>,
) -> Result<Integration<T>> {
    if data.channels() != family.dims().n {
        return Err(Error::DimensionMismatch {
            what: "time-series channels",
            expected: family.dims().n,
            found: data.channels(),
        });
    }
    integrate_with(family, x0, v0, data.times(), data)
}

/// One initial state tried by [`shooting_search`].
#[derive(Debug, Clone, PartialEq)]
pub struct ShootingCandidate<T: Real> {
    pub position: DVector<T>,
    pub velocity: DVector<T>,
    /// `Ê` of the integrated path; infinite if integration left `Ω`.
    pub value: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShootingResult<T: Real> {
    pub best: Trajectory<T>,
    pub value: T,
    /// Candidates with position index major, velocity index minor.
    pub trace: Vec<ShootingCandidate<T>>,
}

impl<T: Real> ShootingResult<T> {
    /// CSV with header `x0_1..x0_M,v0_1..v0_M,E`.
    pub fn write_trace_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let m = self.trace.first().map_or(0, |c| c.position.len());
        let mut header: Vec<String> = (1..=m).map(|i| format!("x0_{i}")).collect();
        header.extend((1..=m).map(|i| format!("v0_{i}")));
        header.push("E".into());
        writeln!(out, "{}", header.join(","))?;
        for c in &self.trace {
            let row: Vec<String> = c
                .position
                .iter()
                .chain(c.velocity.iter())
                .chain(std::iter::once(&c.value))
                .map(|v| format_number(*v))
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Integrates every `(x₀, v₀)` in `pos_grid × vel_grid` and keeps the path
/// with the smallest `Ê` (earliest candidate on ties).
pub fn shooting_search<T: Real, F: FrameFamily<T> + ?Sized>(
    family: &F,
    data: &TimeSeries<T>,
    pos_grid: &GridSpec<T>,
    vel_grid: &GridSpec<T>,
) -> Result<ShootingResult<T>> {
    let p = family.dims().p;
    for g in [pos_grid, vel_grid] {
        if g.dim() != p {
            return Err(Error::DimensionMismatch {
                what: "shooting grid dimension",
                expected: p,
                found: g.dim(),
            });
        }
    }
    let per_position = vel_grid.total();
    let total = pos_grid.total() * per_position;
    let trace: Vec<ShootingCandidate<T>> = (0..total)
        .into_par_iter()
        .map(|i| {
            let position = pos_grid.coords(i / per_position);
            let velocity = vel_grid.coords(i % per_position);
            let value = integrate_trajectory(family, &position, &velocity, data)
                .ok()
                .filter(Integration::completed)
                .and_then(|run| functional_value(family, &run.trajectory, data).ok())
                .unwrap_or_else(infinity);
            ShootingCandidate { position, velocity, value }
        })
        .collect();
    let (index, value) = trace
        .iter()
        .enumerate()
        .filter(|(_, c)| is_finite(c.value))
        .fold(None, |best: Option<(usize, T)>, (i, c)| match best {
            Some((_, b)) if b <= c.value => best,
            _ => Some((i, c.value)),
        })
        .ok_or(Error::AllCandidatesFailed)?;
    let winner = &trace[index];
    let best = integrate_trajectory(family, &winner.position, &winner.velocity, data)?.trajectory;
    Ok(ShootingResult { best, value, trace })
}
