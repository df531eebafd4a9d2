//! Sensitivity and uniqueness diagnostics for `E(x)`.
//!
//! * With `w = F*(x₀)v₀ + ε`, the truth satisfies `E(x₀) = ‖Π(x₀)ε‖² ≤ ‖ε‖²`,
//!   so it lies in the level set `{x : E(x) ≤ ‖ε‖²}`.
//! * When `N = M` every `F(x)` is invertible and `E` vanishes identically.
//! * If the augmented vectors `f_n(x) ⊕ Df_n(x)*(FF*)⁻¹F w` span `ℝᴹ ⊕ ℝᴾ`
//!   throughout `Ω`, the zero set of `E` contains no nonconstant smooth curve.
//!   [`uniqueness_certificate`] checks that spanning condition at sample
//!   points only; a pass is a point-sample certificate, not a global proof.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frame::{error_value, extreme_singular_values, DualFrame, FrameFamily, JetOrder, Measurement, ParameterPoint};
use crate::newton::{argmin, evaluate_grid, GridSpec};
use crate::scalar::{format_number, lit, Real};

/// Absolute slack added to `‖ε‖²` in [`residual_bound_check`].
pub const BOUND_SLACK: f64 = 1e-12;

/// Relative threshold (to `‖w‖²`) below which `E` counts as identically zero.
pub const DEGENERACY_TOLERANCE: f64 = 1e-18;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualBound<T: Real> {
    pub error_at_truth: T,
    pub bound_holds: bool,
}

/// `E(x₀)` and whether `E(x₀) ≤ ‖ε‖² + 1e-12`.
pub fn residual_bound_check<T: Real, F: FrameFamily<T> + ?Sized>(
    family: &F,
    x0: &ParameterPoint<T>,
    w: &Measurement<T>,
    noise_norm: T,
) -> Result<ResidualBound<T>> {
    let e = error_value(family, x0, w)?;
    Ok(ResidualBound {
        error_at_truth: e,
        bound_holds: e <= noise_norm * noise_norm + lit::<T>(BOUND_SLACK),
    })
}

/// Grid points whose error does not exceed a threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetReport<T: Real> {
    pub threshold: T,
    /// `(point, E)` pairs in grid order.
    pub points: Vec<(ParameterPoint<T>, T)>,
    pub grid: GridSpec<T>,
    /// Number of grid points inside `Ω`.
    pub in_domain: usize,
    /// `points.len() / in_domain`.
    pub fraction: f64,
}

impl<T: Real> LevelSetReport<T> {
    /// CSV with header `x_1,...,x_P,E` and one row per retained point.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let header: Vec<String> = (1..=self.grid.dim())
            .map(|p| format!("x_{p}"))
            .chain(std::iter::once("E".to_string()))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (x, e) in &self.points {
            let row: Vec<String> = x
                .coords()
                .iter()
                .chain(std::iter::once(e))
                .map(|v| format_number(*v))
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Exhaustive evaluation of `{x ∈ grid ∩ Ω : E(x) ≤ τ}`.
pub fn level_set<T: Real, F: FrameFamily<T> + ?Sized>(
    family: &F,
    w: &Measurement<T>,
    grid: &GridSpec<T>,
    threshold: T,
) -> Result<LevelSetReport<T>> {
    if threshold < T::zero() {
        return Err(Error::Invalid("level-set threshold must be >= 0".into()));
    }
    let values = evaluate_grid(family, w, grid)?;
    let in_domain = values.iter().flatten().count();
    if in_domain == 0 {
        return Err(Error::EmptyDomain);
    }
    let points: Vec<_> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.filter(|e| *e <= threshold).map(|e| (grid.point(i), e)))
        .collect();
    Ok(LevelSetReport {
        threshold,
        fraction: points.len() as f64 / in_domain as f64,
        points,
        grid: grid.clone(),
        in_domain,
    })
}

/// Summary of `E` over a grid used to flag the `N = M` degeneracy.
#[derive(Debug, Clone, PartialEq)]
pub struct DegeneracyReport<T: Real> {
    pub max_error: T,
    pub min_error: T,
    pub argmin: ParameterPoint<T>,
    pub in_domain: usize,
    /// `max E ≤ 1e-18 · ‖w‖²`: every in-domain point fits the data.
    pub degenerate: bool,
}

pub fn degeneracy_scan<T: Real, F: FrameFamily<T> + ?Sized>(
    family: &F,
    w: &Measurement<T>,
    grid: &GridSpec<T>,
) -> Result<DegeneracyReport<T>> {
    let values = evaluate_grid(family, w, grid)?;
    let (index, min_error) = argmin(&values).ok_or(Error::EmptyDomain)?;
    let max_error = values.iter().flatten().copied().fold(T::zero(), |a, b| a.max(b));
    let limit = lit::<T>(DEGENERACY_TOLERANCE) * w.values().norm_squared();
    Ok(DegeneracyReport {
        max_error,
        min_error,
        argmin: grid.point(index),
        in_domain: values.iter().flatten().count(),
        degenerate: max_error <= limit,
    })
}

/// The vectors `f_n(x) ⊕ Df_n(x)* c`, `n = 1..N`, where `c = (FF*)⁻¹F w` and
/// the `p`-th column of the Jacobian `Df_n` is column `n` of `∂F/∂x_p`.
pub fn augmented_vectors<T: Real, F: FrameFamily<T> + ?Sized>(
    family: &F,
    x: &ParameterPoint<T>,
    w: &Measurement<T>,
) -> Result<Vec<DVector<T>>> {
    let dims = family.dims();
    w.expect_len(dims.n)?;
    let jet = family.jet(x, JetOrder::First)?;
    let f = jet.synthesis();
    let coefficients = DualFrame::new(f)?.coefficients(w.values());
    Ok((0..dims.n)
        .map(|n| {
            DVector::from_fn(dims.m + dims.p, |i, _| {
                if i < dims.m {
                    f[(i, n)]
                } else {
                    jet.partial(i - dims.m).column(n).dot(&coefficients)
                }
            })
        })
        .collect())
}

/// Threshold for "spans ℝᴹ ⊕ ℝᴾ".
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpanTolerance<T: Real> {
    Absolute(T),
    /// Multiple of the largest singular value at each sample.
    Relative(T),
}

impl<T: Real> Default for SpanTolerance<T> {
    fn default() -> Self {
        SpanTolerance::Relative(lit(1e-8))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

/// Smallest singular value of the `(M+P)×N` augmented synthesis matrix at
/// each sample point.
#[derive(Debug, Clone, PartialEq)]
pub struct UniquenessCertificate<T: Real> {
    pub samples: Vec<ParameterPoint<T>>,
    pub smallest_singular_values: Vec<T>,
    pub verdict: Verdict,
}

/// Checks the augmented spanning condition at every sample.
///
/// Fewer than `M+P` vectors can never span, and record a smallest singular
/// value of zero.
pub fn uniqueness_certificate<T: Real, F: FrameFamily<T> + ?Sized>(
    family: &F,
    w: &Measurement<T>,
    samples: &[ParameterPoint<T>],
    tolerance: SpanTolerance<T>,
) -> Result<UniquenessCertificate<T>> {
    let dims = family.dims();
    let results: Vec<Result<(T, bool)>> = samples
        .par_iter()
        .map(|x| {
            let vectors = augmented_vectors(family, x, w)?;
            let matrix = DMatrix::from_columns(&vectors);
            let (smin, smax) = extreme_singular_values(&matrix);
            let threshold = match tolerance {
                SpanTolerance::Absolute(t) => t,
                SpanTolerance::Relative(r) => r * smax,
            };
            Ok((smin, smin > threshold && dims.n >= dims.m + dims.p))
        })
        .collect();
    let mut smallest = Vec::with_capacity(samples.len());
    let mut pass = !samples.is_empty();
    for r in results {
        let (s, ok) = r?;
        smallest.push(s);
        pass &= ok;
    }
    Ok(UniquenessCertificate {
        samples: samples.to_vec(),
        smallest_singular_values: smallest,
        verdict: if pass { Verdict::Pass } else { Verdict::Fail },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::PolynomialFamily;
    use nalgebra::dmatrix;

    #[test]
    fn constant_family_augmented_vectors_have_zero_tail() {
        let family = PolynomialFamily::constant(dmatrix![1.0, 0.0, 1.0; 0.0, 1.0, 1.0], 2);
        let x = ParameterPoint::from_slice(&[0.1, 0.2]).unwrap();
        let w = Measurement::from_slice(&[1.0, 2.0, -1.0]).unwrap();
        let vs = augmented_vectors(&family, &x, &w).unwrap();
        assert_eq!(vs.len(), 3);
        for v in &vs {
            assert_eq!(v.len(), 4);
            assert_eq!(v[2], 0.0);
            assert_eq!(v[3], 0.0);
        }
        let cert = uniqueness_certificate(&family, &w, &[x], SpanTolerance::default()).unwrap();
        assert_eq!(cert.verdict, Verdict::Fail);
    }

    #[test]
    fn zero_measurement_gives_degenerate_tail() {
        let lin = dmatrix![0.5, 0.0, 1.0; 0.0, 1.0, 0.0];
        let family = PolynomialFamily::new(
            dmatrix![1.0, 0.0, 1.0; 0.0, 1.0, 1.0],
            vec![lin.clone()],
            vec![lin * 0.0],
        )
        .unwrap();
        let x = ParameterPoint::from_slice(&[0.3]).unwrap();
        let w = Measurement::from_slice(&[0.0, 0.0, 0.0]).unwrap();
        for v in augmented_vectors(&family, &x, &w).unwrap() {
            assert_eq!(v[2], 0.0);
        }
    }

    #[test]
    fn level_set_threshold_validation_and_csv() {
        let family = PolynomialFamily::constant(dmatrix![1.0, 0.0, 0.0; 0.0, 1.0, 0.0], 1);
        let w = Measurement::from_slice(&[1.0, 2.0, 3.0]).unwrap();
        let grid = GridSpec::from_slices(&[0.0], &[1.0], &[3]).unwrap();
        assert!(level_set(&family, &w, &grid, -1.0).is_err());
        let report = level_set(&family, &w, &grid, 9.0).unwrap();
        assert_eq!(report.points.len(), 3);
        assert_eq!(report.fraction, 1.0);
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x_1,E\n0,9\n0.5,9\n1,9\n");
        assert!(level_set(&family, &w, &grid, 8.0).unwrap().points.is_empty());
    }

    #[test]
    fn residual_bound_with_zero_noise() {
        let family = PolynomialFamily::constant(dmatrix![1.0, 0.0, 0.0; 0.0, 1.0, 0.0], 1);
        let x = ParameterPoint::from_slice(&[0.0]).unwrap();
        let w = Measurement::from_slice(&[1.0, 2.0, 0.0]).unwrap();
        let r = residual_bound_check(&family, &x, &w, 0.0).unwrap();
        assert_eq!(r.error_at_truth, 0.0);
        assert!(r.bound_holds);
    }
}
