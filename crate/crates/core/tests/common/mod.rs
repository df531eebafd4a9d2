#![allow(dead_code)]

use framefit::frame::{pair_index, PolynomialFamily};
use framefit::{Dims, Error, FrameFamily, FrameJet, JetOrder, ParameterPoint, Result};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha20Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * rng.random_range(-1.0..1.0))
}

pub fn random_vector(rng: &mut ChaCha20Rng, len: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| scale * rng.random_range(-1.0..1.0))
}

/// Random quadratic family whose constant term is a well-conditioned frame.
pub fn random_polynomial(rng: &mut ChaCha20Rng, m: usize, n: usize, p: usize) -> PolynomialFamily<f64> {
    let mut constant = random_matrix(rng, m, n, 1.0);
    for i in 0..m {
        constant[(i, i % n)] += 3.0;
    }
    let linear = (0..p).map(|_| random_matrix(rng, m, n, 0.5)).collect();
    let quadratic = (0..p * (p + 1) / 2).map(|_| random_matrix(rng, m, n, 0.25)).collect();
    PolynomialFamily::new(constant, linear, quadratic).unwrap()
}

/// `Π = I − F*(FF*)⁻¹F` with an explicit inverse.
pub fn dense_projector(f: &DMatrix<f64>) -> DMatrix<f64> {
    let n = f.ncols();
    DMatrix::identity(n, n) - dense_dual(f) * f
}

/// `F*(FF*)⁻¹` with an explicit inverse.
pub fn dense_dual(f: &DMatrix<f64>) -> DMatrix<f64> {
    f.transpose() * (f * f.transpose()).try_inverse().expect("frame operator invertible")
}

pub fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(a.amax()).max(1e-300)
}

/// `‖a − b‖∞` relative to `max(‖b‖∞, scale)`; the floor keeps the ratio
/// meaningful when `b` vanishes (e.g. `Πw` for a square frame).
pub fn scaled_err(a: &DVector<f64>, b: &DVector<f64>, scale: f64) -> f64 {
    (a - b).amax() / b.amax().max(scale)
}

/// One-parameter family `f(x) = (√(1−s²), s)`, `s = (x−c)/r`, for which
/// `E(x) = (x−c)²` exactly on `|x−c| < r` when `w = (r, 0)`.
pub struct ArcFamily {
    pub center: f64,
    pub radius: f64,
}

impl ArcFamily {
    pub fn measurement(&self) -> framefit::Measurement64 {
        framefit::Measurement::from_slice(&[self.radius, 0.0]).unwrap()
    }
}

impl FrameFamily<f64> for ArcFamily {
    fn dims(&self) -> Dims {
        Dims::new(1, 2, 1)
    }

    fn jet(&self, x: &ParameterPoint<f64>, order: JetOrder) -> Result<FrameJet<f64>> {
        let s = (x.coords()[0] - self.center) / self.radius;
        if s.abs() >= 1.0 {
            return Err(Error::LeftDomain);
        }
        let c = (1.0 - s * s).sqrt();
        let value = DMatrix::from_row_slice(1, 2, &[c, s]);
        if order == JetOrder::Value {
            return Ok(FrameJet::value_only(value));
        }
        let r = self.radius;
        let first = DMatrix::from_row_slice(1, 2, &[-s / (r * c), 1.0 / r]);
        let jet = FrameJet::with_first(value, vec![first])?;
        if order == JetOrder::First {
            return Ok(jet);
        }
        let second = DMatrix::from_row_slice(1, 2, &[-1.0 / (r * r * c * c * c), 0.0]);
        debug_assert_eq!(pair_index(0, 0), 0);
        jet.with_second(vec![second])
    }

    fn contains(&self, x: &ParameterPoint<f64>) -> bool {
        x.len() == 1 && ((x.coords()[0] - self.center) / self.radius).abs() < 1.0
    }
}
