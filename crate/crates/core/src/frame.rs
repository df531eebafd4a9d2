//! Parametrized frame families and the linear-algebra primitives built on them.
//!
//! A frame family maps a parameter `x ∈ Ω ⊆ ℝᴾ` to an `M×N` synthesis matrix
//! `F(x)` whose columns span `ℝᴹ`. Given a measurement `w ∈ ℝᴺ`, the error
//! function `E(x) = ‖Π(x)w‖²` is the squared distance from `w` to the range of
//! the analysis operator `F*(x)`, where `Π(x) = I − F*(FF*)⁻¹F` projects onto
//! the null space of `F(x)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::{is_finite, lit, to_f64, Real};

/// Smallest-to-largest singular value ratio below which `F` is treated as
/// rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-8;

/// Frame dimensions: ambient space `m`, frame size `n`, parameter count `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub m: usize,
    pub n: usize,
    pub p: usize,
}

impl Dims {
    pub fn new(m: usize, n: usize, p: usize) -> Self {
        Self { m, n, p }
    }

    /// Number of stored second-order partials, `P(P+1)/2`.
    pub fn packed_pairs(&self) -> usize {
        self.p * (self.p + 1) / 2
    }
}

/// Index of the unordered pair `{q, p}` in upper-triangle packed storage.
#[inline]
pub fn pair_index(q: usize, p: usize) -> usize {
    let (lo, hi) = if q <= p { (q, p) } else { (p, q) };
    hi * (hi + 1) / 2 + lo
}

fn check_finite<T: Real>(values: &DVector<T>, what: &'static str) -> Result<()> {
    if values.iter().all(|v| is_finite(*v)) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// A point `x` of the parameter domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterPoint<T: Real>(DVector<T>);

impl<T: Real> ParameterPoint<T> {
    pub fn new(coords: DVector<T>) -> Result<Self> {
        check_finite(&coords, "parameter point")?;
        Ok(Self(coords))
    }

    pub fn from_slice(coords: &[T]) -> Result<Self> {
        Self::new(DVector::from_column_slice(coords))
    }

    pub fn coords(&self) -> &DVector<T> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> DVector<T> {
        self.0
    }

    /// Copy of this point shifted by `step` along coordinate `index`.
    pub fn offset(&self, index: usize, step: T) -> Result<Self> {
        let mut coords = self.0.clone();
        coords[index] += step;
        Self::new(coords)
    }
}

/// A measurement vector `w ∈ ℝᴺ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement<T: Real>(DVector<T>);

impl<T: Real> Measurement<T> {
    pub fn new(values: DVector<T>) -> Result<Self> {
        check_finite(&values, "measurement")?;
        Ok(Self(values))
    }

    pub fn from_slice(values: &[T]) -> Result<Self> {
        Self::new(DVector::from_column_slice(values))
    }

    pub fn values(&self) -> &DVector<T> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> DVector<T> {
        self.0
    }

    pub(crate) fn expect_len(&self, n: usize) -> Result<()> {
        if self.len() == n {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                what: "measurement",
                expected: n,
                found: self.len(),
            })
        }
    }
}

/// Highest derivative order requested from a [`FrameFamily`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum JetOrder {
    Value,
    First,
    Second,
}

/// Synthesis matrix `F(x)` together with its parameter partials.
///
/// Second partials are stored once per unordered pair `{q, p}`; accessing
/// `(q, p)` and `(p, q)` returns the same matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameJet<T: Real> {
    value: DMatrix<T>,
    first: Vec<DMatrix<T>>,
    second: Option<Vec<DMatrix<T>>>,
}

impl<T: Real> FrameJet<T> {
    pub fn value_only(value: DMatrix<T>) -> Self {
        Self {
            value,
            first: Vec::new(),
            second: None,
        }
    }

    pub fn with_first(value: DMatrix<T>, first: Vec<DMatrix<T>>) -> Result<Self> {
        let shape = value.shape();
        for d in &first {
            if d.shape() != shape {
                return Err(Error::DimensionMismatch {
                    what: "first partial columns",
                    expected: shape.1,
                    found: d.ncols(),
                });
            }
        }
        Ok(Self {
            value,
            first,
            second: None,
        })
    }

    /// Attaches second partials in packed upper-triangle order (see [`pair_index`]).
    pub fn with_second(mut self, packed: Vec<DMatrix<T>>) -> Result<Self> {
        let p = self.first.len();
        let expected = p * (p + 1) / 2;
        if packed.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "packed second partials",
                expected,
                found: packed.len(),
            });
        }
        if packed.iter().any(|d| d.shape() != self.value.shape()) {
            return Err(Error::Invalid(
                "second partial has wrong shape".to_string(),
            ));
        }
        self.second = Some(packed);
        Ok(self)
    }

    /// Attaches a full `P×P` table of second partials after checking that
    /// mixed partials agree to `tolerance` (relative to the largest entry).
    pub fn with_full_second(self, full: Vec<Vec<DMatrix<T>>>, tolerance: T) -> Result<Self> {
        let p = self.first.len();
        if full.len() != p || full.iter().any(|row| row.len() != p) {
            return Err(Error::DimensionMismatch {
                what: "second partial table",
                expected: p,
                found: full.len(),
            });
        }
        let scale = full
            .iter()
            .flatten()
            .map(|m| m.amax())
            .fold(T::one(), |a, b| a.max(b));
        let mut packed = vec![DMatrix::zeros(0, 0); p * (p + 1) / 2];
        for q in 0..p {
            for r in q..p {
                let gap = (&full[q][r] - &full[r][q]).amax();
                if gap > tolerance * scale {
                    return Err(Error::Invalid(format!(
                        "mixed partials ({q},{r}) differ by {:e}",
                        to_f64(gap)
                    )));
                }
                packed[pair_index(q, r)] = full[q][r].clone();
            }
        }
        self.with_second(packed)
    }

    pub fn synthesis(&self) -> &DMatrix<T> {
        &self.value
    }

    pub fn partials(&self) -> &[DMatrix<T>] {
        &self.first
    }

    pub fn partial(&self, p: usize) -> &DMatrix<T> {
        &self.first[p]
    }

    pub fn second_partial(&self, q: usize, p: usize) -> Result<&DMatrix<T>> {
        self.second
            .as_ref()
            .map(|s| &s[pair_index(q, p)])
            .ok_or(Error::MissingSecondOrder)
    }

    pub fn order(&self) -> JetOrder {
        match (&self.second, self.first.is_empty()) {
            (Some(_), _) => JetOrder::Second,
            (None, false) => JetOrder::First,
            (None, true) => JetOrder::Value,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.first.len()
    }
}

/// A family `x ↦ F(x)` of synthesis matrices together with its domain `Ω`.
///
/// Implementations must be deterministic. Every point accepted by
/// [`FrameFamily::contains`] must yield a full-row-rank `F(x)`.
pub trait FrameFamily<T: Real>: Sync {
    fn dims(&self) -> Dims;

    /// Evaluates `F(x)` and its partials up to `order`.
    fn jet(&self, x: &ParameterPoint<T>, order: JetOrder) -> Result<FrameJet<T>>;

    /// Membership predicate for `Ω`.
    fn contains(&self, x: &ParameterPoint<T>) -> bool {
        x.len() == self.dims().p
            && self
                .jet(x, JetOrder::Value)
                .and_then(|jet| singular_range(jet.synthesis()))
                .is_ok()
    }
}

impl<T: Real, F: FrameFamily<T> + ?Sized> FrameFamily<T> for &F {
    fn dims(&self) -> Dims {
        (**self).dims()
    }
    fn jet(&self, x: &ParameterPoint<T>, order: JetOrder) -> Result<FrameJet<T>> {
        (**self).jet(x, order)
    }
    fn contains(&self, x: &ParameterPoint<T>) -> bool {
        (**self).contains(x)
    }
}

/// Matrix polynomial of degree at most two in the parameters:
/// `F(x) = C + Σ_p x_p L_p + Σ_{q≤p} x_q x_p Q_{qp}`.
///
/// Useful for synthetic tests; an all-zero linear and quadratic part gives a
/// constant family.
#[derive(Debug, Clone)]
pub struct PolynomialFamily<T: Real> {
    constant: DMatrix<T>,
    linear: Vec<DMatrix<T>>,
    quadratic: Vec<DMatrix<T>>,
}

impl<T: Real> PolynomialFamily<T> {
    /// `quadratic` is in packed order (see [`pair_index`]).
    pub fn new(
        constant: DMatrix<T>,
        linear: Vec<DMatrix<T>>,
        quadratic: Vec<DMatrix<T>>,
    ) -> Result<Self> {
        let p = linear.len();
        if quadratic.len() != p * (p + 1) / 2 {
            return Err(Error::DimensionMismatch {
                what: "quadratic coefficients",
                expected: p * (p + 1) / 2,
                found: quadratic.len(),
            });
        }
        let shape = constant.shape();
        if linear.iter().chain(&quadratic).any(|m| m.shape() != shape) {
            return Err(Error::Invalid(
                "polynomial coefficients must share the constant term's shape".to_string(),
            ));
        }
        Ok(Self {
            constant,
            linear,
            quadratic,
        })
    }

    /// Constant family `F(x) = C` over `p` parameters.
    pub fn constant(value: DMatrix<T>, p: usize) -> Self {
        let (m, n) = value.shape();
        Self {
            constant: value,
            linear: vec![DMatrix::zeros(m, n); p],
            quadratic: vec![DMatrix::zeros(m, n); p * (p + 1) / 2],
        }
    }

    fn value(&self, x: &DVector<T>) -> DMatrix<T> {
        let mut f = self.constant.clone();
        for (p, l) in self.linear.iter().enumerate() {
            f += l * x[p];
        }
        for p in 0..x.len() {
            for q in 0..=p {
                f += &self.quadratic[pair_index(q, p)] * (x[q] * x[p]);
            }
        }
        f
    }

    fn first(&self, x: &DVector<T>, p: usize) -> DMatrix<T> {
        let mut d = self.linear[p].clone();
        for r in 0..x.len() {
            let coeff = if r == p { x[p] + x[p] } else { x[r] };
            d += &self.quadratic[pair_index(p, r)] * coeff;
        }
        d
    }
}

impl<T: Real> FrameFamily<T> for PolynomialFamily<T> {
    fn dims(&self) -> Dims {
        Dims::new(self.constant.nrows(), self.constant.ncols(), self.linear.len())
    }

    fn jet(&self, x: &ParameterPoint<T>, order: JetOrder) -> Result<FrameJet<T>> {
        let dims = self.dims();
        if x.len() != dims.p {
            return Err(Error::DimensionMismatch {
                what: "parameter point",
                expected: dims.p,
                found: x.len(),
            });
        }
        let x = x.coords();
        let value = self.value(x);
        if order == JetOrder::Value {
            return Ok(FrameJet::value_only(value));
        }
        let first = (0..dims.p).map(|p| self.first(x, p)).collect();
        let jet = FrameJet::with_first(value, first)?;
        if order == JetOrder::First {
            return Ok(jet);
        }
        let mut packed = vec![DMatrix::zeros(0, 0); dims.packed_pairs()];
        for p in 0..dims.p {
            for q in 0..=p {
                let c = &self.quadratic[pair_index(q, p)];
                packed[pair_index(q, p)] = if q == p { c * lit::<T>(2.0) } else { c.clone() };
            }
        }
        jet.with_second(packed)
    }
}

/// Extreme singular values `(σ_min, σ_max)` of `F`, failing with
/// [`Error::RankDeficient`] unless `σ_min > RANK_TOLERANCE · σ_max`.
///
/// When `F` has fewer columns than rows, `σ_min` is reported as zero.
pub fn singular_range<T: Real>(f: &DMatrix<T>) -> Result<(T, T)> {
    let (smin, smax) = extreme_singular_values(f);
    if smax > T::zero() && smin > lit::<T>(RANK_TOLERANCE) * smax {
        Ok((smin, smax))
    } else {
        Err(Error::RankDeficient {
            smallest: to_f64(smin),
            largest: to_f64(smax),
        })
    }
}

pub(crate) fn extreme_singular_values<T: Real>(f: &DMatrix<T>) -> (T, T) {
    if f.is_empty() {
        return (T::zero(), T::zero());
    }
    let sv = f.clone().singular_values();
    let smax = sv.iter().copied().fold(T::zero(), |a, b| a.max(b));
    let smin = if f.ncols() < f.nrows() {
        T::zero()
    } else {
        sv.iter().copied().fold(smax, |a, b| a.min(b))
    };
    (smin, smax)
}

/// Canonical dual of a frame, factored once and reused.
///
/// Holds `G = F*(FF*)⁻¹` (the analysis-side dual synthesis, `N×M`) and an
/// orthonormal basis `Q` of the range of `F*`, both obtained from a QR
/// factorization `F* = QR`. Then `G = Q R⁻*` and `Π = I − QQ*`.
#[derive(Debug, Clone)]
pub struct DualFrame<T: Real> {
    dual: DMatrix<T>,
    basis: DMatrix<T>,
    singular: (T, T),
}

impl<T: Real> DualFrame<T> {
    pub fn new(f: &DMatrix<T>) -> Result<Self> {
        let singular = singular_range(f)?;
        let qr = f.transpose().qr();
        let basis = qr.q();
        let r = qr.r();
        let dual_t = r
            .solve_upper_triangular(&basis.transpose())
            .ok_or(Error::RankDeficient {
                smallest: to_f64(singular.0),
                largest: to_f64(singular.1),
            })?;
        Ok(Self {
            dual: dual_t.transpose(),
            basis,
            singular,
        })
    }

    /// `G = F*(FF*)⁻¹`, size `N×M`.
    pub fn matrix(&self) -> &DMatrix<T> {
        &self.dual
    }

    /// Orthonormal basis of the range of `F*`, size `N×M`.
    pub fn range_basis(&self) -> &DMatrix<T> {
        &self.basis
    }

    /// `(σ_min, σ_max)` of the synthesis matrix.
    pub fn singular_values(&self) -> (T, T) {
        self.singular
    }

    /// Dual-frame coefficients `(FF*)⁻¹F w = G* w`, length `M`.
    pub fn coefficients(&self, w: &DVector<T>) -> DVector<T> {
        self.dual.tr_mul(w)
    }

    /// `G y` for `y ∈ ℝᴹ`.
    pub fn apply(&self, y: &DVector<T>) -> DVector<T> {
        &self.dual * y
    }

    /// `Π w = w − QQ* w`.
    pub fn project_null(&self, w: &DVector<T>) -> DVector<T> {
        w - &self.basis * self.basis.tr_mul(w)
    }
}

/// `G = F*(FF*)⁻¹`, the synthesis operator of the canonical dual frame
/// transposed, computed without forming `(FF*)⁻¹`.
pub fn dual_synthesis<T: Real>(f: &DMatrix<T>) -> Result<DMatrix<T>> {
    DualFrame::new(f).map(|d| d.dual)
}

/// `Π w = w − G(Fw)`.
pub fn project_null<T: Real>(
    f: &DMatrix<T>,
    g: &DMatrix<T>,
    w: &Measurement<T>,
) -> Result<DVector<T>> {
    let (m, n) = f.shape();
    if g.shape() != (n, m) {
        return Err(Error::DimensionMismatch {
            what: "dual synthesis rows",
            expected: n,
            found: g.nrows(),
        });
    }
    w.expect_len(n)?;
    let w = w.values();
    Ok(w - g * (f * w))
}

/// `E(x) = ‖Π(x)w‖²`.
pub fn error_value<T: Real, F: FrameFamily<T> + ?Sized>(
    family: &F,
    x: &ParameterPoint<T>,
    w: &Measurement<T>,
) -> Result<T> {
    w.expect_len(family.dims().n)?;
    let jet = family.jet(x, JetOrder::Value)?;
    let dual = DualFrame::new(jet.synthesis())?;
    Ok(dual.project_null(w.values()).norm_squared())
}

/// Optimal frame bounds `(A, B)`: the extreme eigenvalues of `FF*`.
///
/// `A` is zero when the columns do not span `ℝᴹ`.
pub fn frame_bounds<T: Real>(f: &DMatrix<T>) -> (T, T) {
    let (smin, smax) = extreme_singular_values(f);
    (smin * smin, smax * smax)
}
