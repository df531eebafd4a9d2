//! Analytic gradient and Hessian of the error function `E(x) = ⟨w, Π(x)w⟩`.
//!
//! With `G = F*(FF*)⁻¹` the operators involved are
//!
//! ```text
//! Π       = I − G F
//! Π_p     = G ∂F/∂x_p
//! Π_{q,p} = G ∂²F/∂x_q∂x_p
//! ```
//!
//! and the derivatives are
//!
//! ```text
//! ∂E/∂x_p        = −2⟨w, Π_p Π w⟩
//! ∂²E/∂x_q∂x_p   =  2⟨w, (Π_p Π_q + Π_q Π_p) Π w⟩ + 2⟨Π Π_p* w, Π Π_q* w⟩
//!                  − 2⟨Π_q Π w, Π_p Π w⟩ − 2⟨w, Π_{q,p} Π w⟩.
//! ```
//!
//! None of these operators is ever formed as a matrix. Every quantity is a
//! vector obtained through matrix-vector products with `F`, its partials
//! and `G`, and the derivatives are inner products of those vectors.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::frame::{
    error_value, pair_index, DualFrame, FrameFamily, FrameJet, JetOrder, Measurement,
    ParameterPoint,
};
use crate::scalar::{lit, Real};

/// Default central-difference step for gradients.
pub const FD_GRADIENT_STEP: f64 = 1e-5;
/// Default central-difference step for Hessians (differencing the analytic gradient).
pub const FD_HESSIAN_STEP: f64 = 1e-4;

/// Cached vectors from which `∇E` and `∇²E` are assembled.
#[derive(Debug, Clone)]
pub struct ProjectorPieces<T: Real> {
    dual: DualFrame<T>,
    /// `Π w`
    pub residual: DVector<T>,
    /// `Π_p Π w` for each `p`
    pub pp_pw: Vec<DVector<T>>,
    /// `Π_p* w` for each `p`
    pub pps_w: Vec<DVector<T>>,
    /// `Π Π_p* w` for each `p`
    pub p_pps_w: Vec<DVector<T>>,
    pqp_pw: Vec<DVector<T>>,
}

impl<T: Real> ProjectorPieces<T> {
    /// `Π_{q,p} Π w`; symmetric in `q, p`.
    pub fn pqp_pw(&self, q: usize, p: usize) -> &DVector<T> {
        &self.pqp_pw[pair_index(q, p)]
    }

    pub fn dual(&self) -> &DualFrame<T> {
        &self.dual
    }

    pub fn parameter_count(&self) -> usize {
        self.pp_pw.len()
    }
}

/// Computes the quantities `Πw`, `{Π_pΠw}`, `{Π_p*w}`, `{ΠΠ_p*w}` and
/// `{Π_{q,p}Πw}` in that order, reusing one dual factorization.
pub fn projector_pieces<T: Real>(
    jet: &FrameJet<T>,
    w: &Measurement<T>,
) -> Result<ProjectorPieces<T>> {
    let f = jet.synthesis();
    w.expect_len(f.ncols())?;
    if jet.order() != JetOrder::Second {
        return Err(Error::MissingSecondOrder);
    }
    let p_count = jet.parameter_count();
    let dual = DualFrame::new(f)?;
    let w = w.values();

    let residual = dual.project_null(w);
    let pp_pw: Vec<_> = jet
        .partials()
        .iter()
        .map(|d| dual.apply(&(d * &residual)))
        .collect();
    // Π_p* w = ∂F*/∂x_p G* w: one M-vector of dual coefficients shared by all p.
    let coefficients = dual.coefficients(w);
    let pps_w: Vec<_> = jet
        .partials()
        .iter()
        .map(|d| d.tr_mul(&coefficients))
        .collect();
    let p_pps_w = pps_w.iter().map(|u| dual.project_null(u)).collect();
    let mut pqp_pw = Vec::with_capacity(p_count * (p_count + 1) / 2);
    for p in 0..p_count {
        for q in 0..=p {
            debug_assert_eq!(pqp_pw.len(), pair_index(q, p));
            pqp_pw.push(dual.apply(&(jet.second_partial(q, p)? * &residual)));
        }
    }

    Ok(ProjectorPieces {
        dual,
        residual,
        pp_pw,
        pps_w,
        p_pps_w,
        pqp_pw,
    })
}

/// `∂E/∂x_p = −2⟨w, Π_p Π w⟩`.
pub fn gradient<T: Real>(pieces: &ProjectorPieces<T>, w: &Measurement<T>) -> Result<DVector<T>> {
    w.expect_len(pieces.residual.len())?;
    let w = w.values();
    let minus_two = lit::<T>(-2.0);
    Ok(DVector::from_iterator(
        pieces.parameter_count(),
        pieces.pp_pw.iter().map(|v| minus_two * w.dot(v)),
    ))
}

fn hessian_entry<T: Real>(pieces: &ProjectorPieces<T>, w: &DVector<T>, q: usize, p: usize) -> T {
    let cross = pieces.pps_w[p].dot(&pieces.pp_pw[q]) + pieces.pps_w[q].dot(&pieces.pp_pw[p]);
    let range = pieces.p_pps_w[p].dot(&pieces.p_pps_w[q]);
    let null = pieces.pp_pw[q].dot(&pieces.pp_pw[p]);
    let curvature = w.dot(pieces.pqp_pw(q, p));
    lit::<T>(2.0) * (cross + range - null - curvature)
}

/// Analytic Hessian, assembled on the upper triangle and mirrored.
pub fn hessian<T: Real>(pieces: &ProjectorPieces<T>, w: &Measurement<T>) -> Result<DMatrix<T>> {
    w.expect_len(pieces.residual.len())?;
    let w = w.values();
    let n = pieces.parameter_count();
    let mut h = DMatrix::zeros(n, n);
    for p in 0..n {
        for q in 0..=p {
            let value = hessian_entry(pieces, w, q, p);
            h[(q, p)] = value;
            h[(p, q)] = value;
        }
    }
    Ok(h)
}

/// Hessian entry `(q, p)` evaluated term by term from the operator form,
/// applying `Π_p` to `Π_q Π w` directly instead of using the rearranged
/// inner products. Used to check the symmetry of the assembly.
pub fn raw_hessian_entry<T: Real>(
    jet: &FrameJet<T>,
    pieces: &ProjectorPieces<T>,
    w: &Measurement<T>,
    q: usize,
    p: usize,
) -> Result<T> {
    w.expect_len(pieces.residual.len())?;
    let w = w.values();
    let dual = pieces.dual();
    let apply = |r: usize, v: &DVector<T>| dual.apply(&(jet.partial(r) * v));
    let first = w.dot(&apply(p, &pieces.pp_pw[q])) + w.dot(&apply(q, &pieces.pp_pw[p]));
    let second = pieces.p_pps_w[p].dot(&pieces.p_pps_w[q]);
    let third = pieces.pp_pw[q].dot(&pieces.pp_pw[p]);
    let fourth = w.dot(&dual.apply(&(jet.second_partial(q, p)? * &pieces.residual)));
    Ok(lit::<T>(2.0) * (first + second - third - fourth))
}

/// Value, gradient and Hessian of `E` at one point.
#[derive(Debug, Clone)]
pub struct Derivatives<T: Real> {
    pub value: T,
    pub gradient: DVector<T>,
    pub hessian: DMatrix<T>,
}

/// Evaluates `E`, `∇E` and `∇²E` at `x`.
pub fn derivatives<T: Real, F: FrameFamily<T> + ?Sized>(
    family: &F,
    x: &ParameterPoint<T>,
    w: &Measurement<T>,
) -> Result<Derivatives<T>> {
    let jet = family.jet(x, JetOrder::Second)?;
    let pieces = projector_pieces(&jet, w)?;
    Ok(Derivatives {
        value: pieces.residual.norm_squared(),
        gradient: gradient(&pieces, w)?,
        hessian: hessian(&pieces, w)?,
    })
}

/// Analytic gradient at `x`.
pub fn analytic_gradient<T: Real, F: FrameFamily<T> + ?Sized>(
    family: &F,
    x: &ParameterPoint<T>,
    w: &Measurement<T>,
) -> Result<DVector<T>> {
    let jet = family.jet(x, JetOrder::Second)?;
    gradient(&projector_pieces(&jet, w)?, w)
}

fn check_step<T: Real>(h: T) -> Result<()> {
    if h > T::zero() && crate::scalar::is_finite(h) {
        Ok(())
    } else {
        Err(Error::InvalidStep)
    }
}

/// Central-difference gradient `(E(x+hδ_p) − E(x−hδ_p)) / 2h`.
pub fn fd_gradient<T: Real, F: FrameFamily<T> + ?Sized>(
    family: &F,
    x: &ParameterPoint<T>,
    w: &Measurement<T>,
    h: T,
) -> Result<DVector<T>> {
    check_step(h)?;
    let two_h = h + h;
    let mut g = DVector::zeros(x.len());
    for p in 0..x.len() {
        let plus = error_value(family, &x.offset(p, h)?, w)?;
        let minus = error_value(family, &x.offset(p, -h)?, w)?;
        g[p] = (plus - minus) / two_h;
    }
    Ok(g)
}

/// Central differences of the analytic gradient; column `p` approximates
/// `∂(∇E)/∂x_p`. The result is not symmetrized.
pub fn fd_hessian<T: Real, F: FrameFamily<T> + ?Sized>(
    family: &F,
    x: &ParameterPoint<T>,
    w: &Measurement<T>,
    h: T,
) -> Result<DMatrix<T>> {
    check_step(h)?;
    let two_h = h + h;
    let n = x.len();
    let mut hess = DMatrix::zeros(n, n);
    for p in 0..n {
        let plus = analytic_gradient(family, &x.offset(p, h)?, w)?;
        let minus = analytic_gradient(family, &x.offset(p, -h)?, w)?;
        hess.set_column(p, &((plus - minus) / two_h));
    }
    Ok(hess)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::PolynomialFamily;
    use nalgebra::dmatrix;

    fn constant_family() -> PolynomialFamily<f64> {
        PolynomialFamily::constant(dmatrix![1.0, 0.5, 0.0, 2.0; 0.0, 1.0, -1.0, 0.3], 2)
    }

    #[test]
    fn constant_family_has_vanishing_derivatives() {
        let family = constant_family();
        let x = ParameterPoint::from_slice(&[0.3, -0.7]).unwrap();
        let w = Measurement::from_slice(&[1.0, -2.0, 0.5, 3.0]).unwrap();
        let jet = family.jet(&x, JetOrder::Second).unwrap();
        let pieces = projector_pieces(&jet, &w).unwrap();
        assert!(pieces.residual.norm() > 0.1);
        for p in 0..2 {
            assert_eq!(pieces.pp_pw[p].amax(), 0.0);
            assert_eq!(pieces.pps_w[p].amax(), 0.0);
            assert_eq!(pieces.p_pps_w[p].amax(), 0.0);
            for q in 0..2 {
                assert_eq!(pieces.pqp_pw(q, p).amax(), 0.0);
            }
        }
        assert_eq!(gradient(&pieces, &w).unwrap().amax(), 0.0);
        assert_eq!(hessian(&pieces, &w).unwrap().amax(), 0.0);
        let fd = fd_gradient(&family, &x, &w, 1e-5).unwrap();
        assert!(fd.amax() <= 1e-12);
    }

    #[test]
    fn missing_second_order_is_reported() {
        let family = constant_family();
        let x = ParameterPoint::from_slice(&[0.0, 0.0]).unwrap();
        let w = Measurement::from_slice(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        let jet = family.jet(&x, JetOrder::First).unwrap();
        assert_eq!(projector_pieces(&jet, &w).unwrap_err(), Error::MissingSecondOrder);
    }

    #[test]
    fn zero_step_is_rejected() {
        let family = constant_family();
        let x = ParameterPoint::from_slice(&[0.0, 0.0]).unwrap();
        let w = Measurement::from_slice(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(fd_gradient(&family, &x, &w, 0.0).unwrap_err(), Error::InvalidStep);
        assert_eq!(fd_hessian(&family, &x, &w, -1.0).unwrap_err(), Error::InvalidStep);
    }

    #[test]
    fn square_frame_residual_is_zero() {
        let lin = dmatrix![0.1, 0.0; 0.2, -0.3];
        let family = PolynomialFamily::new(
            dmatrix![1.0, 0.2; -0.1, 1.0],
            vec![lin.clone()],
            vec![lin * 0.5],
        )
        .unwrap();
        let x = ParameterPoint::from_slice(&[0.4]).unwrap();
        let w = Measurement::from_slice(&[1.5, -0.5]).unwrap();
        let jet = family.jet(&x, JetOrder::Second).unwrap();
        let pieces = projector_pieces(&jet, &w).unwrap();
        assert!(pieces.residual.amax() < 1e-14);
        assert!(pieces.pp_pw[0].amax() < 1e-14);
        assert!(pieces.pqp_pw(0, 0).amax() < 1e-14);
    }
}
