//! FDOA multistatic radar as a frame family.
//!
//! Each transmitter/receiver pair `(a_n, b_n)` defines the bistatic distance
//! `φ_n(x) = ‖x − a_n‖ + ‖x − b_n‖`. The frame element at a target position
//! `x` is its gradient, the sum of the unit vectors pointing from `a_n` and
//! from `b_n` towards the target. A target moving with velocity `v` produces
//! the FDOA (range-rate) measurement `w_n = ⟨v, f_n(x)⟩`, so noiseless data
//! lies exactly in the range of the analysis operator `F*(x)`.
//!
//! Positions are in meters and measurements in meters per second; no carrier
//! frequency enters the model.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::frame::{
    pair_index, singular_range, Dims, FrameFamily, FrameJet, JetOrder, Measurement,
    ParameterPoint,
};
use crate::scalar::{is_finite, lit, to_f64, Real};

/// Relative singularity tolerance, scaled by the sensor-layout diameter.
pub const SINGULARITY_TOLERANCE: f64 = 1e-9;

/// Fixed transmitter and receiver positions.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarGeometry<T: Real> {
    dim: usize,
    transmitters: Vec<DVector<T>>,
    receivers: Vec<DVector<T>>,
}

impl<T: Real> RadarGeometry<T> {
    pub fn new(dim: usize, transmitters: Vec<DVector<T>>, receivers: Vec<DVector<T>>) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(Error::Invalid(format!("dimension must be 2 or 3, got {dim}")));
        }
        if transmitters.is_empty() {
            return Err(Error::Invalid("at least one transmitter/receiver pair is required".into()));
        }
        if transmitters.len() != receivers.len() {
            return Err(Error::DimensionMismatch {
                what: "receiver list",
                expected: transmitters.len(),
                found: receivers.len(),
            });
        }
        for point in transmitters.iter().chain(&receivers) {
            if point.len() != dim {
                return Err(Error::DimensionMismatch {
                    what: "sensor position",
                    expected: dim,
                    found: point.len(),
                });
            }
            if !point.iter().all(|v| is_finite(*v)) {
                return Err(Error::NonFinite("sensor position"));
            }
        }
        Ok(Self {
            dim,
            transmitters,
            receivers,
        })
    }

    pub fn from_coords(dim: usize, transmitters: &[Vec<T>], receivers: &[Vec<T>]) -> Result<Self> {
        let conv = |pts: &[Vec<T>]| pts.iter().map(|p| DVector::from_column_slice(p)).collect();
        Self::new(dim, conv(transmitters), conv(receivers))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pairs(&self) -> usize {
        self.transmitters.len()
    }

    pub fn transmitter(&self, n: usize) -> &DVector<T> {
        &self.transmitters[n]
    }

    pub fn receiver(&self, n: usize) -> &DVector<T> {
        &self.receivers[n]
    }

    /// Largest distance between any two sensors, or one for a single
    /// monostatic site.
    pub fn diameter(&self) -> T {
        let all: Vec<_> = self.transmitters.iter().chain(&self.receivers).collect();
        let mut d = T::zero();
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                d = d.max((*a - *b).norm());
            }
        }
        if d > T::zero() {
            d
        } else {
            T::one()
        }
    }

    /// Minimum admissible distance between the target and any sensor.
    pub fn singularity_tolerance(&self) -> T {
        lit::<T>(SINGULARITY_TOLERANCE) * self.diameter()
    }

    /// Fails with [`Error::NearSingular`] if `x` is too close to a sensor.
    pub fn check_clearance(&self, x: &DVector<T>) -> Result<()> {
        let tol = self.singularity_tolerance();
        let nearest = self
            .transmitters
            .iter()
            .chain(&self.receivers)
            .map(|s| (x - s).norm())
            .fold(T::max_value().unwrap_or(lit(f64::MAX)), |a, b| a.min(b));
        if nearest > tol {
            Ok(())
        } else {
            Err(Error::NearSingular {
                distance: to_f64(nearest),
                tolerance: to_f64(tol),
            })
        }
    }
}

/// Target position and velocity at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetState<T: Real> {
    pub position: DVector<T>,
    pub velocity: DVector<T>,
}

/// I.i.d. Gaussian measurement noise.
///
/// Samples come from ChaCha20 (`ChaCha20Rng::seed_from_u64(seed)`) turned
/// into normals by the cosine branch of Box–Muller, one normal per pair of
/// uniforms: `z = sqrt(−2 ln(1 − u₁)) cos(2π u₂)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self { sigma: 0.0, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma >= 0.0 && self.sigma.is_finite() {
            Ok(())
        } else {
            Err(Error::Invalid(format!("noise sigma must be finite and >= 0, got {}", self.sigma)))
        }
    }

    /// Stream of `N(0, σ²)` samples; empty of randomness when `σ = 0`.
    pub fn sampler(&self) -> GaussianStream {
        GaussianStream {
            rng: ChaCha20Rng::seed_from_u64(self.seed),
            sigma: self.sigma,
        }
    }
}

pub struct GaussianStream {
    rng: ChaCha20Rng,
    sigma: f64,
}

impl GaussianStream {
    pub fn next_sample(&mut self) -> f64 {
        if self.sigma == 0.0 {
            return 0.0;
        }
        let u1: f64 = self.rng.random();
        let u2: f64 = self.rng.random();
        let radius = (-2.0 * (1.0 - u1).ln()).sqrt();
        self.sigma * radius * (std::f64::consts::TAU * u2).cos()
    }
}

/// `φ_n(x) = ‖x − a_n‖ + ‖x − b_n‖` (zero-based `n`).
pub fn bistatic_distance<T: Real>(geometry: &RadarGeometry<T>, n: usize, x: &DVector<T>) -> T {
    (x - geometry.transmitter(n)).norm() + (x - geometry.receiver(n)).norm()
}

/// `π(x) = I − xx*/‖x‖²`, the projector onto the orthogonal complement of `x`.
pub fn orthogonal_projector<T: Real>(x: &DVector<T>) -> DMatrix<T> {
    let m = x.len();
    DMatrix::identity(m, m) - x * x.transpose() / x.norm_squared()
}

/// `x/‖x‖` with its first and second partials.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVectorJet<T: Real> {
    pub value: DVector<T>,
    /// `∂/∂x_p (x/‖x‖) = π(x)δ_p / ‖x‖`, indexed by `p`.
    pub first: Vec<DVector<T>>,
    /// Packed second partials (see [`pair_index`]).
    pub second: Vec<DVector<T>>,
}

impl<T: Real> UnitVectorJet<T> {
    pub fn second(&self, q: usize, p: usize) -> &DVector<T> {
        &self.second[pair_index(q, p)]
    }
}

/// Jet of the normalization map at `x`, failing with
/// [`Error::NearSingular`] when `‖x‖ ≤ tolerance`.
///
/// The second partials are
/// `−‖x‖⁻³ [π(x)(δ_pδ_q* + δ_qδ_p*) + (δ_p*π(x)δ_q) I] x`.
pub fn unit_vector_jet<T: Real>(x: &DVector<T>, tolerance: T) -> Result<UnitVectorJet<T>> {
    unit_vector_jet_to(x, tolerance, JetOrder::Second)
}

fn unit_vector_jet_to<T: Real>(x: &DVector<T>, tolerance: T, order: JetOrder) -> Result<UnitVectorJet<T>> {
    let r = x.norm();
    if r <= tolerance {
        return Err(Error::NearSingular {
            distance: to_f64(r),
            tolerance: to_f64(tolerance),
        });
    }
    let value = x / r;
    let m = x.len();
    if order == JetOrder::Value {
        return Ok(UnitVectorJet {
            value,
            first: Vec::new(),
            second: Vec::new(),
        });
    }
    let proj = orthogonal_projector(x);
    let first = (0..m).map(|p| proj.column(p) / r).collect();
    let mut second = Vec::new();
    if order == JetOrder::Second {
        let scale = -T::one() / (r * r * r);
        second.reserve(m * (m + 1) / 2);
        for p in 0..m {
            for q in 0..=p {
                let v = proj.column(p) * x[q] + proj.column(q) * x[p] + x * proj[(p, q)];
                second.push(v * scale);
            }
        }
    }
    Ok(UnitVectorJet { value, first, second })
}

/// `f_n(x) = ∇φ_n(x)`, the sum of the unit vectors from `a_n` and `b_n` to `x`.
pub fn frame_element<T: Real>(geometry: &RadarGeometry<T>, n: usize, x: &DVector<T>) -> Result<DVector<T>> {
    let tol = geometry.singularity_tolerance();
    let from_tx = unit_vector_jet_to(&(x - geometry.transmitter(n)), tol, JetOrder::Value)?;
    let from_rx = unit_vector_jet_to(&(x - geometry.receiver(n)), tol, JetOrder::Value)?;
    Ok(from_tx.value + from_rx.value)
}

/// The radar frame family: `P = M`, column `n` of `F(x)` is `f_n(x)`.
#[derive(Debug, Clone)]
pub struct RadarFamily<T: Real> {
    geometry: RadarGeometry<T>,
}

impl<T: Real> RadarFamily<T> {
    pub fn new(geometry: RadarGeometry<T>) -> Self {
        Self { geometry }
    }

    pub fn geometry(&self) -> &RadarGeometry<T> {
        &self.geometry
    }
}

/// Shorthand for [`RadarFamily::new`].
pub fn radar_family<T: Real>(geometry: RadarGeometry<T>) -> RadarFamily<T> {
    RadarFamily::new(geometry)
}

impl<T: Real> FrameFamily<T> for RadarFamily<T> {
    fn dims(&self) -> Dims {
        let m = self.geometry.dim();
        Dims::new(m, self.geometry.pairs(), m)
    }

    fn jet(&self, x: &ParameterPoint<T>, order: JetOrder) -> Result<FrameJet<T>> {
        let Dims { m, n, .. } = self.dims();
        if x.len() != m {
            return Err(Error::DimensionMismatch {
                what: "parameter point",
                expected: m,
                found: x.len(),
            });
        }
        let x = x.coords();
        let tol = self.geometry.singularity_tolerance();
        let mut value = DMatrix::zeros(m, n);
        let mut first = vec![DMatrix::zeros(m, n); if order >= JetOrder::First { m } else { 0 }];
        let mut second =
            vec![DMatrix::zeros(m, n); if order == JetOrder::Second { m * (m + 1) / 2 } else { 0 }];
        for col in 0..n {
            for sensor in [self.geometry.transmitter(col), self.geometry.receiver(col)] {
                let unit = unit_vector_jet_to(&(x - sensor), tol, order)?;
                let mut c = value.column_mut(col);
                c += &unit.value;
                for (d, u) in first.iter_mut().zip(&unit.first) {
                    let mut c = d.column_mut(col);
                    c += u;
                }
                for (d, u) in second.iter_mut().zip(&unit.second) {
                    let mut c = d.column_mut(col);
                    c += u;
                }
            }
        }
        match order {
            JetOrder::Value => Ok(FrameJet::value_only(value)),
            JetOrder::First => FrameJet::with_first(value, first),
            JetOrder::Second => FrameJet::with_first(value, first)?.with_second(second),
        }
    }

    fn contains(&self, x: &ParameterPoint<T>) -> bool {
        x.len() == self.geometry.dim()
            && self.geometry.check_clearance(x.coords()).is_ok()
            && self
                .jet(x, JetOrder::Value)
                .and_then(|jet| singular_range(jet.synthesis()))
                .is_ok()
    }
}

/// `w = F*(x₀)v₀ + ε` for a target at `truth`.
pub fn simulate_fdoa<T: Real>(
    geometry: &RadarGeometry<T>,
    truth: &TargetState<T>,
    noise: &NoiseModel,
) -> Result<Measurement<T>> {
    noise.validate()?;
    let family = RadarFamily::new(geometry.clone());
    let x0 = ParameterPoint::new(truth.position.clone())?;
    if truth.velocity.len() != geometry.dim() {
        return Err(Error::DimensionMismatch {
            what: "target velocity",
            expected: geometry.dim(),
            found: truth.velocity.len(),
        });
    }
    geometry.check_clearance(x0.coords())?;
    let jet = family.jet(&x0, JetOrder::Value)?;
    let mut w = jet.synthesis().tr_mul(&truth.velocity);
    let mut stream = noise.sampler();
    for value in w.iter_mut() {
        *value += lit::<T>(stream.next_sample());
    }
    Measurement::new(w)
}

/// Geometry, truth and noise bundled together.
#[derive(Debug, Clone)]
pub struct RadarScenario<T: Real> {
    pub geometry: RadarGeometry<T>,
    pub truth: TargetState<T>,
    pub noise: NoiseModel,
}

impl<T: Real> RadarScenario<T> {
    pub fn family(&self) -> RadarFamily<T> {
        RadarFamily::new(self.geometry.clone())
    }

    pub fn measurement(&self) -> Result<Measurement<T>> {
        simulate_fdoa(&self.geometry, &self.truth, &self.noise)
    }

    /// Checks that the truth lies in the frame domain.
    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        let dim = self.geometry.dim();
        for (what, v) in [("target position", &self.truth.position), ("target velocity", &self.truth.velocity)] {
            if v.len() != dim {
                return Err(Error::DimensionMismatch { what, expected: dim, found: v.len() });
            }
            if !v.iter().all(|c| is_finite(*c)) {
                return Err(Error::NonFinite(what));
            }
        }
        self.geometry.check_clearance(&self.truth.position)?;
        Ok(())
    }
}

/// Layout parameters for [`generic_scene`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneLayout {
    /// Sensor distances from the origin are drawn uniformly from this range.
    pub sensor_radius: (f64, f64),
    /// Uniform perturbation (radians) of each evenly spaced sensor bearing.
    pub bearing_jitter: f64,
    /// Target coordinates are drawn uniformly from `[-extent, extent]`.
    pub target_extent: f64,
    /// Velocity coordinates are drawn uniformly from `[-speed, speed]`.
    pub speed: f64,
}

impl Default for SceneLayout {
    fn default() -> Self {
        Self {
            sensor_radius: (60.0, 75.0),
            bearing_jitter: 0.2,
            target_extent: 8.0,
            speed: 2.0,
        }
    }
}

/// Unit directions for `count` sensors, evenly spread around the origin
/// (a circle in 2-D, a Fibonacci lattice in 3-D), rotated by a random offset
/// and jittered.
fn spread_directions(rng: &mut ChaCha20Rng, dim: usize, count: usize, jitter: f64) -> Vec<DVector<f64>> {
    use std::f64::consts::TAU;
    let offset = rng.random_range(0.0..TAU);
    let golden = TAU * (1.0 - 1.0 / ((1.0 + 5f64.sqrt()) / 2.0));
    (0..count)
        .map(|k| {
            let shake = if jitter > 0.0 { rng.random_range(-jitter..=jitter) } else { 0.0 };
            if dim == 2 {
                let a = offset + TAU * k as f64 / count as f64 + shake;
                DVector::from_vec(vec![a.cos(), a.sin()])
            } else {
                let z = 1.0 - (2 * k + 1) as f64 / count as f64;
                let r = (1.0 - z * z).sqrt();
                let a = offset + golden * k as f64 + shake;
                DVector::from_vec(vec![r * a.cos(), r * a.sin(), z])
            }
        })
        .collect()
}

/// Seeded random scene: transmitters and receivers alternate around a ring
/// (or shell) enclosing the target box, target inside the box.
pub fn generic_scene<T: Real>(seed: u64, dim: usize, pairs: usize, layout: SceneLayout) -> Result<RadarScenario<T>> {
    if dim != 2 && dim != 3 {
        return Err(Error::Invalid(format!("dimension must be 2 or 3, got {dim}")));
    }
    let (lo, hi) = layout.sensor_radius;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) || !(layout.bearing_jitter >= 0.0) {
        return Err(Error::Invalid("invalid scene layout".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let sensors: Vec<DVector<T>> = spread_directions(&mut rng, dim, 2 * pairs, layout.bearing_jitter)
        .into_iter()
        .map(|d| (d * rng.random_range(lo..=hi)).map(lit::<T>))
        .collect();
    let tx = sensors.iter().step_by(2).cloned().collect();
    let rx = sensors.iter().skip(1).step_by(2).cloned().collect();
    let e = layout.target_extent;
    let s = layout.speed;
    let position = DVector::from_fn(dim, |_, _| lit::<T>(rng.random_range(-e..=e)));
    let velocity = DVector::from_fn(dim, |_, _| lit::<T>(rng.random_range(-s..=s)));
    let scenario = RadarScenario {
        geometry: RadarGeometry::new(dim, tx, rx)?,
        truth: TargetState { position, velocity },
        noise: NoiseModel::noiseless(),
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Constant-acceleration motion `x(t) = x₀ + v₀t + ½at²`.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicTrack<T: Real> {
    pub position: DVector<T>,
    pub velocity: DVector<T>,
    pub acceleration: DVector<T>,
}

impl<T: Real> KinematicTrack<T> {
    pub fn state_at(&self, t: T) -> TargetState<T> {
        let half = lit::<T>(0.5);
        TargetState {
            position: &self.position + &self.velocity * t + &self.acceleration * (half * t * t),
            velocity: &self.velocity + &self.acceleration * t,
        }
    }

    /// Noiseless FDOA samples `F*(x(t))ẋ(t)` plus noise drawn from one
    /// stream across all times, in time-major order.
    pub fn sample(&self, geometry: &RadarGeometry<T>, times: &[T], noise: &NoiseModel) -> Result<Vec<DVector<T>>> {
        noise.validate()?;
        let family = RadarFamily::new(geometry.clone());
        let mut stream = noise.sampler();
        times
            .iter()
            .map(|&t| {
                let state = self.state_at(t);
                let x = ParameterPoint::new(state.position)?;
                let jet = family.jet(&x, JetOrder::Value)?;
                let mut w = jet.synthesis().tr_mul(&state.velocity);
                for v in w.iter_mut() {
                    *v += lit::<T>(stream.next_sample());
                }
                Ok(w)
            })
            .collect()
    }

    /// Exact time derivative of the noiseless FDOA vector,
    /// `ẇ = F*(x)a + Σ_p ẋ_p (∂F/∂x_p)* ẋ`.
    pub fn fdoa_rate(&self, geometry: &RadarGeometry<T>, t: T) -> Result<DVector<T>> {
        let family = RadarFamily::new(geometry.clone());
        let state = self.state_at(t);
        let jet = family.jet(&ParameterPoint::new(state.position)?, JetOrder::First)?;
        let v = &state.velocity;
        let mut rate = jet.synthesis().tr_mul(&self.acceleration);
        for (p, d) in jet.partials().iter().enumerate() {
            rate += d.tr_mul(v) * v[p];
        }
        Ok(rate)
    }
}
