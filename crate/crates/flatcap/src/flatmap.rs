//! Coordinate change between physical quadcopter inputs and flat-space
//! accelerations.
//!
//! The translational dynamics `σ̈ = h_ψ(u)` with input `u = (T, φ, θ)` become
//! the double integrator `σ̈ = v` once the input is generated through the
//! inverse transformation `u = φ_ψ(v)`. Three sets matter downstream:
//!
//! * the physical input box `U` (thrust and attitude bounds),
//! * its exact flat-space preimage `V = {v : φ_ψ(v) ∈ U}`, which is
//!   non-convex and depends on the yaw angle `ψ`,
//! * a convex, yaw-independent inner subset of `V` obtained by intersecting
//!   a ball with an upward cone (`contains_flat_convex`).
//!
//! Everything here is a pure function of its arguments.

use nalgebra::{Matrix3, Vector3, Vector6};
use serde::Deserialize;
use thiserror::Error;

/// Commanded acceleration in the flat output space, m/s².
pub type FlatInput = Vector3<f64>;

/// Physical input: normalized thrust (m/s²), roll and pitch (rad).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyInput {
    pub thrust: f64,
    pub roll: f64,
    pub pitch: f64,
}

impl BodyInput {
    pub fn new(thrust: f64, roll: f64, pitch: f64) -> Self {
        Self { thrust, roll, pitch }
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.thrust, self.roll, self.pitch)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

/// Position and velocity of the flat output, the state of the integrator
/// chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatState {
    pub pos: Vector3<f64>,
    pub vel: Vector3<f64>,
}

impl FlatState {
    pub fn new(pos: Vector3<f64>, vel: Vector3<f64>) -> Self {
        Self { pos, vel }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    pub fn as_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.pos.x, self.pos.y, self.pos.z, self.vel.x, self.vel.y, self.vel.z,
        )
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(Vector3::new(v[0], v[1], v[2]), Vector3::new(v[3], v[4], v[5]))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FlatMapError {
    /// The input transformation is singular at and below free fall.
    #[error("vertical acceleration {v3} is not above -g = {min_v3}")]
    Domain { v3: f64, min_v3: f64 },
}

#[derive(Debug, Error, PartialEq)]
pub enum ParamError {
    #[error("gravity must be positive, got {0}")]
    Gravity(f64),
    #[error("thrust bound {t_max} must exceed gravity {g} so hover is interior")]
    Thrust { t_max: f64, g: f64 },
    #[error("angle bound {name} = {value} must lie in (0, pi/2)")]
    Angle { name: &'static str, value: f64 },
}

/// Physical constraint parameters. `eps_max` is derived as the smaller of the
/// two attitude bounds and defines the half-angle of the convex inner cone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintParams {
    g: f64,
    t_max: f64,
    phi_max: f64,
    theta_max: f64,
    eps_max: f64,
}

#[derive(Deserialize)]
struct RawParams {
    #[serde(default = "default_g")]
    g: f64,
    #[serde(default = "default_t_max")]
    t_max: f64,
    #[serde(default = "default_angle")]
    phi_max: f64,
    #[serde(default = "default_angle")]
    theta_max: f64,
}

fn default_g() -> f64 {
    9.81
}
fn default_t_max() -> f64 {
    19.62
}
fn default_angle() -> f64 {
    0.1745
}

impl Default for ConstraintParams {
    fn default() -> Self {
        Self::new(default_g(), default_t_max(), default_angle(), default_angle())
            .expect("default parameters are valid")
    }
}

impl ConstraintParams {
    pub fn new(g: f64, t_max: f64, phi_max: f64, theta_max: f64) -> Result<Self, ParamError> {
        if !(g > 0.0) {
            return Err(ParamError::Gravity(g));
        }
        if !(t_max > g) {
            return Err(ParamError::Thrust { t_max, g });
        }
        let half_pi = std::f64::consts::FRAC_PI_2;
        if !(phi_max > 0.0 && phi_max < half_pi) {
            return Err(ParamError::Angle { name: "phi_max", value: phi_max });
        }
        if !(theta_max > 0.0 && theta_max < half_pi) {
            return Err(ParamError::Angle { name: "theta_max", value: theta_max });
        }
        Ok(Self { g, t_max, phi_max, theta_max, eps_max: phi_max.min(theta_max) })
    }

    /// Loads parameters from a JSON object with keys `g`, `t_max`, `phi_max`,
    /// `theta_max`; missing keys fall back to the defaults.
    pub fn from_json_str(s: &str) -> Result<Self, String> {
        let raw: RawParams = serde_json::from_str(s).map_err(|e| e.to_string())?;
        Self::new(raw.g, raw.t_max, raw.phi_max, raw.theta_max).map_err(|e| e.to_string())
    }

    pub fn g(&self) -> f64 {
        self.g
    }
    pub fn t_max(&self) -> f64 {
        self.t_max
    }
    pub fn phi_max(&self) -> f64 {
        self.phi_max
    }
    pub fn theta_max(&self) -> f64 {
        self.theta_max
    }
    pub fn eps_max(&self) -> f64 {
        self.eps_max
    }

    /// Level-attitude input that exactly cancels gravity.
    pub fn hover_input(&self) -> BodyInput {
        BodyInput::new(self.g, 0.0, 0.0)
    }

    /// Input transformation `u = φ_ψ(v)`: the physical input that realizes
    /// the commanded flat acceleration `v` at yaw `ψ`.
    ///
    /// Requires `v3 > -g`; at or below free fall the thrust direction is
    /// undefined.
    pub fn flat_to_body(&self, v: &FlatInput, psi: f64) -> Result<BodyInput, FlatMapError> {
        if v.z <= -self.g {
            return Err(FlatMapError::Domain { v3: v.z, min_v3: -self.g });
        }
        let vz = v.z + self.g;
        let thrust = (v.x * v.x + v.y * v.y + vz * vz).sqrt();
        let (sin_psi, cos_psi) = psi.sin_cos();
        let roll = ((v.x * sin_psi - v.y * cos_psi) / thrust).asin();
        let pitch = ((v.x * cos_psi + v.y * sin_psi) / vz).atan();
        Ok(BodyInput::new(thrust, roll, pitch))
    }

    /// Acceleration map `v = h_ψ(u)`: the flat acceleration produced by the
    /// physical input `u` at yaw `ψ`. Inverse of [`Self::flat_to_body`] on
    /// its domain.
    pub fn body_to_flat(&self, u: &BodyInput, psi: f64) -> FlatInput {
        let (sin_phi, cos_phi) = u.roll.sin_cos();
        let (sin_theta, cos_theta) = u.pitch.sin_cos();
        let (sin_psi, cos_psi) = psi.sin_cos();
        Vector3::new(
            u.thrust * (cos_phi * sin_theta * cos_psi + sin_phi * sin_psi),
            u.thrust * (cos_phi * sin_theta * sin_psi - sin_phi * cos_psi),
            u.thrust * cos_phi * cos_theta - self.g,
        )
    }

    /// Jacobian of `h_ψ` with respect to `(T, φ, θ)`.
    pub fn input_jacobian(&self, u: &BodyInput, psi: f64) -> Matrix3<f64> {
        let (sin_phi, cos_phi) = u.roll.sin_cos();
        let (sin_theta, cos_theta) = u.pitch.sin_cos();
        let (sin_psi, cos_psi) = psi.sin_cos();
        let t = u.thrust;
        Matrix3::new(
            cos_phi * sin_theta * cos_psi + sin_phi * sin_psi,
            t * (-sin_phi * sin_theta * cos_psi + cos_phi * sin_psi),
            t * cos_phi * cos_theta * cos_psi,
            cos_phi * sin_theta * sin_psi - sin_phi * cos_psi,
            t * (-sin_phi * sin_theta * sin_psi - cos_phi * cos_psi),
            t * cos_phi * cos_theta * sin_psi,
            cos_phi * cos_theta,
            -t * sin_phi * cos_theta,
            -t * cos_phi * sin_theta,
        )
    }

    /// Signed residual of the physical input box: non-positive iff `u ∈ U`.
    pub fn body_residual(&self, u: &BodyInput) -> f64 {
        (-u.thrust)
            .max(u.thrust - self.t_max)
            .max(u.roll.abs() - self.phi_max)
            .max(u.pitch.abs() - self.theta_max)
    }

    /// Membership in the physical input box `U` (closed).
    pub fn contains_body(&self, u: &BodyInput) -> bool {
        self.body_residual(u) <= 0.0
    }

    /// Membership in the exact flat-space preimage `V` at yaw `ψ`:
    /// `v3 > -g` and `φ_ψ(v) ∈ U`.
    pub fn contains_flat(&self, v: &FlatInput, psi: f64) -> bool {
        match self.flat_to_body(v, psi) {
            Ok(u) => self.contains_body(&u),
            Err(_) => false,
        }
    }

    /// Signed distance-like residual of the convex inner set: the maximum of
    /// the ball, cone and floor terms in linear units (m/s²). Non-positive
    /// iff the point belongs to the set.
    pub fn flat_convex_residual(&self, v: &FlatInput) -> f64 {
        let vz = v.z + self.g;
        let lateral = (v.x * v.x + v.y * v.y).sqrt();
        let ball = (v.x * v.x + v.y * v.y + vz * vz).sqrt() - self.t_max;
        let cone = lateral - self.eps_max.tan() * vz;
        let floor = -vz;
        ball.max(cone).max(floor)
    }

    /// Membership in the convex inner subset of `V` (closed): intersection of
    /// the thrust ball with the upward cone of half-angle `eps_max`.
    ///
    /// The cone term uses `(v3 + g)²`; the proof of the containment property
    /// and the attitude bound chain both require the affine form, so that is
    /// what the whole pipeline implements.
    pub fn contains_flat_convex(&self, v: &FlatInput) -> bool {
        self.flat_convex_residual(v) <= 0.0
    }

    /// Membership in the convex inner set with a violation allowance in
    /// linear units.
    pub fn contains_flat_convex_tol(&self, v: &FlatInput, tol: f64) -> bool {
        self.flat_convex_residual(v) <= tol
    }
}
