//! Fixed-wing kinematics: constant-rate horizontal turns, vertical
//! point-mass dynamics, and the correction that pulls a field-proposed
//! waypoint back inside the aircraft's limits.
//!
//! The horizontal transition advances along a circular arc whose curvature
//! is bounded by the roll limit (`curvature <= g tan(roll_max) / V^2`). The
//! vertical transition follows the point-mass equations in climb angle and
//! track heading, driven by load factors. Planning holds speed at cruise.

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec3};

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a % std::f64::consts::TAU;
    if x <= -std::f64::consts::PI {
        x += std::f64::consts::TAU;
    } else if x > std::f64::consts::PI {
        x -= std::f64::consts::TAU;
    }
    x
}

/// Kinematic state: position, speed `V`, climb angle `gamma`, track heading
/// `chi`, and bank `roll`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AircraftState {
    pub position: Vec3,
    pub speed: f64,
    pub climb_angle: f64,
    pub track_heading: f64,
    pub roll: f64,
}

impl AircraftState {
    pub fn level(position: Vec3, speed: f64, track_heading: f64) -> Self {
        Self { position, speed, climb_angle: 0.0, track_heading, roll: 0.0 }
    }

    pub fn validate(&self, limits: &KinematicLimits) -> Result<()> {
        if self.speed <= 0.0 {
            return Err(Error::LimitsExceeded(format!("speed {} must be > 0", self.speed)));
        }
        if self.climb_angle.abs() > limits.gamma_max + 1e-9 {
            return Err(Error::LimitsExceeded(format!(
                "climb angle {} exceeds {}",
                self.climb_angle, limits.gamma_max
            )));
        }
        if self.roll.abs() > limits.roll_max + 1e-9 {
            return Err(Error::LimitsExceeded(format!(
                "roll {} exceeds {}",
                self.roll, limits.roll_max
            )));
        }
        Ok(())
    }
}

/// Hard limits of the airframe. Angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicLimits {
    pub gamma_max: f64,
    pub roll_max: f64,
    pub gravity: f64,
    pub load_factor_max: f64,
}

impl Default for KinematicLimits {
    fn default() -> Self {
        Self {
            gamma_max: 25f64.to_radians(),
            roll_max: 45f64.to_radians(),
            gravity: 9.81,
            load_factor_max: 3.0,
        }
    }
}

impl KinematicLimits {
    pub fn validate(&self) -> Result<()> {
        if self.gamma_max <= 0.0
            || self.gamma_max >= std::f64::consts::FRAC_PI_2
            || self.roll_max <= 0.0
            || self.roll_max >= std::f64::consts::FRAC_PI_2
            || self.gravity <= 0.0
            || self.load_factor_max <= 1.0
        {
            return Err(Error::Config("kinematic limits out of range".into()));
        }
        Ok(())
    }

    /// Maximum horizontal path curvature at speed `v`: `g tan(roll_max) / v^2`.
    pub fn max_curvature(&self, v: f64) -> f64 {
        self.gravity * self.roll_max.tan() / (v * v)
    }

    /// Minimum turn radius at speed `v`.
    pub fn min_turn_radius(&self, v: f64) -> f64 {
        1.0 / self.max_curvature(v)
    }

    /// Climb-angle rate cap implied by the load factor limit:
    /// `g (n_max - 1) / v`.
    pub fn climb_rate_max(&self, v: f64) -> f64 {
        self.gravity * (self.load_factor_max - 1.0) / v
    }
}

/// One constant-curvature step in the horizontal plane. The aircraft at
/// `(x1, y1)` with heading `phi1` flies an arc of signed curvature `rho_t`
/// at speed `v` for `dt` seconds; heading advances by
/// `dphi = rho_t * v * dt`. Curvature zero degenerates to a straight leg.
pub fn horizontal_step(
    limits: &KinematicLimits,
    x1: f64,
    y1: f64,
    phi1: f64,
    v: f64,
    rho_t: f64,
    dt: f64,
) -> Result<(f64, f64, f64)> {
    if dt <= 0.0 || v <= 0.0 {
        return Err(Error::LimitsExceeded(format!("need v > 0 and dt > 0, got v={v} dt={dt}")));
    }
    if rho_t.abs() > limits.max_curvature(v) * (1.0 + 1e-9) {
        return Err(Error::LimitsExceeded(format!(
            "curvature {rho_t} exceeds g tan(roll_max)/v^2 = {}",
            limits.max_curvature(v)
        )));
    }
    let dphi = rho_t * v * dt;
    let (fwd, left) = if dphi.abs() < 1e-12 {
        (v * dt, 0.0)
    } else {
        (dphi.sin() / rho_t, (1.0 - dphi.cos()) / rho_t)
    };
    let (s1, c1) = phi1.sin_cos();
    Ok((x1 + c1 * fwd - s1 * left, y1 + s1 * fwd + c1 * left, phi1 + dphi))
}

/// Time derivatives of the vertical point-mass model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerticalDerivatives {
    pub x_dot: f64,
    pub y_dot: f64,
    pub z_dot: f64,
    pub v_dot: f64,
    pub gamma_dot: f64,
    pub chi_dot: f64,
}

/// Point-mass dynamics: `x_dot = V cos(gamma) cos(chi)`,
/// `y_dot = V cos(gamma) sin(chi)`, `z_dot = V sin(gamma)`,
/// `V_dot = (n_x - sin gamma) g`, `gamma_dot = g (n_z - cos gamma) / V`,
/// `chi_dot = n_y g / (V cos gamma)`.
pub fn vertical_derivatives(
    state: &AircraftState,
    n_x: f64,
    n_y: f64,
    n_z: f64,
    g: f64,
) -> Result<VerticalDerivatives> {
    let v = state.speed;
    let gamma = state.climb_angle;
    let chi = state.track_heading;
    if v <= 0.0 {
        return Err(Error::LimitsExceeded("speed must be > 0".into()));
    }
    let cg = gamma.cos();
    if cg <= 1e-6 {
        return Err(Error::VerticalSingularity);
    }
    Ok(VerticalDerivatives {
        x_dot: v * cg * chi.cos(),
        y_dot: v * cg * chi.sin(),
        z_dot: v * gamma.sin(),
        v_dot: (n_x - gamma.sin()) * g,
        gamma_dot: g * (n_z - cg) / v,
        chi_dot: n_y * g / (v * cg),
    })
}

/// RK4 integration of the vertical dynamics over `dt` with four fixed
/// substeps. Load factors are clamped to the limit before integrating.
pub fn integrate_vertical(
    limits: &KinematicLimits,
    state: &AircraftState,
    controls: (f64, f64, f64),
    dt: f64,
) -> Result<AircraftState> {
    integrate_vertical_substeps(limits, state, controls, dt, 4)
}

pub(crate) fn integrate_vertical_substeps(
    limits: &KinematicLimits,
    state: &AircraftState,
    controls: (f64, f64, f64),
    dt: f64,
    substeps: usize,
) -> Result<AircraftState> {
    let cap = limits.load_factor_max;
    let (n_x, n_y, n_z) =
        (controls.0.clamp(-cap, cap), controls.1.clamp(-cap, cap), controls.2.clamp(-cap, cap));
    let g = limits.gravity;
    let h = dt / substeps as f64;
    let mut s = *state;
    for _ in 0..substeps {
        let k1 = vertical_derivatives(&s, n_x, n_y, n_z, g)?;
        let s2 = advance(&s, &k1, h / 2.0);
        let k2 = vertical_derivatives(&s2, n_x, n_y, n_z, g)?;
        let s3 = advance(&s, &k2, h / 2.0);
        let k3 = vertical_derivatives(&s3, n_x, n_y, n_z, g)?;
        let s4 = advance(&s, &k3, h);
        let k4 = vertical_derivatives(&s4, n_x, n_y, n_z, g)?;
        s = AircraftState {
            position: Vec3::new(
                s.position.x + h / 6.0 * (k1.x_dot + 2.0 * k2.x_dot + 2.0 * k3.x_dot + k4.x_dot),
                s.position.y + h / 6.0 * (k1.y_dot + 2.0 * k2.y_dot + 2.0 * k3.y_dot + k4.y_dot),
                s.position.z + h / 6.0 * (k1.z_dot + 2.0 * k2.z_dot + 2.0 * k3.z_dot + k4.z_dot),
            ),
            speed: s.speed + h / 6.0 * (k1.v_dot + 2.0 * k2.v_dot + 2.0 * k3.v_dot + k4.v_dot),
            climb_angle: s.climb_angle
                + h / 6.0 * (k1.gamma_dot + 2.0 * k2.gamma_dot + 2.0 * k3.gamma_dot + k4.gamma_dot),
            track_heading: s.track_heading
                + h / 6.0 * (k1.chi_dot + 2.0 * k2.chi_dot + 2.0 * k3.chi_dot + k4.chi_dot),
            roll: s.roll,
        };
    }
    Ok(s)
}

fn advance(s: &AircraftState, d: &VerticalDerivatives, h: f64) -> AircraftState {
    AircraftState {
        position: Vec3::new(
            s.position.x + h * d.x_dot,
            s.position.y + h * d.y_dot,
            s.position.z + h * d.z_dot,
        ),
        speed: s.speed + h * d.v_dot,
        climb_angle: s.climb_angle + h * d.gamma_dot,
        track_heading: s.track_heading + h * d.chi_dot,
        roll: s.roll,
    }
}

/// Result of correcting one field-proposed waypoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correction {
    pub position: Vec3,
    pub state: AircraftState,
    /// Climb angle the field asked for, before any clamping.
    pub demanded_climb: f64,
    /// Heading change the field asked for, before any clamping.
    pub demanded_heading_change: f64,
    /// True when any limit actually clipped the demand.
    pub clamped: bool,
    /// True when the proposed waypoint coincided with the current position
    /// and the previous heading was held instead.
    pub fallback: bool,
}

/// Pulls the unrestricted waypoint `p_now + u_bar * dt` back inside the
/// turn-curvature, climb-angle, and climb-rate limits, then re-propagates
/// one step: an arc in the horizontal plane plus an exact integral of
/// `z_dot = V sin(gamma)` under the rate-limited climb ramp. The returned
/// state carries the clamped angles exactly. Planning holds `V` constant.
pub fn kinematic_correct(
    limits: &KinematicLimits,
    state: &AircraftState,
    p_unrestricted: &Vec3,
    dt: f64,
) -> Result<Correction> {
    let p_now = state.position;
    let v = state.speed;
    if v <= 0.0 || dt <= 0.0 {
        return Err(Error::LimitsExceeded(format!("need v > 0 and dt > 0, got v={v} dt={dt}")));
    }
    let d = p_unrestricted - p_now;
    let horiz = d.x.hypot(d.y);

    let (demanded_climb, demanded_heading_change, fallback) = if d.norm() < 1e-9 {
        (state.climb_angle, 0.0, true)
    } else if horiz < 1e-9 {
        // Purely vertical demand: hold heading, demand a straight-up climb.
        (std::f64::consts::FRAC_PI_2.copysign(d.z), 0.0, false)
    } else {
        (d.z.atan2(horiz), wrap_angle(d.y.atan2(d.x) - state.track_heading), false)
    };

    // Climb: magnitude limit, then rate limit from the load-factor cap.
    let gamma0 = state.climb_angle;
    let gamma_capped = demanded_climb.clamp(-limits.gamma_max, limits.gamma_max);
    let dgamma_max = limits.climb_rate_max(v) * dt;
    let gamma1 = gamma_capped.clamp(gamma0 - dgamma_max, gamma0 + dgamma_max);

    // Heading: curvature limit at full airspeed. The horizontal ground
    // speed uses the steeper of the two climb angles so the combined
    // horizontal + vertical displacement can never exceed v * dt.
    let gamma_ref = gamma0.abs().max(gamma1.abs());
    let v_h = v * gamma_ref.cos();
    let dphi_max = limits.max_curvature(v) * v_h * dt;
    let dphi = demanded_heading_change.clamp(-dphi_max, dphi_max);
    let clamped = (gamma1 - demanded_climb).abs() > 1e-12
        || (dphi - demanded_heading_change).abs() > 1e-12;

    let rho_t = dphi / (v_h * dt);
    let (x2, y2, chi2) =
        horizontal_step(limits, p_now.x, p_now.y, state.track_heading, v_h, rho_t, dt)?;

    // Exact integral of V sin(gamma(t)) along the linear climb ramp.
    let dz = if (gamma1 - gamma0).abs() < 1e-12 {
        v * gamma0.sin() * dt
    } else {
        v * dt * (gamma0.cos() - gamma1.cos()) / (gamma1 - gamma0)
    };

    let position = Vec3::new(x2, y2, p_now.z + dz);
    let roll = (rho_t * v_h * v_h / limits.gravity).atan();
    let next = AircraftState {
        position,
        speed: v,
        climb_angle: gamma1,
        track_heading: wrap_angle(chi2),
        roll,
    };
    Ok(Correction {
        position,
        state: next,
        demanded_climb,
        demanded_heading_change,
        clamped,
        fallback,
    })
}
