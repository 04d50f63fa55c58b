//! Disturbed fluid field construction.
//!
//! The planning velocity starts from a goal-directed free stream at cruise
//! speed. Every nearby obstacle contributes a modulation matrix
//! `M_k = I + R_k + T_k`: the repulsive term `R_k` cancels the velocity
//! component along the surface normal as the surface is approached, and the
//! tangential term `T_k` redirects it along a tangent direction selected by
//! the action angle theta. Matrices are blended with proximity weights,
//! obstacle velocities feed through with an exponential falloff, and the
//! ground adds an upward disturbance velocity that grows logarithmically as
//! the aircraft sinks below its safe height.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec3};

/// Action bounds for the three field strengths.
pub const STRENGTH_MIN: f64 = 0.05;
pub const STRENGTH_MAX: f64 = 3.0;

/// The four field parameters the policy emits each step.
///
/// * `beta` — ground disturbance intensity (larger keeps more ground clearance)
/// * `rho` — repulsive field strength (larger pushes harder off obstacles)
/// * `sigma` — tangential field strength (larger pulls the detour tighter)
/// * `theta` — tangential field angle, selecting the detour direction
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldAction {
    pub beta: f64,
    pub rho: f64,
    pub sigma: f64,
    pub theta: f64,
}

impl FieldAction {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta", self.beta), ("rho", self.rho), ("sigma", self.sigma)] {
            if !(STRENGTH_MIN..=STRENGTH_MAX).contains(&v) {
                return Err(Error::Config(format!(
                    "{name} = {v} outside [{STRENGTH_MIN}, {STRENGTH_MAX}]"
                )));
            }
        }
        if !(self.theta > -std::f64::consts::PI && self.theta <= std::f64::consts::PI) {
            return Err(Error::Config(format!("theta = {} outside (-pi, pi]", self.theta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    /// Free-stream magnitude, the cruising speed in m/s.
    pub cruise_speed: f64,
    /// Only obstacles with surface distance below this participate.
    pub r_conf: f64,
    /// Minimum allowed height above ground; sets the ground field scale.
    pub height_safe: f64,
    /// Comparison-only: use the published ground-field form, a modulation
    /// matrix scaled by ln(agl/height_safe + 1), instead of the additive
    /// upward velocity. Off by default.
    #[serde(default)]
    pub literal_ground_field: bool,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            cruise_speed: 200.0,
            r_conf: 10_000.0,
            height_safe: 100.0,
            literal_ground_field: false,
        }
    }
}

/// Per-obstacle field inputs, evaluated by the caller at the agent position
/// for each visible in-range threat.
#[derive(Debug, Clone, Copy)]
pub struct ThreatSample {
    /// Threat function value F at the agent (> 1 outside).
    pub f_value: f64,
    /// Gradient of F at the agent (outward normal direction).
    pub gradient: Vec3,
    /// Obstacle center velocity.
    pub velocity: Vec3,
    /// Euclidean distance to the obstacle surface.
    pub surface_distance: f64,
    /// Velocity-feedthrough decay constant for this obstacle.
    pub lambda: f64,
}

/// Undisturbed flow: cruise speed straight at the goal.
pub fn free_stream(p: &Vec3, goal: &Vec3, cruise_speed: f64) -> Result<Vec3> {
    let d = goal - p;
    let n = d.norm();
    if n == 0.0 {
        return Err(Error::DegenerateDirection);
    }
    Ok(d * (cruise_speed / n))
}

/// Repulsive modulation `R_k = -n n^T / (F^{1/rho} * n^T n)`: a rank-1
/// negative-semidefinite projector that removes the normal velocity
/// component exactly at the surface and decays as F^{-1/rho} away from it.
pub fn repulsive_matrix(f_value: f64, normal: &Vec3, rho: f64) -> Result<Matrix3<f64>> {
    let nn = normal.norm_squared();
    if nn == 0.0 {
        return Err(Error::DegenerateNormal);
    }
    let scale = -1.0 / (f_value.abs().powf(1.0 / rho) * nn);
    Ok(normal * normal.transpose() * scale)
}

/// Tangent basis from the gradient: `t1` is horizontal, `t2` completes the
/// frame. Both are orthogonal to the normal by construction.
fn tangent_basis(g: &Vec3) -> (Vec3, Vec3) {
    let t1 = Vec3::new(g.y, -g.x, 0.0);
    let t2 = Vec3::new(g.x * g.z, g.y * g.z, -(g.x * g.x + g.y * g.y));
    (t1, t2)
}

/// Tangential modulation `T_k = t n^T / (F^{1/sigma} |t| |n|)` with
/// `t = cos(theta) t1_hat + sin(theta) t2_hat`. Returns the matrix and a
/// flag set when the basis degenerated (purely vertical normal) and an
/// arbitrary horizontal tangent had to stand in.
pub fn tangential_matrix(
    f_value: f64,
    gradient: &Vec3,
    sigma: f64,
    theta: f64,
) -> Result<(Matrix3<f64>, bool)> {
    let n_norm = gradient.norm();
    if n_norm == 0.0 {
        return Err(Error::DegenerateNormal);
    }
    let (t1, t2) = tangent_basis(gradient);
    let (t, fallback) = if t1.norm_squared() == 0.0 && t2.norm_squared() == 0.0 {
        (Vec3::new(theta.cos(), theta.sin(), 0.0), true)
    } else {
        (theta.cos() * t1.normalize() + theta.sin() * t2.normalize(), false)
    };
    let t_norm = t.norm();
    let scale = 1.0 / (f_value.abs().powf(1.0 / sigma) * t_norm * n_norm);
    Ok((t * gradient.transpose() * scale, fallback))
}

/// Upward ground disturbance velocity. Strictly decreasing in `agl`,
/// diverging as the ground is approached, and falling below any practical
/// threshold within a few tens of safe heights: the logarithm alone still
/// carries ~1% of cruise speed at 100x `height_safe`, so a Gaussian taper
/// (exactly 1 at `height_safe`) confines the ground effect to low altitude
/// and lets the field reduce to the free stream up high.
pub fn ground_velocity(agl: f64, beta: f64, height_safe: f64, cruise_speed: f64) -> Result<Vec3> {
    if agl <= 0.0 {
        return Err(Error::GroundCollision(agl));
    }
    let taper = (-((agl - height_safe) / (10.0 * height_safe)).powi(2)).exp();
    Ok(Vec3::new(0.0, 0.0, cruise_speed * beta * (height_safe / agl + 1.0).ln() * taper))
}

/// Proximity weights: `w_k = prod_{i != k} (F_i-1) / ((F_i-1) + (F_k-1))`,
/// or 1 for a single obstacle. Closer obstacles (smaller F-1) dominate.
pub fn obstacle_weights(f_values: &[f64]) -> Result<Vec<f64>> {
    for &f in f_values {
        if f <= 1.0 {
            return Err(Error::WeightDegenerate(f));
        }
    }
    if f_values.len() == 1 {
        return Ok(vec![1.0]);
    }
    Ok(f_values
        .iter()
        .enumerate()
        .map(|(k, &fk)| {
            f_values
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != k)
                .map(|(_, &fi)| (fi - 1.0) / ((fi - 1.0) + (fk - 1.0)))
                .product()
        })
        .collect())
}

/// Field evaluation broken into its physical contributions;
/// `velocity` is their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub velocity: Vec3,
    /// `sum_k w_k (I + R_k) (u - v_conv)` — identity-plus-repulsion part.
    pub repulsive_part: Vec3,
    /// `sum_k w_k T_k (u - v_conv)` — tangential guidance part.
    pub tangential_part: Vec3,
    /// Obstacle-velocity feedthrough `v_conv`.
    pub convected: Vec3,
    /// Ground disturbance contribution.
    pub ground: Vec3,
    /// Number of obstacles that needed the degenerate-tangent fallback.
    pub tangent_fallbacks: u32,
}

/// Full disturbed-field velocity at `p`.
///
/// Obstacles beyond `r_conf` are ignored. With no participating obstacles
/// and high altitude the result reduces to the free stream. Any obstacle
/// with F <= 1 means the agent is inside it: collision error.
pub fn flow_velocity(
    p: &Vec3,
    goal: &Vec3,
    action: &FieldAction,
    samples: &[ThreatSample],
    agl: f64,
    config: &FieldConfig,
) -> Result<FieldSample> {
    let u = free_stream(p, goal, config.cruise_speed)?;
    let active: Vec<&ThreatSample> =
        samples.iter().filter(|s| s.surface_distance < config.r_conf).collect();
    for s in &active {
        if s.f_value <= 1.0 {
            return Err(Error::Collision(s.f_value));
        }
    }

    let ground_mag = if config.literal_ground_field {
        // Published form: a modulation matrix I * beta * ln(agl/h_safe + 1).
        if agl <= 0.0 {
            return Err(Error::GroundCollision(agl));
        }
        (agl / config.height_safe + 1.0).ln() * action.beta
    } else {
        0.0
    };

    if active.is_empty() {
        let (repulsive_part, ground) = if config.literal_ground_field {
            (u * ground_mag, Vec3::zeros())
        } else {
            (u, ground_velocity(agl, action.beta, config.height_safe, config.cruise_speed)?)
        };
        let velocity = repulsive_part + ground;
        return Ok(FieldSample {
            velocity,
            repulsive_part,
            tangential_part: Vec3::zeros(),
            convected: Vec3::zeros(),
            ground,
            tangent_fallbacks: 0,
        });
    }

    let f_values: Vec<f64> = active.iter().map(|s| s.f_value).collect();
    let weights = obstacle_weights(&f_values)?;

    // Obstacle-velocity feedthrough, decaying with distance from each surface.
    let mut convected = Vec3::zeros();
    for (s, &w) in active.iter().zip(&weights) {
        convected += w * (-(s.f_value - 1.0) / s.lambda).exp() * s.velocity;
    }

    let x = u - convected;
    let mut repulsive_part = Vec3::zeros();
    let mut tangential_part = Vec3::zeros();
    let mut tangent_fallbacks = 0u32;
    for (s, &w) in active.iter().zip(&weights) {
        let r = repulsive_matrix(s.f_value, &s.gradient, action.rho)?;
        let (t, fb) = tangential_matrix(s.f_value, &s.gradient, action.sigma, action.theta)?;
        if fb {
            tangent_fallbacks += 1;
        }
        let base = if config.literal_ground_field {
            (r * x) + x * ground_mag
        } else {
            x + r * x
        };
        repulsive_part += w * base;
        tangential_part += w * (t * x);
    }

    let ground = if config.literal_ground_field {
        Vec3::zeros()
    } else {
        ground_velocity(agl, action.beta, config.height_safe, config.cruise_speed)?
    };

    let velocity = repulsive_part + tangential_part + convected + ground;
    if !velocity.iter().all(|v| v.is_finite()) {
        return Err(Error::Config("non-finite field velocity".into()));
    }
    Ok(FieldSample {
        velocity,
        repulsive_part,
        tangential_part,
        convected,
        ground,
        tangent_fallbacks,
    })
}
