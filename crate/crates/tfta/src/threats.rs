//! Superquadric threat model, motion patterns, and the sensor model.
//!
//! A threat is the implicit surface `F(p) = 1` of
//! `F = ((x-x0)/a)^{2d} + ((y-y0)/b)^{2e} + ((z-z0)/c)^{2f}`: inside when
//! `F < 1`, outside when `F > 1`. The exponents shape the body (1,1,1 is an
//! ellipsoid; larger values square it off). Centers follow a time-indexed
//! motion pattern so the same roster replays identically across runs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionKind {
    Static,
    Line,
    Circle,
    Sine,
    Tangent,
}

/// Time-parameterized center motion. `amplitude` is meters, `angular_rate`
/// rad/s, `direction` a unit vector (ignored for `static`; `circle` orbits
/// in the horizontal plane).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionPattern {
    pub kind: MotionKind,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default)]
    pub angular_rate: f64,
    #[serde(default = "default_direction")]
    pub direction: Vec3,
    #[serde(default)]
    pub phase: f64,
}

fn default_direction() -> Vec3 {
    Vec3::new(1.0, 0.0, 0.0)
}

impl MotionPattern {
    pub fn fixed() -> Self {
        Self {
            kind: MotionKind::Static,
            amplitude: 0.0,
            angular_rate: 0.0,
            direction: default_direction(),
            phase: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != MotionKind::Static && (self.direction.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "motion direction must be a unit vector, |d| = {}",
                self.direction.norm()
            )));
        }
        Ok(())
    }

    /// Center position and exact velocity at time `t`. The tangent pattern
    /// clamps the displacement to +-10*amplitude; inside the clamped region
    /// the velocity is the derivative of the flat curve, i.e. zero.
    pub fn position_at(&self, center0: &Vec3, t: f64) -> (Vec3, Vec3) {
        let w = self.angular_rate;
        let a = self.amplitude;
        let th = w * t + self.phase;
        match self.kind {
            MotionKind::Static => (*center0, Vec3::zeros()),
            MotionKind::Line => {
                (center0 + a * w * t * self.direction, a * w * self.direction)
            }
            MotionKind::Circle => {
                let pos = center0 + a * Vec3::new(th.cos(), th.sin(), 0.0);
                let vel = a * w * Vec3::new(-th.sin(), th.cos(), 0.0);
                (pos, vel)
            }
            MotionKind::Sine => {
                (center0 + a * th.sin() * self.direction, a * w * th.cos() * self.direction)
            }
            MotionKind::Tangent => {
                let limit = 10.0 * a.abs();
                let raw = a * th.tan();
                if raw.abs() >= limit || !raw.is_finite() {
                    (center0 + raw.clamp(-limit, limit) * self.direction, Vec3::zeros())
                } else {
                    let sec2 = 1.0 / (th.cos() * th.cos());
                    (center0 + raw * self.direction, a * w * sec2 * self.direction)
                }
            }
        }
    }
}

/// Superquadric obstacle plus its radar envelope. `r_obs` is the
/// fire-control radius, `r_threaten` the warning radius, and `lambda`
/// scales how strongly the obstacle's own velocity feeds into the field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threat {
    pub center0: Vec3,
    pub semi_axes: Vec3,
    pub exponents: [u32; 3],
    pub motion: MotionPattern,
    pub r_obs: f64,
    pub r_threaten: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
}

fn default_lambda() -> f64 {
    5.0
}

impl Threat {
    pub fn validate(&self) -> Result<()> {
        if self.semi_axes.iter().any(|&s| s <= 0.0) {
            return Err(Error::Config("threat semi-axes must all be > 0".into()));
        }
        if self.exponents.iter().any(|&e| e < 1) {
            return Err(Error::Config("threat exponents must all be >= 1".into()));
        }
        if !(self.r_obs > 0.0 && self.r_obs < self.r_threaten) {
            return Err(Error::Config(format!(
                "need 0 < r_obs < r_threaten, got {} and {}",
                self.r_obs, self.r_threaten
            )));
        }
        if self.lambda <= 0.0 {
            return Err(Error::Config("threat lambda must be > 0".into()));
        }
        self.motion.validate()
    }

    pub fn center_at(&self, t: f64) -> (Vec3, Vec3) {
        self.motion.position_at(&self.center0, t)
    }

    /// Threat function F at `p` with the center taken at time `t`.
    /// F < 1 inside, 1 on the surface, > 1 outside.
    pub fn value(&self, t: f64, p: &Vec3) -> f64 {
        let (c, _) = self.center_at(t);
        let [d, e, f] = self.exponents;
        ((p.x - c.x) / self.semi_axes.x).powi(2 * d as i32)
            + ((p.y - c.y) / self.semi_axes.y).powi(2 * e as i32)
            + ((p.z - c.z) / self.semi_axes.z).powi(2 * f as i32)
    }

    /// Analytic gradient of F, the outward surface normal direction.
    pub fn normal(&self, t: f64, p: &Vec3) -> Result<Vec3> {
        let (c, _) = self.center_at(t);
        let [d, e, f] = self.exponents;
        let gx = 2.0 * d as f64 / self.semi_axes.x
            * ((p.x - c.x) / self.semi_axes.x).powi(2 * d as i32 - 1);
        let gy = 2.0 * e as f64 / self.semi_axes.y
            * ((p.y - c.y) / self.semi_axes.y).powi(2 * e as i32 - 1);
        let gz = 2.0 * f as f64 / self.semi_axes.z
            * ((p.z - c.z) / self.semi_axes.z).powi(2 * f as i32 - 1);
        let n = Vec3::new(gx, gy, gz);
        if n.norm_squared() == 0.0 {
            return Err(Error::DegenerateNormal);
        }
        Ok(n)
    }

    /// Euclidean distance from `p` (outside, F >= 1) to the surface, by
    /// damped Newton projection along the chord p -> center. Converges to
    /// 1e-6 m; exact for spheres and axis-aligned ellipsoid queries.
    pub fn surface_distance(&self, t: f64, p: &Vec3) -> Result<f64> {
        let (c, _) = self.center_at(t);
        self.surface_distance_from_center(&c, p)
    }

    fn surface_distance_from_center(&self, c: &Vec3, p: &Vec3) -> Result<f64> {
        let u = Vec3::new(
            (p.x - c.x) / self.semi_axes.x,
            (p.y - c.y) / self.semi_axes.y,
            (p.z - c.z) / self.semi_axes.z,
        );
        let [d, e, f] = self.exponents;
        let exps = [2 * d as i32, 2 * e as i32, 2 * f as i32];
        let g = |s: f64| -> f64 {
            (s * u.x).powi(exps[0]) + (s * u.y).powi(exps[1]) + (s * u.z).powi(exps[2]) - 1.0
        };
        let gp = |s: f64| -> f64 {
            exps[0] as f64 * u.x * (s * u.x).powi(exps[0] - 1)
                + exps[1] as f64 * u.y * (s * u.y).powi(exps[1] - 1)
                + exps[2] as f64 * u.z * (s * u.z).powi(exps[2] - 1)
        };
        let f1 = g(1.0) + 1.0;
        if f1 < 1.0 {
            return Err(Error::InsideThreat(f1));
        }
        let r = (p - c).norm();
        if r == 0.0 {
            return Err(Error::DegenerateNormal);
        }
        // g is a sum of even powers with positive coefficients: convex and
        // increasing on s > 0, so Newton from s = 1 descends monotonically
        // to the root. Damping guards the s <= 0 corner.
        let mut s = 1.0;
        for _ in 0..100 {
            let gs = g(s);
            if gs.abs() < 1e-14 {
                break;
            }
            let mut step = gs / gp(s);
            while s - step <= 0.0 {
                step *= 0.5;
            }
            s -= step;
            if step.abs() * r < 1e-7 {
                break;
            }
        }
        Ok(((1.0 - s) * r).max(0.0))
    }

    /// Surface point nearest to `p` along the chord to the center.
    pub fn surface_point(&self, t: f64, p: &Vec3) -> Result<Vec3> {
        let (c, _) = self.center_at(t);
        let dist = self.surface_distance_from_center(&c, p)?;
        let r = (p - c).norm();
        let s = 1.0 - dist / r;
        Ok(c + s * (p - c))
    }
}

/// What the sensor reports for one threat at one instant.
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    /// Beyond sensor range, or the report was dropped this step.
    Hidden,
    Visible(ObservedThreat),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservedThreat {
    /// Agent -> nearest surface point.
    pub rel_position: Vec3,
    /// Euclidean distance to the surface.
    pub distance: f64,
    /// Threat center velocity.
    pub velocity: Vec3,
}

impl Observation {
    pub fn visible(&self) -> bool {
        matches!(self, Observation::Visible(_))
    }

    pub fn data(&self) -> Option<&ObservedThreat> {
        match self {
            Observation::Hidden => None,
            Observation::Visible(d) => Some(d),
        }
    }
}

/// Sensor model: hard range cutoff plus independent per-threat dropout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub range: f64,
    pub dropout: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self { range: 10_000.0, dropout: 0.05 }
    }
}

/// One observation per threat, index-aligned with the roster. A dropout
/// uniform is drawn for every threat each call so the rng stream does not
/// shift as threats move in and out of range.
pub fn observe(
    threats: &[Threat],
    t: f64,
    agent: &Vec3,
    sensor: &SensorConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<Observation> {
    threats
        .iter()
        .map(|threat| {
            let drop_roll: f64 = rng.random();
            let (center, velocity) = threat.center_at(t);
            let distance = match threat.surface_distance_from_center(&center, agent) {
                Ok(d) => d,
                // Inside the threat: surface contact. Collision handling is
                // the caller's job; the sensor still reports it.
                Err(_) => 0.0,
            };
            if distance > sensor.range || drop_roll < sensor.dropout {
                return Observation::Hidden;
            }
            let r = (agent - center).norm();
            let rel_position = if r > 0.0 {
                let s = 1.0 - distance / r;
                (center + s * (agent - center)) - agent
            } else {
                Vec3::zeros()
            };
            Observation::Visible(ObservedThreat { rel_position, distance, velocity })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn unit_sphere() -> Threat {
        Threat {
            center0: Vec3::zeros(),
            semi_axes: Vec3::new(1.0, 1.0, 1.0),
            exponents: [1, 1, 1],
            motion: MotionPattern::fixed(),
            r_obs: 2.0,
            r_threaten: 5.0,
            lambda: 5.0,
        }
    }

    fn sphere_at(center: Vec3, radius: f64) -> Threat {
        Threat {
            center0: center,
            semi_axes: Vec3::new(radius, radius, radius),
            exponents: [1, 1, 1],
            motion: MotionPattern::fixed(),
            r_obs: radius + 1.0,
            r_threaten: radius + 2.0,
            lambda: 5.0,
        }
    }

    #[test]
    fn threat_value_basics() {
        let s = unit_sphere();
        assert_relative_eq!(s.value(0.0, &Vec3::new(1.0, 0.0, 0.0)), 1.0);
        assert_relative_eq!(s.value(0.0, &Vec3::new(2.0, 0.0, 0.0)), 4.0);
        let ell = Threat { semi_axes: Vec3::new(2.0, 1.0, 1.0), ..unit_sphere() };
        assert_relative_eq!(ell.value(0.0, &Vec3::new(2.0, 1.0, 0.0)), 2.0);
    }

    #[test]
    fn normal_basics() {
        let s = unit_sphere();
        let n = s.normal(0.0, &Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert_relative_eq!(n.x, 2.0);
        assert_relative_eq!(n.y, 0.0);
        let n = s.normal(0.0, &Vec3::new(0.0, 2.0, 0.0)).unwrap();
        assert_relative_eq!(n.y, 4.0);
        assert!(matches!(s.normal(0.0, &Vec3::zeros()), Err(Error::DegenerateNormal)));
    }

    #[test]
    fn normal_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let threat = Threat {
                center0: Vec3::new(
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-50.0..50.0),
                ),
                semi_axes: Vec3::new(
                    rng.random_range(5.0..40.0),
                    rng.random_range(5.0..40.0),
                    rng.random_range(5.0..40.0),
                ),
                exponents: [rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..4)],
                motion: MotionPattern::fixed(),
                r_obs: 10.0,
                r_threaten: 20.0,
                lambda: 5.0,
            };
            // Sample just outside the surface where F stays moderate and
            // central differences are well conditioned.
            let dir = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0,),
            )
            .normalize();
            let mut scale = 1.0;
            let mut p = threat.center0 + dir * scale;
            while threat.value(0.0, &p) < 1.2 {
                scale *= 1.5;
                p = threat.center0 + dir * scale;
            }
            let analytic = threat.normal(0.0, &p).unwrap();
            let h = 1e-3;
            let mut fd = Vec3::zeros();
            for axis in 0..3 {
                let mut dp = Vec3::zeros();
                dp[axis] = h;
                fd[axis] =
                    (threat.value(0.0, &(p + dp)) - threat.value(0.0, &(p - dp))) / (2.0 * h);
            }
            let rel = (fd - analytic).norm() / analytic.norm();
            assert!(rel < 1e-6, "rel {rel}: fd {fd:?} vs analytic {analytic:?}");
        }
    }

    #[test]
    fn motion_static_and_circle() {
        let c0 = Vec3::new(5.0, 6.0, 7.0);
        let fixed = MotionPattern::fixed();
        let (p, v) = fixed.position_at(&c0, 123.4);
        assert_eq!(p, c0);
        assert_eq!(v, Vec3::zeros());

        let circle = MotionPattern {
            kind: MotionKind::Circle,
            amplitude: 100.0,
            angular_rate: 0.2,
            direction: Vec3::new(1.0, 0.0, 0.0),
            phase: 0.0,
        };
        let (p, v) = circle.position_at(&c0, 0.0);
        assert_relative_eq!((p - c0).x, 100.0);
        assert_relative_eq!((p - c0).y, 0.0);
        assert_relative_eq!(v.x, 0.0);
        assert_relative_eq!(v.y, 20.0);
    }

    #[test]
    fn motion_sine_peak_has_zero_velocity() {
        let sine = MotionPattern {
            kind: MotionKind::Sine,
            amplitude: 50.0,
            angular_rate: 0.1,
            direction: Vec3::new(0.0, 1.0, 0.0),
            phase: 0.0,
        };
        let c0 = Vec3::zeros();
        let t = std::f64::consts::FRAC_PI_2 / 0.1;
        let (p, v) = sine.position_at(&c0, t);
        assert_relative_eq!(p.y, 50.0, epsilon = 1e-9);
        assert_relative_eq!(v.norm(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn motion_velocity_matches_central_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let patterns = [
            MotionKind::Static,
            MotionKind::Line,
            MotionKind::Circle,
            MotionKind::Sine,
            MotionKind::Tangent,
        ];
        let c0 = Vec3::new(1.0, 2.0, 3.0);
        for kind in patterns {
            let m = MotionPattern {
                kind,
                amplitude: rng.random_range(10.0..100.0),
                angular_rate: rng.random_range(0.05..0.5),
                direction: Vec3::new(0.0, 0.0, 1.0),
                phase: rng.random_range(0.0..1.0),
            };
            let mut checked = 0;
            let mut t = 0.3;
            while checked < 50 {
                t += 0.7;
                let th = m.angular_rate * t + m.phase;
                if kind == MotionKind::Tangent {
                    // Skip the clamp transition and the tan singularity,
                    // where the derivative is discontinuous or huge.
                    let raw = (m.amplitude * th.tan()).abs();
                    if raw > 8.0 * m.amplitude || th.cos().abs() < 0.2 {
                        continue;
                    }
                }
                let h = 1e-5;
                let (_, v) = m.position_at(&c0, t);
                let (pp, _) = m.position_at(&c0, t + h);
                let (pm, _) = m.position_at(&c0, t - h);
                let fd = (pp - pm) / (2.0 * h);
                let scale = v.norm().max(1e-9);
                assert!(
                    (fd - v).norm() / scale < 1e-5,
                    "{kind:?} at t={t}: fd {fd:?} vs v {v:?}"
                );
                checked += 1;
            }
        }
    }

    #[test]
    fn tangent_stays_clamped() {
        let m = MotionPattern {
            kind: MotionKind::Tangent,
            amplitude: 20.0,
            angular_rate: 0.3,
            direction: Vec3::new(1.0, 0.0, 0.0),
            phase: 0.0,
        };
        for k in 0..500 {
            let (p, v) = m.position_at(&Vec3::zeros(), k as f64 * 0.1);
            assert!(p.x.abs() <= 200.0 + 1e-9);
            assert!(v.x.is_finite());
        }
    }

    #[test]
    fn surface_distance_cases() {
        let s = unit_sphere();
        assert_relative_eq!(
            s.surface_distance(0.0, &Vec3::new(3.0, 0.0, 0.0)).unwrap(),
            2.0,
            epsilon = 1e-6
        );
        let big = sphere_at(Vec3::new(10.0, 0.0, 0.0), 5.0);
        let p = Vec3::new(10.0, 12.0, 0.0);
        assert_relative_eq!(big.surface_distance(0.0, &p).unwrap(), 7.0, epsilon = 1e-6);
        let ell = Threat { semi_axes: Vec3::new(2.0, 1.0, 1.0), ..unit_sphere() };
        assert_relative_eq!(
            ell.surface_distance(0.0, &Vec3::new(4.0, 0.0, 0.0)).unwrap(),
            2.0,
            epsilon = 1e-6
        );
        assert!(matches!(
            unit_sphere().surface_distance(0.0, &Vec3::new(0.5, 0.0, 0.0)),
            Err(Error::InsideThreat(_))
        ));
    }

    #[test]
    fn projected_point_lies_on_surface() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let threat = Threat {
                center0: Vec3::zeros(),
                semi_axes: Vec3::new(
                    rng.random_range(2.0..30.0),
                    rng.random_range(2.0..30.0),
                    rng.random_range(2.0..30.0),
                ),
                exponents: [rng.random_range(1..3), rng.random_range(1..3), rng.random_range(1..3)],
                motion: MotionPattern::fixed(),
                r_obs: 10.0,
                r_threaten: 20.0,
                lambda: 5.0,
            };
            let dir = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalize();
            let p = dir * rng.random_range(35.0..200.0);
            let q = threat.surface_point(0.0, &p).unwrap();
            assert!((threat.value(0.0, &q) - 1.0).abs() < 1e-5, "F(q) = {}", threat.value(0.0, &q));
            let d = threat.surface_distance(0.0, &p).unwrap();
            assert!(d <= (p - threat.center0).norm());
        }
    }

    #[test]
    fn observe_range_and_exact_visibility() {
        let roster = vec![sphere_at(Vec3::new(15_000.0, 0.0, 0.0), 100.0)];
        let sensor = SensorConfig { range: 10_000.0, dropout: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let obs = observe(&roster, 0.0, &Vec3::zeros(), &sensor, &mut rng);
        assert!(!obs[0].visible(), "threat at 15 km must be invisible");

        let roster = vec![sphere_at(Vec3::new(5_000.0, 0.0, 0.0), 100.0)];
        let obs = observe(&roster, 0.0, &Vec3::zeros(), &sensor, &mut rng);
        let data = obs[0].data().expect("threat at 5 km visible with zero dropout");
        assert_relative_eq!(data.distance, 4_900.0, epsilon = 1e-6);
        assert_relative_eq!(data.rel_position.x, 4_900.0, epsilon = 1e-6);
    }

    #[test]
    fn observe_dropout_rate_in_binomial_interval() {
        let roster = vec![sphere_at(Vec3::new(5_000.0, 0.0, 0.0), 100.0)];
        let sensor = SensorConfig { range: 10_000.0, dropout: 0.05 };
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut dropped = 0usize;
        let trials = 10_000;
        for _ in 0..trials {
            let obs = observe(&roster, 0.0, &Vec3::zeros(), &sensor, &mut rng);
            if !obs[0].visible() {
                dropped += 1;
            }
        }
        let rate = dropped as f64 / trials as f64;
        assert!((0.037..=0.063).contains(&rate), "drop rate {rate} outside 99% interval");
    }

    #[test]
    fn observe_is_deterministic_under_seed() {
        let roster = vec![
            sphere_at(Vec3::new(5_000.0, 0.0, 0.0), 100.0),
            sphere_at(Vec3::new(0.0, 8_000.0, 0.0), 200.0),
        ];
        let sensor = SensorConfig::default();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            (0..50)
                .map(|k| observe(&roster, k as f64, &Vec3::zeros(), &sensor, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
