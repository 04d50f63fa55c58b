//! Terrain-following / terrain-avoidance route planning for fixed-wing
//! aircraft.
//!
//! The planner abstracts threats and terrain into a disturbed fluid field:
//! obstacles modulate a goal-directed free stream through repulsive and
//! tangential matrices, the ground adds an upward disturbance velocity, and
//! the resulting field velocity is corrected against the aircraft's turn and
//! climb limits before each waypoint is committed. A PPO policy tunes the
//! four field parameters (ground intensity, repulsive strength, tangential
//! strength, tangential angle) online, and an informed RRT* reachability
//! oracle gates training episodes at key remaining-distance thresholds.
//!
//! Crate layout mirrors the pipeline:
//!
//! - [`terrain`] — heightmap storage, bilinear queries, synthetic maps
//! - [`threats`] — superquadric obstacles, motion patterns, sensor model
//! - [`flowfield`] — field construction and the planning velocity
//! - [`dynamics`] — horizontal arc / vertical point-mass kinematics
//! - [`mdrrt`] — informed RRT* planner and the key-point oracle
//! - [`ppo`] — from-scratch actor-critic networks and the clipped update
//! - [`mission`] — episode environment, reward, metrics
//! - [`scenario`] — run configuration files
//! - [`cli`] — batch front end (terrain generation, training, planning,
//!   benchmarking)

pub mod cli;
pub mod dynamics;
pub mod flowfield;
pub mod mdrrt;
pub mod mission;
pub mod ppo;
pub mod scenario;
pub mod terrain;
pub mod threats;

use nalgebra::Vector3;

/// World-space vector in meters (or m/s for velocities).
pub type Vec3 = Vector3<f64>;

/// Crate-wide error type. Variants are deliberately fine-grained so callers
/// can tell an out-of-map query from a collision from a config problem.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    /// Query outside the terrain grid's bounding rectangle.
    #[error("position ({0:.1}, {1:.1}) is outside the terrain grid")]
    OutOfMap(f64, f64),
    /// Gradient of the threat function vanished (query at a threat center).
    #[error("degenerate surface normal at threat center")]
    DegenerateNormal,
    /// Surface-distance query from a point inside the threat (F < 1).
    #[error("point is inside threat (F = {0:.6}); treat as collision")]
    InsideThreat(f64),
    /// Free-stream direction undefined (position equals goal).
    #[error("degenerate direction: position coincides with goal")]
    DegenerateDirection,
    /// Obstacle weight undefined at surface contact (F == 1).
    #[error("obstacle weight degenerate: threat value {0:.9} at surface")]
    WeightDegenerate(f64),
    /// Field evaluation found the agent inside a threat.
    #[error("collision: threat value {0:.6} <= 1")]
    Collision(f64),
    /// Near-vertical flight path: cos(gamma) below safe threshold.
    #[error("vertical singularity: |climb angle| too close to 90 degrees")]
    VerticalSingularity,
    /// Kinematic precondition violated (turn curvature beyond the roll limit).
    #[error("kinematic limits exceeded: {0}")]
    LimitsExceeded(String),
    /// Ground contact or below-ground state.
    #[error("ground collision: altitude above ground {0:.2} m <= 0")]
    GroundCollision(f64),
    /// Stepping an episode that already terminated.
    #[error("episode already terminated with outcome {0}")]
    EpisodeDone(String),
    /// Planner preconditions violated (start/goal placement).
    #[error("planner precondition: {0}")]
    PlannerPrecondition(String),
    /// Network input dimension mismatch.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    /// Non-finite loss during a policy update.
    #[error("non-finite loss during update: {0}")]
    NonFiniteLoss(String),
    /// Malformed configuration or scenario file.
    #[error("config error: {0}")]
    Config(String),
    /// Malformed data file (DEM, model, trajectory).
    #[error("file format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 for configuration problems,
    /// 3 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Format(_) => 2,
            _ => 3,
        }
    }
}
