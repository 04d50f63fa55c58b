//! Episode environment: state encoding, reward, the step pipeline, and
//! flight metrics.
//!
//! Each step runs the full decision chain: observe threats, build the
//! disturbed field from the policy's four parameters, propose the
//! unrestricted waypoint `p + u_bar dt`, correct it against the kinematic
//! limits, check the flown segment for ground/threat/map violations, run
//! the key-point reachability gate, and score the result. Episodes are
//! deterministic functions of the scenario and an episode seed.

use std::fmt;
use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{kinematic_correct, wrap_angle, AircraftState, KinematicLimits};
use crate::flowfield::{flow_velocity, FieldAction, FieldConfig, ThreatSample};
use crate::mdrrt::{key_point_check, KeyPointSchedule, RrtConfig};
use crate::ppo::{sample_action, squash_action, ActorCritic, RolloutBuffer, StepRecord};
use crate::terrain::TerrainGrid;
use crate::threats::{observe, Observation, SensorConfig, Threat};
use crate::{Error, Result, Vec3};

/// Dimension of the policy input vector.
pub const STATE_DIM: usize = 16;

/// Reward weights and shaping constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub w_h: f64,
    pub w_o: f64,
    pub w_p: f64,
    pub w_r: f64,
    /// Below-band slope weight (chi of the height term).
    pub chi: f64,
    /// Above-band slope weight (delta of the height term).
    pub delta: f64,
    pub h_down: f64,
    pub h_up: f64,
    /// Obstacle-term weights on the fire-range and warning-range slopes.
    pub alpha_o: f64,
    pub beta_o: f64,
    /// Posture weights on climb and per-step track change.
    pub kappa: f64,
    pub phi_w: f64,
    /// Posture activation angle in radians.
    pub phi_good: f64,
    /// Added on reaching the goal region.
    pub goal_bonus: f64,
    /// Subtracted on ground/threat/map crashes.
    pub crash_penalty: f64,
    /// Sum the obstacle term over all visible threats instead of using
    /// only the nearest one.
    pub sum_obstacles: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            // Weighted so a full episode's accumulated shaping stays inside
            // +-15 while the terminal outcomes and key-point verdicts sit
            // at +-25..40: reaching the goal must dominate every shortcut.
            w_h: 0.25,
            w_o: 0.5,
            w_p: 0.5,
            w_r: 0.5,
            chi: 1.0,
            delta: 1.0,
            h_down: 450.0,
            h_up: 550.0,
            alpha_o: 1.0,
            beta_o: 1.0,
            kappa: 1.0,
            phi_w: 1.0,
            phi_good: 25f64.to_radians(),
            goal_bonus: 30.0,
            crash_penalty: 30.0,
            sum_obstacles: false,
        }
    }
}

/// Height/progress shaping: in-band altitude earns the small band bonus,
/// excursions are charged on both slopes, and the remaining-distance ratio
/// is a constant drag that vanishes at the goal.
pub fn reward_height(h: f64, d_now: f64, d_all: f64, cfg: &RewardConfig) -> f64 {
    -cfg.chi * ((cfg.h_down - h) / h) - cfg.delta * ((h - cfg.h_up) / h) - d_now / d_all
}

/// Obstacle shaping: the two slopes zero out at the fire radius and the
/// warning boundary, increasing in distance so retreat is never penalized.
/// Capped at zero so keeping far from threats is neutral, never a source
/// of loitering reward.
pub fn reward_obstacle(d: f64, r_obs: f64, r_threaten: f64, cfg: &RewardConfig) -> f64 {
    let graded = cfg.alpha_o * ((d - r_obs) / r_obs)
        + cfg.beta_o * ((d - r_obs - r_threaten) / (r_obs + r_threaten));
    graded.min(0.0)
}

/// Posture shaping: zero inside the comfort cone, logarithmic beyond it.
/// `track_change` is the per-step heading change.
pub fn reward_posture(climb: f64, track_change: f64, cfg: &RewardConfig) -> f64 {
    let mut r = 0.0;
    let climb_excess = climb.abs() - cfg.phi_good;
    if climb_excess > 0.0 {
        r -= cfg.kappa * (climb_excess / cfg.phi_good + 1.0).ln();
    }
    let track_excess = track_change.abs() - cfg.phi_good;
    if track_excess > 0.0 {
        r -= cfg.phi_w * (track_excess / cfg.phi_good + 1.0).ln();
    }
    r
}

/// Per-step reward components before weighting.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RewardComponents {
    pub height: f64,
    pub obstacle: f64,
    pub posture: f64,
    pub rrt: f64,
}

/// Weighted sum of the four components.
pub fn total_reward(c: &RewardComponents, cfg: &RewardConfig) -> f64 {
    cfg.w_h * c.height + cfg.w_o * c.obstacle + cfg.w_p * c.posture + cfg.w_r * c.rrt
}

/// How an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Goal,
    Collision,
    Ground,
    OutOfMap,
    KeyPointFail,
    Timeout,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Outcome::Goal => "goal",
            Outcome::Collision => "collision",
            Outcome::Ground => "ground",
            Outcome::OutOfMap => "out_of_map",
            Outcome::KeyPointFail => "key_point_fail",
            Outcome::Timeout => "timeout",
        };
        f.write_str(s)
    }
}

/// Spawn region: a horizontal disk, altitude fixed above local terrain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    /// Height above local ground for points drawn from this region.
    pub agl: f64,
}

impl Region {
    fn sample(&self, terrain: &TerrainGrid, rng: &mut ChaCha8Rng) -> Result<Vec3> {
        let ang = rng.random_range(0.0..std::f64::consts::TAU);
        let r = self.radius * rng.random_range(0.0f64..=1.0).sqrt();
        let x = self.x + r * ang.cos();
        let y = self.y + r * ang.sin();
        let ground = terrain.height_at(x, y)?;
        Ok(Vec3::new(x, y, ground + self.agl))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MissionConfig {
    /// Planning step in seconds.
    pub dt: f64,
    /// Episode step cap; 0 means three times the straight-line step count.
    pub max_steps: usize,
    /// Enables the key-point reachability gate.
    pub keypoints: bool,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self { dt: 1.0, max_steps: 0, keypoints: true }
    }
}

/// Immutable per-scenario data shared by every episode and worker.
#[derive(Debug, Clone)]
pub struct World {
    pub terrain: TerrainGrid,
    pub threats: Vec<Threat>,
    pub limits: KinematicLimits,
    pub field: FieldConfig,
    pub sensor: SensorConfig,
    pub reward: RewardConfig,
    pub rrt: RrtConfig,
    pub mission: MissionConfig,
    pub start_region: Region,
    pub goal_region: Region,
}

impl World {
    pub fn validate(&self) -> Result<()> {
        self.limits.validate()?;
        for t in &self.threats {
            t.validate()?;
        }
        if self.reward.h_down >= self.reward.h_up {
            return Err(Error::Config(format!(
                "need h_down < h_up, got {} and {}",
                self.reward.h_down, self.reward.h_up
            )));
        }
        if self.mission.dt <= 0.0 {
            return Err(Error::Config("mission dt must be > 0".into()));
        }
        Ok(())
    }
}

/// Splitmix64-style mix for deriving independent episode seeds.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(index.wrapping_mul(0xBF58476D1CE4E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// One logged step.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRow {
    pub time: f64,
    pub position: Vec3,
    pub agl: f64,
    pub speed: f64,
    pub climb: f64,
    pub heading: f64,
    pub roll: f64,
    pub action: FieldAction,
    pub reward: f64,
    pub r_h: f64,
    pub r_obs: f64,
    pub r_p: f64,
    pub r_rrt: f64,
    /// Surface distance to the nearest visible threat; -1 when none.
    pub nearest_threat: f64,
}

/// Full episode log plus terminal metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeRecord {
    pub start: Vec3,
    pub goal: Vec3,
    pub rows: Vec<EpisodeRow>,
    pub outcome: Option<Outcome>,
    /// Per-decision wall-clock latencies; measurement only, not content.
    pub latencies_ms: Vec<f64>,
    pub tangent_fallbacks: u32,
}

impl EpisodeRecord {
    /// Trajectory file: one header row, one delimited row per step.
    pub fn write_trajectory<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "time,x,y,z,agl,speed,climb,heading,roll,beta,rho,sigma,theta,\
             reward,r_h,r_obs,r_p,r_rrt,nearest_threat_m"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{:.3},{:.6},{:.6},{:.6},{:.6},{:.6},{:.9},{:.9},{:.9},\
                 {:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.6}",
                r.time,
                r.position.x,
                r.position.y,
                r.position.z,
                r.agl,
                r.speed,
                r.climb,
                r.heading,
                r.roll,
                r.action.beta,
                r.action.rho,
                r.action.sigma,
                r.action.theta,
                r.reward,
                r.r_h,
                r.r_obs,
                r.r_p,
                r.r_rrt,
                r.nearest_threat,
            )?;
        }
        Ok(())
    }
}

/// What one environment step reports back to the rollout loop.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub outcome: Option<Outcome>,
    pub keypoint_fired: bool,
}

/// Episode simulator. One instance per rollout worker; the world is shared
/// immutably.
pub struct Environment<'a> {
    world: &'a World,
    pub(crate) rng: ChaCha8Rng,
    state: AircraftState,
    start: Vec3,
    goal: Vec3,
    d_total: f64,
    time: f64,
    steps: usize,
    max_steps: usize,
    schedule: KeyPointSchedule,
    done: Option<Outcome>,
    record: EpisodeRecord,
    cached_obs: Option<Vec<Observation>>,
}

impl<'a> Environment<'a> {
    pub fn new(world: &'a World) -> Self {
        Self {
            world,
            rng: ChaCha8Rng::seed_from_u64(0),
            state: AircraftState::level(Vec3::zeros(), world.field.cruise_speed, 0.0),
            start: Vec3::zeros(),
            goal: Vec3::zeros(),
            d_total: 1.0,
            time: 0.0,
            steps: 0,
            max_steps: 0,
            schedule: KeyPointSchedule::new(1.0),
            done: Some(Outcome::Timeout),
            record: EpisodeRecord::default(),
            cached_obs: None,
        }
    }

    /// Starts a fresh episode. Returns the outcome immediately when the
    /// spawn itself is invalid (below ground or inside a threat).
    pub fn reset(&mut self, episode_seed: u64) -> Result<Option<Outcome>> {
        self.rng = ChaCha8Rng::seed_from_u64(episode_seed);
        self.start = self.world.start_region.sample(&self.world.terrain, &mut self.rng)?;
        self.goal = self.world.goal_region.sample(&self.world.terrain, &mut self.rng)?;
        self.d_total = (self.goal - self.start).norm().max(1.0);
        let heading = (self.goal.y - self.start.y).atan2(self.goal.x - self.start.x);
        self.state = AircraftState::level(self.start, self.world.field.cruise_speed, heading);
        self.time = 0.0;
        self.steps = 0;
        self.max_steps = if self.world.mission.max_steps > 0 {
            self.world.mission.max_steps
        } else {
            3 * (self.d_total / (self.state.speed * self.world.mission.dt)).ceil() as usize
        };
        self.schedule = KeyPointSchedule::new(self.d_total);
        self.done = None;
        self.record = EpisodeRecord { start: self.start, goal: self.goal, ..Default::default() };
        self.cached_obs = None;

        let agl = self.world.terrain.agl(&self.start)?;
        if agl <= 0.0 {
            self.done = Some(Outcome::Ground);
            self.record.outcome = self.done;
            return Ok(self.done);
        }
        for threat in &self.world.threats {
            if threat.value(0.0, &self.start) <= 1.0 {
                self.done = Some(Outcome::Collision);
                self.record.outcome = self.done;
                return Ok(self.done);
            }
        }
        Ok(None)
    }

    pub fn aircraft(&self) -> &AircraftState {
        &self.state
    }

    pub fn goal(&self) -> &Vec3 {
        &self.goal
    }

    pub fn start(&self) -> &Vec3 {
        &self.start
    }

    pub fn record(&self) -> &EpisodeRecord {
        &self.record
    }

    pub fn into_record(self) -> EpisodeRecord {
        self.record
    }

    pub fn done(&self) -> Option<Outcome> {
        self.done
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn observations(&mut self) -> Vec<Observation> {
        if let Some(obs) = &self.cached_obs {
            return obs.clone();
        }
        let obs = observe(
            &self.world.threats,
            self.time,
            &self.state.position,
            &self.world.sensor,
            &mut self.rng,
        );
        self.cached_obs = Some(obs.clone());
        obs
    }

    /// Policy input for the current step. Draws (and caches) this step's
    /// observations so the policy and the field see the same sensor frame.
    pub fn state_vector(&mut self) -> Result<Vec<f64>> {
        let obs = self.observations();
        build_state(
            &self.state,
            &self.start,
            &self.goal,
            &obs,
            &self.world.terrain,
            self.world.reward.h_up,
            self.world.limits.gamma_max,
        )
    }

    /// Advances one planning step under `action`.
    pub fn step(&mut self, action: &FieldAction) -> Result<StepOutcome> {
        self.step_with_latency(action, 0.0)
    }

    /// As [`step`](Self::step), adding `pre_ms` (state build + policy time
    /// measured by the caller) into the logged decision latency.
    pub fn step_with_latency(&mut self, action: &FieldAction, pre_ms: f64) -> Result<StepOutcome> {
        if let Some(outcome) = self.done {
            return Err(Error::EpisodeDone(outcome.to_string()));
        }
        let t_start = Instant::now();
        let world = self.world;
        let dt = world.mission.dt;
        let t = self.time;
        let pos = self.state.position;
        let obs = self.observations();
        self.cached_obs = None;

        // Field inputs from the visible, in-range threats.
        let mut samples = Vec::new();
        let mut collided = false;
        for (threat, ob) in world.threats.iter().zip(&obs) {
            let Some(data) = ob.data() else { continue };
            if data.distance >= world.field.r_conf {
                continue;
            }
            let f_value = threat.value(t, &pos);
            if f_value <= 1.0 {
                collided = true;
                break;
            }
            let gradient = threat.normal(t, &pos)?;
            samples.push(ThreatSample {
                f_value,
                gradient,
                velocity: data.velocity,
                surface_distance: data.distance,
                lambda: threat.lambda,
            });
        }
        if collided {
            return Ok(self.finish_failure(Outcome::Collision, *action, pre_ms, t_start));
        }

        let agl_now = match world.terrain.agl(&pos) {
            Ok(a) if a > 0.0 => a,
            _ => return Ok(self.finish_failure(Outcome::Ground, *action, pre_ms, t_start)),
        };
        let field = match flow_velocity(&pos, &self.goal, action, &samples, agl_now, &world.field)
        {
            Ok(f) => f,
            Err(Error::Collision(_)) => {
                return Ok(self.finish_failure(Outcome::Collision, *action, pre_ms, t_start))
            }
            Err(Error::GroundCollision(_)) => {
                return Ok(self.finish_failure(Outcome::Ground, *action, pre_ms, t_start))
            }
            Err(e) => return Err(e),
        };
        self.record.tangent_fallbacks += field.tangent_fallbacks;

        let p_unrestricted = pos + field.velocity * dt;
        let correction = kinematic_correct(&world.limits, &self.state, &p_unrestricted, dt)?;
        let new_state = correction.state;

        // Sweep the flown segment against terrain, map bounds, and the
        // moving threats at matching times.
        for i in 1..=5 {
            let s = i as f64 / 5.0;
            let p = pos + (new_state.position - pos) * s;
            let ts = t + dt * s;
            match world.terrain.agl(&p) {
                Ok(a) if a > 0.0 => {}
                Ok(_) => {
                    self.state = new_state;
                    return Ok(self.finish_failure(Outcome::Ground, *action, pre_ms, t_start));
                }
                Err(_) => {
                    self.state = new_state;
                    return Ok(self.finish_failure(Outcome::OutOfMap, *action, pre_ms, t_start));
                }
            }
            for threat in &world.threats {
                if threat.value(ts, &p) <= 1.0 {
                    self.state = new_state;
                    return Ok(self.finish_failure(Outcome::Collision, *action, pre_ms, t_start));
                }
            }
        }

        let prev_heading = self.state.track_heading;
        self.state = new_state;
        self.time += dt;
        self.steps += 1;

        let new_agl = world.terrain.agl(&self.state.position)?;
        let d_now = (self.goal - self.state.position).norm();
        let reached_goal = d_now <= world.rrt.goal_radius;

        // Key-point reachability gate (skipped once the goal is reached).
        let mut keypoint_fired = false;
        let mut r_rrt = 0.0;
        if world.mission.keypoints && !reached_goal {
            if let Some(result) = key_point_check(
                &mut self.schedule,
                &self.state,
                &self.goal,
                &world.terrain,
                &world.threats,
                self.time,
                world.limits,
                world.rrt,
                self.state.speed,
                dt,
                world.reward.h_down,
                world.reward.h_up,
                &mut self.rng,
            )? {
                keypoint_fired = true;
                if !result.reachable {
                    r_rrt = -(result.fail_estimate as f64);
                }
            }
        }

        // Reward at the new state.
        let nearest = nearest_visible_distance(world, &obs, &self.state.position, self.time);
        let obstacle = if world.reward.sum_obstacles {
            visible_obstacle_rewards(world, &obs, &self.state.position, self.time).iter().sum()
        } else {
            nearest
                .map(|(d, k)| {
                    reward_obstacle(
                        d,
                        world.threats[k].r_obs,
                        world.threats[k].r_threaten,
                        &world.reward,
                    )
                })
                .unwrap_or(0.0)
        };
        let components = RewardComponents {
            height: reward_height(new_agl, d_now, self.d_total, &world.reward),
            obstacle,
            posture: reward_posture(
                self.state.climb_angle,
                wrap_angle(self.state.track_heading - prev_heading),
                &world.reward,
            ),
            rrt: r_rrt,
        };
        let mut reward = total_reward(&components, &world.reward);

        let outcome = if reached_goal {
            reward += world.reward.goal_bonus;
            Some(Outcome::Goal)
        } else if r_rrt < 0.0 {
            Some(Outcome::KeyPointFail)
        } else if self.steps >= self.max_steps {
            Some(Outcome::Timeout)
        } else {
            None
        };
        self.done = outcome;
        if outcome.is_some() {
            self.record.outcome = outcome;
        }

        self.push_row(*action, reward, &components, nearest.map(|(d, _)| d));
        self.record.latencies_ms.push(pre_ms + t_start.elapsed().as_secs_f64() * 1e3);
        Ok(StepOutcome { reward, done: outcome.is_some(), outcome, keypoint_fired })
    }

    /// Terminal failure bookkeeping: the step is logged with the crash
    /// penalty as its reward and zeroed shaping components.
    fn finish_failure(
        &mut self,
        outcome: Outcome,
        action: FieldAction,
        pre_ms: f64,
        t_start: Instant,
    ) -> StepOutcome {
        self.time += self.world.mission.dt;
        self.steps += 1;
        self.done = Some(outcome);
        self.record.outcome = Some(outcome);
        let reward = -self.world.reward.crash_penalty;
        self.push_row(action, reward, &RewardComponents::default(), None);
        self.record.latencies_ms.push(pre_ms + t_start.elapsed().as_secs_f64() * 1e3);
        StepOutcome { reward, done: true, outcome: Some(outcome), keypoint_fired: false }
    }

    fn push_row(
        &mut self,
        action: FieldAction,
        reward: f64,
        components: &RewardComponents,
        nearest_threat: Option<f64>,
    ) {
        let agl = self.world.terrain.agl(&self.state.position).unwrap_or(-1.0);
        self.record.rows.push(EpisodeRow {
            time: self.time,
            position: self.state.position,
            agl,
            speed: self.state.speed,
            climb: self.state.climb_angle,
            heading: self.state.track_heading,
            roll: self.state.roll,
            action,
            reward,
            r_h: components.height,
            r_obs: components.obstacle,
            r_p: components.posture,
            r_rrt: components.rrt,
            nearest_threat: nearest_threat.unwrap_or(-1.0),
        });
    }
}

/// Surface distance and index of the nearest visible threat at `pos`.
fn nearest_visible_distance(
    world: &World,
    obs: &[Observation],
    pos: &Vec3,
    t: f64,
) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (k, (threat, ob)) in world.threats.iter().zip(obs).enumerate() {
        if !ob.visible() {
            continue;
        }
        let d = threat.surface_distance(t, pos).unwrap_or(0.0);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, k));
        }
    }
    best
}

fn visible_obstacle_rewards(world: &World, obs: &[Observation], pos: &Vec3, t: f64) -> Vec<f64> {
    world
        .threats
        .iter()
        .zip(obs)
        .filter(|(_, ob)| ob.visible())
        .map(|(threat, _)| {
            let d = threat.surface_distance(t, pos).unwrap_or(0.0);
            reward_obstacle(d, threat.r_obs, threat.r_threaten, &world.reward)
        })
        .collect()
}

/// Scale dividing the log-distance slots so every input is O(1); large
/// raw inputs push the freshly initialized actor into saturation.
pub const LOG_DISTANCE_SCALE: f64 = 10.0;

/// Policy input encoding: unit offsets and log distances to start, goal,
/// and the nearest visible threat (zeroed when absent), scaled altitude,
/// scaled climb, and the heading on the unit circle.
pub fn build_state(
    agent: &AircraftState,
    start: &Vec3,
    goal: &Vec3,
    observations: &[Observation],
    terrain: &TerrainGrid,
    h_up: f64,
    gamma_max: f64,
) -> Result<Vec<f64>> {
    let mut s = Vec::with_capacity(STATE_DIM);
    let mut push_block = |rel: Vec3| {
        let d = rel.norm();
        if d > 0.0 {
            s.extend_from_slice(&[
                rel.x / d,
                rel.y / d,
                rel.z / d,
                (1.0 + d).ln() / LOG_DISTANCE_SCALE,
            ]);
        } else {
            s.extend_from_slice(&[0.0, 0.0, 0.0, 0.0]);
        }
    };
    push_block(start - agent.position);
    push_block(goal - agent.position);
    let nearest = observations
        .iter()
        .filter_map(|o| o.data())
        .min_by(|a, b| a.distance.total_cmp(&b.distance));
    match nearest {
        Some(data) => push_block(data.rel_position),
        None => push_block(Vec3::zeros()),
    }
    let agl = terrain.agl(&agent.position)?;
    s.push(agl / h_up);
    s.push(agent.climb_angle / gamma_max);
    s.push(agent.track_heading.sin());
    s.push(agent.track_heading.cos());
    debug_assert_eq!(s.len(), STATE_DIM);
    Ok(s)
}

/// Flight metrics computed from an episode log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub path_length_m: f64,
    pub max_climb_deg: f64,
    /// Mean squared turning angle between consecutive segments (rad^2).
    pub smoothness: f64,
    pub latency_p50_ms: f64,
    pub latency_p99_ms: f64,
    pub min_threat_distance_m: f64,
    pub outcome: String,
}

impl MetricReport {
    /// Stable `key = value` lines.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "path_length_m = {:.3}", self.path_length_m)?;
        writeln!(w, "max_climb_deg = {:.4}", self.max_climb_deg)?;
        writeln!(w, "smoothness = {:.6}", self.smoothness)?;
        writeln!(w, "latency_p50_ms = {:.3}", self.latency_p50_ms)?;
        writeln!(w, "latency_p99_ms = {:.3}", self.latency_p99_ms)?;
        writeln!(w, "min_threat_distance_m = {:.3}", self.min_threat_distance_m)?;
        writeln!(w, "outcome = {}", self.outcome)?;
        Ok(())
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((sorted.len() as f64 - 1.0) * q).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

/// Path length, climb extremes, smoothness, and latency percentiles.
/// Repeated points contribute no segment and are skipped with a warning.
pub fn metrics(record: &EpisodeRecord) -> Result<MetricReport> {
    if record.rows.len() < 3 {
        return Err(Error::Config(format!(
            "metrics need at least 3 logged points, got {}",
            record.rows.len()
        )));
    }
    let mut points = vec![record.start];
    points.extend(record.rows.iter().map(|r| r.position));

    let mut segments: Vec<Vec3> = Vec::new();
    for w in points.windows(2) {
        let d = w[1] - w[0];
        if d.norm() < 1e-9 {
            log::warn!("metrics: skipping repeated trajectory point {:?}", w[1]);
            continue;
        }
        segments.push(d);
    }
    let path_length_m: f64 = segments.iter().map(|s| s.norm()).sum();
    let mut smoothness = 0.0;
    let mut corners = 0usize;
    for w in segments.windows(2) {
        let cosang = (w[0].dot(&w[1]) / (w[0].norm() * w[1].norm())).clamp(-1.0, 1.0);
        smoothness += cosang.acos().powi(2);
        corners += 1;
    }
    if corners > 0 {
        smoothness /= corners as f64;
    }
    let max_climb_deg =
        record.rows.iter().map(|r| r.climb.abs()).fold(0.0f64, f64::max).to_degrees();
    let mut lat = record.latencies_ms.clone();
    lat.sort_by(f64::total_cmp);
    let min_threat_distance_m = record
        .rows
        .iter()
        .filter(|r| r.nearest_threat >= 0.0)
        .map(|r| r.nearest_threat)
        .fold(f64::INFINITY, f64::min);
    Ok(MetricReport {
        path_length_m,
        max_climb_deg,
        smoothness,
        latency_p50_ms: percentile(&lat, 0.50),
        latency_p99_ms: percentile(&lat, 0.99),
        min_threat_distance_m: if min_threat_distance_m.is_finite() {
            min_threat_distance_m
        } else {
            -1.0
        },
        outcome: record.outcome.map(|o| o.to_string()).unwrap_or_else(|| "running".into()),
    })
}

/// How actions are produced during a rollout.
pub enum Policy<'p> {
    /// Mean action, no exploration: evaluation and flight planning.
    Greedy(&'p ActorCritic),
    /// Stochastic policy plus experience collection.
    Sample(&'p ActorCritic),
    /// Constant field parameters (the fixed-field baseline).
    Fixed(FieldAction),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSummary {
    pub outcome: Outcome,
    pub total_reward: f64,
    pub steps: usize,
    pub keypoint_checks: usize,
}

/// Runs one episode to termination. With `Policy::Sample` and a buffer,
/// transitions are recorded for the PPO update.
pub fn run_episode(
    env: &mut Environment,
    policy: &Policy,
    episode_seed: u64,
    mut buffer: Option<&mut RolloutBuffer>,
) -> Result<EpisodeSummary> {
    if let Some(outcome) = env.reset(episode_seed)? {
        return Ok(EpisodeSummary { outcome, total_reward: 0.0, steps: 0, keypoint_checks: 0 });
    }
    let mut total_reward = 0.0;
    let mut keypoint_checks = 0usize;
    loop {
        let t0 = Instant::now();
        let state_vec = env.state_vector()?;
        let (action, raw, log_p, value) = match policy {
            Policy::Greedy(ac) => {
                let out = ac.policy_output(&state_vec)?;
                (squash_action(&out.mean), out.mean, 0.0, out.value)
            }
            Policy::Sample(ac) => {
                let out = ac.policy_output(&state_vec)?;
                let sample = sample_action(&out, &mut env.rng);
                (squash_action(&sample.raw), sample.pre_clamp, sample.log_prob, out.value)
            }
            Policy::Fixed(a) => (*a, [0.0; 4], 0.0, 0.0),
        };
        let pre_ms = t0.elapsed().as_secs_f64() * 1e3;
        let out = env.step_with_latency(&action, pre_ms)?;
        total_reward += out.reward;
        if out.keypoint_fired {
            keypoint_checks += 1;
        }
        if let (Some(buf), Policy::Sample(_)) = (buffer.as_deref_mut(), policy) {
            buf.push(StepRecord {
                state: state_vec,
                raw_action: raw,
                log_prob: log_p,
                reward: out.reward,
                value,
                done: out.done,
            });
        }
        if out.done {
            let outcome = out.outcome.unwrap();
            return Ok(EpisodeSummary { outcome, total_reward, steps: env.steps, keypoint_checks });
        }
    }
}
