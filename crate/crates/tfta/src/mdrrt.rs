//! Informed RRT* with dynamics-constrained steering, and the key-point
//! reachability oracle that gates training episodes.
//!
//! The tree grows by steering through [`crate::dynamics::kinematic_correct`]
//! so every edge respects the turn-curvature and climb limits; node headings
//! and climb angles are canonical functions of the incoming chord, which
//! keeps ChooseParent/Rewire edges checkable with one predicate. Once a
//! solution exists, sampling restricts to the prolate spheroid whose focal
//! path length equals the best cost (scaled by the length weight), the
//! informed-sampling trick that collapses the search volume as solutions
//! improve. Threats are frozen at the planner's snapshot time: the planner
//! answers "is the goal reachable from this state now", not a full
//! space-time query.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{kinematic_correct, wrap_angle, AircraftState, KinematicLimits};
use crate::terrain::TerrainGrid;
use crate::threats::Threat;
use crate::{Error, Result, Vec3};

/// One tree vertex. `heading`/`climb` are the arrival angles implied by the
/// incoming edge and stay fixed once the node is created.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub position: Vec3,
    pub heading: f64,
    pub climb: f64,
    pub parent: Option<usize>,
    pub cost_to_come: f64,
}

/// Outcome of a planning query.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub reachable: bool,
    pub path: Option<Vec<Vec3>>,
    /// Predicted remaining steps when unreachable: `ceil(dist / (V dt))`.
    pub fail_estimate: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RrtConfig {
    /// Iteration budget for full optimizing queries.
    pub iter_max: usize,
    /// Iteration budget for key-point reachability queries.
    pub keypoint_iter_max: usize,
    /// Near-radius scale: `R = gamma (ln n / n)^{1/3}`, floored at 1.5 steps.
    pub gamma_rrt: f64,
    /// Goal region radius in meters.
    pub goal_radius: f64,
    /// Edge length weight in the cost.
    pub w_len: f64,
    /// Terrain-following weight: penalizes mean |agl - h_ref| along edges.
    pub w_tf: f64,
    /// Steering step in meters; 0 means one flight step `V dt`.
    pub step: f64,
    /// Probability of drawing the goal itself instead of a free sample;
    /// pulls the nearest branch into the goal region. The goal is a focus
    /// of every informed spheroid, so the focal inequality is unaffected.
    pub goal_bias: f64,
    /// Wall-clock safety abort in seconds. Sized so desk-scale queries
    /// always finish on iterations first; if it ever fires, determinism
    /// of that query is lost.
    pub time_budget_s: f64,
}

impl Default for RrtConfig {
    fn default() -> Self {
        Self {
            iter_max: 4000,
            keypoint_iter_max: 1500,
            gamma_rrt: 3000.0,
            goal_radius: 500.0,
            w_len: 1.0,
            w_tf: 0.0,
            step: 0.0,
            goal_bias: 0.08,
            time_budget_s: 8.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanMode {
    /// Stop at the first solution: answers reachability quickly.
    Reachability,
    /// Run the full iteration budget, rewiring toward the best cost.
    Optimize,
}

/// Everything a query needs besides the tree itself.
pub struct Planner<'a> {
    pub terrain: &'a TerrainGrid,
    pub threats: &'a [Threat],
    /// Threat centers are evaluated at this time for the whole query.
    pub snapshot_time: f64,
    pub limits: KinematicLimits,
    pub config: RrtConfig,
    pub speed: f64,
    pub dt: f64,
    /// Flight band above ground used to clamp sample altitudes.
    pub h_down: f64,
    pub h_up: f64,
    nodes: Vec<TreeNode>,
    children: Vec<Vec<usize>>,
    c_best_history: Vec<f64>,
    sample_log: Vec<(Vec3, f64)>,
}

impl<'a> Planner<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        terrain: &'a TerrainGrid,
        threats: &'a [Threat],
        snapshot_time: f64,
        limits: KinematicLimits,
        config: RrtConfig,
        speed: f64,
        dt: f64,
        h_down: f64,
        h_up: f64,
    ) -> Self {
        Self {
            terrain,
            threats,
            snapshot_time,
            limits,
            config,
            speed,
            dt,
            h_down,
            h_up,
            nodes: Vec::new(),
            children: Vec::new(),
            c_best_history: Vec::new(),
            sample_log: Vec::new(),
        }
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn c_best_history(&self) -> &[f64] {
        &self.c_best_history
    }

    /// `(sample, spheroid major axis at draw time)` for every iteration.
    pub fn sample_log(&self) -> &[(Vec3, f64)] {
        &self.sample_log
    }

    fn step_len(&self) -> f64 {
        if self.config.step > 0.0 {
            self.config.step
        } else {
            self.speed * self.dt
        }
    }

    /// Uniform sample in the prolate spheroid with foci `start`/`goal` and
    /// major axis `axis` (infinite: uniform over the map box). Altitude is
    /// clamped into the flight band when that keeps the point inside the
    /// spheroid.
    pub fn sample_in_ellipse(
        &self,
        start: &Vec3,
        goal: &Vec3,
        axis: f64,
        rng: &mut ChaCha8Rng,
    ) -> Vec3 {
        let (x0, y0, x1, y1) = self.terrain.bounds();
        if !axis.is_finite() {
            let x = rng.random_range(x0..=x1);
            let y = rng.random_range(y0..=y1);
            let ground = self.terrain.height_at(x, y).unwrap_or(0.0);
            let z = ground + rng.random_range(self.h_down..=self.h_up);
            return Vec3::new(x, y, z);
        }

        let c_min = (goal - start).norm();
        let axis = axis.max(c_min);
        let center = (start + goal) / 2.0;
        let xhat = if c_min > 0.0 { (goal - start) / c_min } else { Vec3::new(1.0, 0.0, 0.0) };
        let up =
            if xhat.z.abs() < 0.9 { Vec3::new(0.0, 0.0, 1.0) } else { Vec3::new(0.0, 1.0, 0.0) };
        let yhat = xhat.cross(&up).normalize();
        let zhat = xhat.cross(&yhat);
        let a = axis / 2.0;
        let r_t = ((axis * axis - c_min * c_min).max(0.0)).sqrt() / 2.0;

        let mut fallback = *start;
        for attempt in 0..32 {
            // Rejection-sample the unit ball.
            let u = loop {
                let u = Vec3::new(
                    rng.random_range(-1.0..=1.0),
                    rng.random_range(-1.0..=1.0),
                    rng.random_range(-1.0..=1.0),
                );
                if u.norm_squared() <= 1.0 {
                    break u;
                }
            };
            let p = center + xhat * (a * u.x) + yhat * (r_t * u.y) + zhat * (r_t * u.z);
            if attempt == 0 {
                fallback = p;
            }
            if let Ok(ground) = self.terrain.height_at(p.x, p.y) {
                let clamped =
                    Vec3::new(p.x, p.y, p.z.clamp(ground + self.h_down, ground + self.h_up));
                if (clamped - start).norm() + (clamped - goal).norm() <= axis + 1e-9 {
                    return clamped;
                }
            } else {
                return p;
            }
        }
        // Band and spheroid do not intersect here; the raw spheroid point
        // still satisfies the informed inequality.
        fallback
    }

    /// Largest heading change an edge of horizontal length `len_h` may carry
    /// (arc chord geometry: the chord bisects the heading change).
    fn half_turn_limit(&self, len_h: f64) -> f64 {
        0.5 * self.limits.max_curvature(self.speed) * len_h * (1.0 + 1e-3) + 1e-12
    }

    fn climb_rate_limit(&self, len: f64) -> f64 {
        self.limits.climb_rate_max(self.speed) * (len / self.speed) * (1.0 + 1e-3) + 1e-12
    }

    /// Chord-based dynamic feasibility of an edge from a node to a point.
    pub fn edge_feasible(&self, from: &TreeNode, to: &Vec3) -> bool {
        let d = to - from.position;
        let len = d.norm();
        if len < 1e-9 {
            return false;
        }
        let len_h = d.x.hypot(d.y);
        if len_h < 1e-9 {
            return false;
        }
        let climb = d.z.atan2(len_h);
        if climb.abs() > self.limits.gamma_max + 1e-9 {
            return false;
        }
        if (climb - from.climb).abs() > self.climb_rate_limit(len) {
            return false;
        }
        let turn_half = wrap_angle(d.y.atan2(d.x) - from.heading).abs();
        turn_half <= self.half_turn_limit(len_h)
    }

    /// Arrival state at `to` for an edge leaving `from`.
    fn arrival_state(&self, from: &TreeNode, to: &Vec3) -> (f64, f64) {
        let d = to - from.position;
        let len_h = d.x.hypot(d.y);
        let chord_heading = d.y.atan2(d.x);
        let heading = wrap_angle(from.heading + 2.0 * wrap_angle(chord_heading - from.heading));
        let climb = d.z.atan2(len_h);
        (heading, climb)
    }

    /// Collision check with 10 interpolated samples: inside the map, above
    /// ground, outside every threat (frozen at the snapshot time).
    pub fn collision_free(&self, a: &Vec3, b: &Vec3) -> bool {
        for i in 1..=10 {
            let s = i as f64 / 10.0;
            let p = a + (b - a) * s;
            match self.terrain.agl(&p) {
                Ok(agl) if agl > 0.0 => {}
                _ => return false,
            }
            for threat in self.threats {
                if threat.value(self.snapshot_time, &p) <= 1.0 {
                    return false;
                }
            }
        }
        true
    }

    /// Weighted edge cost: length plus the mean deviation from the band
    /// center altitude, sampled at 10 midpoints.
    pub fn edge_cost(&self, a: &Vec3, b: &Vec3) -> Result<f64> {
        let len = (b - a).norm();
        if self.config.w_tf == 0.0 {
            return Ok(self.config.w_len * len);
        }
        let h_ref = 0.5 * (self.h_down + self.h_up);
        let mut tf = 0.0;
        for i in 0..10 {
            let s = (i as f64 + 0.5) / 10.0;
            let p = a + (b - a) * s;
            tf += (self.terrain.agl(&p)? - h_ref).abs();
        }
        Ok(self.config.w_len * len + self.config.w_tf * tf / 10.0)
    }

    /// One dynamics-constrained steering step from a tree node toward a
    /// sample. The new position comes from the kinematic correction, never
    /// a straight-line teleport; the stored angles are the chord arrivals.
    pub fn steer(&self, from: &TreeNode, target: &Vec3) -> Option<TreeNode> {
        let d = target - from.position;
        let dist = d.norm();
        if dist < 1e-9 {
            return None;
        }
        let reach = dist.min(self.step_len());
        let aim = from.position + d * (reach / dist);
        let state = AircraftState {
            position: from.position,
            speed: self.speed,
            climb_angle: from.climb,
            track_heading: from.heading,
            roll: 0.0,
        };
        let correction = kinematic_correct(&self.limits, &state, &aim, reach / self.speed).ok()?;
        let (heading, climb) = self.arrival_state(from, &correction.position);
        Some(TreeNode {
            position: correction.position,
            heading,
            climb,
            parent: None,
            cost_to_come: f64::INFINITY,
        })
    }

    fn near_radius(&self) -> f64 {
        let n = self.nodes.len().max(2) as f64;
        let r = self.config.gamma_rrt * (n.ln() / n).powf(1.0 / 3.0);
        r.max(1.5 * self.step_len())
    }

    /// Indices of the k nodes cheapest to reach `p` from, best first. The
    /// metric is a Dubins-style lower bound: straight distance plus the
    /// turning arc needed to face the target. Plain Euclidean nearest keeps
    /// extending nodes that orbit a target at the minimum turn radius
    /// without ever reaching it.
    fn k_nearest(&self, p: &Vec3, k: usize) -> Vec<usize> {
        let r_min = self.limits.min_turn_radius(self.speed);
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        for (i, n) in self.nodes.iter().enumerate() {
            let rel = p - n.position;
            let d = rel.norm();
            let misalign = if rel.x.hypot(rel.y) > 1e-9 {
                wrap_angle(rel.y.atan2(rel.x) - n.heading).abs()
            } else {
                0.0
            };
            let score = d + r_min * misalign;
            if best.len() < k || score < best.last().unwrap().0 {
                let pos = best.partition_point(|(bd, _)| *bd < score);
                best.insert(pos, (score, i));
                if best.len() > k {
                    best.pop();
                }
            }
        }
        best.into_iter().map(|(_, i)| i).collect()
    }

    /// Chains steering steps straight at the goal from the root, appending
    /// collision-free prefix nodes to the tree. Returns the index of a node
    /// inside the goal region when the march gets there.
    fn greedy_probe(&mut self, goal: &Vec3) -> Result<Option<usize>> {
        let budget = 3 * ((goal - self.nodes[0].position).norm() / self.step_len()).ceil() as usize;
        let mut current = 0usize;
        for _ in 0..budget.max(8) {
            let Some(mut node) = self.steer(&self.nodes[current], goal) else { break };
            if !self.collision_free(&self.nodes[current].position, &node.position) {
                break;
            }
            node.parent = Some(current);
            node.cost_to_come = self.nodes[current].cost_to_come
                + self.edge_cost(&self.nodes[current].position, &node.position)?;
            let idx = self.nodes.len();
            self.nodes.push(node);
            self.children.push(Vec::new());
            self.children[current].push(idx);
            current = idx;
            if (self.nodes[idx].position - goal).norm() <= self.config.goal_radius {
                return Ok(Some(idx));
            }
        }
        Ok(None)
    }

    fn propagate_cost_delta(&mut self, root: usize, delta: f64) {
        let mut stack = vec![root];
        while let Some(i) = stack.pop() {
            self.nodes[i].cost_to_come += delta;
            stack.extend(self.children[i].iter().copied());
        }
    }

    fn extract_path(&self, mut idx: usize) -> Vec<Vec3> {
        let mut rev = vec![self.nodes[idx].position];
        while let Some(p) = self.nodes[idx].parent {
            idx = p;
            rev.push(self.nodes[idx].position);
        }
        rev.reverse();
        rev
    }

    /// Grows the tree from `start_state` toward `goal`.
    pub fn plan(
        &mut self,
        start_state: &AircraftState,
        goal: &Vec3,
        mode: PlanMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<PlanResult> {
        let start = start_state.position;
        for (label, p) in [("start", &start), ("goal", goal)] {
            let agl = self
                .terrain
                .agl(p)
                .map_err(|_| Error::PlannerPrecondition(format!("{label} outside the map")))?;
            if agl <= 0.0 {
                return Err(Error::PlannerPrecondition(format!("{label} below ground")));
            }
            for threat in self.threats {
                if threat.value(self.snapshot_time, p) <= 1.0 {
                    return Err(Error::PlannerPrecondition(format!("{label} inside a threat")));
                }
            }
        }

        self.nodes = vec![TreeNode {
            position: start,
            heading: start_state.track_heading,
            climb: start_state.climb_angle,
            parent: None,
            cost_to_come: 0.0,
        }];
        self.children = vec![Vec::new()];
        self.c_best_history.clear();
        self.sample_log.clear();

        let fail_estimate = ((goal - start).norm() / (self.speed * self.dt)).ceil() as u64;
        let iter_max = match mode {
            PlanMode::Reachability => self.config.keypoint_iter_max,
            PlanMode::Optimize => self.config.iter_max,
        };
        let deadline = std::time::Instant::now()
            + std::time::Duration::from_secs_f64(self.config.time_budget_s);

        let mut solutions: Vec<usize> = Vec::new();
        let mut c_best = f64::INFINITY;

        // Deterministic fast path: march the steering law straight at the
        // goal. On open geometry this answers reachability in microseconds
        // and otherwise seeds the tree (and c_best) with a valid chain.
        if let Some(goal_idx) = self.greedy_probe(goal)? {
            solutions.push(goal_idx);
            c_best = self.nodes[goal_idx].cost_to_come;
            if mode == PlanMode::Reachability {
                return Ok(PlanResult {
                    reachable: true,
                    path: Some(self.extract_path(goal_idx)),
                    fail_estimate: 0,
                });
            }
        }

        for _iter in 0..iter_max {
            if std::time::Instant::now() > deadline {
                log::warn!("plan: wall-clock budget hit after {} nodes", self.nodes.len());
                break;
            }
            // Cost lower-bounds w_len times path length, so any state on a
            // better path lies inside the spheroid of axis c_best / w_len;
            // goal-region solutions can undercut the focal distance, hence
            // the floor at the degenerate segment.
            let axis = if c_best.is_finite() {
                (c_best / self.config.w_len).max((goal - start).norm())
            } else {
                f64::INFINITY
            };
            let p_rand = if rng.random_range(0.0..1.0) < self.config.goal_bias {
                *goal
            } else {
                self.sample_in_ellipse(&start, goal, axis, rng)
            };
            self.sample_log.push((p_rand, axis));

            // Steering is heading-constrained, so the single nearest node
            // can be locked facing away from the sample and would spawn the
            // same futile node forever. Try the K nearest and keep the
            // steer that gets closest. The separation floor only blocks
            // exact re-stacking: branches diverge a few meters per step at
            // these turn rates and must not be culled.
            let candidates = self.k_nearest(&p_rand, 6);
            let min_sep = 1.0;
            let mut best: Option<(usize, TreeNode, f64)> = None;
            for &cand in &candidates {
                let Some(node) = self.steer(&self.nodes[cand], &p_rand) else { continue };
                if self
                    .nodes
                    .iter()
                    .any(|n| (n.position - node.position).norm() < min_sep)
                {
                    continue;
                }
                let gap = (node.position - p_rand).norm();
                if best.as_ref().is_none_or(|(_, _, g)| gap < *g) {
                    best = Some((cand, node, gap));
                }
            }
            let Some((nearest, mut new_node, _)) = best else {
                self.c_best_history.push(c_best);
                continue;
            };
            if !self.collision_free(&self.nodes[nearest].position, &new_node.position) {
                self.c_best_history.push(c_best);
                continue;
            }

            // ChooseParent: cheapest feasible collision-free connection
            // among the near set, the steering origin as fallback.
            let r_near = self.near_radius();
            let near: Vec<usize> = self
                .nodes
                .iter()
                .enumerate()
                .filter(|(_, n)| (n.position - new_node.position).norm() <= r_near)
                .map(|(i, _)| i)
                .collect();

            let mut best_parent = nearest;
            let mut best_cost = self.nodes[nearest].cost_to_come
                + self.edge_cost(&self.nodes[nearest].position, &new_node.position)?;
            for &cand in &near {
                if cand == nearest {
                    continue;
                }
                if !self.edge_feasible(&self.nodes[cand], &new_node.position) {
                    continue;
                }
                let cost = self.nodes[cand].cost_to_come
                    + self.edge_cost(&self.nodes[cand].position, &new_node.position)?;
                if cost < best_cost
                    && self.collision_free(&self.nodes[cand].position, &new_node.position)
                {
                    best_parent = cand;
                    best_cost = cost;
                }
            }

            let (heading, climb) =
                self.arrival_state(&self.nodes[best_parent], &new_node.position);
            new_node.heading = heading;
            new_node.climb = climb;
            new_node.parent = Some(best_parent);
            new_node.cost_to_come = best_cost;
            let new_idx = self.nodes.len();
            self.nodes.push(new_node);
            self.children.push(Vec::new());
            self.children[best_parent].push(new_idx);

            // Rewire: adopt near nodes whose cost improves through the new
            // node. Their stored arrival angles are kept; the new incoming
            // edge is validated against the same feasibility predicate.
            for &cand in &near {
                if cand == best_parent || cand == 0 {
                    continue;
                }
                if !self.edge_feasible(&self.nodes[new_idx], &self.nodes[cand].position) {
                    continue;
                }
                let cost = self.nodes[new_idx].cost_to_come
                    + self.edge_cost(&self.nodes[new_idx].position, &self.nodes[cand].position)?;
                if cost + 1e-9 < self.nodes[cand].cost_to_come
                    && self.collision_free(
                        &self.nodes[new_idx].position,
                        &self.nodes[cand].position,
                    )
                {
                    let old_parent = self.nodes[cand].parent.unwrap();
                    self.children[old_parent].retain(|&c| c != cand);
                    self.children[new_idx].push(cand);
                    let delta = cost - self.nodes[cand].cost_to_come;
                    self.nodes[cand].parent = Some(new_idx);
                    self.propagate_cost_delta(cand, delta);
                }
            }

            if (self.nodes[new_idx].position - goal).norm() <= self.config.goal_radius {
                solutions.push(new_idx);
            }
            c_best = solutions
                .iter()
                .map(|&i| self.nodes[i].cost_to_come)
                .fold(f64::INFINITY, f64::min);
            self.c_best_history.push(c_best);

            if mode == PlanMode::Reachability && c_best.is_finite() {
                break;
            }
        }

        if let Some(best) = solutions
            .iter()
            .copied()
            .min_by(|&a, &b| self.nodes[a].cost_to_come.total_cmp(&self.nodes[b].cost_to_come))
        {
            Ok(PlanResult {
                reachable: true,
                path: Some(self.extract_path(best)),
                fail_estimate: 0,
            })
        } else {
            Ok(PlanResult { reachable: false, path: None, fail_estimate })
        }
    }

    /// Exhaustive tree-invariant audit: every node's cost equals its parent
    /// cost plus the edge cost, every edge is collision-free and feasible.
    /// Returns the worst cost deviation.
    pub fn validate_tree(&self) -> Result<f64> {
        let mut worst = 0.0f64;
        for (i, node) in self.nodes.iter().enumerate() {
            let Some(p) = node.parent else {
                if node.cost_to_come != 0.0 {
                    return Err(Error::PlannerPrecondition("root cost not zero".into()));
                }
                continue;
            };
            let expected = self.nodes[p].cost_to_come
                + self.edge_cost(&self.nodes[p].position, &node.position)?;
            worst = worst.max((expected - node.cost_to_come).abs());
            if !self.collision_free(&self.nodes[p].position, &node.position) {
                return Err(Error::PlannerPrecondition(format!("edge into node {i} collides")));
            }
            if !self.edge_feasible(&self.nodes[p], &node.position) {
                return Err(Error::PlannerPrecondition(format!("edge into node {i} infeasible")));
            }
        }
        Ok(worst)
    }
}

/// Remaining-distance thresholds at which the reachability oracle runs,
/// denser in the far half of the route; each fires at most once.
#[derive(Debug, Clone)]
pub struct KeyPointSchedule {
    thresholds: Vec<f64>,
    consumed: Vec<bool>,
}

impl KeyPointSchedule {
    pub fn new(total_distance: f64) -> Self {
        let mut fractions: Vec<f64> = Vec::new();
        let mut f = 0.95;
        while f > 0.525 {
            fractions.push(f);
            f -= 0.05;
        }
        let mut f = 0.5;
        while f > 0.05 {
            fractions.push(f);
            f -= 0.1;
        }
        Self {
            thresholds: fractions.iter().map(|f| f * total_distance).collect(),
            consumed: vec![false; fractions.len()],
        }
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// Consumes every threshold the agent has passed and reports whether a
    /// check is due.
    pub fn crossed(&mut self, remaining_distance: f64) -> bool {
        let mut hit = false;
        for (t, used) in self.thresholds.iter().zip(self.consumed.iter_mut()) {
            if !*used && remaining_distance < *t {
                *used = true;
                hit = true;
            }
        }
        hit
    }
}

/// Runs the reachability oracle if the agent just crossed an unconsumed
/// key threshold. `None` means no check was due; `Some(result)` with
/// `reachable` lets the episode continue, otherwise the caller terminates
/// with reward `-fail_estimate`.
#[allow(clippy::too_many_arguments)]
pub fn key_point_check(
    schedule: &mut KeyPointSchedule,
    state: &AircraftState,
    goal: &Vec3,
    terrain: &TerrainGrid,
    threats: &[Threat],
    t: f64,
    limits: KinematicLimits,
    config: RrtConfig,
    speed: f64,
    dt: f64,
    h_down: f64,
    h_up: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Option<PlanResult>> {
    let remaining = (goal - state.position).norm();
    if !schedule.crossed(remaining) {
        return Ok(None);
    }
    // A false "unreachable" kills a healthy training episode, so a failed
    // query gets one independent retry before the verdict stands.
    for attempt in 0..2 {
        let mut planner =
            Planner::new(terrain, threats, t, limits, config, speed, dt, h_down, h_up);
        match planner.plan(state, goal, PlanMode::Reachability, rng) {
            Ok(result) if result.reachable || attempt == 1 => return Ok(Some(result)),
            Ok(_) => {}
            // The aircraft is in an illegal pose for the planner; report
            // unreachable with the standard estimate.
            Err(Error::PlannerPrecondition(_)) => {
                return Ok(Some(PlanResult {
                    reachable: false,
                    path: None,
                    fail_estimate: (remaining / (speed * dt)).ceil() as u64,
                }))
            }
            Err(e) => return Err(e),
        }
    }
    unreachable!("both reachability attempts must return")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terrain::generate_terrain;
    use crate::threats::MotionPattern;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn flat_map() -> TerrainGrid {
        TerrainGrid::new(0.0, 0.0, 500.0, 24, 24, vec![0.0; 24 * 24]).unwrap()
    }

    fn planner<'a>(
        terrain: &'a TerrainGrid,
        threats: &'a [Threat],
        config: RrtConfig,
    ) -> Planner<'a> {
        Planner::new(
            terrain,
            threats,
            0.0,
            KinematicLimits::default(),
            config,
            200.0,
            1.0,
            450.0,
            550.0,
        )
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn degenerate_spheroid_samples_on_segment() {
        let map = flat_map();
        let p = planner(&map, &[], RrtConfig::default());
        let start = Vec3::new(1000.0, 1000.0, 500.0);
        let goal = Vec3::new(9000.0, 5000.0, 500.0);
        let c_min = (goal - start).norm();
        let mut r = rng(1);
        for _ in 0..200 {
            let s = p.sample_in_ellipse(&start, &goal, c_min, &mut r);
            // Distance from the line through start and goal.
            let d = (s - start).cross(&(s - goal)).norm() / c_min;
            assert!(d < 1e-6, "off-segment by {d}");
        }
    }

    #[test]
    fn informed_samples_satisfy_focal_inequality() {
        let map = flat_map();
        let p = planner(&map, &[], RrtConfig::default());
        let start = Vec3::new(1000.0, 1000.0, 500.0);
        let goal = Vec3::new(9000.0, 6000.0, 500.0);
        let axis = (goal - start).norm() * 1.3;
        let mut r = rng(2);
        for _ in 0..10_000 {
            let s = p.sample_in_ellipse(&start, &goal, axis, &mut r);
            let sum = (s - start).norm() + (s - goal).norm();
            assert!(sum <= axis + 1e-9, "focal sum {sum} > {axis}");
        }
    }

    #[test]
    fn spheroid_extents_match_the_axes() {
        let map = flat_map();
        // Wide band so altitude clamping does not distort the extents.
        let mut p = planner(&map, &[], RrtConfig::default());
        p.h_down = 1.0;
        p.h_up = 20_000.0;
        let start = Vec3::new(2000.0, 6000.0, 3000.0);
        let goal = Vec3::new(10_000.0, 6000.0, 3000.0);
        let c_min: f64 = (goal - start).norm();
        let axis = 1.5 * c_min;
        let r_t = (axis * axis - c_min * c_min).sqrt() / 2.0;
        let mut r = rng(3);
        let (mut max_dx, mut max_dy, mut max_dz) = (0.0f64, 0.0f64, 0.0f64);
        let center = (start + goal) / 2.0;
        for _ in 0..20_000 {
            let s = p.sample_in_ellipse(&start, &goal, axis, &mut r);
            max_dx = max_dx.max((s.x - center.x).abs());
            max_dy = max_dy.max((s.y - center.y).abs());
            max_dz = max_dz.max((s.z - center.z).abs());
        }
        assert_relative_eq!(max_dx, axis / 2.0, max_relative = 0.03);
        assert_relative_eq!(max_dy, r_t, max_relative = 0.05);
        assert_relative_eq!(max_dz, r_t, max_relative = 0.05);
    }

    #[test]
    fn steer_straight_ahead_lands_on_the_ray() {
        let map = flat_map();
        let p = planner(&map, &[], RrtConfig::default());
        let from = TreeNode {
            position: Vec3::new(2000.0, 2000.0, 500.0),
            heading: 0.0,
            climb: 0.0,
            parent: None,
            cost_to_come: 0.0,
        };
        let target = Vec3::new(5000.0, 2000.0, 500.0);
        let node = p.steer(&from, &target).unwrap();
        assert_relative_eq!(node.position.x, 2200.0, epsilon = 1e-9);
        assert_relative_eq!(node.position.y, 2000.0, epsilon = 1e-9);
        assert_relative_eq!((node.position - from.position).norm(), 200.0, epsilon = 1e-9);
    }

    #[test]
    fn steer_behind_turns_at_minimum_radius() {
        let map = flat_map();
        let p = planner(&map, &[], RrtConfig::default());
        let from = TreeNode {
            position: Vec3::new(6000.0, 6000.0, 500.0),
            heading: 0.0,
            climb: 0.0,
            parent: None,
            cost_to_come: 0.0,
        };
        let target = Vec3::new(5000.0, 6100.0, 500.0);
        let node = p.steer(&from, &target).unwrap();
        let chord = (node.position - from.position).xy().norm();
        let dphi = wrap_angle(node.heading - from.heading).abs();
        let radius = chord / (2.0 * (dphi / 2.0).sin());
        assert_relative_eq!(
            radius,
            KinematicLimits::default().min_turn_radius(200.0),
            max_relative = 1e-6
        );
    }

    #[test]
    fn repeated_steering_approaches_a_fixed_target() {
        let map = flat_map();
        let p = planner(&map, &[], RrtConfig::default());
        let target = Vec3::new(9000.0, 9000.0, 520.0);
        let mut node = TreeNode {
            position: Vec3::new(2000.0, 2000.0, 500.0),
            heading: std::f64::consts::PI, // facing away
            climb: 0.0,
            parent: None,
            cost_to_come: 0.0,
        };
        let mut dist = (target - node.position).norm();
        let mut aligned = false;
        for _ in 0..200 {
            node = p.steer(&node, &target).unwrap();
            let d = (target - node.position).norm();
            let to_target = target - node.position;
            let off_heading = wrap_angle(to_target.y.atan2(to_target.x) - node.heading);
            if aligned {
                assert!(d < dist, "distance must shrink once aligned ({d} vs {dist})");
            }
            if off_heading.abs() < 0.05 {
                aligned = true;
            }
            dist = d;
            if d < 250.0 {
                return;
            }
        }
        panic!("never converged: final distance {dist}");
    }

    #[test]
    fn edge_cost_components() {
        let map = flat_map();
        let mut cfg = RrtConfig { w_len: 1.0, w_tf: 0.0, ..Default::default() };
        let a = Vec3::new(1000.0, 1000.0, 500.0);
        let b = Vec3::new(1400.0, 1300.0, 500.0);
        let p = planner(&map, &[], cfg);
        assert_relative_eq!(p.edge_cost(&a, &b).unwrap(), 500.0, epsilon = 1e-9);

        cfg.w_tf = 1.0;
        let p = planner(&map, &[], cfg);
        // Flat terrain at the band center: zero TF penalty.
        assert_relative_eq!(p.edge_cost(&a, &b).unwrap(), 500.0, epsilon = 1e-9);
        // Off-center altitude: |agl - 500| = 100 along the whole edge.
        let a2 = Vec3::new(1000.0, 1000.0, 600.0);
        let b2 = Vec3::new(1400.0, 1300.0, 600.0);
        assert_relative_eq!(p.edge_cost(&a2, &b2).unwrap(), 600.0, epsilon = 1e-9);
        cfg.w_tf = 2.0;
        let p = planner(&map, &[], cfg);
        assert_relative_eq!(p.edge_cost(&a2, &b2).unwrap(), 700.0, epsilon = 1e-9);
    }

    fn start_state(pos: Vec3, heading: f64) -> AircraftState {
        AircraftState::level(pos, 200.0, heading)
    }

    #[test]
    fn open_map_path_approaches_straight_line() {
        let map = flat_map();
        let cfg = RrtConfig { iter_max: 2000, ..Default::default() };
        let mut p = planner(&map, &[], cfg);
        let start = Vec3::new(1500.0, 6000.0, 500.0);
        let goal = Vec3::new(10_000.0, 6000.0, 500.0);
        let mut r = rng(7);
        let result =
            p.plan(&start_state(start, 0.0), &goal, PlanMode::Optimize, &mut r).unwrap();
        assert!(result.reachable);
        let path = result.path.unwrap();
        let mut len = 0.0;
        for w in path.windows(2) {
            len += (w[1] - w[0]).norm();
        }
        // The path ends inside the goal region; compare against the
        // straight-line distance to the region boundary.
        let lower = (goal - start).norm() - p.config.goal_radius;
        assert!(len <= lower * 1.05, "path length {len} more than 5% over {lower}");
        assert!(p.validate_tree().unwrap() < 1e-6);
    }

    fn boxed_goal_threats(center: Vec3, half: f64, thick: f64) -> Vec<Threat> {
        let reach = half + 3.0 * thick;
        let mut out = Vec::new();
        for (axis, sign) in [(0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0), (2, 1.0), (2, -1.0)] {
            let mut c = center;
            let mut semi = Vec3::new(reach, reach, reach);
            c[axis] += sign * (half + thick);
            semi[axis] = thick;
            out.push(Threat {
                center0: c,
                semi_axes: semi,
                exponents: [3, 3, 3],
                motion: MotionPattern::fixed(),
                r_obs: 100.0,
                r_threaten: 200.0,
                lambda: 5.0,
            });
        }
        out
    }

    #[test]
    fn enclosed_goal_is_unreachable() {
        let map = flat_map();
        let goal = Vec3::new(9000.0, 6000.0, 900.0);
        let threats = boxed_goal_threats(goal, 600.0, 300.0);
        // The goal sits strictly inside the box but outside every wall body.
        for t in &threats {
            assert!(t.value(0.0, &goal) > 1.0);
        }
        let cfg = RrtConfig { iter_max: 1200, goal_radius: 400.0, ..Default::default() };
        let mut p = planner(&map, &threats, cfg);
        let start = Vec3::new(1500.0, 6000.0, 500.0);
        let mut r = rng(11);
        let result =
            p.plan(&start_state(start, 0.0), &goal, PlanMode::Optimize, &mut r).unwrap();
        assert!(!result.reachable);
        assert_eq!(result.fail_estimate, ((goal - start).norm() / 200.0).ceil() as u64);
    }

    #[test]
    fn planning_is_deterministic_under_seed() {
        let map = generate_terrain(5, 24, 24, 500.0, 300.0).unwrap();
        let run = || {
            let cfg = RrtConfig { iter_max: 600, ..Default::default() };
            let mut p = planner(&map, &[], cfg);
            let start = Vec3::new(1500.0, 6000.0, 800.0);
            let goal = Vec3::new(10_000.0, 6000.0, 800.0);
            let mut r = rng(13);
            let result =
                p.plan(&start_state(start, 0.0), &goal, PlanMode::Optimize, &mut r).unwrap();
            (result.reachable, result.path, p.nodes().iter().map(|n| n.position).collect::<Vec<_>>())
        };
        let a = run();
        let b = run();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
    }

    #[test]
    fn c_best_is_non_increasing_and_informed_property_holds() {
        let map = flat_map();
        let cfg = RrtConfig { iter_max: 1500, ..Default::default() };
        let mut p = planner(&map, &[], cfg);
        let start = Vec3::new(1500.0, 4000.0, 500.0);
        let goal = Vec3::new(9500.0, 8000.0, 500.0);
        let mut r = rng(17);
        p.plan(&start_state(start, 0.5), &goal, PlanMode::Optimize, &mut r).unwrap();
        let mut prev = f64::INFINITY;
        for &c in p.c_best_history() {
            assert!(c <= prev + 1e-9, "c_best increased: {c} after {prev}");
            prev = c;
        }
        for (s, axis) in p.sample_log() {
            if axis.is_finite() {
                let sum = (s - start).norm() + (s - goal).norm();
                assert!(sum <= axis + 1e-6);
            }
        }
        assert!(p.validate_tree().unwrap() < 1e-6);
    }

    #[test]
    fn keypoint_schedule_fires_once_per_threshold() {
        let mut schedule = KeyPointSchedule::new(10_000.0);
        assert_eq!(schedule.thresholds().len(), 14);
        assert!(!schedule.crossed(9_900.0), "above every threshold");
        assert!(schedule.crossed(9_400.0), "crossed the 95% threshold");
        assert!(!schedule.crossed(9_300.0), "no new threshold between 95% and 90%");
        assert!(schedule.crossed(100.0), "sweeps all remaining thresholds");
        assert!(!schedule.crossed(50.0));
    }

    #[test]
    fn keypoint_check_reports_failed_steps() {
        let map = flat_map();
        let goal = Vec3::new(9000.0, 6000.0, 900.0);
        let threats = boxed_goal_threats(goal, 600.0, 300.0);
        let state = start_state(Vec3::new(2000.0, 6000.0, 500.0), 0.0);
        let remaining = (goal - state.position).norm();
        let mut schedule = KeyPointSchedule::new(remaining / 0.6); // mid-route
        let cfg =
            RrtConfig { keypoint_iter_max: 800, goal_radius: 400.0, ..Default::default() };
        let mut r = rng(19);
        let out = key_point_check(
            &mut schedule,
            &state,
            &goal,
            &map,
            &threats,
            0.0,
            KinematicLimits::default(),
            cfg,
            200.0,
            1.0,
            450.0,
            550.0,
            &mut r,
        )
        .unwrap()
        .expect("a threshold must fire mid-route");
        assert!(!out.reachable);
        assert_eq!(out.fail_estimate, (remaining / 200.0).ceil() as u64);
    }
}
