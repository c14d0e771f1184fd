//! Seeded synthetic road networks with constant-speed agents and
//! ground-truth futures.
//!
//! Networks are built from approaches (arms) around a junction centered at
//! the origin. Each approach has incoming and outgoing lane chains split
//! into equal segments; junction connectors are cubic Bezier curves. Agents
//! drive a route (incoming chain → connector → outgoing chain) at constant
//! speed, optionally changing lanes diagonally across one segment.

use std::f64::consts::{FRAC_PI_2, PI};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{
    dist, AgentKind, AgentState, AgentTrack, FuturePoint, LaneKind, LanePolyline, Scene,
    SignalState, DT, FUTURE_STEPS, HISTORY_FRAMES, HISTORY_STEPS,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkKind {
    Straight,
    TJunction,
    FourWay,
}

impl NetworkKind {
    pub const ALL: [NetworkKind; 3] = [NetworkKind::Straight, NetworkKind::TJunction, NetworkKind::FourWay];

    /// Outward directions of the arms.
    fn arm_angles(self) -> &'static [f64] {
        match self {
            NetworkKind::Straight => &[0.0, PI],
            NetworkKind::TJunction => &[0.0, FRAC_PI_2, PI],
            NetworkKind::FourWay => &[0.0, FRAC_PI_2, PI, -FRAC_PI_2],
        }
    }
}

impl FromStr for NetworkKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "straight" => Ok(NetworkKind::Straight),
            "t-junction" | "t_junction" | "t" => Ok(NetworkKind::TJunction),
            "four-way" | "four_way" | "4way" => Ok(NetworkKind::FourWay),
            _ => Err(Error::Config(format!(
                "unknown network kind {s:?} (straight, t-junction, four-way)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub network: NetworkKind,
    pub lanes_per_approach: usize,
    /// Inclusive agent count range.
    pub agents: [usize; 2],
    /// Inclusive vehicle speed range in m/s.
    pub speed: [f64; 2],
    pub lane_change_prob: f64,
    /// Share of pedestrians and of cyclists each.
    pub vulnerable_share: f64,
    pub future_steps: usize,
    pub approach_length: f64,
    pub segment_length: f64,
    pub lane_width: f64,
    /// Distance from the center to where arms start; unused for straight roads.
    pub junction_radius: f64,
    /// Minimum center distance between any two agents at any frame.
    pub min_gap: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            network: NetworkKind::FourWay,
            lanes_per_approach: 2,
            agents: [4, 8],
            speed: [4.0, 12.0],
            lane_change_prob: 0.2,
            vulnerable_share: 0.1,
            future_steps: FUTURE_STEPS,
            approach_length: 100.0,
            segment_length: 25.0,
            lane_width: 3.5,
            junction_radius: 15.0,
            min_gap: 3.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.lanes_per_approach == 0 {
            return bad("at least one lane per approach".into());
        }
        if self.agents[0] == 0 || self.agents[0] > self.agents[1] {
            return bad(format!("agent range {:?} must be 1 ≤ min ≤ max", self.agents));
        }
        if !(self.speed[0] > 0.0 && self.speed[0] <= self.speed[1] && self.speed[1].is_finite()) {
            return bad(format!("speed range {:?} must be 0 < min ≤ max", self.speed));
        }
        if !(0.0..=1.0).contains(&self.lane_change_prob) || !(0.0..=0.5).contains(&self.vulnerable_share) {
            return bad("probabilities out of range".into());
        }
        if self.future_steps == 0 {
            return bad("future_steps must be positive".into());
        }
        if !(self.lane_width > 0.0 && self.segment_length > 0.0 && self.junction_radius >= 0.0 && self.min_gap >= 0.0) {
            return bad("geometry sizes must be positive".into());
        }
        if self.approach_length < self.segment_length {
            return bad("approach shorter than one segment".into());
        }
        if self.speed[1] * DT > self.segment_length {
            return bad(format!(
                "speed {} m/s covers more than one {} m segment per step",
                self.speed[1], self.segment_length
            ));
        }
        let needed = self.speed[1] * DT * (HISTORY_STEPS + self.future_steps) as f64;
        if needed > 2.0 * self.approach_length {
            return bad(format!(
                "routes of {} m cannot hold {needed:.1} m of motion",
                2.0 * self.approach_length
            ));
        }
        if self.network != NetworkKind::Straight
            && self.junction_radius < self.lane_width * self.lanes_per_approach as f64
        {
            return bad("junction radius smaller than the carriageway half-width".into());
        }
        Ok(())
    }
}

struct Arm {
    u: [f64; 2],
    n: [f64; 2],
    /// `incoming[lane][segment]`, segments ordered toward the center.
    incoming: Vec<Vec<usize>>,
    /// `outgoing[lane][segment]`, segments ordered away from the center.
    outgoing: Vec<Vec<usize>>,
}

struct Connector {
    from_arm: usize,
    from_lane: usize,
    to_arm: usize,
    to_lane: usize,
    lane: Option<usize>,
}

struct Network {
    lanes: Vec<LanePolyline>,
    arms: Vec<Arm>,
    connectors: Vec<Connector>,
    radius: f64,
    /// Boundary distances along an arm, from 0 to the approach length.
    bounds: Vec<f64>,
}

fn add(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] + b[0], a[1] + b[1]]
}

fn scale(a: [f64; 2], s: f64) -> [f64; 2] {
    [a[0] * s, a[1] * s]
}

fn bezier(p: [[f64; 2]; 4], t: f64) -> [f64; 2] {
    let s = 1.0 - t;
    let w = [s * s * s, 3.0 * s * s * t, 3.0 * s * t * t, t * t * t];
    let mut out = [0.0; 2];
    for (pi, wi) in p.iter().zip(w) {
        out = add(out, scale(*pi, wi));
    }
    out
}

const CONNECTOR_POINTS: usize = 16;

impl Network {
    fn build(cfg: &SynthConfig) -> Network {
        let nl = cfg.lanes_per_approach;
        let w = cfg.lane_width;
        let radius = if cfg.network == NetworkKind::Straight { 0.0 } else { cfg.junction_radius };
        let nseg = (cfg.approach_length / cfg.segment_length).ceil() as usize;
        let bounds: Vec<f64> = (0..=nseg).map(|k| cfg.approach_length * k as f64 / nseg as f64).collect();
        let mut lanes: Vec<LanePolyline> = Vec::new();
        let new_lane = |lanes: &mut Vec<LanePolyline>, pts: Vec<[f64; 2]>, signal| {
            let id = lanes.len() as i64;
            lanes.push(LanePolyline {
                id,
                kind: LaneKind::SurfaceStreet,
                signal,
                waypoints: pts,
                successors: vec![],
                predecessors: vec![],
                left_neighbors: vec![],
                right_neighbors: vec![],
            });
            lanes.len() - 1
        };
        let mut arms = Vec::new();
        for &phi in cfg.network.arm_angles() {
            let (s, c) = phi.sin_cos();
            let (u, n) = ([c, s], [-s, c]);
            let at = |d: f64, off: f64| add(scale(u, d), scale(n, off));
            let mut incoming = Vec::new();
            let mut outgoing = Vec::new();
            for i in 0..nl {
                let off = w * (i as f64 + 0.5);
                let chain_in = (0..nseg)
                    .map(|k| {
                        let (d0, d1) = (radius + bounds[nseg - k], radius + bounds[nseg - k - 1]);
                        new_lane(&mut lanes, vec![at(d0, off), at(d1, off)], SignalState::Unknown)
                    })
                    .collect::<Vec<_>>();
                let chain_out = (0..nseg)
                    .map(|k| {
                        let (d0, d1) = (radius + bounds[k], radius + bounds[k + 1]);
                        new_lane(&mut lanes, vec![at(d0, -off), at(d1, -off)], SignalState::Unknown)
                    })
                    .collect::<Vec<_>>();
                incoming.push(chain_in);
                outgoing.push(chain_out);
            }
            arms.push(Arm { u, n, incoming, outgoing });
        }
        let mut net = Network {
            lanes,
            arms,
            connectors: Vec::new(),
            radius,
            bounds,
        };
        net.link_chains();
        net.add_connectors(cfg);
        net
    }

    fn link(&mut self, from: usize, to: usize) {
        let (fid, tid) = (self.lanes[from].id, self.lanes[to].id);
        self.lanes[from].successors.push(tid);
        self.lanes[to].predecessors.push(fid);
    }

    fn link_chains(&mut self) {
        let mut pairs = Vec::new();
        let mut sides = Vec::new();
        for arm in &self.arms {
            for chains in [&arm.incoming, &arm.outgoing] {
                for (i, chain) in chains.iter().enumerate() {
                    pairs.extend(chain.windows(2).map(|c| (c[0], c[1])));
                    if i > 0 {
                        // lane i − 1 lies to the left of lane i in both directions
                        for (&right, &left) in chain.iter().zip(&chains[i - 1]) {
                            sides.push((left, right));
                        }
                    }
                }
            }
        }
        for (a, b) in pairs {
            self.link(a, b);
        }
        for (left, right) in sides {
            let (lid, rid) = (self.lanes[left].id, self.lanes[right].id);
            self.lanes[right].left_neighbors.push(lid);
            self.lanes[left].right_neighbors.push(rid);
        }
    }

    fn add_connectors(&mut self, cfg: &SynthConfig) {
        let nl = cfg.lanes_per_approach;
        for a in 0..self.arms.len() {
            for b in 0..self.arms.len() {
                if a == b {
                    continue;
                }
                let (ua, ub) = (self.arms[a].u, self.arms[b].u);
                let opposite = (ua[0] + ub[0]).abs() < 1e-9 && (ua[1] + ub[1]).abs() < 1e-9;
                // incoming direction −ua; positive cross product = left turn
                let cross = -ua[0] * ub[1] + ua[1] * ub[0];
                let lanes: Vec<(usize, usize)> = if opposite {
                    (0..nl).map(|i| (i, i)).collect()
                } else if cross > 0.0 {
                    vec![(0, 0)]
                } else {
                    vec![(nl - 1, nl - 1)]
                };
                for (i, j) in lanes {
                    let last_in = *self.arms[a].incoming[i].last().unwrap();
                    let first_out = self.arms[b].outgoing[j][0];
                    if self.radius == 0.0 {
                        self.link(last_in, first_out);
                        self.connectors.push(Connector { from_arm: a, from_lane: i, to_arm: b, to_lane: j, lane: None });
                        continue;
                    }
                    let p0 = *self.lanes[last_in].waypoints.last().unwrap();
                    let p3 = self.lanes[first_out].waypoints[0];
                    let c = 0.5 * dist(p0, p3);
                    let ctrl = [p0, add(p0, scale(ua, -c)), add(p3, scale(ub, -c)), p3];
                    let pts = (0..CONNECTOR_POINTS)
                        .map(|k| bezier(ctrl, k as f64 / (CONNECTOR_POINTS - 1) as f64))
                        .collect();
                    let id = self.lanes.len() as i64;
                    self.lanes.push(LanePolyline {
                        id,
                        kind: LaneKind::SurfaceStreet,
                        signal: SignalState::Go,
                        waypoints: pts,
                        successors: vec![],
                        predecessors: vec![],
                        left_neighbors: vec![],
                        right_neighbors: vec![],
                    });
                    let conn = self.lanes.len() - 1;
                    self.link(last_in, conn);
                    self.link(conn, first_out);
                    self.connectors.push(Connector { from_arm: a, from_lane: i, to_arm: b, to_lane: j, lane: Some(conn) });
                }
            }
        }
    }

    /// Route polyline: incoming arm `a` starting in lane `i0`, optionally
    /// moving to `i1` across segment `change_seg`, then connector `conn`.
    fn route(&self, cfg: &SynthConfig, a: usize, i0: usize, i1: usize, change_seg: usize, conn: &Connector) -> Vec<[f64; 2]> {
        let w = cfg.lane_width;
        let arm = &self.arms[a];
        let nseg = self.bounds.len() - 1;
        let mut pts = Vec::new();
        for k in 0..=nseg {
            let lane = if k <= change_seg { i0 } else { i1 };
            let d = self.radius + self.bounds[nseg - k];
            pts.push(add(scale(arm.u, d), scale(arm.n, w * (lane as f64 + 0.5))));
        }
        if let Some(c) = conn.lane {
            pts.extend(self.lanes[c].waypoints[1..].iter().copied());
        }
        let out = &self.arms[conn.to_arm];
        for k in 1..=nseg {
            let d = self.radius + self.bounds[k];
            pts.push(add(scale(out.u, d), scale(out.n, -w * (conn.to_lane as f64 + 0.5))));
        }
        pts
    }
}

/// Arc-length parameterized polyline.
struct Path {
    pts: Vec<[f64; 2]>,
    cum: Vec<f64>,
}

impl Path {
    fn new(pts: Vec<[f64; 2]>) -> Self {
        let mut cum = vec![0.0];
        for w in pts.windows(2) {
            cum.push(cum.last().unwrap() + dist(w[0], w[1]));
        }
        Self { pts, cum }
    }

    fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    /// Position and unit tangent at arc length `s`.
    fn at(&self, s: f64) -> ([f64; 2], [f64; 2]) {
        let s = s.clamp(0.0, self.length());
        let k = match self.cum.partition_point(|&c| c <= s) {
            0 => 0,
            k => (k - 1).min(self.pts.len() - 2),
        };
        let (a, b) = (self.pts[k], self.pts[k + 1]);
        let len = self.cum[k + 1] - self.cum[k];
        let t = ((s - self.cum[k]) / len).clamp(0.0, 1.0);
        let dir = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
        ([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])], dir)
    }
}

fn agent_size(kind: AgentKind) -> [f64; 3] {
    match kind {
        AgentKind::Vehicle => [4.5, 2.0, 1.5],
        AgentKind::Cyclist => [1.8, 0.6, 1.7],
        AgentKind::Pedestrian => [0.5, 0.5, 1.8],
    }
}

/// Deterministic scene for `(cfg, seed)`; every agent carries its future.
pub fn gen_scene(cfg: &SynthConfig, seed: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Network::build(cfg);
    let nl = cfg.lanes_per_approach;
    let nseg = net.bounds.len() - 1;
    let frames = HISTORY_FRAMES + cfg.future_steps;
    let wanted = rng.gen_range(cfg.agents[0]..=cfg.agents[1]);
    let mut tracks: Vec<Vec<[f64; 2]>> = Vec::new();
    let mut agents = Vec::new();
    let mut attempts = 0;
    while agents.len() < wanted && attempts < 100 * cfg.agents[1] {
        attempts += 1;
        let a = rng.gen_range(0..net.arms.len());
        let i0 = rng.gen_range(0..nl);
        let (i1, change_seg) = if nl > 1 && rng.gen_bool(cfg.lane_change_prob) {
            let side = if i0 == 0 { 1 } else if i0 == nl - 1 { -1 } else if rng.gen_bool(0.5) { 1 } else { -1 };
            ((i0 as i64 + side) as usize, rng.gen_range(0..nseg))
        } else {
            (i0, nseg)
        };
        let exits: Vec<&Connector> = net
            .connectors
            .iter()
            .filter(|c| c.from_arm == a && c.from_lane == i1)
            .collect();
        let Some(conn) = exits.choose(&mut rng) else { continue };
        let path = Path::new(net.route(cfg, a, i0, i1, change_seg, conn));

        let r: f64 = rng.gen();
        let kind = if r < cfg.vulnerable_share {
            AgentKind::Pedestrian
        } else if r < 2.0 * cfg.vulnerable_share {
            AgentKind::Cyclist
        } else {
            AgentKind::Vehicle
        };
        let speed = match kind {
            AgentKind::Pedestrian => rng.gen_range(1.0..=2.0f64).min(cfg.speed[1]),
            _ => rng.gen_range(cfg.speed[0]..=cfg.speed[1]),
        };
        let travel = speed * DT * (frames - 1) as f64;
        if travel > path.length() {
            continue;
        }
        let s0 = rng.gen_range(0.0..=path.length() - travel);
        let samples: Vec<([f64; 2], [f64; 2])> =
            (0..frames).map(|k| path.at(s0 + speed * DT * k as f64)).collect();
        let positions: Vec<[f64; 2]> = samples.iter().map(|s| s.0).collect();
        let clash = tracks.iter().any(|other| {
            other.iter().zip(&positions).any(|(p, q)| dist(*p, *q) < cfg.min_gap)
        });
        if clash {
            continue;
        }
        let states = samples[..HISTORY_FRAMES]
            .iter()
            .map(|&(p, d)| AgentState {
                x: p[0],
                y: p[1],
                z: 0.0,
                vx: speed * d[0],
                vy: speed * d[1],
                theta: d[1].atan2(d[0]),
                valid: true,
            })
            .collect();
        let future = positions[HISTORY_FRAMES..]
            .iter()
            .map(|&p| FuturePoint { p, valid: true })
            .collect();
        agents.push(AgentTrack {
            id: agents.len() as i64,
            kind,
            states,
            size: agent_size(kind),
            future: Some(future),
        });
        tracks.push(positions);
    }
    if agents.len() < cfg.agents[0] {
        return Err(Error::Config(format!(
            "placed only {} of at least {} agents; loosen min_gap or agent counts",
            agents.len(),
            cfg.agents[0]
        )));
    }
    let scene = Scene {
        scene_id: format!("synth-{seed}"),
        agents,
        lanes: net.lanes,
    };
    scene.validate()?;
    Ok(scene)
}

/// Seeds `seed..seed + count`.
pub fn gen_dataset(cfg: &SynthConfig, seed: u64, count: usize) -> Result<Vec<Scene>> {
    (0..count as u64).map(|k| gen_scene(cfg, seed + k)).collect()
}

/// Scene with arbitrary (not road-like) lane connectivity: 1..=`max_lanes`
/// short lanes scattered over a 150 m square with random successor,
/// predecessor and side links, and 1..=`max_agents` agents near them.
pub fn random_topology_scene(seed: u64, max_lanes: usize, max_agents: usize) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nl = rng.gen_range(1..=max_lanes.max(1));
    let na = rng.gen_range(1..=max_agents.max(1));
    let mut lanes: Vec<LanePolyline> = (0..nl)
        .map(|i| {
            let mut p = [rng.gen_range(0.0..150.0), rng.gen_range(0.0..150.0)];
            let mut heading: f64 = rng.gen_range(-PI..PI);
            let mut pts = vec![p];
            for _ in 0..rng.gen_range(1..4) {
                heading += rng.gen_range(-0.4..0.4);
                let len = rng.gen_range(3.0..15.0);
                p = [p[0] + len * heading.cos(), p[1] + len * heading.sin()];
                pts.push(p);
            }
            LanePolyline {
                id: 100 + i as i64,
                kind: LaneKind::SurfaceStreet,
                signal: SignalState::Unknown,
                waypoints: pts,
                successors: vec![],
                predecessors: vec![],
                left_neighbors: vec![],
                right_neighbors: vec![],
            }
        })
        .collect();
    if nl > 1 {
        let other = |rng: &mut ChaCha8Rng, i: usize| {
            let j = rng.gen_range(0..nl - 1);
            100 + if j >= i { j + 1 } else { j } as i64
        };
        for i in 0..nl {
            for _ in 0..rng.gen_range(0..3) {
                let j = other(&mut rng, i);
                lanes[i].successors.push(j);
            }
            if rng.gen_bool(0.2) {
                let j = other(&mut rng, i);
                lanes[i].predecessors.push(j);
            }
            if rng.gen_bool(0.3) {
                let j = other(&mut rng, i);
                lanes[i].left_neighbors.push(j);
            }
            if rng.gen_bool(0.3) {
                let j = other(&mut rng, i);
                lanes[i].right_neighbors.push(j);
            }
        }
    }
    let agents = (0..na)
        .map(|k| {
            let lane = &lanes[rng.gen_range(0..nl)];
            let base = lane.waypoints[rng.gen_range(0..lane.waypoints.len())];
            let p = [base[0] + rng.gen_range(-15.0..15.0), base[1] + rng.gen_range(-15.0..15.0)];
            let heading: f64 = rng.gen_range(-PI..PI);
            let speed = rng.gen_range(0.0..10.0);
            let (s, c) = heading.sin_cos();
            let states = (0..HISTORY_FRAMES)
                .map(|f| {
                    let back = speed * DT * (HISTORY_STEPS - f) as f64;
                    AgentState {
                        x: p[0] - c * back,
                        y: p[1] - s * back,
                        z: 0.0,
                        vx: c * speed,
                        vy: s * speed,
                        theta: heading,
                        valid: true,
                    }
                })
                .collect();
            AgentTrack {
                id: k as i64,
                kind: AgentKind::ALL[rng.gen_range(0..3)],
                states,
                size: [4.5, 2.0, 1.5],
                future: None,
            }
        })
        .collect();
    Scene {
        scene_id: format!("random-topology-{seed}"),
        agents,
        lanes,
    }
}
