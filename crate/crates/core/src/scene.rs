//! Scenes, node-local frames and block-diagonal batching.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::BufRead;
use std::ops::Range;
use std::path::Path;

use serde::de::Deserializer;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::relgeom::{rotate, wrap, Pose};

/// Observed frames per agent: 10 history steps plus the current frame.
pub const HISTORY_FRAMES: usize = 11;
/// Displacement steps fed to the agent encoder.
pub const HISTORY_STEPS: usize = HISTORY_FRAMES - 1;
/// Resampled points per lane centerline.
pub const LANE_POINTS: usize = 12;
/// Predicted steps per trajectory (8 s at 10 Hz).
pub const FUTURE_STEPS: usize = 80;
pub const DT: f64 = 0.1;

const MIN_SEGMENT: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl AgentKind {
    pub const ALL: [AgentKind; 3] = [AgentKind::Vehicle, AgentKind::Pedestrian, AgentKind::Cyclist];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Vehicle => "vehicle",
            AgentKind::Pedestrian => "pedestrian",
            AgentKind::Cyclist => "cyclist",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LaneKind {
    #[default]
    Undefined,
    Freeway,
    SurfaceStreet,
    BikeLane,
}

impl LaneKind {
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SignalState {
    #[default]
    Unknown,
    Stop,
    Caution,
    Go,
}

impl SignalState {
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }
}

/// One observed frame. Serialized as `[x, y, z, vx, vy, theta, valid]`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub vx: f64,
    pub vy: f64,
    pub theta: f64,
    pub valid: bool,
}

impl AgentState {
    pub fn pos(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Validity flag accepted as `true`/`false` or a number (non-zero = valid).
#[derive(Deserialize)]
#[serde(untagged)]
enum Flag {
    Bool(bool),
    Num(f64),
}

impl From<Flag> for bool {
    fn from(f: Flag) -> bool {
        match f {
            Flag::Bool(b) => b,
            Flag::Num(n) => n != 0.0,
        }
    }
}

impl Serialize for AgentState {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        (self.x, self.y, self.z, self.vx, self.vy, self.theta, self.valid).serialize(s)
    }
}

impl<'de> Deserialize<'de> for AgentState {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let (x, y, z, vx, vy, theta, valid): (f64, f64, f64, f64, f64, f64, Flag) =
            Deserialize::deserialize(d)?;
        Ok(Self {
            x,
            y,
            z,
            vx,
            vy,
            theta,
            valid: valid.into(),
        })
    }
}

/// Ground-truth future position. Serialized as `[x, y, valid]`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct FuturePoint {
    pub p: [f64; 2],
    pub valid: bool,
}

impl Serialize for FuturePoint {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        (self.p[0], self.p[1], self.valid).serialize(s)
    }
}

impl<'de> Deserialize<'de> for FuturePoint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let (x, y, valid): (f64, f64, Flag) = Deserialize::deserialize(d)?;
        Ok(Self {
            p: [x, y],
            valid: valid.into(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub id: i64,
    pub kind: AgentKind,
    /// Frames `t = −10 ..= 0`, oldest first.
    pub states: Vec<AgentState>,
    /// `[length, width, height]` in meters.
    pub size: [f64; 3],
    /// Global-frame ground truth for training and evaluation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub future: Option<Vec<FuturePoint>>,
}

impl AgentTrack {
    pub fn current(&self) -> &AgentState {
        self.states.last().expect("validated track has states")
    }

    pub fn current_pose(&self) -> Pose {
        let s = self.current();
        Pose::new(s.pos(), s.theta)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanePolyline {
    pub id: i64,
    #[serde(default)]
    pub kind: LaneKind,
    #[serde(default)]
    pub signal: SignalState,
    pub waypoints: Vec<[f64; 2]>,
    #[serde(default)]
    pub successors: Vec<i64>,
    #[serde(default)]
    pub predecessors: Vec<i64>,
    #[serde(default, rename = "left")]
    pub left_neighbors: Vec<i64>,
    #[serde(default, rename = "right")]
    pub right_neighbors: Vec<i64>,
}

impl LanePolyline {
    pub fn links(&self) -> impl Iterator<Item = i64> + '_ {
        self.successors
            .iter()
            .chain(&self.predecessors)
            .chain(&self.left_neighbors)
            .chain(&self.right_neighbors)
            .copied()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: String,
    pub agents: Vec<AgentTrack>,
    pub lanes: Vec<LanePolyline>,
}

impl Scene {
    pub fn from_json(text: &str) -> Result<Self> {
        let scene: Scene = serde_json::from_str(text).map_err(|e| Error::Parse {
            context: "scene".into(),
            source: e,
        })?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scene serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.agents.is_empty() {
            return Err(Error::InvalidScene(format!("{}: no agents", self.scene_id)));
        }
        if self.lanes.is_empty() {
            return Err(Error::InvalidScene(format!("{}: no lanes", self.scene_id)));
        }
        let mut agent_ids = HashSet::new();
        for a in &self.agents {
            if !agent_ids.insert(a.id) {
                return Err(Error::InvalidScene(format!("duplicate agent id {}", a.id)));
            }
            if a.states.len() != HISTORY_FRAMES {
                return Err(Error::InvalidScene(format!(
                    "agent {}: expected {HISTORY_FRAMES} states, found {}",
                    a.id,
                    a.states.len()
                )));
            }
            if !a.current().valid {
                return Err(Error::InvalidScene(format!(
                    "agent {}: current frame is not valid",
                    a.id
                )));
            }
            let finite = a.states.iter().all(|s| {
                [s.x, s.y, s.z, s.vx, s.vy, s.theta]
                    .iter()
                    .all(|v| v.is_finite())
            });
            if !finite {
                return Err(Error::InvalidScene(format!("agent {}: non-finite state", a.id)));
            }
        }
        let lane_ids: HashSet<i64> = self.lanes.iter().map(|l| l.id).collect();
        if lane_ids.len() != self.lanes.len() {
            return Err(Error::InvalidScene("duplicate lane id".into()));
        }
        for l in &self.lanes {
            check_polyline(&l.waypoints).map_err(|e| match e {
                Error::InvalidPolyline(m) => Error::InvalidPolyline(format!("lane {}: {m}", l.id)),
                other => other,
            })?;
            for other in l.links() {
                if other == l.id {
                    return Err(Error::GraphIntegrity(format!("lane {} links to itself", l.id)));
                }
                if !lane_ids.contains(&other) {
                    return Err(Error::GraphIntegrity(format!(
                        "lane {} references unknown lane {other}",
                        l.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn lane_index(&self) -> HashMap<i64, usize> {
        self.lanes.iter().enumerate().map(|(i, l)| (l.id, i)).collect()
    }

    /// Applies a global rotation by `phi` followed by a translation.
    pub fn transformed(&self, phi: f64, t: [f64; 2]) -> Scene {
        let mv = |p: [f64; 2]| {
            let r = rotate(p, phi);
            [r[0] + t[0], r[1] + t[1]]
        };
        let mut out = self.clone();
        for a in &mut out.agents {
            for s in &mut a.states {
                let [x, y] = mv(s.pos());
                let [vx, vy] = rotate([s.vx, s.vy], phi);
                *s = AgentState {
                    x,
                    y,
                    vx,
                    vy,
                    theta: wrap(s.theta + phi),
                    ..*s
                };
            }
            if let Some(f) = &mut a.future {
                for p in f {
                    p.p = mv(p.p);
                }
            }
        }
        for l in &mut out.lanes {
            for w in &mut l.waypoints {
                *w = mv(*w);
            }
        }
        out
    }
}

/// Reads one scene per file, or one per line for JSON-lines files.
pub fn load_scenes(path: &Path) -> Result<Vec<Scene>> {
    let text = std::fs::read_to_string(path)?;
    let jsonl = path.extension().is_some_and(|e| e == "jsonl");
    let parse = |s: &str, ctx: String| -> Result<Scene> {
        let scene: Scene = serde_json::from_str(s).map_err(|e| Error::Parse {
            context: ctx,
            source: e,
        })?;
        scene.validate()?;
        Ok(scene)
    };
    if jsonl {
        text.as_bytes()
            .lines()
            .enumerate()
            .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
            .map(|(i, l)| parse(&l?, format!("{}:{}", path.display(), i + 1)))
            .collect()
    } else {
        Ok(vec![parse(&text, path.display().to_string())?])
    }
}

fn check_polyline(points: &[[f64; 2]]) -> Result<()> {
    if points.len() < 2 {
        return Err(Error::InvalidPolyline(format!(
            "need at least 2 points, got {}",
            points.len()
        )));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidPolyline("non-finite point".into()));
    }
    if points.windows(2).any(|w| dist(w[0], w[1]) <= MIN_SEGMENT) {
        return Err(Error::InvalidPolyline("coincident consecutive points".into()));
    }
    Ok(())
}

pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Resamples a polyline to `n` points at equal arc-length spacing.
/// Endpoints are reproduced exactly.
pub fn resample_polyline(points: &[[f64; 2]], n: usize) -> Result<Vec<[f64; 2]>> {
    if points.len() < 2 {
        return Err(Error::InvalidPolyline(format!(
            "need at least 2 points, got {}",
            points.len()
        )));
    }
    if n < 2 {
        return Err(Error::InvalidPolyline(format!("cannot resample to {n} points")));
    }
    let mut cum = Vec::with_capacity(points.len());
    cum.push(0.0);
    for w in points.windows(2) {
        cum.push(cum.last().unwrap() + dist(w[0], w[1]));
    }
    let total = *cum.last().unwrap();
    if total <= MIN_SEGMENT {
        return Err(Error::InvalidPolyline("zero-length polyline".into()));
    }
    let mut out = Vec::with_capacity(n);
    out.push(points[0]);
    let mut seg = 0;
    for i in 1..n - 1 {
        let s = total * i as f64 / (n - 1) as f64;
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 { (s - cum[seg]) / len } else { 0.0 };
        let (a, b) = (points[seg], points[seg + 1]);
        out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
    }
    out.push(*points.last().unwrap());
    Ok(out)
}

/// Per-step `(Δx, Δy, vx, vy, Δθ, valid)` in the frame of `anchor`.
/// Steps where either endpoint frame is unobserved are all-zero.
pub fn to_displacements(states: &[AgentState], anchor: &Pose) -> Vec<[f64; 6]> {
    states
        .windows(2)
        .map(|w| {
            let (prev, cur) = (&w[0], &w[1]);
            if !(prev.valid && cur.valid) {
                return [0.0; 6];
            }
            let d = anchor.vec_to_local([cur.x - prev.x, cur.y - prev.y]);
            let v = anchor.vec_to_local([cur.vx, cur.vy]);
            [d[0], d[1], v[0], v[1], wrap(cur.theta - prev.theta), 1.0]
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalAgent {
    pub anchor: Pose,
    pub kind: AgentKind,
    pub steps: Vec<[f64; 6]>,
    /// `[length, width, height]`.
    pub size: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalLane {
    pub anchor: Pose,
    pub points: Vec<[f64; 2]>,
    pub kind: LaneKind,
    pub signal: SignalState,
}

impl LocalLane {
    /// Consecutive point differences, one fewer than points.
    pub fn deltas(&self) -> Vec<[f64; 2]> {
        self.points
            .windows(2)
            .map(|w| [w[1][0] - w[0][0], w[1][1] - w[0][1]])
            .collect()
    }
}

/// A scene with every node expressed in its own anchor frame.
#[derive(Clone, Debug)]
pub struct LocalizedScene {
    pub scene: Scene,
    pub agents: Vec<LocalAgent>,
    pub lanes: Vec<LocalLane>,
}

pub fn localize_agent(a: &AgentTrack) -> LocalAgent {
    let anchor = a.current_pose();
    LocalAgent {
        anchor,
        kind: a.kind,
        steps: to_displacements(&a.states, &anchor),
        size: a.size,
    }
}

/// Anchors a lane at its middle resampled point, heading along the chord
/// between that point's two neighbors.
pub fn localize_lane(l: &LanePolyline) -> Result<LocalLane> {
    let pts = resample_polyline(&l.waypoints, LANE_POINTS)?;
    let mid = LANE_POINTS / 2;
    let (a, b) = (pts[mid.saturating_sub(1)], pts[(mid + 1).min(pts.len() - 1)]);
    let anchor = Pose::new(pts[mid], (b[1] - a[1]).atan2(b[0] - a[0]));
    let points = pts.iter().map(|&p| anchor.to_local(p)).collect();
    Ok(LocalLane {
        anchor,
        points,
        kind: l.kind,
        signal: l.signal,
    })
}

pub fn localize(scene: &Scene) -> Result<LocalizedScene> {
    Ok(LocalizedScene {
        agents: scene.agents.iter().map(localize_agent).collect(),
        lanes: scene.lanes.iter().map(localize_lane).collect::<Result<_>>()?,
        scene: scene.clone(),
    })
}

/// Where one source scene lives inside a batched scene.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub scene_id: String,
    pub agents: Range<usize>,
    pub lanes: Range<usize>,
    pub agent_id_shift: i64,
    pub lane_id_shift: i64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchOffsets {
    pub blocks: Vec<Block>,
}

impl BatchOffsets {
    /// Offsets describing a single unbatched scene.
    pub fn single(scene: &Scene) -> Self {
        Self {
            blocks: vec![Block {
                scene_id: scene.scene_id.clone(),
                agents: 0..scene.agents.len(),
                lanes: 0..scene.lanes.len(),
                agent_id_shift: 0,
                lane_id_shift: 0,
            }],
        }
    }

    /// `(agent_start, lane_start)` per source scene.
    pub fn starts(&self) -> Vec<(usize, usize)> {
        self.blocks
            .iter()
            .map(|b| (b.agents.start, b.lanes.start))
            .collect()
    }
}

impl fmt::Display for BatchOffsets {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.starts())
    }
}

fn id_shift(ids: impl Iterator<Item = i64> + Clone, next_free: Option<i64>) -> i64 {
    match (next_free, ids.min()) {
        (Some(next), Some(min)) => next - min,
        _ => 0,
    }
}

/// Merges scenes into one disconnected scene. Node order is scene by scene;
/// ids are shifted so they stay unique, and the first scene keeps its ids.
pub fn batch_scenes(scenes: &[Scene]) -> Result<(Scene, BatchOffsets)> {
    if scenes.is_empty() {
        return Err(Error::Contract("batch_scenes needs at least one scene".into()));
    }
    if scenes.len() == 1 {
        return Ok((scenes[0].clone(), BatchOffsets::single(&scenes[0])));
    }
    let mut merged = Scene {
        scene_id: scenes
            .iter()
            .map(|s| s.scene_id.as_str())
            .collect::<Vec<_>>()
            .join("+"),
        agents: Vec::new(),
        lanes: Vec::new(),
    };
    let mut blocks = Vec::with_capacity(scenes.len());
    let (mut next_agent, mut next_lane) = (None, None);
    for s in scenes {
        let a_shift = id_shift(s.agents.iter().map(|a| a.id), next_agent);
        let l_shift = id_shift(s.lanes.iter().map(|l| l.id), next_lane);
        let a0 = merged.agents.len();
        let l0 = merged.lanes.len();
        merged.agents.extend(s.agents.iter().map(|a| AgentTrack {
            id: a.id + a_shift,
            ..a.clone()
        }));
        let remap = |v: &[i64]| v.iter().map(|id| id + l_shift).collect::<Vec<_>>();
        merged.lanes.extend(s.lanes.iter().map(|l| LanePolyline {
            id: l.id + l_shift,
            successors: remap(&l.successors),
            predecessors: remap(&l.predecessors),
            left_neighbors: remap(&l.left_neighbors),
            right_neighbors: remap(&l.right_neighbors),
            ..l.clone()
        }));
        if let Some(m) = merged.agents[a0..].iter().map(|a| a.id).max() {
            next_agent = Some(m + 1);
        }
        if let Some(m) = merged.lanes[l0..].iter().map(|l| l.id).max() {
            next_lane = Some(m + 1);
        }
        blocks.push(Block {
            scene_id: s.scene_id.clone(),
            agents: a0..merged.agents.len(),
            lanes: l0..merged.lanes.len(),
            agent_id_shift: a_shift,
            lane_id_shift: l_shift,
        });
    }
    Ok((merged, BatchOffsets { blocks }))
}

/// Inverse of [`batch_scenes`].
pub fn split_scene(merged: &Scene, offsets: &BatchOffsets) -> Vec<Scene> {
    offsets
        .blocks
        .iter()
        .map(|b| {
            let unmap = |v: &[i64]| v.iter().map(|id| id - b.lane_id_shift).collect::<Vec<_>>();
            Scene {
                scene_id: b.scene_id.clone(),
                agents: merged.agents[b.agents.clone()]
                    .iter()
                    .map(|a| AgentTrack {
                        id: a.id - b.agent_id_shift,
                        ..a.clone()
                    })
                    .collect(),
                lanes: merged.lanes[b.lanes.clone()]
                    .iter()
                    .map(|l| LanePolyline {
                        id: l.id - b.lane_id_shift,
                        successors: unmap(&l.successors),
                        predecessors: unmap(&l.predecessors),
                        left_neighbors: unmap(&l.left_neighbors),
                        right_neighbors: unmap(&l.right_neighbors),
                        ..l.clone()
                    })
                    .collect(),
            }
        })
        .collect()
}
