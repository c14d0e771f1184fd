//! Lane-graph adjacency and topology-guided edge expansion.
//!
//! Orientation: an entry `(r, c)` means messages flow from node `r` to node
//! `c`. `M_A2L` has agent rows; `M_F` holds `j → i` when lane `i` succeeds
//! lane `j`; `M_O` adds the reverse of every forward link and both
//! directions of every lateral link.
//!
//! A plan such as `OFF` fixes one operator per hop. The lane reach after
//! `k` hops is `M^(k) = M^(k−1) · step_k` with `M^(0) = I`, and the
//! lane→agent and agent→agent edge sets are unions over all prefixes
//! `k = 0..=K`.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adjacency::BoolAdjacency;
use crate::error::{Error, Result};
use crate::scene::{AgentTrack, BatchOffsets, LanePolyline, Scene};

/// Radius used for benchmarking and training.
pub const DEFAULT_RADIUS: f64 = 30.0;
/// Radius used when comparing expansion plans.
pub const ABLATION_RADIUS: f64 = 10.0;
pub const DEFAULT_PLAN: &str = "OFF";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Step {
    /// One hop along every connectivity relation.
    Omni,
    /// One hop along successor links only.
    Forward,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct ExpansionPlan {
    steps: Vec<Step>,
}

impl ExpansionPlan {
    pub fn new(steps: Vec<Step>) -> Self {
        Self { steps }
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    /// Number of hops `K`.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn is_prefix_of(&self, other: &ExpansionPlan) -> bool {
        other.steps.starts_with(&self.steps)
    }
}

impl FromStr for ExpansionPlan {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let body = if s == "-" || s.eq_ignore_ascii_case("none") { "" } else { s };
        body.chars()
            .map(|c| match c {
                'O' => Ok(Step::Omni),
                'F' => Ok(Step::Forward),
                other => Err(Error::Config(format!(
                    "plan {s:?}: unknown step {other:?}, expected O or F"
                ))),
            })
            .collect::<Result<_>>()
            .map(Self::new)
    }
}

impl fmt::Display for ExpansionPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.steps.is_empty() {
            return f.write_str("-");
        }
        for s in &self.steps {
            f.write_str(match s {
                Step::Omni => "O",
                Step::Forward => "F",
            })?;
        }
        Ok(())
    }
}

fn index_of(map: &HashMap<i64, usize>, from: i64, to: i64) -> Result<usize> {
    map.get(&to)
        .copied()
        .ok_or_else(|| Error::GraphIntegrity(format!("lane {from} references unknown lane {to}")))
}

/// Builds `(M_O, M_F)` from the scene's lane connectivity. Predecessor lists
/// are read as successor links in the other direction.
pub fn build_l2l(scene: &Scene) -> Result<(BoolAdjacency, BoolAdjacency)> {
    let n = scene.lanes.len();
    let idx = scene.lane_index();
    let mut fwd = Vec::new();
    let mut lateral = Vec::new();
    for (j, l) in scene.lanes.iter().enumerate() {
        for &s in &l.successors {
            fwd.push((j, index_of(&idx, l.id, s)?));
        }
        for &p in &l.predecessors {
            fwd.push((index_of(&idx, l.id, p)?, j));
        }
        for &nb in l.left_neighbors.iter().chain(&l.right_neighbors) {
            let k = index_of(&idx, l.id, nb)?;
            lateral.push((j, k));
            lateral.push((k, j));
        }
    }
    for &(a, b) in fwd.iter().chain(&lateral) {
        if a == b {
            return Err(Error::GraphIntegrity(format!(
                "lane {} links to itself",
                scene.lanes[a].id
            )));
        }
    }
    let m_f = BoolAdjacency::from_pairs(n, n, fwd.iter().copied());
    let m_o = BoolAdjacency::from_pairs(
        n,
        n,
        fwd.iter()
            .flat_map(|&(a, b)| [(a, b), (b, a)])
            .chain(lateral),
    );
    Ok((m_o, m_f))
}

pub fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p[0] - (a[0] + t * dx)).hypot(p[1] - (a[1] + t * dy))
}

pub fn point_polyline_distance(p: [f64; 2], pts: &[[f64; 2]]) -> f64 {
    match pts {
        [] => f64::INFINITY,
        [only] => crate::scene::dist(p, *only),
        _ => pts
            .windows(2)
            .map(|w| point_segment_distance(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

/// Agent → lane alignment: distance from the agent's current position to the
/// lane polyline strictly below `r`.
pub fn a2l_between(agents: &[AgentTrack], lanes: &[LanePolyline], r: f64) -> BoolAdjacency {
    let mut pairs = Vec::new();
    for (i, a) in agents.iter().enumerate() {
        let p = a.current().pos();
        for (j, l) in lanes.iter().enumerate() {
            if point_polyline_distance(p, &l.waypoints) < r {
                pairs.push((i, j));
            }
        }
    }
    BoolAdjacency::from_pairs(agents.len(), lanes.len(), pairs)
}

pub fn build_a2l(scene: &Scene, r: f64) -> BoolAdjacency {
    a2l_between(&scene.agents, &scene.lanes, r)
}

/// Like [`build_a2l`] but never links an agent to a lane of another batch
/// block.
pub fn build_a2l_batched(scene: &Scene, offsets: &BatchOffsets, r: f64) -> BoolAdjacency {
    let blocks: Vec<_> = offsets
        .blocks
        .iter()
        .map(|b| a2l_between(&scene.agents[b.agents.clone()], &scene.lanes[b.lanes.clone()], r))
        .collect();
    BoolAdjacency::block_diag(&blocks)
}

/// Lane reach matrices `[M^(0), .., M^(K)]`.
pub fn expand(plan: &ExpansionPlan, m_o: &BoolAdjacency, m_f: &BoolAdjacency) -> Vec<BoolAdjacency> {
    assert_eq!(m_o.rows(), m_o.cols());
    assert_eq!((m_o.rows(), m_o.cols()), (m_f.rows(), m_f.cols()));
    let mut out = Vec::with_capacity(plan.len() + 1);
    out.push(BoolAdjacency::identity(m_o.rows()));
    for step in plan.steps() {
        let op = match step {
            Step::Omni => m_o,
            Step::Forward => m_f,
        };
        let next = out.last().unwrap().product(op);
        out.push(next);
    }
    out
}

/// Lane → agent edges: `⋃_k M^(k) · M_A2Lᵀ`, lane rows, agent columns.
pub fn expand_l2a(
    m_a2l: &BoolAdjacency,
    m_o: &BoolAdjacency,
    m_f: &BoolAdjacency,
    plan: &ExpansionPlan,
) -> BoolAdjacency {
    let m_l2a = m_a2l.transpose();
    // union distributes over the product, so reach can be merged first
    let reach = expand(plan, m_o, m_f)
        .into_iter()
        .reduce(|acc, m| acc.union(&m))
        .expect("M^(0) always present");
    reach.product(&m_l2a)
}

/// Agent → agent edges: `⋃_k M_A2L · M^(k) · M_A2Lᵀ` without self-loops.
pub fn expand_a2a(
    m_a2l: &BoolAdjacency,
    m_o: &BoolAdjacency,
    m_f: &BoolAdjacency,
    plan: &ExpansionPlan,
) -> BoolAdjacency {
    m_a2l
        .product(&expand_l2a(m_a2l, m_o, m_f, plan))
        .without_diagonal()
}

/// All typed edge sets of one (possibly batched) scene.
#[derive(Clone, Debug)]
pub struct EdgeSets {
    pub a2l: BoolAdjacency,
    pub l2l_o: BoolAdjacency,
    pub l2l_f: BoolAdjacency,
    pub l2a: BoolAdjacency,
    pub a2a: BoolAdjacency,
}

impl EdgeSets {
    pub fn build(scene: &Scene, r: f64, plan: &ExpansionPlan) -> Result<Self> {
        Self::build_batched(scene, &BatchOffsets::single(scene), r, plan)
    }

    pub fn build_batched(
        scene: &Scene,
        offsets: &BatchOffsets,
        r: f64,
        plan: &ExpansionPlan,
    ) -> Result<Self> {
        let (l2l_o, l2l_f) = build_l2l(scene)?;
        let a2l = build_a2l_batched(scene, offsets, r);
        let l2a = expand_l2a(&a2l, &l2l_o, &l2l_f, plan);
        let a2a = a2l.product(&l2a).without_diagonal();
        Ok(Self {
            a2l,
            l2l_o,
            l2l_f,
            l2a,
            a2a,
        })
    }

    pub fn census(&self) -> EdgeCensus {
        EdgeCensus {
            a2l: self.a2l.nnz(),
            l2l: self.l2l_o.nnz(),
            l2l_f: self.l2l_f.nnz(),
            l2a: self.l2a.nnz(),
            a2a: self.a2a.nnz(),
        }
    }

    /// Writes every edge as `edge_type,src_kind,src_id,dst_kind,dst_id`.
    pub fn write_csv<W: Write>(&self, scene: &Scene, w: W) -> Result<()> {
        let agent = |i: usize| scene.agents[i].id;
        let lane = |i: usize| scene.lanes[i].id;
        let mut out = std::io::BufWriter::new(w);
        writeln!(out, "edge_type,src_kind,src_id,dst_kind,dst_id")?;
        let sets: [(&str, &BoolAdjacency, &str, &str); 5] = [
            ("A2L", &self.a2l, "agent", "lane"),
            ("L2L_O", &self.l2l_o, "lane", "lane"),
            ("L2L_F", &self.l2l_f, "lane", "lane"),
            ("L2A", &self.l2a, "lane", "agent"),
            ("A2A", &self.a2a, "agent", "agent"),
        ];
        for (name, m, sk, dk) in sets {
            for (r, c) in m.iter() {
                let sid = if sk == "agent" { agent(r) } else { lane(r) };
                let did = if dk == "agent" { agent(c) } else { lane(c) };
                writeln!(out, "{name},{sk},{sid},{dk},{did}")?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Edge counts per type. `l2l` counts the omnidirectional set, which
/// contains every forward edge.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeCensus {
    pub a2l: usize,
    pub l2l: usize,
    pub l2l_f: usize,
    pub l2a: usize,
    pub a2a: usize,
}

impl EdgeCensus {
    pub fn le(&self, other: &EdgeCensus) -> bool {
        self.a2l <= other.a2l
            && self.l2l <= other.l2l
            && self.l2l_f <= other.l2l_f
            && self.l2a <= other.l2a
            && self.a2a <= other.a2a
    }
}

pub fn edge_census(scene: &Scene, r: f64, plan: &ExpansionPlan) -> Result<EdgeCensus> {
    Ok(EdgeSets::build(scene, r, plan)?.census())
}
