//! Encoder-ready scene graphs: localized nodes plus typed edge blocks.

use std::rc::Rc;

use crate::adjacency::BoolAdjacency;
use crate::error::{Error, Result};
use crate::relgeom::{rel_pose, EdgeGeom, EdgeType, Pose};
use crate::scene::{batch_scenes, localize, BatchOffsets, LocalizedScene, Scene};
use crate::topology::{EdgeSets, ExpansionPlan};

/// Directed edges of one type grouped by target, with the index vectors the
/// message-passing layer needs.
#[derive(Clone, Debug)]
pub struct EdgeBlock {
    pub num_sources: usize,
    pub num_targets: usize,
    /// Source row per edge.
    pub src: Rc<[usize]>,
    /// Targets with at least one incoming edge, ascending.
    pub active: Rc<[usize]>,
    /// Position in `active` of each edge's target; non-decreasing.
    pub seg: Rc<[usize]>,
    /// For every target: its own row (isolated) or `num_targets + k` for
    /// the `k`-th active target, indexing `[targets; updated]`.
    pub scatter: Rc<[usize]>,
    pub geoms: Vec<EdgeGeom>,
}

impl EdgeBlock {
    /// Builds from `(source, target)` pairs sorted by target. Geometry is the
    /// source anchor seen from the target anchor.
    pub fn from_pairs(
        pairs: &[(usize, usize)],
        src_poses: &[Pose],
        tgt_poses: &[Pose],
        etype: EdgeType,
    ) -> Result<Self> {
        let (ns, nt) = (src_poses.len(), tgt_poses.len());
        let mut src = Vec::with_capacity(pairs.len());
        let mut seg = Vec::with_capacity(pairs.len());
        let mut active: Vec<usize> = Vec::new();
        let mut geoms = Vec::with_capacity(pairs.len());
        for &(s, t) in pairs {
            if s >= ns || t >= nt {
                return Err(Error::Contract(format!(
                    "edge ({s} -> {t}) outside {ns} sources / {nt} targets"
                )));
            }
            match active.last() {
                Some(&last) if last == t => {}
                Some(&last) if last > t => {
                    return Err(Error::Contract("edges must be grouped by ascending target".into()))
                }
                _ => active.push(t),
            }
            src.push(s);
            seg.push(active.len() - 1);
            geoms.push(rel_pose(&tgt_poses[t], &src_poses[s], etype));
        }
        let mut scatter: Vec<usize> = (0..nt).collect();
        for (k, &t) in active.iter().enumerate() {
            scatter[t] = nt + k;
        }
        Ok(Self {
            num_sources: ns,
            num_targets: nt,
            src: src.into(),
            active: active.into(),
            seg: seg.into(),
            scatter: scatter.into(),
            geoms,
        })
    }

    /// From an adjacency with source rows and target columns.
    pub fn from_adjacency(
        adj: &BoolAdjacency,
        src_poses: &[Pose],
        tgt_poses: &[Pose],
        etype: EdgeType,
    ) -> Result<Self> {
        if adj.rows() != src_poses.len() || adj.cols() != tgt_poses.len() {
            return Err(Error::Contract(format!(
                "{}x{} adjacency for {} sources and {} targets",
                adj.rows(),
                adj.cols(),
                src_poses.len(),
                tgt_poses.len()
            )));
        }
        let pairs: Vec<(usize, usize)> = adj.transpose().iter().map(|(t, s)| (s, t)).collect();
        Self::from_pairs(&pairs, src_poses, tgt_poses, etype)
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    /// `(source, target)` pairs in stored order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.src
            .iter()
            .zip(self.seg.iter())
            .map(|(&s, &k)| (s, self.active[k]))
    }
}

/// A (possibly batched) scene ready for the encoder.
#[derive(Clone, Debug)]
pub struct SceneGraph {
    pub local: LocalizedScene,
    pub offsets: BatchOffsets,
    pub edges: EdgeSets,
    /// Agents → lanes (traffic-into-lane aggregation).
    pub a2l: EdgeBlock,
    /// Lanes → agents over the expanded reach.
    pub l2a: EdgeBlock,
    pub a2a: EdgeBlock,
}

/// Node and edge totals of a graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GraphSize {
    pub agents: usize,
    pub lanes: usize,
    pub edges: usize,
}

impl SceneGraph {
    pub fn build(scene: &Scene, radius: f64, plan: &ExpansionPlan) -> Result<Self> {
        Self::build_batched(scene, BatchOffsets::single(scene), radius, plan)
    }

    /// Merges scenes block-diagonally, then builds one graph.
    pub fn from_scenes(scenes: &[Scene], radius: f64, plan: &ExpansionPlan) -> Result<Self> {
        let (merged, offsets) = batch_scenes(scenes)?;
        Self::build_batched(&merged, offsets, radius, plan)
    }

    pub fn build_batched(
        scene: &Scene,
        offsets: BatchOffsets,
        radius: f64,
        plan: &ExpansionPlan,
    ) -> Result<Self> {
        scene.validate()?;
        let edges = EdgeSets::build_batched(scene, &offsets, radius, plan)?;
        let local = localize(scene)?;
        let agent_poses: Vec<Pose> = local.agents.iter().map(|a| a.anchor).collect();
        let lane_poses: Vec<Pose> = local.lanes.iter().map(|l| l.anchor).collect();
        let a2l = EdgeBlock::from_adjacency(&edges.a2l, &agent_poses, &lane_poses, EdgeType::A2L)?;
        let l2a = EdgeBlock::from_adjacency(&edges.l2a, &lane_poses, &agent_poses, EdgeType::L2A)?;
        let a2a = EdgeBlock::from_adjacency(&edges.a2a, &agent_poses, &agent_poses, EdgeType::A2A)?;
        Ok(Self {
            local,
            offsets,
            edges,
            a2l,
            l2a,
            a2a,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.local.agents.len()
    }

    pub fn num_lanes(&self) -> usize {
        self.local.lanes.len()
    }

    /// Nodes and all typed edges, lane-lane links counted once per direction set.
    pub fn size(&self) -> GraphSize {
        let c = self.edges.census();
        GraphSize {
            agents: self.num_agents(),
            lanes: self.num_lanes(),
            edges: c.a2l + c.l2l + c.l2l_f + c.l2a + c.a2a,
        }
    }
}
