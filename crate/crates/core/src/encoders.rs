//! Agent, lane and edge encoders producing initial node and edge embeddings.

use autodiff::{Bound, Graph, ParamId, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Gru, Linear, Mlp, ParamInit};
use crate::relgeom::{EdgeGeom, EdgeType};
use crate::scene::{AgentKind, LaneKind, LocalAgent, LocalLane, SignalState};

/// Channels per agent history step: `(Δx, Δy, vx, vy, Δθ, valid)`.
pub const AGENT_STEP_CHANNELS: usize = 6;
/// `(length, width, height)` plus the kind one-hot.
pub const AGENT_ATTRS: usize = 3 + 3;
pub const LANE_ATTRS: usize = LaneKind::COUNT + SignalState::COUNT;
/// Edge distances enter the MLP in units of 10 m.
pub const EDGE_DISTANCE_SCALE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub hidden_dim: usize,
    pub type_embed_dim: usize,
    pub num_agent_kinds: usize,
    pub num_edge_types: usize,
    pub gru_layers: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            type_embed_dim: 16,
            num_agent_kinds: AgentKind::ALL.len(),
            num_edge_types: EdgeType::ALL.len(),
            gru_layers: 1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.type_embed_dim == 0 {
            return Err(Error::Config("encoder widths must be at least 1".into()));
        }
        if self.num_agent_kinds != AgentKind::ALL.len() {
            return Err(Error::Config(format!(
                "num_agent_kinds must be {}",
                AgentKind::ALL.len()
            )));
        }
        if self.num_edge_types != EdgeType::ALL.len() {
            return Err(Error::Config(format!(
                "num_edge_types must be {}",
                EdgeType::ALL.len()
            )));
        }
        if self.gru_layers != 1 {
            return Err(Error::Config("only single-layer GRUs are supported".into()));
        }
        Ok(())
    }
}

fn one_hot(n: usize, i: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |k| if k == i { 1.0 } else { 0.0 })
}

/// Time-major `[rows, channels]` tensors, one per sequence step.
fn sequence_inputs<const C: usize>(seqs: &[Vec<[f64; C]>]) -> Result<Vec<Tensor>> {
    let len = seqs.first().map_or(0, |s| s.len());
    if seqs.iter().any(|s| s.len() != len) {
        return Err(Error::Contract("sequences must share one length".into()));
    }
    Ok((0..len)
        .map(|t| {
            let data = seqs.iter().flat_map(|s| s[t]).collect();
            Tensor::new([seqs.len(), C], data).expect("sized above")
        })
        .collect())
}

/// GRU over the history, attribute embedding, and a fusing MLP.
#[derive(Clone, Debug)]
pub struct AgentEncoder {
    pub gru: Gru,
    pub attrs: Linear,
    pub fuse: Mlp,
}

impl AgentEncoder {
    pub fn new(init: &mut ParamInit, cfg: &EncoderConfig) -> Self {
        let d = cfg.hidden_dim;
        Self {
            gru: Gru::new(init, "agent_enc.gru", AGENT_STEP_CHANNELS, d),
            attrs: Linear::new(init, "agent_enc.attrs", AGENT_ATTRS, cfg.type_embed_dim),
            fuse: Mlp::new(init, "agent_enc.fuse", &[d + cfg.type_embed_dim, d, d]),
        }
    }

    /// `[N_a, D]` embeddings, row order follows `agents`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, agents: &[LocalAgent]) -> Result<Var> {
        let steps: Vec<Vec<[f64; 6]>> = agents.iter().map(|a| a.steps.clone()).collect();
        let xs: Vec<Var> = sequence_inputs(&steps)?
            .into_iter()
            .map(|t| g.constant(t))
            .collect();
        let h = self.gru.run(g, p, &xs, agents.len())?;
        let attr_data = agents
            .iter()
            .flat_map(|a| a.size.into_iter().chain(one_hot(3, a.kind.index())))
            .collect();
        let attrs = g.constant(Tensor::new([agents.len(), AGENT_ATTRS], attr_data)?);
        let a = self.attrs.forward(g, p, attrs)?;
        let a = g.relu(a);
        let x = g.concat(&[h, a])?;
        self.fuse.forward(g, p, x)
    }
}

/// GRU over resampled centerline deltas fused with kind and signal.
#[derive(Clone, Debug)]
pub struct LaneEncoder {
    pub gru: Gru,
    pub attrs: Linear,
    pub fuse: Mlp,
}

impl LaneEncoder {
    pub fn new(init: &mut ParamInit, cfg: &EncoderConfig) -> Self {
        let d = cfg.hidden_dim;
        Self {
            gru: Gru::new(init, "lane_enc.gru", 2, d),
            attrs: Linear::new(init, "lane_enc.attrs", LANE_ATTRS, cfg.type_embed_dim),
            fuse: Mlp::new(init, "lane_enc.fuse", &[d + cfg.type_embed_dim, d, d]),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, lanes: &[LocalLane]) -> Result<Var> {
        let deltas: Vec<Vec<[f64; 2]>> = lanes.iter().map(|l| l.deltas()).collect();
        let xs: Vec<Var> = sequence_inputs(&deltas)?
            .into_iter()
            .map(|t| g.constant(t))
            .collect();
        let h = self.gru.run(g, p, &xs, lanes.len())?;
        let attr_data = lanes
            .iter()
            .flat_map(|l| {
                one_hot(LaneKind::COUNT, l.kind.index())
                    .chain(one_hot(SignalState::COUNT, l.signal.index()))
            })
            .collect();
        let attrs = g.constant(Tensor::new([lanes.len(), LANE_ATTRS], attr_data)?);
        let a = self.attrs.forward(g, p, attrs)?;
        let a = g.relu(a);
        let x = g.concat(&[h, a])?;
        self.fuse.forward(g, p, x)
    }
}

/// MLP over relative geometry concatenated with a learned edge-type embedding.
#[derive(Clone, Debug)]
pub struct EdgeEncoder {
    pub type_embed: ParamId,
    pub mlp: Mlp,
}

impl EdgeEncoder {
    pub fn new(init: &mut ParamInit, cfg: &EncoderConfig) -> Self {
        let d = cfg.hidden_dim;
        let te = cfg.type_embed_dim;
        Self {
            type_embed: init.uniform("edge_enc.type_embed", &[cfg.num_edge_types, te], 1.0),
            mlp: Mlp::new(init, "edge_enc.mlp", &[4 + te, d, d]),
        }
    }

    /// `[E, D]` embeddings, row order follows `geoms`. Callers skip empty sets.
    pub fn forward(&self, g: &mut Graph, p: &Bound, geoms: &[EdgeGeom]) -> Result<Var> {
        if geoms.is_empty() {
            return Err(Error::Contract("edge encoder called with no edges".into()));
        }
        let n = geoms.len();
        let feats = geoms
            .iter()
            .flat_map(|e| {
                [
                    e.dx * EDGE_DISTANCE_SCALE,
                    e.dy * EDGE_DISTANCE_SCALE,
                    e.cos_dt,
                    e.sin_dt,
                ]
            })
            .collect();
        let feats = g.constant(Tensor::new([n, 4], feats)?);
        let types = geoms
            .iter()
            .flat_map(|e| one_hot(EdgeType::ALL.len(), e.etype.index()))
            .collect();
        let types = g.constant(Tensor::new([n, EdgeType::ALL.len()], types)?);
        let emb = g.matmul(types, p[self.type_embed])?;
        let x = g.concat(&[feats, emb])?;
        self.mlp.forward(g, p, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relgeom::{rel_pose, Pose};
    use crate::scene::{localize_agent, localize_lane, tests as fx, AgentState};
    use autodiff::{grad_check, ParamRegistry, DEFAULT_STEP};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Fixture {
        reg: ParamRegistry,
        agent: AgentEncoder,
        lane: LaneEncoder,
        edge: EdgeEncoder,
    }

    fn fixture(seed: u64) -> Fixture {
        let mut reg = ParamRegistry::new();
        let cfg = EncoderConfig {
            hidden_dim: 16,
            type_embed_dim: 4,
            ..Default::default()
        };
        let (agent, lane, edge) = {
            let mut init = ParamInit::new(&mut reg, seed);
            (
                AgentEncoder::new(&mut init, &cfg),
                LaneEncoder::new(&mut init, &cfg),
                EdgeEncoder::new(&mut init, &cfg),
            )
        };
        Fixture {
            reg,
            agent,
            lane,
            edge,
        }
    }

    impl Fixture {
        fn agents(&self, a: &[LocalAgent]) -> Tensor {
            let mut g = Graph::new();
            let p = self.reg.bind(&mut g, false);
            let y = self.agent.forward(&mut g, &p, a).unwrap();
            g.value(y).clone()
        }

        fn lanes(&self, l: &[LocalLane]) -> Tensor {
            let mut g = Graph::new();
            let p = self.reg.bind(&mut g, false);
            let y = self.lane.forward(&mut g, &p, l).unwrap();
            g.value(y).clone()
        }

        fn edges(&self, e: &[EdgeGeom]) -> Tensor {
            let mut g = Graph::new();
            let p = self.reg.bind(&mut g, false);
            let y = self.edge.forward(&mut g, &p, e).unwrap();
            g.value(y).clone()
        }
    }

    #[test]
    fn global_pose_does_not_change_agent_embedding() {
        let f = fixture(1);
        let a = localize_agent(&fx::straight_track(1, [0.0, 0.0], 0.0, 1.0));
        let b = localize_agent(&fx::straight_track(2, [300.0, -40.0], 0.0, 1.0));
        let out = f.agents(&[a, b]);
        assert_eq!(out.row(0), out.row(1));
    }

    #[test]
    fn stationary_and_moving_agents_differ() {
        let f = fixture(2);
        let a = localize_agent(&fx::straight_track(1, [0.0, 0.0], 0.3, 0.0));
        let b = localize_agent(&fx::straight_track(2, [0.0, 0.0], 0.3, 1.0));
        let out = f.agents(&[a, b]);
        let diff = out.row(0).iter().zip(out.row(1)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff > 0.0);
    }

    #[test]
    fn only_current_frame_valid_is_finite() {
        let f = fixture(3);
        let mut t = fx::straight_track(1, [5.0, 5.0], 1.0, 1.0);
        for s in &mut t.states[..10] {
            *s = AgentState::default();
        }
        let out = f.agents(&[localize_agent(&t)]);
        assert!(out.all_finite());
    }

    #[test]
    fn permuting_agents_permutes_embeddings() {
        let f = fixture(4);
        let tracks: Vec<_> = (0..4)
            .map(|i| localize_agent(&fx::straight_track(i, [i as f64, 0.0], 0.2 * i as f64, 0.5 * i as f64)))
            .collect();
        let out = f.agents(&tracks);
        let rev: Vec<_> = tracks.iter().rev().cloned().collect();
        let out_rev = f.agents(&rev);
        for i in 0..4 {
            assert_eq!(out.row(i), out_rev.row(3 - i));
        }
    }

    #[test]
    fn straight_lane_embedding_is_reproducible() {
        let l = localize_lane(&fx::lane(1, vec![[0.0, 0.0], [55.0, 0.0]])).unwrap();
        let a = fixture(5).lanes(std::slice::from_ref(&l));
        let b = fixture(5).lanes(&[l]);
        assert_eq!(a, b);
        assert!(a.all_finite());
    }

    #[test]
    fn lane_signal_and_direction_matter() {
        let f = fixture(6);
        let base = fx::lane(1, vec![[0.0, 0.0], [20.0, 0.0], [40.0, 10.0]]);
        let mut red = base.clone();
        red.signal = SignalState::Stop;
        let mut rev = base.clone();
        rev.waypoints.reverse();
        let out = f.lanes(&[
            localize_lane(&base).unwrap(),
            localize_lane(&red).unwrap(),
            localize_lane(&rev).unwrap(),
        ]);
        assert_ne!(out.row(0), out.row(1));
        assert_ne!(out.row(0), out.row(2));
    }

    #[test]
    fn edge_types_are_distinguished() {
        let f = fixture(7);
        let geom = rel_pose(&Pose::new([0.0, 0.0], 0.0), &Pose::new([3.0, 1.0], 0.5), EdgeType::A2L);
        let mut other = geom;
        other.etype = EdgeType::A2A;
        let out = f.edges(&[geom, other]);
        assert_ne!(out.row(0), out.row(1));
    }

    #[test]
    fn rigid_motion_of_both_endpoints_keeps_edge_embedding() {
        let f = fixture(8);
        let (t, s) = (Pose::new([1.0, 2.0], 0.4), Pose::new([-3.0, 5.0], -2.0));
        let move_pose = |p: &Pose| {
            let q = crate::relgeom::rotate(p.p, 1.1);
            Pose::new([q[0] + 40.0, q[1] - 7.0], p.theta + 1.1)
        };
        let a = f.edges(&[rel_pose(&t, &s, EdgeType::L2A)]);
        let b = f.edges(&[rel_pose(&move_pose(&t), &move_pose(&s), EdgeType::L2A)]);
        assert!(a.max_abs_diff(&b) < 1e-9);
    }

    #[test]
    fn edge_encoder_gradients() {
        let f = fixture(9);
        let geoms = [
            rel_pose(&Pose::new([0.0, 0.0], 0.0), &Pose::new([3.0, 1.0], 0.5), EdgeType::A2L),
            rel_pose(&Pose::new([1.0, 0.0], 1.0), &Pose::new([-2.0, 4.0], 2.5), EdgeType::A2A),
        ];
        let w = f.reg.value(f.edge.type_embed).clone();
        let err = grad_check::<_, crate::Error>(
            |g, wv| {
                let p = f.reg.bind(g, false).replaced(f.edge.type_embed, wv);
                let y = f.edge.forward(g, &p, &geoms)?;
                let sq = g.mul(y, y)?;
                Ok(g.sum_all(sq))
            },
            &w,
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err <= 1e-5, "{err:e}");
    }

    #[test]
    fn encoders_finite_on_random_inputs() {
        let f = fixture(10);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut agents = Vec::new();
        let mut lanes = Vec::new();
        let mut edges = Vec::new();
        for i in 0..1000 {
            let start = [rng.gen_range(-500.0..500.0), rng.gen_range(-500.0..500.0)];
            let mut t = fx::straight_track(i, start, rng.gen_range(-3.0..3.0), rng.gen_range(0.0..3.0));
            for s in &mut t.states[..10] {
                s.valid = rng.gen_bool(0.8);
            }
            agents.push(localize_agent(&t));
            let n = rng.gen_range(2..6);
            let mut pts = vec![start];
            for _ in 1..n {
                let last = *pts.last().unwrap();
                pts.push([last[0] + rng.gen_range(1.0..20.0), last[1] + rng.gen_range(-10.0..10.0)]);
            }
            lanes.push(localize_lane(&fx::lane(i, pts)).unwrap());
            let pose = |r: &mut ChaCha8Rng| Pose::new([r.gen_range(-80.0..80.0), r.gen_range(-80.0..80.0)], r.gen_range(-3.2..3.2));
            edges.push(rel_pose(&pose(&mut rng), &pose(&mut rng), EdgeType::ALL[i as usize % 4]));
        }
        assert!(f.agents(&agents).all_finite());
        assert!(f.lanes(&lanes).all_finite());
        assert!(f.edges(&edges).all_finite());
    }
}
