//! The full encoder–interaction–decoder pipeline and its output block.

use std::path::Path;

use autodiff::{read_checkpoint, write_checkpoint, Bound, Graph, ParamRegistry, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::encoders::{AgentEncoder, EdgeEncoder, EncoderConfig, LaneEncoder};
use crate::error::{Error, Result};
use crate::interaction::{Decoder, MpStack};
use crate::nn::ParamInit;
use crate::scene::{AgentKind, BatchOffsets, Scene, FUTURE_STEPS};
use crate::scene_graph::{EdgeBlock, SceneGraph};
use crate::topology::{ExpansionPlan, DEFAULT_PLAN, DEFAULT_RADIUS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub heads: usize,
    pub modes: usize,
    pub future_steps: usize,
    pub decoder_hidden: usize,
    pub til_layers: usize,
    pub l2a_layers: usize,
    pub a2a_layers: usize,
    pub output_scale: f64,
    /// Agent–lane alignment radius in meters.
    pub radius: f64,
    /// Lane expansion plan over `{O, F}`.
    pub plan: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            heads: 4,
            modes: 6,
            future_steps: FUTURE_STEPS,
            decoder_hidden: 128,
            til_layers: 1,
            l2a_layers: 2,
            a2a_layers: 2,
            output_scale: 10.0,
            radius: DEFAULT_RADIUS,
            plan: DEFAULT_PLAN.to_string(),
        }
    }
}

impl ModelConfig {
    pub fn plan(&self) -> Result<ExpansionPlan> {
        self.plan.parse()
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.plan()?;
        if self.modes == 0 || self.future_steps == 0 || self.decoder_hidden == 0 {
            return Err(Error::Config("modes, future steps and decoder width must be positive".into()));
        }
        if !(self.radius >= 0.0 && self.radius.is_finite()) {
            return Err(Error::Config(format!("invalid radius {}", self.radius)));
        }
        Ok(())
    }
}

/// Predicted futures `[N_a, M, T_f, 2]` in each agent's local frame.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySet {
    pub agents: usize,
    pub modes: usize,
    pub steps: usize,
    pub data: Vec<f64>,
}

impl TrajectorySet {
    pub fn from_rows(t: &Tensor, modes: usize, steps: usize) -> Result<Self> {
        if t.rank() != 2 || t.shape()[1] != steps * 2 || t.shape()[0] % modes != 0 {
            return Err(Error::Contract(format!(
                "decoder rows {:?} do not form [N, {modes}, {steps}, 2]",
                t.shape()
            )));
        }
        Ok(Self {
            agents: t.shape()[0] / modes,
            modes,
            steps,
            data: t.data().to_vec(),
        })
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.agents, self.modes, self.steps, 2]
    }

    pub fn point(&self, agent: usize, mode: usize, step: usize) -> [f64; 2] {
        let i = ((agent * self.modes + mode) * self.steps + step) * 2;
        [self.data[i], self.data[i + 1]]
    }

    /// Flat `steps × 2` slice for one agent and mode.
    pub fn mode(&self, agent: usize, mode: usize) -> &[f64] {
        let n = self.steps * 2;
        let i = (agent * self.modes + mode) * n;
        &self.data[i..i + n]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.shape(), self.data.clone()).expect("consistent shape")
    }

    pub fn select_agents(&self, range: std::ops::Range<usize>) -> TrajectorySet {
        let per = self.modes * self.steps * 2;
        TrajectorySet {
            agents: range.len(),
            modes: self.modes,
            steps: self.steps,
            data: self.data[range.start * per..range.end * per].to_vec(),
        }
    }

    /// One set per block of a batched prediction.
    pub fn split(&self, offsets: &BatchOffsets) -> Vec<TrajectorySet> {
        offsets
            .blocks
            .iter()
            .map(|b| self.select_agents(b.agents.clone()))
            .collect()
    }

    pub fn max_abs_diff(&self, other: &TrajectorySet) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Intermediate agent features of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub agents_encoded: Var,
    pub lanes_encoded: Var,
    pub lanes_after_til: Var,
    pub agents_after_l2a: Var,
    pub agents_after_a2a: Var,
    /// `[N_a · M, T_f · 2]`, agent-major then mode.
    pub trajectories: Var,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamRegistry,
    pub agent_enc: AgentEncoder,
    pub lane_enc: LaneEncoder,
    pub edge_enc: EdgeEncoder,
    pub til: MpStack,
    pub l2a: MpStack,
    pub a2a: MpStack,
    pub decoder: Decoder,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamRegistry::new();
        let mut init = ParamInit::new(&mut params, seed);
        let d = config.encoder.hidden_dim;
        let agent_enc = AgentEncoder::new(&mut init, &config.encoder);
        let lane_enc = LaneEncoder::new(&mut init, &config.encoder);
        let edge_enc = EdgeEncoder::new(&mut init, &config.encoder);
        let til = MpStack::new(&mut init, "til", config.til_layers, d, config.heads)?;
        let l2a = MpStack::new(&mut init, "l2a", config.l2a_layers, d, config.heads)?;
        let a2a = MpStack::new(&mut init, "a2a", config.a2a_layers, d, config.heads)?;
        let decoder = Decoder::new(
            &mut init,
            d,
            config.decoder_hidden,
            config.modes,
            config.future_steps,
            config.output_scale,
        );
        Ok(Self {
            config,
            params,
            agent_enc,
            lane_enc,
            edge_enc,
            til,
            l2a,
            a2a,
            decoder,
        })
    }

    /// Builds the graph with this model's radius and plan.
    pub fn graph(&self, scene: &Scene) -> Result<SceneGraph> {
        SceneGraph::build(scene, self.config.radius, &self.config.plan()?)
    }

    pub fn graph_batched(&self, scenes: &[Scene]) -> Result<SceneGraph> {
        SceneGraph::from_scenes(scenes, self.config.radius, &self.config.plan()?)
    }

    fn edge_embeddings(&self, g: &mut Graph, p: &Bound, edges: &EdgeBlock) -> Result<Option<Var>> {
        if edges.is_empty() {
            return Ok(None);
        }
        self.edge_enc.forward(g, p, &edges.geoms).map(Some)
    }

    /// Records the whole pipeline on `g` with parameters `p`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, sg: &SceneGraph) -> Result<ForwardVars> {
        let agents_encoded = self.agent_enc.forward(g, p, &sg.local.agents)?;
        let lanes_encoded = self.lane_enc.forward(g, p, &sg.local.lanes)?;

        let e = self.edge_embeddings(g, p, &sg.a2l)?;
        let lanes_after_til = self.til.forward(g, p, lanes_encoded, Some(agents_encoded), &sg.a2l, e)?;

        let e = self.edge_embeddings(g, p, &sg.l2a)?;
        let agents_after_l2a =
            self.l2a.forward(g, p, agents_encoded, Some(lanes_after_til), &sg.l2a, e)?;

        let e = self.edge_embeddings(g, p, &sg.a2a)?;
        let agents_after_a2a = self.a2a.forward(g, p, agents_after_l2a, None, &sg.a2a, e)?;

        let kinds: Vec<AgentKind> = sg.local.agents.iter().map(|a| a.kind).collect();
        let trajectories = self.decoder.forward(
            g,
            p,
            [agents_encoded, agents_after_l2a, agents_after_a2a],
            &kinds,
        )?;
        Ok(ForwardVars {
            agents_encoded,
            lanes_encoded,
            lanes_after_til,
            agents_after_l2a,
            agents_after_a2a,
            trajectories,
        })
    }

    /// Inference on a prepared graph.
    pub fn predict_graph(&self, sg: &SceneGraph) -> Result<TrajectorySet> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let out = self.forward(&mut g, &p, sg)?;
        let rows = g.value(out.trajectories);
        if !rows.all_finite() {
            return Err(Error::Numerical("non-finite prediction".into()));
        }
        TrajectorySet::from_rows(rows, self.config.modes, self.config.future_steps)
    }

    pub fn predict(&self, scene: &Scene) -> Result<TrajectorySet> {
        self.predict_graph(&self.graph(scene)?)
    }

    /// Writes parameters followed by any `extra` named tensors.
    pub fn save(&self, path: &Path, extra: &[(String, Tensor)]) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let own = self.params.iter().map(|(n, p)| (n, &p.value));
        let more = extra.iter().map(|(n, t)| (n.as_str(), t));
        write_checkpoint(std::io::BufWriter::new(file), own.chain(more))?;
        std::fs::write(config_path(path), serde_json::to_string_pretty(&self.config).expect("config serializes"))?;
        Ok(())
    }

    /// Restores a model from a checkpoint and its config sidecar (defaults
    /// when the sidecar is absent). Returns entries that are not parameters.
    pub fn load(path: &Path) -> Result<(Self, Vec<(String, Tensor)>)> {
        let cfg_path = config_path(path);
        let config = if cfg_path.exists() {
            let text = std::fs::read_to_string(&cfg_path)?;
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                context: cfg_path.display().to_string(),
                source: e,
            })?
        } else {
            ModelConfig::default()
        };
        let mut model = Model::new(config, 0)?;
        let entries = read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))?;
        let unknown = model.params.load_entries(&entries)?;
        let extra = entries.into_iter().filter(|(n, _)| unknown.contains(n)).collect();
        Ok((model, extra))
    }
}

/// `<checkpoint>.json` next to the checkpoint file.
pub fn config_path(checkpoint: &Path) -> std::path::PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".json");
    s.into()
}
