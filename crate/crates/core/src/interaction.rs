//! Gated attention message passing and the per-kind multimodal decoder.

use autodiff::{Bound, Graph, ParamId, Tensor, Var};

use crate::error::{Error, Result};
use crate::nn::{Linear, Mlp, ParamInit};
use crate::scene::AgentKind;
use crate::scene_graph::EdgeBlock;

const LN_EPS: f64 = 1e-5;

/// One round of attention message passing with a gated residual update.
///
/// For every target `i` with neighbors `N(i)`:
/// `α_ij = softmax_j(q_i · k_ij / √d_h)` per head, `m_i = LN(W_o Σ_j α_ij v_ij)`,
/// `g_i = σ(W_g [x_i; m_i])`, `x_i' = x_i + g_i ⊙ (m_i − x_i)`.
/// Keys see `[x_j; e_ij]`; values come from `φ([x_i; x_j; e_ij])`.
/// Targets without neighbors are returned untouched.
#[derive(Clone, Debug)]
pub struct MpLayer {
    pub query: Linear,
    pub key: Linear,
    pub value: Mlp,
    pub out: Linear,
    pub ln_gain: ParamId,
    pub ln_bias: ParamId,
    pub gate: Linear,
    pub dim: usize,
    pub heads: usize,
}

impl MpLayer {
    pub fn new(init: &mut ParamInit, name: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!("{heads} heads do not divide width {dim}")));
        }
        Ok(Self {
            query: Linear::new(init, &format!("{name}.query"), dim, dim),
            key: Linear::new(init, &format!("{name}.key"), 2 * dim, dim),
            value: Mlp::new(init, &format!("{name}.value"), &[3 * dim, dim, dim]),
            out: Linear::new(init, &format!("{name}.out"), dim, dim),
            ln_gain: init.constant(&format!("{name}.ln_gain"), &[dim], 1.0),
            ln_bias: init.constant(&format!("{name}.ln_bias"), &[dim], 0.0),
            gate: Linear::new(init, &format!("{name}.gate"), 2 * dim, dim),
            dim,
            heads,
        })
    }

    /// `[D, H]` block indicator summing each head's slice, and its transpose.
    fn head_maps(&self) -> (Tensor, Tensor) {
        let dh = self.dim / self.heads;
        let mut sum = Tensor::zeros([self.dim, self.heads]);
        let mut spread = Tensor::zeros([self.heads, self.dim]);
        for c in 0..self.dim {
            sum.data_mut()[c * self.heads + c / dh] = 1.0;
            spread.data_mut()[(c / dh) * self.dim + c] = 1.0;
        }
        (sum, spread)
    }

    /// `targets: [N_t, D]`, `sources: [N_s, D]`, `edge_emb: [E, D]` aligned
    /// with `edges`.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        targets: Var,
        sources: Var,
        edges: &EdgeBlock,
        edge_emb: Option<Var>,
    ) -> Result<Var> {
        let (nt, ns) = (g.shape(targets)[0], g.shape(sources)[0]);
        if nt != edges.num_targets || ns != edges.num_sources {
            return Err(Error::Contract(format!(
                "edge block built for {}/{} nodes, given {ns} sources and {nt} targets",
                edges.num_sources, edges.num_targets
            )));
        }
        if edges.is_empty() {
            return Ok(targets);
        }
        let e = match edge_emb {
            Some(e) if g.shape(e)[0] == edges.len() => e,
            Some(e) => {
                return Err(Error::Contract(format!(
                    "{} edge embeddings for {} edges",
                    g.shape(e)[0],
                    edges.len()
                )))
            }
            None => return Err(Error::Contract("edges present but no embeddings".into())),
        };
        let x = g.gather_rows(targets, edges.active.clone())?;
        let x_e = g.gather_rows(x, edges.seg.clone())?;
        let s_e = g.gather_rows(sources, edges.src.clone())?;

        let q = self.query.forward(g, p, x)?;
        let q = g.gather_rows(q, edges.seg.clone())?;
        let ks = g.concat(&[s_e, e])?;
        let k = self.key.forward(g, p, ks)?;
        let vs = g.concat(&[x_e, s_e, e])?;
        let v = self.value.forward(g, p, vs)?;

        let (sum, spread) = self.head_maps();
        let (sum, spread) = (g.constant(sum), g.constant(spread));
        let qk = g.mul(q, k)?;
        let scores = g.matmul(qk, sum)?;
        let scores = g.scale(scores, 1.0 / ((self.dim / self.heads) as f64).sqrt());
        let alpha = g.segment_softmax(scores, edges.seg.clone())?;
        let alpha = g.matmul(alpha, spread)?;
        let weighted = g.mul(alpha, v)?;
        let agg = g.segment_sum(weighted, edges.seg.clone(), edges.active.len())?;

        let m = self.out.forward(g, p, agg)?;
        let m = g.layer_norm(m, LN_EPS)?;
        let m = g.mul(m, p[self.ln_gain])?;
        let m = g.add(m, p[self.ln_bias])?;

        let gx = g.concat(&[x, m])?;
        let gate = self.gate.forward(g, p, gx)?;
        let gate = g.sigmoid(gate);
        let diff = g.sub(m, x)?;
        let step = g.mul(gate, diff)?;
        let updated = g.add(x, step)?;

        let all = g.concat_rows(&[targets, updated])?;
        Ok(g.gather_rows(all, edges.scatter.clone())?)
    }
}

/// Stacked layers over one edge block; edge embeddings are computed once by
/// the caller and shared by every layer of the stack.
#[derive(Clone, Debug)]
pub struct MpStack {
    pub layers: Vec<MpLayer>,
}

impl MpStack {
    pub fn new(init: &mut ParamInit, name: &str, depth: usize, dim: usize, heads: usize) -> Result<Self> {
        let layers = (0..depth)
            .map(|i| MpLayer::new(init, &format!("{name}.{i}"), dim, heads))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    /// Same-set stacks (agent → agent) refresh sources after every layer;
    /// cross-set stacks keep the source block fixed.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        targets: Var,
        sources: Option<Var>,
        edges: &EdgeBlock,
        edge_emb: Option<Var>,
    ) -> Result<Var> {
        let mut x = targets;
        for l in &self.layers {
            let src = sources.unwrap_or(x);
            x = l.forward(g, p, x, src, edges, edge_emb)?;
        }
        Ok(x)
    }
}

/// Per-kind heads: `[dyn; lane_ctx; interaction; mode_m] → T_f × 2` local positions.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub modes: Vec<ParamId>,
    pub heads: Vec<Mlp>,
    pub num_modes: usize,
    pub steps: usize,
    pub dim: usize,
    /// Fixed gain on head outputs so initial weights cover tens of meters.
    pub output_scale: f64,
}

impl Decoder {
    pub fn new(
        init: &mut ParamInit,
        dim: usize,
        hidden: usize,
        num_modes: usize,
        steps: usize,
        output_scale: f64,
    ) -> Self {
        let mut modes = Vec::new();
        let mut heads = Vec::new();
        for kind in AgentKind::ALL {
            let name = kind.name();
            modes.push(init.uniform(&format!("decoder.{name}.modes"), &[num_modes, dim], 1.0));
            heads.push(Mlp::new(
                init,
                &format!("decoder.{name}.head"),
                &[4 * dim, hidden, hidden, steps * 2],
            ));
        }
        Self {
            modes,
            heads,
            num_modes,
            steps,
            dim,
            output_scale,
        }
    }

    /// Returns `[N_a · M, T_f · 2]` rows ordered agent-major then mode.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        feats: [Var; 3],
        kinds: &[AgentKind],
    ) -> Result<Var> {
        let n = kinds.len();
        for f in feats {
            if g.shape(f) != [n, self.dim] {
                return Err(Error::Contract(format!(
                    "decoder input {:?}, expected [{n}, {}]",
                    g.shape(f),
                    self.dim
                )));
            }
        }
        let all = g.concat(&feats)?;
        let m = self.num_modes;
        let mut blocks = Vec::new();
        // row of the merged output holding (agent, mode)
        let mut place = vec![0usize; n * m];
        let mut filled = 0;
        for kind in AgentKind::ALL {
            let members: Vec<usize> = (0..n).filter(|&i| kinds[i] == kind).collect();
            if members.is_empty() {
                continue;
            }
            let agent_rows: Vec<usize> = members.iter().flat_map(|&i| std::iter::repeat(i).take(m)).collect();
            let mode_rows: Vec<usize> = (0..members.len()).flat_map(|_| 0..m).collect();
            let x = g.gather_rows(all, agent_rows.into())?;
            let modes = g.gather_rows(p[self.modes[kind.index()]], mode_rows.into())?;
            let x = g.concat(&[x, modes])?;
            let y = self.heads[kind.index()].forward(g, p, x)?;
            blocks.push(y);
            for (k, &i) in members.iter().enumerate() {
                for mode in 0..m {
                    place[i * m + mode] = filled + k * m + mode;
                }
            }
            filled += members.len() * m;
        }
        let merged = if blocks.len() == 1 {
            blocks[0]
        } else {
            g.concat_rows(&blocks)?
        };
        let ordered = g.gather_rows(merged, place.into())?;
        Ok(g.scale(ordered, self.output_scale))
    }
}
