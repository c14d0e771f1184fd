//! Best-of-M Huber loss over multimodal trajectories.

use autodiff::{Graph, Tensor, Var};

use crate::error::{Error, Result};
use crate::scene::Scene;

pub const DEFAULT_HUBER_DELTA: f64 = 1.0;

/// Ground-truth futures `[N_a, T_f, 2]` in each agent's local frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FutureTargets {
    pub agents: usize,
    pub steps: usize,
    /// Row-major `[agent][step][x, y]`.
    pub points: Vec<f64>,
    /// `[agent][step]`.
    pub valid: Vec<bool>,
}

impl FutureTargets {
    pub fn new(agents: usize, steps: usize, points: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if points.len() != agents * steps * 2 || valid.len() != agents * steps {
            return Err(Error::Contract(format!(
                "targets for {agents} agents x {steps} steps given {} coords and {} flags",
                points.len(),
                valid.len()
            )));
        }
        Ok(Self {
            agents,
            steps,
            points,
            valid,
        })
    }

    /// Localizes every agent's global future into its anchor frame. Agents
    /// without a recorded future are fully invalid. Futures must hold at
    /// least `steps` points.
    pub fn from_scene(scene: &Scene, steps: usize) -> Result<Self> {
        let mut points = Vec::with_capacity(scene.agents.len() * steps * 2);
        let mut valid = Vec::with_capacity(scene.agents.len() * steps);
        for a in &scene.agents {
            let anchor = a.current_pose();
            match &a.future {
                Some(f) if f.len() >= steps => {
                    for fp in &f[..steps] {
                        let q = anchor.to_local(fp.p);
                        points.extend(q);
                        valid.push(fp.valid);
                    }
                }
                Some(f) => {
                    return Err(Error::InvalidScene(format!(
                        "agent {}: future has {} points, need {steps}",
                        a.id,
                        f.len()
                    )))
                }
                None => {
                    points.extend(std::iter::repeat(0.0).take(steps * 2));
                    valid.extend(std::iter::repeat(false).take(steps));
                }
            }
        }
        Self::new(scene.agents.len(), steps, points, valid)
    }

    pub fn point(&self, agent: usize, step: usize) -> [f64; 2] {
        let i = (agent * self.steps + step) * 2;
        [self.points[i], self.points[i + 1]]
    }

    pub fn is_valid(&self, agent: usize, step: usize) -> bool {
        self.valid[agent * self.steps + step]
    }

    pub fn valid_count(&self, agent: usize) -> usize {
        self.valid[agent * self.steps..(agent + 1) * self.steps]
            .iter()
            .filter(|&&v| v)
            .count()
    }

    /// Concatenates per-scene targets in batch order.
    pub fn concat(parts: &[FutureTargets]) -> Result<Self> {
        let steps = parts.first().map_or(0, |p| p.steps);
        if parts.iter().any(|p| p.steps != steps) {
            return Err(Error::Contract("targets differ in horizon".into()));
        }
        Self::new(
            parts.iter().map(|p| p.agents).sum(),
            steps,
            parts.iter().flat_map(|p| p.points.iter().copied()).collect(),
            parts.iter().flat_map(|p| p.valid.iter().copied()).collect(),
        )
    }
}

/// Per agent: Huber error of every mode averaged over valid steps and both
/// coordinates; the lowest-error mode (first on ties) is kept; the result
/// is averaged over agents with at least one valid step.
///
/// `preds` holds `[N_a · M, T_f · 2]` rows, agent-major then mode.
pub fn mtp_loss(
    g: &mut Graph,
    preds: Var,
    targets: &FutureTargets,
    modes: usize,
    delta: f64,
) -> Result<Var> {
    let (n, t) = (targets.agents, targets.steps);
    if g.shape(preds) != [n * modes, t * 2] {
        return Err(Error::Contract(format!(
            "predictions {:?} vs targets [{n} x {modes}, {}]",
            g.shape(preds),
            t * 2
        )));
    }
    let supervised: Vec<usize> = (0..n).filter(|&a| targets.valid_count(a) > 0).collect();
    if supervised.is_empty() {
        return Err(Error::Contract("no agent has a valid future step".into()));
    }
    let rows: Vec<usize> = supervised
        .iter()
        .flat_map(|&a| (0..modes).map(move |m| a * modes + m))
        .collect();
    let width = t * 2;
    let mut gt = Vec::with_capacity(rows.len() * width);
    let mut weight = Vec::with_capacity(rows.len() * width);
    for &a in &supervised {
        let w = 1.0 / (2 * targets.valid_count(a)) as f64;
        let pts = &targets.points[a * width..(a + 1) * width];
        for _ in 0..modes {
            gt.extend_from_slice(pts);
            for s in 0..t {
                let v = if targets.is_valid(a, s) { w } else { 0.0 };
                weight.extend([v, v]);
            }
        }
    }
    let sel = g.gather_rows(preds, rows.into())?;
    let gt = g.constant(Tensor::new([sel_rows(&supervised, modes), width], gt)?);
    let weight = g.constant(Tensor::new([sel_rows(&supervised, modes), width], weight)?);
    let ones = g.constant(Tensor::full([width, 1], 1.0));
    let diff = g.sub(sel, gt)?;
    let h = g.huber(diff, delta);
    let h = g.mul(h, weight)?;
    let per_mode = g.matmul(h, ones)?;

    let vals = g.value(per_mode).data();
    let best: Vec<usize> = (0..supervised.len())
        .map(|k| {
            let row = &vals[k * modes..(k + 1) * modes];
            let mut arg = 0;
            for (m, &v) in row.iter().enumerate() {
                if v < row[arg] {
                    arg = m;
                }
            }
            k * modes + arg
        })
        .collect();
    let chosen = g.gather_rows(per_mode, best.into())?;
    Ok(g.mean_all(chosen))
}

fn sel_rows(supervised: &[usize], modes: usize) -> usize {
    supervised.len() * modes
}
