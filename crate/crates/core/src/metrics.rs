//! minADE / minFDE / miss rate over multimodal predictions.

use serde::Serialize;

use crate::loss::FutureTargets;
use crate::model::TrajectorySet;
use crate::scene::dist;

pub const DEFAULT_MISS_THRESHOLD: f64 = 2.0;
/// Reported horizons in steps (3 s, 5 s, 8 s at 10 Hz).
pub const HORIZONS: [usize; 3] = [30, 50, 80];

/// Agent-averaged metrics. `agents` counts agents with a valid step inside
/// the horizon; the rest are skipped.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub min_ade: f64,
    pub min_fde: f64,
    pub miss_rate: f64,
    pub agents: usize,
}

impl Metrics {
    /// Agent-weighted mean of several results.
    pub fn combine(parts: &[Metrics]) -> Metrics {
        let n: usize = parts.iter().map(|m| m.agents).sum();
        if n == 0 {
            return Metrics::default();
        }
        let w = |f: fn(&Metrics) -> f64| parts.iter().map(|m| f(m) * m.agents as f64).sum::<f64>() / n as f64;
        Metrics {
            min_ade: w(|m| m.min_ade),
            min_fde: w(|m| m.min_fde),
            miss_rate: w(|m| m.miss_rate),
            agents: n,
        }
    }
}

/// Per agent over the first `horizon` steps: minADE uses the mode with the
/// lowest mean displacement; minFDE and the miss flag use the mode with the
/// lowest displacement at the last valid step. Ties go to the lowest mode.
pub fn metrics(preds: &TrajectorySet, targets: &FutureTargets, horizon: usize, miss_threshold: f64) -> Metrics {
    assert_eq!(preds.agents, targets.agents, "agent count mismatch");
    let horizon = horizon.min(preds.steps).min(targets.steps);
    let (mut ade_sum, mut fde_sum, mut misses, mut n) = (0.0, 0.0, 0usize, 0usize);
    for a in 0..targets.agents {
        let steps: Vec<usize> = (0..horizon).filter(|&s| targets.is_valid(a, s)).collect();
        let Some(&last) = steps.last() else { continue };
        let mut best_ade = f64::INFINITY;
        let mut best_fde = f64::INFINITY;
        for m in 0..preds.modes {
            let ade = steps
                .iter()
                .map(|&s| dist(preds.point(a, m, s), targets.point(a, s)))
                .sum::<f64>()
                / steps.len() as f64;
            let fde = dist(preds.point(a, m, last), targets.point(a, last));
            best_ade = best_ade.min(ade);
            best_fde = best_fde.min(fde);
        }
        ade_sum += best_ade;
        fde_sum += best_fde;
        misses += usize::from(best_fde > miss_threshold);
        n += 1;
    }
    if n == 0 {
        return Metrics::default();
    }
    Metrics {
        min_ade: ade_sum / n as f64,
        min_fde: fde_sum / n as f64,
        miss_rate: misses as f64 / n as f64,
        agents: n,
    }
}
