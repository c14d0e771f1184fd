//! Overfit a handful of synthetic scenes and report loss-curve monotonicity.
//! Usage: overfit [lr] [batch] [steps]; env B1, B2, EPS, WARMUP override Adam.

use std::time::Instant;

use lanescene::model::{Model, ModelConfig};
use lanescene::synth::{gen_dataset, SynthConfig};
use lanescene::trainer::{epoch_means, TrainConfig, Trainer};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map_or(1e-3, |s| s.parse().unwrap());
    let bs: usize = args.get(2).map_or(8, |s| s.parse().unwrap());
    let steps: usize = args.get(3).map_or(2000, |s| s.parse().unwrap());
    let synth = SynthConfig {
        lanes_per_approach: 1,
        agents: [2, 4],
        speed: [3.0, 8.0],
        approach_length: 50.0,
        ..SynthConfig::default()
    };
    let scenes = gen_dataset(&synth, 0, 8).unwrap();
    let n_agents: usize = scenes.iter().map(|s| s.agents.len()).sum();
    let n_lanes: usize = scenes.iter().map(|s| s.lanes.len()).sum();
    println!("agents {n_agents} lanes {n_lanes}");
    let model = Model::new(ModelConfig::default(), 0).unwrap();
    println!("params {}", model.params.numel());
    let bpe = 8usize.div_ceil(bs);
    let env = |k: &str, d: f64| std::env::var(k).map_or(d, |v| v.parse().unwrap());
    let cfg = TrainConfig {
        lr_init: lr,
        batch_size: bs,
        epochs: steps / bpe,
        beta1: env("B1", 0.9),
        beta2: env("B2", 0.999),
        eps: env("EPS", 1e-8),
        warmup_steps: env("WARMUP", 0.0) as usize,
        ..Default::default()
    };
    let mut t = Trainer::new(model, scenes, cfg).unwrap();
    let start = Instant::now();
    let mut logs = Vec::new();
    while t.step < t.total_steps() {
        let l = t.train_step().unwrap();
        if l.step % 500 == 0 {
            println!("{:5} {:8.2}s lr {:.2e} loss {:.4} fde {:.3} mr {:.3}", l.step, start.elapsed().as_secs_f64(), l.lr, l.loss, l.metrics.min_fde, l.metrics.miss_rate);
        }
        logs.push(l);
    }
    let means = epoch_means(&logs, bpe);
    let skip = 100 / bpe;
    let viol: Vec<usize> = (skip + 1..means.len()).filter(|&i| means[i] >= means[i - 1]).collect();
    println!("violations after 100: {} {:?}", viol.len(), &viol[viol.len().saturating_sub(20)..]);
    let worst = viol.iter().map(|&i| (means[i] - means[i - 1]) / means[i - 1]).fold(0.0, f64::max);
    println!("worst relative rise {worst:.3e}; means at 100/500/1000/end: {:?}", [means[skip], means[500 / bpe], means[1000 / bpe], *means.last().unwrap()]);
    let last = logs.last().unwrap();
    println!("final loss {:.5} fde {:.4} mr {} time {:.1}s", last.loss, last.metrics.min_fde, last.metrics.miss_rate, start.elapsed().as_secs_f64());
}
