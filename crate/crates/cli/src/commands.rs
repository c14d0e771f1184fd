use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use lanescene::loss::FutureTargets;
use lanescene::metrics::{metrics, Metrics, DEFAULT_MISS_THRESHOLD, HORIZONS};
use lanescene::model::{Model, ModelConfig, TrajectorySet};
use lanescene::relgeom::Pose;
use lanescene::scene::{load_scenes, Scene};
use lanescene::scene_graph::SceneGraph;
use lanescene::synth::{gen_dataset, NetworkKind, SynthConfig};
use lanescene::topology::{EdgeCensus, EdgeSets, ExpansionPlan, Step, DEFAULT_PLAN, DEFAULT_RADIUS};
use lanescene::trainer::{TrainConfig, Trainer};

use crate::alloc;
use crate::error::{file_err, CliError, Result};
use crate::svg::{Axis, LineChart, Series};

#[derive(Debug, Parser)]
#[command(
    name = "lanescene",
    version,
    about = "Lane-topology guided sparse scene graphs and multi-agent trajectory prediction"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the typed edge sets of one scene; writes edges.csv and census.json.
    BuildGraph(BuildGraphArgs),
    /// Edge counts (and optionally minFDE) over radii and expansion plans.
    Sweep(SweepArgs),
    /// Generate synthetic scenes with ground-truth futures as JSON lines.
    GenData(GenDataArgs),
    /// Train on a scene set; writes a checkpoint and a loss-curve CSV.
    Train(TrainArgs),
    /// Predict multimodal futures for every agent; writes JSON lines.
    Predict(PredictArgs),
    /// Forward-pass latency and memory over batched copies of one scene.
    Bench(BenchArgs),
    /// minADE / minFDE / miss rate per horizon.
    Eval(EvalArgs),
}

fn parse_plan(s: &str) -> std::result::Result<ExpansionPlan, String> {
    s.parse().map_err(|e: lanescene::Error| e.to_string())
}

fn parse_radius(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(r) if r.is_finite() && r >= 0.0 => Ok(r),
        _ => Err(format!("radius must be a non-negative number, got {s:?}")),
    }
}

fn parse_network(s: &str) -> std::result::Result<NetworkKind, String> {
    s.parse().map_err(|e: lanescene::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct BuildGraphArgs {
    /// Scene JSON (or JSON lines; see --index).
    pub scene: PathBuf,
    #[arg(long, default_value_t = DEFAULT_RADIUS, value_parser = parse_radius)]
    pub radius: f64,
    #[arg(long, default_value = DEFAULT_PLAN, value_parser = parse_plan)]
    pub plan: ExpansionPlan,
    /// Which scene of a multi-scene file.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Scene file or directory of scene files.
    pub scenes: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "5,10,30,50", value_parser = parse_radius)]
    pub radii: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "F,O,OF,OFF,OOO", value_parser = parse_plan)]
    pub plans: Vec<ExpansionPlan>,
    /// Also evaluate minFDE at every setting with this model.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Generator settings as JSON; individual flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_network)]
    pub network: Option<NetworkKind>,
    #[arg(long)]
    pub lanes_per_approach: Option<usize>,
    #[arg(long)]
    pub agents_min: Option<usize>,
    #[arg(long)]
    pub agents_max: Option<usize>,
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output JSON-lines file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training scenes (file or directory).
    pub data: PathBuf,
    /// Where to write the checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Continue from this checkpoint, optimizer state included.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Model settings as JSON (defaults otherwise).
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    #[arg(long, value_parser = parse_radius)]
    pub radius: Option<f64>,
    #[arg(long, value_parser = parse_plan)]
    pub plan: Option<ExpansionPlan>,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 3e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub lr_final: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub eps: f64,
    /// Linear learning-rate warmup steps.
    #[arg(long, default_value_t = 0)]
    pub warmup: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stop after this many optimizer steps in total.
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Loss-curve CSV (default: `<checkpoint>.loss.csv`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    pub scenes: PathBuf,
    /// Emit world coordinates instead of each agent's local frame.
    #[arg(long)]
    pub world: bool,
    /// Output JSON-lines file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    pub scenes: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MISS_THRESHOLD)]
    pub miss_threshold: f64,
    /// Metrics CSV; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    pub scene: PathBuf,
    /// Trained model; a freshly initialized one (see --seed) otherwise.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
    pub copies: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    pub repeats: usize,
    #[arg(long, default_value_t = 100)]
    pub warmup: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildGraph(a) => {
            let c = build_graph(&a)?;
            println!("{}", serde_json::to_string_pretty(&c)?);
        }
        Command::Sweep(a) => {
            let r = sweep(&a)?;
            for line in r.report_lines() {
                println!("{line}");
            }
        }
        Command::GenData(a) => {
            let n = gen_data(&a)?;
            println!("wrote {n} scenes to {}", a.out.display());
        }
        Command::Train(a) => {
            let r = train(&a)?;
            println!(
                "trained {} steps; final loss {}; checkpoint {}",
                r.steps,
                r.final_loss,
                a.checkpoint.display()
            );
        }
        Command::Predict(a) => {
            let n = predict(&a)?;
            println!("wrote {n} records to {}", a.out.display());
        }
        Command::Eval(a) => {
            let rows = eval(&a)?;
            if a.out.is_none() {
                print!("{}", metrics_csv(&rows)?);
            }
        }
        Command::Bench(a) => {
            let r = bench(&a)?;
            for row in &r.rows {
                println!(
                    "copies {:>3}: {:>6} nodes {:>8} edges  mean {:.3} ms  p95 {:.3} ms  per agent {:.4} ms  peak {} B",
                    row.copies,
                    row.agents + row.lanes,
                    row.census.a2l + row.census.l2l + row.census.l2l_f + row.census.l2a + row.census.a2a,
                    row.mean_ms,
                    row.p95_ms,
                    row.per_agent_ms,
                    row.peak_bytes.map_or("n/a".into(), |b| b.to_string())
                );
            }
            for note in &r.notes {
                println!("{note}");
            }
            if !r.counts_exact {
                return Err(CliError::Data("batched node/edge totals are not multiples of the single scene".into()));
            }
        }
    }
    Ok(())
}

/// Every scene in a file, or in all `.json`/`.jsonl` files of a directory
/// (sorted by name).
pub fn read_scenes(path: &Path) -> Result<Vec<Scene>> {
    if !path.exists() {
        return Err(CliError::File {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        });
    }
    let mut scenes = Vec::new();
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(file_err(path))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json" || e == "jsonl"))
            .filter(|p| !p.to_string_lossy().ends_with(".ckpt.json"))
            .collect();
        files.sort();
        for f in files {
            scenes.extend(load_scenes(&f)?);
        }
    } else {
        scenes = load_scenes(path)?;
    }
    if scenes.is_empty() {
        return Err(CliError::Data(format!("no scenes in {}", path.display())));
    }
    Ok(scenes)
}

fn load_model(path: &Path) -> Result<Model> {
    if !path.is_file() {
        return Err(CliError::File {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint not found"),
        });
    }
    Ok(Model::load(path)?.0)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(file_err(dir))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(file_err(path))
}

fn csv_text(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

// ---------------------------------------------------------------- build-graph

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GraphCensus {
    pub scene_id: String,
    pub radius: f64,
    pub plan: String,
    pub agents: usize,
    pub lanes: usize,
    #[serde(flatten)]
    pub edges: EdgeCensus,
}

pub fn build_graph(a: &BuildGraphArgs) -> Result<GraphCensus> {
    let scenes = read_scenes(&a.scene)?;
    let scene = scenes.get(a.index).ok_or_else(|| {
        CliError::Usage(format!("--index {} but {} holds {} scene(s)", a.index, a.scene.display(), scenes.len()))
    })?;
    let sets = EdgeSets::build(scene, a.radius, &a.plan)?;
    create_dir(&a.out)?;
    let edges = a.out.join("edges.csv");
    sets.write_csv(scene, fs::File::create(&edges).map_err(file_err(&edges))?)?;
    let census = GraphCensus {
        scene_id: scene.scene_id.clone(),
        radius: a.radius,
        plan: a.plan.to_string(),
        agents: scene.agents.len(),
        lanes: scene.lanes.len(),
        edges: sets.census(),
    };
    write_file(&a.out.join("census.json"), serde_json::to_string_pretty(&census)? + "\n")?;
    Ok(census)
}

// ---------------------------------------------------------------------- sweep

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub radius: f64,
    pub plan: ExpansionPlan,
    pub scenes: usize,
    /// Per-type edge counts averaged over scenes.
    pub a2l: f64,
    pub l2l: f64,
    pub l2l_f: f64,
    pub l2a: f64,
    pub a2a: f64,
    pub min_fde: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Number of exact set comparisons made.
    pub checks: usize,
    pub violations: Vec<String>,
}

impl SweepReport {
    pub fn report_lines(&self) -> Vec<String> {
        let mut out = vec![format!(
            "{} settings, {} subset checks, {} violations",
            self.rows.len(),
            self.checks,
            self.violations.len()
        )];
        out.extend(self.violations.iter().map(|v| format!("VIOLATION {v}")));
        out
    }
}

/// `fine ⊆ coarse` holds for every edge set when `fine` only ever replaces
/// an `O` of `coarse` by `F`, or when it is a prefix of `coarse`.
fn refines(fine: &ExpansionPlan, coarse: &ExpansionPlan) -> bool {
    if fine == coarse {
        return false;
    }
    if fine.is_prefix_of(coarse) {
        return true;
    }
    fine.len() == coarse.len()
        && fine
            .steps()
            .iter()
            .zip(coarse.steps())
            .all(|(f, c)| f == c || (*f == Step::Forward && *c == Step::Omni))
}

pub fn sweep(a: &SweepArgs) -> Result<SweepReport> {
    if a.radii.is_empty() || a.plans.is_empty() {
        return Err(CliError::Usage("need at least one radius and one plan".into()));
    }
    let scenes = read_scenes(&a.scenes)?;
    let model = a.checkpoint.as_deref().map(load_model).transpose()?;
    let mut radii = a.radii.clone();
    radii.sort_by(f64::total_cmp);
    radii.dedup();

    let mut sets: BTreeMap<(usize, usize), Vec<EdgeSets>> = BTreeMap::new();
    let mut rows = Vec::new();
    for (ri, &r) in radii.iter().enumerate() {
        for (pi, plan) in a.plans.iter().enumerate() {
            let per_scene = scenes
                .iter()
                .map(|s| EdgeSets::build(s, r, plan))
                .collect::<lanescene::Result<Vec<_>>>()?;
            let n = per_scene.len() as f64;
            let mean = |f: fn(&EdgeCensus) -> usize| per_scene.iter().map(|e| f(&e.census()) as f64).sum::<f64>() / n;
            let min_fde = match &model {
                Some(m) => {
                    let mut parts = Vec::new();
                    for s in &scenes {
                        let preds = m.predict_graph(&SceneGraph::build(s, r, plan)?)?;
                        let targets = FutureTargets::from_scene(s, m.config.future_steps)?;
                        parts.push(metrics(&preds, &targets, m.config.future_steps, DEFAULT_MISS_THRESHOLD));
                    }
                    let c = Metrics::combine(&parts);
                    (c.agents > 0).then_some(c.min_fde)
                }
                None => None,
            };
            rows.push(SweepRow {
                radius: r,
                plan: plan.clone(),
                scenes: scenes.len(),
                a2l: mean(|c| c.a2l),
                l2l: mean(|c| c.l2l),
                l2l_f: mean(|c| c.l2l_f),
                l2a: mean(|c| c.l2a),
                a2a: mean(|c| c.a2a),
                min_fde,
            });
            sets.insert((ri, pi), per_scene);
        }
    }

    let mut checks = 0;
    let mut violations = Vec::new();
    let mut check = |ok: bool, what: String| {
        checks += 1;
        if !ok {
            violations.push(what);
        }
    };
    for (pi, plan) in a.plans.iter().enumerate() {
        for ri in 1..radii.len() {
            let (lo, hi) = (&sets[&(ri - 1, pi)], &sets[&(ri, pi)]);
            for (si, (x, y)) in lo.iter().zip(hi).enumerate() {
                let tag = |t: &str| format!("{t} not monotone in r: plan {plan}, r {} -> {}, scene {si}", radii[ri - 1], radii[ri]);
                check(x.a2l.is_subset_of(&y.a2l), tag("a2l"));
                check(x.l2a.is_subset_of(&y.l2a), tag("l2a"));
                check(x.a2a.is_subset_of(&y.a2a), tag("a2a"));
                check(x.l2l_o == y.l2l_o && x.l2l_f == y.l2l_f, tag("l2l constant"));
            }
        }
    }
    for (ri, r) in radii.iter().enumerate() {
        for (pi, p) in a.plans.iter().enumerate() {
            for (qi, q) in a.plans.iter().enumerate() {
                if !refines(p, q) {
                    continue;
                }
                for (si, (x, y)) in sets[&(ri, pi)].iter().zip(&sets[&(ri, qi)]).enumerate() {
                    let tag = |t: &str| format!("{t}({p}) not within {t}({q}): r {r}, scene {si}");
                    check(x.l2a.is_subset_of(&y.l2a), tag("l2a"));
                    check(x.a2a.is_subset_of(&y.a2a), tag("a2a"));
                }
            }
        }
    }
    let report = SweepReport {
        rows,
        checks,
        violations,
    };

    create_dir(&a.out)?;
    write_file(&a.out.join("sweep.csv"), sweep_csv(&report.rows)?)?;
    write_file(&a.out.join("report.txt"), report.report_lines().join("\n") + "\n")?;
    write_file(&a.out.join("sweep_radius.svg"), radius_chart(&report.rows, &a.plans).render())?;
    write_file(&a.out.join("sweep_plan.svg"), plan_chart(&report.rows, &radii, &a.plans).render())?;
    Ok(report)
}

pub const SWEEP_CSV_HEADER: [&str; 9] = ["radius", "plan", "scenes", "a2l", "l2l", "l2l_f", "l2a", "a2a", "minFDE"];

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.radius.to_string(),
                r.plan.to_string(),
                r.scenes.to_string(),
                r.a2l.to_string(),
                r.l2l.to_string(),
                r.l2l_f.to_string(),
                r.l2a.to_string(),
                r.a2a.to_string(),
                opt(r.min_fde),
            ]
        })
        .collect();
    csv_text(&SWEEP_CSV_HEADER, &body)
}

fn radius_chart(rows: &[SweepRow], plans: &[ExpansionPlan]) -> LineChart {
    let mut series = Vec::new();
    for p in plans {
        let mine: Vec<&SweepRow> = rows.iter().filter(|r| &r.plan == p).collect();
        series.push(Series::new(format!("A2A {p}"), Axis::Left, mine.iter().map(|r| (r.radius, r.a2a)).collect()));
    }
    for p in plans {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| &r.plan == p)
            .filter_map(|r| r.min_fde.map(|m| (r.radius, m)))
            .collect();
        if !pts.is_empty() {
            series.push(Series::new(format!("minFDE {p}"), Axis::Right, pts));
        }
    }
    LineChart {
        title: "Edges against agent-lane radius".into(),
        x_label: "radius r (m)".into(),
        y_label: "mean A2A edges per scene".into(),
        y2_label: "minFDE (m)".into(),
        x_ticks: None,
        series,
    }
}

fn plan_chart(rows: &[SweepRow], radii: &[f64], plans: &[ExpansionPlan]) -> LineChart {
    let index = |p: &ExpansionPlan| plans.iter().position(|q| q == p).unwrap_or(0) as f64;
    let mut series = Vec::new();
    for &r in radii {
        let mine: Vec<&SweepRow> = rows.iter().filter(|x| x.radius == r).collect();
        series.push(Series::new(format!("A2A r={r}"), Axis::Left, mine.iter().map(|x| (index(&x.plan), x.a2a)).collect()));
        series.push(Series::new(format!("L2A r={r}"), Axis::Left, mine.iter().map(|x| (index(&x.plan), x.l2a)).collect()));
        let fde: Vec<(f64, f64)> = mine.iter().filter_map(|x| x.min_fde.map(|m| (index(&x.plan), m))).collect();
        if !fde.is_empty() {
            series.push(Series::new(format!("minFDE r={r}"), Axis::Right, fde));
        }
    }
    LineChart {
        title: "Edges against lane expansion plan".into(),
        x_label: "expansion plan".into(),
        y_label: "mean edges per scene".into(),
        y2_label: "minFDE (m)".into(),
        x_ticks: Some(plans.iter().enumerate().map(|(i, p)| (i as f64, p.to_string())).collect()),
        series,
    }
}

// ------------------------------------------------------------------- gen-data

pub fn gen_data(a: &GenDataArgs) -> Result<usize> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(file_err(p))?;
            serde_json::from_str(&text).map_err(|e| lanescene::Error::Parse {
                context: p.display().to_string(),
                source: e,
            })?
        }
        None => SynthConfig::default(),
    };
    if let Some(n) = a.network {
        cfg.network = n;
    }
    if let Some(l) = a.lanes_per_approach {
        cfg.lanes_per_approach = l;
    }
    if let Some(m) = a.agents_min {
        cfg.agents[0] = m;
    }
    if let Some(m) = a.agents_max {
        cfg.agents[1] = m;
    }
    let scenes = gen_dataset(&cfg, a.seed, a.count)?;
    let mut text = String::new();
    for s in &scenes {
        text.push_str(&s.to_json());
        text.push('\n');
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_file(&a.out, text)?;
    Ok(scenes.len())
}

// ---------------------------------------------------------------------- train

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub steps: usize,
    pub final_loss: f64,
    pub epoch_losses: Vec<f64>,
}

pub fn train(a: &TrainArgs) -> Result<TrainReport> {
    let scenes = read_scenes(&a.data)?;
    let cfg = TrainConfig {
        lr_init: a.lr,
        lr_final: a.lr_final,
        weight_decay: a.weight_decay,
        beta1: a.beta1,
        beta2: a.beta2,
        eps: a.eps,
        warmup_steps: a.warmup,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let mut trainer = match &a.resume {
        Some(path) => {
            if !path.is_file() {
                return Err(file_err(path)(std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint not found")));
            }
            if a.radius.is_some() || a.plan.is_some() || a.model_config.is_some() {
                eprintln!("note: model settings come from the resumed checkpoint");
            }
            Trainer::resume(path, scenes, cfg)?
        }
        None => {
            let mut mc: ModelConfig = match &a.model_config {
                Some(p) => {
                    let text = fs::read_to_string(p).map_err(file_err(p))?;
                    serde_json::from_str(&text).map_err(|e| lanescene::Error::Parse {
                        context: p.display().to_string(),
                        source: e,
                    })?
                }
                None => ModelConfig::default(),
            };
            if let Some(r) = a.radius {
                mc.radius = r;
            }
            if let Some(p) = &a.plan {
                mc.plan = p.to_string();
            }
            Trainer::new(Model::new(mc, a.seed)?, scenes, cfg)?
        }
    };

    let csv_path = a.out.clone().unwrap_or_else(|| {
        let mut s = a.checkpoint.as_os_str().to_owned();
        s.push(".loss.csv");
        PathBuf::from(s)
    });
    let file = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(trainer.step > 0)
        .truncate(trainer.step == 0)
        .open(&csv_path)
        .map_err(file_err(&csv_path))?;
    let mut csv = BufWriter::new(file);
    let bpe = trainer.batches_per_epoch();
    let first_epoch = trainer.step / bpe;
    let logs = trainer.run(&mut csv, a.max_steps)?;
    csv.flush()?;

    let mut epoch_losses = Vec::new();
    for (e, chunk) in logs.chunks(bpe).enumerate() {
        let n = chunk.len() as f64;
        let mean = |f: fn(&lanescene::trainer::StepLog) -> f64| chunk.iter().map(f).sum::<f64>() / n;
        let loss = mean(|l| l.loss);
        eprintln!(
            "epoch {:>4}: loss {:.5}  minADE {:.3}  minFDE {:.3}  MR {:.3}",
            first_epoch + e,
            loss,
            mean(|l| l.metrics.min_ade),
            mean(|l| l.metrics.min_fde),
            mean(|l| l.metrics.miss_rate)
        );
        epoch_losses.push(loss);
    }
    if let Some(dir) = a.checkpoint.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    trainer.save(&a.checkpoint)?;
    Ok(TrainReport {
        steps: trainer.step,
        final_loss: logs.last().map_or(f64::NAN, |l| l.loss),
        epoch_losses,
    })
}

// -------------------------------------------------------------------- predict

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct PredictionRecord {
    pub scene_id: String,
    pub agent_id: i64,
    /// `"agent"` (each agent's current pose) or `"world"`.
    pub frame: String,
    /// `[modes][steps][x, y]`.
    pub modes: Vec<Vec<[f64; 2]>>,
}

pub fn prediction_records(scene: &Scene, preds: &TrajectorySet, world: bool) -> Vec<PredictionRecord> {
    scene
        .agents
        .iter()
        .enumerate()
        .map(|(i, agent)| {
            let pose: Pose = agent.current_pose();
            let modes = (0..preds.modes)
                .map(|m| {
                    (0..preds.steps)
                        .map(|t| {
                            let p = preds.point(i, m, t);
                            if world {
                                pose.to_global(p)
                            } else {
                                p
                            }
                        })
                        .collect()
                })
                .collect();
            PredictionRecord {
                scene_id: scene.scene_id.clone(),
                agent_id: agent.id,
                frame: if world { "world" } else { "agent" }.into(),
                modes,
            }
        })
        .collect()
}

pub fn predict(a: &PredictArgs) -> Result<usize> {
    let model = load_model(&a.checkpoint)?;
    let scenes = read_scenes(&a.scenes)?;
    let file = fs::File::create(&a.out).map_err(file_err(&a.out))?;
    let mut out = BufWriter::new(file);
    let mut n = 0;
    for scene in &scenes {
        let preds = model.predict(scene)?;
        for rec in prediction_records(scene, &preds, a.world) {
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
            n += 1;
        }
    }
    out.flush()?;
    Ok(n)
}

// ----------------------------------------------------------------------- eval

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    /// A horizon in steps, or `"mean"` over the horizons.
    pub horizon: String,
    pub metrics: Metrics,
}

pub const METRICS_CSV_HEADER: [&str; 5] = ["horizon", "minADE", "minFDE", "MR", "agents"];

pub fn metrics_csv(rows: &[EvalRow]) -> Result<String> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.horizon.clone(),
                r.metrics.min_ade.to_string(),
                r.metrics.min_fde.to_string(),
                r.metrics.miss_rate.to_string(),
                r.metrics.agents.to_string(),
            ]
        })
        .collect();
    csv_text(&METRICS_CSV_HEADER, &body)
}

pub fn eval(a: &EvalArgs) -> Result<Vec<EvalRow>> {
    let model = load_model(&a.checkpoint)?;
    let scenes = read_scenes(&a.scenes)?;
    let steps = model.config.future_steps;
    let mut per_horizon: Vec<Vec<Metrics>> = vec![Vec::new(); HORIZONS.len()];
    for scene in &scenes {
        let preds = model.predict(scene)?;
        let targets = FutureTargets::from_scene(scene, steps)?;
        for (h, parts) in HORIZONS.iter().zip(per_horizon.iter_mut()) {
            parts.push(metrics(&preds, &targets, *h, a.miss_threshold));
        }
    }
    let mut rows: Vec<EvalRow> = HORIZONS
        .iter()
        .zip(&per_horizon)
        .filter(|(h, _)| **h <= steps)
        .map(|(h, parts)| EvalRow {
            horizon: h.to_string(),
            metrics: Metrics::combine(parts),
        })
        .collect();
    if rows.iter().all(|r| r.metrics.agents == 0) {
        return Err(CliError::Data("no agent has a ground-truth future".into()));
    }
    let k = rows.len() as f64;
    rows.push(EvalRow {
        horizon: "mean".into(),
        metrics: Metrics {
            min_ade: rows.iter().map(|r| r.metrics.min_ade).sum::<f64>() / k,
            min_fde: rows.iter().map(|r| r.metrics.min_fde).sum::<f64>() / k,
            miss_rate: rows.iter().map(|r| r.metrics.miss_rate).sum::<f64>() / k,
            agents: rows[0].metrics.agents,
        },
    });
    if let Some(out) = &a.out {
        write_file(out, metrics_csv(&rows)?)?;
    }
    Ok(rows)
}

// ---------------------------------------------------------------------- bench

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub copies: usize,
    pub agents: usize,
    pub lanes: usize,
    pub census: EdgeCensus,
    pub build_ms: f64,
    pub mean_ms: f64,
    pub min_ms: f64,
    pub p95_ms: f64,
    pub per_agent_ms: f64,
    /// Allocation high-water mark of one forward pass, when the counting
    /// allocator is installed.
    pub peak_bytes: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Every row's node and edge totals are exactly `copies ×` the single scene.
    pub counts_exact: bool,
    /// Soft latency observations; never a failure.
    pub notes: Vec<String>,
}

pub const BENCH_CSV_HEADER: [&str; 15] = [
    "copies",
    "agents",
    "lanes",
    "a2l",
    "l2l",
    "l2l_f",
    "l2a",
    "a2a",
    "build_ms",
    "mean_ms",
    "min_ms",
    "p95_ms",
    "per_agent_ms",
    "peak_bytes",
    "counts_exact",
];

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let i = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[i]
}

pub fn bench(a: &BenchArgs) -> Result<BenchReport> {
    if a.copies.is_empty() || a.copies.contains(&0) || a.repeats == 0 {
        return Err(CliError::Usage("--copies must be positive and --repeats at least 1".into()));
    }
    let model = match &a.checkpoint {
        Some(p) => load_model(p)?,
        None => Model::new(ModelConfig::default(), a.seed)?,
    };
    let scenes = read_scenes(&a.scene)?;
    let scene = scenes
        .get(a.index)
        .ok_or_else(|| CliError::Usage(format!("--index {} out of range ({} scenes)", a.index, scenes.len())))?;
    let base = model.graph(scene)?;
    let base_census = base.edges.census();
    let counting = alloc::installed();

    let mut rows = Vec::new();
    let mut counts_exact = true;
    for &k in &a.copies {
        let copies = vec![scene.clone(); k];
        let t0 = Instant::now();
        let sg = model.graph_batched(&copies)?;
        let build_ms = t0.elapsed().as_secs_f64() * 1e3;
        let census = sg.edges.census();
        let exact = sg.num_agents() == k * base.num_agents()
            && sg.num_lanes() == k * base.num_lanes()
            && census.a2l == k * base_census.a2l
            && census.l2l == k * base_census.l2l
            && census.l2l_f == k * base_census.l2l_f
            && census.l2a == k * base_census.l2a
            && census.a2a == k * base_census.a2a;
        counts_exact &= exact;

        for _ in 0..a.warmup {
            model.predict_graph(&sg)?;
        }
        let peak_bytes = if counting {
            let before = alloc::reset_peak();
            model.predict_graph(&sg)?;
            Some(alloc::peak() - before)
        } else {
            None
        };
        let mut times = Vec::with_capacity(a.repeats);
        for _ in 0..a.repeats {
            let t = Instant::now();
            std::hint::black_box(model.predict_graph(&sg)?);
            times.push(t.elapsed().as_secs_f64() * 1e3);
        }
        times.sort_by(f64::total_cmp);
        let mean_ms = times.iter().sum::<f64>() / times.len() as f64;
        rows.push(BenchRow {
            copies: k,
            agents: sg.num_agents(),
            lanes: sg.num_lanes(),
            census,
            build_ms,
            mean_ms,
            min_ms: times[0],
            p95_ms: percentile(&times, 0.95),
            per_agent_ms: mean_ms / sg.num_agents().max(1) as f64,
            peak_bytes,
        });
    }

    let mut notes = Vec::new();
    if !counting {
        notes.push("note: counting allocator not installed; peak memory not reported".into());
    }
    let by_copies = |k: usize| rows.iter().find(|r| r.copies == k);
    if let (Some(one), Some(two)) = (by_copies(1), by_copies(2)) {
        let ok = two.mean_ms < 2.0 * one.mean_ms * 1.5;
        notes.push(format!(
            "latency(2 copies) {:.3} ms vs 1 copy {:.3} ms: {}",
            two.mean_ms,
            one.mean_ms,
            if ok { "within sub-linear bound" } else { "FLAG: above 3x single-scene latency" }
        ));
    }
    for w in rows.windows(2) {
        if w[1].copies > w[0].copies && w[1].per_agent_ms > 2.0 * w[0].per_agent_ms {
            notes.push(format!(
                "FLAG: per-agent latency rose beyond the 2x noise band from {} to {} copies ({:.4} -> {:.4} ms)",
                w[0].copies, w[1].copies, w[0].per_agent_ms, w[1].per_agent_ms
            ));
        }
    }

    create_dir(&a.out)?;
    write_file(&a.out.join("bench.csv"), bench_csv(&rows, counts_exact)?)?;
    write_file(&a.out.join("bench.svg"), bench_chart(&rows).render())?;
    Ok(BenchReport {
        rows,
        counts_exact,
        notes,
    })
}

pub fn bench_csv(rows: &[BenchRow], counts_exact: bool) -> Result<String> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.copies.to_string(),
                r.agents.to_string(),
                r.lanes.to_string(),
                r.census.a2l.to_string(),
                r.census.l2l.to_string(),
                r.census.l2l_f.to_string(),
                r.census.l2a.to_string(),
                r.census.a2a.to_string(),
                r.build_ms.to_string(),
                r.mean_ms.to_string(),
                r.min_ms.to_string(),
                r.p95_ms.to_string(),
                r.per_agent_ms.to_string(),
                r.peak_bytes.map_or(String::new(), |b| b.to_string()),
                counts_exact.to_string(),
            ]
        })
        .collect();
    csv_text(&BENCH_CSV_HEADER, &body)
}

fn bench_chart(rows: &[BenchRow]) -> LineChart {
    let mut series = vec![
        Series::new("mean forward (ms)", Axis::Left, rows.iter().map(|r| (r.copies as f64, r.mean_ms)).collect()),
        Series::new("p95 forward (ms)", Axis::Left, rows.iter().map(|r| (r.copies as f64, r.p95_ms)).collect()),
    ];
    let mem: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.peak_bytes.map(|b| (r.copies as f64, b as f64 / (1024.0 * 1024.0))))
        .collect();
    if !mem.is_empty() {
        series.push(Series::new("peak alloc (MiB)", Axis::Right, mem));
    }
    LineChart {
        title: "Forward-pass scaling over batched copies".into(),
        x_label: "copies".into(),
        y_label: "latency (ms)".into(),
        y2_label: "peak allocation (MiB)".into(),
        x_ticks: Some(rows.iter().map(|r| (r.copies as f64, r.copies.to_string())).collect()),
        series,
    }
}
