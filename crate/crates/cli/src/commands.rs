use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use tofg::geometry::Point2;
use tofg::graph::{build_tofg, Tofg};
use tofg::metrics::{poses_from_waypoints, pred_metrics, PredReport};
use tofg::model::{make_samples, train, Prediction, TofgGat};
use tofg::scene::{gen_synthetic, scenario_from_json, scenario_to_json, state_at, Scenario};
use tofg::simulator::{
    batch_eval, run as run_sim, ConstantSpeedPlanner, ExpertPlanner, ModelPlanner, Planner, StationaryPlanner,
};

use crate::config::RunConfig;
use crate::manifest::RunManifest;
use crate::{Cli, Command, PlannerKind, UsageError};

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(UsageError("--jobs must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().context("configuring worker threads")?;
    }
    let cfg = RunConfig::load(cli.config.as_deref())?.with_seed(cli.seed);
    cfg.validate()?;
    match &cli.command {
        Command::GenScenarios { kind, count } => gen_scenarios(cli, &cfg, *kind, *count),
        Command::BuildGraph { scenario, frames } => build_graph(cli, &cfg, scenario, *frames),
        Command::Train { data } => train_cmd(cli, &cfg, data),
        Command::Predict { checkpoint, scenario, frame } => predict(cli, &cfg, checkpoint, scenario, *frame),
        Command::Simulate { scenarios, planner, traces } => {
            simulate(cli, &cfg, scenarios, planner.planner, planner.checkpoint.as_deref(), *traces)
        }
        Command::ExportAttention { checkpoint, scenario, frame } => {
            export_attention(cli, &cfg, checkpoint, scenario, *frame)
        }
        Command::Config => {
            let text = serde_json::to_string_pretty(&cfg).expect("config serializes") + "\n";
            match &cli.out {
                Some(path) => crate::manifest::write_atomic(path, text.as_bytes()),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
    }
}

fn out_path(cli: &Cli) -> Result<&Path> {
    cli.out.as_deref().ok_or_else(|| UsageError("this command needs --out <path>".into()).into())
}

/// Manifest path next to an output file: `<dir>/<stem>.manifest.json`.
fn sidecar(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    out.with_file_name(format!("{stem}.manifest.json"))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn load_scenario(path: &Path, manifest: &mut RunManifest) -> Result<Scenario> {
    let bytes = read(path)?;
    manifest.input(path, &bytes);
    let text = String::from_utf8(bytes).with_context(|| format!("{} is not UTF-8", path.display()))?;
    Ok(scenario_from_json(&text, &path.display().to_string())?)
}

/// Scenario files named directly or found (non-recursively) in directories,
/// skipping manifests. Directory entries are sorted by name.
fn scenario_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()
                .with_context(|| format!("listing {}", p.display()))?;
            found.retain(|f| {
                let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                name.ends_with(".json") && !name.ends_with("manifest.json")
            });
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn load_scenarios(paths: &[PathBuf], manifest: &mut RunManifest) -> Result<Vec<Scenario>> {
    let files = scenario_files(paths)?;
    if files.is_empty() {
        bail!(UsageError("no scenario files found".into()));
    }
    files.iter().map(|f| load_scenario(f, manifest)).collect()
}

fn gen_scenarios(cli: &Cli, cfg: &RunConfig, kind: tofg::scene::ScenarioKind, count: usize) -> Result<()> {
    let dir = out_path(cli)?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let base = cli.seed.unwrap_or(0);
    let mut manifest = RunManifest::new("gen-scenarios", cfg, cli.seed);
    let docs: Vec<(String, String)> = (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let s = gen_synthetic(kind, base + i);
            (s.id.clone(), scenario_to_json(&s))
        })
        .collect();
    manifest.lap("generate");
    for (id, text) in &docs {
        manifest.output(&dir.join(format!("{id}.json")), text.as_bytes())?;
    }
    manifest.lap("write");
    manifest.detail("kind", kind.name());
    manifest.detail("count", count);
    manifest.detail("first_seed", base);
    manifest.write(&dir.join("manifest.json"))?;
    println!("wrote {count} {kind} scenarios to {}", dir.display());
    Ok(())
}

fn build_graph(cli: &Cli, cfg: &RunConfig, path: &Path, frames: Option<(i64, i64)>) -> Result<()> {
    let out = out_path(cli)?;
    let mut manifest = RunManifest::new("build-graph", cfg, cli.seed);
    let scenario = load_scenario(path, &mut manifest)?;
    let (a, b) = frames.unwrap_or_else(|| scenario.frame_span());
    let tofg = build_tofg(&scenario, a..=b, &cfg.graph).with_context(|| format!("scenario {}", scenario.id))?;
    manifest.lap("build");
    manifest.output(out, tofg.to_json().as_bytes())?;
    manifest.detail("scenario_id", &scenario.id);
    manifest.detail("frames", [a, b]);
    manifest.detail("node_count", tofg.node_count());
    manifest.detail("edge_counts", tofg.edge_counts());
    manifest.lap("write");
    manifest.write(&sidecar(out))?;
    let c = tofg.edge_counts();
    println!(
        "{} frames, {} nodes; edges: {} geometric, {} multiscale, {} interaction, {} temporal",
        tofg.frames.len(),
        tofg.node_count(),
        c.geometric,
        c.multiscale,
        c.interaction,
        c.temporal
    );
    Ok(())
}

fn train_cmd(cli: &Cli, cfg: &RunConfig, data: &[PathBuf]) -> Result<()> {
    let dir = out_path(cli)?;
    let mut manifest = RunManifest::new("train", cfg, cli.seed);
    let scenarios = load_scenarios(data, &mut manifest)?;
    let per: Vec<Result<Vec<_>>> = scenarios
        .par_iter()
        .map(|s| {
            make_samples(s, &cfg.graph, &cfg.model, cfg.train.sample_stride)
                .with_context(|| format!("scenario {}", s.id))
        })
        .collect();
    let mut corpus = Vec::new();
    for r in per {
        corpus.extend(r?);
    }
    manifest.lap("samples");
    let mut model = TofgGat::new(cfg.model.clone())?;
    let curve = train(&mut model, &corpus, &cfg.train)?;
    manifest.lap("train");

    let mut csv = String::from("epoch,mean_loss\n");
    for (e, l) in curve.iter().enumerate() {
        writeln!(csv, "{e},{l}").expect("string write");
    }
    let ck = serde_json::to_string(&model.checkpoint()).expect("checkpoint serializes");
    manifest.output(&dir.join("model.json"), ck.as_bytes())?;
    manifest.output(&dir.join("loss.csv"), csv.as_bytes())?;
    manifest.detail("samples", corpus.len());
    manifest.detail("scenarios", scenarios.len());
    manifest.lap("write");
    manifest.write(&dir.join("manifest.json"))?;
    if let (Some(first), Some(last)) = (curve.first(), curve.last()) {
        println!("trained on {} samples: loss {first:.4} -> {last:.4}", corpus.len());
    }
    Ok(())
}

fn load_model(path: &Path, manifest: &mut RunManifest) -> Result<TofgGat> {
    let bytes = read(path)?;
    manifest.input(path, &bytes);
    let ck = serde_json::from_slice(&bytes).with_context(|| format!("parsing checkpoint {}", path.display()))?;
    TofgGat::from_checkpoint(&ck).with_context(|| format!("checkpoint {}", path.display()))
}

/// Builds the model input at `frame` (default: first frame with a full history).
fn graph_at(cfg: &RunConfig, model: &TofgGat, scenario: &Scenario, frame: Option<i64>) -> Result<(i64, Tofg)> {
    let t = model.config().history as i64;
    let frame = frame.unwrap_or(scenario.ego().first_frame() + t - 1);
    let tofg = build_tofg(scenario, frame - t + 1..=frame, &cfg.graph).with_context(|| format!("scenario {}", scenario.id))?;
    Ok((frame, tofg))
}

fn predict_at(cfg: &RunConfig, model: &TofgGat, scenario: &Scenario, frame: Option<i64>) -> Result<(i64, Prediction)> {
    let (frame, tofg) = graph_at(cfg, model, scenario, frame)?;
    let p = model.predict(&tofg).with_context(|| format!("scenario {} frame {frame}", scenario.id))?;
    Ok((frame, p))
}

#[derive(Serialize)]
struct PredictionFile<'a> {
    scenario_id: &'a str,
    frame: i64,
    origin: Point2,
    waypoints: &'a [Point2],
    relative: &'a [Point2],
    /// Errors against the logged future when the log covers the horizon.
    metrics: Option<PredReport>,
}

fn predict(cli: &Cli, cfg: &RunConfig, checkpoint: &Path, path: &Path, frame: Option<i64>) -> Result<()> {
    let out = out_path(cli)?;
    let mut manifest = RunManifest::new("predict", cfg, cli.seed);
    let model = load_model(checkpoint, &mut manifest)?;
    let scenario = load_scenario(path, &mut manifest)?;
    let (frame, p) = predict_at(cfg, &model, &scenario, frame)?;
    manifest.lap("predict");
    let ego = scenario.ego();
    let truth: Option<Vec<_>> =
        (1..=p.waypoints.len() as i64).map(|k| state_at(ego, frame + k).map(|s| s.pose())).collect();
    let start = state_at(ego, frame).expect("graph input has the ego").pose();
    let metrics = truth.map(|t| pred_metrics(&poses_from_waypoints(start, &p.waypoints), &t)).transpose()?;
    let doc = PredictionFile {
        scenario_id: &scenario.id,
        frame,
        origin: start.position(),
        waypoints: &p.waypoints,
        relative: &p.relative,
        metrics,
    };
    manifest.output(out, serde_json::to_string_pretty(&doc).expect("prediction serializes").as_bytes())?;
    manifest.write(&sidecar(out))?;
    println!("{} waypoints for {} at frame {frame}", p.waypoints.len(), scenario.id);
    Ok(())
}

fn simulate(
    cli: &Cli,
    cfg: &RunConfig,
    paths: &[PathBuf],
    kind: Option<PlannerKind>,
    checkpoint: Option<&Path>,
    traces: bool,
) -> Result<()> {
    let dir = out_path(cli)?;
    let mut manifest = RunManifest::new("simulate", cfg, cli.seed);
    let model = checkpoint.map(|c| load_model(c, &mut manifest)).transpose()?;
    let scenarios = load_scenarios(paths, &mut manifest)?;
    let horizon = cfg.model.horizon;
    let planner: Box<dyn Planner + '_> = match (kind, &model) {
        (_, Some(m)) => Box::new(ModelPlanner { model: m, graph: cfg.graph.clone() }),
        (Some(PlannerKind::Oracle), None) => Box::new(ExpertPlanner { horizon }),
        (Some(PlannerKind::Stationary), None) => Box::new(StationaryPlanner { horizon }),
        (Some(PlannerKind::ConstantSpeed), None) => Box::new(ConstantSpeedPlanner { horizon }),
        (None, None) => bail!(UsageError("simulate needs --planner or --checkpoint".into())),
    };
    manifest.lap("load");
    let report = batch_eval(&scenarios, planner.as_ref(), &cfg.sim, &cfg.metrics)?;
    manifest.lap("simulate");
    if traces {
        let docs: Vec<Result<(String, String)>> = scenarios
            .par_iter()
            .filter(|s| report.rows.iter().any(|r| r.scenario_id == s.id))
            .map(|s| Ok((s.id.clone(), run_sim(s, planner.as_ref(), &cfg.sim)?.to_json())))
            .collect();
        for d in docs {
            let (id, text) = d?;
            manifest.output(&dir.join("traces").join(format!("{id}.json")), text.as_bytes())?;
        }
        manifest.lap("traces");
    }
    manifest.output(&dir.join("plan_metrics.csv"), report.to_csv().as_bytes())?;
    manifest.output(&dir.join("report.json"), serde_json::to_string_pretty(&report).expect("report serializes").as_bytes())?;
    manifest.detail("scenarios", scenarios.len());
    manifest.detail("auto_corrections", report.total_auto_corrections());
    manifest.detail("failures", report.failures.len());
    manifest.write(&dir.join("manifest.json"))?;
    if let Some(m) = &report.mean {
        println!(
            "{} scenarios: mean M_L2 {:.4} (max {:.4}), prog2goal {:.2} m, {} auto-corrections",
            report.rows.len(),
            m.l2.mean,
            m.l2.max,
            m.prog2goal,
            report.total_auto_corrections()
        );
    }
    if !report.failures.is_empty() {
        let list: Vec<String> = report.failures.iter().map(|f| format!("{}: {}", f.scenario_id, f.error)).collect();
        bail!("{} scenario(s) failed:\n  {}", list.len(), list.join("\n  "));
    }
    Ok(())
}

fn export_attention(cli: &Cli, cfg: &RunConfig, checkpoint: &Path, path: &Path, frame: Option<i64>) -> Result<()> {
    let out = out_path(cli)?;
    let mut manifest = RunManifest::new("export-attention", cfg, cli.seed);
    let model = load_model(checkpoint, &mut manifest)?;
    let scenario = load_scenario(path, &mut manifest)?;
    let (_, p) = predict_at(cfg, &model, &scenario, frame)?;
    let att = &p.attention;
    let mut csv = String::from("node_id,frame,x,y");
    for h in 0..att.heads.len() {
        write!(csv, ",head{h}").expect("string write");
    }
    csv.push_str(",mean\n");
    for (k, node) in att.nodes.iter().enumerate() {
        write!(csv, "{},{},{},{}", node.node, att.frame, node.midpoint.x, node.midpoint.y).expect("string write");
        for head in &att.heads {
            write!(csv, ",{}", head[k]).expect("string write");
        }
        writeln!(csv, ",{}", att.mean[k]).expect("string write");
    }
    manifest.output(out, csv.as_bytes())?;
    manifest.detail("nodes", att.nodes.len());
    manifest.write(&sidecar(out))?;
    println!("attention over {} nodes at frame {}", att.nodes.len(), att.frame);
    Ok(())
}
