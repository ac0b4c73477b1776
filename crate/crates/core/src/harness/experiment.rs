//! Experiment commands and the on-disk run archive.
//!
//! An archive is a directory holding `manifest.json` (command, mode, sizes,
//! code version and the full config), `config.toml`, one JSON-lines file per
//! record stream and CSV summaries. Replaying re-runs the experiment from the
//! manifest and compares every record line byte for byte; floats are written
//! in shortest round-trip form, so textual equality is bit equality.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analysis::{aggregate_curves, handedness, kmeans_cluster, median, position_error, select_k, ClusterReport, MeanSem};
use crate::error::{Error, Result};
use crate::harness::config::ScenarioConfig;
use crate::harness::sim::{run_planning, run_prediction, Mode, RunOutput, RunSummary, StepRecord};
use crate::ilqgames::ilq_solve;
use crate::inference::{sample_seeds, SeedParams};
use crate::trajectory::Trajectory;

pub const ARCHIVE_FORMAT: &str = "gamealign-archive";
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");
/// Largest cluster count tried by the elbow rule.
pub const MAX_CLUSTERS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Cluster,
    Predict,
    Plan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: String,
    pub command: Command,
    pub mode: Option<Mode>,
    /// Runs for `predict`/`plan`, samples for `cluster`.
    pub count: usize,
    pub config: ScenarioConfig,
}

/// One solved seed of a clustering experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub seed: SeedParams,
    pub converged: bool,
    pub iterations: usize,
    pub costs: Vec<f64>,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterOutcome {
    pub samples: Vec<SampleRecord>,
    pub report: ClusterReport,
    /// Handedness of every cluster representative, in cluster order.
    pub handedness: Vec<f64>,
}

/// Solves the game from `samples` random seeds and clusters the converged
/// equilibria; the cluster count comes from the elbow rule.
pub fn cluster_experiment(cfg: &ScenarioConfig, samples: usize) -> Result<ClusterOutcome> {
    cfg.validate()?;
    let game = cfg.game()?;
    let x0 = cfg.initial_state();
    let seeds = sample_seeds(&cfg.seeds, &game, samples, cfg.rng_seed)?;
    let records: Vec<SampleRecord> = seeds
        .into_par_iter()
        .enumerate()
        .map(|(index, (seed, profile))| {
            let r = ilq_solve(&game, &x0, &profile, &cfg.solver)?;
            Ok(SampleRecord {
                index,
                seed,
                converged: r.converged,
                iterations: r.iterations,
                costs: r.costs.clone(),
                trajectory: r.trajectory().clone(),
            })
        })
        .collect::<Result<_>>()?;
    let report = cluster_samples(&records, cfg.rng_seed)?;
    let center = scenario_center(cfg);
    let handedness = report.clusters.iter().map(|c| handedness(&c.representative_trajectory, center)).collect();
    Ok(ClusterOutcome { samples: records, report, handedness })
}

/// Clusters the converged samples; member indices refer to `samples`.
pub fn cluster_samples(samples: &[SampleRecord], rng_seed: u64) -> Result<ClusterReport> {
    let converged: Vec<&SampleRecord> = samples.iter().filter(|s| s.converged).collect();
    if converged.is_empty() {
        return Err(Error::NoConvergedSamples);
    }
    let trajectories: Vec<Trajectory> = converged.iter().map(|s| s.trajectory.clone()).collect();
    let costs: Vec<Vec<f64>> = converged.iter().map(|s| s.costs.clone()).collect();
    let features: Vec<_> = trajectories.iter().map(crate::analysis::trajectory_feature).collect();
    let k = select_k(&features, MAX_CLUSTERS, rng_seed)?;
    let mut report = kmeans_cluster(&trajectories, &costs, k, rng_seed)?;
    for c in &mut report.clusters {
        for m in c.members.iter_mut() {
            *m = converged[*m].index;
        }
        c.representative = converged[c.representative].index;
    }
    Ok(report)
}

/// Centroid of the initial positions, the center of the encounter.
pub fn scenario_center(cfg: &ScenarioConfig) -> [f64; 2] {
    let n = cfg.initial_states.len() as f64;
    let sx: f64 = cfg.initial_states.iter().map(|s| s[0]).sum();
    let sy: f64 = cfg.initial_states.iter().map(|s| s[1]).sum();
    [sx / n, sy / n]
}

/// Mean squared joint-position error at each prediction offset, averaged
/// over the prediction times of one run. Needs only the run's records.
pub fn run_error_curve(records: &[StepRecord]) -> Result<Vec<f64>> {
    let predicted: Vec<&StepRecord> = records.iter().filter(|r| r.prediction.is_some()).collect();
    let first = predicted.first().ok_or(Error::EmptyInput("prediction records"))?;
    let len = first.prediction.as_ref().map_or(0, Vec::len);
    let actual = |t: usize| -> Result<Vec<f64>> {
        let r = records.get(t).ok_or(Error::HorizonMismatch { expected: t + 1, got: records.len() })?;
        let n = r.state.len() / 4;
        Ok((0..n).flat_map(|i| [r.state[4 * i], r.state[4 * i + 1]]).collect())
    };
    let mut curve = vec![0.0; len];
    for r in &predicted {
        let pred = r.prediction.as_ref().expect("filtered");
        let truth = (0..len).map(|o| actual(r.step + o)).collect::<Result<Vec<_>>>()?;
        for (acc, e) in curve.iter_mut().zip(position_error(pred, &truth)?) {
            *acc += e / predicted.len() as f64;
        }
    }
    Ok(curve)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictOutcome {
    pub runs: Vec<RunOutput>,
    pub curves: Vec<Vec<f64>>,
    pub aggregate: Vec<MeanSem>,
}

pub fn predict_experiment(cfg: &ScenarioConfig, runs: usize, mode: Mode) -> Result<PredictOutcome> {
    cfg.validate()?;
    if runs == 0 {
        return Err(Error::InvalidArgument("need at least one run".into()));
    }
    let outputs: Vec<RunOutput> = (0..runs).into_par_iter().map(|r| run_prediction(cfg, r, mode)).collect::<Result<_>>()?;
    let curves = outputs.iter().map(|o| run_error_curve(&o.records)).collect::<Result<Vec<_>>>()?;
    let aggregate = aggregate_curves(&curves)?;
    Ok(PredictOutcome { runs: outputs, curves, aggregate })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub runs: Vec<RunOutput>,
    /// `costs[run][player]`.
    pub costs: Vec<Vec<f64>>,
}

impl PlanOutcome {
    pub fn median_costs(&self) -> Result<Vec<f64>> {
        let players = self.costs.first().ok_or(Error::EmptyInput("plan runs"))?.len();
        (0..players).map(|i| median(&self.costs.iter().map(|c| c[i]).collect::<Vec<_>>())).collect()
    }
}

pub fn plan_experiment(cfg: &ScenarioConfig, runs: usize, mode: Mode) -> Result<PlanOutcome> {
    cfg.validate()?;
    if runs == 0 {
        return Err(Error::InvalidArgument("need at least one run".into()));
    }
    let outputs: Vec<RunOutput> = (0..runs).into_par_iter().map(|r| run_planning(cfg, r, mode)).collect::<Result<_>>()?;
    let costs = outputs.iter().map(|o| o.summary.total_costs.clone()).collect();
    Ok(PlanOutcome { runs: outputs, costs })
}

fn archive_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Archive { path: path.to_path_buf(), message: message.into() }
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let f = File::open(path).map_err(|e| archive_err(path, e.to_string()))?;
    BufReader::new(f).lines().map(|l| l.map_err(Error::from)).collect()
}

/// Floats rendered with 17 significant digits.
fn sig17(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut f = File::create(dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut f, manifest)?;
    f.write_all(b"\n")?;
    fs::write(dir.join("config.toml"), manifest.config.to_toml_string()?)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| archive_err(&path, e.to_string()))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| archive_err(&path, e.to_string()))?;
    if m.format != ARCHIVE_FORMAT {
        return Err(archive_err(&path, format!("unknown archive format {:?}", m.format)));
    }
    Ok(m)
}

fn manifest(cfg: &ScenarioConfig, command: Command, mode: Option<Mode>, count: usize) -> Manifest {
    Manifest { format: ARCHIVE_FORMAT.into(), version: CODE_VERSION.into(), command, mode, count, config: cfg.clone() }
}

pub fn write_cluster_archive(dir: &Path, cfg: &ScenarioConfig, outcome: &ClusterOutcome) -> Result<()> {
    write_manifest(dir, &manifest(cfg, Command::Cluster, None, outcome.samples.len()))?;
    write_jsonl(&dir.join("samples.jsonl"), &outcome.samples)?;
    let mut f = File::create(dir.join("clusters.json"))?;
    serde_json::to_writer_pretty(&mut f, &outcome.report)?;
    let mut w = csv::Writer::from_path(dir.join("clusters.csv"))?;
    let players = cfg.players;
    let mut header = vec!["cluster".to_string(), "size".into(), "representative".into(), "handedness".into(), "total_cost".into()];
    header.extend((0..players).map(|i| format!("cost_{i}")));
    w.write_record(&header)?;
    for (j, c) in outcome.report.clusters.iter().enumerate() {
        let mut row = vec![j.to_string(), c.members.len().to_string(), c.representative.to_string(), sig17(outcome.handedness[j]), sig17(c.total_mean_cost())];
        row.extend(c.mean_costs.iter().map(|v| sig17(*v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("representatives.csv"))?;
    let mut header = vec!["cluster".to_string(), "step".into()];
    header.extend((0..players).flat_map(|i| [format!("px_{i}"), format!("py_{i}")]));
    w.write_record(&header)?;
    for (j, c) in outcome.report.clusters.iter().enumerate() {
        for (t, x) in c.representative_trajectory.states.iter().enumerate() {
            let mut row = vec![j.to_string(), t.to_string()];
            row.extend((0..players).flat_map(|i| [sig17(x[4 * i]), sig17(x[4 * i + 1])]));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn run_file(dir: &Path, run: usize) -> PathBuf {
    dir.join("runs").join(format!("run_{run:04}.jsonl"))
}

fn write_runs(dir: &Path, runs: &[RunOutput]) -> Result<()> {
    fs::create_dir_all(dir.join("runs"))?;
    for r in runs {
        write_jsonl(&run_file(dir, r.summary.run), &r.records)?;
    }
    let summaries: Vec<&RunSummary> = runs.iter().map(|r| &r.summary).collect();
    write_jsonl(&dir.join("summaries.jsonl"), &summaries)
}

pub fn write_predict_archive(dir: &Path, cfg: &ScenarioConfig, mode: Mode, outcome: &PredictOutcome) -> Result<()> {
    write_manifest(dir, &manifest(cfg, Command::Predict, Some(mode), outcome.runs.len()))?;
    write_runs(dir, &outcome.runs)?;
    let mut w = csv::Writer::from_path(dir.join("prediction_error.csv"))?;
    w.write_record(["offset_steps", "offset_s", "mean_squared_error", "sem"])?;
    for (o, m) in outcome.aggregate.iter().enumerate() {
        w.write_record([o.to_string(), sig17(o as f64 * cfg.dt), sig17(m.mean), sig17(m.sem)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_plan_archive(dir: &Path, cfg: &ScenarioConfig, mode: Mode, outcome: &PlanOutcome) -> Result<()> {
    write_manifest(dir, &manifest(cfg, Command::Plan, Some(mode), outcome.runs.len()))?;
    write_runs(dir, &outcome.runs)?;
    let mut w = csv::Writer::from_path(dir.join("costs.csv"))?;
    w.write_record(["run", "player", "total_cost"])?;
    for (run, costs) in outcome.costs.iter().enumerate() {
        for (player, c) in costs.iter().enumerate() {
            w.write_record([run.to_string(), player.to_string(), sig17(*c)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Loads the per-step records of one archived run.
pub fn read_run(dir: &Path, run: usize) -> Result<Vec<StepRecord>> {
    let path = run_file(dir, run);
    read_lines(&path)?
        .iter()
        .map(|l| serde_json::from_str(l).map_err(|e| archive_err(&path, e.to_string())))
        .collect()
}

pub fn read_summaries(dir: &Path) -> Result<Vec<RunSummary>> {
    let path = dir.join("summaries.jsonl");
    read_lines(&path)?
        .iter()
        .map(|l| serde_json::from_str(l).map_err(|e| archive_err(&path, e.to_string())))
        .collect()
}

pub fn read_samples(dir: &Path) -> Result<Vec<SampleRecord>> {
    let path = dir.join("samples.jsonl");
    read_lines(&path)?
        .iter()
        .map(|l| serde_json::from_str(l).map_err(|e| archive_err(&path, e.to_string())))
        .collect()
}

/// Where a replay first disagreed with the archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub file: String,
    /// Zero-based record index within the file (the step for run files).
    pub record: usize,
    /// JSON path of the first differing value inside the record.
    pub field: String,
    pub archived: String,
    pub replayed: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub passed: bool,
    pub command: Command,
    pub records_checked: usize,
    pub divergence: Option<Divergence>,
}

fn first_difference(a: &Value, b: &Value, path: String) -> Option<(String, String, String)> {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            for (k, va) in x {
                match y.get(k) {
                    Some(vb) => {
                        if let Some(d) = first_difference(va, vb, format!("{path}.{k}")) {
                            return Some(d);
                        }
                    }
                    None => return Some((format!("{path}.{k}"), va.to_string(), "<missing>".into())),
                }
            }
            y.keys().find(|k| !x.contains_key(*k)).map(|k| (format!("{path}.{k}"), "<missing>".into(), y[k].to_string()))
        }
        (Value::Array(x), Value::Array(y)) => {
            for (i, (va, vb)) in x.iter().zip(y).enumerate() {
                if let Some(d) = first_difference(va, vb, format!("{path}[{i}]")) {
                    return Some(d);
                }
            }
            (x.len() != y.len()).then(|| (format!("{path}.len"), x.len().to_string(), y.len().to_string()))
        }
        _ => (a != b).then(|| (path, a.to_string(), b.to_string())),
    }
}

fn compare_lines(file: &str, archived: &[String], replayed: &[String]) -> (usize, Option<Divergence>) {
    for (i, (a, b)) in archived.iter().zip(replayed).enumerate() {
        if a != b {
            let (field, av, bv) = match (serde_json::from_str::<Value>(a), serde_json::from_str::<Value>(b)) {
                (Ok(va), Ok(vb)) => first_difference(&va, &vb, "$".into()).unwrap_or(("$".into(), a.clone(), b.clone())),
                _ => ("$".into(), a.clone(), b.clone()),
            };
            return (i, Some(Divergence { file: file.into(), record: i, field, archived: av, replayed: bv }));
        }
    }
    if archived.len() != replayed.len() {
        let n = archived.len().min(replayed.len());
        return (
            n,
            Some(Divergence {
                file: file.into(),
                record: n,
                field: "$".into(),
                archived: format!("{} records", archived.len()),
                replayed: format!("{} records", replayed.len()),
            }),
        );
    }
    (archived.len(), None)
}

fn to_lines<T: Serialize>(items: &[T]) -> Result<Vec<String>> {
    items.iter().map(|i| serde_json::to_string(i).map_err(Error::from)).collect()
}

/// Re-runs the archived experiment, optionally with a different master seed,
/// and compares every record.
pub fn replay(dir: &Path, seed_override: Option<u64>) -> Result<ReplayReport> {
    let m = read_manifest(dir)?;
    if m.version != CODE_VERSION {
        return Err(archive_err(dir, format!("archive version {} differs from code version {CODE_VERSION}", m.version)));
    }
    let mut cfg = m.config.clone();
    if let Some(s) = seed_override {
        cfg.rng_seed = s;
    }
    let mut checked = 0;
    let mut check = |file: &str, archived: Vec<String>, replayed: Vec<String>| -> Option<Divergence> {
        let (n, d) = compare_lines(file, &archived, &replayed);
        checked += n;
        d
    };
    let divergence = match m.command {
        Command::Cluster => {
            let outcome = cluster_experiment(&cfg, m.count)?;
            check("samples.jsonl", read_lines(&dir.join("samples.jsonl"))?, to_lines(&outcome.samples)?)
        }
        Command::Predict | Command::Plan => {
            let mode = m.mode.ok_or_else(|| archive_err(dir, "run archive without mode"))?;
            let runs = match m.command {
                Command::Predict => predict_experiment(&cfg, m.count, mode)?.runs,
                _ => plan_experiment(&cfg, m.count, mode)?.runs,
            };
            let mut found = None;
            for r in &runs {
                let path = run_file(dir, r.summary.run);
                let name = path.strip_prefix(dir).unwrap_or(&path).display().to_string();
                if let Some(d) = check(&name, read_lines(&path)?, to_lines(&r.records)?) {
                    found = Some(d);
                    break;
                }
            }
            match found {
                Some(d) => Some(d),
                None => {
                    let summaries: Vec<&RunSummary> = runs.iter().map(|r| &r.summary).collect();
                    check("summaries.jsonl", read_lines(&dir.join("summaries.jsonl"))?, to_lines(&summaries)?)
                }
            }
        }
    };
    Ok(ReplayReport { passed: divergence.is_none(), command: m.command, records_checked: checked, divergence })
}
