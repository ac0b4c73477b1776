//! Archives a short prediction experiment, replays it, then corrupts one value
//! and shows where the replay disagrees.

use std::fs;

use gamealign::harness::experiment::{predict_experiment, replay, write_predict_archive};
use gamealign::harness::sim::Mode;
use gamealign::harness::ScenarioConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ScenarioConfig::two_player();
    cfg.simulation_horizon = 1.0;
    cfg.prediction_horizon = 2.0;
    cfg.particles = 4;
    let dir = std::env::temp_dir().join(format!("gamealign-replay-{}", std::process::id()));

    let outcome = predict_experiment(&cfg, 2, Mode::Inference)?;
    write_predict_archive(&dir, &cfg, Mode::Inference, &outcome)?;
    let clean = replay(&dir, None)?;
    println!("clean archive: passed = {}, {} records", clean.passed, clean.records_checked);

    let run = dir.join("runs/run_0001.jsonl");
    let text = fs::read_to_string(&run)?;
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut record: serde_json::Value = serde_json::from_str(&lines[3])?;
    let x = record["state"][2].as_f64().unwrap_or(0.0);
    record["state"][2] = serde_json::json!(f64::from_bits(x.to_bits() ^ 1));
    lines[3] = serde_json::to_string(&record)?;
    fs::write(&run, lines.join("\n") + "\n")?;

    let tampered = replay(&dir, None)?;
    println!("tampered archive: passed = {}", tampered.passed);
    if let Some(d) = tampered.divergence {
        println!("  first divergence in {} record {} at {}: {} vs {}", d.file, d.record, d.field, d.archived, d.replayed);
    }
    fs::remove_dir_all(&dir)?;
    Ok(())
}
