//! Watches a crossing and infers which equilibrium the players follow, then
//! compares the MAP prediction against a single guessed equilibrium.

use gamealign::harness::experiment::run_error_curve;
use gamealign::harness::sim::{run_prediction, Mode};
use gamealign::harness::ScenarioConfig;

fn main() -> gamealign::Result<()> {
    let mut cfg = ScenarioConfig::two_player();
    cfg.simulation_horizon = 3.0;
    cfg.particles = 20;
    let run = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);

    let inferred = run_prediction(&cfg, run, Mode::Inference)?;
    for r in inferred.records.iter().filter(|r| r.prediction.is_some()).step_by(5) {
        let best = r.particles.iter().map(|p| p.weight).fold(0.0, f64::max);
        println!("t = {:.1} s: {} particles, MAP {:?} holds {best:.2}", r.step as f64 * cfg.dt, r.particles.len(), r.map_id.unwrap_or(0));
    }

    let guessed = run_prediction(&cfg, run, Mode::RandomBaseline)?;
    let (a, b) = (run_error_curve(&inferred.records)?, run_error_curve(&guessed.records)?);
    println!("{:>8} {:>10} {:>10}", "offset", "inferred", "guessed");
    for o in (0..a.len()).step_by(10) {
        println!("{:>7.1}s {:>10.4} {:>10.4}", o as f64 * cfg.dt, a[o], b[o]);
    }
    Ok(())
}
