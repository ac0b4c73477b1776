//! One roundabout encounter where player 0 is a robot. It either follows the
//! equilibrium it infers from the humans or commits to one chosen at random.

use gamealign::harness::sim::{run_planning, Mode};
use gamealign::harness::ScenarioConfig;

fn main() -> gamealign::Result<()> {
    let mut cfg = ScenarioConfig::three_player();
    cfg.particles = 20;
    let run = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);

    for (label, mode) in [("aligned", Mode::Inference), ("random", Mode::RandomBaseline)] {
        let out = run_planning(&cfg, run, mode)?;
        let switches = out.records.windows(2).filter(|w| w[0].map_id.is_some() && w[1].map_id.is_some() && w[0].map_id != w[1].map_id).count();
        let costs: Vec<String> = out.summary.total_costs.iter().map(|c| format!("{c:.2}")).collect();
        println!("{label:>8}: costs [{}], MAP switched {switches} times", costs.join(", "));
    }
    Ok(())
}
