//! Solves a scenario from many random seeds and groups the equilibria it finds.
//!
//! `cargo run --release --example equilibria -- three 100`

use gamealign::harness::experiment::cluster_experiment;
use gamealign::harness::ScenarioConfig;

fn main() -> gamealign::Result<()> {
    let mut args = std::env::args().skip(1);
    let cfg = match args.next().as_deref() {
        Some("three") => ScenarioConfig::three_player(),
        Some("five") => ScenarioConfig::five_player(),
        _ => ScenarioConfig::two_player(),
    };
    let samples = args.next().and_then(|s| s.parse().ok()).unwrap_or(40);

    let out = cluster_experiment(&cfg, samples)?;
    let converged = out.samples.iter().filter(|s| s.converged).count();
    println!("{}: {converged}/{samples} seeds converged, {} clusters", cfg.name, out.report.k);
    for j in out.report.by_total_cost() {
        let c = &out.report.clusters[j];
        let costs: Vec<String> = c.mean_costs.iter().map(|v| format!("{v:.3}")).collect();
        println!(
            "  cluster {j}: {:>3} members, handedness {:+.2}, mean costs [{}]",
            c.members.len(),
            out.handedness[j],
            costs.join(", ")
        );
    }
    Ok(())
}
