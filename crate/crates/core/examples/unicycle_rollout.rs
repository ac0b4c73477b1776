//! Two unicycles driven open loop through a crossing, with each player's cost.

use gamealign::harness::ScenarioConfig;
use gamealign::dynamics::simulate;
use nalgebra::DVector;

fn main() -> gamealign::Result<()> {
    let cfg = ScenarioConfig::two_player();
    let game = cfg.game()?;
    // Player 0 drifts left while braking, player 1 holds course.
    let u = DVector::from_vec(vec![0.1, -0.05, 0.0, 0.0]);
    let controls = vec![u; game.steps];
    let traj = simulate(&game.dynamics(), &cfg.initial_state(), &controls, game.dt)?;

    println!("{:>5} {:>8} {:>8} {:>8} {:>8}", "t", "x0", "y0", "x1", "y1");
    for (t, x) in traj.states.iter().enumerate().step_by(10) {
        println!("{:>5.1} {:>8.3} {:>8.3} {:>8.3} {:>8.3}", t as f64 * game.dt, x[0], x[1], x[4], x[5]);
    }
    for (i, c) in game.total_costs(&traj).iter().enumerate() {
        println!("player {i} cost {c:.3}");
    }
    Ok(())
}
