//! Feedback Nash equilibrium of a two-player scalar LQ game where each player
//! wants the shared state at a different place.

use gamealign::cost::{QuadraticCost, TerminalCost};
use gamealign::dynamics::LinearizedDynamics;
use gamealign::lqgame::{lq_costs, solve_lq_game, LqGame, LqGameStage};
use nalgebra::{DMatrix, DVector};

fn m(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

fn v(x: f64) -> DVector<f64> {
    DVector::from_element(1, x)
}

fn main() -> gamealign::Result<()> {
    let steps = 20;
    // x' = x + 0.1 (u0 + u1); player 0 pulls toward +1, player 1 toward -1 and pays more for effort.
    let cost = |target: f64, effort: [f64; 2]| QuadraticCost {
        value: 0.0,
        q: m(1.0),
        l: v(-target),
        control_hessians: vec![m(effort[0]), m(effort[1])],
        control_gradients: vec![v(0.0), v(0.0)],
    };
    let stage = LqGameStage {
        dynamics: LinearizedDynamics { a: m(1.0), b: vec![m(0.1), m(0.1)] },
        costs: vec![cost(1.0, [0.1, 0.0]), cost(-1.0, [0.0, 0.4])],
    };
    let game = LqGame {
        stages: vec![stage; steps],
        terminal: vec![TerminalCost { value: 0.0, q: m(5.0), l: v(-5.0) }, TerminalCost { value: 0.0, q: m(5.0), l: v(5.0) }],
    };
    let strategies = solve_lq_game(&game)?;

    let mut x = 0.0;
    println!("{:>4} {:>9} {:>9} {:>9}", "t", "x", "u0", "u1");
    for t in 0..steps {
        let u: Vec<f64> = strategies.iter().map(|s| -s.gains[t][(0, 0)] * x - s.offsets[t][0]).collect();
        println!("{t:>4} {x:>9.4} {:>9.4} {:>9.4}", u[0], u[1]);
        x += 0.1 * (u[0] + u[1]);
    }
    println!("final x {x:.4} (the cheaper-effort player wins the tug of war)");
    let c = lq_costs(&game, &strategies);
    println!("costs from x = 0: {:.4} {:.4}", c[0], c[1]);
    Ok(())
}
