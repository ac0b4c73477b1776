mod common;

use common::{lqr_mismatch, random_matrix, random_single_player, random_spd, random_vector, stage_cost};
use gamealign::cost::TerminalCost;
use gamealign::dynamics::LinearizedDynamics;
use gamealign::lqgame::{lq_costs, solve_lq_game, solve_lq_game_detailed, verify_lq_nash, LqGame, LqGameStage};
use gamealign::Error;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn single_player_matches_lqr() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..20 {
        let game = random_single_player(&mut rng);
        let err = lqr_mismatch(&game);
        assert!(err < 1e-8, "trial {trial}: mismatch {err}");
    }
}

/// Two players, scalar state, `x' = a x + b0 u0 + b1 u1`.
struct Scalar2 {
    a: f64,
    b: [f64; 2],
    q: [f64; 2],
    l: [f64; 2],
    /// `r[i][j]`: player i's weight on player j's control.
    r: [[f64; 2]; 2],
    g: [f64; 2],
    qt: [f64; 2],
    lt: [f64; 2],
}

impl Scalar2 {
    fn game(&self, steps: usize) -> LqGame {
        let m = |v: f64| DMatrix::from_element(1, 1, v);
        let v = |x: f64| DVector::from_element(1, x);
        let stage = LqGameStage {
            dynamics: LinearizedDynamics { a: m(self.a), b: vec![m(self.b[0]), m(self.b[1])] },
            costs: (0..2)
                .map(|i| {
                    let grads = (0..2).map(|j| v(if i == j { self.g[i] } else { 0.0 })).collect();
                    stage_cost(m(self.q[i]), v(self.l[i]), vec![m(self.r[i][0]), m(self.r[i][1])], grads)
                })
                .collect(),
        };
        LqGame {
            stages: vec![stage; steps],
            terminal: (0..2).map(|i| TerminalCost { value: 0.0, q: m(self.qt[i]), l: v(self.lt[i]) }).collect(),
        }
    }

    fn stage_cost(&self, i: usize, x: f64, u: [f64; 2]) -> f64 {
        0.5 * self.q[i] * x * x + self.l[i] * x + 0.5 * (self.r[i][0] * u[0] * u[0] + self.r[i][1] * u[1] * u[1]) + self.g[i] * u[i]
    }

    /// Nash controls at `x` by iterated best responses against next-step values `(z, zeta)`.
    fn nash_at(&self, x: f64, z: [f64; 2], zeta: [f64; 2]) -> [f64; 2] {
        let mut u = [0.0, 0.0];
        for _ in 0..500 {
            for i in 0..2 {
                let j = 1 - i;
                let rest = self.a * x + self.b[j] * u[j];
                u[i] = -(self.g[i] + self.b[i] * (z[i] * rest + zeta[i])) / (self.r[i][i] + z[i] * self.b[i] * self.b[i]);
            }
        }
        u
    }
}

#[test]
fn two_player_scalar_matches_backward_induction() {
    let g = Scalar2 {
        a: 1.1,
        b: [0.5, -0.4],
        q: [1.0, 0.5],
        l: [0.2, -0.3],
        r: [[1.0, 0.3], [0.2, 2.0]],
        g: [0.1, -0.2],
        qt: [2.0, 1.0],
        lt: [-0.5, 0.4],
    };
    let steps = 2;
    let sol = solve_lq_game_detailed(&g.game(steps)).unwrap();
    let mut z = g.qt;
    let mut zeta = g.lt;
    for t in (0..steps).rev() {
        // Nash controls and values sampled at three states, then read back as affine/quadratic.
        let xs = [-1.0, 0.0, 1.0];
        let us: Vec<[f64; 2]> = xs.iter().map(|&x| g.nash_at(x, z, zeta)).collect();
        for i in 0..2 {
            let p = -(us[2][i] - us[0][i]) / 2.0;
            let alpha = -us[1][i];
            assert!((sol.strategies[i].gains[t][(0, 0)] - p).abs() < 1e-10, "step {t} player {i} gain");
            assert!((sol.strategies[i].offsets[t][0] - alpha).abs() < 1e-10, "step {t} player {i} offset");
        }
        let mut nz = [0.0; 2];
        let mut nzeta = [0.0; 2];
        for i in 0..2 {
            let v: Vec<f64> = xs
                .iter()
                .zip(&us)
                .map(|(&x, u)| {
                    let next = g.a * x + g.b[0] * u[0] + g.b[1] * u[1];
                    g.stage_cost(i, x, *u) + 0.5 * z[i] * next * next + zeta[i] * next
                })
                .collect();
            nz[i] = v[0] - 2.0 * v[1] + v[2];
            nzeta[i] = (v[2] - v[0]) / 2.0;
            assert!((sol.value_hessians[t][i][(0, 0)] - nz[i]).abs() < 1e-9, "step {t} player {i} Z");
            assert!((sol.value_gradients[t][i][0] - nzeta[i]).abs() < 1e-9, "step {t} player {i} zeta");
        }
        z = nz;
        zeta = nzeta;
    }
}

fn random_multi_player(rng: &mut ChaCha8Rng, players: usize, n: usize, steps: usize) -> LqGame {
    let stages = (0..steps)
        .map(|_| {
            let a = DMatrix::identity(n, n) + random_matrix(rng, n, n, 0.1);
            let b = (0..players).map(|_| random_matrix(rng, n, 2, 0.3)).collect();
            let costs = (0..players)
                .map(|i| {
                    let r = (0..players).map(|j| if i == j { random_spd(rng, 2, 0.5) } else { DMatrix::zeros(2, 2) }).collect();
                    let g = (0..players).map(|j| if i == j { random_vector(rng, 2) * 0.1 } else { DVector::zeros(2) }).collect();
                    stage_cost(random_spd(rng, n, 0.0) * 0.1, random_vector(rng, n) * 0.1, r, g)
                })
                .collect();
            LqGameStage { dynamics: LinearizedDynamics { a, b }, costs }
        })
        .collect();
    let terminal = (0..players).map(|_| TerminalCost { value: 0.0, q: random_spd(rng, n, 0.1), l: random_vector(rng, n) }).collect();
    LqGame { stages, terminal }
}

#[test]
fn solution_is_a_nash_equilibrium_of_the_lq_game() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for players in 2..=3 {
        let game = random_multi_player(&mut rng, players, 4, 15);
        let strategies = solve_lq_game(&game).unwrap();
        let report = verify_lq_nash(&game, &strategies, 100, 1e-2, &mut rng);
        assert!(report.passed, "{report:?}");
        assert!(report.players.iter().all(|p| p.min_cost_change > 0.0));
    }
}

#[test]
fn scaling_one_players_costs_keeps_the_equilibrium() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let game = random_multi_player(&mut rng, 3, 4, 10);
    let base = solve_lq_game(&game).unwrap();
    let mut scaled = game.clone();
    for stage in &mut scaled.stages {
        stage.costs[1].scale(7.0);
    }
    scaled.terminal[1].q *= 7.0;
    scaled.terminal[1].l *= 7.0;
    let other = solve_lq_game(&scaled).unwrap();
    for (s, o) in base.iter().zip(&other) {
        for t in 0..10 {
            assert!((&s.gains[t] - &o.gains[t]).amax() < 1e-9);
            assert!((&s.offsets[t] - &o.offsets[t]).amax() < 1e-9);
        }
    }
}

#[test]
fn symmetric_game_gives_mirrored_strategies() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // Two identical 2-state subsystems; swapping the players swaps the state blocks.
    let n = 4;
    let perm = DMatrix::from_fn(n, n, |r, c| if (r + 2) % 4 == c { 1.0 } else { 0.0 });
    let a_half = DMatrix::identity(2, 2) + random_matrix(&mut rng, 2, 2, 0.1);
    let mut a = DMatrix::zeros(n, n);
    a.view_mut((0, 0), (2, 2)).copy_from(&a_half);
    a.view_mut((2, 2), (2, 2)).copy_from(&a_half);
    let coupling = random_matrix(&mut rng, 2, 2, 0.05);
    a.view_mut((0, 2), (2, 2)).copy_from(&coupling);
    a.view_mut((2, 0), (2, 2)).copy_from(&coupling);
    let b_half = random_matrix(&mut rng, 2, 2, 0.5);
    let mut b0 = DMatrix::zeros(n, 2);
    b0.view_mut((0, 0), (2, 2)).copy_from(&b_half);
    let b1 = &perm * &b0;
    let q0 = random_spd(&mut rng, n, 0.0) * 0.1;
    let q1 = &perm * &q0 * &perm;
    let l0 = random_vector(&mut rng, n);
    let l1 = &perm * &l0;
    let r = random_spd(&mut rng, 2, 0.5);
    let grad = random_vector(&mut rng, 2);
    let zero = DMatrix::zeros(2, 2);
    let stage = LqGameStage {
        dynamics: LinearizedDynamics { a, b: vec![b0, b1] },
        costs: vec![
            stage_cost(q0.clone(), l0.clone(), vec![r.clone(), zero.clone()], vec![grad.clone(), DVector::zeros(2)]),
            stage_cost(q1.clone(), l1.clone(), vec![zero, r], vec![DVector::zeros(2), grad]),
        ],
    };
    let qt = random_spd(&mut rng, n, 0.1);
    let lt = random_vector(&mut rng, n);
    let game = LqGame {
        stages: vec![stage; 12],
        terminal: vec![
            TerminalCost { value: 0.0, q: qt.clone(), l: lt.clone() },
            TerminalCost { value: 0.0, q: &perm * &qt * &perm, l: &perm * &lt },
        ],
    };
    let s = solve_lq_game(&game).unwrap();
    for t in 0..12 {
        assert!((&s[1].gains[t] - &s[0].gains[t] * &perm).amax() < 1e-10);
        assert!((&s[1].offsets[t] - &s[0].offsets[t]).amax() < 1e-10);
    }
    let c = lq_costs(&game, &s);
    assert!((c[0] - c[1]).abs() < 1e-10 * c[0].abs().max(1.0));
}

#[test]
fn indefinite_control_block_reports_the_failing_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut game = random_multi_player(&mut rng, 2, 3, 8);
    // Player 0's stage system at step 5 becomes exactly zero.
    game.stages[5].dynamics.b[0] = DMatrix::zeros(3, 2);
    game.stages[5].costs[0].control_hessians[0] = DMatrix::zeros(2, 2);
    match solve_lq_game(&game) {
        Err(Error::SingularStage { step }) => assert_eq!(step, 5),
        other => panic!("expected a singular stage, got {other:?}"),
    }
}

#[test]
fn empty_game_is_rejected() {
    let game = LqGame { stages: vec![], terminal: vec![TerminalCost { value: 0.0, q: DMatrix::zeros(1, 1), l: DVector::zeros(1) }] };
    assert!(solve_lq_game(&game).is_err());
}
