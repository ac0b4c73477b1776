//! Oracles shared by the integration tests.
#![allow(dead_code)]

use gamealign::cost::{QuadraticCost, TerminalCost};
use gamealign::dynamics::LinearizedDynamics;
use gamealign::lqgame::{LqGame, LqGameStage};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let m = random_matrix(rng, n, n, 1.0);
    &m * m.transpose() / n as f64 + DMatrix::identity(n, n) * floor
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

pub fn stage_cost(q: DMatrix<f64>, l: DVector<f64>, r: Vec<DMatrix<f64>>, g: Vec<DVector<f64>>) -> QuadraticCost {
    QuadraticCost { value: 0.0, q, l, control_hessians: r, control_gradients: g }
}

/// Textbook time-varying LQR for `x' = A x + B u` with stage cost
/// `1/2 x'Qx + l'x + 1/2 u'Ru + r'u`; policy `u = -K x - k`.
pub fn lqr(game: &LqGame) -> (Vec<DMatrix<f64>>, Vec<DVector<f64>>) {
    let steps = game.stages.len();
    let mut vxx = game.terminal[0].q.clone();
    let mut vx = game.terminal[0].l.clone();
    let mut ks = vec![DMatrix::zeros(0, 0); steps];
    let mut kf = vec![DVector::zeros(0); steps];
    for t in (0..steps).rev() {
        let s = &game.stages[t];
        let (a, b) = (&s.dynamics.a, &s.dynamics.b[0]);
        let c = &s.costs[0];
        let quu = &c.control_hessians[0] + b.transpose() * &vxx * b;
        let qux = b.transpose() * &vxx * a;
        let qu = &c.control_gradients[0] + b.transpose() * &vx;
        let qxx = &c.q + a.transpose() * &vxx * a;
        let qx = &c.l + a.transpose() * &vx;
        let chol = quu.cholesky().expect("positive definite");
        let k = chol.solve(&qux);
        let kk = chol.solve(&qu);
        vxx = &qxx - qux.transpose() * &k;
        vxx = (&vxx + vxx.transpose()) * 0.5;
        vx = &qx - qux.transpose() * &kk;
        ks[t] = k;
        kf[t] = kk;
    }
    (ks, kf)
}

/// Random one-player LQ problem: state dimension up to 12, horizon up to 100.
pub fn random_single_player(rng: &mut ChaCha8Rng) -> LqGame {
    let n = rng.random_range(1..=12);
    let m = rng.random_range(1..=4);
    let steps = rng.random_range(1..=100);
    let stages = (0..steps)
        .map(|_| {
            let a = DMatrix::identity(n, n) * 0.95 + random_matrix(rng, n, n, 0.2 / (n as f64).sqrt());
            let b = random_matrix(rng, n, m, 1.0);
            let q = random_spd(rng, n, 0.0);
            let l = random_vector(rng, n);
            let r = random_spd(rng, m, 0.1);
            let g = random_vector(rng, m);
            LqGameStage { dynamics: LinearizedDynamics { a, b: vec![b] }, costs: vec![stage_cost(q, l, vec![r], vec![g])] }
        })
        .collect();
    let terminal = vec![TerminalCost { value: 0.0, q: random_spd(rng, n, 0.0), l: random_vector(rng, n) }];
    LqGame { stages, terminal }
}

/// Largest elementwise deviation of the solver's strategy from the LQR oracle,
/// relative to `max(1, |oracle|)`.
pub fn lqr_mismatch(game: &LqGame) -> f64 {
    let s = gamealign::lqgame::solve_lq_game(game).expect("solvable");
    let (ks, kf) = lqr(game);
    let mut worst: f64 = 0.0;
    for t in 0..game.stages.len() {
        for (x, y) in s[0].gains[t].iter().zip(ks[t].iter()).chain(s[0].offsets[t].iter().zip(kf[t].iter())) {
            worst = worst.max((x - y).abs() / y.abs().max(1.0));
        }
    }
    worst
}

/// Central-difference Jacobian of `f` at `x`.
pub fn fd_jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let rows = f(x).len();
    let mut j = DMatrix::zeros(rows, x.len());
    for k in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += h;
        xm[k] -= h;
        j.set_column(k, &((f(&xp) - f(&xm)) / (2.0 * h)));
    }
    j
}

/// Largest `|a - b| / max(1, |a|, |b|)` over two equally shaped matrices.
pub fn max_rel_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0)).fold(0.0, f64::max)
}
