//! Offline analysis: clustering of equilibrium trajectories and prediction
//! error statistics.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::trajectory::{positions, player_count, Trajectory};

/// Flattened joint-position sequence of a trajectory.
pub fn trajectory_feature(traj: &Trajectory) -> DVector<f64> {
    let per = traj.states.first().map_or(0, |x| 2 * player_count(x));
    DVector::from_iterator(per * traj.states.len(), traj.states.iter().flat_map(|x| positions(x).iter().copied().collect::<Vec<_>>()))
}

pub const KMEANS_RESTARTS: usize = 20;
const KMEANS_MAX_ITERATIONS: usize = 300;
/// Relative inertia improvement below which adding a cluster stops paying off.
pub const ELBOW_THRESHOLD: f64 = 0.15;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    /// Cluster label of every input point, relabeled so that clusters are
    /// numbered in order of their lowest member index.
    pub assignments: Vec<usize>,
    pub centroids: Vec<DVector<f64>>,
    pub inertia: f64,
    /// Inertia after every Lloyd iteration of the winning restart.
    pub inertia_history: Vec<f64>,
}

fn check_features(features: &[DVector<f64>]) -> Result<usize> {
    let first = features.first().ok_or(Error::EmptyInput("features"))?;
    let dim = first.len();
    for f in features {
        if f.len() != dim {
            return Err(Error::DimensionMismatch { what: "feature", expected: dim, got: f.len() });
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature"));
        }
    }
    Ok(dim)
}

fn nearest(x: &DVector<f64>, centroids: &[DVector<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(j, c)| (j, (x - c).norm_squared()))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn plus_plus_init<R: Rng>(features: &[DVector<f64>], k: usize, rng: &mut R) -> Vec<DVector<f64>> {
    let mut centroids = vec![features[rng.random_range(0..features.len())].clone()];
    let mut d2: Vec<f64> = features.iter().map(|x| (x - &centroids[0]).norm_squared()).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = features.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..features.len())
        };
        centroids.push(features[idx].clone());
        for (d, x) in d2.iter_mut().zip(features) {
            *d = d.min((x - &centroids[centroids.len() - 1]).norm_squared());
        }
    }
    centroids
}

fn lloyd(features: &[DVector<f64>], mut centroids: Vec<DVector<f64>>) -> KMeans {
    let k = centroids.len();
    let mut assignments = vec![usize::MAX; features.len()];
    let mut history = Vec::new();
    for _ in 0..KMEANS_MAX_ITERATIONS {
        let mut changed = false;
        let mut inertia = 0.0;
        for (a, x) in assignments.iter_mut().zip(features) {
            let (j, d) = nearest(x, &centroids);
            inertia += d;
            if *a != j {
                *a = j;
                changed = true;
            }
        }
        history.push(inertia);
        if !changed {
            break;
        }
        let mut sums = vec![DVector::zeros(features[0].len()); k];
        let mut counts = vec![0usize; k];
        for (a, x) in assignments.iter().zip(features) {
            sums[*a] += x;
            counts[*a] += 1;
        }
        for j in 0..k {
            // An emptied cluster keeps its previous centroid.
            if counts[j] > 0 {
                centroids[j] = &sums[j] / counts[j] as f64;
            }
        }
        // Inertia with the updated centroids, so the history is monotone.
        let updated: f64 = assignments.iter().zip(features).map(|(a, x)| (x - &centroids[*a]).norm_squared()).sum();
        history.push(updated);
    }
    let inertia = *history.last().expect("at least one iteration");
    KMeans { assignments, centroids, inertia, inertia_history: history }
}

/// Renumbers clusters by first appearance and drops empty ones.
fn canonical(mut km: KMeans) -> KMeans {
    let mut map = vec![usize::MAX; km.centroids.len()];
    let mut next = 0;
    for a in &km.assignments {
        if map[*a] == usize::MAX {
            map[*a] = next;
            next += 1;
        }
    }
    let mut centroids = vec![DVector::zeros(0); next];
    for (old, new) in map.iter().enumerate() {
        if *new != usize::MAX {
            centroids[*new] = km.centroids[old].clone();
        }
    }
    for a in km.assignments.iter_mut() {
        *a = map[*a];
    }
    km.centroids = centroids;
    km
}

/// k-means with k-means++ seeding; the best of [`KMEANS_RESTARTS`] restarts
/// by inertia is kept. Deterministic in `rng_seed`.
pub fn kmeans(features: &[DVector<f64>], k: usize, rng_seed: u64) -> Result<KMeans> {
    check_features(features)?;
    if k == 0 || k > features.len() {
        return Err(Error::InvalidArgument(format!("k = {k} must be in 1..={}", features.len())));
    }
    let mut best: Option<KMeans> = None;
    for restart in 0..KMEANS_RESTARTS {
        let mut rng = stream(rng_seed, restart as u64);
        let run = lloyd(features, plus_plus_init(features, k, &mut rng));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(canonical(best.expect("at least one restart")))
}

/// Elbow rule: the smallest `k` at which adding a cluster improves inertia by
/// less than [`ELBOW_THRESHOLD`] times the improvement the previous cluster
/// brought (for `k = 1`, times the total inertia).
pub fn select_k(features: &[DVector<f64>], k_max: usize, rng_seed: u64) -> Result<usize> {
    check_features(features)?;
    if k_max == 0 {
        return Err(Error::InvalidArgument("k_max must be at least 1".into()));
    }
    let k_max = k_max.min(features.len());
    let mut inertia = kmeans(features, 1, rng_seed)?.inertia;
    let mut last_gain = inertia;
    for k in 1..k_max {
        if last_gain <= 0.0 {
            return Ok(k);
        }
        let next = kmeans(features, k + 1, rng_seed)?.inertia;
        let gain = inertia - next;
        if gain < ELBOW_THRESHOLD * last_gain {
            return Ok(k);
        }
        last_gain = gain;
        inertia = next;
    }
    Ok(k_max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub members: Vec<usize>,
    /// Per-player mean total cost over the members.
    pub mean_costs: Vec<f64>,
    /// Index of the member closest to the centroid.
    pub representative: usize,
    pub representative_trajectory: Trajectory,
}

impl Cluster {
    pub fn total_mean_cost(&self) -> f64 {
        self.mean_costs.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub k: usize,
    pub inertia: f64,
    pub clusters: Vec<Cluster>,
}

impl ClusterReport {
    /// Cluster indices sorted by total mean cost, cheapest first.
    pub fn by_total_cost(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.clusters.len()).collect();
        idx.sort_by(|&a, &b| self.clusters[a].total_mean_cost().total_cmp(&self.clusters[b].total_mean_cost()));
        idx
    }
}

/// Clusters equilibrium trajectories by their joint positions and summarizes
/// per-cluster costs. `costs[i]` holds the per-player costs of `trajectories[i]`.
pub fn kmeans_cluster(trajectories: &[Trajectory], costs: &[Vec<f64>], k: usize, rng_seed: u64) -> Result<ClusterReport> {
    if trajectories.len() != costs.len() {
        return Err(Error::DimensionMismatch { what: "cost rows", expected: trajectories.len(), got: costs.len() });
    }
    let features: Vec<_> = trajectories.iter().map(trajectory_feature).collect();
    let km = kmeans(&features, k, rng_seed)?;
    let players = costs.first().map_or(0, Vec::len);
    let clusters = km
        .centroids
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let members: Vec<usize> = (0..features.len()).filter(|&i| km.assignments[i] == j).collect();
            let mut mean_costs = vec![0.0; players];
            for &m in &members {
                for (acc, v) in mean_costs.iter_mut().zip(&costs[m]) {
                    *acc += v / members.len() as f64;
                }
            }
            let representative = members
                .iter()
                .copied()
                .min_by(|&a, &b| (&features[a] - c).norm_squared().total_cmp(&(&features[b] - c).norm_squared()))
                .expect("clusters are non-empty");
            Cluster { members, mean_costs, representative, representative_trajectory: trajectories[representative].clone() }
        })
        .collect::<Vec<_>>();
    Ok(ClusterReport { k: clusters.len(), inertia: km.inertia, clusters })
}

fn wrapped(d: f64) -> f64 {
    use std::f64::consts::PI;
    if d > PI {
        d - 2.0 * PI
    } else if d < -PI {
        d + 2.0 * PI
    } else {
        d
    }
}

/// Per-step change of every player's polar angle around `center`.
fn angle_steps(traj: &Trajectory, center: [f64; 2]) -> Vec<Vec<f64>> {
    let players = player_count(traj.initial_state());
    let angle = |x: &DVector<f64>, i: usize| (x[4 * i + 1] - center[1]).atan2(x[4 * i] - center[0]);
    traj.states
        .windows(2)
        .map(|w| (0..players).map(|i| wrapped(angle(&w[1], i) - angle(&w[0], i))).collect())
        .collect()
}

/// Total angle each player sweeps around `center`, in units of pi.
pub fn swept_angles(traj: &Trajectory, center: [f64; 2]) -> Vec<f64> {
    let steps = angle_steps(traj, center);
    let players = player_count(traj.initial_state());
    (0..players).map(|i| steps.iter().map(|s| s[i]).sum::<f64>() / std::f64::consts::PI).collect()
}

/// Co-rotation of all players around `center`, in units of pi: the angle
/// swept while every player turns the same way, counting only the slowest
/// one. Close to +1 (counter-clockwise) or -1 (clockwise) when the players
/// circle the center together; near zero when they pass one at a time.
pub fn handedness(traj: &Trajectory, center: [f64; 2]) -> f64 {
    let mut ccw = 0.0;
    let mut cw = 0.0;
    for s in angle_steps(traj, center) {
        let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        ccw += lo.max(0.0);
        cw += (-hi).max(0.0);
    }
    (ccw - cw) / std::f64::consts::PI
}

/// Squared joint-position error at every offset.
pub fn prediction_error(predicted: &Trajectory, actual: &Trajectory) -> Result<Vec<f64>> {
    if predicted.steps() != actual.steps() {
        return Err(Error::HorizonMismatch { expected: actual.steps(), got: predicted.steps() });
    }
    Ok(predicted
        .states
        .iter()
        .zip(&actual.states)
        .map(|(p, a)| (positions(p) - positions(a)).norm_squared())
        .collect())
}

/// Same as [`prediction_error`] on already extracted joint positions.
pub fn position_error(predicted: &[Vec<f64>], actual: &[Vec<f64>]) -> Result<Vec<f64>> {
    if predicted.len() != actual.len() {
        return Err(Error::HorizonMismatch { expected: actual.len(), got: predicted.len() });
    }
    predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| {
            if p.len() != a.len() {
                return Err(Error::DimensionMismatch { what: "positions", expected: a.len(), got: p.len() });
            }
            Ok(p.iter().zip(a).map(|(x, y)| (x - y) * (x - y)).sum())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSem {
    pub mean: f64,
    pub sem: f64,
}

/// Mean and standard error of the mean (sample standard deviation).
pub fn mean_sem(values: &[f64]) -> Result<MeanSem> {
    if values.is_empty() {
        return Err(Error::EmptyInput("values"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok(MeanSem { mean, sem: 0.0 });
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok(MeanSem { mean, sem: (var / n).sqrt() })
}

/// Pointwise mean and SEM across equally long curves.
pub fn aggregate_curves(curves: &[Vec<f64>]) -> Result<Vec<MeanSem>> {
    let len = curves.first().ok_or(Error::EmptyInput("curves"))?.len();
    if let Some(c) = curves.iter().find(|c| c.len() != len) {
        return Err(Error::HorizonMismatch { expected: len, got: c.len() });
    }
    (0..len)
        .map(|o| mean_sem(&curves.iter().map(|c| c[o]).collect::<Vec<_>>()))
        .collect()
}

pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("values"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn singleton_clusters_have_zero_inertia() {
        let f = vec![point(&[0.0, 0.0]), point(&[1.0, 0.0]), point(&[0.0, 3.0])];
        let km = kmeans(&f, 3, 1).unwrap();
        assert_eq!(km.inertia, 0.0);
        assert_eq!(km.assignments, vec![0, 1, 2]);
    }

    #[test]
    fn identical_points_select_one_cluster() {
        let f = vec![point(&[2.0, 1.0]); 10];
        assert_eq!(select_k(&f, 6, 0).unwrap(), 1);
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(matches!(kmeans(&[], 1, 0), Err(Error::EmptyInput(_))));
        assert!(kmeans(&[point(&[1.0])], 2, 0).is_err());
    }

    #[test]
    fn mean_sem_of_constant_and_pair() {
        let c = mean_sem(&[3.0, 3.0, 3.0]).unwrap();
        assert_eq!((c.mean, c.sem), (3.0, 0.0));
        let p = mean_sem(&[1.0, 3.0]).unwrap();
        assert_eq!(p.mean, 2.0);
        assert!((p.sem - 1.0).abs() < 1e-15);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]).unwrap(), 2.5);
    }
}
