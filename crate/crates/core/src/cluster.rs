//! k-means++ seeding and Lloyd refinement.

use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::rng::uniform_index;

pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;
/// Seeding + refinement rounds in [`cluster_best_of`].
pub const DEFAULT_RESTARTS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub centroids: Vec<Vec<f64>>,
    /// Cluster index of each input point.
    pub assignment: Vec<usize>,
    /// The `k` asked for. `centroids.len()` is smaller when there were fewer distinct points.
    pub requested_k: usize,
    /// Within-cluster sum of squares after the initial assignment and after each iteration.
    pub wcss_history: Vec<f64>,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn was_reduced(&self) -> bool {
        self.k() < self.requested_k
    }

    pub fn wcss(&self) -> f64 {
        self.wcss_history.last().copied().unwrap_or(0.0)
    }

    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignment
            .iter()
            .enumerate()
            .filter(move |(_, &c)| c == cluster)
            .map(|(i, _)| i)
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Index and squared distance of the nearest centroid; ties go to the lowest index.
pub fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let dim = points.first().map_or(0, Vec::len);
    for p in points {
        check_dim(dim, p.len())?;
    }
    Ok(dim)
}

/// D²-weighted seeding. Returns fewer than `k` centroids only when the points
/// have fewer than `k` distinct values.
///
/// Consumes one `f64` per centroid from `rng`.
pub fn kmeanspp_seed<R: Rng + ?Sized>(
    points: &[Vec<f64>],
    k: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if k > points.len() {
        return Err(Error::Config(format!(
            "cannot seed {k} clusters from {} points",
            points.len()
        )));
    }
    check_points(points)?;

    let first = uniform_index(rng, points.len());
    let mut centroids = vec![points[first].clone()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &points[first]))
        .collect();

    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let target = rng.random::<f64>() * total;
        let mut cumulative = 0.0;
        let mut pick = None;
        for (i, &w) in d2.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            cumulative += w;
            pick = Some(i);
            if cumulative > target {
                break;
            }
        }
        let pick = pick.expect("positive total implies a positive weight");
        let chosen = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &chosen));
        }
        centroids.push(chosen);
    }
    Ok(centroids)
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    points.iter().map(|p| nearest(p, centroids)).unzip()
}

/// Lloyd iterations from the given centroids.
///
/// Stops after `max_iter` iterations or once the largest centroid
/// displacement drops below `tol` (or is exactly zero). A cluster left empty
/// by an update is reseeded at the point farthest from its assigned centroid.
pub fn lloyd(
    points: &[Vec<f64>],
    centroids: Vec<Vec<f64>>,
    max_iter: usize,
    tol: f64,
) -> Result<Clustering> {
    let dim = check_points(points)?;
    for c in &centroids {
        check_dim(dim, c.len())?;
    }
    if centroids.is_empty() {
        return Err(Error::Config("lloyd needs at least one centroid".into()));
    }
    let k = centroids.len();
    let mut centroids = centroids;
    let (mut assignment, mut d2) = assign(points, &centroids);
    let mut wcss_history = vec![d2.iter().sum::<f64>()];

    for _ in 0..max_iter {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut next: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .zip(&centroids)
            .map(|((s, &n), old)| {
                if n == 0 {
                    old.clone()
                } else {
                    s.into_iter().map(|v| v / n as f64).collect()
                }
            })
            .collect();
        for c in (0..k).filter(|&c| counts[c] == 0) {
            let far = d2
                .iter()
                .enumerate()
                .fold(0, |best, (i, &d)| if d > d2[best] { i } else { best });
            next[c] = points[far].clone();
            d2[far] = 0.0;
        }
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| squared_distance(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        (assignment, d2) = assign(points, &centroids);
        wcss_history.push(d2.iter().sum());
        if shift < tol || shift == 0.0 {
            break;
        }
    }
    Ok(Clustering {
        centroids,
        assignment,
        requested_k: k,
        wcss_history,
    })
}

/// k-means++ seeding followed by Lloyd refinement.
pub fn cluster<R: Rng + ?Sized>(
    points: &[Vec<f64>],
    k: usize,
    rng: &mut R,
    max_iter: usize,
    tol: f64,
) -> Result<Clustering> {
    let seeds = kmeanspp_seed(points, k, rng)?;
    let mut out = lloyd(points, seeds, max_iter, tol)?;
    out.requested_k = k;
    Ok(out)
}

/// [`cluster`] repeated `restarts` times on the same rng, keeping the lowest
/// final WCSS (the earliest round on ties).
pub fn cluster_best_of<R: Rng + ?Sized>(
    points: &[Vec<f64>],
    k: usize,
    rng: &mut R,
    restarts: usize,
    max_iter: usize,
    tol: f64,
) -> Result<Clustering> {
    let mut best = cluster(points, k, rng, max_iter, tol)?;
    for _ in 1..restarts {
        let next = cluster(points, k, rng, max_iter, tol)?;
        if next.wcss() < best.wcss() {
            best = next;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, scripted::Scripted};

    fn pts(raw: &[&[f64]]) -> Vec<Vec<f64>> {
        raw.iter().map(|p| p.to_vec()).collect()
    }

    #[test]
    fn best_of_never_worse_than_first_round() {
        let mut r = rng::stream(4, 0);
        let p: Vec<Vec<f64>> = (0..30)
            .map(|_| vec![r.random::<f64>(), r.random::<f64>()])
            .collect();
        for seed in 0..10 {
            let once = cluster(
                &p,
                4,
                &mut rng::stream(seed, 1),
                DEFAULT_MAX_ITER,
                DEFAULT_TOL,
            )
            .unwrap();
            let best = cluster_best_of(
                &p,
                4,
                &mut rng::stream(seed, 1),
                5,
                DEFAULT_MAX_ITER,
                DEFAULT_TOL,
            )
            .unwrap();
            assert!(best.wcss() <= once.wcss());
        }
    }

    #[test]
    fn single_centroid_is_an_input_point() {
        let p = pts(&[&[0.0, 1.0], &[2.0, 3.0], &[4.0, 5.0]]);
        let c = kmeanspp_seed(&p, 1, &mut rng::stream(1, 0)).unwrap();
        assert_eq!(c.len(), 1);
        assert!(p.contains(&c[0]));
    }

    #[test]
    fn seeding_all_points_is_a_permutation() {
        let p = pts(&[&[0.0], &[1.0], &[5.0], &[9.0], &[9.5]]);
        for seed in 0..20 {
            let mut c = kmeanspp_seed(&p, 5, &mut rng::stream(seed, 0)).unwrap();
            c.sort_by(|a, b| a[0].total_cmp(&b[0]));
            assert_eq!(c, p);
        }
    }

    #[test]
    fn seeding_rejects_oversized_k() {
        let p = pts(&[&[0.0], &[1.0]]);
        assert!(matches!(
            kmeanspp_seed(&p, 3, &mut rng::stream(0, 0)),
            Err(Error::Config(_))
        ));
    }

    // Four points: A = {0, 1} near the origin, B = {10, 11} far away.
    // First draw 0.0 picks point 0. D² weights are then [0, 1, 100, 121] (total 222);
    // the second centroid lands in B whenever the draw exceeds 1/222.
    #[test]
    fn rigged_streams_place_one_centroid_per_group() {
        let p = pts(&[&[0.0], &[1.0], &[10.0], &[11.0]]);
        for (second, expected) in [
            (0.0, 1.0),
            (0.004, 1.0),
            (0.005, 10.0),
            (0.4, 10.0),
            (101.0 / 222.0 + 1e-9, 11.0),
            (0.99, 11.0),
        ] {
            let mut r = Scripted::new(&[0.0, second]);
            let c = kmeanspp_seed(&p, 2, &mut r).unwrap();
            assert_eq!(c[0], vec![0.0]);
            assert_eq!(c[1], vec![expected], "draw {second}");
        }
    }

    #[test]
    fn zero_iterations_keep_centroids() {
        let p = pts(&[&[0.0], &[1.0], &[4.0]]);
        let init = pts(&[&[0.5], &[3.0]]);
        let c = lloyd(&p, init.clone(), 0, 1e-6).unwrap();
        assert_eq!(c.centroids, init);
        assert_eq!(c.assignment, vec![0, 0, 1]);
        assert_eq!(c.wcss_history.len(), 1);
    }

    #[test]
    fn points_at_centroids_are_a_fixed_point() {
        let p = pts(&[&[0.0, 0.0], &[3.0, 1.0], &[-2.0, 5.0]]);
        let c = lloyd(&p, p.clone(), 100, 0.0).unwrap();
        assert_eq!(c.centroids, p);
        assert_eq!(c.assignment, vec![0, 1, 2]);
        assert_eq!(c.wcss_history, vec![0.0, 0.0]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let cents = pts(&[&[-1.0], &[1.0]]);
        assert_eq!(nearest(&[0.0], &cents).0, 0);
    }

    // Brute force over all 2^6 assignments of 6 points into 2 clusters.
    #[test]
    fn two_blobs_match_brute_force() {
        let p = pts(&[
            &[0.0, 0.0],
            &[0.2, 0.1],
            &[0.1, -0.1],
            &[5.0, 5.0],
            &[5.1, 4.8],
            &[4.9, 5.2],
        ]);
        let mut best = f64::INFINITY;
        for mask in 0u32..64 {
            let mut wcss = 0.0;
            for side in [0, 1] {
                let members: Vec<&Vec<f64>> = (0..6)
                    .filter(|i| (mask >> i) & 1 == side)
                    .map(|i| &p[i])
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let n = members.len() as f64;
                let mean: Vec<f64> = (0..2)
                    .map(|d| members.iter().map(|m| m[d]).sum::<f64>() / n)
                    .collect();
                wcss += members
                    .iter()
                    .map(|m| squared_distance(m, &mean))
                    .sum::<f64>();
            }
            best = best.min(wcss);
        }
        for seed in 0..10 {
            let c = cluster(
                &p,
                2,
                &mut rng::stream(seed, 0),
                DEFAULT_MAX_ITER,
                DEFAULT_TOL,
            )
            .unwrap();
            assert_eq!(c.assignment[0], c.assignment[1]);
            assert_eq!(c.assignment[0], c.assignment[2]);
            assert_eq!(c.assignment[3], c.assignment[4]);
            assert_ne!(c.assignment[0], c.assignment[3]);
            assert!((c.wcss() - best).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_points_reduce_k() {
        let p = vec![vec![1.0, 2.0]; 5];
        let c = cluster(&p, 3, &mut rng::stream(0, 0), 10, 1e-6).unwrap();
        assert_eq!(c.k(), 1);
        assert_eq!(c.requested_k, 3);
        assert!(c.was_reduced());
        assert!(c.assignment.iter().all(|&a| a == 0));
    }

    #[test]
    fn duplicates_reduce_k_to_distinct_count() {
        let p = pts(&[&[0.0], &[0.0], &[1.0], &[1.0], &[2.0]]);
        let c = cluster(&p, 5, &mut rng::stream(3, 0), 10, 1e-6).unwrap();
        assert_eq!(c.k(), 3);
    }

    #[test]
    fn every_point_its_own_cluster() {
        let p = pts(&[&[0.0], &[1.0], &[3.0], &[7.0]]);
        let c = cluster(&p, 4, &mut rng::stream(5, 0), 10, 1e-6).unwrap();
        let mut seen = c.assignment.clone();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 4);
        assert_eq!(c.wcss(), 0.0);
    }

    #[test]
    fn seeded_runs_repeat() {
        let mut r = rng::stream(8, 0);
        let p: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..3).map(|_| r.random::<f64>()).collect())
            .collect();
        let a = cluster(&p, 4, &mut rng::stream(2, 0), 100, 1e-6).unwrap();
        let b = cluster(&p, 4, &mut rng::stream(2, 0), 100, 1e-6).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_cluster_is_reseeded() {
        // The centroid at 100 captures nothing; it must be moved onto a data point.
        let p = pts(&[&[0.0], &[1.0], &[2.0], &[10.0]]);
        let c = lloyd(&p, pts(&[&[1.0], &[100.0]]), 10, 1e-9).unwrap();
        assert_eq!(c.k(), 2);
        assert!(c.members(0).count() > 0 && c.members(1).count() > 0);
        for w in c.wcss_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }
}
