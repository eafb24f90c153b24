//! Lloyd's k-means with k-means++ (D²) seeding over dense vectors.

use rand::Rng;

/// Outcome of one clustering run.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squared distances after every assignment step.
    pub distortion_trace: Vec<f64>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn distortion(&self) -> f64 {
        self.distortion_trace.last().copied().unwrap_or(0.0)
    }

    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignments
            .iter()
            .enumerate()
            .filter(move |(_, &a)| a == cluster)
            .map(|(i, _)| i)
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest center; ties go to the lowest index.
pub fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// k-means++ seeding: first center uniform, each next one drawn with
/// probability proportional to the squared distance to the closest chosen
/// center.
pub fn kmeans_plus_plus<R: Rng + ?Sized>(data: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<usize> {
    let n = data.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = data
        .iter()
        .map(|p| squared_distance(p, &data[chosen[0]]))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave `target` just past the final sum.
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            // Remaining points coincide with chosen centers.
            (0..n).find(|i| !chosen.contains(i)).expect("k <= n")
        };
        chosen.push(next);
        for (i, p) in data.iter().enumerate() {
            d2[i] = d2[i].min(squared_distance(p, &data[next]));
        }
    }
    chosen
}

/// Clusters `data` into `k` groups, iterating until the assignment reaches a
/// fixpoint or `max_iters` assignment steps have run. An emptied cluster is
/// re-seeded with the point farthest from its current centroid.
pub fn kmeans<R: Rng + ?Sized>(
    data: &[Vec<f64>],
    k: usize,
    max_iters: usize,
    rng: &mut R,
) -> KMeansResult {
    assert!(k >= 1 && k <= data.len(), "need 1 <= k <= n");
    let dim = data[0].len();
    let mut centroids: Vec<Vec<f64>> = kmeans_plus_plus(data, k, rng)
        .into_iter()
        .map(|i| data[i].clone())
        .collect();
    let mut assignments: Vec<usize> = vec![usize::MAX; data.len()];
    let mut distortion_trace = Vec::new();
    let mut iterations = 0;
    while iterations < max_iters.max(1) {
        iterations += 1;
        let mut dists = vec![0.0; data.len()];
        let mut changed = false;
        for (i, p) in data.iter().enumerate() {
            let (c, d) = nearest(p, &centroids);
            changed |= assignments[i] != c;
            assignments[i] = c;
            dists[i] = d;
        }
        // Re-seed empty clusters with the currently worst-served points.
        loop {
            let mut counts = vec![0usize; k];
            for &a in &assignments {
                counts[a] += 1;
            }
            let Some(empty) = counts.iter().position(|&c| c == 0) else {
                break;
            };
            let (far, _) = dists
                .iter()
                .enumerate()
                .filter(|(i, _)| counts[assignments[*i]] > 1)
                .fold((usize::MAX, f64::NEG_INFINITY), |best, (i, &d)| {
                    if d > best.1 {
                        (i, d)
                    } else {
                        best
                    }
                });
            assignments[far] = empty;
            centroids[empty] = data[far].clone();
            dists[far] = 0.0;
            changed = true;
        }
        distortion_trace.push(dists.iter().sum());
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in data.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for (c, (sum, n)) in centroids.iter_mut().zip(sums.into_iter().zip(counts)) {
            *c = sum.into_iter().map(|s| s / n as f64).collect();
        }
    }
    KMeansResult {
        centroids,
        assignments,
        distortion_trace,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_blobs(rng: &mut impl Rng, n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                let c = if i % 3 == 0 { 5.0 } else { -5.0 };
                (0..4).map(|_| c + rng.random_range(-1.0..1.0)).collect()
            })
            .collect()
    }

    fn partition_cost(data: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
        let dim = data[0].len();
        let mut cost = 0.0;
        for c in 0..k {
            let members: Vec<&Vec<f64>> = data.iter().zip(labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                return f64::INFINITY;
            }
            let mean: Vec<f64> = (0..dim)
                .map(|d| members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64)
                .collect();
            cost += members.iter().map(|p| squared_distance(p, &mean)).sum::<f64>();
        }
        cost
    }

    #[test]
    fn two_means_match_exhaustive_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for n in [5usize, 8, 12] {
            let data = two_blobs(&mut rng, n);
            let res = kmeans(&data, 2, 100, &mut rng);
            let mut best = (f64::INFINITY, vec![]);
            for mask in 1u32..(1 << n) - 1 {
                let labels: Vec<usize> = (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
                let c = partition_cost(&data, &labels, 2);
                if c < best.0 {
                    best = (c, labels);
                }
            }
            let same = res.assignments == best.1;
            let swapped = res.assignments.iter().zip(&best.1).all(|(a, b)| a != b);
            assert!(same || swapped);
            assert!((res.distortion() - best.0).abs() < 1e-9);
        }
    }

    #[test]
    fn distortion_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for _ in 0..20 {
            let data: Vec<Vec<f64>> = (0..60)
                .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let res = kmeans(&data, 7, 100, &mut rng);
            for w in res.distortion_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
            let counts = (0..7).map(|c| res.members(c).count());
            assert!(counts.into_iter().all(|c| c > 0));
        }
    }

    #[test]
    fn duplicates_still_yield_k_clusters() {
        let data = vec![vec![1.0, 1.0]; 6];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let res = kmeans(&data, 3, 10, &mut rng);
        for c in 0..3 {
            assert!(res.members(c).count() > 0);
        }
        assert_eq!(res.distortion(), 0.0);
    }
}
