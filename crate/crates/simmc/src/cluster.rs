//! Density-based clustering of instance sets and prototype construction.
//!
//! DBSCAN uses inclusive Euclidean neighborhoods (`d <= eps`, the point
//! itself counts toward `min_pts`). Clusters are numbered in order of their
//! lowest-indexed core point; a border point joins the cluster of its
//! lowest-indexed core neighbor, which realizes the "first core cluster in
//! deterministic scan order" rule. Everything here is deterministic.

use crate::error::{Error, Result};

/// Per-instance cluster labels for one sampling; `None` marks noise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub sampling_index: usize,
    pub labels: Vec<Option<usize>>,
    pub num_clusters: usize,
}

/// Cluster centroids for one sampling: prototype `c` is the arithmetic mean
/// of its members' instance vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    pub sampling_index: usize,
    pub prototypes: Vec<Vec<f64>>,
    pub member_counts: Vec<usize>,
}

impl PrototypeSet {
    pub fn num_clusters(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }
}

/// How the neighborhood radius is chosen at each clustering round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsSetting {
    /// Percentile (in (0, 100]) of each point's distance to its
    /// `min_pts`-th nearest neighbor.
    Auto { percentile: f64 },
    Fixed(f64),
}

impl Default for EpsSetting {
    fn default() -> Self {
        EpsSetting::Auto { percentile: 30.0 }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Standard DBSCAN over Euclidean neighborhoods.
pub fn dbscan(points: &[Vec<f64>], eps: f64, min_pts: usize) -> Result<ClusterAssignment> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("eps must be > 0, got {eps}")));
    }
    if min_pts < 1 {
        return Err(Error::InvalidArgument("min_pts must be >= 1".into()));
    }
    let n = points.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no points to cluster".into()));
    }
    let eps_sq = eps * eps;

    // O(N^2) neighborhoods; instance sets are small at desk scale.
    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if sq_dist(&points[i], &points[j]) <= eps_sq {
                neighbors[i].push(j);
            }
        }
    }
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();

    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut num_clusters = 0;
    for start in 0..n {
        if !core[start] || labels[start].is_some() {
            continue;
        }
        let cluster = num_clusters;
        num_clusters += 1;
        // Flood fill across density-connected core points.
        labels[start] = Some(cluster);
        let mut queue = vec![start];
        while let Some(p) = queue.pop() {
            for &nb in &neighbors[p] {
                if core[nb] && labels[nb].is_none() {
                    labels[nb] = Some(cluster);
                    queue.push(nb);
                }
            }
        }
    }
    // Border points: lowest-indexed core neighbor wins.
    for i in 0..n {
        if core[i] {
            continue;
        }
        if let Some(&first_core) = neighbors[i].iter().find(|&&j| core[j]) {
            labels[i] = labels[first_core];
        }
    }
    Ok(ClusterAssignment {
        sampling_index: 0,
        labels,
        num_clusters,
    })
}

/// Mean-aggregates each cluster's members into its prototype. Noise
/// instances contribute to no prototype; zero clusters yield an empty set
/// (the trainer skips that sampling for the epoch).
pub fn build_prototypes(
    instances: &[Vec<f64>],
    assignment: &ClusterAssignment,
) -> Result<PrototypeSet> {
    if instances.len() != assignment.labels.len() {
        return Err(Error::InvalidArgument(format!(
            "assignment covers {} instances, got {}",
            assignment.labels.len(),
            instances.len()
        )));
    }
    let dim = instances.first().map(|v| v.len()).unwrap_or(0);
    let mut prototypes = vec![vec![0.0; dim]; assignment.num_clusters];
    let mut member_counts = vec![0usize; assignment.num_clusters];
    for (v, label) in instances.iter().zip(&assignment.labels) {
        if let Some(c) = label {
            for (acc, &x) in prototypes[*c].iter_mut().zip(v) {
                *acc += x;
            }
            member_counts[*c] += 1;
        }
    }
    for (proto, &count) in prototypes.iter_mut().zip(&member_counts) {
        debug_assert!(count > 0, "cluster without members");
        let denom = count as f64;
        for acc in proto.iter_mut() {
            *acc /= denom;
        }
    }
    Ok(PrototypeSet {
        sampling_index: assignment.sampling_index,
        prototypes,
        member_counts,
    })
}

/// Radius heuristic: the `percentile`-th value of the per-point distance to
/// its `min_pts`-th nearest neighbor (nearest-rank on the sorted list).
/// Falls back to the smallest positive distance when the percentile lands on
/// zero (duplicate points).
pub fn auto_eps(points: &[Vec<f64>], min_pts: usize, percentile: f64) -> Result<f64> {
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(Error::InvalidArgument(format!(
            "eps percentile must be in (0, 100], got {percentile}"
        )));
    }
    let n = points.len();
    if n < 2 {
        return Ok(1.0); // degenerate set; any positive radius behaves the same
    }
    let mut kdists = Vec::with_capacity(n);
    let mut dists = Vec::with_capacity(n - 1);
    for i in 0..n {
        dists.clear();
        for j in 0..n {
            if i != j {
                dists.push(sq_dist(&points[i], &points[j]).sqrt());
            }
        }
        dists.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        let k = min_pts.min(dists.len());
        kdists.push(dists[k - 1]);
    }
    kdists.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((percentile / 100.0) * (n - 1) as f64).round() as usize;
    let mut eps = kdists[idx.min(n - 1)];
    if eps <= 0.0 {
        eps = kdists
            .iter()
            .copied()
            .find(|&d| d > 0.0)
            .unwrap_or(f64::MIN_POSITIVE);
    }
    Ok(eps)
}

/// Clusters each sampling's instance set independently and builds its
/// prototypes; results for different samplings never mix.
pub fn cluster_all_samplings(
    instance_sets: &[Vec<Vec<f64>>],
    eps: EpsSetting,
    min_pts: usize,
) -> Result<Vec<(ClusterAssignment, PrototypeSet)>> {
    let mut out = Vec::with_capacity(instance_sets.len());
    for (i, set) in instance_sets.iter().enumerate() {
        let radius = match eps {
            EpsSetting::Fixed(value) => value,
            EpsSetting::Auto { percentile } => auto_eps(set, min_pts, percentile)?,
        };
        let mut assignment = dbscan(set, radius, min_pts)?;
        assignment.sampling_index = i;
        let prototypes = build_prototypes(set, &assignment)?;
        out.push((assignment, prototypes));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn points_1d(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|&x| vec![x]).collect()
    }

    // Brute-force density-reachability oracle: repeatedly merge clusters of
    // core points whose distance is within eps until a fixed point, then
    // attach border points by the lowest-indexed core neighbor.
    fn dbscan_oracle(points: &[Vec<f64>], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
        let n = points.len();
        let eps_sq = eps * eps;
        let within = |i: usize, j: usize| sq_dist(&points[i], &points[j]) <= eps_sq;
        let core: Vec<bool> = (0..n)
            .map(|i| (0..n).filter(|&j| within(i, j)).count() >= min_pts)
            .collect();
        // Each core point starts alone; merge until stable.
        let mut group: Vec<usize> = (0..n).collect();
        let mut changed = true;
        while changed {
            changed = false;
            for i in 0..n {
                for j in 0..n {
                    if core[i] && core[j] && within(i, j) {
                        let g = group[i].min(group[j]);
                        if group[i] != g || group[j] != g {
                            group[i] = g;
                            group[j] = g;
                            changed = true;
                        }
                    }
                }
            }
        }
        // Renumber clusters by first core occurrence, then attach borders.
        let mut labels = vec![None; n];
        let mut next = 0usize;
        let mut name: std::collections::BTreeMap<usize, usize> = Default::default();
        for i in 0..n {
            if core[i] {
                let id = *name.entry(group[i]).or_insert_with(|| {
                    let id = next;
                    next += 1;
                    id
                });
                labels[i] = Some(id);
            }
        }
        for i in 0..n {
            if !core[i] {
                if let Some(j) = (0..n).find(|&j| core[j] && within(i, j)) {
                    labels[i] = labels[j];
                }
            }
        }
        labels
    }

    fn canonical(labels: &[Option<usize>]) -> Vec<Option<usize>> {
        let mut map: std::collections::BTreeMap<usize, usize> = Default::default();
        let mut next = 0;
        labels
            .iter()
            .map(|l| {
                l.map(|c| {
                    *map.entry(c).or_insert_with(|| {
                        let id = next;
                        next += 1;
                        id
                    })
                })
            })
            .collect()
    }

    #[test]
    fn two_line_clusters_no_noise() {
        let points = points_1d(&[0.0, 0.1, 0.2, 10.0, 10.1]);
        let got = dbscan(&points, 0.5, 2).unwrap();
        assert_eq!(got.num_clusters, 2);
        assert_eq!(
            got.labels,
            vec![Some(0), Some(0), Some(0), Some(1), Some(1)]
        );
        assert_eq!(
            canonical(&got.labels),
            canonical(&dbscan_oracle(&points, 0.5, 2))
        );
    }

    #[test]
    fn single_point_min_pts_one() {
        let got = dbscan(&points_1d(&[3.0]), 1.0, 1).unwrap();
        assert_eq!(got.num_clusters, 1);
        assert_eq!(got.labels, vec![Some(0)]);
    }

    #[test]
    fn all_isolated_is_all_noise() {
        let got = dbscan(&points_1d(&[0.0, 5.0, 10.0]), 1.0, 2).unwrap();
        assert_eq!(got.num_clusters, 0);
        assert_eq!(got.labels, vec![None, None, None]);
    }

    #[test]
    fn invalid_params_rejected() {
        let p = points_1d(&[0.0]);
        assert!(dbscan(&p, 0.0, 1).is_err());
        assert!(dbscan(&p, -1.0, 1).is_err());
        assert!(dbscan(&p, 1.0, 0).is_err());
    }

    #[test]
    fn prototype_examples() {
        let instances = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let assignment = ClusterAssignment {
            sampling_index: 0,
            labels: vec![Some(0), Some(0)],
            num_clusters: 1,
        };
        let protos = build_prototypes(&instances, &assignment).unwrap();
        assert_eq!(protos.prototypes, vec![vec![0.5, 0.5]]);
        assert_eq!(protos.member_counts, vec![2]);

        let singleton = ClusterAssignment {
            sampling_index: 0,
            labels: vec![Some(0), None],
            num_clusters: 1,
        };
        let protos = build_prototypes(&instances, &singleton).unwrap();
        assert_eq!(protos.prototypes, vec![vec![1.0, 0.0]]);
    }

    #[test]
    fn prototype_matches_direct_mean() {
        let mut rng = StdRng::seed_from_u64(2);
        let members: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let assignment = ClusterAssignment {
            sampling_index: 0,
            labels: vec![Some(0); 3],
            num_clusters: 1,
        };
        let protos = build_prototypes(&members, &assignment).unwrap();
        for d in 0..4 {
            let want = (members[0][d] + members[1][d] + members[2][d]) / 3.0;
            assert!((protos.prototypes[0][d] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn oracle_agreement_on_random_sets() {
        let mut rng = StdRng::seed_from_u64(77);
        for trial in 0..50 {
            let n = rng.gen_range(1..=200);
            let dim = rng.gen_range(1..=3);
            let points: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let eps = rng.gen_range(0.05..0.4);
            let min_pts = rng.gen_range(1..=5);
            let got = dbscan(&points, eps, min_pts).unwrap();
            let want = dbscan_oracle(&points, eps, min_pts);
            assert_eq!(
                canonical(&got.labels),
                canonical(&want),
                "trial {trial}: n={n} eps={eps} min_pts={min_pts}"
            );
        }
    }

    // Core-point partition is stable under input permutation.
    #[test]
    fn permutation_invariance_of_core_partition() {
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..20 {
            let n = rng.gen_range(5..60);
            let points: Vec<Vec<f64>> = (0..n)
                .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
                .collect();
            let eps = 0.3;
            let min_pts = 3;
            let base = dbscan(&points, eps, min_pts).unwrap();

            let mut perm: Vec<usize> = (0..n).collect();
            use rand::seq::SliceRandom;
            perm.shuffle(&mut rng);
            let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| points[i].clone()).collect();
            let moved = dbscan(&shuffled, eps, min_pts).unwrap();

            // Compare partitions as sets of member-index sets (original indexing).
            let to_sets = |labels: &[Option<usize>], perm: Option<&[usize]>| {
                let mut sets: std::collections::BTreeMap<usize, std::collections::BTreeSet<usize>> =
                    Default::default();
                for (i, l) in labels.iter().enumerate() {
                    if let Some(c) = l {
                        let orig = perm.map(|p| p[i]).unwrap_or(i);
                        sets.entry(*c).or_default().insert(orig);
                    }
                }
                sets.into_values().collect::<std::collections::BTreeSet<_>>()
            };
            // Border ties may legitimately flip between equally valid clusters,
            // so compare the core-point partition only.
            let core_only = |labels: &[Option<usize>], points: &[Vec<f64>]| {
                let mut out = labels.to_vec();
                for i in 0..points.len() {
                    let cnt = points
                        .iter()
                        .filter(|p| sq_dist(&points[i], p) <= eps * eps)
                        .count();
                    if cnt < min_pts {
                        out[i] = None;
                    }
                }
                out
            };
            assert_eq!(
                to_sets(&core_only(&base.labels, &points), None),
                to_sets(&core_only(&moved.labels, &shuffled), Some(&perm))
            );
        }
    }

    #[test]
    fn prototypes_in_hull_and_counts_bounded() {
        let mut rng = StdRng::seed_from_u64(21);
        let points: Vec<Vec<f64>> = (0..80)
            .map(|_| {
                let c = if rng.gen_bool(0.5) { 0.0 } else { 3.0 };
                vec![c + rng.gen_range(-0.2..0.2), c + rng.gen_range(-0.2..0.2)]
            })
            .collect();
        let assignment = dbscan(&points, 0.5, 3).unwrap();
        let protos = build_prototypes(&points, &assignment).unwrap();
        let total: usize = protos.member_counts.iter().sum();
        assert!(total <= points.len());
        for (c, proto) in protos.prototypes.iter().enumerate() {
            for d in 0..2 {
                let members: Vec<f64> = points
                    .iter()
                    .zip(&assignment.labels)
                    .filter(|(_, l)| **l == Some(c))
                    .map(|(p, _)| p[d])
                    .collect();
                let lo = members.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = members.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert!(proto[d] >= lo - 1e-12 && proto[d] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn normalized_instances_give_bounded_prototypes() {
        let mut rng = StdRng::seed_from_u64(31);
        let points: Vec<Vec<f64>> = (0..40)
            .map(|_| {
                let raw: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
                raw.iter().map(|v| v / norm).collect()
            })
            .collect();
        let assignment = dbscan(&points, 0.8, 2).unwrap();
        let protos = build_prototypes(&points, &assignment).unwrap();
        for proto in &protos.prototypes {
            let norm = proto.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn all_samplings_are_independent() {
        let set_a = points_1d(&[0.0, 0.1, 0.2, 10.0, 10.1]);
        let set_b = points_1d(&[0.0, 0.05, 0.1, 0.15, 0.2]);

        // q = 1 is a plain dbscan call.
        let one = cluster_all_samplings(&[set_a.clone()], EpsSetting::Fixed(0.5), 2).unwrap();
        assert_eq!(one[0].0.labels, dbscan(&set_a, 0.5, 2).unwrap().labels);

        // Identical sets give identical assignments.
        let twin =
            cluster_all_samplings(&[set_a.clone(), set_a.clone()], EpsSetting::Fixed(0.5), 2)
                .unwrap();
        assert_eq!(twin[0].0.labels, twin[1].0.labels);
        assert_eq!(twin[0].0.sampling_index, 0);
        assert_eq!(twin[1].0.sampling_index, 1);

        // Disjoint structures yield independent cluster counts.
        let both = cluster_all_samplings(&[set_a.clone(), set_b.clone()], EpsSetting::Fixed(0.5), 2)
            .unwrap();
        assert_eq!(both[0].0.num_clusters, 2);
        assert_eq!(both[1].0.num_clusters, 1);
        for (i, set) in [set_a, set_b].iter().enumerate() {
            let solo = dbscan(set, 0.5, 2).unwrap();
            assert_eq!(both[i].0.labels, solo.labels);
        }
    }

    #[test]
    fn auto_eps_tracks_scale() {
        let mut rng = StdRng::seed_from_u64(55);
        let tight: Vec<Vec<f64>> = (0..50)
            .map(|_| vec![rng.gen_range(-0.1..0.1)])
            .collect();
        let wide: Vec<Vec<f64>> = (0..50).map(|_| vec![rng.gen_range(-10.0..10.0)]).collect();
        let e_tight = auto_eps(&tight, 4, 30.0).unwrap();
        let e_wide = auto_eps(&wide, 4, 30.0).unwrap();
        assert!(e_tight > 0.0 && e_wide > e_tight);

        // Duplicates: percentile would be zero, falls back to a positive radius.
        let dup = points_1d(&[1.0, 1.0, 1.0, 2.0]);
        assert!(auto_eps(&dup, 2, 30.0).unwrap() > 0.0);
    }
}
