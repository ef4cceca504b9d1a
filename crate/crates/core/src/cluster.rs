//! Stationary stretches of the Hankel trajectory and recovery of the discrete
//! states by clustering an eigenvalue feature of the realization.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::hankel::{build_default, window};
use crate::linalg::spectral_abs_sum;
use crate::ltv::LtvRealization;
use crate::model::{DiscreteState, MarkovSequence};

/// `δ_H(k) = H(k+1) − H(k)` with `H = H_{2n+1,2n}`.
pub fn hankel_diff(markov: &MarkovSequence, k: usize) -> Result<DMatrix<f64>> {
    let (lo, hi) = window(markov.n_steps(), markov.order())?;
    if k < lo || k > hi {
        return Err(Error::IndexOutOfRange { index: k, lo, hi });
    }
    Ok(build_default(markov, k + 1)?.data - build_default(markov, k)?.data)
}

/// `‖δ_H(k)‖_F` for every `k` of the window, in order.
pub fn diff_norms(markov: &MarkovSequence, exec: Execution) -> Result<Vec<f64>> {
    let (lo, hi) = window(markov.n_steps(), markov.order())?;
    exec.map_range(lo, hi, |k| hankel_diff(markov, k).map(|d| d.norm()))
        .into_iter()
        .collect()
}

/// Largest `‖H(k)‖_F` over the window, sampled every `2n+1` anchors.
pub fn hankel_scale(markov: &MarkovSequence) -> Result<f64> {
    let (lo, hi) = window(markov.n_steps(), markov.order())?;
    let step = 2 * markov.order() + 1;
    let mut best: f64 = 0.0;
    for k in (lo..=hi + 1).step_by(step) {
        best = best.max(build_default(markov, k)?.data.norm());
    }
    Ok(best)
}

/// Closed index interval `[alpha, beta]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub alpha: usize,
    pub beta: usize,
}

impl Interval {
    /// `β − α`.
    pub fn span(&self) -> usize {
        self.beta - self.alpha
    }

    /// Midpoint `⌊(α+β)/2⌋`.
    pub fn gamma(&self) -> usize {
        (self.alpha + self.beta) / 2
    }

    pub fn contains(&self, k: usize) -> bool {
        self.alpha <= k && k <= self.beta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarySet {
    pub epsilon_z: f64,
    pub nu: usize,
    pub order: usize,
    pub window: (usize, usize),
    /// `‖δ_H(k)‖_F` for `k = window.0 ..= window.1`.
    pub diff_norms: Vec<f64>,
    pub members: Vec<usize>,
    /// Every maximal run of consecutive members.
    pub runs: Vec<Interval>,
    /// Runs with `β − α ≥ ν n`.
    pub intervals: Vec<Interval>,
}

impl StationarySet {
    pub fn is_member(&self, k: usize) -> bool {
        k >= self.window.0 && k <= self.window.1 && self.diff_norms[k - self.window.0] <= self.epsilon_z
    }

    /// Minimum interval length `ν n`.
    pub fn min_span(&self) -> usize {
        self.nu * self.order
    }
}

/// Thresholds precomputed difference norms.
pub fn stationary_from_norms(
    norms: Vec<f64>,
    window: (usize, usize),
    order: usize,
    epsilon_z: f64,
    nu: usize,
) -> Result<StationarySet> {
    let members: Vec<usize> = (window.0..=window.1)
        .filter(|&k| norms[k - window.0] <= epsilon_z)
        .collect();
    if members.is_empty() {
        return Err(Error::EmptyStationarySet { epsilon: epsilon_z });
    }
    let mut runs = Vec::new();
    let mut start = members[0];
    for w in members.windows(2) {
        if w[1] != w[0] + 1 {
            runs.push(Interval { alpha: start, beta: w[0] });
            start = w[1];
        }
    }
    runs.push(Interval {
        alpha: start,
        beta: *members.last().expect("nonempty"),
    });
    let intervals: Vec<Interval> = runs.iter().copied().filter(|r| r.span() >= nu * order).collect();
    if intervals.is_empty() {
        return Err(Error::NoLongIntervals { min_len: nu * order });
    }
    Ok(StationarySet {
        epsilon_z,
        nu,
        order,
        window,
        diff_norms: norms,
        members,
        runs,
        intervals,
    })
}

/// Members `‖δ_H(k)‖_F ≤ ε_Z` and their maximal runs.
pub fn stationary_set(markov: &MarkovSequence, epsilon_z: f64, nu: usize, exec: Execution) -> Result<StationarySet> {
    if !(epsilon_z > 0.0) {
        return Err(Error::Infeasible("epsilon_z must be positive".into()));
    }
    let win = window(markov.n_steps(), markov.order())?;
    let norms = diff_norms(markov, exec)?;
    stationary_from_norms(norms, win, markov.order(), epsilon_z, nu)
}

/// Data-driven threshold: the larger of `rel · scale` and `factor` times the
/// 25th percentile of the difference norms. With exact data pass
/// `factor = 0`.
pub fn auto_epsilon(norms: &[f64], scale: f64, rel: f64, factor: f64) -> f64 {
    let mut sorted = norms.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = sorted.get(sorted.len() / 4).copied().unwrap_or(0.0);
    (rel * scale).max(factor * q)
}

/// Sum of eigenvalue magnitudes.
pub fn feature_m(x: &DMatrix<f64>) -> f64 {
    spectral_abs_sum(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub radius: f64,
    pub min_points: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            radius: 1e-5,
            min_points: 1,
        }
    }
}

/// Density-based clustering of scalar values.
///
/// A point is core when at least `min_points` values (itself included) lie
/// within `radius`. Core points closer than `radius` in sorted order share a
/// cluster; border points join the nearest core point's cluster (lower
/// cluster on exact ties); the rest are noise (`None`). Cluster ids are
/// numbered from 0 in order of first appearance in `values`.
pub fn dbscan_1d(values: &[f64], radius: f64, min_points: usize) -> Vec<Option<usize>> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();

    let mut core = vec![false; n];
    let (mut lo, mut hi) = (0usize, 0usize);
    for i in 0..n {
        while sorted[i] - sorted[lo] > radius {
            lo += 1;
        }
        while hi + 1 < n && sorted[hi + 1] - sorted[i] <= radius {
            hi += 1;
        }
        core[i] = hi + 1 - lo >= min_points.max(1);
    }

    let mut raw = vec![None; n];
    let mut next = 0;
    let mut last_core: Option<usize> = None;
    for i in 0..n {
        if !core[i] {
            continue;
        }
        match last_core {
            Some(j) if sorted[i] - sorted[j] <= radius => raw[i] = raw[j],
            _ => {
                raw[i] = Some(next);
                next += 1;
            }
        }
        last_core = Some(i);
    }
    for i in 0..n {
        if core[i] {
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for j in 0..n {
            if !core[j] {
                continue;
            }
            let d = (sorted[i] - sorted[j]).abs();
            if d > radius {
                continue;
            }
            let c = raw[j].expect("core has cluster");
            best = match best {
                Some((bd, bc)) if bd < d || (bd == d && bc <= c) => Some((bd, bc)),
                _ => Some((d, c)),
            };
        }
        raw[i] = best.map(|b| b.1);
    }

    // Renumber by first appearance in input order.
    let mut by_input = vec![None; n];
    for (pos, &i) in order.iter().enumerate() {
        by_input[i] = raw[pos];
    }
    let mut map: Vec<Option<usize>> = vec![None; next];
    let mut fresh = 0;
    by_input
        .into_iter()
        .map(|c| {
            c.map(|c| {
                *map[c].get_or_insert_with(|| {
                    fresh += 1;
                    fresh - 1
                })
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub sigma_hat: usize,
    /// Clustered intervals, in time order.
    pub intervals: Vec<Interval>,
    /// Label (1-based) of each interval.
    pub assignments: Vec<usize>,
    /// `M(Â(γ_i))` of each interval.
    pub features: Vec<f64>,
    /// Index into `intervals` of each label's representative.
    pub rep_interval: Vec<usize>,
    /// Representative quadruple `P̂(γ)` per label (`representatives[j−1]`).
    pub representatives: Vec<DiscreteState>,
}

impl ClusterResult {
    /// Feature of a label's representative.
    pub fn rep_feature(&self, label: usize) -> f64 {
        self.features[self.rep_interval[label - 1]]
    }

    /// Label whose representative feature is nearest `f` (lower label on ties).
    pub fn nearest_label(&self, f: f64) -> usize {
        (1..=self.sigma_hat)
            .min_by(|&a, &b| {
                (self.rep_feature(a) - f)
                    .abs()
                    .total_cmp(&(self.rep_feature(b) - f).abs())
                    .then(a.cmp(&b))
            })
            .expect("at least one label")
    }

    /// Total number of stationary points per label.
    pub fn support(&self) -> Vec<usize> {
        let mut s = vec![0; self.sigma_hat];
        for (iv, &l) in self.intervals.iter().zip(&self.assignments) {
            s[l - 1] += iv.span() + 1;
        }
        s
    }
}

fn finish(
    real: &LtvRealization,
    intervals: Vec<Interval>,
    features: Vec<f64>,
    raw: Vec<usize>,
) -> Result<ClusterResult> {
    // Relabel 1.. by first occurrence in time.
    let mut map: Vec<Option<usize>> = vec![None; raw.iter().max().map_or(0, |m| m + 1)];
    let mut sigma = 0;
    let assignments: Vec<usize> = raw
        .iter()
        .map(|&c| {
            *map[c].get_or_insert_with(|| {
                sigma += 1;
                sigma
            })
        })
        .collect();
    let mut rep_interval = vec![usize::MAX; sigma];
    for (i, &l) in assignments.iter().enumerate() {
        let cur = rep_interval[l - 1];
        if cur == usize::MAX || intervals[i].span() > intervals[cur].span() {
            rep_interval[l - 1] = i;
        }
    }
    let representatives = rep_interval
        .iter()
        .map(|&i| {
            real.get(intervals[i].gamma()).cloned().ok_or(Error::IndexOutOfRange {
                index: intervals[i].gamma(),
                lo: real.window.0,
                hi: real.window.1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClusterResult {
        sigma_hat: sigma,
        intervals,
        assignments,
        features,
        rep_interval,
        representatives,
    })
}

/// Clusters `M(Â(γ_i))` over the long intervals of `ss`. Noise points (only
/// possible with `min_points > 1`) join the cluster with the nearest feature.
pub fn cluster_states(real: &LtvRealization, ss: &StationarySet, params: &ClusterParams) -> Result<ClusterResult> {
    if ss.intervals.is_empty() {
        return Err(Error::NoLongIntervals { min_len: ss.min_span() });
    }
    let features = ss
        .intervals
        .iter()
        .map(|iv| {
            real.get(iv.gamma()).map(|q| feature_m(&q.a)).ok_or(Error::IndexOutOfRange {
                index: iv.gamma(),
                lo: real.window.0,
                hi: real.window.1,
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let labels = dbscan_1d(&features, params.radius, params.min_points);
    let clustered: Vec<(f64, usize)> = features
        .iter()
        .zip(&labels)
        .filter_map(|(f, l)| l.map(|l| (*f, l)))
        .collect();
    let raw: Vec<usize> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            l.unwrap_or_else(|| {
                clustered
                    .iter()
                    .min_by(|a, b| (a.0 - features[i]).abs().total_cmp(&(b.0 - features[i]).abs()).then(a.1.cmp(&b.1)))
                    .map_or(i + labels.len(), |c| c.1)
            })
        })
        .collect();
    finish(real, ss.intervals.clone(), features, raw)
}

/// Merges spurious clusters.
///
/// A cluster whose longest interval is shorter than `min_support` is merged
/// into the surviving cluster with the nearest representative feature. If
/// `target` is given, the two clusters with the closest representative
/// features are then merged repeatedly until at most `target` remain.
pub fn recluster(
    result: &ClusterResult,
    real: &LtvRealization,
    min_support: usize,
    target: Option<usize>,
) -> Result<ClusterResult> {
    let sigma = result.sigma_hat;
    let longest: Vec<usize> = (1..=sigma)
        .map(|l| result.intervals[result.rep_interval[l - 1]].span())
        .collect();
    let survivors: Vec<usize> = (1..=sigma).filter(|&l| longest[l - 1] >= min_support).collect();
    if survivors.is_empty() {
        return Err(Error::NoLongIntervals { min_len: min_support });
    }
    // parent[l-1] is the label l currently maps to.
    let mut parent: Vec<usize> = (1..=sigma).collect();
    for l in 1..=sigma {
        if !survivors.contains(&l) {
            let f = result.rep_feature(l);
            parent[l - 1] = *survivors
                .iter()
                .min_by(|&&a, &&b| {
                    (result.rep_feature(a) - f)
                        .abs()
                        .total_cmp(&(result.rep_feature(b) - f).abs())
                        .then(a.cmp(&b))
                })
                .expect("nonempty");
        }
    }
    let mut alive = survivors;
    if let Some(t) = target {
        while alive.len() > t.max(1) {
            let mut best: Option<(f64, usize, usize)> = None;
            for (i, &a) in alive.iter().enumerate() {
                for &b in &alive[i + 1..] {
                    let d = (result.rep_feature(a) - result.rep_feature(b)).abs();
                    if best.is_none_or(|x| d < x.0) {
                        best = Some((d, a, b));
                    }
                }
            }
            let (_, a, b) = best.expect("two alive");
            // Keep the better supported one.
            let (keep, drop) = if longest[b - 1] > longest[a - 1] { (b, a) } else { (a, b) };
            for p in parent.iter_mut() {
                if *p == drop {
                    *p = keep;
                }
            }
            alive.retain(|&x| x != drop);
        }
    }
    let raw: Vec<usize> = result.assignments.iter().map(|&l| parent[l - 1] - 1).collect();
    finish(real, result.intervals.clone(), result.features.clone(), raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{eigen_distance, eigenvalues};
    use crate::ltv::realize_range;
    use crate::model::{generate_markov, paper_example_states, Band, SlsModel, SwitchingSequence};

    fn paper(runs: &[(usize, usize)]) -> (SlsModel, MarkovSequence) {
        let m = SlsModel::new(paper_example_states(), SwitchingSequence::from_segments(runs).unwrap()).unwrap();
        let seq = generate_markov(&m, Band::pipeline(3));
        (m, seq)
    }

    #[test]
    fn feature_values() {
        assert!((feature_m(&DMatrix::identity(4, 4)) - 4.0).abs() < 1e-14);
        let s = paper_example_states();
        assert!((feature_m(&s[0].a) - 2.316299).abs() < 1e-6);
        assert!((feature_m(&s[1].a) - 2.023701).abs() < 1e-6);
        assert!((feature_m(&s[2].a) - 1.590203).abs() < 1e-6);
    }

    #[test]
    fn dbscan_gap_sweep() {
        let v = [1.0, 3.0, 1.000001, 2.0, 3.000002, 1.0000005];
        let l = dbscan_1d(&v, 1e-5, 1);
        assert_eq!(l, vec![Some(0), Some(1), Some(0), Some(2), Some(1), Some(0)]);
        let noisy = dbscan_1d(&[0.0, 0.1, 0.2, 5.0], 0.15, 2);
        assert_eq!(noisy, vec![Some(0), Some(0), Some(0), None]);
    }

    #[test]
    fn dbscan_border_tie_goes_to_lower_cluster() {
        // Border point 1.0 sits exactly at radius from core points 0 and 2.
        let v = [0.0, -0.2, -0.5, -0.9, 2.0, 2.2, 2.5, 2.9, 1.0];
        let l = dbscan_1d(&v, 1.0, 4);
        assert_eq!(l[0], Some(0));
        assert_eq!(l[4], Some(1));
        assert_eq!(l[8], Some(0));
    }

    #[test]
    fn lti_diff_vanishes_and_single_interval() {
        let s = paper_example_states().remove(0);
        let m = SlsModel::new(vec![s], SwitchingSequence::constant(1, 120).unwrap()).unwrap();
        let seq = generate_markov(&m, Band::pipeline(3));
        assert!(hankel_diff(&seq, 30).unwrap().norm() < 1e-14);
        let ss = stationary_set(&seq, 1e-8, 6, Execution::Parallel).unwrap();
        assert_eq!(ss.intervals, vec![Interval { alpha: 7, beta: 108 }]);
    }

    #[test]
    fn interval_structure_on_paper_example() {
        let n = 3;
        let runs = [(1, 60), (2, 45), (3, 50), (1, 45), (2, 70)];
        let (m, seq) = paper(&runs);
        let ss = stationary_set(&seq, 1e-4 * hankel_scale(&seq).unwrap(), 6, Execution::Parallel).unwrap();
        let segs = m.switching.segments();
        assert_eq!(ss.intervals.len(), segs.len());
        for (iv, seg) in ss.intervals.iter().zip(&segs) {
            let lo = if seg.start == 1 { ss.window.0 } else { seg.start + 2 * n };
            let hi = if seg.end == m.n_steps() { ss.window.1 } else { seg.end + 1 - 2 * n - 2 };
            assert!(iv.alpha <= lo && hi <= iv.beta, "{iv:?} vs {seg:?}");
            assert!(iv.alpha >= seg.start && iv.beta <= seg.end);
        }
        for w in ss.intervals.windows(2) {
            assert!(w[1].alpha - w[0].beta <= 4 * n + 2 + 1);
        }
        for k in m.switching.switches() {
            assert!(!(ss.is_member(k - 1) && ss.is_member(k)));
        }
        let sw = m.switching.switches()[0];
        assert!(hankel_diff(&seq, sw - 1).unwrap().norm() > ss.epsilon_z);
    }

    #[test]
    fn clusters_recover_three_states() {
        let (_, seq) = paper(&[(1, 60), (2, 45), (3, 50), (1, 45), (2, 70), (3, 60)]);
        let ss = stationary_set(&seq, 1e-4, 6, Execution::Parallel).unwrap();
        let anchors: Vec<usize> = ss.intervals.iter().map(Interval::gamma).collect();
        let real = realize_range(&seq, &anchors, Execution::Parallel).unwrap();
        let res = cluster_states(&real, &ss, &ClusterParams::default()).unwrap();
        assert_eq!(res.sigma_hat, 3);
        assert_eq!(res.assignments, vec![1, 2, 3, 1, 2, 3]);
        let truth = paper_example_states();
        for (rep, t) in res.representatives.iter().zip(&truth) {
            let d = eigen_distance(&eigenvalues(&rep.a), &eigenvalues(&t.a));
            assert!(d < 1e-8);
        }
        let same = recluster(&res, &real, 18, None).unwrap();
        assert_eq!(same, res);
    }

    #[test]
    fn recluster_merges_spurious_cluster() {
        let (_, seq) = paper(&[(1, 60), (2, 45), (3, 50), (1, 45)]);
        let ss = stationary_set(&seq, 1e-4, 6, Execution::Parallel).unwrap();
        let anchors: Vec<usize> = ss.intervals.iter().map(Interval::gamma).collect();
        let real = realize_range(&seq, &anchors, Execution::Parallel).unwrap();
        let mut res = cluster_states(&real, &ss, &ClusterParams::default()).unwrap();
        // Fake a fourth cluster on a short interval next to label 1's feature.
        let extra = Interval { alpha: ss.intervals[0].alpha, beta: ss.intervals[0].alpha + 4 };
        res.intervals.push(extra);
        res.assignments.push(4);
        res.features.push(res.features[0] + 1e-3);
        res.rep_interval.push(res.intervals.len() - 1);
        res.representatives.push(res.representatives[0].clone());
        res.sigma_hat = 4;
        let merged = recluster(&res, &real, 18, None).unwrap();
        assert_eq!(merged.sigma_hat, 3);
        assert_eq!(*merged.assignments.last().unwrap(), 1);
        let to_two = recluster(&merged, &real, 0, Some(2)).unwrap();
        assert_eq!(to_two.sigma_hat, 2);
    }

    #[test]
    fn empty_sets_are_errors() {
        let (_, seq) = paper(&[(1, 20), (2, 20), (3, 20)]);
        assert!(matches!(
            stationary_set(&seq, 1e-4, 6, Execution::Sequential),
            Err(Error::NoLongIntervals { .. })
        ));
        assert!(stationary_set(&seq, 0.0, 6, Execution::Sequential).is_err());
    }
}
