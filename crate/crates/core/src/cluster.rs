//! DBSCAN over torus Chebyshev distance, and label tracking across steps.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::transcript::Transcript;
use crate::world::{torus_chebyshev, AgentId, Position};

/// Minimum cluster size used throughout the analyses.
pub const MIN_PTS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Noise,
    Cluster(u32),
}

impl Label {
    pub fn cluster(self) -> Option<u32> {
        match self {
            Label::Cluster(c) => Some(c),
            Label::Noise => None,
        }
    }

    pub fn is_noise(self) -> bool {
        self == Label::Noise
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub step: u32,
    /// Indexed by agent id.
    pub labels: Vec<Label>,
}

impl ClusterAssignment {
    pub fn members(&self) -> BTreeMap<u32, Vec<AgentId>> {
        let mut out: BTreeMap<u32, Vec<AgentId>> = BTreeMap::new();
        for (agent, label) in self.labels.iter().enumerate() {
            if let Label::Cluster(c) = label {
                out.entry(*c).or_default().push(agent);
            }
        }
        out
    }
}

/// Standard DBSCAN. Cluster ids are dense from 0 in order of their lowest-id core point.
pub fn dbscan_step(positions: &[Position], eps: u32, min_pts: usize, side: u32) -> Vec<Label> {
    let n = positions.len();
    let neighborhoods: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| torus_chebyshev(positions[i], positions[j], side) <= eps)
                .collect()
        })
        .collect();
    // neighborhoods include the point itself
    let is_core = |i: usize| neighborhoods[i].len() >= min_pts;

    let mut labels = vec![None::<Label>; n];
    let mut next = 0u32;
    for i in 0..n {
        if labels[i].is_some() || !is_core(i) {
            continue;
        }
        let id = next;
        next += 1;
        labels[i] = Some(Label::Cluster(id));
        let mut frontier = neighborhoods[i].clone();
        while let Some(j) = frontier.pop() {
            match labels[j] {
                Some(Label::Cluster(_)) => continue,
                _ => labels[j] = Some(Label::Cluster(id)),
            }
            if is_core(j) {
                frontier.extend(neighborhoods[j].iter().copied().filter(|&k| labels[k].is_none()));
            }
        }
    }
    labels.into_iter().map(|l| l.unwrap_or(Label::Noise)).collect()
}

/// Per-step clusters with labels kept stable while a group persists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterTimeline {
    pub steps: Vec<ClusterAssignment>,
}

impl ClusterTimeline {
    pub fn label(&self, step: u32, agent: AgentId) -> Option<Label> {
        self.steps
            .get(step.checked_sub(1)? as usize)
            .and_then(|a| a.labels.get(agent).copied())
    }

    pub fn in_cluster(&self, step: u32, agent: AgentId) -> bool {
        self.label(step, agent).is_some_and(|l| !l.is_noise())
    }
}

/// Relabel `raw` so each current cluster inherits the previous label it
/// overlaps most. Pairs are granted greedily by overlap (descending), then
/// previous label (ascending); unmatched clusters get fresh labels.
fn carry_labels(prev: Option<&[Label]>, raw: &[Label], next_label: &mut u32) -> Vec<Label> {
    let current: BTreeMap<u32, Vec<AgentId>> = ClusterAssignment {
        step: 0,
        labels: raw.to_vec(),
    }
    .members();

    let mut pairs: Vec<(usize, u32, u32)> = Vec::new();
    if let Some(prev) = prev {
        for (&cur, members) in &current {
            let mut overlap: BTreeMap<u32, usize> = BTreeMap::new();
            for &a in members {
                if let Some(Label::Cluster(p)) = prev.get(a) {
                    *overlap.entry(*p).or_default() += 1;
                }
            }
            pairs.extend(overlap.into_iter().map(|(p, n)| (n, p, cur)));
        }
    }
    pairs.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut mapping: BTreeMap<u32, u32> = BTreeMap::new();
    let mut taken: Vec<u32> = Vec::new();
    for (_, p, cur) in pairs {
        if mapping.contains_key(&cur) || taken.contains(&p) {
            continue;
        }
        mapping.insert(cur, p);
        taken.push(p);
    }
    for &cur in current.keys() {
        mapping.entry(cur).or_insert_with(|| {
            let l = *next_label;
            *next_label += 1;
            l
        });
    }
    raw.iter()
        .map(|l| match l {
            Label::Cluster(c) => Label::Cluster(mapping[c]),
            Label::Noise => Label::Noise,
        })
        .collect()
}

/// Track clusters through a sequence of per-step position snapshots.
pub fn track_clusters(
    snapshots: &[Vec<Position>],
    eps: u32,
    side: u32,
    exec: Execution,
) -> ClusterTimeline {
    let raw = exec.map(snapshots, |ps| dbscan_step(ps, eps, MIN_PTS, side));
    let mut next_label = 0u32;
    let mut steps: Vec<ClusterAssignment> = Vec::with_capacity(raw.len());
    for (i, labels) in raw.iter().enumerate() {
        let prev = steps.last().map(|a| a.labels.as_slice());
        let labels = carry_labels(prev, labels, &mut next_label);
        steps.push(ClusterAssignment {
            step: i as u32 + 1,
            labels,
        });
    }
    ClusterTimeline { steps }
}

/// Clusters of each step's pre-move positions with `eps` = the reception range.
pub fn cluster_timeline(transcript: &Transcript, eps: u32, exec: Execution) -> ClusterTimeline {
    let snapshots: Vec<Vec<Position>> =
        transcript.records.iter().map(|r| r.positions_before()).collect();
    track_clusters(&snapshots, eps, transcript.config.side_length, exec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(x: u32, y: u32) -> Position {
        Position::new(x, y)
    }

    /// Union-find components of the within-eps graph; singletons become noise.
    fn components_oracle(ps: &[Position], eps: u32, side: u32) -> Vec<Option<usize>> {
        let n = ps.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], i: usize) -> usize {
            let mut r = i;
            while parent[r] != r {
                r = parent[r];
            }
            r
        }
        for i in 0..n {
            for j in i + 1..n {
                if torus_chebyshev(ps[i], ps[j], side) <= eps {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
        (0..n)
            .map(|i| (roots.iter().filter(|&&r| r == roots[i]).count() > 1).then_some(roots[i]))
            .collect()
    }

    fn same_partition(labels: &[Label], oracle: &[Option<usize>]) -> bool {
        let n = labels.len();
        (0..n).all(|i| {
            labels[i].is_noise() == oracle[i].is_none()
                && (0..n).all(|j| {
                    let a = labels[i].cluster().is_some() && labels[i] == labels[j];
                    let b = oracle[i].is_some() && oracle[i] == oracle[j];
                    a == b
                })
        })
    }

    #[test]
    fn pair_and_noise() {
        let labels = dbscan_step(&[p(0, 0), p(3, 3), p(20, 20)], 5, 2, 50);
        assert_eq!(labels, vec![Label::Cluster(0), Label::Cluster(0), Label::Noise]);
    }

    #[test]
    fn all_far_apart_is_all_noise() {
        let labels = dbscan_step(&[p(0, 0), p(10, 10), p(20, 20), p(30, 30)], 5, 2, 50);
        assert!(labels.iter().all(|l| l.is_noise()));
    }

    #[test]
    fn chain_links_transitively() {
        let labels = dbscan_step(&[p(0, 0), p(5, 0), p(10, 0)], 5, 2, 50);
        assert_eq!(labels, vec![Label::Cluster(0); 3]);
        let oracle = components_oracle(&[p(0, 0), p(5, 0), p(10, 0)], 5, 50);
        assert!(same_partition(&labels, &oracle));
    }

    #[test]
    fn wraps_around_edges() {
        let labels = dbscan_step(&[p(0, 0), p(48, 49)], 2, 2, 50);
        assert_eq!(labels, vec![Label::Cluster(0); 2]);
    }

    #[test]
    fn higher_min_pts_leaves_border_points_attached() {
        // 1 is core (sees 0 and 2); 0 and 2 are border points
        let labels = dbscan_step(&[p(0, 0), p(5, 0), p(10, 0)], 5, 3, 50);
        assert_eq!(labels, vec![Label::Cluster(0); 3]);
        let labels = dbscan_step(&[p(0, 0), p(5, 0)], 5, 3, 50);
        assert!(labels.iter().all(|l| l.is_noise()));
    }

    #[test]
    fn static_positions_keep_labels() {
        let snap = vec![p(0, 0), p(1, 1), p(30, 30), p(31, 31), p(10, 40)];
        let tl = track_clusters(&vec![snap; 5], 5, 50, Execution::Sequential);
        for a in &tl.steps {
            assert_eq!(a.labels, tl.steps[0].labels);
        }
    }

    #[test]
    fn persisting_cluster_keeps_label_while_others_churn() {
        // {0,1} together for 34 steps; agent 2 wanders in and out of a pair with agent 3
        let snaps: Vec<Vec<Position>> = (0..34u32)
            .map(|t| {
                let far = if t % 3 == 0 { p(40, 40) } else { p(20, 20) };
                vec![p(0, 0), p(2, 1), far, p(21, 21)]
            })
            .collect();
        let tl = track_clusters(&snaps, 5, 50, Execution::Parallel);
        let first = tl.label(1, 0).unwrap();
        for step in 1..=34 {
            assert_eq!(tl.label(step, 0), Some(first));
            assert_eq!(tl.label(step, 1), Some(first));
        }
    }

    #[test]
    fn merge_takes_label_of_larger_parent() {
        // step 1: A={0,1,2} and B={3,4}; step 2: all within reach of each other
        let s1 = vec![p(0, 0), p(1, 0), p(2, 0), p(20, 0), p(21, 0)];
        let s2 = vec![p(0, 0), p(1, 0), p(2, 0), p(5, 0), p(6, 0)];
        let tl = track_clusters(&[s1.clone(), s2.clone()], 3, 50, Execution::Sequential);
        let a = tl.label(1, 0).unwrap();
        let b = tl.label(1, 3).unwrap();
        assert_ne!(a, b);
        for agent in 0..5 {
            assert_eq!(tl.label(2, agent), Some(a));
        }

        // mirror: the larger parent is the one with higher id
        let m1 = vec![p(20, 0), p(21, 0), p(0, 0), p(1, 0), p(2, 0)];
        let m2 = vec![p(5, 0), p(6, 0), p(0, 0), p(1, 0), p(2, 0)];
        let tl = track_clusters(&[m1, m2], 3, 50, Execution::Sequential);
        let big = tl.label(1, 2).unwrap();
        assert_eq!(tl.label(1, 0), Some(Label::Cluster(0)));
        assert_eq!(big, Label::Cluster(1));
        for agent in 0..5 {
            assert_eq!(tl.label(2, agent), Some(big));
        }
    }

    #[test]
    fn equal_merge_goes_to_lower_label_and_split_gets_fresh_label() {
        let s1 = vec![p(0, 0), p(1, 0), p(20, 0), p(21, 0)];
        let s2 = vec![p(0, 0), p(1, 0), p(3, 0), p(4, 0)];
        let tl = track_clusters(&[s1, s2], 2, 50, Execution::Sequential);
        assert_eq!(tl.label(2, 3), Some(Label::Cluster(0)));

        let s1 = vec![p(0, 0), p(1, 0), p(2, 0), p(3, 0)];
        let s2 = vec![p(0, 0), p(1, 0), p(30, 0), p(31, 0)];
        let tl = track_clusters(&[s1, s2], 1, 50, Execution::Sequential);
        assert_eq!(tl.label(2, 0), Some(Label::Cluster(0)));
        assert_eq!(tl.label(2, 2), Some(Label::Cluster(1)));
    }

    fn positions(max: usize) -> impl Strategy<Value = Vec<Position>> {
        proptest::collection::vec((0u32..50, 0u32..50).prop_map(|(x, y)| p(x, y)), 1..=max)
    }

    proptest! {
        #[test]
        fn matches_connected_components(ps in positions(10), eps_idx in 0usize..6) {
            let eps = [0, 5, 10, 15, 20, 25][eps_idx];
            let labels = dbscan_step(&ps, eps, MIN_PTS, 50);
            prop_assert!(same_partition(&labels, &components_oracle(&ps, eps, 50)));
            // dense ids
            let max = labels.iter().filter_map(|l| l.cluster()).max();
            if let Some(m) = max {
                for id in 0..=m {
                    prop_assert!(labels.contains(&Label::Cluster(id)));
                }
            }
        }

        #[test]
        fn noise_iff_isolated(ps in positions(10), eps in 0u32..=25) {
            let labels = dbscan_step(&ps, eps, MIN_PTS, 50);
            for i in 0..ps.len() {
                let isolated = (0..ps.len()).all(|j| j == i || torus_chebyshev(ps[i], ps[j], 50) > eps);
                prop_assert_eq!(labels[i].is_noise(), isolated);
            }
        }

        #[test]
        fn permutation_invariant(ps in positions(10), eps in 0u32..=25, rot in 0usize..10) {
            let n = ps.len();
            let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
            let permuted: Vec<Position> = perm.iter().map(|&i| ps[i]).collect();
            let a = dbscan_step(&ps, eps, MIN_PTS, 50);
            let b = dbscan_step(&permuted, eps, MIN_PTS, 50);
            for i in 0..n {
                for j in 0..n {
                    let same_a = !a[perm[i]].is_noise() && a[perm[i]] == a[perm[j]];
                    let same_b = !b[i].is_noise() && b[i] == b[j];
                    prop_assert_eq!(same_a, same_b);
                }
            }
        }
    }
}
