//! Global association: conflict graph over all live leaves, maximum-weight
//! independent set, N-scan pruning and track assembly.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use crate::error::{MttError, Result};
use crate::kalman::{rts_smooth, KalmanParams};
use crate::model::{DetId, Detection, FinalTrack, TrackBox, Tracklet};
use crate::tracker::TrackTree;

const TIE_EPS: f64 = 1e-12;

/// A live hypothesis: leaf `leaf` of the tree at position `tree`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HypRef {
    pub tree: usize,
    pub leaf: usize,
}

#[derive(Debug, Clone)]
pub struct ConflictGraph {
    pub nodes: Vec<HypRef>,
    pub weights: Vec<f64>,
    adj: Vec<Vec<bool>>,
}

impl ConflictGraph {
    /// Graph over arbitrary weights and edges; node refs are placeholders.
    pub fn from_edges(weights: Vec<f64>, edges: &[(usize, usize)]) -> Self {
        let n = weights.len();
        let mut adj = vec![vec![false; n]; n];
        for &(a, b) in edges {
            if a != b {
                adj[a][b] = true;
                adj[b][a] = true;
            }
        }
        ConflictGraph {
            nodes: (0..n).map(|i| HypRef { tree: i, leaf: 0 }).collect(),
            weights,
            adj,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn conflicts(&self, a: usize, b: usize) -> bool {
        self.adj[a][b]
    }

    pub fn n_edges(&self) -> usize {
        self.adj.iter().map(|r| r.iter().filter(|&&x| x).count()).sum::<usize>() / 2
    }

    pub fn is_independent(&self, set: &[usize]) -> bool {
        set.iter()
            .enumerate()
            .all(|(i, &a)| set[i + 1..].iter().all(|&b| a != b && !self.adj[a][b]))
    }

    pub fn weight_of(&self, set: &[usize]) -> f64 {
        set.iter().map(|&i| self.weights[i]).sum()
    }

    /// Connected components, each sorted, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.len();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for s in 0..n {
            if seen[s] {
                continue;
            }
            seen[s] = true;
            let mut comp = vec![s];
            let mut stack = vec![s];
            while let Some(p) = stack.pop() {
                for (q, &edge) in self.adj[p].iter().enumerate() {
                    if edge && !seen[q] {
                        seen[q] = true;
                        comp.push(q);
                        stack.push(q);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }
}

/// One node per live leaf, weighted by its cumulative score; two leaves
/// conflict when their paths share a detection (so all leaves of one tree
/// form a clique).
pub fn build_conflict_graph(trees: &[TrackTree]) -> ConflictGraph {
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    let mut index: BTreeMap<DetId, Vec<usize>> = BTreeMap::new();
    for (ti, tree) in trees.iter().enumerate() {
        for &leaf in &tree.leaves {
            let id = nodes.len();
            nodes.push(HypRef { tree: ti, leaf });
            weights.push(tree.nodes[leaf].cum_score);
            for d in tree.det_ids(leaf) {
                index.entry(d).or_default().push(id);
            }
        }
    }
    let n = nodes.len();
    let mut adj = vec![vec![false; n]; n];
    for users in index.values() {
        for (i, &a) in users.iter().enumerate() {
            for &b in &users[i + 1..] {
                adj[a][b] = true;
                adj[b][a] = true;
            }
        }
    }
    ConflictGraph { nodes, weights, adj }
}

/// `true` if `(wa, a)` beats `(wb, b)`: higher weight, then the
/// lexicographically smaller sorted id list.
fn better(wa: f64, a: &[usize], wb: f64, b: &[usize]) -> bool {
    if wa > wb + TIE_EPS {
        return true;
    }
    if wa < wb - TIE_EPS {
        return false;
    }
    a < b
}

fn sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v
}

pub const BRUTE_FORCE_MAX: usize = 15;

/// Exhaustive search; refuses graphs above 15 nodes.
pub fn mwis_bruteforce(g: &ConflictGraph) -> Result<Vec<usize>> {
    let n = g.len();
    if n > BRUTE_FORCE_MAX {
        return Err(MttError::Budget { size: n, budget: BRUTE_FORCE_MAX });
    }
    let mut best = (0.0, Vec::new());
    for mask in 0u32..(1u32 << n) {
        let set: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        if !g.is_independent(&set) || set.iter().any(|&i| g.weights[i] <= 0.0) {
            continue;
        }
        let w = g.weight_of(&set);
        if better(w, &set, best.0, &best.1) {
            best = (w, set);
        }
    }
    Ok(best.1)
}

/// Repeatedly takes the remaining node with the largest
/// `weight / (degree + 1)` (ties by id) and removes its neighborhood.
/// Non-positive nodes are never taken.
pub fn mwis_greedy(g: &ConflictGraph) -> Vec<usize> {
    mwis_greedy_on(g, &(0..g.len()).collect::<Vec<_>>())
}

fn mwis_greedy_on(g: &ConflictGraph, nodes: &[usize]) -> Vec<usize> {
    let mut left: Vec<usize> = nodes.iter().copied().filter(|&i| g.weights[i] > 0.0).collect();
    let mut chosen: Vec<usize> = Vec::new();
    while !left.is_empty() {
        let ratio = |v: usize| {
            let deg = left.iter().filter(|&&u| g.adj[v][u]).count();
            g.weights[v] / (deg + 1) as f64
        };
        let mut best = left[0];
        let mut best_r = ratio(best);
        for &v in &left[1..] {
            let r = ratio(v);
            if r > best_r {
                best = v;
                best_r = r;
            }
        }
        chosen.push(best);
        left.retain(|&u| u != best && !g.adj[best][u]);
    }
    sorted(chosen)
}

struct Exact<'a> {
    ids: Vec<usize>,
    w: Vec<f64>,
    adj: Vec<u64>,
    g: &'a ConflictGraph,
    best_w: f64,
    best: Vec<usize>,
}

impl Exact<'_> {
    /// Sum of the heaviest node of each clique in a greedy clique cover.
    fn bound(&self, mut cands: u64) -> f64 {
        let mut total = 0.0;
        // Local ids are in descending-weight order, so the first node of
        // each clique is its heaviest.
        while cands != 0 {
            let lead = cands.trailing_zeros() as usize;
            total += self.w[lead];
            let mut clique = 1u64 << lead;
            let mut rest = cands & !clique & self.adj[lead];
            while rest != 0 {
                let v = rest.trailing_zeros() as usize;
                clique |= 1 << v;
                rest &= self.adj[v] & !(1u64 << v);
            }
            cands &= !clique;
        }
        total
    }

    fn set_of(&self, mask: u64) -> Vec<usize> {
        sorted((0..self.ids.len()).filter(|i| mask >> i & 1 == 1).map(|i| self.ids[i]).collect())
    }

    fn search(&mut self, cands: u64, cur_w: f64, cur: u64) {
        if cands == 0 {
            let set = self.set_of(cur);
            if better(cur_w, &set, self.best_w, &self.best) {
                self.best_w = cur_w;
                self.best = set;
            }
            return;
        }
        if cur_w + self.bound(cands) < self.best_w - TIE_EPS {
            return;
        }
        let v = cands.trailing_zeros() as usize;
        let bit = 1u64 << v;
        self.search(cands & !bit & !self.adj[v], cur_w + self.w[v], cur | bit);
        self.search(cands & !bit, cur_w, cur);
    }
}

fn mwis_exact_on(g: &ConflictGraph, nodes: &[usize]) -> Result<Vec<usize>> {
    let mut ids: Vec<usize> = nodes.iter().copied().filter(|&i| g.weights[i] > 0.0).collect();
    if ids.len() > 64 {
        return Err(MttError::Budget { size: ids.len(), budget: 64 });
    }
    ids.sort_by(|&a, &b| g.weights[b].total_cmp(&g.weights[a]).then(a.cmp(&b)));
    let adj = ids
        .iter()
        .map(|&a| {
            ids.iter()
                .enumerate()
                .filter(|&(_, &b)| g.adj[a][b])
                .fold(0u64, |m, (j, _)| m | 1 << j)
        })
        .collect();
    let w = ids.iter().map(|&i| g.weights[i]).collect();
    let greedy = mwis_greedy_on(g, &ids);
    let mut ex = Exact {
        w,
        adj,
        g,
        best_w: g.weight_of(&greedy),
        best: greedy,
        ids,
    };
    let all = if ex.ids.len() == 64 { u64::MAX } else { (1u64 << ex.ids.len()) - 1 };
    ex.search(all, 0.0, 0);
    debug_assert!(ex.g.is_independent(&ex.best));
    Ok(ex.best)
}

/// Exact branch and bound over the whole graph (at most 64 positive nodes).
pub fn mwis_exact(g: &ConflictGraph) -> Result<Vec<usize>> {
    mwis_exact_on(g, &(0..g.len()).collect::<Vec<_>>())
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MwisStats {
    pub exact_components: usize,
    pub greedy_components: usize,
}

/// Solves each connected component separately: exactly when it has at
/// most `exact_max` nodes, greedily otherwise.
pub fn solve_mwis(g: &ConflictGraph, exact_max: usize) -> (Vec<usize>, MwisStats) {
    let mut stats = MwisStats::default();
    let mut out = Vec::new();
    for comp in g.components() {
        let positive = comp.iter().filter(|&&i| g.weights[i] > 0.0).count();
        if positive == 0 {
            continue;
        }
        let exact = if positive <= exact_max.min(64) {
            mwis_exact_on(g, &comp).ok()
        } else {
            None
        };
        match exact {
            Some(s) => {
                stats.exact_components += 1;
                out.extend(s);
            }
            None => {
                log::warn!("MWIS component with {positive} nodes solved greedily");
                stats.greedy_components += 1;
                out.extend(mwis_greedy_on(g, &comp));
            }
        }
    }
    (sorted(out), stats)
}

/// Newly committed tracklets of one tree, in path order.
#[derive(Debug, Clone)]
pub struct Commit {
    pub tree_id: u32,
    pub tracklets: Vec<Arc<Tracklet>>,
}

fn commit_range(tree: &mut TrackTree, path: &[usize], upto: usize) -> Vec<Arc<Tracklet>> {
    let from = match tree.committed_upto {
        Some(c) => path.iter().position(|&n| n == c).map_or(0, |p| p + 1),
        None => 0,
    };
    if from > upto {
        // already committed past this point
        return Vec::new();
    }
    let out = path[from..=upto]
        .iter()
        .filter_map(|&n| tree.nodes[n].tracklet.clone())
        .collect();
    tree.committed_upto = Some(path[upto]);
    out
}

/// N-scan pruning after a round. For every tree with a selected leaf, the
/// ancestor `k` levels above it is fixed: leaves not descending from it
/// are dropped and its path is committed. Leaves of other trees sharing a
/// newly committed detection are dropped, and trees without a selected
/// leaf older than `k` rounds are deleted.
pub fn nscan_prune(
    trees: &mut Vec<TrackTree>,
    selected: &[HypRef],
    k: usize,
    round: u32,
    log: &mut Vec<String>,
) -> Vec<Commit> {
    let chosen: BTreeMap<usize, usize> = selected.iter().map(|h| (h.tree, h.leaf)).collect();
    let mut commits = Vec::new();
    let mut fresh: HashSet<DetId> = HashSet::new();
    let mut committing_tree: HashSet<usize> = HashSet::new();

    for (&ti, &leaf) in &chosen {
        let tree = &mut trees[ti];
        let path = tree.path(leaf);
        if path.len() <= k {
            continue;
        }
        let pos = path.len() - 1 - k;
        let anchor = path[pos];
        let before = tree.leaves.len();
        let kept: Vec<usize> = tree
            .leaves
            .iter()
            .copied()
            .filter(|&l| tree.path_contains(l, anchor))
            .collect();
        tree.leaves = kept;
        if tree.leaves.len() != before {
            log.push(format!(
                "round={round} prune tree={} leaves={} reason=nscan",
                tree.id,
                before - tree.leaves.len()
            ));
        }
        if tree.committed_upto == Some(anchor) {
            continue;
        }
        let tracklets = commit_range(tree, &path, pos);
        for t in &tracklets {
            fresh.extend(t.det_ids());
        }
        committing_tree.insert(ti);
        if !tracklets.is_empty() {
            log.push(format!(
                "round={round} commit tree={} node={anchor} tracklets={}",
                tree.id,
                tracklets.iter().map(|t| t.id.to_string()).collect::<Vec<_>>().join(";")
            ));
            commits.push(Commit {
                tree_id: tree.id,
                tracklets,
            });
        }
    }

    if !fresh.is_empty() {
        for (ti, tree) in trees.iter_mut().enumerate() {
            if committing_tree.contains(&ti) {
                continue;
            }
            let before = tree.leaves.len();
            let keep: Vec<usize> = tree
                .leaves
                .iter()
                .copied()
                .filter(|&l| tree.det_ids(l).iter().all(|d| !fresh.contains(d)))
                .collect();
            tree.leaves = keep;
            if tree.leaves.len() != before {
                log.push(format!(
                    "round={round} prune tree={} leaves={} reason=committed_conflict",
                    tree.id,
                    before - tree.leaves.len()
                ));
            }
        }
    }

    let mut ti = 0;
    trees.retain(|t| {
        let keep = !t.leaves.is_empty()
            && (chosen.contains_key(&ti) || (round.saturating_sub(t.born_round) as usize) <= k);
        if !keep {
            log.push(format!("round={round} delete tree={}", t.id));
        }
        ti += 1;
        keep
    });
    commits
}

/// End-of-sequence commit of the full path of every selected leaf. A tree
/// that has not committed anything yet needs at least two tracklets on the
/// path.
pub fn flush_commit(trees: &mut [TrackTree], selected: &[HypRef]) -> Vec<Commit> {
    let mut out = Vec::new();
    for h in selected {
        let tree = &mut trees[h.tree];
        let path = tree.path(h.leaf);
        let n_tracklets = path.iter().filter(|&&n| tree.nodes[n].tracklet.is_some()).count();
        if tree.committed_upto.is_none() && n_tracklets < 2 {
            continue;
        }
        let tracklets = commit_range(tree, &path, path.len() - 1);
        if !tracklets.is_empty() {
            out.push(Commit {
                tree_id: tree.id,
                tracklets,
            });
        }
    }
    out
}

/// RTS-smoothed track over the committed detections. Gaps are filled with
/// interpolated boxes (score 0); a single detection is returned unchanged.
pub fn smooth_track(track_id: u32, members: &[Detection], p: &KalmanParams) -> Result<FinalTrack> {
    let mut dets = members.to_vec();
    dets.sort_by_key(|d| d.frame);
    let obs: Vec<_> = dets.iter().map(|d| (d.frame, d.bbox)).collect();
    let smoothed = rts_smooth(&obs, p)?;
    let mut scores = dets.iter().map(|d| d.score);
    let boxes = smoothed
        .into_iter()
        .map(|s| TrackBox {
            frame: s.frame,
            bbox: s.bbox,
            score: if s.interpolated { 0.0 } else { scores.next().unwrap_or(0.0) },
            interpolated: s.interpolated,
        })
        .collect();
    let mut source: Vec<DetId> = dets.iter().map(|d| d.det_id).collect();
    source.sort_unstable();
    Ok(FinalTrack {
        track_id,
        boxes,
        source,
    })
}

/// Committed tracklets by tree id, turned into smoothed tracks numbered
/// from 1 in order of first frame.
pub fn assemble_tracks(
    committed: &BTreeMap<u32, Vec<Arc<Tracklet>>>,
    p: &KalmanParams,
) -> Result<Vec<FinalTrack>> {
    let mut groups: Vec<(u32, Vec<Detection>)> = committed
        .iter()
        .map(|(&id, ts)| (id, ts.iter().flat_map(|t| t.members.iter().cloned()).collect::<Vec<_>>()))
        .filter(|(_, m)| !m.is_empty())
        .collect();
    groups.sort_by_key(|(id, m)| (m.iter().map(|d| d.frame).min(), *id));
    groups
        .iter()
        .enumerate()
        .map(|(i, (_, m))| smooth_track(i as u32 + 1, m, p))
        .collect()
}
