//! Tracklet generation inside one density cluster.
//!
//! Detections become nodes of an affinity graph. Same-frame pairs, pairs
//! moving faster than the smaller box width per frame, and pairs whose
//! appearance similarity is below `theta_app` are forbidden. Every other
//! pair carries `exp(-dist / sigma_pos) * cos_sim`. Tracklets are the blocks
//! of the partition that maximizes total intra-block weight with every
//! block a clique of allowed pairs.

use std::fmt::Write as _;

use crate::config::Config;
use crate::error::{MttError, Result};
use crate::model::{cosine_similarity, Detection, EmbeddingTable, Tracklet};
use crate::tracker::tracklet_feature;

/// Largest graph the brute-force oracle accepts.
pub const BRUTE_FORCE_MAX: usize = 10;

const EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph {
    pub nodes: Vec<Detection>,
    /// Row-major `n x n`, `None` = forbidden. Diagonal is `None`.
    weights: Vec<Option<f64>>,
}

impl AffinityGraph {
    pub fn from_weights(nodes: Vec<Detection>, mut f: impl FnMut(usize, usize) -> Option<f64>) -> Self {
        let n = nodes.len();
        let mut weights = vec![None; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let w = f(i, j);
                weights[i * n + j] = w;
                weights[j * n + i] = w;
            }
        }
        AffinityGraph { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        self.weights[i * self.nodes.len() + j]
    }

    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.weight(i, j).is_some()
    }

    /// Node sets of the connected components of the allowed-pair graph,
    /// ordered by smallest node.
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
            let mut k = 0;
            while k < comp.len() {
                let p = comp[k];
                for (q, seen_q) in seen.iter_mut().enumerate() {
                    if !*seen_q && self.allowed(p, q) {
                        *seen_q = true;
                        comp.push(q);
                    }
                }
                k += 1;
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    pub fn subgraph(&self, idx: &[usize]) -> AffinityGraph {
        let nodes = idx.iter().map(|&i| self.nodes[i].clone()).collect();
        AffinityGraph::from_weights(nodes, |a, b| self.weight(idx[a], idx[b]))
    }

    /// Plain-text dump: nodes, weight matrix, and optionally a partition
    /// with its objective.
    pub fn dump(&self, partition: Option<&Partition>) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "nodes {}", self.len());
        for (i, d) in self.nodes.iter().enumerate() {
            let (cx, cy) = d.bbox.center();
            let _ = writeln!(s, "  {i}: det {} frame {} center ({cx:.2},{cy:.2}) score {:.3}", d.det_id, d.frame, d.score);
        }
        let _ = writeln!(s, "weights");
        for i in 0..self.len() {
            let row: Vec<String> = (0..self.len())
                .map(|j| match self.weight(i, j) {
                    Some(w) => format!("{w:.4}"),
                    None => "   x  ".to_string(),
                })
                .collect();
            let _ = writeln!(s, "  {}", row.join(" "));
        }
        if let Some(p) = partition {
            let _ = writeln!(s, "partition {:?}", p.blocks);
            let _ = writeln!(s, "objective {}", p.objective(self));
        }
        s
    }
}

/// Builds the affinity graph of one cluster.
pub fn edge_weights(cluster: &[Detection], emb: Option<&EmbeddingTable>, cfg: &Config) -> AffinityGraph {
    let feats: Vec<Option<&[f64]>> = cluster
        .iter()
        .map(|d| emb.and_then(|e| e.get(d.det_id)))
        .collect();
    AffinityGraph::from_weights(cluster.to_vec(), |i, j| {
        let (a, b) = (&cluster[i], &cluster[j]);
        if a.frame == b.frame {
            return None;
        }
        let dist = a.bbox.center_distance(&b.bbox);
        let gap = a.frame.abs_diff(b.frame) as f64;
        if dist >= a.bbox.w.min(b.bbox.w) * gap {
            return None;
        }
        let sim = match (feats[i], feats[j]) {
            (Some(fa), Some(fb)) => {
                let s = cosine_similarity(fa, fb)?;
                if s < cfg.theta_app {
                    return None;
                }
                s
            }
            _ => 1.0,
        };
        let affinity = if cfg.sigma_pos > 0.0 {
            (-dist / cfg.sigma_pos).exp()
        } else if dist == 0.0 {
            1.0
        } else {
            0.0
        };
        Some(affinity * sim)
    })
}

/// Disjoint blocks covering every node. Canonical form: members sorted,
/// blocks ordered by smallest member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub blocks: Vec<Vec<usize>>,
}

impl Partition {
    pub fn canonical(mut blocks: Vec<Vec<usize>>) -> Self {
        blocks.retain(|b| !b.is_empty());
        for b in &mut blocks {
            b.sort_unstable();
        }
        blocks.sort_by_key(|b| b[0]);
        Partition { blocks }
    }

    pub fn singletons(n: usize) -> Self {
        Partition {
            blocks: (0..n).map(|i| vec![i]).collect(),
        }
    }

    /// Sum of allowed intra-block weights, accumulated in a fixed order so
    /// equal partitions give bit-identical values.
    pub fn objective(&self, g: &AffinityGraph) -> f64 {
        let mut total = 0.0;
        for b in &self.blocks {
            for (x, &i) in b.iter().enumerate() {
                for &j in &b[x + 1..] {
                    total += g.weight(i, j).unwrap_or(f64::NEG_INFINITY);
                }
            }
        }
        total
    }

    /// Every block is a clique of allowed pairs and the blocks cover the
    /// graph exactly once.
    pub fn is_valid(&self, g: &AffinityGraph) -> bool {
        let mut seen = vec![false; g.len()];
        for b in &self.blocks {
            for &i in b {
                if i >= g.len() || seen[i] {
                    return false;
                }
                seen[i] = true;
            }
            for (x, &i) in b.iter().enumerate() {
                if b[x + 1..].iter().any(|&j| !g.allowed(i, j)) {
                    return false;
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    fn labels(&self, n: usize) -> Vec<usize> {
        let mut l = vec![0; n];
        for (k, b) in self.blocks.iter().enumerate() {
            for &i in b {
                l[i] = k;
            }
        }
        l
    }
}

/// Preference between two candidate solutions: higher objective, then more
/// blocks, then lexicographically smaller block labelling.
fn better(a: (f64, &Partition), b: (f64, &Partition), n: usize) -> bool {
    if a.0 > b.0 + EPS {
        return true;
    }
    if a.0 < b.0 - EPS {
        return false;
    }
    if a.1.blocks.len() != b.1.blocks.len() {
        return a.1.blocks.len() > b.1.blocks.len();
    }
    a.1.labels(n) < b.1.labels(n)
}

/// Exact maximum-weight clique partition.
pub fn solve_clique_partition(g: &AffinityGraph, budget: usize) -> Result<Partition> {
    if g.len() > budget {
        return Err(MttError::Budget {
            size: g.len(),
            budget,
        });
    }
    let mut blocks = Vec::new();
    for comp in g.components() {
        if comp.len() == 1 {
            blocks.push(comp);
            continue;
        }
        let sub = g.subgraph(&comp);
        let p = BranchAndBound::new(&sub).solve();
        blocks.extend(
            p.blocks
                .into_iter()
                .map(|b| b.into_iter().map(|i| comp[i]).collect::<Vec<_>>()),
        );
    }
    Ok(Partition::canonical(blocks))
}

struct BranchAndBound<'a> {
    g: &'a AffinityGraph,
    order: Vec<usize>,
    /// `rem_ub[p]`: upper bound on the weight still collectable by the
    /// nodes at order positions `p..`.
    rem_ub: Vec<f64>,
    blocks: Vec<Vec<usize>>,
    best: Option<(f64, Partition)>,
}

impl<'a> BranchAndBound<'a> {
    fn new(g: &'a AffinityGraph) -> Self {
        let n = g.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| (g.nodes[i].frame, g.nodes[i].det_id, i));

        // A node joins one block holding at most one node per frame, so its
        // gain from earlier nodes is bounded by the best edge per frame.
        let mut ub = vec![0.0; n];
        for p in 0..n {
            let i = order[p];
            let mut per_frame: std::collections::BTreeMap<u32, f64> = Default::default();
            for &j in &order[..p] {
                if let Some(w) = g.weight(i, j) {
                    if w > 0.0 {
                        let e = per_frame.entry(g.nodes[j].frame).or_insert(0.0);
                        *e = e.max(w);
                    }
                }
            }
            ub[p] = per_frame.values().sum();
        }
        let mut rem_ub = vec![0.0; n + 1];
        for p in (0..n).rev() {
            rem_ub[p] = rem_ub[p + 1] + ub[p];
        }
        BranchAndBound {
            g,
            order,
            rem_ub,
            blocks: Vec::new(),
            best: None,
        }
    }

    fn solve(mut self) -> Partition {
        let greedy = greedy_merge(self.g);
        self.best = Some((greedy.objective(self.g), greedy));
        self.recurse(0, 0.0);
        self.best.expect("incumbent set").1
    }

    fn recurse(&mut self, pos: usize, cur: f64) {
        let n = self.g.len();
        if let Some((best, _)) = &self.best {
            if cur + self.rem_ub[pos] < *best - 1e-9 {
                return;
            }
        }
        if pos == n {
            let cand = Partition::canonical(self.blocks.clone());
            let obj = cand.objective(self.g);
            let replace = match &self.best {
                None => true,
                Some((b, bp)) => better((obj, &cand), (*b, bp), n),
            };
            if replace {
                self.best = Some((obj, cand));
            }
            return;
        }
        let i = self.order[pos];
        let mut options: Vec<(usize, f64)> = Vec::new();
        for (k, block) in self.blocks.iter().enumerate() {
            let mut gain = 0.0;
            let mut ok = true;
            for &j in block {
                match self.g.weight(i, j) {
                    Some(w) => gain += w,
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                options.push((k, gain));
            }
        }
        options.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for (k, gain) in options {
            self.blocks[k].push(i);
            self.recurse(pos + 1, cur + gain);
            self.blocks[k].pop();
        }
        self.blocks.push(vec![i]);
        self.recurse(pos + 1, cur);
        self.blocks.pop();
    }
}

/// Repeatedly merges the pair of blocks with the largest positive gain
/// whose union is still a clique.
pub fn greedy_merge(g: &AffinityGraph) -> Partition {
    let mut blocks: Vec<Vec<usize>> = (0..g.len()).map(|i| vec![i]).collect();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..blocks.len() {
            for b in a + 1..blocks.len() {
                let mut gain = 0.0;
                let mut ok = true;
                'outer: for &i in &blocks[a] {
                    for &j in &blocks[b] {
                        match g.weight(i, j) {
                            Some(w) => gain += w,
                            None => {
                                ok = false;
                                break 'outer;
                            }
                        }
                    }
                }
                if ok && gain > 0.0 && best.is_none_or(|(bg, _, _)| gain > bg) {
                    best = Some((gain, a, b));
                }
            }
        }
        match best {
            Some((_, a, b)) => {
                let moved = blocks.remove(b);
                blocks[a].extend(moved);
            }
            None => break,
        }
    }
    Partition::canonical(blocks)
}

/// Exhaustive search over all set partitions (test oracle).
pub fn brute_force_partition(g: &AffinityGraph) -> Result<Partition> {
    let n = g.len();
    if n > BRUTE_FORCE_MAX {
        return Err(MttError::Budget {
            size: n,
            budget: BRUTE_FORCE_MAX,
        });
    }
    if n == 0 {
        return Ok(Partition { blocks: vec![] });
    }
    // Restricted growth strings enumerate each set partition once.
    let mut rgs = vec![0usize; n];
    let mut best: Option<(f64, Partition)> = None;
    loop {
        let k = rgs.iter().max().unwrap() + 1;
        let mut blocks = vec![Vec::new(); k];
        for (i, &b) in rgs.iter().enumerate() {
            blocks[b].push(i);
        }
        let cand = Partition::canonical(blocks);
        if cand.is_valid(g) {
            let obj = cand.objective(g);
            let replace = match &best {
                None => true,
                Some((b, bp)) => better((obj, &cand), (*b, bp), n),
            };
            if replace {
                best = Some((obj, cand));
            }
        }
        // Next restricted growth string.
        let mut i = n - 1;
        loop {
            if i == 0 {
                return Ok(best.expect("singletons are always valid").1);
            }
            let max_prefix = rgs[..i].iter().max().copied().unwrap_or(0);
            if rgs[i] <= max_prefix {
                rgs[i] += 1;
                for r in &mut rgs[i + 1..] {
                    *r = 0;
                }
                break;
            }
            i -= 1;
        }
    }
}

/// One tracklet per block, ordered by smallest member det id, with ids
/// taken from `next_id` onward.
pub fn tracklets_from_partition(
    p: &Partition,
    g: &AffinityGraph,
    emb: Option<&EmbeddingTable>,
    next_id: &mut u32,
) -> Vec<Tracklet> {
    let mut groups: Vec<Vec<Detection>> = p
        .blocks
        .iter()
        .map(|b| b.iter().map(|&i| g.nodes[i].clone()).collect())
        .collect();
    groups.sort_by_key(|m| m.iter().map(|d| d.det_id).min());
    groups
        .into_iter()
        .map(|members| {
            let mut t = Tracklet::new(*next_id, members, None);
            t.feature = emb.and_then(|e| tracklet_feature(&t, e));
            *next_id += 1;
            t
        })
        .collect()
}
