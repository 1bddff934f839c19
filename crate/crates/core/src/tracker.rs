//! Tracklet trees: hypothesis generation, gating, scoring and leaf
//! management.
//!
//! Each tree is an arena of nodes. The set of live hypotheses is the leaf
//! list; nodes that no longer lie on a live root-to-leaf path are simply
//! unreachable and never revisited.

use std::sync::Arc;

use crate::config::Config;
use crate::kalman::{Innovation, KalmanParams, KalmanState, Matrix4};
use crate::model::{cosine_similarity, normalize, DetId, EmbeddingTable, Frame, Tracklet};

/// `d = r^T S^-1 r`, or `None` when `S` is not positive definite.
pub fn mahalanobis(innov: &Innovation) -> Option<f64> {
    let chol = innov.cov.cholesky()?;
    let x = chol.solve(&innov.residual);
    Some(innov.residual.dot(&x))
}

/// Motion gate. A singular covariance fails closed.
pub fn motion_gate(innov: &Innovation, theta_mot: f64) -> (bool, f64) {
    match mahalanobis(innov) {
        Some(d) => (d <= theta_mot, d),
        None => {
            log::debug!("motion gate: singular innovation covariance, rejecting");
            (false, f64::INFINITY)
        }
    }
}

/// Confidence-weighted mean of the members' embeddings, re-normalized.
/// Members without an embedding are skipped.
pub fn tracklet_feature(t: &Tracklet, emb: &EmbeddingTable) -> Option<Vec<f64>> {
    let mut acc: Option<Vec<f64>> = None;
    let mut total = 0.0;
    let mut count = 0usize;
    for m in &t.members {
        let Some(f) = emb.get(m.det_id) else { continue };
        let a = acc.get_or_insert_with(|| vec![0.0; f.len()]);
        for (x, y) in a.iter_mut().zip(f) {
            *x += m.score * y;
        }
        total += m.score;
        count += 1;
    }
    let mut acc = acc?;
    if total <= 0.0 {
        // All-zero confidences: fall back to the plain mean.
        acc = vec![0.0; acc.len()];
        for m in &t.members {
            if let Some(f) = emb.get(m.det_id) {
                for (x, y) in acc.iter_mut().zip(f) {
                    *x += y / count as f64;
                }
            }
        }
    }
    normalize(&acc)
}

/// Appearance gate on cosine similarity. Returns `(true, None)` when the
/// similarity is undefined (zero vector), i.e. the gate is skipped.
pub fn appearance_gate(f1: &[f64], f2: &[f64], theta_app: f64) -> (bool, Option<f64>) {
    match cosine_similarity(f1, f2) {
        Some(s) => (s >= theta_app, Some(s)),
        None => (true, None),
    }
}

/// `ln(V / 2pi) - ln|S| / 2 - d / 2`.
pub fn score_motion(d_motion: f64, innovation_cov: &Matrix4, v_space: f64) -> f64 {
    let det = innovation_cov.determinant();
    (v_space / (2.0 * std::f64::consts::PI)).ln() - 0.5 * det.ln() - d_motion / 2.0
}

/// `-ln(1 + e^{-2 d}) - ln(theta_null)`.
pub fn score_appearance(d_app: f64, theta_null: f64) -> f64 {
    -(1.0 + (-2.0 * d_app).exp()).ln() - theta_null.ln()
}

/// `tanh(mean_score - theta_s)`.
pub fn score_confidence(mean_score: f64, theta_s: f64) -> f64 {
    (mean_score - theta_s).tanh()
}

pub fn score_total(s_mot: f64, s_app: f64, s_conf: f64, w: (f64, f64, f64)) -> f64 {
    w.0 * s_mot + w.1 * s_app + w.2 * s_conf
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypothesisScore {
    pub s_mot: f64,
    pub s_app: f64,
    pub s_conf: f64,
    pub s_total: f64,
}

impl HypothesisScore {
    pub fn new(s_mot: f64, s_app: f64, s_conf: f64, cfg: &Config) -> Self {
        HypothesisScore {
            s_mot,
            s_app,
            s_conf,
            s_total: score_total(s_mot, s_app, s_conf, (cfg.w_mot, cfg.w_app, cfg.w_conf)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Root,
    Tracklet,
    Dummy,
}

#[derive(Debug, Clone)]
pub struct TreeNode {
    pub kind: NodeKind,
    pub tracklet: Option<Arc<Tracklet>>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub kstate: KalmanState,
    pub feature: Option<Vec<f64>>,
    /// Frames since the last observed detection on this path.
    pub miss_count: u32,
    /// Score components of this node; `None` for dummies.
    pub score: Option<HypothesisScore>,
    /// Contribution of this node to the path score.
    pub node_score: f64,
    pub cum_score: f64,
    /// Last frame this node accounts for.
    pub last_frame: Frame,
    /// Last frame with an observed detection on the path.
    pub last_seen: Frame,
    pub depth: usize,
}

#[derive(Debug, Clone)]
pub struct TrackTree {
    pub id: u32,
    pub nodes: Vec<TreeNode>,
    /// Live hypotheses, sorted by node index.
    pub leaves: Vec<usize>,
    pub born_round: u32,
    /// Deepest node whose path has been committed to the output.
    pub committed_upto: Option<usize>,
}

impl TrackTree {
    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    /// Node indices from the root down to `node`.
    pub fn path(&self, node: usize) -> Vec<usize> {
        let mut p = vec![node];
        let mut cur = node;
        while let Some(parent) = self.nodes[cur].parent {
            p.push(parent);
            cur = parent;
        }
        p.reverse();
        p
    }

    pub fn path_contains(&self, leaf: usize, node: usize) -> bool {
        let mut cur = Some(leaf);
        while let Some(c) = cur {
            if c == node {
                return true;
            }
            cur = self.nodes[c].parent;
        }
        false
    }

    /// Sorted det ids observed along the root-to-`leaf` path.
    pub fn det_ids(&self, leaf: usize) -> Vec<DetId> {
        let mut ids: Vec<DetId> = self
            .path(leaf)
            .into_iter()
            .filter_map(|n| self.nodes[n].tracklet.as_ref())
            .flat_map(|t| t.det_ids().collect::<Vec<_>>())
            .collect();
        ids.sort_unstable();
        ids
    }

    /// Tracklets along the path, root first.
    pub fn path_tracklets(&self, leaf: usize) -> Vec<Arc<Tracklet>> {
        self.path(leaf)
            .into_iter()
            .filter_map(|n| self.nodes[n].tracklet.clone())
            .collect()
    }

    fn add_child(&mut self, parent: usize, mut node: TreeNode) -> usize {
        let idx = self.nodes.len();
        node.parent = Some(parent);
        node.depth = self.nodes[parent].depth + 1;
        node.cum_score = self.nodes[parent].cum_score + node.node_score;
        self.nodes.push(node);
        self.nodes[parent].children.push(idx);
        if let Ok(pos) = self.leaves.binary_search(&parent) {
            self.leaves.remove(pos);
        }
        let pos = self.leaves.binary_search(&idx).unwrap_err();
        self.leaves.insert(pos, idx);
        idx
    }
}

/// Result of trying to extend a node with a tracklet.
struct Extension {
    node: TreeNode,
    d_motion: f64,
    d_app: Option<f64>,
}

fn root_node(t: &Arc<Tracklet>, cfg: &Config, kp: &KalmanParams) -> TreeNode {
    let mut state = KalmanState::from_box(&t.members[0].bbox, kp);
    let mut prev = t.members[0].frame;
    for m in &t.members[1..] {
        let pred = state.predict(m.frame - prev, kp);
        state = match pred.update(&m.bbox, kp) {
            Ok((s, _)) => s,
            Err(_) => pred,
        };
        prev = m.frame;
    }
    let score = HypothesisScore::new(0.0, 0.0, score_confidence(t.mean_score, cfg.theta_s), cfg);
    let node_score = score.s_total - cfg.birth_penalty;
    TreeNode {
        kind: NodeKind::Root,
        tracklet: Some(t.clone()),
        parent: None,
        children: Vec::new(),
        kstate: state,
        feature: t.feature.clone(),
        miss_count: 0,
        score: Some(score),
        node_score,
        cum_score: node_score,
        last_frame: t.end(),
        last_seen: t.end(),
        depth: 0,
    }
}

fn blend(parent: Option<&[f64]>, child: Option<&[f64]>) -> Option<Vec<f64>> {
    match (parent, child) {
        (Some(p), Some(c)) => {
            let mixed: Vec<f64> = p.iter().zip(c).map(|(a, b)| 0.5 * a + 0.5 * b).collect();
            normalize(&mixed).or_else(|| Some(c.to_vec()))
        }
        (Some(p), None) => Some(p.to_vec()),
        (None, Some(c)) => Some(c.to_vec()),
        (None, None) => None,
    }
}

fn try_extend(parent: &TreeNode, t: &Arc<Tracklet>, cfg: &Config, kp: &KalmanParams) -> Option<Extension> {
    if t.start() <= parent.last_frame {
        return None;
    }
    let first = &t.members[0];
    let pred = parent.kstate.predict(first.frame - parent.last_frame, kp);
    let (mut state, innov) = pred.update(&first.bbox, kp).ok()?;
    let (pass, d_motion) = motion_gate(&innov, cfg.theta_mot);
    if !pass {
        return None;
    }
    let d_app = match (parent.feature.as_deref(), t.feature.as_deref()) {
        (Some(a), Some(b)) => {
            let (pass, d) = appearance_gate(a, b, cfg.theta_app);
            if !pass {
                return None;
            }
            d
        }
        _ => None,
    };
    let mut prev = first.frame;
    for m in &t.members[1..] {
        let pred = state.predict(m.frame - prev, kp);
        state = match pred.update(&m.bbox, kp) {
            Ok((s, _)) => s,
            Err(_) => pred,
        };
        prev = m.frame;
    }
    let s_mot = score_motion(d_motion, &innov.cov, cfg.v_space);
    let s_app = score_appearance(d_app.unwrap_or(cfg.theta_app), cfg.theta_null);
    let s_conf = score_confidence(t.mean_score, cfg.theta_s);
    let score = HypothesisScore::new(s_mot, s_app, s_conf, cfg);
    Some(Extension {
        node: TreeNode {
            kind: NodeKind::Tracklet,
            tracklet: Some(t.clone()),
            parent: None,
            children: Vec::new(),
            kstate: state,
            feature: blend(parent.feature.as_deref(), t.feature.as_deref()),
            miss_count: 0,
            score: Some(score),
            node_score: score.s_total,
            cum_score: 0.0,
            last_frame: t.end(),
            last_seen: t.end(),
            depth: 0,
        },
        d_motion,
        d_app,
    })
}

fn dummy_node(parent: &TreeNode, window_end: Frame, cfg: &Config, kp: &KalmanParams) -> TreeNode {
    let covered = window_end.saturating_sub(parent.last_frame);
    let kstate = if covered > 0 {
        parent.kstate.predict(covered, kp)
    } else {
        parent.kstate.clone()
    };
    TreeNode {
        kind: NodeKind::Dummy,
        tracklet: None,
        parent: None,
        children: Vec::new(),
        kstate,
        feature: parent.feature.clone(),
        miss_count: window_end.saturating_sub(parent.last_seen),
        score: None,
        node_score: -cfg.miss_penalty * covered.max(1) as f64,
        cum_score: 0.0,
        last_frame: window_end.max(parent.last_frame),
        last_seen: parent.last_seen,
        depth: 0,
    }
}

/// The forest of tracklet trees for one sequence.
#[derive(Debug, Clone)]
pub struct Tracker {
    pub cfg: Config,
    pub trees: Vec<TrackTree>,
    next_tree_id: u32,
    round: u32,
    events: Option<Vec<String>>,
    pub spawned: usize,
}

impl Tracker {
    pub fn new(cfg: Config) -> Self {
        Tracker {
            cfg,
            trees: Vec::new(),
            next_tree_id: 0,
            round: 0,
            events: None,
            spawned: 0,
        }
    }

    pub fn with_event_log(mut self) -> Self {
        self.events = Some(Vec::new());
        self
    }

    /// Index of the round the next `advance` call processes.
    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn take_events(&mut self) -> Vec<String> {
        self.events.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn log(&mut self, line: impl FnOnce() -> String) {
        if let Some(ev) = self.events.as_mut() {
            ev.push(line());
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.trees.iter().map(|t| t.leaves.len()).sum()
    }

    /// One round of hypothesis generation and update over the frames
    /// `window = (start, end)`. Every new tracklet spawns a tree and extends
    /// every open node (a leaf from before the round, or a node created
    /// earlier in this round) that ends before it and passes both gates;
    /// pre-existing leaves also get a dummy child. Leaves past `patience`
    /// are dropped and each tree keeps its `max_leaves` best leaves.
    pub fn advance(&mut self, mut new_tracklets: Vec<Tracklet>, window: (Frame, Frame)) {
        let round = self.round;
        self.round += 1;
        let kp = self.cfg.kalman();
        let cfg = self.cfg.clone();

        let frontier: Vec<(usize, usize)> = self
            .trees
            .iter()
            .enumerate()
            .flat_map(|(ti, t)| t.leaves.iter().map(move |&l| (ti, l)))
            .collect();
        let mut open = frontier.clone();

        new_tracklets.sort_by_key(|t| (t.start(), t.min_det_id()));
        for t in new_tracklets {
            let t = Arc::new(t);
            let mut created = Vec::new();
            for &(ti, ni) in &open {
                let Some(ext) = try_extend(&self.trees[ti].nodes[ni], &t, &cfg, &kp) else {
                    continue;
                };
                let tree = &mut self.trees[ti];
                let child = tree.add_child(ni, ext.node);
                created.push((ti, child));
                let node = &tree.nodes[child];
                let s = node.score.expect("tracklet node has score");
                let (tid, cum) = (tree.id, node.cum_score);
                self.log(|| {
                    format!(
                        "round={round} attach tree={tid} node={child} parent={ni} tracklet={} d_motion={:.4} d_app={} s_mot={:.4} s_app={:.4} s_conf={:.4} s_total={:.4} cum={cum:.4}",
                        t.id,
                        ext.d_motion,
                        ext.d_app.map_or("none".to_string(), |d| format!("{d:.4}")),
                        s.s_mot, s.s_app, s.s_conf, s.s_total
                    )
                });
            }

            let id = self.next_tree_id;
            self.next_tree_id += 1;
            self.spawned += 1;
            let root = root_node(&t, &cfg, &kp);
            let score = root.cum_score;
            self.trees.push(TrackTree {
                id,
                nodes: vec![root],
                leaves: vec![0],
                born_round: round,
                committed_upto: None,
            });
            created.push((self.trees.len() - 1, 0));
            self.log(|| format!("round={round} spawn tree={id} node=0 tracklet={} score={score:.4}", t.id));
            open.extend(created);
        }

        for (ti, leaf) in frontier {
            let tree = &mut self.trees[ti];
            let node = dummy_node(&tree.nodes[leaf], window.1, &cfg, &kp);
            let child = tree.add_child(leaf, node);
            let n = &tree.nodes[child];
            let (tid, miss, cum) = (tree.id, n.miss_count, n.cum_score);
            self.log(|| format!("round={round} dummy tree={tid} node={child} parent={leaf} miss={miss} cum={cum:.4}"));
        }

        let mut log = Vec::new();
        for tree in &mut self.trees {
            let before = tree.leaves.clone();
            tree.leaves.retain(|&l| tree.nodes[l].miss_count <= cfg.patience);
            for l in before.iter().filter(|l| !tree.leaves.contains(l)) {
                log.push(format!("round={round} prune tree={} leaf={l} reason=patience", tree.id));
            }
            if tree.leaves.len() > cfg.max_leaves {
                let mut ranked = tree.leaves.clone();
                ranked.sort_by(|&a, &b| {
                    tree.nodes[b]
                        .cum_score
                        .total_cmp(&tree.nodes[a].cum_score)
                        .then(a.cmp(&b))
                });
                for l in &ranked[cfg.max_leaves..] {
                    log.push(format!("round={round} prune tree={} leaf={l} reason=max_leaves", tree.id));
                }
                ranked.truncate(cfg.max_leaves);
                ranked.sort_unstable();
                tree.leaves = ranked;
            }
        }
        let before = self.trees.len();
        self.trees.retain(|t| !t.leaves.is_empty());
        if self.trees.len() != before {
            log.push(format!("round={round} prune trees={} reason=no_leaves", before - self.trees.len()));
        }
        if let Some(ev) = self.events.as_mut() {
            ev.extend(log);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kalman::Vector4;
    use crate::model::{BBox, Detection};

    fn innov(r: [f64; 4], cov: Matrix4) -> Innovation {
        Innovation {
            residual: Vector4::from_row_slice(&r),
            cov,
        }
    }

    #[test]
    fn motion_gate_values() {
        let (pass, d) = motion_gate(&innov([0.0; 4], Matrix4::identity()), 15.0);
        assert!(pass && d == 0.0);
        let (pass, d) = motion_gate(&innov([4.0, 0.0, 0.0, 0.0], Matrix4::identity()), 15.0);
        assert!(!pass);
        assert!((d - 16.0).abs() < 1e-12);
        let (_, d4) = motion_gate(&innov([4.0, 0.0, 0.0, 0.0], Matrix4::identity() * 4.0), 15.0);
        assert!((d4 - 4.0).abs() < 1e-12);
        let (pass, d) = motion_gate(&innov([1.0, 0.0, 0.0, 0.0], Matrix4::zeros()), 15.0);
        assert!(!pass && d.is_infinite());
    }

    #[test]
    fn close_match_outscores_far_match() {
        let cfg = Config::default();
        let w = (cfg.w_mot, cfg.w_app, cfg.w_conf);
        let i = Matrix4::identity();
        // identical position and appearance, confident detections
        let near = score_total(
            score_motion(0.0, &i, cfg.v_space),
            score_appearance(1.0, cfg.theta_null),
            score_confidence(1.0, cfg.theta_s),
            w,
        );
        // distant, orthogonal appearance, score zero
        let far = score_total(
            score_motion(15.0, &i, 2.0 * std::f64::consts::PI),
            score_appearance(0.0, cfg.theta_null),
            score_confidence(0.0, cfg.theta_s),
            w,
        );
        assert!(near > 0.0, "{near}");
        assert!(far < 0.0, "{far}");
        let expected = 0.1 * -7.5 + 0.9 * 0.5108 + 3.0 * (-0.1f64).tanh();
        assert!((far - expected).abs() < 1e-3);
    }

    fn tracklet_with(scores: &[f64]) -> Tracklet {
        Tracklet::new(
            0,
            scores
                .iter()
                .enumerate()
                .map(|(i, &s)| Detection::new(i as u32, i as u32 + 1, BBox::new(0.0, 0.0, 10.0, 10.0), s))
                .collect(),
            None,
        )
    }

    #[test]
    fn feature_of_identical_members() {
        let t = tracklet_with(&[0.3, 0.9]);
        let mut e = EmbeddingTable::new(2);
        e.insert(DetId(0), vec![0.6, 0.8]).unwrap();
        e.insert(DetId(1), vec![0.6, 0.8]).unwrap();
        let f = tracklet_feature(&t, &e).unwrap();
        assert!((f[0] - 0.6).abs() < 1e-12 && (f[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn feature_is_confidence_weighted() {
        let t = tracklet_with(&[0.2, 0.8]);
        let mut e = EmbeddingTable::new(2);
        e.insert(DetId(0), vec![1.0, 0.0]).unwrap();
        e.insert(DetId(1), vec![0.0, 1.0]).unwrap();
        let f = tracklet_feature(&t, &e).unwrap();
        let n = (0.2f64.powi(2) + 0.8f64.powi(2)).sqrt();
        assert!((f[0] - 0.2 / n).abs() < 1e-12 && (f[1] - 0.8 / n).abs() < 1e-12);
    }

    #[test]
    fn feature_single_member_and_absent() {
        let t = tracklet_with(&[0.5]);
        let mut e = EmbeddingTable::new(2);
        assert!(tracklet_feature(&t, &e).is_none());
        e.insert(DetId(0), vec![0.0, 2.0]).unwrap();
        assert_eq!(tracklet_feature(&t, &e).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn appearance_gate_values() {
        assert_eq!(appearance_gate(&[1.0, 0.0], &[1.0, 0.0], 0.85), (true, Some(1.0)));
        assert!(!appearance_gate(&[1.0, 0.0], &[0.0, 1.0], 0.85).0);
        let a = 20f64.to_radians();
        let (pass, d) = appearance_gate(&[1.0, 0.0], &[a.cos(), a.sin()], 0.85);
        assert!(pass && (d.unwrap() - 0.9396926).abs() < 1e-6);
        assert_eq!(appearance_gate(&[0.0, 0.0], &[1.0, 0.0], 0.85), (true, None));
    }

    #[test]
    fn motion_score_values() {
        assert!(score_motion(0.0, &Matrix4::identity(), 2.0 * std::f64::consts::PI).abs() < 1e-12);
        let v = 1920.0 * 1080.0;
        assert!((score_motion(0.0, &Matrix4::identity(), v) - 12.707).abs() < 1e-3);
        assert!(score_motion(3.0, &Matrix4::identity(), v) < score_motion(2.0, &Matrix4::identity(), v));
    }

    #[test]
    fn appearance_score_values() {
        assert!((score_appearance(0.0, 0.3) - 0.5108).abs() < 1e-3);
        assert!((score_appearance(1.0, 0.3) - 1.0770).abs() < 1e-3);
        assert!(score_appearance(0.5, 0.3) > score_appearance(0.4, 0.3));
    }

    #[test]
    fn confidence_score_values() {
        assert_eq!(score_confidence(0.1, 0.1), 0.0);
        assert!((score_confidence(1.0, 0.1) - 0.7163).abs() < 1e-3);
        assert!((score_confidence(0.0, 0.1) + 0.0997).abs() < 1e-3);
    }

    #[test]
    fn total_score_is_weighted_sum() {
        assert_eq!(score_total(1.0, 1.0, 1.0, (0.1, 0.9, 3.0)), 4.0);
        assert_eq!(score_total(0.0, 0.0, 0.0, (0.1, 0.9, 3.0)), 0.0);
        let a = score_total(1.5, -0.5, 0.25, (0.1, 0.9, 3.0));
        let b = score_total(1.5, -0.5, 0.25, (0.2, 1.8, 6.0));
        assert!((2.0 * a - b).abs() < 1e-12);
    }

    fn det(id: u32, frame: u32, cx: f64, score: f64) -> Detection {
        Detection::new(id, frame, BBox::from_center(cx, 100.0, 40.0, 80.0), score)
    }

    fn tl(id: u32, dets: Vec<Detection>, feat: Option<Vec<f64>>) -> Tracklet {
        Tracklet::new(id, dets, feat)
    }

    #[test]
    fn new_tracklets_spawn_single_node_trees() {
        let mut tr = Tracker::new(Config::default());
        tr.advance(
            vec![
                tl(0, vec![det(0, 1, 100.0, 0.9)], None),
                tl(1, vec![det(1, 1, 500.0, 0.9)], None),
                tl(2, vec![det(2, 1, 900.0, 0.9)], None),
            ],
            (1, 1),
        );
        assert_eq!(tr.trees.len(), 3);
        assert!(tr.trees.iter().all(|t| t.nodes.len() == 1 && t.leaves == vec![0]));
    }

    #[test]
    fn rejected_leaf_gets_exactly_one_dummy() {
        let mut tr = Tracker::new(Config::default());
        tr.advance(vec![tl(0, vec![det(0, 1, 100.0, 0.9)], Some(vec![1.0, 0.0]))], (1, 1));
        // orthogonal appearance: gate rejects
        tr.advance(vec![tl(1, vec![det(1, 2, 100.0, 0.9)], Some(vec![0.0, 1.0]))], (2, 2));
        let t0 = &tr.trees[0];
        assert_eq!(t0.nodes[0].children.len(), 1);
        assert_eq!(t0.nodes[t0.leaves[0]].kind, NodeKind::Dummy);
        assert_eq!(tr.trees.len(), 2);
    }

    #[test]
    fn gated_tracklet_attaches_with_score() {
        let mut tr = Tracker::new(Config::default());
        tr.advance(vec![tl(0, vec![det(0, 1, 100.0, 0.9), det(1, 2, 103.0, 0.9)], Some(vec![1.0, 0.0]))], (1, 2));
        tr.advance(vec![tl(1, vec![det(2, 3, 106.0, 0.9)], Some(vec![1.0, 0.0]))], (3, 3));
        let t0 = &tr.trees[0];
        assert_eq!(t0.leaves.len(), 2);
        let attached = t0.leaves.iter().find(|&&l| t0.nodes[l].kind == NodeKind::Tracklet).unwrap();
        let n = &t0.nodes[*attached];
        assert!(n.cum_score > t0.nodes[0].cum_score);
        assert_eq!(t0.det_ids(*attached), vec![DetId(0), DetId(1), DetId(2)]);
    }

    #[test]
    fn leaf_past_patience_is_removed() {
        let mut tr = Tracker::new(Config::default());
        tr.advance(vec![tl(0, vec![det(0, 1, 100.0, 0.9)], None)], (1, 1));
        for f in 2..=11 {
            tr.advance(vec![], (f, f));
        }
        // miss_count == 10 == patience: still alive
        assert_eq!(tr.trees.len(), 1);
        assert_eq!(tr.trees[0].nodes[tr.trees[0].leaves[0]].miss_count, 10);
        tr.advance(vec![], (12, 12));
        assert!(tr.trees.is_empty());
    }

    #[test]
    fn leaf_cap_is_enforced() {
        let cfg = Config {
            max_leaves: 3,
            ..Default::default()
        };
        let mut tr = Tracker::new(cfg);
        tr.advance(vec![tl(0, vec![det(0, 1, 100.0, 0.9)], None)], (1, 1));
        for f in 2..6u32 {
            let dets = vec![
                tl(f * 10, vec![det(f * 10, f, 100.0, 0.9)], None),
                tl(f * 10 + 1, vec![det(f * 10 + 1, f, 101.0, 0.9)], None),
            ];
            tr.advance(dets, (f, f));
            assert!(tr.trees.iter().all(|t| t.leaves.len() <= 3));
        }
    }
}
