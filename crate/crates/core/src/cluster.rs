//! Confidence/NMS pre-filtering and density clustering of the detections
//! of one subsequence.

use crate::model::{cosine_similarity, Detection, EmbeddingTable};

/// Drops detections scoring below `theta_s`, then runs greedy NMS per
/// frame. Output is sorted by det id.
pub fn prefilter(dets: &[Detection], theta_s: f64, nms_iou: f64) -> Vec<Detection> {
    let mut by_frame: std::collections::BTreeMap<u32, Vec<&Detection>> = Default::default();
    for d in dets.iter().filter(|d| d.score >= theta_s) {
        by_frame.entry(d.frame).or_default().push(d);
    }
    let mut kept: Vec<Detection> = Vec::with_capacity(dets.len());
    for (_, mut frame) in by_frame {
        frame.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.det_id.cmp(&b.det_id)));
        let mut keep: Vec<&Detection> = Vec::with_capacity(frame.len());
        for d in frame {
            if keep.iter().all(|k| k.bbox.iou(&d.bbox) <= nms_iou) {
                keep.push(d);
            }
        }
        kept.extend(keep.into_iter().cloned());
    }
    kept.sort_by_key(|d| d.det_id);
    kept
}

/// Dense symmetric distance matrix with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = f(i, j);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        DistanceMatrix { n, data }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

pub fn pixel_distance_matrix(dets: &[Detection]) -> DistanceMatrix {
    DistanceMatrix::from_fn(dets.len(), |i, j| dets[i].bbox.center_distance(&dets[j].bbox))
}

/// `alpha * (1 - cos) + beta * center_dist / diagonal`. Pairs where either
/// embedding is missing use the position term only; the number of such
/// pairs is returned alongside the matrix.
pub fn weighted_distance_matrix(
    dets: &[Detection],
    emb: &EmbeddingTable,
    alpha: f64,
    beta: f64,
    diagonal: f64,
) -> (DistanceMatrix, usize) {
    let mut missing = 0usize;
    let m = DistanceMatrix::from_fn(dets.len(), |i, j| {
        let pos = dets[i].bbox.center_distance(&dets[j].bbox) / diagonal;
        let app = match (emb.get(dets[i].det_id), emb.get(dets[j].det_id)) {
            (Some(a), Some(b)) => cosine_similarity(a, b).map(|c| 1.0 - c),
            _ => None,
        };
        match app {
            Some(a) => alpha * a + beta * pos,
            None => {
                missing += 1;
                beta * pos
            }
        }
    });
    if missing > 0 {
        log::warn!("weighted distance: {missing} pairs without embeddings used position only");
    }
    (m, missing)
}

/// Per-point cluster labels, `None` for noise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterLabeling {
    pub labels: Vec<Option<usize>>,
    pub n_clusters: usize,
}

impl ClusterLabeling {
    /// Cluster member lists with every noise point as its own singleton,
    /// ordered by smallest member index.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); self.n_clusters];
        let mut out = Vec::new();
        for (i, l) in self.labels.iter().enumerate() {
            match l {
                Some(c) => groups[*c].push(i),
                None => out.push(vec![i]),
            }
        }
        out.extend(groups.into_iter().filter(|g| !g.is_empty()));
        out.sort_by_key(|g| g[0]);
        out
    }
}

/// Density clustering over a precomputed matrix.
///
/// The neighborhood of `p` includes `p`. Core points (`|N(p)| >= delta`)
/// within `eps` of each other share a cluster; a border point joins the
/// cluster of its lowest-index core neighbor. Cluster ids are numbered by
/// smallest member index.
pub fn dbscan(dm: &DistanceMatrix, eps: f64, delta: usize) -> ClusterLabeling {
    let n = dm.len();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| dm.get(i, j) <= eps).collect())
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= delta).collect();

    // Connected components of the core points.
    let mut comp: Vec<Option<usize>> = vec![None; n];
    let mut n_comp = 0;
    for s in 0..n {
        if !core[s] || comp[s].is_some() {
            continue;
        }
        comp[s] = Some(n_comp);
        let mut stack = vec![s];
        while let Some(p) = stack.pop() {
            for &q in &neighbors[p] {
                if core[q] && comp[q].is_none() {
                    comp[q] = Some(n_comp);
                    stack.push(q);
                }
            }
        }
        n_comp += 1;
    }

    let mut labels = comp.clone();
    for p in 0..n {
        if !core[p] {
            labels[p] = neighbors[p].iter().find(|&&q| core[q]).and_then(|&q| comp[q]);
        }
    }

    // Renumber by smallest member.
    let mut remap: Vec<Option<usize>> = vec![None; n_comp];
    let mut next = 0;
    for l in labels.iter_mut() {
        if let Some(c) = *l {
            let id = *remap[c].get_or_insert_with(|| {
                next += 1;
                next - 1
            });
            *l = Some(id);
        }
    }
    ClusterLabeling {
        labels,
        n_clusters: next,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BBox;

    fn det(id: u32, frame: u32, cx: f64, cy: f64, score: f64) -> Detection {
        Detection::new(id, frame, BBox::from_center(cx, cy, 10.0, 10.0), score)
    }

    #[test]
    fn nms_keeps_higher_score() {
        let a = Detection::new(0, 1, BBox::new(0.0, 0.0, 10.0, 10.0), 0.9);
        // 10x10 shifted 2.5 px: IoU = 75/125 = 0.6
        let b = Detection::new(1, 1, BBox::new(2.5, 0.0, 10.0, 10.0), 0.8);
        let kept = prefilter(&[b, a.clone()], 0.1, 0.5);
        assert_eq!(kept, vec![a]);
    }

    #[test]
    fn low_scores_all_dropped() {
        let dets: Vec<_> = (0..4).map(|i| det(i, 1, i as f64 * 100.0, 0.0, 0.05)).collect();
        assert!(prefilter(&dets, 0.1, 0.5).is_empty());
    }

    #[test]
    fn disjoint_boxes_all_kept() {
        let dets: Vec<_> = (0..4).map(|i| det(i, 1, i as f64 * 100.0, 0.0, 0.5)).collect();
        assert_eq!(prefilter(&dets, 0.1, 0.5).len(), 4);
    }

    #[test]
    fn nms_is_per_frame() {
        let a = det(0, 1, 0.0, 0.0, 0.9);
        let b = det(1, 2, 0.0, 0.0, 0.8);
        assert_eq!(prefilter(&[a, b], 0.1, 0.5).len(), 2);
    }

    #[test]
    fn pixel_matrix_values() {
        let dets = [det(0, 1, 0.0, 0.0, 1.0), det(1, 1, 10.0, 0.0, 1.0), det(2, 1, 0.0, 10.0, 1.0)];
        let m = pixel_distance_matrix(&dets);
        assert!((m.get(1, 2) - 200f64.sqrt()).abs() < 1e-12);
        assert_eq!(m.get(1, 2), m.get(2, 1));
        assert_eq!(m.get(0, 0), 0.0);
        let m1 = pixel_distance_matrix(&dets[..1]);
        assert_eq!((m1.len(), m1.get(0, 0)), (1, 0.0));
        let m2 = pixel_distance_matrix(&[det(0, 1, 0.0, 0.0, 1.0), det(1, 1, 3.0, 4.0, 1.0)]);
        assert!((m2.get(0, 1) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_matrix_terms() {
        let dets = [det(0, 1, 0.0, 0.0, 1.0), det(1, 1, 0.0, 0.0, 1.0), det(2, 1, 30.0, 40.0, 1.0)];
        let mut emb = EmbeddingTable::new(2);
        emb.insert(dets[0].det_id, vec![1.0, 0.0]).unwrap();
        emb.insert(dets[1].det_id, vec![1.0, 0.0]).unwrap();
        emb.insert(dets[2].det_id, vec![0.0, 1.0]).unwrap();
        let (m, missing) = weighted_distance_matrix(&dets, &emb, 1.0, 1.0, 100.0);
        assert_eq!(missing, 0);
        assert_eq!(m.get(0, 1), 0.0);
        let (m, _) = weighted_distance_matrix(&dets, &emb, 1.0, 0.0, 100.0);
        assert!((m.get(0, 2) - 1.0).abs() < 1e-12);
        let (m, _) = weighted_distance_matrix(&dets, &emb, 0.0, 1.0, 100.0);
        assert!((m.get(0, 2) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn weighted_missing_embedding_falls_back() {
        let dets = [det(0, 1, 0.0, 0.0, 1.0), det(1, 1, 30.0, 40.0, 1.0)];
        let emb = EmbeddingTable::new(2);
        let (m, missing) = weighted_distance_matrix(&dets, &emb, 1.0, 2.0, 100.0);
        assert_eq!(missing, 1);
        assert!((m.get(0, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dbscan_two_near_one_far() {
        let dets = [det(0, 1, 0.0, 0.0, 1.0), det(1, 1, 10.0, 0.0, 1.0), det(2, 1, 500.0, 500.0, 1.0)];
        let l = dbscan(&pixel_distance_matrix(&dets), 80.0, 2);
        assert_eq!(l.labels, vec![Some(0), Some(0), None]);
        assert_eq!(l.groups(), vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn dbscan_identical_points_one_cluster() {
        let dets: Vec<_> = (0..5).map(|i| det(i, 1, 7.0, 7.0, 1.0)).collect();
        let l = dbscan(&pixel_distance_matrix(&dets), 1.0, 3);
        assert_eq!(l.n_clusters, 1);
        assert!(l.labels.iter().all(|x| *x == Some(0)));
    }

    #[test]
    fn border_point_joins_first_core_neighbor() {
        // Two dense groups with a border point (x = 11) inside both radii.
        let xs = [0.0, 1.0, 2.0, 4.0, 11.0, 18.0, 20.0, 21.0, 22.0];
        let dets: Vec<_> = xs.iter().enumerate().map(|(i, &x)| det(i as u32, 1, x, 0.0, 1.0)).collect();
        let l = dbscan(&pixel_distance_matrix(&dets), 7.0, 4);
        let a = Some(0);
        let b = Some(1);
        assert_eq!(l.labels, vec![a, a, a, a, a, b, b, b, b]);
    }
}
