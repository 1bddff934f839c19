//! CLEAR-MOT and identity (IDF1) metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::io::MotRow;
use crate::model::{BBox, FinalTrack, Frame};

/// Minimum-cost assignment on a rectangular matrix (`cost[i][j]`, all rows
/// of equal length). Returns for every row the assigned column, or `None`
/// when there are more rows than columns and the row is left out.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, |r| r.len());
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    let transpose = rows > cols;
    let (n, m) = if transpose { (cols, rows) } else { (rows, cols) };
    let at = |i: usize, j: usize| if transpose { cost[j][i] } else { cost[i][j] };

    // Potentials formulation, 1-based with a virtual column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut out = vec![None; rows];
    for (j, &pj) in p.iter().enumerate().skip(1) {
        if pj != 0 {
            let (r, c) = if transpose { (j - 1, pj - 1) } else { (pj - 1, j - 1) };
            out[r] = Some(c);
        }
    }
    out
}

/// Assignment maximizing the total of `gain` over pairs with positive gain.
fn max_gain_assignment(gain: &[Vec<f64>]) -> Vec<Option<usize>> {
    let cost: Vec<Vec<f64>> = gain.iter().map(|r| r.iter().map(|g| -g.max(0.0)).collect()).collect();
    hungarian(&cost)
        .into_iter()
        .enumerate()
        .map(|(i, c)| c.filter(|&j| gain[i][j] > 0.0))
        .collect()
}

/// Optimal one-to-one matching of one frame maximizing total IoU among
/// pairs with `IoU >= iou_min`. Pairs in `keep` (indices into `gt`,
/// `pred`) are retained first if they still reach the threshold. Returns
/// `(gt index, pred index)` pairs sorted by gt index.
pub fn match_frame(gt: &[BBox], pred: &[BBox], iou_min: f64, keep: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    let mut gt_used = vec![false; gt.len()];
    let mut pred_used = vec![false; pred.len()];
    for &(g, p) in keep {
        if g < gt.len() && p < pred.len() && !gt_used[g] && !pred_used[p] && gt[g].iou(&pred[p]) >= iou_min {
            gt_used[g] = true;
            pred_used[p] = true;
            pairs.push((g, p));
        }
    }
    let gi: Vec<usize> = (0..gt.len()).filter(|&i| !gt_used[i]).collect();
    let pi: Vec<usize> = (0..pred.len()).filter(|&j| !pred_used[j]).collect();
    let gain: Vec<Vec<f64>> = gi
        .iter()
        .map(|&g| {
            pi.iter()
                .map(|&p| {
                    let iou = gt[g].iou(&pred[p]);
                    if iou >= iou_min { iou } else { 0.0 }
                })
                .collect()
        })
        .collect();
    for (r, c) in max_gain_assignment(&gain).into_iter().enumerate() {
        if let Some(c) = c {
            pairs.push((gi[r], pi[c]));
        }
    }
    pairs.sort_unstable();
    pairs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "MOTA")]
    pub mota: f64,
    #[serde(rename = "IDF1")]
    pub idf1: f64,
    #[serde(rename = "IDP")]
    pub idp: f64,
    #[serde(rename = "IDR")]
    pub idr: f64,
    #[serde(rename = "Recall")]
    pub recall: f64,
    #[serde(rename = "Precision")]
    pub precision: f64,
    #[serde(rename = "FP")]
    pub fp: usize,
    #[serde(rename = "FN")]
    pub fn_: usize,
    #[serde(rename = "IDs")]
    pub ids: usize,
    #[serde(rename = "MT")]
    pub mt: usize,
    #[serde(rename = "PT")]
    pub pt: usize,
    #[serde(rename = "ML")]
    pub ml: usize,
    #[serde(rename = "GT_count")]
    pub gt_count: usize,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: [(&str, String); 13] = [
            ("MOTA", format!("{:.4}", self.mota)),
            ("IDF1", format!("{:.4}", self.idf1)),
            ("IDP", format!("{:.4}", self.idp)),
            ("IDR", format!("{:.4}", self.idr)),
            ("Recall", format!("{:.4}", self.recall)),
            ("Precision", format!("{:.4}", self.precision)),
            ("FP", self.fp.to_string()),
            ("FN", self.fn_.to_string()),
            ("IDs", self.ids.to_string()),
            ("MT", self.mt.to_string()),
            ("PT", self.pt.to_string()),
            ("ML", self.ml.to_string()),
            ("GT_count", self.gt_count.to_string()),
        ];
        for (k, v) in rows {
            writeln!(f, "{k:<10} {v:>10}")?;
        }
        Ok(())
    }
}

type ByFrame = BTreeMap<Frame, Vec<(i64, BBox)>>;

fn by_frame(rows: &[MotRow]) -> ByFrame {
    let mut m: ByFrame = BTreeMap::new();
    for r in rows {
        m.entry(r.frame).or_default().push((r.id, r.bbox));
    }
    for v in m.values_mut() {
        v.sort_by_key(|(id, _)| *id);
    }
    m
}

/// Output tracks as MOT rows (one per box).
pub fn rows_from_tracks(tracks: &[FinalTrack]) -> Vec<MotRow> {
    tracks
        .iter()
        .flat_map(|t| {
            t.boxes.iter().map(move |b| MotRow {
                frame: b.frame,
                id: t.track_id as i64,
                bbox: b.bbox,
                score: b.score,
            })
        })
        .collect()
}

/// `(IDF1, IDP, IDR)` from a global GT-to-track matching maximizing the
/// number of frames where matched trajectories overlap by `iou_min`.
pub fn idf1(gt: &[MotRow], pred: &[MotRow], iou_min: f64) -> (f64, f64, f64) {
    let gt_ids: Vec<i64> = gt.iter().map(|r| r.id).collect::<BTreeSet<_>>().into_iter().collect();
    let pr_ids: Vec<i64> = pred.iter().map(|r| r.id).collect::<BTreeSet<_>>().into_iter().collect();
    let gi: BTreeMap<i64, usize> = gt_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let pi: BTreeMap<i64, usize> = pr_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();

    let mut overlap = vec![vec![0.0; pr_ids.len()]; gt_ids.len()];
    let g_frames = by_frame(gt);
    let p_frames = by_frame(pred);
    for (f, gs) in &g_frames {
        let Some(ps) = p_frames.get(f) else { continue };
        for (g, gb) in gs {
            for (p, pb) in ps {
                if gb.iou(pb) >= iou_min {
                    overlap[gi[g]][pi[p]] += 1.0;
                }
            }
        }
    }
    let idtp: f64 = max_gain_assignment(&overlap)
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.map(|j| overlap[i][j]))
        .sum();
    let (ng, np) = (gt.len() as f64, pred.len() as f64);
    let idp = if np > 0.0 { idtp / np } else { 0.0 };
    let idr = if ng > 0.0 { idtp / ng } else { 0.0 };
    let f1 = if ng + np > 0.0 { 2.0 * idtp / (ng + np) } else { 1.0 };
    (f1, idp, idr)
}

/// Full report. MOTA uses `max(GT_count, 1)` as denominator so an empty
/// ground truth stays finite.
pub fn clear_mot(gt: &[MotRow], pred: &[MotRow], iou_min: f64) -> EvalReport {
    let g_frames = by_frame(gt);
    let p_frames = by_frame(pred);
    let frames: BTreeSet<Frame> = g_frames.keys().chain(p_frames.keys()).copied().collect();

    let empty = Vec::new();
    let (mut tp, mut fp, mut fn_, mut ids) = (0usize, 0usize, 0usize, 0usize);
    let mut prev: BTreeMap<i64, i64> = BTreeMap::new(); // gt -> pred in the previous frame
    let mut last: BTreeMap<i64, i64> = BTreeMap::new(); // gt -> last matched pred
    let mut matched_frames: BTreeMap<i64, usize> = BTreeMap::new();
    let mut total_frames: BTreeMap<i64, usize> = BTreeMap::new();

    for f in frames {
        let gs = g_frames.get(&f).unwrap_or(&empty);
        let ps = p_frames.get(&f).unwrap_or(&empty);
        let gb: Vec<BBox> = gs.iter().map(|x| x.1).collect();
        let pb: Vec<BBox> = ps.iter().map(|x| x.1).collect();
        let keep: Vec<(usize, usize)> = gs
            .iter()
            .enumerate()
            .filter_map(|(gi, (g, _))| {
                let p = prev.get(g)?;
                ps.iter().position(|(id, _)| id == p).map(|pi| (gi, pi))
            })
            .collect();
        let pairs = match_frame(&gb, &pb, iou_min, &keep);

        let mut now = BTreeMap::new();
        for &(gi, pi) in &pairs {
            let (g, p) = (gs[gi].0, ps[pi].0);
            if last.get(&g).is_some_and(|&q| q != p) {
                ids += 1;
            }
            last.insert(g, p);
            now.insert(g, p);
            *matched_frames.entry(g).or_default() += 1;
        }
        for (g, _) in gs {
            *total_frames.entry(*g).or_default() += 1;
        }
        tp += pairs.len();
        fp += ps.len() - pairs.len();
        fn_ += gs.len() - pairs.len();
        prev = now;
    }

    let (mut mt, mut pt, mut ml) = (0, 0, 0);
    for (g, &n) in &total_frames {
        let cov = matched_frames.get(g).copied().unwrap_or(0) as f64 / n as f64;
        if cov >= 0.8 {
            mt += 1;
        } else if cov <= 0.2 {
            ml += 1;
        } else {
            pt += 1;
        }
    }

    let gt_count = gt.len();
    let (f1, idp, idr) = idf1(gt, pred, iou_min);
    EvalReport {
        mota: 1.0 - (fp + fn_ + ids) as f64 / gt_count.max(1) as f64,
        idf1: f1,
        idp,
        idr,
        recall: if gt_count > 0 { tp as f64 / gt_count as f64 } else { 0.0 },
        precision: if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 },
        fp,
        fn_,
        ids,
        mt,
        pt,
        ml,
        gt_count,
    }
}
