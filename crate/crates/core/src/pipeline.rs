//! End-to-end pipeline over one sequence.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::assoc::{assemble_tracks, build_conflict_graph, flush_commit, nscan_prune, solve_mwis};
use crate::cluster::{dbscan, pixel_distance_matrix, prefilter, weighted_distance_matrix};
use crate::config::{Config, DistanceMode};
use crate::error::{MttError, Result};
use crate::model::{Detection, EmbeddingTable, FinalTrack, Frame, FrameSet, Tracklet};
use crate::partition::{partition_adaptive, partition_fixed, CountCurve, Subsequence};
use crate::tracker::{tracklet_feature, Tracker};
use crate::tracklet::{edge_weights, greedy_merge, solve_clique_partition, tracklets_from_partition, Partition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PartitionMode {
    Adaptive,
    /// Non-overlapping windows of the given length.
    Fixed(usize),
    /// Unit-stride overlapping windows of the given length.
    Sliding(usize),
}

impl FromStr for PartitionMode {
    type Err = MttError;

    fn from_str(s: &str) -> Result<Self> {
        let parse_len = |v: &str| -> Result<usize> {
            match v.parse::<usize>() {
                Ok(l) if l >= 1 => Ok(l),
                _ => Err(MttError::Config(format!("invalid window length '{v}'"))),
            }
        };
        match s.split_once(':') {
            None if s == "adaptive" => Ok(PartitionMode::Adaptive),
            Some(("fixed", l)) => Ok(PartitionMode::Fixed(parse_len(l)?)),
            Some(("sliding", l)) => Ok(PartitionMode::Sliding(parse_len(l)?)),
            _ => Err(MttError::Config(format!(
                "unknown mode '{s}' (expected adaptive, fixed:L or sliding:L)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub partition_s: f64,
    pub cluster_s: f64,
    pub tracklet_s: f64,
    pub track_s: f64,
    pub assoc_s: f64,
    pub smooth_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RunCounts {
    pub frames: usize,
    pub detections: usize,
    pub filtered_detections: usize,
    pub subsequences: usize,
    pub clusters: usize,
    pub tracklets: usize,
    pub trees: usize,
    pub hypotheses: usize,
    pub final_tracks: usize,
    pub output_rows: usize,
    pub mwis_exact_components: usize,
    pub mwis_greedy_components: usize,
    pub clique_greedy_clusters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterRecord {
    pub det_id: u32,
    pub frame: Frame,
    pub cx: f64,
    pub cy: f64,
    pub cluster_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundDiag {
    pub round: u32,
    pub start: Frame,
    pub end: Frame,
    pub detections: usize,
    pub clusters: usize,
    pub tracklets: usize,
    pub trees: usize,
    pub leaves: usize,
    pub conflict_edges: usize,
    pub selected: usize,
    pub committed_tracklets: usize,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub log_events: bool,
    /// Keep cluster records and affinity-graph dumps.
    pub debug: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub tracks: Vec<FinalTrack>,
    pub counts: RunCounts,
    pub timings: StageTimings,
    pub curve: CountCurve,
    pub subsequences: Vec<Subsequence>,
    /// Every tracklet handed to the tracker, in round order.
    pub tracklets: Vec<Tracklet>,
    pub clusters: Vec<ClusterRecord>,
    /// `(cluster id, dump)` of every affinity graph with more than one node.
    pub instances: Vec<(usize, String)>,
    pub rounds: Vec<RoundDiag>,
    pub events: Vec<String>,
}

/// Subsequences for the given mode.
pub fn subsequences(curve: &CountCurve, cfg: &Config, mode: PartitionMode) -> Result<Vec<Subsequence>> {
    let n = curve.len();
    match mode {
        PartitionMode::Adaptive => Ok(partition_adaptive(curve, cfg)),
        PartitionMode::Fixed(l) => partition_fixed(n, l, l, &curve.filtered),
        PartitionMode::Sliding(l) => partition_fixed(n, l, cfg.stride.min(l), &curve.filtered),
    }
}

/// Tracklets of one subsequence: prefilter, clustering, then a clique
/// partition per cluster (solved in parallel, assembled in cluster order).
struct WindowResult {
    filtered: usize,
    clusters: Vec<Vec<Detection>>,
    partitions: Vec<(Partition, crate::tracklet::AffinityGraph, bool)>,
}

fn solve_window(dets: &[Detection], emb: Option<&EmbeddingTable>, cfg: &Config) -> Result<WindowResult> {
    let kept = prefilter(dets, cfg.theta_s, cfg.nms_iou);
    let labeling = match (cfg.distance, emb) {
        (DistanceMode::Weighted, Some(e)) => {
            let (m, _) = weighted_distance_matrix(&kept, e, cfg.alpha, cfg.beta, cfg.image_diagonal());
            dbscan(&m, cfg.eps_weighted, cfg.delta)
        }
        (DistanceMode::Weighted, None) => {
            let empty = EmbeddingTable::new(0);
            let (m, _) = weighted_distance_matrix(&kept, &empty, cfg.alpha, cfg.beta, cfg.image_diagonal());
            dbscan(&m, cfg.eps_weighted, cfg.delta)
        }
        (DistanceMode::Pixel, _) => dbscan(&pixel_distance_matrix(&kept), cfg.eps, cfg.delta),
    };
    let clusters: Vec<Vec<Detection>> = labeling
        .groups()
        .into_iter()
        .map(|g| g.into_iter().map(|i| kept[i].clone()).collect())
        .collect();
    let partitions = clusters
        .par_iter()
        .map(|c| {
            let g = edge_weights(c, emb, cfg);
            match solve_clique_partition(&g, cfg.clique_budget) {
                Ok(p) => Ok((p, g, false)),
                Err(MttError::Budget { size, budget }) if cfg.greedy_fallback => {
                    log::warn!("cluster of {size} detections exceeds budget {budget}; greedy merge");
                    Ok((greedy_merge(&g), g, true))
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WindowResult {
        filtered: kept.len(),
        clusters,
        partitions,
    })
}

/// Drops members at or before `consumed`; recomputes score and feature.
fn truncate(t: Tracklet, consumed: Frame, emb: Option<&EmbeddingTable>) -> Option<Tracklet> {
    if t.start() > consumed {
        return Some(t);
    }
    let members: Vec<Detection> = t.members.into_iter().filter(|d| d.frame > consumed).collect();
    if members.is_empty() {
        return None;
    }
    let mut out = Tracklet::new(t.id, members, None);
    out.feature = emb.and_then(|e| tracklet_feature(&out, e));
    Some(out)
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

/// Runs the whole pipeline.
pub fn run(
    fs: &FrameSet,
    emb: Option<&EmbeddingTable>,
    cfg: &Config,
    mode: PartitionMode,
    opts: &RunOptions,
) -> Result<RunOutput> {
    cfg.validate()?;
    let mut timings = StageTimings::default();
    let mut counts = RunCounts {
        frames: fs.n_frames(),
        detections: fs.n_detections(),
        ..Default::default()
    };

    let t0 = Instant::now();
    let curve = CountCurve::new(fs.counts(), cfg.w_median)?;
    let subs = subsequences(&curve, cfg, mode)?;
    timings.partition_s = secs(t0);
    counts.subsequences = subs.len();

    let mut tracker = Tracker::new(cfg.clone());
    if opts.log_events {
        tracker = tracker.with_event_log();
    }
    let mut events = Vec::new();
    let mut committed: BTreeMap<u32, Vec<Arc<Tracklet>>> = BTreeMap::new();
    let mut all_tracklets = Vec::new();
    let mut cluster_records = Vec::new();
    let mut instances = Vec::new();
    let mut rounds = Vec::new();
    let mut next_tracklet = 0u32;
    let mut next_cluster = 0usize;
    let mut consumed: Frame = 0;
    let k = cfg.prune_depth;

    for sub in &subs {
        if sub.end <= consumed {
            continue;
        }
        let dets = fs.range(sub.start, sub.end);
        let t1 = Instant::now();
        let win = solve_window(&dets, emb, cfg)?;
        timings.cluster_s += secs(t1);

        let t2 = Instant::now();
        let mut tracklets = Vec::new();
        let n_clusters = win.clusters.len();
        for (c, (p, g, greedy)) in win.clusters.iter().zip(&win.partitions) {
            let cid = next_cluster;
            next_cluster += 1;
            if *greedy {
                counts.clique_greedy_clusters += 1;
            }
            if opts.debug {
                for d in c {
                    let (cx, cy) = d.bbox.center();
                    cluster_records.push(ClusterRecord {
                        det_id: d.det_id.0,
                        frame: d.frame,
                        cx,
                        cy,
                        cluster_id: cid,
                    });
                }
                if g.len() > 1 {
                    instances.push((cid, g.dump(Some(p))));
                }
            }
            tracklets.extend(tracklets_from_partition(p, g, emb, &mut next_tracklet));
        }
        let window_start = consumed + 1;
        let mut window_dets = win.filtered;
        if sub.start <= consumed {
            tracklets = tracklets
                .into_iter()
                .filter_map(|t| truncate(t, consumed, emb))
                .collect();
            window_dets = tracklets.iter().map(|t| t.len()).sum();
        }
        counts.filtered_detections += window_dets;
        counts.clusters += n_clusters;
        counts.tracklets += tracklets.len();
        timings.tracklet_s += secs(t2);

        let t3 = Instant::now();
        let round = tracker.round();
        let n_new = tracklets.len();
        all_tracklets.extend(tracklets.iter().cloned());
        tracker.advance(tracklets, (window_start.max(sub.start), sub.end));
        timings.track_s += secs(t3);

        let t4 = Instant::now();
        let graph = build_conflict_graph(&tracker.trees);
        counts.hypotheses += graph.len();
        let (selected, stats) = solve_mwis(&graph, cfg.mwis_exact_max);
        counts.mwis_exact_components += stats.exact_components;
        counts.mwis_greedy_components += stats.greedy_components;
        let refs: Vec<_> = selected.iter().map(|&i| graph.nodes[i]).collect();
        let (n_trees, n_leaves) = (tracker.trees.len(), tracker.n_leaves());
        let mut log = Vec::new();
        let commits = nscan_prune(&mut tracker.trees, &refs, k, round, &mut log);
        let n_committed: usize = commits.iter().map(|c| c.tracklets.len()).sum();
        for c in commits {
            committed.entry(c.tree_id).or_default().extend(c.tracklets);
        }
        timings.assoc_s += secs(t4);

        events.extend(tracker.take_events());
        events.extend(log);
        rounds.push(RoundDiag {
            round,
            start: sub.start,
            end: sub.end,
            detections: window_dets,
            clusters: n_clusters,
            tracklets: n_new,
            trees: n_trees,
            leaves: n_leaves,
            conflict_edges: graph.n_edges(),
            selected: refs.len(),
            committed_tracklets: n_committed,
        });
        consumed = sub.end;
    }

    let t4 = Instant::now();
    let graph = build_conflict_graph(&tracker.trees);
    let (selected, _) = solve_mwis(&graph, cfg.mwis_exact_max);
    let refs: Vec<_> = selected.iter().map(|&i| graph.nodes[i]).collect();
    for c in flush_commit(&mut tracker.trees, &refs) {
        committed.entry(c.tree_id).or_default().extend(c.tracklets);
    }
    timings.assoc_s += secs(t4);
    counts.trees = tracker.spawned;

    let t5 = Instant::now();
    let tracks = assemble_tracks(&committed, &cfg.kalman())?;
    timings.smooth_s = secs(t5);
    counts.final_tracks = tracks.len();
    counts.output_rows = tracks.iter().map(|t| t.boxes.len()).sum();

    Ok(RunOutput {
        tracks,
        counts,
        timings,
        curve,
        subsequences: subs,
        tracklets: all_tracklets,
        clusters: cluster_records,
        instances,
        rounds,
        events,
    })
}

/// `frame,raw_count,filtered_count,subseq_id`, one row per frame.
pub fn partition_csv(curve: &CountCurve, subs: &[Subsequence]) -> String {
    let mut s = String::from("frame,raw_count,filtered_count,subseq_id\n");
    for t in 1..=curve.len() as Frame {
        let id = subs
            .iter()
            .position(|x| x.contains(t))
            .map_or(String::new(), |i| i.to_string());
        let i = (t - 1) as usize;
        let _ = writeln!(s, "{t},{},{},{id}", curve.raw[i], curve.filtered[i]);
    }
    s
}

/// `det_id,frame,cx,cy,cluster_id`.
pub fn clusters_csv(records: &[ClusterRecord]) -> String {
    let mut s = String::from("det_id,frame,cx,cy,cluster_id\n");
    for r in records {
        let _ = writeln!(s, "{},{},{},{},{}", r.det_id, r.frame, r.cx, r.cy, r.cluster_id);
    }
    s
}
