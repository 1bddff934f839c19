//! Domain types shared by every stage of the pipeline.
//!
//! Boxes are stored top-left plus size, in pixels, as `f64`. Frames are
//! numbered from 1. Detection ids are assigned in file order and are unique
//! within one sequence.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{MttError, Result};

pub type Frame = u32;

/// Identifier of a detection within one sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DetId(pub u32);

impl fmt::Display for DetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox {
            x: cx - w / 2.0,
            y: cy - h / 2.0,
            w,
            h,
        }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && self.x.is_finite() && self.y.is_finite()
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let ix = (self.x + self.w).min(other.x + other.w) - self.x.max(other.x);
        let iy = (self.y + self.h).min(other.y + other.h) - self.y.max(other.y);
        if ix <= 0.0 || iy <= 0.0 {
            return 0.0;
        }
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Euclidean distance between box centers.
    pub fn center_distance(&self, other: &BBox) -> f64 {
        let (ax, ay) = self.center();
        let (bx, by) = other.center();
        (ax - bx).hypot(ay - by)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub det_id: DetId,
    pub frame: Frame,
    pub bbox: BBox,
    pub score: f64,
}

impl Detection {
    pub fn new(det_id: u32, frame: Frame, bbox: BBox, score: f64) -> Self {
        Detection {
            det_id: DetId(det_id),
            frame,
            bbox,
            score,
        }
    }
}

/// Detections grouped by frame, frames `1..=N` contiguous.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameSet {
    frames: Vec<Vec<Detection>>,
}

impl FrameSet {
    pub fn new() -> Self {
        FrameSet::default()
    }

    pub fn with_frames(n: usize) -> Self {
        FrameSet {
            frames: vec![Vec::new(); n],
        }
    }

    /// Groups detections by frame. Frames missing from the input become
    /// empty frames; `N` is the largest frame number seen.
    pub fn from_detections(dets: Vec<Detection>) -> Result<Self> {
        let mut fs = FrameSet::new();
        for d in dets {
            fs.push(d)?;
        }
        Ok(fs)
    }

    pub fn push(&mut self, det: Detection) -> Result<()> {
        if det.frame == 0 {
            return Err(MttError::Config(format!(
                "detection {} has frame 0; frames start at 1",
                det.det_id
            )));
        }
        let idx = det.frame as usize - 1;
        if idx >= self.frames.len() {
            self.frames.resize(idx + 1, Vec::new());
        }
        self.frames[idx].push(det);
        Ok(())
    }

    /// Extends the sequence with empty frames up to `n`.
    pub fn ensure_frames(&mut self, n: usize) {
        if self.frames.len() < n {
            self.frames.resize(n, Vec::new());
        }
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Detections at frame `t` (1-based). Out-of-range frames are empty.
    pub fn frame(&self, t: Frame) -> &[Detection] {
        if t == 0 {
            return &[];
        }
        self.frames
            .get(t as usize - 1)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Per-frame detection counts `M_1..M_N`.
    pub fn counts(&self) -> Vec<u32> {
        self.frames.iter().map(|f| f.len() as u32).collect()
    }

    pub fn n_detections(&self) -> usize {
        self.frames.iter().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Detection> {
        self.frames.iter().flatten()
    }

    /// All detections with `start <= frame <= end`, in frame order.
    pub fn range(&self, start: Frame, end: Frame) -> Vec<Detection> {
        (start..=end)
            .flat_map(|t| self.frame(t).iter().cloned())
            .collect()
    }

    pub fn next_det_id(&self) -> u32 {
        self.iter().map(|d| d.det_id.0 + 1).max().unwrap_or(0)
    }
}

/// Appearance embeddings keyed by detection id. Every stored vector has
/// unit L2 norm.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<DetId, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Stores `v` after normalizing it. Rejects wrong length, non-finite
    /// entries and zero vectors.
    pub fn insert(&mut self, id: DetId, v: Vec<f64>) -> Result<()> {
        if self.dim == 0 {
            self.dim = v.len();
        }
        if v.len() != self.dim {
            return Err(MttError::Config(format!(
                "embedding for {} has length {}, table dim {}",
                id,
                v.len(),
                self.dim
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(MttError::Numerical(format!(
                "non-finite embedding for det {id}"
            )));
        }
        let v = normalize(&v)
            .ok_or_else(|| MttError::Numerical(format!("zero-norm embedding for det {id}")))?;
        self.vectors.insert(id, v);
        Ok(())
    }

    pub fn get(&self, id: DetId) -> Option<&[f64]> {
        self.vectors.get(&id).map(Vec::as_slice)
    }

    pub fn ids(&self) -> Vec<DetId> {
        let mut ids: Vec<DetId> = self.vectors.keys().copied().collect();
        ids.sort();
        ids
    }
}

/// Returns `v / ||v||`, or `None` for a zero (or non-finite) vector.
pub fn normalize(v: &[f64]) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n.is_finite() && n > 0.0) {
        return None;
    }
    Some(v.iter().map(|x| x / n).collect())
}

/// Cosine similarity of two vectors; `None` if either has zero norm.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// An identity-consistent run of detections over a short interval, at most
/// one per frame, handled downstream as a single observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub id: u32,
    /// Members sorted by frame.
    pub members: Vec<Detection>,
    pub feature: Option<Vec<f64>>,
    pub mean_score: f64,
}

impl Tracklet {
    /// Builds a tracklet from its members. Panics if `members` is empty or
    /// holds two detections of one frame.
    pub fn new(id: u32, mut members: Vec<Detection>, feature: Option<Vec<f64>>) -> Self {
        assert!(!members.is_empty(), "tracklet needs at least one member");
        members.sort_by_key(|d| (d.frame, d.det_id));
        assert!(
            members.windows(2).all(|w| w[0].frame < w[1].frame),
            "tracklet holds two detections in one frame"
        );
        let mean_score = members.iter().map(|d| d.score).sum::<f64>() / members.len() as f64;
        Tracklet {
            id,
            members,
            feature,
            mean_score,
        }
    }

    pub fn start(&self) -> Frame {
        self.members[0].frame
    }

    pub fn end(&self) -> Frame {
        self.members[self.members.len() - 1].frame
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn det_ids(&self) -> impl Iterator<Item = DetId> + '_ {
        self.members.iter().map(|d| d.det_id)
    }

    pub fn min_det_id(&self) -> DetId {
        self.members.iter().map(|d| d.det_id).min().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackBox {
    pub frame: Frame,
    pub bbox: BBox,
    pub score: f64,
    pub interpolated: bool,
}

/// An output trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalTrack {
    pub track_id: u32,
    /// Strictly increasing in frame.
    pub boxes: Vec<TrackBox>,
    pub source: Vec<DetId>,
}

impl FinalTrack {
    pub fn first_frame(&self) -> Option<Frame> {
        self.boxes.first().map(|b| b.frame)
    }

    pub fn last_frame(&self) -> Option<Frame> {
        self.boxes.last().map(|b| b.frame)
    }
}
