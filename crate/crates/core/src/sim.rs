//! Synthetic scenes with known ground truth.
//!
//! All randomness comes from one `ChaCha8Rng` seeded with
//! `seed_from_u64(spec.seed)` and consumed in a fixed order, so a spec
//! always produces the same bytes.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{MttError, Result};
use crate::io::MotRow;
use crate::model::{normalize, BBox, DetId, Detection, EmbeddingTable, FinalTrack, Frame, FrameSet, TrackBox};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionEvent {
    /// Target index (0-based).
    pub target: usize,
    /// First occluded frame (1-based).
    pub start: Frame,
    pub duration: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub seed: u64,
    pub n_targets: usize,
    pub n_frames: u32,
    pub image_width: f64,
    pub image_height: f64,
    /// Fraction of targets that appear after the first frame.
    pub birth_rate: f64,
    /// Fraction of targets that leave before the last frame.
    pub death_rate: f64,
    pub occlusions: Vec<OcclusionEvent>,
    /// Number of additional occlusions placed at random.
    pub random_occlusions: usize,
    /// Inclusive duration range of random occlusions.
    pub occlusion_len: (u32, u32),
    pub miss_rate: f64,
    pub fp_rate: f64,
    /// Std-dev (px) of box jitter on center and size.
    pub jitter: f64,
    pub speed_range: (f64, f64),
    /// Std-dev (px / frame^2) of the per-frame velocity perturbation.
    pub accel_noise: f64,
    pub width_range: (f64, f64),
    pub aspect_range: (f64, f64),
    pub conf_visible_mean: f64,
    pub conf_partial_mean: f64,
    pub conf_fp_mean: f64,
    pub conf_sd: f64,
    /// Probability that a visible detection is partially occluded (low
    /// confidence). Frames adjacent to an occlusion are always partial.
    pub partial_rate: f64,
    pub emb_dim: usize,
    /// Angular noise of embeddings, degrees.
    pub sigma_emb_deg: f64,
    /// Expected cosine similarity between two identity means.
    pub emb_class_similarity: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 0,
            n_targets: 10,
            n_frames: 200,
            image_width: 1920.0,
            image_height: 1080.0,
            birth_rate: 0.0,
            death_rate: 0.0,
            occlusions: Vec::new(),
            random_occlusions: 0,
            occlusion_len: (2, 8),
            miss_rate: 0.0,
            fp_rate: 0.0,
            jitter: 1.0,
            speed_range: (1.0, 4.0),
            accel_noise: 0.05,
            width_range: (30.0, 60.0),
            aspect_range: (1.5, 2.5),
            conf_visible_mean: 0.8,
            conf_partial_mean: 0.3,
            conf_fp_mean: 0.2,
            conf_sd: 0.1,
            partial_rate: 0.05,
            emb_dim: 16,
            sigma_emb_deg: 15.0,
            emb_class_similarity: 0.5,
        }
    }
}

impl SceneSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SceneSpec = serde_json::from_str(text).map_err(|e| MttError::Scene(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MttError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MttError::Scene(m));
        for (name, v) in [
            ("birth_rate", self.birth_rate),
            ("death_rate", self.death_rate),
            ("miss_rate", self.miss_rate),
            ("fp_rate", self.fp_rate),
            ("partial_rate", self.partial_rate),
            ("emb_class_similarity", self.emb_class_similarity),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        if self.image_width <= 0.0 || self.image_height <= 0.0 {
            return bad("image size must be positive".into());
        }
        if self.emb_dim < 2 {
            return bad("emb_dim must be >= 2".into());
        }
        let (lo, hi) = self.occlusion_len;
        if lo < 1 || hi < lo {
            return bad(format!("invalid occlusion_len ({lo}, {hi})"));
        }
        if self.width_range.0 <= 0.0 || self.width_range.1 < self.width_range.0 {
            return bad("invalid width_range".into());
        }
        if self.aspect_range.0 <= 0.0 || self.aspect_range.1 < self.aspect_range.0 {
            return bad("invalid aspect_range".into());
        }
        if self.speed_range.0 < 0.0 || self.speed_range.1 < self.speed_range.0 {
            return bad("invalid speed_range".into());
        }
        let max_h = self.width_range.1 * self.aspect_range.1;
        if self.width_range.1 >= self.image_width || max_h >= self.image_height {
            return bad("boxes do not fit in the image".into());
        }
        for (i, o) in self.occlusions.iter().enumerate() {
            if o.duration < 1 {
                return bad(format!("occlusion {i}: duration must be >= 1"));
            }
            if o.target >= self.n_targets {
                return bad(format!("occlusion {i}: no target {}", o.target));
            }
        }
        for (name, v) in [("jitter", self.jitter), ("accel_noise", self.accel_noise), ("conf_sd", self.conf_sd), ("sigma_emb_deg", self.sigma_emb_deg)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthBox {
    pub frame: Frame,
    pub bbox: BBox,
    pub visible: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneTruth {
    /// Per identity (1-based ids), boxes in frame order.
    pub trajectories: BTreeMap<u32, Vec<TruthBox>>,
    /// Identity of every emitted detection; `None` for false positives.
    pub det_identity: HashMap<DetId, Option<u32>>,
    /// Occluded intervals `(identity, first frame, length)`.
    pub occlusions: Vec<(u32, Frame, u32)>,
}

impl SceneTruth {
    pub fn gt_rows(&self) -> Vec<MotRow> {
        let mut rows: Vec<MotRow> = self
            .trajectories
            .iter()
            .flat_map(|(&id, boxes)| {
                boxes.iter().map(move |b| MotRow {
                    frame: b.frame,
                    id: id as i64,
                    bbox: b.bbox,
                    score: 1.0,
                })
            })
            .collect();
        rows.sort_by_key(|r| (r.frame, r.id));
        rows
    }

    /// Ground truth as tracks (for replaying GT as predictions).
    pub fn as_tracks(&self) -> Vec<FinalTrack> {
        self.trajectories
            .iter()
            .map(|(&id, boxes)| FinalTrack {
                track_id: id,
                boxes: boxes
                    .iter()
                    .map(|b| TrackBox {
                        frame: b.frame,
                        bbox: b.bbox,
                        score: 1.0,
                        interpolated: !b.visible,
                    })
                    .collect(),
                source: Vec::new(),
            })
            .collect()
    }
}

pub fn write_gt_to<W: Write>(truth: &SceneTruth, mut out: W) -> std::io::Result<()> {
    for r in truth.gt_rows() {
        let b = r.bbox;
        writeln!(out, "{},{},{},{},{},{},1,1,1", r.frame, r.id, b.x, b.y, b.w, b.h)?;
    }
    out.flush()
}

pub fn write_gt(truth: &SceneTruth, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| MttError::io(path, e))?;
    write_gt_to(truth, std::io::BufWriter::new(f)).map_err(|e| MttError::io(path, e))
}

fn clipped(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    let v = if sd > 0.0 {
        Normal::new(mean, sd).expect("sd checked").sample(rng)
    } else {
        mean
    };
    v.clamp(0.0, 1.0)
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let n = Normal::new(0.0, 1.0).unwrap();
    loop {
        let v: Vec<f64> = (0..dim).map(|_| n.sample(rng)).collect();
        if let Some(u) = normalize(&v) {
            return u;
        }
    }
}

/// `mean` rotated by an angle ~ N(0, sigma) towards a random orthogonal
/// direction.
fn perturb(rng: &mut ChaCha8Rng, mean: &[f64], sigma_rad: f64) -> Vec<f64> {
    let theta = if sigma_rad > 0.0 {
        Normal::new(0.0, sigma_rad).unwrap().sample(rng)
    } else {
        0.0
    };
    loop {
        let g = gaussian_vec(rng, mean.len());
        let dot: f64 = g.iter().zip(mean).map(|(a, b)| a * b).sum();
        let orth: Vec<f64> = g.iter().zip(mean).map(|(a, b)| a - dot * b).collect();
        if let Some(u) = normalize(&orth) {
            let v: Vec<f64> = mean
                .iter()
                .zip(&u)
                .map(|(m, o)| theta.cos() * m + theta.sin() * o)
                .collect();
            return normalize(&v).expect("unit combination");
        }
    }
}

struct Target {
    first: Frame,
    last: Frame,
    boxes: Vec<BBox>,
    occluded: Vec<bool>,
    mean_emb: Vec<f64>,
}

/// Builds the scene: trajectories, then per frame the observed detections
/// (shuffled within the frame) with embeddings.
pub fn generate(spec: &SceneSpec) -> Result<(SceneTruth, FrameSet, EmbeddingTable)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_frames;
    let (iw, ih) = (spec.image_width, spec.image_height);

    let class_dir = gaussian_vec(&mut rng, spec.emb_dim);
    let c = spec.emb_class_similarity;
    let mut targets: Vec<Target> = Vec::with_capacity(spec.n_targets);
    for _ in 0..spec.n_targets {
        let first = if n > 1 && rng.random_bool(spec.birth_rate) {
            rng.random_range(1..=n.div_ceil(2))
        } else {
            1
        };
        let last = if n > 1 && rng.random_bool(spec.death_rate) {
            rng.random_range((n / 2).max(first)..=n)
        } else {
            n
        };
        let w = rng.random_range(spec.width_range.0..=spec.width_range.1);
        let h = w * rng.random_range(spec.aspect_range.0..=spec.aspect_range.1);
        let mut cx = rng.random_range(w / 2.0..=iw - w / 2.0);
        let mut cy = rng.random_range(h / 2.0..=ih - h / 2.0);
        let speed = rng.random_range(spec.speed_range.0..=spec.speed_range.1);
        let dir = rng.random_range(0.0..std::f64::consts::TAU);
        let (mut vx, mut vy) = (speed * dir.cos(), speed * dir.sin());
        let accel = (spec.accel_noise > 0.0).then(|| Normal::new(0.0, spec.accel_noise).unwrap());
        let mut boxes = Vec::new();
        for _ in first..=last {
            boxes.push(BBox::from_center(cx, cy, w, h));
            if let Some(a) = accel {
                vx += a.sample(&mut rng);
                vy += a.sample(&mut rng);
            }
            cx += vx;
            cy += vy;
            if cx < w / 2.0 || cx > iw - w / 2.0 {
                vx = -vx;
                cx = cx.clamp(w / 2.0, iw - w / 2.0);
            }
            if cy < h / 2.0 || cy > ih - h / 2.0 {
                vy = -vy;
                cy = cy.clamp(h / 2.0, ih - h / 2.0);
            }
        }
        let own = gaussian_vec(&mut rng, spec.emb_dim);
        let mix: Vec<f64> = class_dir
            .iter()
            .zip(&own)
            .map(|(a, b)| c.sqrt() * a + (1.0 - c).sqrt() * b)
            .collect();
        let len = boxes.len();
        targets.push(Target {
            first,
            last,
            boxes,
            occluded: vec![false; len],
            mean_emb: normalize(&mix).unwrap_or(own),
        });
    }

    for e in &spec.occlusions {
        let t = &mut targets[e.target];
        for f in e.start..e.start.saturating_add(e.duration) {
            if f >= t.first && f <= t.last {
                t.occluded[(f - t.first) as usize] = true;
            }
        }
    }
    // Random occlusions never overlap or touch an existing one, so every
    // occluded run keeps its drawn length. A draw that finds no free slot
    // after a few attempts is dropped.
    const PLACEMENT_ATTEMPTS: usize = 32;
    for _ in 0..spec.random_occlusions {
        if spec.n_targets == 0 || n == 0 {
            break;
        }
        for _ in 0..PLACEMENT_ATTEMPTS {
            let target = rng.random_range(0..spec.n_targets);
            let duration = rng.random_range(spec.occlusion_len.0..=spec.occlusion_len.1);
            let t = &mut targets[target];
            let span = t.last - t.first + 1;
            // keep at least one visible frame on each side
            if span < duration + 2 {
                continue;
            }
            let start = rng.random_range(t.first + 1..=t.last - duration);
            let k0 = (start - t.first) as usize;
            let k1 = k0 + duration as usize;
            if t.occluded[k0 - 1..=k1].iter().any(|&o| o) {
                continue;
            }
            t.occluded[k0..k1].fill(true);
            break;
        }
    }

    let mut truth = SceneTruth::default();
    for (i, t) in targets.iter().enumerate() {
        let id = i as u32 + 1;
        let boxes: Vec<TruthBox> = t
            .boxes
            .iter()
            .enumerate()
            .map(|(k, b)| TruthBox {
                frame: t.first + k as Frame,
                bbox: *b,
                visible: !t.occluded[k],
            })
            .collect();
        let mut k = 0;
        while k < boxes.len() {
            if !boxes[k].visible {
                let s = k;
                while k < boxes.len() && !boxes[k].visible {
                    k += 1;
                }
                truth.occlusions.push((id, boxes[s].frame, (k - s) as u32));
            } else {
                k += 1;
            }
        }
        truth.trajectories.insert(id, boxes);
    }

    let sigma = spec.sigma_emb_deg.to_radians();
    let jitter = (spec.jitter > 0.0).then(|| Normal::new(0.0, spec.jitter).unwrap());
    let mut fs = FrameSet::with_frames(n as usize);
    let mut emb = EmbeddingTable::new(spec.emb_dim);
    let mut next_id = 0u32;
    for f in 1..=n {
        let mut frame_dets: Vec<(Detection, Option<u32>, Vec<f64>)> = Vec::new();
        for (i, t) in targets.iter().enumerate() {
            if f < t.first || f > t.last {
                continue;
            }
            let k = (f - t.first) as usize;
            if t.occluded[k] || rng.random_bool(spec.miss_rate) {
                continue;
            }
            let near_occlusion = (k > 0 && t.occluded[k - 1]) || (k + 1 < t.occluded.len() && t.occluded[k + 1]);
            let partial = near_occlusion || rng.random_bool(spec.partial_rate);
            let b = t.boxes[k];
            let (cx, cy) = b.center();
            let mut j = || jitter.map_or(0.0, |d| d.sample(&mut rng));
            let (dx, dy, dw, dh) = (j(), j(), j(), j());
            let bbox = if jitter.is_some() {
                BBox::from_center(cx + dx, cy + dy, (b.w + dw).max(1.0), (b.h + dh).max(1.0))
            } else {
                b
            };
            let mean = if partial { spec.conf_partial_mean } else { spec.conf_visible_mean };
            let score = clipped(&mut rng, mean, spec.conf_sd);
            let e = perturb(&mut rng, &t.mean_emb, sigma);
            frame_dets.push((Detection::new(0, f, bbox, score), Some(i as u32 + 1), e));
        }
        let n_fp = if spec.fp_rate > 0.0 && spec.n_targets > 0 {
            Binomial::new(spec.n_targets as u64, spec.fp_rate).unwrap().sample(&mut rng)
        } else {
            0
        };
        for _ in 0..n_fp {
            let w = rng.random_range(spec.width_range.0..=spec.width_range.1);
            let h = w * rng.random_range(spec.aspect_range.0..=spec.aspect_range.1);
            let cx = rng.random_range(w / 2.0..=iw - w / 2.0);
            let cy = rng.random_range(h / 2.0..=ih - h / 2.0);
            let score = clipped(&mut rng, spec.conf_fp_mean, spec.conf_sd);
            let e = gaussian_vec(&mut rng, spec.emb_dim);
            frame_dets.push((Detection::new(0, f, BBox::from_center(cx, cy, w, h), score), None, e));
        }
        // Fisher-Yates so det ids carry no identity order.
        for i in (1..frame_dets.len()).rev() {
            let j = rng.random_range(0..=i);
            frame_dets.swap(i, j);
        }
        for (mut d, ident, e) in frame_dets {
            d.det_id = DetId(next_id);
            next_id += 1;
            truth.det_identity.insert(d.det_id, ident);
            emb.insert(d.det_id, e)?;
            fs.push(d)?;
        }
    }
    Ok((truth, fs, emb))
}

/// Frame-to-frame greedy IoU tracker: a detection continues the track it
/// overlaps most in the previous frame, otherwise starts a new track.
pub fn baseline_greedy_tracker(fs: &FrameSet, iou_min: f64) -> Vec<FinalTrack> {
    let mut tracks: Vec<FinalTrack> = Vec::new();
    let mut active: Vec<usize> = Vec::new(); // track indices alive in the previous frame
    for f in 1..=fs.n_frames() as Frame {
        let dets = fs.frame(f);
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (ai, &ti) in active.iter().enumerate() {
            let last = tracks[ti].boxes.last().expect("non-empty track").bbox;
            for (di, d) in dets.iter().enumerate() {
                let iou = last.iou(&d.bbox);
                if iou >= iou_min {
                    pairs.push((iou, ai, di));
                }
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut t_used = vec![false; active.len()];
        let mut d_used = vec![false; dets.len()];
        let mut next_active = Vec::new();
        for (_, ai, di) in pairs {
            if t_used[ai] || d_used[di] {
                continue;
            }
            t_used[ai] = true;
            d_used[di] = true;
            let ti = active[ai];
            let d = &dets[di];
            tracks[ti].boxes.push(TrackBox {
                frame: f,
                bbox: d.bbox,
                score: d.score,
                interpolated: false,
            });
            tracks[ti].source.push(d.det_id);
            next_active.push(ti);
        }
        for (di, d) in dets.iter().enumerate() {
            if !d_used[di] {
                tracks.push(FinalTrack {
                    track_id: tracks.len() as u32 + 1,
                    boxes: vec![TrackBox {
                        frame: f,
                        bbox: d.bbox,
                        score: d.score,
                        interpolated: false,
                    }],
                    source: vec![d.det_id],
                });
                next_active.push(tracks.len() - 1);
            }
        }
        next_active.sort_unstable();
        active = next_active;
    }
    tracks
}
