//! Multi-tracklet multi-object tracking.
//!
//! Detections are grouped into short subsequences, clustered, and split
//! into tracklets by an exact clique partition. Tracklets then grow
//! tracklet trees whose leaves are resolved by a maximum-weight independent
//! set with N-scan pruning. Committed paths are smoothed into final tracks.
//!
//! ```
//! use mtt::{generate, run, Config, PartitionMode, RunOptions, SceneSpec};
//!
//! let spec = SceneSpec { seed: 1, n_targets: 3, n_frames: 30, ..Default::default() };
//! let (truth, dets, emb) = generate(&spec)?;
//! let out = run(&dets, Some(&emb), &Config::default(), PartitionMode::Adaptive, &RunOptions::default())?;
//! let report = mtt::clear_mot(&truth.gt_rows(), &mtt::metrics::rows_from_tracks(&out.tracks), 0.5);
//! assert!(report.mota > 0.9);
//! # Ok::<(), mtt::MttError>(())
//! ```

pub mod assoc;
pub mod cluster;
pub mod config;
pub mod error;
pub mod io;
pub mod kalman;
pub mod metrics;
pub mod model;
pub mod partition;
pub mod pipeline;
pub mod sim;
pub mod tracker;
pub mod tracklet;

pub use config::{Config, DistanceMode};
pub use error::{MttError, Result};
pub use metrics::{clear_mot, EvalReport};
pub use model::{BBox, DetId, Detection, EmbeddingTable, FinalTrack, Frame, FrameSet, TrackBox, Tracklet};
pub use pipeline::{run, PartitionMode, RunOptions, RunOutput};
pub use sim::{generate, SceneSpec, SceneTruth};
