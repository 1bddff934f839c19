//! C ABI for the `mtt` tracker.
//!
//! All objects are opaque handles created by `*_new`/`*_load` functions and
//! released with the matching `*_free`. Every fallible call returns an
//! `MttStatus`; on failure `mtt_last_error` gives a message for the calling
//! thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use mtt::io::{parse_detections, parse_embeddings, parse_mot_rows, write_tracks};
use mtt::{BBox, Config, DetId, Detection, EmbeddingTable, FinalTrack, FrameSet, MttError, PartitionMode, RunOptions};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MttStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Config = 5,
    Budget = 6,
    Numerical = 7,
    OutOfRange = 8,
    Panic = 9,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn fail(status: MttStatus, msg: impl Into<String>) -> MttStatus {
    set_error(msg);
    status
}

fn from_error(e: MttError) -> MttStatus {
    let status = match &e {
        MttError::Io { .. } => MttStatus::Io,
        MttError::Parse { .. } | MttError::DimensionMismatch { .. } => MttStatus::Parse,
        MttError::Config(_) | MttError::Scene(_) => MttStatus::Config,
        MttError::Budget { .. } => MttStatus::Budget,
        MttError::Numerical(_) => MttStatus::Numerical,
        MttError::OutOfRange { .. } => MttStatus::OutOfRange,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> MttStatus) -> MttStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(MttStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, MttStatus> {
    if p.is_null() {
        return Err(fail(MttStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(MttStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

macro_rules! try_status {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Tracker configuration.
pub struct MttConfig {
    inner: Config,
}

/// Detections plus optional embeddings.
pub struct MttFrameSet {
    frames: FrameSet,
    emb: Option<EmbeddingTable>,
}

/// Tracking result.
pub struct MttTracks {
    tracks: Vec<FinalTrack>,
    rows: Vec<MttTrackRow>,
}

/// One output box.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MttTrackRow {
    pub frame: u32,
    pub track_id: u32,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub score: f64,
    /// 1 when the box was filled in across a gap.
    pub interpolated: u8,
}

/// Evaluation summary.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MttReport {
    pub mota: f64,
    pub idf1: f64,
    pub idp: f64,
    pub idr: f64,
    pub recall: f64,
    pub precision: f64,
    pub fp: u64,
    pub fn_count: u64,
    pub ids: u64,
    pub mt: u64,
    pub pt: u64,
    pub ml: u64,
    pub gt_count: u64,
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call on the same thread.
#[no_mangle]
pub extern "C" fn mtt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mtt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// New configuration with default parameters.
#[no_mangle]
pub extern "C" fn mtt_config_new() -> *mut MttConfig {
    Box::into_raw(Box::new(MttConfig { inner: Config::default() }))
}

/// Loads a `key = value` configuration file.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mtt_config_load(path: *const c_char, out: *mut *mut MttConfig) -> MttStatus {
    guard(|| {
        if out.is_null() {
            return fail(MttStatus::NullPointer, "out is null");
        }
        let p = try_status!(str_arg(path, "path"));
        match Config::load(&PathBuf::from(p)).and_then(|(c, _)| c.validate().map(|_| c)) {
            Ok(c) => {
                *out = Box::into_raw(Box::new(MttConfig { inner: c }));
                MttStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Sets one parameter by name. Unknown keys are `InvalidArgument`.
///
/// # Safety
/// `cfg` must come from this library; `key` and `value` must be C strings.
#[no_mangle]
pub unsafe extern "C" fn mtt_config_set(cfg: *mut MttConfig, key: *const c_char, value: *const c_char) -> MttStatus {
    guard(|| {
        let Some(cfg) = cfg.as_mut() else {
            return fail(MttStatus::NullPointer, "cfg is null");
        };
        let k = try_status!(str_arg(key, "key"));
        let v = try_status!(str_arg(value, "value"));
        let mut next = cfg.inner.clone();
        match next.set(k, v) {
            Ok(true) => match next.validate() {
                Ok(()) => {
                    cfg.inner = next;
                    MttStatus::Ok
                }
                Err(e) => from_error(e),
            },
            Ok(false) => fail(MttStatus::InvalidArgument, format!("unknown key '{k}'")),
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `cfg` must come from this library (or be null) and not be used again.
#[no_mangle]
pub unsafe extern "C" fn mtt_config_free(cfg: *mut MttConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Empty detection set.
#[no_mangle]
pub extern "C" fn mtt_frameset_new() -> *mut MttFrameSet {
    Box::into_raw(Box::new(MttFrameSet {
        frames: FrameSet::new(),
        emb: None,
    }))
}

/// Reads a detection file and, if `emb_path` is not null, its embeddings.
///
/// # Safety
/// Paths must be C strings (`emb_path` may be null); `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mtt_frameset_load(
    dets_path: *const c_char,
    emb_path: *const c_char,
    out: *mut *mut MttFrameSet,
) -> MttStatus {
    guard(|| {
        if out.is_null() {
            return fail(MttStatus::NullPointer, "out is null");
        }
        let d = try_status!(str_arg(dets_path, "dets_path"));
        let frames = match parse_detections(&PathBuf::from(d)) {
            Ok(f) => f,
            Err(e) => return from_error(e),
        };
        let emb = if emb_path.is_null() {
            None
        } else {
            let e = try_status!(str_arg(emb_path, "emb_path"));
            match parse_embeddings(&PathBuf::from(e), &frames) {
                Ok(t) => Some(t),
                Err(e) => return from_error(e),
            }
        };
        *out = Box::into_raw(Box::new(MttFrameSet { frames, emb }));
        MttStatus::Ok
    })
}

/// Appends a detection; its id is written to `det_id` when not null.
///
/// # Safety
/// `fs` must come from this library; `det_id` may be null.
#[no_mangle]
pub unsafe extern "C" fn mtt_frameset_push(
    fs: *mut MttFrameSet,
    frame: u32,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    score: f64,
    det_id: *mut u32,
) -> MttStatus {
    guard(|| {
        let Some(fs) = fs.as_mut() else {
            return fail(MttStatus::NullPointer, "fs is null");
        };
        let bbox = BBox::new(x, y, w, h);
        if ![x, y, w, h, score].iter().all(|v| v.is_finite()) || !bbox.is_valid() {
            return fail(MttStatus::InvalidArgument, "box must be finite with w, h > 0");
        }
        if !(0.0..=1.0).contains(&score) {
            return fail(MttStatus::InvalidArgument, "score must lie in [0, 1]");
        }
        let id = fs.frames.next_det_id();
        if let Err(e) = fs.frames.push(Detection::new(id, frame, bbox, score)) {
            return from_error(e);
        }
        if let Some(out) = det_id.as_mut() {
            *out = id;
        }
        MttStatus::Ok
    })
}

/// Attaches an embedding of `len` values to detection `det_id`.
///
/// # Safety
/// `fs` must come from this library and `values` point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mtt_frameset_set_embedding(
    fs: *mut MttFrameSet,
    det_id: u32,
    values: *const f64,
    len: usize,
) -> MttStatus {
    guard(|| {
        let Some(fs) = fs.as_mut() else {
            return fail(MttStatus::NullPointer, "fs is null");
        };
        if values.is_null() {
            return fail(MttStatus::NullPointer, "values is null");
        }
        if !fs.frames.iter().any(|d| d.det_id == DetId(det_id)) {
            return fail(MttStatus::OutOfRange, format!("no detection {det_id}"));
        }
        let v = std::slice::from_raw_parts(values, len).to_vec();
        let table = fs.emb.get_or_insert_with(|| EmbeddingTable::new(0));
        match table.insert(DetId(det_id), v) {
            Ok(()) => MttStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}

/// Number of detections in the set.
///
/// # Safety
/// `fs` must come from this library or be null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn mtt_frameset_len(fs: *const MttFrameSet) -> usize {
    fs.as_ref().map_or(0, |f| f.frames.n_detections())
}

/// # Safety
/// `fs` must come from this library (or be null) and not be used again.
#[no_mangle]
pub unsafe extern "C" fn mtt_frameset_free(fs: *mut MttFrameSet) {
    if !fs.is_null() {
        drop(Box::from_raw(fs));
    }
}

/// Runs the tracker. `mode` is `adaptive`, `fixed:L` or `sliding:L`; null
/// means adaptive.
///
/// # Safety
/// Handles must come from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mtt_track(
    cfg: *const MttConfig,
    fs: *const MttFrameSet,
    mode: *const c_char,
    out: *mut *mut MttTracks,
) -> MttStatus {
    guard(|| {
        let (Some(cfg), Some(fs)) = (cfg.as_ref(), fs.as_ref()) else {
            return fail(MttStatus::NullPointer, "cfg or fs is null");
        };
        if out.is_null() {
            return fail(MttStatus::NullPointer, "out is null");
        }
        let mode = if mode.is_null() {
            PartitionMode::Adaptive
        } else {
            let m = try_status!(str_arg(mode, "mode"));
            match m.parse() {
                Ok(m) => m,
                Err(e) => return from_error(e),
            }
        };
        match mtt::run(&fs.frames, fs.emb.as_ref(), &cfg.inner, mode, &RunOptions::default()) {
            Ok(r) => {
                let mut rows: Vec<MttTrackRow> = r
                    .tracks
                    .iter()
                    .flat_map(|t| {
                        t.boxes.iter().map(move |b| MttTrackRow {
                            frame: b.frame,
                            track_id: t.track_id,
                            x: b.bbox.x,
                            y: b.bbox.y,
                            w: b.bbox.w,
                            h: b.bbox.h,
                            score: b.score,
                            interpolated: b.interpolated as u8,
                        })
                    })
                    .collect();
                rows.sort_by_key(|r| (r.frame, r.track_id));
                *out = Box::into_raw(Box::new(MttTracks { tracks: r.tracks, rows }));
                MttStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Number of tracks.
///
/// # Safety
/// `t` must come from this library or be null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn mtt_tracks_count(t: *const MttTracks) -> usize {
    t.as_ref().map_or(0, |t| t.tracks.len())
}

/// Number of output rows (boxes), ordered by frame then track id.
///
/// # Safety
/// `t` must come from this library or be null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn mtt_tracks_len(t: *const MttTracks) -> usize {
    t.as_ref().map_or(0, |t| t.rows.len())
}

/// Copies row `index` into `row`.
///
/// # Safety
/// `t` must come from this library; `row` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mtt_tracks_row(t: *const MttTracks, index: usize, row: *mut MttTrackRow) -> MttStatus {
    guard(|| {
        let (Some(t), Some(row)) = (t.as_ref(), row.as_mut()) else {
            return fail(MttStatus::NullPointer, "tracks or row is null");
        };
        match t.rows.get(index) {
            Some(r) => {
                *row = *r;
                MttStatus::Ok
            }
            None => fail(MttStatus::OutOfRange, format!("row {index} of {}", t.rows.len())),
        }
    })
}

/// Writes the tracks in MOT format.
///
/// # Safety
/// `t` must come from this library; `path` must be a C string.
#[no_mangle]
pub unsafe extern "C" fn mtt_tracks_write(t: *const MttTracks, path: *const c_char) -> MttStatus {
    guard(|| {
        let Some(t) = t.as_ref() else {
            return fail(MttStatus::NullPointer, "tracks is null");
        };
        let p = try_status!(str_arg(path, "path"));
        match write_tracks(&t.tracks, &PathBuf::from(p)) {
            Ok(()) => MttStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `t` must come from this library (or be null) and not be used again.
#[no_mangle]
pub unsafe extern "C" fn mtt_tracks_free(t: *mut MttTracks) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Evaluates a MOT track file against a MOT ground-truth file.
///
/// # Safety
/// Paths must be C strings; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mtt_evaluate_files(
    gt_path: *const c_char,
    tracks_path: *const c_char,
    iou_min: f64,
    out: *mut MttReport,
) -> MttStatus {
    guard(|| {
        let Some(out) = out.as_mut() else {
            return fail(MttStatus::NullPointer, "out is null");
        };
        if !(0.0..=1.0).contains(&iou_min) {
            return fail(MttStatus::InvalidArgument, "iou_min must lie in [0, 1]");
        }
        let g = try_status!(str_arg(gt_path, "gt_path"));
        let t = try_status!(str_arg(tracks_path, "tracks_path"));
        let rows = |p: &str| parse_mot_rows(&PathBuf::from(p));
        let (gt, pred) = match (rows(g), rows(t)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => return from_error(e),
        };
        let r = mtt::clear_mot(&gt, &pred, iou_min);
        *out = MttReport {
            mota: r.mota,
            idf1: r.idf1,
            idp: r.idp,
            idr: r.idr,
            recall: r.recall,
            precision: r.precision,
            fp: r.fp as u64,
            fn_count: r.fn_ as u64,
            ids: r.ids as u64,
            mt: r.mt as u64,
            pt: r.pt as u64,
            ml: r.ml as u64,
            gt_count: r.gt_count as u64,
        };
        MttStatus::Ok
    })
}
