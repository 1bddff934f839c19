//! Splitting the frame sequence into subsequences.
//!
//! The adaptive mode follows the detection-count curve: a new subsequence
//! starts whenever the (median-filtered) count leaves the running band
//! `[max - d, min + d]` of the current one, and every band segment is then
//! cut so that no piece is longer than `l_max` frames or holds more than
//! `u` detections. Fixed and sliding windows are kept for comparison.

use serde::Serialize;

use crate::config::Config;
use crate::error::{MttError, Result};
use crate::model::Frame;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountCurve {
    pub raw: Vec<u32>,
    pub filtered: Vec<u32>,
}

impl CountCurve {
    pub fn new(raw: Vec<u32>, w_median: usize) -> Result<Self> {
        let filtered = median_filter(&raw, w_median)?;
        Ok(CountCurve { raw, filtered })
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }
}

/// An inclusive frame range `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Subsequence {
    pub start: Frame,
    pub end: Frame,
    pub detection_total: u32,
}

impl Subsequence {
    pub fn len(&self) -> usize {
        (self.end - self.start + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, t: Frame) -> bool {
        self.start <= t && t <= self.end
    }
}

/// Sliding median with replicated edges. `w` must be odd.
pub fn median_filter(raw: &[u32], w: usize) -> Result<Vec<u32>> {
    if w == 0 || w.is_multiple_of(2) {
        return Err(MttError::Config(format!(
            "median window must be odd and >= 1, got {w}"
        )));
    }
    let n = raw.len();
    if n == 0 || w == 1 {
        return Ok(raw.to_vec());
    }
    let half = (w / 2) as isize;
    let mut window = Vec::with_capacity(w);
    Ok((0..n as isize)
        .map(|i| {
            window.clear();
            window.extend(
                (i - half..=i + half).map(|j| raw[j.clamp(0, n as isize - 1) as usize]),
            );
            window.sort_unstable();
            window[w / 2]
        })
        .collect())
}

/// `|M_t - M_{t+delta}| / delta` on 1-based frame `t`.
pub fn gradient(filtered: &[u32], t: usize, delta: usize) -> Result<f64> {
    let n = filtered.len();
    if delta == 0 || t == 0 || t + delta > n {
        return Err(MttError::OutOfRange {
            index: t,
            max: n.saturating_sub(delta),
        });
    }
    let a = filtered[t - 1] as f64;
    let b = filtered[t - 1 + delta] as f64;
    Ok((a - b).abs() / delta as f64)
}

fn subsequence(counts: &[u32], start: usize, end: usize) -> Subsequence {
    Subsequence {
        start: start as Frame,
        end: end as Frame,
        detection_total: counts[start - 1..end].iter().sum(),
    }
}

/// Band split on the filtered curve, then the `l_max`/`u` cap.
pub fn partition_adaptive(curve: &CountCurve, cfg: &Config) -> Vec<Subsequence> {
    let m = &curve.filtered;
    let n = m.len();
    if n == 0 {
        return Vec::new();
    }

    // Band segments as inclusive 1-based ranges.
    let mut bands = Vec::new();
    let mut seg_start = 1usize;
    let (mut lo, mut hi) = (m[0], m[0]);
    for t in 2..=n {
        let c = m[t - 1] as f64;
        let joins = c - (lo as f64) < cfg.d && (hi as f64) - c < cfg.d;
        if joins {
            lo = lo.min(m[t - 1]);
            hi = hi.max(m[t - 1]);
        } else {
            bands.push((seg_start, t - 1));
            seg_start = t;
            lo = m[t - 1];
            hi = m[t - 1];
        }
    }
    bands.push((seg_start, n));

    let l_max = cfg.l_max.max(1);
    let mut out = Vec::new();
    for (a, b) in bands {
        let mut s = a;
        while s <= b {
            // Longest prefix with length <= l_max and total <= u, at least
            // one frame.
            let mut e = s;
            let mut total = m[s - 1];
            while e < b && e + 1 - s < l_max {
                let next = total + m[e];
                if next > cfg.u {
                    break;
                }
                total = next;
                e += 1;
            }
            out.push(subsequence(m, s, e));
            s = e + 1;
        }
    }
    out
}

/// Fixed windows of length `l` moved by `stride`. `stride == l` tiles the
/// sequence (last window may be short); `stride < l` gives the
/// `N - L + 1` sliding windows for unit stride.
pub fn partition_fixed(n: usize, l: usize, stride: usize, counts: &[u32]) -> Result<Vec<Subsequence>> {
    if l == 0 || stride == 0 {
        return Err(MttError::Config("window length and stride must be >= 1".into()));
    }
    if stride > l {
        return Err(MttError::Config(format!(
            "stride {stride} exceeds window length {l}"
        )));
    }
    if counts.len() < n {
        return Err(MttError::Config(format!(
            "count curve has {} frames, expected {n}",
            counts.len()
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    if stride == l {
        let mut s = 1;
        while s <= n {
            let e = (s + l - 1).min(n);
            out.push(subsequence(counts, s, e));
            s = e + 1;
        }
    } else if n <= l {
        out.push(subsequence(counts, 1, n));
    } else {
        let mut s = 1;
        loop {
            let e = s + l - 1;
            out.push(subsequence(counts, s, e));
            if e == n {
                break;
            }
            // Last window is aligned to the end when the stride overshoots.
            s = (s + stride).min(n + 1 - l);
        }
    }
    Ok(out)
}
