//! MOT-style CSV readers and writers.
//!
//! * detections: `frame,track_id,x,y,w,h,score[,...]`, `track_id = -1`
//! * embeddings: `det_id,v1,...,vD`
//! * tracks: `frame,track_id,x,y,w,h,score,-1,-1,-1`
//! * ground truth: `frame,id,x,y,w,h,1,1,1`

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{MttError, Result};
use crate::model::{BBox, DetId, Detection, EmbeddingTable, FinalTrack, Frame, FrameSet};

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| MttError::io(path, e))
}

fn fields(line: &str) -> Vec<&str> {
    line.split(',').map(str::trim).collect()
}

fn num<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T> {
    s.parse::<T>()
        .map_err(|_| MttError::parse(line, format!("cannot parse {what} `{s}`")))
}

/// One parsed row of any MOT-format file.
#[derive(Debug, Clone, PartialEq)]
pub struct MotRow {
    pub frame: Frame,
    pub id: i64,
    pub bbox: BBox,
    pub score: f64,
}

fn parse_mot_row(line: &str, lineno: usize) -> Result<MotRow> {
    let f = fields(line);
    if f.len() < 6 {
        return Err(MttError::parse(
            lineno,
            format!("expected at least 6 columns, found {}", f.len()),
        ));
    }
    let frame: i64 = num(f[0], lineno, "frame")?;
    if frame < 1 {
        return Err(MttError::parse(lineno, format!("frame {frame} < 1")));
    }
    let id: i64 = num(f[1], lineno, "track id")?;
    let x: f64 = num(f[2], lineno, "x")?;
    let y: f64 = num(f[3], lineno, "y")?;
    let w: f64 = num(f[4], lineno, "w")?;
    let h: f64 = num(f[5], lineno, "h")?;
    if ![x, y, w, h].iter().all(|v| v.is_finite()) {
        return Err(MttError::parse(lineno, "non-finite box"));
    }
    if w <= 0.0 || h <= 0.0 {
        return Err(MttError::parse(lineno, "non-positive box"));
    }
    let score = match f.get(6) {
        Some(s) => num(s, lineno, "score")?,
        None => 1.0,
    };
    Ok(MotRow {
        frame: frame as Frame,
        id,
        bbox: BBox::new(x, y, w, h),
        score,
    })
}

/// Reads raw detections. Rows are grouped by frame (input order need not
/// be monotonic); det ids are assigned in file order starting at 0.
pub fn read_detections<R: Read>(reader: R) -> Result<FrameSet> {
    let mut fs = FrameSet::new();
    let mut next_id = 0u32;
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| MttError::parse(lineno, e.to_string()))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if fields(line).len() < 7 {
            return Err(MttError::parse(lineno, "expected 7 columns `frame,track_id,x,y,w,h,score`"));
        }
        let row = parse_mot_row(line, lineno)?;
        if !(0.0..=1.0).contains(&row.score) {
            return Err(MttError::parse(lineno, format!("score {} outside [0,1]", row.score)));
        }
        fs.push(Detection::new(next_id, row.frame, row.bbox, row.score))?;
        next_id += 1;
    }
    Ok(fs)
}

pub fn parse_detections(path: &Path) -> Result<FrameSet> {
    read_detections(open(path)?)
}

/// Reads a `det_id,v1,...,vD` sidecar. Vectors are L2-normalized; ids not
/// present in `expected` are skipped with a warning.
pub fn read_embeddings<R: Read>(reader: R, expected: &FrameSet) -> Result<EmbeddingTable> {
    let known: std::collections::HashSet<DetId> = expected.iter().map(|d| d.det_id).collect();
    let mut table = EmbeddingTable::new(0);
    let mut dim: Option<usize> = None;
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| MttError::parse(lineno, e.to_string()))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f = fields(line);
        if f.len() < 2 {
            return Err(MttError::parse(lineno, "expected `det_id,v1,...,vD`"));
        }
        let id = DetId(num(f[0], lineno, "det_id")?);
        let v: Vec<f64> = f[1..]
            .iter()
            .map(|s| num::<f64>(s, lineno, "embedding value"))
            .collect::<Result<_>>()?;
        match dim {
            None => dim = Some(v.len()),
            Some(d) if d != v.len() => {
                return Err(MttError::DimensionMismatch {
                    line: lineno,
                    expected: d,
                    found: v.len(),
                })
            }
            _ => {}
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(MttError::parse(lineno, "non-finite embedding value"));
        }
        if !known.contains(&id) {
            log::warn!("embedding line {lineno}: det_id {id} not in detection set, skipped");
            continue;
        }
        table
            .insert(id, v)
            .map_err(|e| MttError::parse(lineno, e.to_string()))?;
    }
    Ok(table)
}

pub fn parse_embeddings(path: &Path, expected: &FrameSet) -> Result<EmbeddingTable> {
    read_embeddings(open(path)?, expected)
}

/// Reads any MOT-format file (tracks or ground truth) as rows.
pub fn read_mot_rows<R: Read>(reader: R) -> Result<Vec<MotRow>> {
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| MttError::parse(lineno, e.to_string()))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        rows.push(parse_mot_row(line, lineno)?);
    }
    Ok(rows)
}

pub fn parse_mot_rows(path: &Path) -> Result<Vec<MotRow>> {
    read_mot_rows(open(path)?)
}

/// Writes tracks sorted by frame then track id. Float fields use the
/// shortest representation that round-trips exactly.
pub fn write_tracks_to<W: Write>(tracks: &[FinalTrack], out: W) -> std::io::Result<()> {
    let mut rows: Vec<(Frame, u32, &crate::model::TrackBox)> = tracks
        .iter()
        .flat_map(|t| t.boxes.iter().map(move |b| (b.frame, t.track_id, b)))
        .collect();
    rows.sort_by_key(|(f, id, _)| (*f, *id));
    let mut w = BufWriter::new(out);
    for (frame, id, b) in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},-1,-1,-1",
            frame, id, b.bbox.x, b.bbox.y, b.bbox.w, b.bbox.h, b.score
        )?;
    }
    w.flush()
}

pub fn write_tracks(tracks: &[FinalTrack], path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| MttError::io(path, e))?;
    write_tracks_to(tracks, f).map_err(|e| MttError::io(path, e))
}

pub fn write_detections_to<W: Write>(fs: &FrameSet, out: W) -> std::io::Result<()> {
    let mut dets: Vec<&Detection> = fs.iter().collect();
    dets.sort_by_key(|d| d.det_id);
    let mut w = BufWriter::new(out);
    for d in dets {
        writeln!(
            w,
            "{},-1,{},{},{},{},{},-1,-1,-1",
            d.frame, d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h, d.score
        )?;
    }
    w.flush()
}

pub fn write_detections(fs: &FrameSet, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| MttError::io(path, e))?;
    write_detections_to(fs, f).map_err(|e| MttError::io(path, e))
}

pub fn write_embeddings_to<W: Write>(table: &EmbeddingTable, out: W) -> std::io::Result<()> {
    let mut w = BufWriter::new(out);
    for id in table.ids() {
        let v = table.get(id).expect("id listed by table");
        write!(w, "{id}")?;
        for x in v {
            write!(w, ",{x}")?;
        }
        writeln!(w)?;
    }
    w.flush()
}

pub fn write_embeddings(table: &EmbeddingTable, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| MttError::io(path, e))?;
    write_embeddings_to(table, f).map_err(|e| MttError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_rows_by_frame() {
        let fs = read_detections("1,-1,0,0,10,10,0.9\n1,-1,20,0,10,10,0.8\n2,-1,0,0,10,10,0.7\n".as_bytes()).unwrap();
        assert_eq!(fs.counts(), vec![2, 1]);
        let ids: Vec<u32> = fs.iter().map(|d| d.det_id.0).collect();
        assert_eq!(ids, vec![0, 1, 2]);
    }

    #[test]
    fn empty_file_gives_empty_frameset() {
        let fs = read_detections("".as_bytes()).unwrap();
        assert_eq!(fs.n_frames(), 0);
    }

    #[test]
    fn rejects_non_positive_box_with_line_number() {
        let err = read_detections("1,-1,10,10,-5,20,0.9\n".as_bytes()).unwrap_err();
        assert_eq!(err.to_string(), "non-positive box at line 1");
    }

    #[test]
    fn malformed_row_names_line() {
        let err = read_detections("1,-1,0,0,10,10,0.9\n2,-1,abc,0,10,10,0.9\n".as_bytes()).unwrap_err();
        assert!(err.to_string().ends_with("at line 2"), "{err}");
    }

    #[test]
    fn non_monotonic_frames_are_regrouped() {
        let fs = read_detections("3,-1,0,0,1,1,0.5\n1,-1,0,0,1,1,0.5\n3,-1,5,5,1,1,0.5\n".as_bytes()).unwrap();
        assert_eq!(fs.counts(), vec![1, 0, 2]);
        assert_eq!(fs.frame(1)[0].det_id, DetId(1));
    }

    fn frameset(n: u32) -> FrameSet {
        FrameSet::from_detections(
            (0..n)
                .map(|i| Detection::new(i, 1, BBox::new(0.0, 0.0, 1.0, 1.0), 0.5))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn embeddings_normalize_on_load() {
        let t = read_embeddings("0,3,4\n".as_bytes(), &frameset(6)).unwrap();
        assert_eq!(t.dim(), 2);
        let v = t.get(DetId(0)).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-12 && (v[1] - 0.8).abs() < 1e-12);
        assert!(t.get(DetId(5)).is_none());
    }

    #[test]
    fn embedding_dimension_mismatch() {
        let err = read_embeddings("0,1,0\n1,1,0,0\n".as_bytes(), &frameset(2)).unwrap_err();
        assert!(matches!(err, MttError::DimensionMismatch { line: 2, expected: 2, found: 3 }));
    }

    #[test]
    fn embedding_non_finite_rejected() {
        assert!(read_embeddings("0,NaN,1\n".as_bytes(), &frameset(1)).is_err());
        assert!(read_embeddings("0,inf,1\n".as_bytes(), &frameset(1)).is_err());
    }

    fn track(id: u32, frames: &[u32]) -> FinalTrack {
        FinalTrack {
            track_id: id,
            boxes: frames
                .iter()
                .map(|&f| crate::model::TrackBox {
                    frame: f,
                    bbox: BBox::new(f as f64, 2.5, 10.0, 20.0),
                    score: 0.75,
                    interpolated: false,
                })
                .collect(),
            source: vec![],
        }
    }

    fn render(tracks: &[FinalTrack]) -> String {
        let mut buf = Vec::new();
        write_tracks_to(tracks, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn writes_rows_in_frame_order() {
        let s = render(&[track(1, &[3, 1, 2])]);
        let frames: Vec<&str> = s.lines().map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(frames, vec!["1", "2", "3"]);
        assert!(s.lines().all(|l| l.ends_with(",-1,-1,-1")));
    }

    #[test]
    fn zero_tracks_write_empty_output() {
        assert_eq!(render(&[]), "");
    }

    #[test]
    fn same_frame_rows_ordered_by_track_id() {
        let s = render(&[track(7, &[1]), track(2, &[1])]);
        let ids: Vec<&str> = s.lines().map(|l| l.split(',').nth(1).unwrap()).collect();
        assert_eq!(ids, vec!["2", "7"]);
    }

    #[test]
    fn write_to_unwritable_path_is_io_error() {
        let err = write_tracks(&[], Path::new("/nonexistent-dir/x/tracks.txt")).unwrap_err();
        assert!(matches!(err, MttError::Io { .. }));
    }
}
