//! MOTChallenge-style text files.
//!
//! Detections: `frame,-1,left,top,width,height,conf,-1,-1,-1`.
//! Ground truth: `frame,id,left,top,width,height,flag,class,visibility`.
//! Tracks (tracklets or trajectories): `frame,id,left,top,width,height,conf,det_index,-1,-1`,
//! where `det_index` links the row back to its source detection and is `-1`
//! for interpolated boxes.

use std::collections::BTreeMap;
use std::path::Path;

use super::{num, read_text, write_text};
use crate::types::{BBox, Detection, Frame, GtRecord, Tracklet};
use crate::{Error, Result};

struct Fields<'a> {
    path: &'a str,
    line: usize,
    parts: Vec<&'a str>,
}

impl<'a> Fields<'a> {
    fn split(path: &'a str, line: usize, text: &'a str, arity: &[usize]) -> Result<Self> {
        let parts: Vec<&str> = text.split(',').map(str::trim).collect();
        if !arity.contains(&parts.len()) {
            return Err(Error::Parse {
                path: path.to_string(),
                line,
                message: format!("expected {arity:?} fields, found {}", parts.len()),
            });
        }
        Ok(Fields { path, line, parts })
    }

    fn err(&self, message: String) -> Error {
        Error::Parse {
            path: self.path.to_string(),
            line: self.line,
            message,
        }
    }

    fn real(&self, i: usize) -> Result<f64> {
        let v: f64 = self.parts[i]
            .parse()
            .map_err(|_| self.err(format!("field {} is not a number: {:?}", i + 1, self.parts[i])))?;
        if !v.is_finite() {
            return Err(self.err(format!("field {} is not finite", i + 1)));
        }
        Ok(v)
    }

    fn int(&self, i: usize) -> Result<i64> {
        let v = self.real(i)?;
        if v.fract() != 0.0 {
            return Err(self.err(format!("field {} is not an integer: {:?}", i + 1, self.parts[i])));
        }
        Ok(v as i64)
    }

    fn frame(&self) -> Result<Frame> {
        let f = self.int(0)?;
        u32::try_from(f).map_err(|_| self.err(format!("invalid frame {f}")))
    }

    fn bbox(&self) -> Result<BBox> {
        let (x, y, w, h) = (self.real(2)?, self.real(3)?, self.real(4)?, self.real(5)?);
        BBox::new(x, y, w, h).map_err(|e| self.err(e.to_string()))
    }
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Parses a detection file. `det_index` is the row's position within its
/// frame, in file order.
pub fn parse_detections(text: &str, path: &str) -> Result<Vec<Detection>> {
    let mut seen: BTreeMap<Frame, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for (line, l) in lines(text) {
        let f = Fields::split(path, line, l, &[7, 10])?;
        let frame = f.frame()?;
        let conf = f.real(6)?;
        let idx = seen.entry(frame).or_default();
        out.push(Detection::new(frame, f.bbox()?, conf, *idx));
        *idx += 1;
    }
    Ok(out)
}

/// Writes detections sorted by `(frame, det_index)`.
pub fn format_detections(dets: &[Detection]) -> String {
    let mut sorted: Vec<&Detection> = dets.iter().collect();
    sorted.sort_by_key(|d| (d.frame, d.det_index));
    let mut s = String::new();
    for d in sorted {
        let b = d.bbox;
        s.push_str(&format!(
            "{},-1,{},{},{},{},{},-1,-1,-1\n",
            d.frame,
            num(b.x),
            num(b.y),
            num(b.w),
            num(b.h),
            num(d.confidence)
        ));
    }
    s
}

pub fn parse_ground_truth(text: &str, path: &str) -> Result<Vec<GtRecord>> {
    let mut out = Vec::new();
    for (line, l) in lines(text) {
        let f = Fields::split(path, line, l, &[9, 10])?;
        let id = f.int(1)?;
        out.push(GtRecord {
            frame: f.frame()?,
            id: u32::try_from(id).map_err(|_| f.err(format!("invalid identity {id}")))?,
            bbox: f.bbox()?,
            flag: f.int(6)?,
            class: f.int(7)?,
            visibility: f.real(8)?,
        });
    }
    Ok(out)
}

/// Writes ground truth sorted by `(frame, id)`.
pub fn format_ground_truth(gt: &[GtRecord]) -> String {
    let mut sorted: Vec<&GtRecord> = gt.iter().collect();
    sorted.sort_by_key(|r| (r.frame, r.id));
    let mut s = String::new();
    for r in sorted {
        let b = r.bbox;
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.frame,
            r.id,
            num(b.x),
            num(b.y),
            num(b.w),
            num(b.h),
            r.flag,
            r.class,
            num(r.visibility)
        ));
    }
    s
}

/// Parses a track file into tracklets, one per id, in ascending id order.
/// Rows without a source index (`-1`) get `usize::MAX` as `det_index`.
pub fn parse_tracks(text: &str, path: &str) -> Result<Vec<Tracklet>> {
    let mut by_id: BTreeMap<i64, Vec<Detection>> = BTreeMap::new();
    for (line, l) in lines(text) {
        let f = Fields::split(path, line, l, &[10])?;
        let id = f.int(1)?;
        if id < 0 {
            return Err(f.err(format!("track rows need a non-negative id, got {id}")));
        }
        let src = f.int(7)?;
        let det_index = if src >= 0 { src as usize } else { usize::MAX };
        by_id
            .entry(id)
            .or_default()
            .push(Detection::new(f.frame()?, f.bbox()?, f.real(6)?, det_index));
    }
    by_id
        .into_iter()
        .map(|(id, mut dets)| {
            dets.sort_by_key(|d| d.frame);
            Tracklet::new(id as usize, dets).map_err(|e| Error::Parse {
                path: path.to_string(),
                line: 0,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Writes tracks sorted by `(frame, id)`.
pub fn format_tracks(tracks: &[Tracklet]) -> String {
    let mut rows: Vec<(Frame, usize, &Detection)> = tracks
        .iter()
        .flat_map(|t| t.detections().iter().map(move |d| (d.frame, t.id(), d)))
        .collect();
    rows.sort_by_key(|r| (r.0, r.1));
    let mut s = String::new();
    for (frame, id, d) in rows {
        let b = d.bbox;
        let src = if d.det_index == usize::MAX {
            "-1".to_string()
        } else {
            d.det_index.to_string()
        };
        s.push_str(&format!(
            "{frame},{id},{},{},{},{},{},{src},-1,-1\n",
            num(b.x),
            num(b.y),
            num(b.w),
            num(b.h),
            num(d.confidence)
        ));
    }
    s
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    parse_detections(&read_text(path)?, &path.display().to_string())
}

pub fn write_detections(path: &Path, dets: &[Detection]) -> Result<()> {
    write_text(path, &format_detections(dets))
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GtRecord>> {
    parse_ground_truth(&read_text(path)?, &path.display().to_string())
}

pub fn write_ground_truth(path: &Path, gt: &[GtRecord]) -> Result<()> {
    write_text(path, &format_ground_truth(gt))
}

pub fn read_tracks(path: &Path) -> Result<Vec<Tracklet>> {
    parse_tracks(&read_text(path)?, &path.display().to_string())
}

pub fn write_tracks(path: &Path, tracks: &[Tracklet]) -> Result<()> {
    write_text(path, &format_tracks(tracks))
}

/// The `[Sequence]` section of a MOTChallenge `seqinfo.ini`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqInfo {
    pub name: String,
    pub fps: f64,
    pub frame_count: Frame,
    pub width: u32,
    pub height: u32,
}

pub fn read_seqinfo(path: &Path) -> Result<SeqInfo> {
    let text = read_text(path)?;
    let p = path.display().to_string();
    let mut info = SeqInfo {
        name: String::new(),
        fps: 0.0,
        frame_count: 0,
        width: 0,
        height: 0,
    };
    for (line, l) in lines(&text) {
        if l.starts_with('[') || l.starts_with(';') {
            continue;
        }
        let Some((k, v)) = l.split_once('=') else {
            return Err(Error::Parse {
                path: p,
                line,
                message: format!("expected key=value, found {l:?}"),
            });
        };
        let bad = |what: &str| Error::Parse {
            path: p.clone(),
            line,
            message: format!("invalid {what}: {v:?}"),
        };
        let v = v.trim();
        match k.trim() {
            "name" => info.name = v.to_string(),
            "frameRate" => info.fps = v.parse().map_err(|_| bad("frameRate"))?,
            "seqLength" => info.frame_count = v.parse().map_err(|_| bad("seqLength"))?,
            "imWidth" => info.width = v.parse().map_err(|_| bad("imWidth"))?,
            "imHeight" => info.height = v.parse().map_err(|_| bad("imHeight"))?,
            _ => {}
        }
    }
    if info.fps <= 0.0 || info.frame_count == 0 {
        return Err(Error::Parse {
            path: p,
            line: 0,
            message: "seqinfo needs positive frameRate and seqLength".into(),
        });
    }
    Ok(info)
}

pub fn write_seqinfo(path: &Path, info: &SeqInfo) -> Result<()> {
    write_text(
        path,
        &format!(
            "[Sequence]\nname={}\nframeRate={}\nseqLength={}\nimWidth={}\nimHeight={}\n",
            info.name,
            num(info.fps),
            info.frame_count,
            info.width,
            info.height
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detection_line_maps_fields() {
        let d = parse_detections("1,-1,10,20,30,40,0.9,-1,-1,-1\n", "det.txt").unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].frame, 1);
        assert_eq!(d[0].bbox, BBox::new(10.0, 20.0, 30.0, 40.0).unwrap());
        assert_eq!(d[0].confidence, 0.9);
        assert_eq!(d[0].det_index, 0);
    }

    #[test]
    fn canonical_files_round_trip() {
        let det = "1,-1,10,20,30,40,0.9,-1,-1,-1\n1,-1,1.5,2.25,3,4,0.125,-1,-1,-1\n3,-1,0,0,1,1,1,-1,-1,-1\n";
        assert_eq!(format_detections(&parse_detections(det, "d").unwrap()), det);
        let gt = "1,1,10,20,30,40,1,1,1\n1,2,5.5,6,7,8,1,1,0.5\n2,1,11,20,30,40,0,1,0\n";
        assert_eq!(format_ground_truth(&parse_ground_truth(gt, "g").unwrap()), gt);
        let tr = "1,1,10,20,30,40,0.9,0,-1,-1\n1,2,50,20,30,40,0.8,1,-1,-1\n2,1,11,20,30,40,0.9,-1,-1,-1\n";
        assert_eq!(format_tracks(&parse_tracks(tr, "t").unwrap()), tr);
    }

    #[test]
    fn lenient_input_is_reemitted_canonically() {
        let d = parse_detections("1, -1, 10.50, 20.0, 30, 40, 0.90, -1, -1, -1", "d").unwrap();
        assert_eq!(format_detections(&d), "1,-1,10.5,20,30,40,0.9,-1,-1,-1\n");
    }

    #[test]
    fn malformed_lines_name_their_line() {
        let err = parse_detections("1,-1,10,20,30,40,0.9,-1,-1,-1\n2,-1,10,20,30,40\n", "det.txt").unwrap_err();
        assert!(err.to_string().starts_with("det.txt:2:"), "{err}");
        let err = parse_detections("1,-1,x,20,30,40,0.9,-1,-1,-1\n", "det.txt").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse_ground_truth("1,1,0,0,-3,4,1,1,1\n", "gt.txt").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn duplicate_frames_in_a_track_are_rejected() {
        let tr = "1,1,10,20,30,40,0.9,0,-1,-1\n1,1,11,20,30,40,0.9,1,-1,-1\n";
        assert!(parse_tracks(tr, "t").is_err());
    }
}
