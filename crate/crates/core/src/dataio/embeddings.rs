//! Appearance embedding files: a header `frame,det_index,f0,...,f{D-1}`
//! followed by one row per detection.

use std::collections::BTreeMap;
use std::path::Path;

use super::{num, read_text, write_text};
use crate::types::{Detection, Frame};
use crate::{Error, Result};

pub type EmbeddingTable = BTreeMap<(Frame, usize), Vec<f64>>;

pub fn parse_embeddings(text: &str, path: &str) -> Result<(usize, EmbeddingTable)> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_string(),
        line,
        message,
    };
    let mut rows = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = rows.next().ok_or_else(|| err(1, "missing header".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 3 || cols[0] != "frame" || cols[1] != "det_index" {
        return Err(err(1, format!("bad header {header:?}")));
    }
    for (k, c) in cols[2..].iter().enumerate() {
        if *c != format!("f{k}") {
            return Err(err(1, format!("header column {} should be f{k}, found {c:?}", k + 3)));
        }
    }
    let dim = cols.len() - 2;
    let mut table = EmbeddingTable::new();
    for (i, l) in rows {
        let line = i + 1;
        let parts: Vec<&str> = l.split(',').map(str::trim).collect();
        if parts.len() != dim + 2 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: parts.len().saturating_sub(2),
                context: format!("{path}:{line}"),
            });
        }
        let frame: Frame = parts[0]
            .parse()
            .map_err(|_| err(line, format!("bad frame {:?}", parts[0])))?;
        let idx: usize = parts[1]
            .parse()
            .map_err(|_| err(line, format!("bad det_index {:?}", parts[1])))?;
        let v = parts[2..]
            .iter()
            .map(|p| p.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| err(line, "non-numeric embedding value".into()))?;
        table.insert((frame, idx), v);
    }
    Ok((dim, table))
}

pub fn read_embeddings(path: &Path) -> Result<(usize, EmbeddingTable)> {
    parse_embeddings(&read_text(path)?, &path.display().to_string())
}

/// Emits the embeddings of every detection that carries one, sorted by
/// `(frame, det_index)`.
pub fn write_embeddings(path: &Path, dets: &[Detection]) -> Result<()> {
    write_text(path, &format_embeddings(dets)?)
}

pub(crate) fn format_embeddings(dets: &[Detection]) -> Result<String> {
    let mut rows: Vec<&Detection> = dets.iter().filter(|d| d.embedding.is_some()).collect();
    rows.sort_by_key(|d| (d.frame, d.det_index));
    let dim = rows.first().map_or(0, |d| d.embedding.as_ref().map_or(0, Vec::len));
    let mut s = String::from("frame,det_index");
    for k in 0..dim {
        s.push_str(&format!(",f{k}"));
    }
    s.push('\n');
    for d in rows {
        let e = d.embedding.as_ref().expect("filtered");
        if e.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: e.len(),
                context: format!("embedding of frame {} index {}", d.frame, d.det_index),
            });
        }
        s.push_str(&format!("{},{}", d.frame, d.det_index));
        for v in e {
            s.push(',');
            s.push_str(&num(*v));
        }
        s.push('\n');
    }
    Ok(s)
}

/// Joins embeddings onto detections by `(frame, det_index)`; detections
/// without a row keep no embedding. Returns how many were attached.
pub fn attach_embeddings<'a>(dets: impl IntoIterator<Item = &'a mut Detection>, table: &EmbeddingTable) -> usize {
    let mut n = 0;
    for d in dets {
        if let Some(e) = table.get(&(d.frame, d.det_index)) {
            d.embedding = Some(e.clone());
            n += 1;
        }
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::BBox;

    fn header(dim: usize) -> String {
        let mut s = "frame,det_index".to_string();
        for k in 0..dim {
            s.push_str(&format!(",f{k}"));
        }
        s
    }

    #[test]
    fn row_attaches_to_detection() {
        let text = format!("{}\n1,0{}\n", header(16), ",0.25".repeat(16));
        let (dim, table) = parse_embeddings(&text, "e").unwrap();
        assert_eq!(dim, 16);
        let mut dets = vec![
            Detection::new(1, BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(), 1.0, 0),
            Detection::new(1, BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(), 1.0, 1),
        ];
        assert_eq!(attach_embeddings(dets.iter_mut(), &table), 1);
        assert_eq!(dets[0].embedding.as_deref(), Some(&[0.25; 16][..]));
        assert!(dets[1].embedding.is_none());
    }

    #[test]
    fn short_row_is_rejected() {
        let text = format!("{}\n1,0{}\n", header(16), ",0.25".repeat(15));
        assert!(matches!(
            parse_embeddings(&text, "e"),
            Err(Error::DimensionMismatch { expected: 16, got: 15, .. })
        ));
    }

    #[test]
    fn canonical_round_trip() {
        let text = format!("{}\n1,0,0.5,-1,0\n2,3,0.125,2,1e-7\n", header(3));
        let text = text.replace("1e-7", &num(1e-7));
        let (_, table) = parse_embeddings(&text, "e").unwrap();
        let dets: Vec<Detection> = table
            .iter()
            .map(|(&(f, i), e)| Detection::new(f, BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(), 1.0, i).with_embedding(e.clone()))
            .collect();
        assert_eq!(format_embeddings(&dets).unwrap(), text);
    }
}
