//! Sequence directories: `seqinfo.ini`, `det.txt`, and optionally `gt.txt`
//! and `emb.csv`.

use std::path::Path;

use super::embeddings::{attach_embeddings, read_embeddings, write_embeddings, EmbeddingTable};
use super::mot::{read_detections, read_ground_truth, read_seqinfo, write_detections, write_ground_truth, write_seqinfo, SeqInfo};
use crate::types::{validate_bundle, SequenceBundle, Tracklet};
use crate::{Error, Result};

pub const SEQINFO_FILE: &str = "seqinfo.ini";
pub const DETECTIONS_FILE: &str = "det.txt";
pub const GROUND_TRUTH_FILE: &str = "gt.txt";
pub const EMBEDDINGS_FILE: &str = "emb.csv";

pub fn read_sequence(dir: &Path) -> Result<SequenceBundle> {
    let info = read_seqinfo(&dir.join(SEQINFO_FILE))?;
    let mut dets = read_detections(&dir.join(DETECTIONS_FILE))?;
    let emb = dir.join(EMBEDDINGS_FILE);
    if emb.exists() {
        let (_, table) = read_embeddings(&emb)?;
        attach_embeddings(dets.iter_mut(), &table);
    }
    let mut bundle = SequenceBundle::from_detections(info.name, info.fps, info.frame_count, dets);
    let gt = dir.join(GROUND_TRUTH_FILE);
    if gt.exists() {
        bundle.ground_truth = Some(read_ground_truth(&gt)?);
    }
    let problems = validate_bundle(&bundle);
    if !problems.is_empty() {
        return Err(Error::Invalid(format!("{}: {}", dir.display(), problems.join("; "))));
    }
    Ok(bundle)
}

/// Writes every part of `bundle` that is present; `emb.csv` only when some
/// detection carries an embedding.
pub fn write_sequence(dir: &Path, bundle: &SequenceBundle, width: u32, height: u32) -> Result<()> {
    let info = SeqInfo {
        name: bundle.name.clone(),
        fps: bundle.fps,
        frame_count: bundle.frame_count,
        width,
        height,
    };
    write_seqinfo(&dir.join(SEQINFO_FILE), &info)?;
    let dets: Vec<_> = bundle.detections.iter().flatten().cloned().collect();
    write_detections(&dir.join(DETECTIONS_FILE), &dets)?;
    if bundle.embedding_dim().is_some() {
        write_embeddings(&dir.join(EMBEDDINGS_FILE), &dets)?;
    }
    if let Some(gt) = &bundle.ground_truth {
        write_ground_truth(&dir.join(GROUND_TRUTH_FILE), gt)?;
    }
    Ok(())
}

/// Joins embeddings onto tracklets read from a track file, by the
/// `(frame, det_index)` each row links back to.
pub fn embed_tracklets(tracklets: Vec<Tracklet>, table: &EmbeddingTable) -> Result<Vec<Tracklet>> {
    tracklets
        .into_iter()
        .map(|t| {
            let id = t.id();
            let mut dets = t.into_detections();
            attach_embeddings(dets.iter_mut(), table);
            Tracklet::new(id, dets)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate, SynthConfig};

    #[test]
    fn synthetic_sequence_round_trips() {
        let cfg = SynthConfig {
            frame_count: 40,
            num_identities: 3,
            ..Default::default()
        };
        let bundle = generate(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_sequence(dir.path(), &bundle, 1280, 720).unwrap();
        let back = read_sequence(dir.path()).unwrap();
        assert_eq!(back.detection_count(), bundle.detection_count());
        assert_eq!(back.ground_truth.as_ref().map(Vec::len), bundle.ground_truth.as_ref().map(Vec::len));
        for (a, b) in back.detections.iter().flatten().zip(bundle.detections.iter().flatten()) {
            assert_eq!(a.det_index, b.det_index);
            assert_eq!(a.embedding, b.embedding);
        }
    }

    #[test]
    fn missing_seqinfo_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let err = read_sequence(dir.path()).unwrap_err().to_string();
        assert!(err.contains(SEQINFO_FILE), "{err}");
    }
}
