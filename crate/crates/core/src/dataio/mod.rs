//! File formats, synthetic sequences and training-sample augmentation.

mod augment;
mod embeddings;
mod mot;
mod sequence;
mod synth;

pub use augment::{augment, clip_windows, crop_tracklets, AugmentConfig, TrainingSample};
pub use embeddings::{attach_embeddings, parse_embeddings, read_embeddings, write_embeddings, EmbeddingTable};
pub use mot::{
    format_detections, format_ground_truth, format_tracks, parse_detections, parse_ground_truth, parse_tracks,
    read_detections, read_ground_truth, read_seqinfo, read_tracks, write_detections, write_ground_truth,
    write_seqinfo, write_tracks, SeqInfo,
};
pub use sequence::{
    embed_tracklets, read_sequence, write_sequence, DETECTIONS_FILE, EMBEDDINGS_FILE, GROUND_TRUTH_FILE, SEQINFO_FILE,
};
pub use synth::{generate, SynthConfig};

use std::path::Path;

use crate::{Error, Result};

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Canonical number rendering: shortest round-trip decimal, no exponent,
/// no trailing zeros.
pub(crate) fn num(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v}")
    }
}
