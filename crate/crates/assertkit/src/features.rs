//! Feature archives: one binary file per utterance.
//!
//! Layout (little-endian): magic `AKFT`, u16 version, u8 kind
//! (0 logspec, 1 cqcc), u8 reserved, u32 frames, u32 dim, f64 frame hop in
//! seconds, then frames x dim f32 values row by row.

use std::fs;
use std::path::{Path, PathBuf};

use assertkit_core::audio::TrialEntry;
use assertkit_core::dsp::{cqcc, logspec, CqccConfig, FeatureKind, FeatureMatrix, StftConfig};
use rayon::prelude::*;

use crate::corpus::wav_path;
use crate::error::{format_err, io_err, Result};
use crate::pool::worker_pool;
use crate::wav::read_wav;

const MAGIC: &[u8; 4] = b"AKFT";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 24;

pub fn feature_path(dir: &Path, utt_id: &str) -> PathBuf {
    dir.join(format!("{utt_id}.akft"))
}

pub fn encode_features(feat: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + feat.data().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match feat.kind() {
        FeatureKind::Logspec => 0,
        FeatureKind::Cqcc => 1,
    });
    out.push(0);
    out.extend_from_slice(&(feat.frames() as u32).to_le_bytes());
    out.extend_from_slice(&(feat.dim() as u32).to_le_bytes());
    out.extend_from_slice(&feat.frame_hop().to_le_bytes());
    for v in feat.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_features(path: &Path, bytes: &[u8]) -> Result<FeatureMatrix> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(format_err(path, "not a feature archive"));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(format_err(path, format!("unsupported archive version {version}")));
    }
    let kind = match bytes[6] {
        0 => FeatureKind::Logspec,
        1 => FeatureKind::Cqcc,
        k => return Err(format_err(path, format!("unknown feature kind {k}"))),
    };
    let (frames, dim) = (u32_at(8), u32_at(12));
    let hop = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let body = &bytes[HEADER_LEN..];
    if body.len() != frames * dim * 4 {
        return Err(format_err(path, format!("expected {frames} x {dim} values, found {} bytes", body.len())));
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(FeatureMatrix::new(data, frames, dim, kind, hop)?)
}

pub fn write_features(path: &Path, feat: &FeatureMatrix) -> Result<()> {
    fs::write(path, encode_features(feat)).map_err(io_err(path))
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_features(path, &bytes)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FrontEnd {
    Logspec(StftConfig),
    Cqcc(CqccConfig),
}

impl FrontEnd {
    pub fn default_for(kind: FeatureKind) -> Self {
        match kind {
            FeatureKind::Logspec => FrontEnd::Logspec(StftConfig::default()),
            FeatureKind::Cqcc => FrontEnd::Cqcc(CqccConfig::default()),
        }
    }

    pub fn extract(&self, clip: &assertkit_core::audio::AudioClip) -> assertkit_core::Result<FeatureMatrix> {
        match self {
            FrontEnd::Logspec(cfg) => logspec(clip, cfg),
            FrontEnd::Cqcc(cfg) => cqcc(clip, cfg),
        }
    }
}

/// Extracts features for every protocol entry from `wav_dir` into
/// `out_dir`, one archive per utterance.
pub fn extract_all(entries: &[TrialEntry], wav_dir: &Path, front: &FrontEnd, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    worker_pool().install(|| {
        entries.par_iter().try_for_each(|e| {
            let clip = read_wav(&wav_path(wav_dir, &e.utt_id))?;
            write_features(&feature_path(out_dir, &e.utt_id), &front.extract(&clip)?)
        })
    })
}

/// Loads the archives of `entries` in protocol order.
pub fn load_all(entries: &[TrialEntry], dir: &Path) -> Result<Vec<FeatureMatrix>> {
    worker_pool().install(|| entries.par_iter().map(|e| read_features(&feature_path(dir, &e.utt_id))).collect())
}
