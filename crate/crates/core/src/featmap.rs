//! Network input preparation: unified feature maps and padded batches.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::dsp::{FeatureKind, FeatureMatrix};
use crate::{Error, Result};

/// Segment length `m` and overlap `l`, both in frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmenterConfig {
    pub m: usize,
    pub l: usize,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self { m: 400, l: 200 }
    }
}

impl SegmenterConfig {
    pub fn new(m: usize, l: usize) -> Result<Self> {
        let cfg = Self { m, l };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.l >= self.m {
            return Err(Error::InvalidConfig(format!(
                "need 0 <= L < M, got M={} L={}",
                self.m, self.l
            )));
        }
        if self.m % (self.m - self.l) != 0 {
            return Err(Error::InvalidConfig(format!(
                "segment step M-L={} must divide M={}",
                self.m - self.l,
                self.m
            )));
        }
        Ok(())
    }

    pub fn step(&self) -> usize {
        self.m - self.l
    }

    /// Length of the cyclically extended map, `ceil(T/M) * M`.
    pub fn extended_len(&self, frames: usize) -> usize {
        frames.div_ceil(self.m) * self.m
    }

    pub fn segment_count(&self, frames: usize) -> usize {
        (self.extended_len(frames) - self.m) / self.step() + 1
    }
}

/// The M x D segments of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSet {
    pub utt_id: String,
    pub m: usize,
    pub dim: usize,
    pub kind: FeatureKind,
    /// Each segment is `m * dim` values, row-major (frames x dims).
    pub segments: Vec<Vec<f32>>,
}

/// Tiles the utterance cyclically up to a multiple of `M` frames and cuts
/// segments of `M` frames every `M - L` frames.
pub fn unify_and_segment(
    utt_id: &str,
    feat: &FeatureMatrix,
    cfg: &SegmenterConfig,
) -> Result<SegmentSet> {
    cfg.validate()?;
    let t = feat.frames();
    let d = feat.dim();
    let e = cfg.extended_len(t);
    let mut segments = Vec::with_capacity(cfg.segment_count(t));
    let mut offset = 0;
    while offset + cfg.m <= e {
        let mut seg = Vec::with_capacity(cfg.m * d);
        for j in offset..offset + cfg.m {
            seg.extend_from_slice(feat.row(j % t));
        }
        segments.push(seg);
        offset += cfg.step();
    }
    Ok(SegmentSet {
        utt_id: utt_id.into(),
        m: cfg.m,
        dim: d,
        kind: feat.kind(),
        segments,
    })
}

/// Zero-padded batch `B x T_max x D` with the original lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedBatch {
    pub data: Vec<f32>,
    pub batch: usize,
    pub max_len: usize,
    pub dim: usize,
    pub valid_len: Vec<usize>,
}

impl PaddedBatch {
    pub fn frame(&self, b: usize, t: usize) -> &[f32] {
        let o = (b * self.max_len + t) * self.dim;
        &self.data[o..o + self.dim]
    }
}

pub fn pad_batch(feats: &[&FeatureMatrix]) -> Result<PaddedBatch> {
    pad_batch_to(feats, 0)
}

/// Like [`pad_batch`] but pads to at least `min_len` frames.
pub fn pad_batch_to(feats: &[&FeatureMatrix], min_len: usize) -> Result<PaddedBatch> {
    let first = feats.first().ok_or_else(|| Error::Empty("batch".into()))?;
    let dim = first.dim();
    if let Some(bad) = feats
        .iter()
        .find(|f| f.dim() != dim || f.kind() != first.kind())
    {
        return Err(Error::Shape(format!(
            "mixed features in batch: {} x {:?} vs {} x {:?}",
            dim,
            first.kind(),
            bad.dim(),
            bad.kind()
        )));
    }
    let max_len = feats
        .iter()
        .map(|f| f.frames())
        .max()
        .unwrap_or(0)
        .max(min_len);
    let mut data = vec![0.0f32; feats.len() * max_len * dim];
    for (b, f) in feats.iter().enumerate() {
        let o = b * max_len * dim;
        data[o..o + f.data().len()].copy_from_slice(f.data());
    }
    Ok(PaddedBatch {
        data,
        batch: feats.len(),
        max_len,
        dim,
        valid_len: feats.iter().map(|f| f.frames()).collect(),
    })
}
