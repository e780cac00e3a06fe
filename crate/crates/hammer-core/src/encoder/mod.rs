//! Hierarchical cross-modal encoders.
//!
//! The frame-level encoder contextualizes each clip's frames against the
//! query and emits one summary embedding per clip; the clip-level encoder
//! contextualizes those summaries. A flat baseline runs the frame-level
//! encoder over the whole video with no clip level.

mod encode;
mod layers;
mod params;

pub use encode::{
    encode_flat, encode_hammer, encode_pair, text_stack, vis_stack, AuxStack, EncodeKind,
    EncodeStats, Encoded, FlatOutputs, HammerOutputs, PairScope, TextStack, VisStack,
};
pub use layers::EncodeCtx;
pub use params::{bind, BlockIdx, BoundModel, ClipWires, EmbedIdx, HeadIdx, Model, ModelLayout};

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::types::Segment;

/// Architecture hyperparameters shared by both model variants.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub heads: usize,
    pub text_layers: usize,
    pub visual_layers: usize,
    /// 0 disables cross-modal exchange (ablation arm).
    pub cross_modal_layers: usize,
    /// Frames per clip (M).
    pub clip_length: usize,
    /// Videos longer than this are uniformly subsampled before encoding.
    pub n_max: usize,
    /// Maximum query length including the prepended summary token.
    pub max_query_len: usize,
    pub vocab_size: usize,
    pub d_visual: usize,
    /// Width of the auxiliary per-frame stream; None disables it.
    pub d_aux: Option<usize>,
    pub clip_position_embeddings: bool,
    pub share_frame_clip_weights: bool,
    /// One shared clip-level boundary projection for start and end.
    pub share_u: bool,
    pub dropout: f64,
    pub ffn_mult: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_model: 32,
            heads: 4,
            text_layers: 5,
            visual_layers: 1,
            cross_modal_layers: 1,
            clip_length: 32,
            n_max: 128,
            max_query_len: 32,
            vocab_size: 64,
            d_visual: 16,
            d_aux: None,
            clip_position_embeddings: true,
            share_frame_clip_weights: false,
            share_u: false,
            dropout: 0.1,
            ffn_mult: 4,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::config(alloc::format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if self.clip_length == 0 {
            return Err(Error::config(String::from("clip_length must be >= 1")));
        }
        if self.n_max == 0 {
            return Err(Error::config(String::from("n_max must be >= 1")));
        }
        if self.max_query_len < 2 {
            return Err(Error::config(String::from("max_query_len must be >= 2")));
        }
        if self.vocab_size == 0 || self.d_visual == 0 {
            return Err(Error::config(String::from("vocab_size and d_visual must be >= 1")));
        }
        if self.d_aux == Some(0) {
            return Err(Error::config(String::from("d_aux must be >= 1 when present")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(alloc::format!("dropout {} outside [0,1)", self.dropout)));
        }
        if self.ffn_mult == 0 {
            return Err(Error::config(String::from("ffn_mult must be >= 1")));
        }
        Ok(())
    }

    /// Upper bound on clips per video, sizing the clip position table.
    pub fn max_clips(&self) -> usize {
        self.n_max.div_ceil(self.clip_length)
    }
}

/// Which architecture a model instance realizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Hierarchical: frame-level encoder per clip + clip-level encoder.
    Hammer,
    /// Frame-level encoder over the whole video; video score is the max
    /// over per-frame projections.
    Flat,
}

/// One video's features: `n_frames x d_visual`, row-major, plus an
/// optional aligned auxiliary track.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub video_id: String,
    pub n_frames: usize,
    pub d_visual: usize,
    pub frames: Vec<f64>,
    pub aux: Option<AuxTrack>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuxTrack {
    pub d: usize,
    pub frames: Vec<f64>,
}

impl VideoRecord {
    pub fn validate(&self) -> Result<()> {
        if self.n_frames == 0 {
            return Err(Error::input(alloc::format!("video {} has no frames", self.video_id)));
        }
        if self.frames.len() != self.n_frames * self.d_visual {
            return Err(Error::input(alloc::format!(
                "video {}: feature buffer holds {} values, expected {}x{}",
                self.video_id,
                self.frames.len(),
                self.n_frames,
                self.d_visual
            )));
        }
        if let Some(aux) = &self.aux {
            if aux.frames.len() != self.n_frames * aux.d {
                return Err(Error::input(alloc::format!(
                    "video {}: aux buffer holds {} values, expected {}x{}",
                    self.video_id,
                    aux.frames.len(),
                    self.n_frames,
                    aux.d
                )));
            }
        }
        Ok(())
    }
}

/// A natural-language query as token ids (no summary token; the encoder
/// prepends its own).
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub query_id: String,
    pub tokens: Vec<u32>,
}

/// Non-overlapping fixed-length clips covering a video; only the last
/// clip may be padded.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipPartition {
    clip_length: usize,
    n_frames: usize,
    num_clips: usize,
    pad: usize,
}

/// Split `n_frames` into ceil(n/m) clips of length m; the final clip is
/// zero-padded by `pad_frames` positions.
pub fn partition_clips(n_frames: usize, clip_length: usize) -> Result<ClipPartition> {
    if n_frames == 0 {
        return Err(Error::input(String::from("cannot partition a zero-frame video")));
    }
    if clip_length == 0 {
        return Err(Error::config(String::from("clip_length must be >= 1")));
    }
    let num_clips = n_frames.div_ceil(clip_length);
    let pad = num_clips * clip_length - n_frames;
    Ok(ClipPartition { clip_length, n_frames, num_clips, pad })
}

impl ClipPartition {
    pub fn num_clips(&self) -> usize {
        self.num_clips
    }

    pub fn clip_length(&self) -> usize {
        self.clip_length
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn pad_frames(&self) -> usize {
        self.pad
    }

    /// Clip index containing frame `t`.
    pub fn clip_of_frame(&self, t: usize) -> Result<usize> {
        if t >= self.n_frames {
            return Err(Error::Index { op: "clip-of-frame", index: t, len: self.n_frames });
        }
        Ok(t / self.clip_length)
    }

    /// (first frame, real frame count) of clip `k`.
    pub fn clip_range(&self, k: usize) -> Result<(usize, usize)> {
        if k >= self.num_clips {
            return Err(Error::Index { op: "clip-range", index: k, len: self.num_clips });
        }
        let start = k * self.clip_length;
        let len = self.clip_length.min(self.n_frames - start);
        Ok((start, len))
    }
}

/// Frame-index remapping produced by uniform subsampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubsampleMap {
    pub orig_n: usize,
    pub new_n: usize,
}

impl SubsampleMap {
    /// Proportionally remap an annotation into subsampled frame space.
    /// Spans that would collapse keep length 2 (clamped inside range).
    pub fn remap(&self, seg: Segment) -> Result<Segment> {
        let s = seg.start() * self.new_n / self.orig_n;
        let e = seg.end() * self.new_n / self.orig_n;
        let s = s.min(self.new_n - 2);
        let e = e.clamp(s + 1, self.new_n - 1);
        Segment::new(s, e)
    }

    /// Map a segment predicted on the subsampled axis back to original
    /// frame indices (the indices of the kept frames).
    pub fn restore(&self, seg: Segment) -> Result<Segment> {
        if seg.end() >= self.new_n {
            return Err(Error::input(alloc::format!(
                "segment ends at frame {} but the subsampled axis has {} frames",
                seg.end(),
                self.new_n
            )));
        }
        let keep = |j: usize| j * self.orig_n / self.new_n;
        Segment::new(keep(seg.start()), keep(seg.end()))
    }
}

/// Uniformly subsample a video to at most `n_max` frames. Returns None
/// when the video already fits.
pub fn subsample_video(v: &VideoRecord, n_max: usize) -> Result<Option<(VideoRecord, SubsampleMap)>> {
    v.validate()?;
    if n_max < 2 {
        return Err(Error::config(String::from("n_max must be >= 2 to keep spans representable")));
    }
    if v.n_frames <= n_max {
        return Ok(None);
    }
    let keep: Vec<usize> = (0..n_max).map(|j| j * v.n_frames / n_max).collect();
    let gather = |buf: &[f64], d: usize| {
        let mut out = Vec::with_capacity(n_max * d);
        for &t in &keep {
            out.extend_from_slice(&buf[t * d..(t + 1) * d]);
        }
        out
    };
    let sub = VideoRecord {
        video_id: v.video_id.clone(),
        n_frames: n_max,
        d_visual: v.d_visual,
        frames: gather(&v.frames, v.d_visual),
        aux: v.aux.as_ref().map(|a| AuxTrack { d: a.d, frames: gather(&a.frames, a.d) }),
    };
    Ok(Some((sub, SubsampleMap { orig_n: v.n_frames, new_n: n_max })))
}
