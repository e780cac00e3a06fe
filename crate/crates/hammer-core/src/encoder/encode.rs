//! Full encoding passes for both model variants.
//!
//! Work is split so shared stages can be cached across pairings:
//! [`text_stack`] depends only on the query, [`vis_stack`] only on the
//! video; [`encode_pair`] runs the cross-modal exchange for one
//! (query, video) pair and is the unit counted by [`EncodeStats`].
//!
//! Frame position embeddings are indexed relative to the clip start, so
//! global order information enters only through clip position
//! embeddings (the flat variant spans the whole video with one clip,
//! where relative and absolute positions coincide).

use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::encoder::layers::{cross_exchange, self_layer, EncodeCtx, LN_EPS};
use crate::encoder::params::{BlockIdx, BoundModel, ClipWires};
use crate::encoder::{partition_clips, ClipPartition, ModelKind, VideoRecord};
use crate::error::{Error, Result};
use crate::tensor::NodeId;

/// Counters of pair-encode invocations, grouped by purpose.
#[derive(Debug, Default)]
pub struct EncodeStats {
    rank: AtomicU64,
    localize: AtomicU64,
    tl_eval: AtomicU64,
    other: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodeKind {
    /// Corpus-level video ranking.
    Rank,
    /// Candidate-video moment localization.
    Localize,
    /// Localization on the annotated video for span-quality metrics.
    TlEval,
    Other,
}

impl EncodeStats {
    pub const fn new() -> Self {
        EncodeStats {
            rank: AtomicU64::new(0),
            localize: AtomicU64::new(0),
            tl_eval: AtomicU64::new(0),
            other: AtomicU64::new(0),
        }
    }

    pub fn record(&self, kind: EncodeKind) {
        let c = match kind {
            EncodeKind::Rank => &self.rank,
            EncodeKind::Localize => &self.localize,
            EncodeKind::TlEval => &self.tl_eval,
            EncodeKind::Other => &self.other,
        };
        c.fetch_add(1, Ordering::Relaxed);
    }

    pub fn rank(&self) -> u64 {
        self.rank.load(Ordering::Relaxed)
    }

    pub fn localize(&self) -> u64 {
        self.localize.load(Ordering::Relaxed)
    }

    pub fn tl_eval(&self) -> u64 {
        self.tl_eval.load(Ordering::Relaxed)
    }

    pub fn other(&self) -> u64 {
        self.other.load(Ordering::Relaxed)
    }

    pub fn total(&self) -> u64 {
        self.rank() + self.localize() + self.tl_eval() + self.other()
    }
}

/// Query-only computation: embedded tokens run through the text
/// self-attention stacks. Row 0 is the learned query-summary slot.
#[derive(Debug)]
pub struct TextStack {
    pub frame_seq: NodeId,
    /// Clip-level text sequence; `None` for the flat variant. With
    /// shared weights this is the same node as `frame_seq`.
    pub clip_seq: Option<NodeId>,
    pub tokens: usize,
}

pub fn text_stack(ctx: &mut EncodeCtx, bm: &BoundModel, tokens: &[u32]) -> Result<TextStack> {
    let cfg = &bm.model.config;
    if tokens.is_empty() {
        return Err(Error::input(alloc::string::String::from("query has no tokens")));
    }
    if tokens.len() + 1 > cfg.max_query_len {
        return Err(Error::input(alloc::format!(
            "query of {} tokens exceeds max_query_len {} (one slot is reserved)",
            tokens.len(),
            cfg.max_query_len
        )));
    }
    let mut idx = Vec::with_capacity(tokens.len());
    for &t in tokens {
        if t as usize >= cfg.vocab_size {
            return Err(Error::input(alloc::format!(
                "token id {t} outside vocabulary of {}",
                cfg.vocab_size
            )));
        }
        idx.push(t as usize);
    }

    let e = &bm.model.layout.embed;
    let tok = ctx.g.gather_rows(bm.id(e.token), &idx)?;
    let seq0 = ctx.g.concat_rows(&[bm.id(e.tcls), tok])?;
    let pos = ctx.g.slice_rows(bm.id(e.text_pos), 0, tokens.len() + 1)?;
    let x = ctx.g.add(seq0, pos)?;
    let x = ctx.g.layer_norm(x, bm.id(e.text_ln_g), bm.id(e.text_ln_b), LN_EPS)?;
    let x = ctx.dropout(x)?;

    let mut frame_seq = x;
    for l in &bm.model.layout.frame.text {
        frame_seq = self_layer(ctx, bm, l, frame_seq, None)?;
    }
    let clip_seq = match &bm.model.layout.clip {
        ClipWires::None => None,
        ClipWires::Shared => Some(frame_seq),
        ClipWires::Separate(cb) => {
            let mut s = x;
            for l in &cb.text {
                s = self_layer(ctx, bm, l, s, None)?;
            }
            Some(s)
        }
    };
    Ok(TextStack { frame_seq, clip_seq, tokens: tokens.len() })
}

/// Video-only computation: per-clip sequences after the visual
/// self-attention layers. Each clip is `[summary slot; frames; padding]`
/// with padded rows barred from attention keys.
#[derive(Debug)]
pub struct VisStack {
    pub clips: Vec<NodeId>,
    pub key_ok: Vec<Vec<bool>>,
    pub partition: ClipPartition,
}

/// Same for the auxiliary stream; clips align with the visual partition.
#[derive(Debug)]
pub struct AuxStack {
    pub clips: Vec<NodeId>,
    pub key_ok: Vec<Vec<bool>>,
}

pub fn vis_stack(
    ctx: &mut EncodeCtx,
    bm: &BoundModel,
    video: &VideoRecord,
) -> Result<(VisStack, Option<AuxStack>)> {
    let cfg = &bm.model.config;
    video.validate()?;
    if video.n_frames > cfg.n_max {
        return Err(Error::input(alloc::format!(
            "video {} has {} frames, over the {}-frame limit; subsample it first",
            video.video_id,
            video.n_frames,
            cfg.n_max
        )));
    }
    if video.d_visual != cfg.d_visual {
        return Err(Error::input(alloc::format!(
            "video {} features are {}-dimensional but the model expects {}",
            video.video_id,
            video.d_visual,
            cfg.d_visual
        )));
    }
    let clip_len = match bm.model.kind {
        ModelKind::Hammer => cfg.clip_length,
        ModelKind::Flat => video.n_frames,
    };
    let partition = partition_clips(video.n_frames, clip_len)?;
    let e = &bm.model.layout.embed;

    let frames =
        ctx.g.constant_matrix(video.n_frames, video.d_visual, video.frames.clone())?;
    let proj = {
        let m = ctx.g.matmul(frames, bm.id(e.vis_w))?;
        ctx.g.add_row(m, bm.id(e.vis_b))?
    };
    let (clips, key_ok) = clip_sequences(ctx, bm, proj, &partition, e.vis_ln_g, e.vis_ln_b)?;
    let vis = VisStack { clips, key_ok, partition };

    let aux = match cfg.d_aux {
        None => None,
        Some(da) => {
            let track = video.aux.as_ref().ok_or_else(|| {
                Error::input(alloc::format!(
                    "model expects an auxiliary track but video {} has none",
                    video.video_id
                ))
            })?;
            if track.d != da {
                return Err(Error::input(alloc::format!(
                    "video {} auxiliary features are {}-dimensional but the model expects {da}",
                    video.video_id,
                    track.d
                )));
            }
            let araw = ctx.g.constant_matrix(video.n_frames, da, track.frames.clone())?;
            let aproj = {
                let m = ctx.g.matmul(araw, bm.id(e.aux_w.expect("aux layout")))?;
                ctx.g.add_row(m, bm.id(e.aux_b.expect("aux layout")))?
            };
            let (clips, key_ok) = clip_sequences(
                ctx,
                bm,
                aproj,
                &vis.partition,
                e.aux_ln_g.expect("aux layout"),
                e.aux_ln_b.expect("aux layout"),
            )?;
            Some(AuxStack { clips, key_ok })
        }
    };
    Ok((vis, aux))
}

fn clip_sequences(
    ctx: &mut EncodeCtx,
    bm: &BoundModel,
    proj: NodeId,
    partition: &ClipPartition,
    ln_g: usize,
    ln_b: usize,
) -> Result<(Vec<NodeId>, Vec<Vec<bool>>)> {
    let e = &bm.model.layout.embed;
    let d = bm.model.config.d_model;
    let mut clips = Vec::with_capacity(partition.num_clips());
    let mut key_oks = Vec::with_capacity(partition.num_clips());
    for k in 0..partition.num_clips() {
        let (start, len) = partition.clip_range(k)?;
        let real = ctx.g.slice_rows(proj, start, len)?;
        let pos = ctx.g.slice_rows(bm.id(e.frame_pos), 0, len)?;
        let real = ctx.g.add(real, pos)?;
        let pad = if k + 1 == partition.num_clips() { partition.pad_frames() } else { 0 };
        let cat = if pad > 0 {
            let zeros = ctx.g.constant_matrix(pad, d, alloc::vec![0.0; pad * d])?;
            ctx.g.concat_rows(&[bm.id(e.ccls), real, zeros])?
        } else {
            ctx.g.concat_rows(&[bm.id(e.ccls), real])?
        };
        let ln = ctx.g.layer_norm(cat, bm.id(ln_g), bm.id(ln_b), LN_EPS)?;
        let h = ctx.dropout(ln)?;
        let mut ok = alloc::vec![true; 1 + len];
        ok.extend(core::iter::repeat(false).take(pad));
        clips.push(h);
        key_oks.push(ok);
    }
    Ok((clips, key_oks))
}

/// How much of the pair encoding to materialize.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairScope {
    /// Only what video scoring needs (clip-level context).
    Score,
    /// Everything: frame context, per-clip query summaries, text outputs.
    Full,
}

#[derive(Debug)]
pub struct HammerOutputs {
    /// K x d per-clip summaries out of the frame-level encoder.
    pub clip_emb: NodeId,
    /// K x d clip rows after the clip-level encoder.
    pub clip_ctx: NodeId,
    /// 1 x d clip-level query summary.
    pub clip_tcls: NodeId,
    /// N x d frame rows (Full scope only).
    pub frame_ctx: Option<NodeId>,
    /// K x d frame-level query summaries, one per clip (Full only).
    pub frame_tcls: Option<NodeId>,
    /// T x d frame-level token rows, averaged over clips (Full only).
    pub text_frame: Option<NodeId>,
    /// T x d clip-level token rows (Full only).
    pub text_clip: Option<NodeId>,
    pub partition: ClipPartition,
    pub tokens: usize,
}

#[derive(Debug)]
pub struct FlatOutputs {
    /// N x d frame rows.
    pub frame_ctx: NodeId,
    /// 1 x d whole-video summary row.
    pub video_cls: NodeId,
    /// 1 x d query summary.
    pub text_tcls: NodeId,
    /// T x d token rows (Full only).
    pub text_tokens: Option<NodeId>,
    pub n_frames: usize,
    pub tokens: usize,
}

#[derive(Debug)]
pub enum Encoded {
    Hammer(HammerOutputs),
    Flat(FlatOutputs),
}

impl Encoded {
    pub fn tokens(&self) -> usize {
        match self {
            Encoded::Hammer(h) => h.tokens,
            Encoded::Flat(f) => f.tokens,
        }
    }

    pub fn n_frames(&self) -> usize {
        match self {
            Encoded::Hammer(h) => h.partition.n_frames(),
            Encoded::Flat(f) => f.n_frames,
        }
    }
}

/// Cross-modal encoding of one (query, video) pair from precomputed
/// stacks. Increments `stats` once when provided.
pub fn encode_pair(
    ctx: &mut EncodeCtx,
    bm: &BoundModel,
    text: &TextStack,
    vis: &VisStack,
    aux: Option<&AuxStack>,
    scope: PairScope,
    stats: Option<(&EncodeStats, EncodeKind)>,
) -> Result<Encoded> {
    if let Some((s, kind)) = stats {
        s.record(kind);
    }
    if bm.model.config.d_aux.is_some() && aux.is_none() {
        return Err(Error::contract(alloc::string::String::from(
            "model expects an auxiliary stack but none was supplied",
        )));
    }
    match bm.model.kind {
        ModelKind::Hammer => Ok(Encoded::Hammer(hammer_pair(ctx, bm, text, vis, aux, scope)?)),
        ModelKind::Flat => Ok(Encoded::Flat(flat_pair(ctx, bm, text, vis, aux, scope)?)),
    }
}

fn fuse_streams(
    ctx: &mut EncodeCtx,
    bm: &BoundModel,
    block: &BlockIdx,
    v: NodeId,
    a: NodeId,
) -> Result<NodeId> {
    let (fw, fb) = match (block.fuse_w, block.fuse_b) {
        (Some(w), Some(b)) => (w, b),
        _ => {
            return Err(Error::contract(alloc::string::String::from(
                "auxiliary fusion weights missing from block",
            )))
        }
    };
    let cat = ctx.g.concat_cols(&[v, a])?;
    let m = ctx.g.matmul(cat, bm.id(fw))?;
    ctx.g.add_row(m, bm.id(fb))
}

fn hammer_pair(
    ctx: &mut EncodeCtx,
    bm: &BoundModel,
    text: &TextStack,
    vis: &VisStack,
    aux: Option<&AuxStack>,
    scope: PairScope,
) -> Result<HammerOutputs> {
    let block = &bm.model.layout.frame;
    let full = scope == PairScope::Full;
    let use_aux = bm.model.config.d_aux.is_some();
    let kc = vis.partition.num_clips();

    let mut phis = Vec::with_capacity(kc);
    let mut frame_parts = Vec::new();
    let mut ftcls_parts = Vec::new();
    let mut token_parts = Vec::new();
    for k in 0..kc {
        let mut t = text.frame_seq;
        let mut v = vis.clips[k];
        let mut a = if use_aux { Some(aux.expect("checked").clips[k]) } else { None };
        for cl in &block.cross {
            let apair = a.map(|an| (an, &aux.expect("checked").key_ok[k][..]));
            let (tn, vn, an) = cross_exchange(ctx, bm, cl, t, v, &vis.key_ok[k], apair)?;
            t = tn;
            v = vn;
            if an.is_some() {
                a = an;
            }
        }
        // Self-attention runs after the exchange so the clip summary row
        // pools frame rows that have already seen the query.
        for l in &block.vis {
            v = self_layer(ctx, bm, l, v, Some(&vis.key_ok[k]))?;
        }
        if let Some(mut aseq) = a {
            for l in &block.aux {
                aseq = self_layer(ctx, bm, l, aseq, Some(&aux.expect("checked").key_ok[k]))?;
            }
            a = Some(aseq);
        }
        let rep = match a {
            Some(aseq) if use_aux => fuse_streams(ctx, bm, block, v, aseq)?,
            _ => v,
        };
        let (_, len) = vis.partition.clip_range(k)?;
        phis.push(ctx.g.slice_rows(rep, 0, 1)?);
        if full {
            frame_parts.push(ctx.g.slice_rows(rep, 1, len)?);
            ftcls_parts.push(ctx.g.slice_rows(t, 0, 1)?);
            token_parts.push(ctx.g.slice_rows(t, 1, text.tokens)?);
        }
    }
    let clip_emb = ctx.g.concat_rows(&phis)?;

    let cb = bm.model.layout.clip_block().ok_or_else(|| {
        Error::contract(alloc::string::String::from("hierarchical model lacks a clip block"))
    })?;
    let mut cvis = clip_emb;
    if let Some(cp) = bm.model.layout.embed.clip_pos {
        let pos = ctx.g.slice_rows(bm.id(cp), 0, kc)?;
        cvis = ctx.g.add(cvis, pos)?;
    }
    let mut ct = text.clip_seq.ok_or_else(|| {
        Error::contract(alloc::string::String::from("text stack lacks a clip-level sequence"))
    })?;
    let all_ok = alloc::vec![true; kc];
    for cl in &cb.cross {
        let (tn, vn, _) = cross_exchange(ctx, bm, cl, ct, cvis, &all_ok, None)?;
        ct = tn;
        cvis = vn;
    }
    for l in &cb.vis {
        cvis = self_layer(ctx, bm, l, cvis, None)?;
    }

    let clip_tcls = ctx.g.slice_rows(ct, 0, 1)?;
    let (frame_ctx, frame_tcls, text_frame, text_clip) = if full {
        let fc = ctx.g.concat_rows(&frame_parts)?;
        let ft = ctx.g.concat_rows(&ftcls_parts)?;
        let w = 1.0 / kc as f64;
        let terms: Vec<(NodeId, f64)> = token_parts.iter().map(|&p| (p, w)).collect();
        let tf = ctx.g.weighted_sum(&terms)?;
        let tc = ctx.g.slice_rows(ct, 1, text.tokens)?;
        (Some(fc), Some(ft), Some(tf), Some(tc))
    } else {
        (None, None, None, None)
    };

    Ok(HammerOutputs {
        clip_emb,
        clip_ctx: cvis,
        clip_tcls,
        frame_ctx,
        frame_tcls,
        text_frame,
        text_clip,
        partition: vis.partition.clone(),
        tokens: text.tokens,
    })
}

fn flat_pair(
    ctx: &mut EncodeCtx,
    bm: &BoundModel,
    text: &TextStack,
    vis: &VisStack,
    aux: Option<&AuxStack>,
    scope: PairScope,
) -> Result<FlatOutputs> {
    if vis.partition.num_clips() != 1 {
        return Err(Error::contract(alloc::string::String::from(
            "flat encoding expects a single whole-video clip",
        )));
    }
    let block = &bm.model.layout.frame;
    let use_aux = bm.model.config.d_aux.is_some();
    let n = vis.partition.n_frames();

    let mut t = text.frame_seq;
    let mut v = vis.clips[0];
    let mut a = if use_aux { Some(aux.expect("checked").clips[0]) } else { None };
    for cl in &block.cross {
        let apair = a.map(|an| (an, &aux.expect("checked").key_ok[0][..]));
        let (tn, vn, an) = cross_exchange(ctx, bm, cl, t, v, &vis.key_ok[0], apair)?;
        t = tn;
        v = vn;
        if an.is_some() {
            a = an;
        }
    }
    for l in &block.vis {
        v = self_layer(ctx, bm, l, v, Some(&vis.key_ok[0]))?;
    }
    if let Some(mut aseq) = a {
        for l in &block.aux {
            aseq = self_layer(ctx, bm, l, aseq, Some(&aux.expect("checked").key_ok[0]))?;
        }
        a = Some(aseq);
    }
    let rep = match a {
        Some(aseq) if use_aux => fuse_streams(ctx, bm, block, v, aseq)?,
        _ => v,
    };
    let frame_ctx = ctx.g.slice_rows(rep, 1, n)?;
    let video_cls = ctx.g.slice_rows(rep, 0, 1)?;
    let text_tcls = ctx.g.slice_rows(t, 0, 1)?;
    let text_tokens = if scope == PairScope::Full {
        Some(ctx.g.slice_rows(t, 1, text.tokens)?)
    } else {
        None
    };
    Ok(FlatOutputs { frame_ctx, video_cls, text_tcls, text_tokens, n_frames: n, tokens: text.tokens })
}

/// Convenience wrapper: encode one pair end to end on a hierarchical
/// model.
pub fn encode_hammer(
    ctx: &mut EncodeCtx,
    bm: &BoundModel,
    video: &VideoRecord,
    tokens: &[u32],
    scope: PairScope,
    stats: Option<(&EncodeStats, EncodeKind)>,
) -> Result<HammerOutputs> {
    let ts = text_stack(ctx, bm, tokens)?;
    let (vs, aux) = vis_stack(ctx, bm, video)?;
    match encode_pair(ctx, bm, &ts, &vs, aux.as_ref(), scope, stats)? {
        Encoded::Hammer(h) => Ok(h),
        Encoded::Flat(_) => Err(Error::contract(alloc::string::String::from(
            "encode_hammer called on a flat model",
        ))),
    }
}

/// Convenience wrapper: encode one pair end to end on a flat model.
pub fn encode_flat(
    ctx: &mut EncodeCtx,
    bm: &BoundModel,
    video: &VideoRecord,
    tokens: &[u32],
    scope: PairScope,
    stats: Option<(&EncodeStats, EncodeKind)>,
) -> Result<FlatOutputs> {
    let ts = text_stack(ctx, bm, tokens)?;
    let (vs, aux) = vis_stack(ctx, bm, video)?;
    match encode_pair(ctx, bm, &ts, &vs, aux.as_ref(), scope, stats)? {
        Encoded::Flat(f) => Ok(f),
        Encoded::Hammer(_) => Err(Error::contract(alloc::string::String::from(
            "encode_flat called on a hierarchical model",
        ))),
    }
}
