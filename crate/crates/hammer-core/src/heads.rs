//! Task heads and losses on top of the encoders.
//!
//! Three objectives share the encoder outputs:
//! - retrieval: a video/query match score trained contrastively against
//!   in-batch negatives,
//! - localization: per-frame start/end boundary distributions combining
//!   clip-level and frame-level evidence,
//! - masked tokens: reconstruct masked query tokens from the fused
//!   representations, tying token identity to what was seen.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{TokenRole, VocabLayout};
use crate::encoder::{BoundModel, Encoded};
use crate::error::{Error, Result};
use crate::tensor::{Graph, NodeId};
use crate::types::{Beo, Segment};

/// Relative weights of the three training objectives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskWeights {
    pub vr: f64,
    pub tl: f64,
    pub mlm: f64,
}

impl Default for TaskWeights {
    fn default() -> Self {
        TaskWeights { vr: 1.0, tl: 5.0, mlm: 0.1 }
    }
}

/// Which fused text streams feed the masked-token head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlmFlags {
    /// frame-level token rows
    pub fm: bool,
    /// clip-level token rows
    pub cm: bool,
}

impl Default for MlmFlags {
    fn default() -> Self {
        MlmFlags { fm: true, cm: true }
    }
}

// ── video retrieval ─────────────────────────────────────────────────────

/// Scalar match score for one encoded query/video pair: the maximum
/// projection over clip rows (hierarchical) or frame rows (flat).
pub fn vr_score(g: &mut Graph, bm: &BoundModel, enc: &Encoded) -> Result<NodeId> {
    let theta = bm.id(bm.model.layout.head.vr_theta);
    let rows = match enc {
        Encoded::Hammer(h) => h.clip_ctx,
        Encoded::Flat(f) => f.frame_ctx,
    };
    let per_row = g.matmul(rows, theta)?;
    g.max_all(per_row)
}

/// Contrastive retrieval loss over one positive and its negatives. The
/// positive score must come first; the loss is cross-entropy of the
/// score vector against index 0.
pub fn vr_loss(g: &mut Graph, scores: &[NodeId]) -> Result<NodeId> {
    if scores.len() < 2 {
        return Err(Error::contract(String::from(
            "retrieval loss needs at least one negative score",
        )));
    }
    for &s in scores {
        if g.dims(s) != (1, 1) {
            let (r, c) = g.dims(s);
            return Err(Error::contract(format!(
                "retrieval scores must be scalars, found {r}x{c}"
            )));
        }
    }
    let col = g.concat_rows(scores)?;
    g.cross_entropy(col, 0)
}

// ── temporal localization ───────────────────────────────────────────────

/// Per-row affine score over paired rows: `logits[t] = proj . [a[t]; b[t]]`
/// where `a` and `b` are N x d and `proj` is 2d x 1.
pub fn paired_projection(g: &mut Graph, a: NodeId, b: NodeId, proj: NodeId) -> Result<NodeId> {
    let pairs = g.concat_cols(&[a, b])?;
    g.matmul(pairs, proj)
}

/// Start/end boundary logits, one per frame (N x 1 columns).
#[derive(Debug, Clone, Copy)]
pub struct BoundaryLogits {
    pub start: NodeId,
    pub end: NodeId,
    pub n_frames: usize,
}

/// Boundary logits for one encoded pair.
///
/// Hierarchical: `logit(t) = u . [clip_ctx[k(t)]; clip_tcls]
///                         + w . [frame_ctx[t]; frame_tcls[k(t)]]`
/// with `k(t)` the clip containing frame `t`. Flat videos have a single
/// implicit clip, so only the frame term exists, paired with the query
/// summary.
pub fn tl_boundary_logits(g: &mut Graph, bm: &BoundModel, enc: &Encoded) -> Result<BoundaryLogits> {
    let head = &bm.model.layout.head;
    let w_start = bm.id(head.w_start);
    let w_end = bm.id(head.w_end);
    match enc {
        Encoded::Hammer(h) => {
            let frame_ctx = h.frame_ctx.ok_or_else(|| {
                Error::contract(String::from("boundary logits need a full-scope encoding"))
            })?;
            let frame_tcls = h.frame_tcls.ok_or_else(|| {
                Error::contract(String::from("boundary logits need a full-scope encoding"))
            })?;
            let n = h.partition.n_frames();
            let mut ks = Vec::with_capacity(n);
            for t in 0..n {
                ks.push(h.partition.clip_of_frame(t)?);
            }
            let clip_rows = g.gather_rows(h.clip_ctx, &ks)?;
            let ctcls_rows = g.tile_rows(h.clip_tcls, n)?;
            let ftcls_rows = g.gather_rows(frame_tcls, &ks)?;
            let u_start = bm.id(head.u_start.ok_or_else(|| {
                Error::contract(String::from("hierarchical model is missing its clip projection"))
            })?);
            let u_end = bm.id(head.u_end.ok_or_else(|| {
                Error::contract(String::from("hierarchical model is missing its clip projection"))
            })?);
            let mut logits = |u: NodeId, w: NodeId| -> Result<NodeId> {
                let clip_term = paired_projection(g, clip_rows, ctcls_rows, u)?;
                let frame_term = paired_projection(g, frame_ctx, ftcls_rows, w)?;
                g.add(clip_term, frame_term)
            };
            let start = logits(u_start, w_start)?;
            let end = logits(u_end, w_end)?;
            Ok(BoundaryLogits { start, end, n_frames: n })
        }
        Encoded::Flat(f) => {
            let n = f.n_frames;
            let tcls_rows = g.tile_rows(f.text_tcls, n)?;
            let start = paired_projection(g, f.frame_ctx, tcls_rows, w_start)?;
            let end = paired_projection(g, f.frame_ctx, tcls_rows, w_end)?;
            Ok(BoundaryLogits { start, end, n_frames: n })
        }
    }
}

fn check_segment(seg: Segment, n: usize) -> Result<()> {
    if seg.end() >= n {
        return Err(Error::input(format!(
            "segment ends at frame {} but the video has {n} frames",
            seg.end()
        )));
    }
    Ok(())
}

/// Localization loss: cross-entropy of the start distribution at the
/// segment start plus cross-entropy of the end distribution at its end.
pub fn tl_loss(g: &mut Graph, bm: &BoundModel, enc: &Encoded, seg: Segment) -> Result<NodeId> {
    let b = tl_boundary_logits(g, bm, enc)?;
    check_segment(seg, b.n_frames)?;
    let ls = g.cross_entropy(b.start, seg.start())?;
    let le = g.cross_entropy(b.end, seg.end())?;
    g.add(ls, le)
}

/// Per-frame begin/end/outside labels for a segment inside `n` frames.
pub fn beo_labels(n: usize, seg: Segment) -> Result<Vec<Beo>> {
    check_segment(seg, n)?;
    let mut labels = alloc::vec![Beo::O; n];
    labels[seg.start()] = Beo::B;
    labels[seg.end()] = Beo::E;
    Ok(labels)
}

/// Alternative localization loss: every frame is classified as
/// begin/end/outside, with the outside class pinned to a zero logit as
/// the reference. Mean cross-entropy over frames.
pub fn tl_loss_framewise3way(
    g: &mut Graph,
    bm: &BoundModel,
    enc: &Encoded,
    seg: Segment,
) -> Result<NodeId> {
    let b = tl_boundary_logits(g, bm, enc)?;
    let labels = beo_labels(b.n_frames, seg)?;
    let zeros = g.constant_matrix(b.n_frames, 1, alloc::vec![0.0; b.n_frames])?;
    let logits = g.concat_cols(&[b.start, b.end, zeros])?;
    let targets: Vec<usize> = labels.iter().map(|l| l.class_index()).collect();
    g.cross_entropy_rows(logits, &targets)
}

// ── masked token modeling ───────────────────────────────────────────────

/// A query with some tokens replaced by the mask id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedQuery {
    /// Tokens after masking; feed these to the text encoder.
    pub input_ids: Vec<u32>,
    /// Positions (into the token sequence) that were masked.
    pub positions: Vec<usize>,
    /// Original ids at those positions, in the same order.
    pub targets: Vec<u32>,
}

/// Independently mask each token with probability `rate`. A rate of zero
/// draws nothing from the generator.
pub fn apply_mask(
    tokens: &[u32],
    vocab: &VocabLayout,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> Result<MaskedQuery> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::config(format!("mask rate {rate} outside [0,1]")));
    }
    if tokens.is_empty() {
        return Err(Error::input(String::from("cannot mask an empty query")));
    }
    for &t in tokens {
        match vocab.role(t)? {
            TokenRole::Content | TokenRole::Filler => {}
            _ => {
                return Err(Error::input(format!(
                    "query contains reserved token id {t}"
                )))
            }
        }
    }
    let mut out = MaskedQuery {
        input_ids: tokens.to_vec(),
        positions: Vec::new(),
        targets: Vec::new(),
    };
    if rate == 0.0 {
        return Ok(out);
    }
    for (i, &t) in tokens.iter().enumerate() {
        if rng.gen::<f64>() < rate {
            out.input_ids[i] = vocab.mask;
            out.positions.push(i);
            out.targets.push(t);
        }
    }
    Ok(out)
}

/// Masked-token loss: project fused token rows at the masked positions
/// through the vocabulary head and score the original ids. With both
/// streams enabled their logits are summed. No masked positions yields
/// a detached zero.
pub fn mlm_loss(
    g: &mut Graph,
    bm: &BoundModel,
    enc: &Encoded,
    positions: &[usize],
    targets: &[u32],
    flags: MlmFlags,
) -> Result<NodeId> {
    if positions.len() != targets.len() {
        return Err(Error::contract(format!(
            "{} masked positions but {} targets",
            positions.len(),
            targets.len()
        )));
    }
    if !flags.fm && !flags.cm {
        return Err(Error::contract(String::from(
            "masked-token loss needs at least one text stream enabled",
        )));
    }
    if positions.is_empty() {
        return Ok(g.constant_scalar(0.0));
    }
    let t_count = enc.tokens();
    for &p in positions {
        if p >= t_count {
            return Err(Error::Index { op: "masked-token loss", index: p, len: t_count });
        }
    }
    let w = bm.id(bm.model.layout.head.mlm_w);
    let vocab_size = g.dims(w).1;
    let targets_usize: Vec<usize> = targets.iter().map(|&t| t as usize).collect();
    for &t in &targets_usize {
        if t >= vocab_size {
            return Err(Error::Index { op: "masked-token loss", index: t, len: vocab_size });
        }
    }

    let full_scope = || Error::contract(String::from("masked-token loss needs a full-scope encoding"));
    let mut stream_logits = |rows: NodeId| -> Result<NodeId> {
        let picked = g.gather_rows(rows, positions)?;
        g.matmul(picked, w)
    };
    let logits = match enc {
        Encoded::Hammer(h) => {
            let fm = if flags.fm {
                Some(stream_logits(h.text_frame.ok_or_else(full_scope)?)?)
            } else {
                None
            };
            let cm = if flags.cm {
                Some(stream_logits(h.text_clip.ok_or_else(full_scope)?)?)
            } else {
                None
            };
            match (fm, cm) {
                (Some(a), Some(b)) => g.add(a, b)?,
                (Some(a), None) => a,
                (None, Some(b)) => b,
                (None, None) => unreachable!(),
            }
        }
        // flat has a single text stream; either flag selects it
        Encoded::Flat(f) => stream_logits(f.text_tokens.ok_or_else(full_scope)?)?,
    };
    g.cross_entropy_rows(logits, &targets_usize)
}

// ── combined objective ──────────────────────────────────────────────────

/// Weighted sum of the three objectives. Every component must be finite;
/// a non-finite one is reported by name.
pub fn total_loss(
    g: &mut Graph,
    vr: NodeId,
    tl: NodeId,
    mlm: NodeId,
    weights: &TaskWeights,
) -> Result<NodeId> {
    for (id, name) in [(vr, "retrieval"), (tl, "localization"), (mlm, "masked-token")] {
        let v = g.scalar_value(id)?;
        if !v.is_finite() {
            return Err(Error::numeric(format!("{name} loss is not finite ({v})")));
        }
    }
    g.weighted_sum(&[(vr, weights.vr), (tl, weights.tl), (mlm, weights.mlm)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{
        bind, encode_flat, encode_hammer, AuxTrack, EncodeCtx, EncoderConfig, Model, ModelKind,
        PairScope, VideoRecord,
    };
    use crate::rng::{derive, Stream};
    use crate::tensor::{finite_diff_check, sample_coords, ParamSet};
    use rand_distr::{Distribution, StandardNormal};

    fn tiny_cfg(d_aux: Option<usize>) -> EncoderConfig {
        EncoderConfig {
            d_model: 4,
            heads: 2,
            text_layers: 1,
            visual_layers: 1,
            cross_modal_layers: 1,
            clip_length: 3,
            n_max: 9,
            max_query_len: 4,
            vocab_size: 8,
            d_visual: 3,
            d_aux,
            dropout: 0.0,
            ..EncoderConfig::default()
        }
    }

    fn rand_video(id: &str, n: usize, dv: usize, da: Option<usize>, seed: u64) -> VideoRecord {
        let mut rng = derive(seed, Stream::VideoContent, 77);
        let frames: Vec<f64> = (0..n * dv).map(|_| StandardNormal.sample(&mut rng)).collect();
        let aux = da.map(|d| AuxTrack {
            d,
            frames: (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect(),
        });
        VideoRecord {
            video_id: String::from(id),
            n_frames: n,
            d_visual: dv,
            frames,
            aux,
        }
    }

    fn zero_param(model: &mut Model, idx: usize) {
        model.params.tensor_mut(idx).data_mut().fill(0.0);
    }

    #[test]
    fn paired_projection_matches_hand_arithmetic() {
        let mut g = Graph::new();
        let a = g.constant_matrix(3, 2, alloc::vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = g.constant_matrix(3, 2, alloc::vec![0.5, 0.0, 0.0, 0.5, 1.0, 1.0]).unwrap();
        let proj = g.constant_matrix(4, 1, alloc::vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let logits = paired_projection(&mut g, a, b, proj).unwrap();
        assert_eq!(g.dims(logits), (3, 1));
        let want = [0.65, 1.3, 2.4];
        for (got, want) in g.value(logits).iter().zip(want) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn vr_loss_of_equal_scores_is_ln_k() {
        let mut g = Graph::new();
        let scores: Vec<_> = (0..3).map(|_| g.constant_scalar(0.7)).collect();
        let loss = vr_loss(&mut g, &scores).unwrap();
        assert!((g.value(loss)[0] - (3.0f64).ln()).abs() < 1e-12);

        // positive ahead by 2: loss = ln(e^2 + 2) - 2
        let mut g = Graph::new();
        let s0 = g.constant_scalar(2.0);
        let s1 = g.constant_scalar(0.0);
        let s2 = g.constant_scalar(0.0);
        let loss = vr_loss(&mut g, &[s0, s1, s2]).unwrap();
        let want = (2.0f64.exp() + 2.0).ln() - 2.0;
        assert!((g.value(loss)[0] - want).abs() < 1e-12);

        let one = g.constant_scalar(1.0);
        assert!(vr_loss(&mut g, &[one]).is_err());
        let wide = g.constant_matrix(1, 2, alloc::vec![1.0, 2.0]).unwrap();
        assert!(vr_loss(&mut g, &[one, wide]).is_err());
    }

    #[test]
    fn zeroed_boundary_heads_give_uniform_distributions() {
        let cfg = tiny_cfg(None);
        let mut model = Model::init(cfg.clone(), ModelKind::Hammer, 3).unwrap();
        let head = model.layout.head.clone();
        zero_param(&mut model, head.u_start.unwrap());
        zero_param(&mut model, head.u_end.unwrap());
        zero_param(&mut model, head.w_start);
        zero_param(&mut model, head.w_end);

        let video = rand_video("v", 8, 3, None, 5);
        let mut g = Graph::new();
        let bm = bind(&mut g, &model, false).unwrap();
        let mut ctx = EncodeCtx::eval(&mut g);
        let out =
            encode_hammer(&mut ctx, &bm, &video, &[2, 3], PairScope::Full, None).unwrap();
        let enc = Encoded::Hammer(out);

        let seg = Segment::new(2, 5).unwrap();
        let loss = tl_loss(&mut g, &bm, &enc, seg).unwrap();
        assert!((g.value(loss)[0] - 2.0 * (8.0f64).ln()).abs() < 1e-12);

        let loss3 = tl_loss_framewise3way(&mut g, &bm, &enc, seg).unwrap();
        assert!((g.value(loss3)[0] - (3.0f64).ln()).abs() < 1e-12);

        // out-of-range segment is rejected
        let bad = Segment::new(5, 8).unwrap();
        assert!(tl_loss(&mut g, &bm, &enc, bad).is_err());
    }

    #[test]
    fn hierarchical_boundary_logits_match_a_hand_oracle() {
        let cfg = tiny_cfg(Some(2));
        let model = Model::init(cfg.clone(), ModelKind::Hammer, 9).unwrap();
        let video = rand_video("v", 7, 3, Some(2), 21);
        let mut g = Graph::new();
        let bm = bind(&mut g, &model, false).unwrap();
        let mut ctx = EncodeCtx::eval(&mut g);
        let out =
            encode_hammer(&mut ctx, &bm, &video, &[2, 5, 6], PairScope::Full, None).unwrap();

        let head = &model.layout.head;
        let d = cfg.d_model;
        let n = out.partition.n_frames();
        let clip_ctx = g.value(out.clip_ctx).to_vec();
        let clip_tcls = g.value(out.clip_tcls).to_vec();
        let frame_ctx = g.value(out.frame_ctx.unwrap()).to_vec();
        let frame_tcls = g.value(out.frame_tcls.unwrap()).to_vec();
        let u = g.value(bm.id(head.u_start.unwrap())).to_vec();
        let w = g.value(bm.id(head.w_start)).to_vec();

        let enc = Encoded::Hammer(out);
        let b = tl_boundary_logits(&mut g, &bm, &enc).unwrap();
        assert_eq!(g.dims(b.start), (n, 1));
        assert_eq!(g.dims(b.end), (n, 1));

        let got = g.value(b.start);
        for t in 0..n {
            let k = t / cfg.clip_length;
            let mut want = 0.0;
            for j in 0..d {
                want += u[j] * clip_ctx[k * d + j];
                want += u[d + j] * clip_tcls[j];
                want += w[j] * frame_ctx[t * d + j];
                want += w[d + j] * frame_tcls[k * d + j];
            }
            assert!((got[t] - want).abs() < 1e-9, "frame {t}: {} vs {want}", got[t]);
        }
    }

    #[test]
    fn flat_boundary_logits_match_a_hand_oracle() {
        let cfg = tiny_cfg(None);
        let model = Model::init(cfg.clone(), ModelKind::Flat, 4).unwrap();
        let video = rand_video("v", 6, 3, None, 8);
        let mut g = Graph::new();
        let bm = bind(&mut g, &model, false).unwrap();
        let mut ctx = EncodeCtx::eval(&mut g);
        let out = encode_flat(&mut ctx, &bm, &video, &[3, 4], PairScope::Full, None).unwrap();

        let d = cfg.d_model;
        let frame_ctx = g.value(out.frame_ctx).to_vec();
        let tcls = g.value(out.text_tcls).to_vec();
        let w_end = g.value(bm.id(model.layout.head.w_end)).to_vec();

        let enc = Encoded::Flat(out);
        let b = tl_boundary_logits(&mut g, &bm, &enc).unwrap();
        let got = g.value(b.end);
        for t in 0..6 {
            let mut want = 0.0;
            for j in 0..d {
                want += w_end[j] * frame_ctx[t * d + j];
                want += w_end[d + j] * tcls[j];
            }
            assert!((got[t] - want).abs() < 1e-9);
        }
    }

    #[test]
    fn beo_labels_mark_segment_boundaries() {
        let labels = beo_labels(5, Segment::new(1, 3).unwrap()).unwrap();
        assert_eq!(labels, alloc::vec![Beo::O, Beo::B, Beo::O, Beo::E, Beo::O]);
        assert!(beo_labels(3, Segment::new(1, 3).unwrap()).is_err());
    }

    #[test]
    fn masking_respects_rate_extremes_and_seed() {
        let vocab = VocabLayout::standard(16).unwrap();
        let tokens = [2u32, 3, 4, 13];
        let mut rng = derive(1, Stream::Mask, 0);
        let none = apply_mask(&tokens, &vocab, 0.0, &mut rng).unwrap();
        assert_eq!(none.input_ids, tokens);
        assert!(none.positions.is_empty() && none.targets.is_empty());

        let all = apply_mask(&tokens, &vocab, 1.0, &mut rng).unwrap();
        assert_eq!(all.positions, alloc::vec![0, 1, 2, 3]);
        assert_eq!(all.targets, tokens.to_vec());
        assert!(all.input_ids.iter().all(|&t| t == vocab.mask));

        let mut r1 = derive(7, Stream::Mask, 3);
        let mut r2 = derive(7, Stream::Mask, 3);
        let a = apply_mask(&tokens, &vocab, 0.5, &mut r1).unwrap();
        let b = apply_mask(&tokens, &vocab, 0.5, &mut r2).unwrap();
        assert_eq!(a, b);

        // reserved ids are rejected
        assert!(apply_mask(&[2, vocab.mask], &vocab, 0.5, &mut rng).is_err());
        assert!(apply_mask(&[2, vocab.pad], &vocab, 0.5, &mut rng).is_err());
        assert!(apply_mask(&[], &vocab, 0.5, &mut rng).is_err());
        assert!(apply_mask(&tokens, &vocab, 1.5, &mut rng).is_err());
    }

    #[test]
    fn zeroed_vocab_head_scores_tokens_uniformly() {
        let cfg = tiny_cfg(None);
        let mut model = Model::init(cfg.clone(), ModelKind::Hammer, 6).unwrap();
        let mlm_idx = model.layout.head.mlm_w;
        zero_param(&mut model, mlm_idx);
        let video = rand_video("v", 5, 3, None, 2);
        let mut g = Graph::new();
        let bm = bind(&mut g, &model, false).unwrap();
        let mut ctx = EncodeCtx::eval(&mut g);
        let out =
            encode_hammer(&mut ctx, &bm, &video, &[2, 3, 4], PairScope::Full, None).unwrap();
        let enc = Encoded::Hammer(out);

        let ln_v = (cfg.vocab_size as f64).ln();
        for flags in [
            MlmFlags { fm: true, cm: true },
            MlmFlags { fm: true, cm: false },
            MlmFlags { fm: false, cm: true },
        ] {
            let loss = mlm_loss(&mut g, &bm, &enc, &[0, 2], &[4, 2], flags).unwrap();
            assert!((g.value(loss)[0] - ln_v).abs() < 1e-12);
        }

        // no masked positions: detached zero
        let zero =
            mlm_loss(&mut g, &bm, &enc, &[], &[], MlmFlags::default()).unwrap();
        assert_eq!(g.value(zero)[0], 0.0);

        // contract violations
        assert!(mlm_loss(&mut g, &bm, &enc, &[0], &[4], MlmFlags { fm: false, cm: false })
            .is_err());
        assert!(mlm_loss(&mut g, &bm, &enc, &[9], &[4], MlmFlags::default()).is_err());
        assert!(mlm_loss(&mut g, &bm, &enc, &[0], &[99], MlmFlags::default()).is_err());
        assert!(mlm_loss(&mut g, &bm, &enc, &[0, 1], &[4], MlmFlags::default()).is_err());
    }

    #[test]
    fn flat_masked_token_loss_uses_the_single_stream() {
        let cfg = tiny_cfg(None);
        let mut model = Model::init(cfg.clone(), ModelKind::Flat, 6).unwrap();
        let mlm_idx = model.layout.head.mlm_w;
        zero_param(&mut model, mlm_idx);
        let video = rand_video("v", 5, 3, None, 2);
        let mut g = Graph::new();
        let bm = bind(&mut g, &model, false).unwrap();
        let mut ctx = EncodeCtx::eval(&mut g);
        let out = encode_flat(&mut ctx, &bm, &video, &[2, 3], PairScope::Full, None).unwrap();
        let enc = Encoded::Flat(out);
        let loss =
            mlm_loss(&mut g, &bm, &enc, &[1], &[3], MlmFlags { fm: true, cm: false }).unwrap();
        assert!((g.value(loss)[0] - (cfg.vocab_size as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn total_loss_weighs_components_and_rejects_nan() {
        let mut g = Graph::new();
        let vr = g.constant_scalar(2.0);
        let tl = g.constant_scalar(1.0);
        let mlm = g.constant_scalar(3.0);
        let total = total_loss(&mut g, vr, tl, mlm, &TaskWeights::default()).unwrap();
        assert!((g.value(total)[0] - 7.3).abs() < 1e-12);

        let bad = g.constant_scalar(f64::NAN);
        match total_loss(&mut g, vr, bad, mlm, &TaskWeights::default()).unwrap_err() {
            Error::Numeric { what } => assert!(what.contains("localization"), "{what}"),
            other => panic!("unexpected error {other}"),
        }
    }

    fn head_loss_of(
        cfg: &EncoderConfig,
        kind: ModelKind,
        params: &ParamSet,
        videos: &[VideoRecord],
        tokens: &[u32],
    ) -> crate::error::Result<f64> {
        let m = Model::from_params(cfg.clone(), kind, params.clone())?;
        let mut g = Graph::new();
        let bm = bind(&mut g, &m, false)?;
        let encode = |g: &mut Graph,
                      bm: &BoundModel,
                      v: &VideoRecord,
                      scope: PairScope|
         -> crate::error::Result<Encoded> {
            let mut ctx = EncodeCtx::eval(g);
            Ok(match kind {
                ModelKind::Hammer => {
                    Encoded::Hammer(encode_hammer(&mut ctx, bm, v, tokens, scope, None)?)
                }
                ModelKind::Flat => {
                    Encoded::Flat(encode_flat(&mut ctx, bm, v, tokens, scope, None)?)
                }
            })
        };
        let pos = encode(&mut g, &bm, &videos[0], PairScope::Full)?;
        let neg = encode(&mut g, &bm, &videos[1], PairScope::Score)?;
        let s_pos = vr_score(&mut g, &bm, &pos)?;
        let s_neg = vr_score(&mut g, &bm, &neg)?;
        let vr = vr_loss(&mut g, &[s_pos, s_neg])?;
        let tl = tl_loss(&mut g, &bm, &pos, Segment::new(1, 3)?)?;
        let mlm = mlm_loss(&mut g, &bm, &pos, &[0], &[tokens[0]], MlmFlags::default())?;
        let total = total_loss(&mut g, vr, tl, mlm, &TaskWeights::default())?;
        Ok(g.value(total)[0])
    }

    fn check_head_gradients(kind: ModelKind) {
        let cfg = tiny_cfg(None);
        let model = Model::init(cfg.clone(), kind, 13).unwrap();
        let videos =
            [rand_video("a", 5, 3, None, 31), rand_video("b", 5, 3, None, 32)];
        let tokens = [2u32, 6];

        let mut g = Graph::new();
        let bm = bind(&mut g, &model, true).unwrap();
        let encode = |g: &mut Graph, bm: &BoundModel, v: &VideoRecord, scope: PairScope| {
            let mut ctx = EncodeCtx::eval(g);
            match kind {
                ModelKind::Hammer => Encoded::Hammer(
                    encode_hammer(&mut ctx, bm, v, &tokens, scope, None).unwrap(),
                ),
                ModelKind::Flat => {
                    Encoded::Flat(encode_flat(&mut ctx, bm, v, &tokens, scope, None).unwrap())
                }
            }
        };
        let pos = encode(&mut g, &bm, &videos[0], PairScope::Full);
        let neg = encode(&mut g, &bm, &videos[1], PairScope::Score);
        let s_pos = vr_score(&mut g, &bm, &pos).unwrap();
        let s_neg = vr_score(&mut g, &bm, &neg).unwrap();
        let vr = vr_loss(&mut g, &[s_pos, s_neg]).unwrap();
        let tl = tl_loss(&mut g, &bm, &pos, Segment::new(1, 3).unwrap()).unwrap();
        let mlm =
            mlm_loss(&mut g, &bm, &pos, &[0], &[tokens[0]], MlmFlags::default()).unwrap();
        let total = total_loss(&mut g, vr, tl, mlm, &TaskWeights::default()).unwrap();
        g.backward(total).unwrap();
        let analytic: Vec<Vec<f64>> =
            bm.param_nodes().iter().map(|&id| g.grad(id)).collect();

        let mut rng = derive(5, Stream::GradCheck, 0);
        let coords = sample_coords(&model.params, 1, &mut rng);
        let mut params = model.params.clone();
        let mut f =
            |p: &ParamSet| head_loss_of(&cfg, kind, p, &videos, &tokens);
        let max_rel =
            finite_diff_check(&mut params, &analytic, &mut f, 1e-5, &coords).unwrap();
        assert!(max_rel <= 1e-3, "max relative gradient error {max_rel}");
    }

    #[test]
    fn head_gradients_match_finite_differences_hierarchical() {
        check_head_gradients(ModelKind::Hammer);
    }

    #[test]
    fn head_gradients_match_finite_differences_flat() {
        check_head_gradients(ModelKind::Flat);
    }
}
