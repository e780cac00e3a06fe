//! Residual transformer layers assembled from graph primitives.
//!
//! All layers are post-norm: `x1 = LN(x + Drop(Att(x)))`, then
//! `y = LN(x1 + Drop(FFN(x1)))` with an exact-GELU feed-forward.

use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::encoder::params::{AttnIdx, BoundModel, CrossIdx, LayerIdx};
use crate::error::Result;
use crate::tensor::{scaled_dot_attention, Graph, NodeId};

pub const LN_EPS: f64 = 1e-5;

/// Graph handle plus the dropout policy for this encoding pass. Built in
/// evaluation mode dropout is the identity and consumes no randomness.
pub struct EncodeCtx<'a> {
    pub g: &'a mut Graph,
    rng: Option<&'a mut ChaCha8Rng>,
    rate: f64,
}

impl<'a> EncodeCtx<'a> {
    pub fn eval(g: &'a mut Graph) -> Self {
        EncodeCtx { g, rng: None, rate: 0.0 }
    }

    pub fn train(g: &'a mut Graph, rng: &'a mut ChaCha8Rng, rate: f64) -> Self {
        EncodeCtx { g, rng: Some(rng), rate }
    }

    pub fn dropout(&mut self, x: NodeId) -> Result<NodeId> {
        match &mut self.rng {
            Some(rng) if self.rate > 0.0 => self.g.dropout(x, self.rate, rng),
            _ => Ok(x),
        }
    }
}

/// Multi-head attention with learned projections. `key_ok[j] == false`
/// removes key `j` from every query's attention distribution.
pub fn mha(
    ctx: &mut EncodeCtx,
    bm: &BoundModel,
    a: &AttnIdx,
    q_in: NodeId,
    kv_in: NodeId,
    key_ok: Option<&[bool]>,
) -> Result<NodeId> {
    let heads = bm.model.config.heads;
    let d = bm.model.config.d_model;
    let dh = d / heads;

    let q = {
        let m = ctx.g.matmul(q_in, bm.id(a.wq))?;
        ctx.g.add_row(m, bm.id(a.bq))?
    };
    let k = {
        let m = ctx.g.matmul(kv_in, bm.id(a.wk))?;
        ctx.g.add_row(m, bm.id(a.bk))?
    };
    let v = {
        let m = ctx.g.matmul(kv_in, bm.id(a.wv))?;
        ctx.g.add_row(m, bm.id(a.bv))?
    };

    let (lq, _) = ctx.g.dims(q);
    let (lk, _) = ctx.g.dims(k);
    let full_mask: Option<Vec<bool>> = key_ok.map(|ko| {
        debug_assert_eq!(ko.len(), lk);
        let mut m = Vec::with_capacity(lq * lk);
        for _ in 0..lq {
            m.extend_from_slice(ko);
        }
        m
    });

    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = ctx.g.slice_cols(q, h * dh, dh)?;
        let kh = ctx.g.slice_cols(k, h * dh, dh)?;
        let vh = ctx.g.slice_cols(v, h * dh, dh)?;
        outs.push(scaled_dot_attention(ctx.g, qh, kh, vh, full_mask.as_deref())?);
    }
    let cat = ctx.g.concat_cols(&outs)?;
    let o = {
        let m = ctx.g.matmul(cat, bm.id(a.wo))?;
        ctx.g.add_row(m, bm.id(a.bo))?
    };
    ctx.dropout(o)
}

/// Residual + norm + feed-forward half of a layer, applied after an
/// attention output `att` has been computed for input `x`.
pub fn finish_layer(
    ctx: &mut EncodeCtx,
    bm: &BoundModel,
    l: &LayerIdx,
    x: NodeId,
    att: NodeId,
) -> Result<NodeId> {
    let s = ctx.g.add(x, att)?;
    let x1 = ctx.g.layer_norm(s, bm.id(l.ln1_g), bm.id(l.ln1_b), LN_EPS)?;
    let h = {
        let m = ctx.g.matmul(x1, bm.id(l.ff_w1))?;
        let m = ctx.g.add_row(m, bm.id(l.ff_b1))?;
        ctx.g.gelu(m)?
    };
    let f = {
        let m = ctx.g.matmul(h, bm.id(l.ff_w2))?;
        ctx.g.add_row(m, bm.id(l.ff_b2))?
    };
    let f = ctx.dropout(f)?;
    let s2 = ctx.g.add(x1, f)?;
    ctx.g.layer_norm(s2, bm.id(l.ln2_g), bm.id(l.ln2_b), LN_EPS)
}

/// Self-attention layer over `x` with optional key masking.
pub fn self_layer(
    ctx: &mut EncodeCtx,
    bm: &BoundModel,
    l: &LayerIdx,
    x: NodeId,
    key_ok: Option<&[bool]>,
) -> Result<NodeId> {
    let att = mha(ctx, bm, &l.attn, x, x, key_ok)?;
    finish_layer(ctx, bm, l, x, att)
}

/// Layer whose queries come from `x` and keys/values from another
/// sequence.
pub fn cross_attend_layer(
    ctx: &mut EncodeCtx,
    bm: &BoundModel,
    l: &LayerIdx,
    x: NodeId,
    kv: NodeId,
    key_ok: Option<&[bool]>,
) -> Result<NodeId> {
    let att = mha(ctx, bm, &l.attn, x, kv, key_ok)?;
    finish_layer(ctx, bm, l, x, att)
}

/// Text-side cross layer: attention over the visual sequence, plus —
/// when the auxiliary stream is wired in — a second attention over the
/// auxiliary sequence summed in before the shared residual/FFN.
pub fn text_cross_layer(
    ctx: &mut EncodeCtx,
    bm: &BoundModel,
    cl: &CrossIdx,
    text: NodeId,
    vis: NodeId,
    vis_ok: &[bool],
    aux: Option<(NodeId, &[bool])>,
) -> Result<NodeId> {
    let mut att = mha(ctx, bm, &cl.t2v.attn, text, vis, Some(vis_ok))?;
    if let (Some((aseq, aok)), Some(t2a)) = (aux, cl.t2a.as_ref()) {
        let att_a = mha(ctx, bm, t2a, text, aseq, Some(aok))?;
        att = ctx.g.add(att, att_a)?;
    }
    finish_layer(ctx, bm, &cl.t2v, text, att)
}

/// One full bidirectional exchange: each stream attends into the other's
/// pre-update state.
pub fn cross_exchange(
    ctx: &mut EncodeCtx,
    bm: &BoundModel,
    cl: &CrossIdx,
    text: NodeId,
    vis: NodeId,
    vis_ok: &[bool],
    aux: Option<(NodeId, &[bool])>,
) -> Result<(NodeId, NodeId, Option<NodeId>)> {
    let t_new = text_cross_layer(ctx, bm, cl, text, vis, vis_ok, aux)?;
    let v_new = cross_attend_layer(ctx, bm, &cl.v2t, vis, text, None)?;
    let a_new = match (aux, cl.a2t.as_ref()) {
        (Some((aseq, _)), Some(l)) => Some(cross_attend_layer(ctx, bm, l, aseq, text, None)?),
        _ => None,
    };
    Ok((t_new, v_new, a_new))
}
