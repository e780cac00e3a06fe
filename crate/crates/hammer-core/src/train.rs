//! Training loop: Adam, learning-rate schedule, gradient clipping, and
//! the batched multi-task objective with in-batch negatives.
//!
//! Every batch builds one fresh graph: each example's (masked) query and
//! video are encoded once, the cheap per-pair fusion runs for every
//! query/video combination in the batch, and the three objectives are
//! averaged over examples. All randomness (batch order, masking,
//! dropout) derives from the run seed, so runs are exactly reproducible.

use alloc::borrow::Cow;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{batch_plan, Dataset};
use crate::encoder::{
    bind, encode_pair, subsample_video, text_stack, vis_stack, BoundModel, EncodeCtx,
    EncodeKind, EncodeStats, Encoded, Model, PairScope, VideoRecord,
};
use crate::error::{Error, Result};
use crate::heads::{
    apply_mask, mlm_loss, tl_loss, tl_loss_framewise3way, total_loss, vr_loss, vr_score,
    MaskedQuery, MlmFlags, TaskWeights,
};
use crate::infer::{localize, mlvc_retrieve, rank_corpus, DecodeMode, ScoredCandidate};
use crate::metrics::{rank_of_true, temporal_iou, EvalRecord};
use crate::rng::{derive, Stream};
use crate::tensor::{Graph, NodeId, ParamSet};
use crate::types::Segment;

/// Piecewise learning rate over normalized progress in (0, 1]:
/// linear warmup to `max_lr` over the first tenth, flat until halfway,
/// a tenth of `max_lr` until three quarters, then a hundredth.
pub fn lr_schedule(progress: f64, max_lr: f64) -> f64 {
    let p = progress.clamp(0.0, 1.0);
    if p <= 0.1 {
        max_lr * (p / 0.1)
    } else if p <= 0.8 {
        max_lr
    } else if p <= 0.95 {
        max_lr * 0.1
    } else {
        max_lr * 0.01
    }
}

/// Scale gradients down to a global L2 norm of `max_norm` when they
/// exceed it. Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let sq: f64 = grads.iter().flatten().map(|g| g * g).sum();
    let norm = libm::sqrt(sq);
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.iter_mut() {
                *x *= k;
            }
        }
    }
    norm
}

/// Adam optimizer state (first/second moment estimates per coordinate,
/// with bias correction).
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(params: &ParamSet) -> Adam {
        let zeros: Vec<Vec<f64>> =
            params.iter().map(|(_, t)| alloc::vec![0.0; t.numel()]).collect();
        Adam { m: zeros.clone(), v: zeros, t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// One update: `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if grads.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::contract(format!(
                "optimizer holds {} tensors but got {} gradients for {} parameters",
                self.m.len(),
                grads.len(),
                params.len()
            )));
        }
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for i in 0..grads.len() {
            let data = params.tensor_mut(i).data_mut();
            if grads[i].len() != data.len() {
                return Err(Error::contract(format!(
                    "gradient {} has {} coordinates for a {}-coordinate tensor",
                    i,
                    grads[i].len(),
                    data.len()
                )));
            }
            for (j, &g) in grads[i].iter().enumerate() {
                let m = &mut self.m[i][j];
                let v = &mut self.v[i][j];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                data[j] -= lr * m_hat / (libm::sqrt(v_hat) + self.eps);
            }
        }
        Ok(())
    }
}

/// Knobs for one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub max_lr: f64,
    pub clip_norm: f64,
    pub weights: TaskWeights,
    pub mlm_flags: MlmFlags,
    pub mask_rate: f64,
    /// Use the per-frame begin/end/outside localization loss instead of
    /// the boundary-distribution loss.
    pub tl_framewise3way: bool,
    /// A finite batch loss above this counts as divergence.
    pub divergence_threshold: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 64,
            max_lr: 4e-5,
            clip_norm: 1.0,
            weights: TaskWeights::default(),
            mlm_flags: MlmFlags::default(),
            mask_rate: 0.15,
            tl_framewise3way: false,
            divergence_threshold: 1e3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config(String::from("epochs must be >= 1")));
        }
        if self.batch_size < 2 {
            return Err(Error::config(String::from("batch_size must be >= 2")));
        }
        if !(self.max_lr > 0.0 && self.max_lr.is_finite()) {
            return Err(Error::config(String::from("max_lr must be finite and > 0")));
        }
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return Err(Error::config(String::from("clip_norm must be finite and > 0")));
        }
        if !(0.0..=1.0).contains(&self.mask_rate) {
            return Err(Error::config(format!("mask_rate {} outside [0,1]", self.mask_rate)));
        }
        if !(self.divergence_threshold > 0.0) {
            return Err(Error::config(String::from("divergence_threshold must be > 0")));
        }
        let w = &self.weights;
        for (v, name) in [(w.vr, "vr"), (w.tl, "tl"), (w.mlm, "mlm")] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(format!("task weight {name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// One optimization step's diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub vr: f64,
    pub tl: f64,
    pub mlm: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// Progress hook; the default implementations ignore everything.
pub trait TrainObserver {
    fn on_step(&mut self, _record: &HistoryRecord) {}

    /// Called after each completed epoch with the current parameters,
    /// e.g. to snapshot a checkpoint or measure held-out metrics. An
    /// error aborts the run.
    fn on_epoch(&mut self, _epoch: usize, _model: &Model) -> Result<()> {
        Ok(())
    }
}

/// Observer that does nothing.
pub struct Quiet;

impl TrainObserver for Quiet {}

/// A finished (or aborted) training run.
#[derive(Debug)]
pub struct TrainRun {
    /// Trained parameters; on divergence, the last parameters that
    /// produced a healthy loss.
    pub model: Model,
    pub history: Vec<HistoryRecord>,
    /// Step index at which the loss became non-finite or crossed the
    /// divergence threshold, if that happened.
    pub diverged: Option<usize>,
}

struct PreparedExample<'a> {
    masked: MaskedQuery,
    video: Cow<'a, VideoRecord>,
    segment: Segment,
}

/// One batch entry, fully preprocessed: the query already masked, the
/// video already within the model's frame limit, the segment on the
/// video's (possibly subsampled) frame axis.
pub struct BatchExample<'a> {
    pub input_ids: &'a [u32],
    pub mask_positions: &'a [usize],
    pub mask_targets: &'a [u32],
    pub video: &'a VideoRecord,
    pub segment: Segment,
}

/// The combined objective and its components for one batch.
#[derive(Debug, Clone, Copy)]
pub struct BatchLossNodes {
    pub total: NodeId,
    pub vr: NodeId,
    pub tl: NodeId,
    pub mlm: NodeId,
}

/// Build the multi-task batch loss on `ctx`'s graph: every query and
/// video is encoded once, every query/video pair is fused (the diagonal
/// at full scope, off-diagonal pairs at scoring scope for in-batch
/// negatives), and each objective is averaged over examples. Components
/// with zero weight (or, for retrieval, a batch without negatives) are
/// skipped and contribute a detached zero.
pub fn batch_loss(
    ctx: &mut EncodeCtx,
    bm: &BoundModel,
    examples: &[BatchExample],
    weights: &TaskWeights,
    mlm_flags: MlmFlags,
    tl_framewise3way: bool,
) -> Result<BatchLossNodes> {
    let b = examples.len();
    if b == 0 {
        return Err(Error::contract(String::from("cannot build a loss over an empty batch")));
    }
    let need_vr = weights.vr > 0.0 && b >= 2;
    let need_tl = weights.tl > 0.0;
    let need_mlm = weights.mlm > 0.0;

    let mut texts = Vec::with_capacity(b);
    let mut stacks = Vec::with_capacity(b);
    for ex in examples {
        texts.push(text_stack(ctx, bm, ex.input_ids)?);
    }
    for ex in examples {
        stacks.push(vis_stack(ctx, bm, ex.video)?);
    }
    let mut pairs: Vec<Option<Encoded>> = (0..b * b).map(|_| None).collect();
    for i in 0..b {
        for j in 0..b {
            if i != j && !need_vr {
                continue;
            }
            let scope = if i == j { PairScope::Full } else { PairScope::Score };
            let enc = encode_pair(
                ctx,
                bm,
                &texts[i],
                &stacks[j].0,
                stacks[j].1.as_ref(),
                scope,
                None,
            )?;
            pairs[i * b + j] = Some(enc);
        }
    }

    let g = &mut *ctx.g;
    let inv_b = 1.0 / b as f64;
    let pair = |i: usize, j: usize| pairs[i * b + j].as_ref().expect("pair encoded");

    let vr = if need_vr {
        let mut per = Vec::with_capacity(b);
        for i in 0..b {
            let mut scores = Vec::with_capacity(b);
            scores.push(vr_score(g, bm, pair(i, i))?);
            for j in 0..b {
                if j != i {
                    scores.push(vr_score(g, bm, pair(i, j))?);
                }
            }
            per.push((vr_loss(g, &scores)?, inv_b));
        }
        g.weighted_sum(&per)?
    } else {
        g.constant_scalar(0.0)
    };

    let tl = if need_tl {
        let mut per = Vec::with_capacity(b);
        for (i, ex) in examples.iter().enumerate() {
            let l = if tl_framewise3way {
                tl_loss_framewise3way(g, bm, pair(i, i), ex.segment)?
            } else {
                tl_loss(g, bm, pair(i, i), ex.segment)?
            };
            per.push((l, inv_b));
        }
        g.weighted_sum(&per)?
    } else {
        g.constant_scalar(0.0)
    };

    let mlm = if need_mlm {
        let mut per = Vec::with_capacity(b);
        for (i, ex) in examples.iter().enumerate() {
            let l = mlm_loss(g, bm, pair(i, i), ex.mask_positions, ex.mask_targets, mlm_flags)?;
            per.push((l, inv_b));
        }
        g.weighted_sum(&per)?
    } else {
        g.constant_scalar(0.0)
    };

    let comp = [g.value(vr)[0], g.value(tl)[0], g.value(mlm)[0]];
    let total = if comp.iter().all(|x| x.is_finite()) {
        total_loss(g, vr, tl, mlm, weights)?
    } else {
        // keep a valid node; the caller inspects the component values
        g.constant_scalar(f64::NAN)
    };
    Ok(BatchLossNodes { total, vr, tl, mlm })
}

/// Train `model` on the training split of `data`.
pub fn train(
    mut model: Model,
    data: &Dataset,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainRun> {
    cfg.validate()?;
    if let Some(da) = model.config.d_aux {
        if data.d_aux != Some(da) {
            return Err(Error::config(format!(
                "model expects a {da}-wide auxiliary stream but the dataset offers {:?}",
                data.d_aux
            )));
        }
    }
    let pool = data.split_indices(false);
    if pool.is_empty() {
        return Err(Error::config(String::from("dataset has no training examples")));
    }

    // pre-enumerate every epoch's batches so total progress is known
    let mut plans = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = derive(cfg.seed, Stream::Batch, epoch as u64);
        plans.push(batch_plan(&data.examples, &pool, cfg.batch_size, &mut rng)?);
    }
    let total_steps: usize = plans.iter().map(|p| p.len()).sum();

    let mut adam = Adam::new(&model.params);
    let mut history: Vec<HistoryRecord> = Vec::with_capacity(total_steps);
    let mut gstep = 0usize;

    for (epoch, plan) in plans.iter().enumerate() {
        for batch in plan {
            let b = batch.len();
            let mut mask_rng = derive(cfg.seed, Stream::Mask, gstep as u64);
            let mut prepared: Vec<PreparedExample> = Vec::with_capacity(b);
            for &idx in batch {
                let ex = &data.examples[idx];
                let masked = apply_mask(&ex.tokens, &data.vocab, cfg.mask_rate, &mut mask_rng)?;
                let video = &data.videos[ex.video_index];
                let (video, segment) = match subsample_video(video, model.config.n_max)? {
                    Some((sub, map)) => (Cow::Owned(sub), map.remap(ex.segment)?),
                    None => (Cow::Borrowed(video), ex.segment),
                };
                prepared.push(PreparedExample { masked, video, segment });
            }

            let exs: Vec<BatchExample> = prepared
                .iter()
                .map(|p| BatchExample {
                    input_ids: &p.masked.input_ids,
                    mask_positions: &p.masked.positions,
                    mask_targets: &p.masked.targets,
                    video: &p.video,
                    segment: p.segment,
                })
                .collect();

            let mut g = Graph::new();
            let bm = bind(&mut g, &model, true)?;
            let mut drop_rng = derive(cfg.seed, Stream::Dropout, gstep as u64);
            let mut ctx = EncodeCtx::train(&mut g, &mut drop_rng, model.config.dropout);
            let nodes = batch_loss(
                &mut ctx,
                &bm,
                &exs,
                &cfg.weights,
                cfg.mlm_flags,
                cfg.tl_framewise3way,
            )?;

            let comp = [g.value(nodes.vr)[0], g.value(nodes.tl)[0], g.value(nodes.mlm)[0]];
            if comp.iter().any(|x| !x.is_finite()) {
                return Ok(TrainRun { model, history, diverged: Some(gstep) });
            }
            let loss_val = g.value(nodes.total)[0];
            if !loss_val.is_finite() || loss_val > cfg.divergence_threshold {
                return Ok(TrainRun { model, history, diverged: Some(gstep) });
            }

            g.backward(nodes.total)?;
            let mut grads: Vec<Vec<f64>> =
                bm.param_nodes().iter().map(|&id| g.grad(id)).collect();
            if grads.iter().flatten().any(|x| !x.is_finite()) {
                return Ok(TrainRun { model, history, diverged: Some(gstep) });
            }
            let grad_norm = clip_global_norm(&mut grads, cfg.clip_norm);
            let lr = lr_schedule((gstep + 1) as f64 / total_steps as f64, cfg.max_lr);
            adam.step(&mut model.params, &grads, lr)?;

            let record = HistoryRecord {
                epoch,
                step: gstep,
                lr,
                loss: loss_val,
                vr: comp[0],
                tl: comp[1],
                mlm: comp[2],
                grad_norm,
            };
            observer.on_step(&record);
            history.push(record);
            gstep += 1;
        }
        observer.on_epoch(epoch, &model)?;
    }

    Ok(TrainRun { model, history, diverged: None })
}

/// Everything measured for one heldout query: the summary record that
/// feeds the metric computations, plus the ranked-and-localized top-k
/// candidates and the boundary predicted for the true video (when one
/// was produced — see [`evaluate_query`]).
#[derive(Debug, Clone)]
pub struct QueryEval {
    pub record: EvalRecord,
    pub candidates: Vec<ScoredCandidate>,
    pub true_video_segment: Option<Segment>,
}

pub fn evaluate_model(
    model: &Model,
    data: &Dataset,
    indices: &[usize],
    k: usize,
    stats: Option<&EncodeStats>,
) -> Result<Vec<QueryEval>> {
    let mut out = Vec::with_capacity(indices.len());
    for &idx in indices {
        out.push(evaluate_query(model, data, idx, k, stats, DecodeMode::Joint)?);
    }
    Ok(out)
}

/// Score one query against the whole corpus, then localize.
///
/// With `k >= 1` this is the two-stage retrieval path: rank every video,
/// localize the top-`k`, and spend not one encoder pass more — exactly
/// `|V| + min(k, |V|)` per query. The true video's boundary (and hence
/// its IoU) comes from the candidate list; a true video that failed to
/// reach the top-`k` is a localization miss (IoU 0), never a reason to
/// run an extra pass. Choosing `k >= |V|` localizes everything, making
/// the boundary metrics independent of retrieval.
///
/// With `k == 0` no candidate list is produced; the true video alone is
/// localized, giving the boundary-only evaluation used for training
/// progress checks.
pub fn evaluate_query(
    model: &Model,
    data: &Dataset,
    idx: usize,
    k: usize,
    stats: Option<&EncodeStats>,
    mode: DecodeMode,
) -> Result<QueryEval> {
    let ex = data
        .examples
        .get(idx)
        .ok_or(Error::Index { op: "evaluate", index: idx, len: data.examples.len() })?;
    let video = &data.videos[ex.video_index];

    let (rank, candidates, true_seg) = if k == 0 {
        let ranked = rank_corpus(model, &data.videos, &ex.tokens, stats)?;
        let ids: Vec<&str> = ranked.iter().map(|r| r.video_id.as_str()).collect();
        let rank = rank_of_true(&ids, &ex.video_id, data.videos.len());
        let cand = localize(model, video, &ex.tokens, stats, EncodeKind::TlEval, mode)?;
        (rank, Vec::new(), Some(cand.segment))
    } else {
        let res = mlvc_retrieve(model, &data.videos, &ex.tokens, k, stats, mode)?;
        let ids: Vec<&str> = res.ranking.iter().map(|r| r.video_id.as_str()).collect();
        let rank = rank_of_true(&ids, &ex.video_id, data.videos.len());
        let true_seg =
            res.candidates.iter().find(|c| c.video_id == ex.video_id).map(|c| c.segment);
        (rank, res.candidates, true_seg)
    };

    Ok(QueryEval {
        record: EvalRecord {
            query_id: ex.query_id.clone(),
            video_duration_frames: video.n_frames,
            rank,
            tl_iou: true_seg.map_or(0.0, |s| temporal_iou(s, ex.segment)),
        },
        candidates,
        true_video_segment: true_seg,
    })
}
