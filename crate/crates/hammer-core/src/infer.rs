//! Inference: boundary decoding, corpus ranking, and retrieve-then-localize.
//!
//! Decoding and ranking are exactly deterministic, with documented tie
//! rules, so identical inputs always reproduce identical outputs. The
//! expensive text encoding is shared across a whole corpus sweep; only
//! the per-pair fusion runs once per candidate video.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::encoder::{
    bind, encode_pair, subsample_video, text_stack, vis_stack, EncodeCtx, EncodeKind,
    EncodeStats, Model, PairScope, VideoRecord,
};
use crate::error::{Error, Result};
use crate::heads::{tl_boundary_logits, vr_score};
use crate::tensor::Graph;
use crate::types::Segment;

fn check_prob_axis(name: &str, p: &[f64]) -> Result<()> {
    if p.len() < 2 {
        return Err(Error::input(format!(
            "{name} needs at least 2 frames, found {}",
            p.len()
        )));
    }
    for &x in p {
        if !x.is_finite() || x < 0.0 {
            return Err(Error::input(format!("{name} contains an invalid probability {x}")));
        }
    }
    Ok(())
}

/// Most probable segment under independent start/end distributions,
/// maximizing `ps[s] * pe[e]` over `s < e`.
///
/// Ties resolve to the smallest start, then the smallest end, so the
/// result is the lexicographically first maximizer.
pub fn decode_joint(ps: &[f64], pe: &[f64]) -> Result<Segment> {
    check_prob_axis("start distribution", ps)?;
    check_prob_axis("end distribution", pe)?;
    if ps.len() != pe.len() {
        return Err(Error::input(format!(
            "start and end distributions disagree on length: {} vs {}",
            ps.len(),
            pe.len()
        )));
    }
    let n = ps.len();
    // best_end[e] = smallest argmax of pe over [e, n)
    let mut best_end = alloc::vec![0usize; n];
    best_end[n - 1] = n - 1;
    for e in (0..n - 1).rev() {
        best_end[e] = if pe[e] >= pe[best_end[e + 1]] { e } else { best_end[e + 1] };
    }
    let mut best = (0usize, best_end[1]);
    let mut best_p = ps[0] * pe[best_end[1]];
    for s in 1..n - 1 {
        let e = best_end[s + 1];
        let p = ps[s] * pe[e];
        if p > best_p {
            best_p = p;
            best = (s, e);
        }
    }
    Segment::new(best.0, best.1)
}

/// Independent argmax decoding with a minimal repair when the argmaxes
/// are not ordered: keep whichever endpoint loses less probability mass.
/// Ties at every stage resolve to the smallest index.
pub fn decode_greedy_repair(ps: &[f64], pe: &[f64]) -> Result<Segment> {
    check_prob_axis("start distribution", ps)?;
    check_prob_axis("end distribution", pe)?;
    if ps.len() != pe.len() {
        return Err(Error::input(format!(
            "start and end distributions disagree on length: {} vs {}",
            ps.len(),
            pe.len()
        )));
    }
    let n = ps.len();
    let argmax_first = |p: &[f64]| {
        let mut best = 0;
        for (i, &x) in p.iter().enumerate() {
            if x > p[best] {
                best = i;
            }
        }
        best
    };
    let s = argmax_first(ps);
    let e = argmax_first(pe);
    if e > s {
        return Segment::new(s, e);
    }
    // keep the start: best end strictly after it
    let cand_a = (s + 1 < n).then(|| {
        let e2 = s + 1 + argmax_first(&pe[s + 1..]);
        (s, e2, ps[s] * pe[e2])
    });
    // keep the end: best start strictly before it
    let cand_b = (e > 0).then(|| {
        let s2 = argmax_first(&ps[..e]);
        (s2, e, ps[s2] * pe[e])
    });
    match (cand_a, cand_b) {
        (Some(a), Some(b)) => {
            let (s, e, _) = if b.2 > a.2 { b } else { a };
            Segment::new(s, e)
        }
        (Some((s, e, _)), None) | (None, Some((s, e, _))) => Segment::new(s, e),
        (None, None) => decode_joint(ps, pe),
    }
}

/// Log-softmax over a logit vector (host-side, no graph).
fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + libm::log(logits.iter().map(|&x| libm::exp(x - m)).sum::<f64>());
    logits.iter().map(|&x| x - lse).collect()
}

/// One video's position in a corpus ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedVideo {
    pub video_id: String,
    /// Index into the corpus slice handed to `rank_corpus`.
    pub index: usize,
    pub score: f64,
}

/// Score every video against one query and sort best-first. Ties break
/// toward the lexicographically smaller video id, so rankings are total
/// and reproducible. The query is encoded once and shared across pairs.
pub fn rank_corpus(
    model: &Model,
    videos: &[VideoRecord],
    tokens: &[u32],
    stats: Option<&EncodeStats>,
) -> Result<Vec<RankedVideo>> {
    if videos.is_empty() {
        return Err(Error::input(String::from("cannot rank an empty corpus")));
    }
    let mut g = Graph::new();
    let bm = bind(&mut g, model, false)?;
    let mut ctx = EncodeCtx::eval(&mut g);
    let text = text_stack(&mut ctx, &bm, tokens)?;
    let mut ranked = Vec::with_capacity(videos.len());
    for (index, video) in videos.iter().enumerate() {
        let fitted;
        let video = match subsample_video(video, model.config.n_max)? {
            Some((sub, _)) => {
                fitted = sub;
                &fitted
            }
            None => video,
        };
        let mut ctx = EncodeCtx::eval(&mut g);
        let (vis, aux) = vis_stack(&mut ctx, &bm, video)?;
        let enc = encode_pair(
            &mut ctx,
            &bm,
            &text,
            &vis,
            aux.as_ref(),
            PairScope::Score,
            stats.map(|s| (s, EncodeKind::Rank)),
        )?;
        let score_node = vr_score(&mut g, &bm, &enc)?;
        let score = g.scalar_value(score_node)?;
        if !score.is_finite() {
            return Err(Error::numeric(format!(
                "match score for video {} is not finite",
                video.video_id
            )));
        }
        ranked.push(RankedVideo { video_id: video.video_id.clone(), index, score });
    }
    ranked.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("scores checked finite")
            .then_with(|| a.video_id.cmp(&b.video_id))
    });
    Ok(ranked)
}

/// A localized segment in one video, with both ranking evidence
/// (`video_score`) and boundary evidence (`pair_score`, the log
/// probability of the decoded boundaries).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub video_id: String,
    pub segment: Segment,
    pub video_score: f64,
    pub pair_score: f64,
}

/// How boundary distributions are turned into one segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecodeMode {
    /// Maximize the start/end probability product over all valid pairs.
    #[default]
    Joint,
    /// Take each boundary's argmax independently, repairing invalid pairs.
    GreedyRepair,
}

impl DecodeMode {
    pub fn decode(self, ps: &[f64], pe: &[f64]) -> Result<Segment> {
        match self {
            DecodeMode::Joint => decode_joint(ps, pe),
            DecodeMode::GreedyRepair => decode_greedy_repair(ps, pe),
        }
    }
}

/// Decode the most probable segment of one video for one query. Videos
/// longer than the model's frame limit are subsampled and the decoded
/// span is reported on the original frame axis.
pub fn localize(
    model: &Model,
    video: &VideoRecord,
    tokens: &[u32],
    stats: Option<&EncodeStats>,
    kind: EncodeKind,
    mode: DecodeMode,
) -> Result<ScoredCandidate> {
    let mut g = Graph::new();
    let bm = bind(&mut g, model, false)?;
    let sub = subsample_video(video, model.config.n_max)?;
    let (working, map) = match &sub {
        Some((sub_video, map)) => (sub_video, Some(map)),
        None => (video, None),
    };
    let mut ctx = EncodeCtx::eval(&mut g);
    let text = text_stack(&mut ctx, &bm, tokens)?;
    let (vis, aux) = vis_stack(&mut ctx, &bm, working)?;
    let enc = encode_pair(
        &mut ctx,
        &bm,
        &text,
        &vis,
        aux.as_ref(),
        PairScope::Full,
        stats.map(|s| (s, kind)),
    )?;
    let video_score = {
        let node = vr_score(&mut g, &bm, &enc)?;
        g.scalar_value(node)?
    };
    let b = tl_boundary_logits(&mut g, &bm, &enc)?;
    let ls = log_softmax(g.value(b.start));
    let le = log_softmax(g.value(b.end));
    let seg = mode.decode(&softmax_of_log(&ls), &softmax_of_log(&le))?;
    let pair_score = ls[seg.start()] + le[seg.end()];
    let seg = match map {
        Some(m) => m.restore(seg)?,
        None => seg,
    };
    Ok(ScoredCandidate {
        video_id: video.video_id.clone(),
        segment: seg,
        video_score,
        pair_score,
    })
}

fn softmax_of_log(lp: &[f64]) -> Vec<f64> {
    lp.iter().map(|&x| libm::exp(x)).collect()
}

/// Full retrieval result for one query: the corpus ranking and localized
/// segments for the top `k` videos (in ranking order).
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub ranking: Vec<RankedVideo>,
    pub candidates: Vec<ScoredCandidate>,
}

/// Rank the corpus, then localize within the best `k` videos.
pub fn mlvc_retrieve(
    model: &Model,
    videos: &[VideoRecord],
    tokens: &[u32],
    k: usize,
    stats: Option<&EncodeStats>,
    mode: DecodeMode,
) -> Result<RetrievalResult> {
    if k == 0 {
        return Err(Error::config(String::from("retrieval depth k must be >= 1")));
    }
    let ranking = rank_corpus(model, videos, tokens, stats)?;
    let mut candidates = Vec::with_capacity(k.min(ranking.len()));
    for r in ranking.iter().take(k) {
        candidates.push(localize(
            model,
            &videos[r.index],
            tokens,
            stats,
            EncodeKind::Localize,
            mode,
        )?);
    }
    Ok(RetrievalResult { ranking, candidates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{AuxTrack, EncoderConfig, Model, ModelKind, SubsampleMap};
    use crate::rng::{derive, Stream};
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn joint_decoding_hand_examples() {
        let seg = decode_joint(&[0.1, 0.6, 0.3], &[0.7, 0.2, 0.1]).unwrap();
        assert_eq!((seg.start(), seg.end()), (1, 2));

        // uniform: lexicographically first pair wins
        let u = [0.25; 4];
        let seg = decode_joint(&u, &u).unwrap();
        assert_eq!((seg.start(), seg.end()), (0, 1));

        // point masses
        let mut ps = [0.0; 9];
        let mut pe = [0.0; 9];
        ps[2] = 1.0;
        pe[7] = 1.0;
        let seg = decode_joint(&ps, &pe).unwrap();
        assert_eq!((seg.start(), seg.end()), (2, 7));

        // all zeros still decodes deterministically
        let z = [0.0; 5];
        let seg = decode_joint(&z, &z).unwrap();
        assert_eq!((seg.start(), seg.end()), (0, 1));

        assert!(decode_joint(&[1.0], &[1.0]).is_err());
        assert!(decode_joint(&[0.5, 0.5], &[0.5, f64::NAN]).is_err());
        assert!(decode_joint(&[0.5, 0.5, 0.0], &[0.5, 0.5]).is_err());
    }

    fn brute_force(ps: &[f64], pe: &[f64]) -> (usize, usize) {
        let n = ps.len();
        let mut best = (0, 1);
        let mut best_p = -1.0;
        for s in 0..n - 1 {
            for e in s + 1..n {
                let p = ps[s] * pe[e];
                if p > best_p {
                    best_p = p;
                    best = (s, e);
                }
            }
        }
        best
    }

    #[test]
    fn joint_decoding_matches_brute_force_on_random_distributions() {
        let mut rng = derive(17, Stream::GradCheck, 1);
        for case in 0..250 {
            let n = 2 + (case % 11);
            let quantized = case % 3 == 0;
            let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
                let mut v: Vec<f64> = (0..n)
                    .map(|_| {
                        let x: f64 = rng.gen();
                        // zeros and ties appear often under quantization
                        if quantized { (x * 4.0).floor() / 4.0 } else { x }
                    })
                    .collect();
                let sum: f64 = v.iter().sum();
                if sum > 0.0 {
                    for x in &mut v {
                        *x /= sum;
                    }
                }
                v
            };
            let ps = draw(&mut rng);
            let pe = draw(&mut rng);
            let got = decode_joint(&ps, &pe).unwrap();
            let want = brute_force(&ps, &pe);
            assert_eq!(
                (got.start(), got.end()),
                want,
                "case {case}: ps={ps:?} pe={pe:?}"
            );
        }
    }

    #[test]
    fn greedy_repair_agrees_when_argmaxes_are_ordered_and_repairs_otherwise() {
        // ordered: identical to the plain argmaxes
        let seg = decode_greedy_repair(&[0.8, 0.1, 0.1], &[0.1, 0.1, 0.8]).unwrap();
        assert_eq!((seg.start(), seg.end()), (0, 2));

        // argmax start is the last frame and argmax end the first:
        // neither endpoint can be kept, so joint decoding takes over
        let ps = [0.1, 0.1, 0.8];
        let pe = [0.7, 0.2, 0.1];
        let seg = decode_greedy_repair(&ps, &pe).unwrap();
        assert_eq!((seg.start(), seg.end()), {
            let j = decode_joint(&ps, &pe).unwrap();
            (j.start(), j.end())
        });

        // repair with both options available: s*=1, e*=1 -> tie goes to
        // keeping the start when products match, else the better product
        let ps = [0.2, 0.6, 0.2];
        let pe = [0.1, 0.8, 0.1];
        let seg = decode_greedy_repair(&ps, &pe).unwrap();
        // cand_a = (1, 2): 0.6*0.1 = 0.06; cand_b = (0, 1): 0.2*0.8 = 0.16
        assert_eq!((seg.start(), seg.end()), (0, 1));
    }

    fn tiny_cfg() -> EncoderConfig {
        EncoderConfig {
            d_model: 4,
            heads: 2,
            text_layers: 1,
            visual_layers: 1,
            cross_modal_layers: 1,
            clip_length: 3,
            n_max: 6,
            max_query_len: 4,
            vocab_size: 8,
            d_visual: 3,
            d_aux: None,
            dropout: 0.0,
            ..EncoderConfig::default()
        }
    }

    fn rand_video(id: &str, n: usize, dv: usize, seed: u64) -> VideoRecord {
        let mut rng = derive(seed, Stream::VideoContent, 50);
        VideoRecord {
            video_id: String::from(id),
            n_frames: n,
            d_visual: dv,
            frames: (0..n * dv).map(|_| StandardNormal.sample(&mut rng)).collect(),
            aux: None,
        }
    }

    fn tiny_corpus(n_videos: usize) -> Vec<VideoRecord> {
        (0..n_videos).map(|i| rand_video(&format!("v{i:02}"), 5, 3, 100 + i as u64)).collect()
    }

    #[test]
    fn ranking_matches_independent_per_pair_scoring() {
        let cfg = tiny_cfg();
        let model = Model::init(cfg.clone(), ModelKind::Hammer, 42).unwrap();
        let videos = tiny_corpus(7);
        let tokens = [2u32, 5];
        let ranked = rank_corpus(&model, &videos, &tokens, None).unwrap();
        assert_eq!(ranked.len(), 7);

        // one isolated graph per pair must give the same scores
        for r in &ranked {
            let solo = rank_corpus(&model, &videos[r.index..r.index + 1], &tokens, None)
                .unwrap();
            assert_eq!(solo[0].score, r.score, "shared text stack changed a score");
        }

        // best-first order with total tie rule
        for w in ranked.windows(2) {
            assert!(
                w[0].score > w[1].score
                    || (w[0].score == w[1].score && w[0].video_id < w[1].video_id)
            );
        }
    }

    #[test]
    fn retrieval_counts_pair_encodings_exactly() {
        let cfg = tiny_cfg();
        let model = Model::init(cfg.clone(), ModelKind::Hammer, 42).unwrap();
        let videos = tiny_corpus(6);
        let tokens = [2u32, 5];
        let stats = EncodeStats::new();
        let k = 4;
        let result = mlvc_retrieve(&model, &videos, &tokens, k, Some(&stats), DecodeMode::Joint).unwrap();
        assert_eq!(result.ranking.len(), 6);
        assert_eq!(result.candidates.len(), 4);
        assert_eq!(stats.rank(), 6);
        assert_eq!(stats.localize(), 4);
        assert_eq!(stats.total(), 10);

        // k beyond the corpus clamps
        let stats = EncodeStats::new();
        let result = mlvc_retrieve(&model, &videos, &tokens, 50, Some(&stats), DecodeMode::Joint).unwrap();
        assert_eq!(result.candidates.len(), 6);
        assert_eq!(stats.localize(), 6);

        // candidates follow ranking order and carry finite evidence
        for (r, c) in result.ranking.iter().zip(&result.candidates) {
            assert_eq!(r.video_id, c.video_id);
            assert_eq!(r.score, c.video_score);
            assert!(c.pair_score.is_finite() && c.pair_score <= 0.0);
            assert!(c.segment.end() < 5);
        }
    }

    #[test]
    fn localization_is_deterministic_and_in_range() {
        let cfg = tiny_cfg();
        for kind in [ModelKind::Hammer, ModelKind::Flat] {
            let model = Model::init(cfg.clone(), kind, 9).unwrap();
            let video = rand_video("v", 6, 3, 4);
            let a = localize(&model, &video, &[2, 3], None, EncodeKind::TlEval, DecodeMode::Joint).unwrap();
            let b = localize(&model, &video, &[2, 3], None, EncodeKind::TlEval, DecodeMode::Joint).unwrap();
            assert_eq!(a, b);
            assert!(a.segment.end() < 6);

            // the alternative decoder is selectable and equally deterministic
            let g1 = localize(&model, &video, &[2, 3], None, EncodeKind::TlEval, DecodeMode::GreedyRepair)
                .unwrap();
            let g2 = localize(&model, &video, &[2, 3], None, EncodeKind::TlEval, DecodeMode::GreedyRepair)
                .unwrap();
            assert_eq!(g1, g2);
            assert!(g1.segment.end() < 6);
            assert_eq!(a.video_score.to_bits(), g1.video_score.to_bits());
        }
    }

    #[test]
    fn long_videos_are_subsampled_and_spans_restored() {
        let cfg = tiny_cfg(); // n_max = 6
        let model = Model::init(cfg.clone(), ModelKind::Hammer, 7).unwrap();
        let video = rand_video("v", 18, 3, 12);
        let c = localize(&model, &video, &[2, 3], None, EncodeKind::TlEval, DecodeMode::Joint).unwrap();
        // restored span lives on the original axis, at kept-frame indices
        assert!(c.segment.end() < 18);
        let map = SubsampleMap { orig_n: 18, new_n: 6 };
        assert_eq!(map.restore(Segment::new(1, 3).unwrap()).unwrap(), Segment::new(3, 9).unwrap());
        assert!(map.restore(Segment::new(1, 6).unwrap()).is_err());

        // ranking also accepts over-length videos
        let mixed = alloc::vec![rand_video("a", 18, 3, 1), rand_video("b", 4, 3, 2)];
        let ranked = rank_corpus(&model, &mixed, &[2, 3], None).unwrap();
        assert_eq!(ranked.len(), 2);
    }

    #[test]
    fn log_softmax_is_normalized_and_shift_invariant() {
        let lp = log_softmax(&[1.0, 2.0, 3.0]);
        let total: f64 = lp.iter().map(|&x| libm::exp(x)).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let shifted = log_softmax(&[101.0, 102.0, 103.0]);
        for (a, b) in lp.iter().zip(&shifted) {
            assert!((a - b).abs() < 1e-9);
        }
        let sm = softmax_of_log(&log_softmax(&[0.0, 0.0]));
        assert!((sm[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn aux_videos_flow_through_retrieval() {
        let cfg = EncoderConfig { d_aux: Some(2), ..tiny_cfg() };
        let model = Model::init(cfg.clone(), ModelKind::Hammer, 3).unwrap();
        let mut rng = derive(5, Stream::VideoContent, 9);
        let videos: Vec<VideoRecord> = (0..3)
            .map(|i| {
                let n = 5;
                VideoRecord {
                    video_id: format!("v{i}"),
                    n_frames: n,
                    d_visual: 3,
                    frames: (0..n * 3).map(|_| StandardNormal.sample(&mut rng)).collect(),
                    aux: Some(AuxTrack {
                        d: 2,
                        frames: (0..n * 2).map(|_| StandardNormal.sample(&mut rng)).collect(),
                    }),
                }
            })
            .collect();
        let out = mlvc_retrieve(&model, &videos, &[2, 4], 2, None, DecodeMode::Joint).unwrap();
        assert_eq!(out.candidates.len(), 2);
    }
}
