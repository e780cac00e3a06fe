//! Retrieval and localization metrics.
//!
//! Frame spans are inclusive on both ends, so a span's frame count is
//! `end - start + 1` and IoU is computed over frame counts, not real-time
//! durations.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::types::Segment;

/// Intersection-over-union of two inclusive frame spans.
pub fn temporal_iou(a: Segment, b: Segment) -> f64 {
    let inter_lo = a.start().max(b.start());
    let inter_hi = a.end().min(b.end());
    let inter = if inter_hi >= inter_lo { inter_hi - inter_lo + 1 } else { 0 };
    let union = a.len_frames() + b.len_frames() - inter;
    inter as f64 / union as f64
}

/// 1-based rank of the true video; a miss ranks at `corpus_size + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankOutcome {
    pub rank: usize,
    pub missing: bool,
}

/// Locate `true_id` in a ranked id list drawn from a corpus of
/// `corpus_size` videos.
pub fn rank_of_true(ranked_ids: &[&str], true_id: &str, corpus_size: usize) -> RankOutcome {
    match ranked_ids.iter().position(|id| *id == true_id) {
        Some(i) => RankOutcome { rank: i + 1, missing: false },
        None => RankOutcome { rank: corpus_size + 1, missing: true },
    }
}

fn require_nonempty<T>(xs: &[T], what: &str) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::contract(alloc::format!("{what} requires at least one query")));
    }
    Ok(())
}

/// Fraction of queries whose true video ranks within the top k.
pub fn recall_at_k(outcomes: &[RankOutcome], k: usize) -> Result<f64> {
    require_nonempty(outcomes, "recall_at_k")?;
    if k == 0 {
        return Err(Error::config(String::from("recall_at_k requires k >= 1")));
    }
    let hits = outcomes.iter().filter(|o| o.rank <= k).count();
    Ok(hits as f64 / outcomes.len() as f64)
}

/// Median of the true-video ranks; even counts take the midpoint of the
/// two central values.
pub fn median_rank(outcomes: &[RankOutcome]) -> Result<f64> {
    require_nonempty(outcomes, "median_rank")?;
    let mut ranks: Vec<usize> = outcomes.iter().map(|o| o.rank).collect();
    ranks.sort_unstable();
    let n = ranks.len();
    Ok(if n % 2 == 1 {
        ranks[n / 2] as f64
    } else {
        (ranks[n / 2 - 1] + ranks[n / 2]) as f64 / 2.0
    })
}

/// Mean IoU over per-query localizations in the true video.
pub fn mean_iou(ious: &[f64]) -> Result<f64> {
    require_nonempty(ious, "mean_iou")?;
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}

/// Fraction of top-1 predictions with IoU at least `tau`.
pub fn precision_at_iou(ious: &[f64], tau: f64) -> Result<f64> {
    require_nonempty(ious, "precision_at_iou")?;
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::config(alloc::format!("precision_at_iou tau {tau} outside [0,1]")));
    }
    let hits = ious.iter().filter(|&&v| v >= tau).count();
    Ok(hits as f64 / ious.len() as f64)
}

/// One query's evaluation outcome, sufficient for every corpus-level
/// metric: where the true video ranked and how well the predicted segment
/// in the true video matched the annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub query_id: String,
    pub video_duration_frames: usize,
    pub rank: RankOutcome,
    pub tl_iou: f64,
}

/// Fraction of queries with the true video in the top k AND its predicted
/// segment at IoU >= tau. Never exceeds recall_at_k for the same k.
pub fn mlvc_recall(records: &[EvalRecord], k: usize, tau: f64) -> Result<f64> {
    require_nonempty(records, "mlvc_recall")?;
    if k == 0 {
        return Err(Error::config(String::from("mlvc_recall requires k >= 1")));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::config(alloc::format!("mlvc_recall tau {tau} outside [0,1]")));
    }
    let hits = records.iter().filter(|r| r.rank.rank <= k && r.tl_iou >= tau).count();
    Ok(hits as f64 / records.len() as f64)
}

/// Per-bucket metrics for one duration range `[lo, hi)` (the final bucket
/// includes its upper edge).
#[derive(Debug, Clone, PartialEq)]
pub struct BucketReport {
    pub lo: usize,
    pub hi: usize,
    pub count: usize,
    pub median_rank: f64,
    pub mean_iou: f64,
}

/// Group records by true-video duration into buckets delimited by
/// `edges` (strictly increasing, at least two). Empty buckets are absent
/// from the result; records outside every bucket are skipped.
pub fn duration_buckets(records: &[EvalRecord], edges: &[usize]) -> Result<Vec<BucketReport>> {
    if edges.len() < 2 {
        return Err(Error::config(String::from("duration_buckets requires at least two edges")));
    }
    if edges.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config(String::from("duration_buckets edges must strictly increase")));
    }
    let nb = edges.len() - 1;
    let mut grouped: Vec<Vec<&EvalRecord>> = alloc::vec![Vec::new(); nb];
    for r in records {
        let d = r.video_duration_frames;
        for b in 0..nb {
            let last = b == nb - 1;
            if d >= edges[b] && (d < edges[b + 1] || (last && d == edges[b + 1])) {
                grouped[b].push(r);
                break;
            }
        }
    }
    let mut out = Vec::new();
    for (b, rs) in grouped.iter().enumerate() {
        if rs.is_empty() {
            continue;
        }
        let outcomes: Vec<RankOutcome> = rs.iter().map(|r| r.rank).collect();
        let ious: Vec<f64> = rs.iter().map(|r| r.tl_iou).collect();
        out.push(BucketReport {
            lo: edges[b],
            hi: edges[b + 1],
            count: rs.len(),
            median_rank: median_rank(&outcomes)?,
            mean_iou: mean_iou(&ious)?,
        });
    }
    Ok(out)
}

/// Evenly split `[lo, hi]` into `n` bucket edges for reporting.
pub fn even_edges(lo: usize, hi: usize, n: usize) -> Result<Vec<usize>> {
    if n == 0 || hi <= lo {
        return Err(Error::config(alloc::format!(
            "even_edges needs n >= 1 and hi > lo, got n={n}, lo={lo}, hi={hi}"
        )));
    }
    let mut edges = Vec::with_capacity(n + 1);
    for i in 0..=n {
        edges.push(lo + (hi - lo) * i / n);
    }
    edges.dedup();
    Ok(edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::assert_close;
    use alloc::string::ToString;
    use alloc::vec;

    fn seg(s: usize, e: usize) -> Segment {
        Segment::new(s, e).unwrap()
    }

    fn outcomes(ranks: &[usize]) -> Vec<RankOutcome> {
        ranks.iter().map(|&r| RankOutcome { rank: r, missing: false }).collect()
    }

    #[test]
    fn iou_hand_examples() {
        assert_close(temporal_iou(seg(2, 6), seg(4, 8)), 3.0 / 7.0, 1e-12, "iou overlap");
        assert_close(temporal_iou(seg(2, 6), seg(2, 6)), 1.0, 1e-12, "iou identical");
        assert_close(temporal_iou(seg(0, 3), seg(10, 12)), 0.0, 1e-12, "iou disjoint");
    }

    #[test]
    fn iou_is_symmetric_and_one_iff_identical() {
        let cases = [(seg(0, 5), seg(3, 9)), (seg(2, 3), seg(2, 4)), (seg(1, 8), seg(1, 8))];
        for (a, b) in cases {
            assert_close(temporal_iou(a, b), temporal_iou(b, a), 1e-15, "symmetry");
            if a == b {
                assert_eq!(temporal_iou(a, b), 1.0);
            } else {
                assert!(temporal_iou(a, b) < 1.0);
            }
        }
    }

    #[test]
    fn median_rank_hand_examples() {
        assert_close(median_rank(&outcomes(&[1, 3, 5])).unwrap(), 3.0, 1e-12, "odd median");
        assert_close(median_rank(&outcomes(&[1, 2, 3, 10])).unwrap(), 2.5, 1e-12, "even median");
    }

    #[test]
    fn rank_of_true_handles_missing() {
        let outcome = rank_of_true(&["a", "b"], "z", 5);
        assert_eq!(outcome, RankOutcome { rank: 6, missing: true });
        let outcome = rank_of_true(&["a", "b", "c"], "b", 3);
        assert_eq!(outcome, RankOutcome { rank: 2, missing: false });
    }

    #[test]
    fn mean_iou_and_precision_hand_examples() {
        let ious = [1.0, 3.0 / 7.0, 0.0];
        assert_close(mean_iou(&ious).unwrap(), (1.0 + 3.0 / 7.0) / 3.0, 1e-12, "mean iou");
        assert_close(precision_at_iou(&ious, 0.3).unwrap(), 2.0 / 3.0, 1e-12, "p@0.3");
        assert_close(precision_at_iou(&ious, 0.7).unwrap(), 1.0 / 3.0, 1e-12, "p@0.7");
    }

    #[test]
    fn recall_and_mlvc_hand_example() {
        let records: Vec<EvalRecord> = [(1usize, 0.8), (2, 0.4), (11, 0.9)]
            .iter()
            .enumerate()
            .map(|(i, &(rank, iou))| EvalRecord {
                query_id: alloc::format!("q{i}"),
                video_duration_frames: 64,
                rank: RankOutcome { rank, missing: false },
                tl_iou: iou,
            })
            .collect();
        let outs: Vec<RankOutcome> = records.iter().map(|r| r.rank).collect();
        assert_close(recall_at_k(&outs, 10).unwrap(), 2.0 / 3.0, 1e-12, "r@10");
        assert_close(mlvc_recall(&records, 10, 0.5).unwrap(), 1.0 / 3.0, 1e-12, "mlvc r@10,0.5");
        assert!(mlvc_recall(&records, 10, 0.5).unwrap() <= recall_at_k(&outs, 10).unwrap());
    }

    #[test]
    fn empty_inputs_are_contract_errors() {
        assert!(median_rank(&[]).is_err());
        assert!(recall_at_k(&[], 1).is_err());
        assert!(mean_iou(&[]).is_err());
        assert!(mlvc_recall(&[], 1, 0.5).is_err());
    }

    #[test]
    fn duration_buckets_group_and_skip_empty() {
        let mk = |dur: usize, rank: usize, iou: f64| EvalRecord {
            query_id: dur.to_string(),
            video_duration_frames: dur,
            rank: RankOutcome { rank, missing: false },
            tl_iou: iou,
        };
        let records = vec![mk(10, 1, 1.0), mk(12, 3, 0.5), mk(40, 5, 0.2)];
        // buckets: [0,16) [16,32) [32,48]: middle bucket empty -> absent
        let reports = duration_buckets(&records, &[0, 16, 32, 48]).unwrap();
        assert_eq!(reports.len(), 2);
        assert_eq!(reports[0].count, 2);
        assert_close(reports[0].median_rank, 2.0, 1e-12, "bucket med");
        assert_eq!(reports[1].count, 1);
        assert_close(reports[1].mean_iou, 0.2, 1e-12, "bucket miou");
        // final bucket includes its upper edge
        let edge = duration_buckets(&[mk(48, 2, 0.9)], &[0, 16, 32, 48]).unwrap();
        assert_eq!(edge.len(), 1);
        assert_eq!(edge[0].lo, 32);
    }

    #[test]
    fn duration_buckets_reject_bad_edges() {
        assert!(duration_buckets(&[], &[4]).is_err());
        assert!(duration_buckets(&[], &[4, 4]).is_err());
        assert!(duration_buckets(&[], &[8, 4]).is_err());
    }
}
