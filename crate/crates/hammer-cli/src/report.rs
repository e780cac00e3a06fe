//! Metric reports in two shapes: an aligned human-readable text table
//! and line-delimited `{metric, slice, value}` records for machines.
//! Tables stand in for plots; nothing here touches the clock.

use std::fmt::Write as _;

use anyhow::{anyhow, Result};
use hammer_core::metrics::{
    duration_buckets, even_edges, mean_iou, median_rank, mlvc_recall, precision_at_iou,
    recall_at_k, EvalRecord, RankOutcome,
};
use hammer_core::train::QueryEval;
use serde::Serialize;

/// Temporal-localization precision thresholds always reported.
pub const TL_TAUS: [f64; 3] = [0.3, 0.5, 0.7];

/// Encoder work done while producing the evaluated predictions.
#[derive(Debug, Clone, Copy, Default)]
pub struct PassCounts {
    pub rank: u64,
    pub localize: u64,
    pub tl_eval: u64,
    pub other: u64,
}

impl PassCounts {
    pub fn total(&self) -> u64 {
        self.rank + self.localize + self.tl_eval + self.other
    }
}

/// One duration-bucket row; `None` metrics mean the bucket holds no
/// queries and is reported as absent.
#[derive(Debug, Clone)]
pub struct BucketRow {
    pub lo: usize,
    pub hi: usize,
    pub closed: bool,
    pub count: usize,
    pub median_rank: Option<f64>,
    pub mean_iou: Option<f64>,
}

impl BucketRow {
    pub fn label(&self) -> String {
        let close = if self.closed { ']' } else { ')' };
        format!("[{},{}{close}", self.lo, self.hi)
    }
}

/// Everything one evaluation reports.
#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub queries: usize,
    pub corpus_size: usize,
    pub eval_k: usize,
    pub vr_recall: Vec<(usize, f64)>,
    pub vr_median_rank: f64,
    pub tl_miou: f64,
    pub tl_precision: Vec<(f64, f64)>,
    /// Rows of the k × tau grid: (k, tau, recall).
    pub mlvc: Vec<(usize, f64, f64)>,
    pub buckets: Vec<BucketRow>,
    pub passes: PassCounts,
}

/// Compute every reported metric from per-query evaluations.
pub fn summarize(
    evals: &[QueryEval],
    k_list: &[usize],
    tau_list: &[f64],
    n_buckets: usize,
    corpus_size: usize,
    eval_k: usize,
    passes: PassCounts,
) -> Result<EvalSummary> {
    if evals.is_empty() {
        return Err(anyhow!("no queries to evaluate"));
    }
    let records: Vec<EvalRecord> = evals.iter().map(|e| e.record.clone()).collect();
    let outcomes: Vec<RankOutcome> = records.iter().map(|r| r.rank).collect();
    let ious: Vec<f64> = records.iter().map(|r| r.tl_iou).collect();
    let err = |e: hammer_core::Error| anyhow!("{e}");

    let mut vr_recall = Vec::with_capacity(k_list.len());
    for &k in k_list {
        vr_recall.push((k, recall_at_k(&outcomes, k).map_err(err)?));
    }
    let vr_median_rank = median_rank(&outcomes).map_err(err)?;

    let tl_miou = mean_iou(&ious).map_err(err)?;
    let mut tl_precision = Vec::with_capacity(TL_TAUS.len());
    for tau in TL_TAUS {
        tl_precision.push((tau, precision_at_iou(&ious, tau).map_err(err)?));
    }

    let mut mlvc = Vec::with_capacity(k_list.len() * tau_list.len());
    for &k in k_list {
        for &tau in tau_list {
            mlvc.push((k, tau, mlvc_recall(&records, k, tau).map_err(err)?));
        }
    }

    let buckets = bucket_rows(&records, n_buckets)?;

    Ok(EvalSummary {
        queries: evals.len(),
        corpus_size,
        eval_k,
        vr_recall,
        vr_median_rank,
        tl_miou,
        tl_precision,
        mlvc,
        buckets,
        passes,
    })
}

/// Split the observed duration range into up to `n_buckets` equal-width
/// rows; windows without queries are kept, marked absent.
fn bucket_rows(records: &[EvalRecord], n_buckets: usize) -> Result<Vec<BucketRow>> {
    let lo = records.iter().map(|r| r.video_duration_frames).min().unwrap_or(0);
    let hi = records.iter().map(|r| r.video_duration_frames).max().unwrap_or(0);
    let edges = if hi > lo {
        even_edges(lo, hi, n_buckets).map_err(|e| anyhow!("{e}"))?
    } else {
        vec![lo, lo + 1]
    };
    let present = duration_buckets(records, &edges).map_err(|e| anyhow!("{e}"))?;
    let n = edges.len() - 1;
    let mut rows = Vec::with_capacity(n);
    for (i, w) in edges.windows(2).enumerate() {
        let hit = present.iter().find(|b| b.lo == w[0] && b.hi == w[1]);
        rows.push(BucketRow {
            lo: w[0],
            hi: w[1],
            closed: i == n - 1,
            count: hit.map_or(0, |b| b.count),
            median_rank: hit.map(|b| b.median_rank),
            mean_iou: hit.map(|b| b.mean_iou),
        });
    }
    Ok(rows)
}

/// Adapt a core-library result into this crate's error type.
pub fn core<T>(r: hammer_core::Result<T>) -> Result<T> {
    r.map_err(anyhow::Error::msg)
}

pub fn fmt_val(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e12 {
        format!("{v}")
    } else {
        format!("{v:.4}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), fmt_val)
}

/// Render the aligned, sectioned text report.
pub fn render_human(s: &EvalSummary, title: &str) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "== {title} ==");
    let _ = writeln!(t, "queries: {}   corpus: {} videos   localized per query: {}", s.queries, s.corpus_size, s.eval_k);
    let _ = writeln!(t);
    let _ = writeln!(t, "-- video retrieval --");
    for (k, v) in &s.vr_recall {
        let _ = writeln!(t, "R@{k:<6} {}", fmt_val(*v));
    }
    let _ = writeln!(t, "MedRank  {}", fmt_val(s.vr_median_rank));
    let _ = writeln!(t);
    let _ = writeln!(t, "-- temporal localization (true video) --");
    let _ = writeln!(t, "mIoU     {}", fmt_val(s.tl_miou));
    for (tau, v) in &s.tl_precision {
        let _ = writeln!(t, "P@{tau:<6} {}", fmt_val(*v));
    }
    let _ = writeln!(t);
    let _ = writeln!(t, "-- moment localization in video corpus --");
    let taus: Vec<f64> = {
        let mut seen = Vec::new();
        for &(_, tau, _) in &s.mlvc {
            if !seen.contains(&tau) {
                seen.push(tau);
            }
        }
        seen
    };
    let mut header = format!("{:<8}", "");
    for tau in &taus {
        let _ = write!(header, "tau={tau:<8}");
    }
    let _ = writeln!(t, "{}", header.trim_end());
    let ks: Vec<usize> = {
        let mut seen = Vec::new();
        for &(k, _, _) in &s.mlvc {
            if !seen.contains(&k) {
                seen.push(k);
            }
        }
        seen
    };
    for k in ks {
        let mut row = format!("{:<8}", format!("R@{k}"));
        for tau in &taus {
            let v = s
                .mlvc
                .iter()
                .find(|(kk, tt, _)| *kk == k && tt == tau)
                .map(|(_, _, v)| *v)
                .unwrap_or(f64::NAN);
            let _ = write!(row, "{:<12}", fmt_val(v));
        }
        let _ = writeln!(t, "{}", row.trim_end());
    }
    let _ = writeln!(t);
    let _ = writeln!(t, "-- by video duration (frames) --");
    let _ = writeln!(t, "{:<14}{:<9}{:<9}{}", "frames", "queries", "MedRank", "mIoU");
    for b in &s.buckets {
        let _ = writeln!(
            t,
            "{:<14}{:<9}{:<9}{}",
            b.label(),
            if b.count == 0 { "-".to_string() } else { b.count.to_string() },
            fmt_opt(b.median_rank),
            fmt_opt(b.mean_iou)
        );
    }
    let _ = writeln!(t);
    let _ = writeln!(t, "-- encoder passes --");
    let _ = writeln!(t, "rank      {}", s.passes.rank);
    let _ = writeln!(t, "localize  {}", s.passes.localize);
    let _ = writeln!(t, "tl_eval   {}", s.passes.tl_eval);
    let _ = writeln!(t, "total     {}", s.passes.total());
    let per_query = s.passes.total() as f64 / s.queries as f64;
    let _ = writeln!(t, "per query {}", fmt_val(per_query));
    t
}

#[derive(Serialize)]
struct MetricLine<'a> {
    metric: &'a str,
    slice: String,
    value: f64,
}

fn push_line(out: &mut String, metric: &str, slice: String, value: f64) -> Result<()> {
    let line = serde_json::to_string(&MetricLine { metric, slice, value })?;
    out.push_str(&line);
    out.push('\n');
    Ok(())
}

/// Render the line-delimited machine report.
pub fn render_machine(s: &EvalSummary) -> Result<String> {
    let mut out = String::new();
    push_line(&mut out, "queries", "all".into(), s.queries as f64)?;
    push_line(&mut out, "corpus_size", "all".into(), s.corpus_size as f64)?;
    push_line(&mut out, "eval_k", "all".into(), s.eval_k as f64)?;
    for (k, v) in &s.vr_recall {
        push_line(&mut out, "vr_recall", format!("k={k}"), *v)?;
    }
    push_line(&mut out, "vr_median_rank", "all".into(), s.vr_median_rank)?;
    push_line(&mut out, "tl_miou", "all".into(), s.tl_miou)?;
    for (tau, v) in &s.tl_precision {
        push_line(&mut out, "tl_precision", format!("tau={tau}"), *v)?;
    }
    for (k, tau, v) in &s.mlvc {
        push_line(&mut out, "mlvc_recall", format!("k={k},tau={tau}"), *v)?;
    }
    for b in &s.buckets {
        if b.count == 0 {
            continue; // absent, not zero
        }
        let slice = format!("frames={}", b.label());
        push_line(&mut out, "bucket_queries", slice.clone(), b.count as f64)?;
        push_line(&mut out, "bucket_median_rank", slice.clone(), b.median_rank.unwrap())?;
        push_line(&mut out, "bucket_mean_iou", slice, b.mean_iou.unwrap())?;
    }
    push_line(&mut out, "encoder_passes", "rank".into(), s.passes.rank as f64)?;
    push_line(&mut out, "encoder_passes", "localize".into(), s.passes.localize as f64)?;
    push_line(&mut out, "encoder_passes", "tl_eval".into(), s.passes.tl_eval as f64)?;
    push_line(&mut out, "encoder_passes", "total".into(), s.passes.total() as f64)?;
    push_line(
        &mut out,
        "encoder_passes",
        "per_query".into(),
        s.passes.total() as f64 / s.queries as f64,
    )?;
    Ok(out)
}

#[derive(Serialize)]
struct PredCandidate<'a> {
    video_id: &'a str,
    start: usize,
    end: usize,
    video_score: f64,
    pair_score: f64,
}

#[derive(Serialize)]
struct PredLine<'a> {
    query_id: &'a str,
    ranking: Vec<PredCandidate<'a>>,
}

/// One line per query: the localized top-k candidates in rank order.
pub fn render_predictions(evals: &[QueryEval]) -> Result<String> {
    let mut out = String::new();
    for e in evals {
        let ranking = e
            .candidates
            .iter()
            .map(|c| PredCandidate {
                video_id: &c.video_id,
                start: c.segment.start(),
                end: c.segment.end(),
                video_score: c.video_score,
                pair_score: c.pair_score,
            })
            .collect();
        let line = serde_json::to_string(&PredLine { query_id: &e.record.query_id, ranking })?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}
