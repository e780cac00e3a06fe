//! `hammer eval`: score a checkpoint (or a perfect oracle) against one split
//! of a dataset and write human + machine reports.

use std::path::Path;

use anyhow::{bail, Context, Result};
use hammer_core::data::Dataset;
use hammer_core::encoder::{EncodeStats, Model};
use hammer_core::infer::ScoredCandidate;
use hammer_core::metrics::{EvalRecord, RankOutcome};
use hammer_core::train::{evaluate_query, QueryEval};
use log::info;

use crate::config::RunConfig;
use crate::exec::parallel_map;
use crate::io;
use crate::report::{summarize, PassCounts};

/// Build the evaluation rows a perfect system would produce: the true video
/// at rank 1 with its exact annotated segment. Used to check the reporting
/// pipeline end to end without a model.
fn oracle_evals(data: &Dataset, indices: &[usize]) -> Vec<QueryEval> {
    indices
        .iter()
        .map(|&idx| {
            let ex = &data.examples[idx];
            let dur = data
                .videos
                .iter()
                .find(|v| v.video_id == ex.video_id)
                .map(|v| v.frames.len())
                .unwrap_or(0);
            QueryEval {
                record: EvalRecord {
                    query_id: ex.query_id.clone(),
                    video_duration_frames: dur,
                    rank: RankOutcome { rank: 1, missing: false },
                    tl_iou: 1.0,
                },
                candidates: vec![ScoredCandidate {
                    video_id: ex.video_id.clone(),
                    segment: ex.segment,
                    video_score: 1.0,
                    pair_score: 1.0,
                }],
                true_video_segment: Some(ex.segment),
            }
        })
        .collect()
}

pub(crate) fn check_model_matches(model: &Model, data: &Dataset) -> Result<()> {
    if model.config.vocab_size != data.vocab.size {
        bail!(
            "checkpoint expects a vocabulary of {} tokens but the dataset has {}",
            model.config.vocab_size,
            data.vocab.size
        );
    }
    if model.config.d_visual != data.d_visual {
        bail!(
            "checkpoint expects {}-dim visual features but the dataset has {}-dim",
            model.config.d_visual,
            data.d_visual
        );
    }
    if model.config.d_aux != data.d_aux {
        bail!(
            "checkpoint auxiliary stream ({:?}) does not match the dataset ({:?})",
            model.config.d_aux,
            data.d_aux
        );
    }
    Ok(())
}

pub fn run(cfg: &RunConfig, force: bool, oracle: bool) -> Result<()> {
    let data = io::read_dataset(Path::new(&cfg.data_dir))?;
    let heldout = match cfg.split.as_str() {
        "heldout" => true,
        "train" => false,
        other => bail!("unknown split `{other}`; expected `train` or `heldout`"),
    };
    let indices = data.split_indices(heldout);
    if indices.is_empty() {
        bail!(
            "split `{}` contains no queries; evaluate the other split or regenerate with a different heldout_fraction",
            cfg.split
        );
    }
    let ks = cfg.k_values()?;
    let taus = cfg.tau_values()?;
    let eval_k = cfg.resolved_eval_k()?;

    let (evals, passes) = if oracle {
        info!("scoring {} queries against the oracle", indices.len());
        (oracle_evals(&data, &indices), PassCounts::default())
    } else {
        let model = io::load_model(Path::new(&cfg.checkpoint))?;
        check_model_matches(&model, &data)?;
        let mode = cfg.decode_mode()?;
        info!(
            "scoring {} queries over {} videos (k={eval_k}, threads={})",
            indices.len(),
            data.videos.len(),
            cfg.threads
        );
        let stats = EncodeStats::new();
        let results = parallel_map(indices.len(), cfg.threads, &|i| {
            evaluate_query(&model, &data, indices[i], eval_k, Some(&stats), mode)
                .map_err(anyhow::Error::msg)
        });
        let mut evals = Vec::with_capacity(results.len());
        for r in results {
            evals.push(r.context("query evaluation failed")?);
        }
        let passes = PassCounts {
            rank: stats.rank(),
            localize: stats.localize(),
            tl_eval: stats.tl_eval(),
            other: stats.other(),
        };
        (evals, passes)
    };

    let summary = summarize(&evals, &ks, &taus, cfg.buckets, data.videos.len(), eval_k, passes)?;
    let title = if oracle {
        format!("oracle on the {} split", cfg.split)
    } else {
        format!("{} on the {} split", cfg.model, cfg.split)
    };
    let human = crate::report::render_human(&summary, &title);
    let out = Path::new(&cfg.out_dir);
    io::prepare_out_dir(out, force)?;
    io::write_text(&out.join("report.txt"), &human)?;
    io::write_text(&out.join("metrics.jsonl"), &crate::report::render_machine(&summary)?)?;
    io::write_text(
        &out.join("predictions.jsonl"),
        &crate::report::render_predictions(&evals)?,
    )?;
    io::write_text(&out.join("config.resolved"), &cfg.resolved_text())?;
    print!("{human}");
    Ok(())
}
