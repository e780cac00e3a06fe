//! `hammer train`: fit a model on a dataset directory and write checkpoint,
//! history, and resolved config into the output directory.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use hammer_core::data::Dataset;
use hammer_core::encoder::Model;
use hammer_core::train::{evaluate_model, train, HistoryRecord, TrainObserver};
use hammer_core::Error as CoreError;
use log::info;
use serde::Serialize;

use crate::config::RunConfig;
use crate::io;
use crate::report;

#[derive(Serialize)]
struct StepRow<'a> {
    kind: &'a str,
    epoch: usize,
    step: usize,
    lr: f64,
    loss: f64,
    vr: f64,
    tl: f64,
    mlm: f64,
    grad_norm: f64,
}

#[derive(Serialize)]
struct EvalRow<'a> {
    kind: &'a str,
    epoch: usize,
    vr_recall_at_1: f64,
    vr_recall_at_10: f64,
    vr_median_rank: f64,
    tl_miou: f64,
    mlvc_recall_at_10_tau_05: f64,
}

/// Streams history rows to a JSONL buffer and, when `eval_every > 0`, runs a
/// heldout evaluation plus a checkpoint snapshot at the end of every
/// `eval_every`-th epoch.
struct Progress<'a> {
    data: &'a Dataset,
    heldout: Vec<usize>,
    eval_every: usize,
    eval_k: usize,
    out: PathBuf,
    history: String,
    epoch_loss_sum: f64,
    epoch_steps: usize,
}

impl Progress<'_> {
    fn push_row<T: Serialize>(&mut self, row: &T) {
        self.history
            .push_str(&serde_json::to_string(row).expect("history rows serialize"));
        self.history.push('\n');
    }
}

impl TrainObserver for Progress<'_> {
    fn on_step(&mut self, r: &HistoryRecord) {
        self.push_row(&StepRow {
            kind: "step",
            epoch: r.epoch,
            step: r.step,
            lr: r.lr,
            loss: r.loss,
            vr: r.vr,
            tl: r.tl,
            mlm: r.mlm,
            grad_norm: r.grad_norm,
        });
        self.epoch_loss_sum += r.loss;
        self.epoch_steps += 1;
    }

    fn on_epoch(&mut self, epoch: usize, model: &Model) -> hammer_core::Result<()> {
        if self.epoch_steps > 0 {
            info!(
                "epoch {epoch}: mean loss {:.6}",
                self.epoch_loss_sum / self.epoch_steps as f64
            );
        }
        self.epoch_loss_sum = 0.0;
        self.epoch_steps = 0;
        if self.eval_every == 0 || (epoch + 1) % self.eval_every != 0 || self.heldout.is_empty() {
            return Ok(());
        }

        let evals = evaluate_model(model, self.data, &self.heldout, self.eval_k, None)?;
        let records: Vec<_> = evals.iter().map(|e| e.record.clone()).collect();
        let outcomes: Vec<_> = records.iter().map(|r| r.rank.clone()).collect();
        let ious: Vec<f64> = records.iter().map(|r| r.tl_iou).collect();
        let row = EvalRow {
            kind: "eval",
            epoch,
            vr_recall_at_1: hammer_core::metrics::recall_at_k(&outcomes, 1)?,
            vr_recall_at_10: hammer_core::metrics::recall_at_k(&outcomes, 10)?,
            vr_median_rank: hammer_core::metrics::median_rank(&outcomes)?,
            tl_miou: hammer_core::metrics::mean_iou(&ious)?,
            mlvc_recall_at_10_tau_05: hammer_core::metrics::mlvc_recall(&records, 10, 0.5)?,
        };
        info!(
            "epoch {epoch}: heldout R@10 {:.4}, mIoU {:.4}",
            row.vr_recall_at_10, row.tl_miou
        );
        self.push_row(&row);

        let snap = self.out.join(format!("checkpoint-e{epoch}.bin"));
        let bytes = hammer_core::checkpoint::encode_checkpoint(&model.params);
        std::fs::write(&snap, bytes)
            .map_err(|e| CoreError::input(format!("cannot write {}: {e}", snap.display())))?;
        Ok(())
    }
}

pub fn run(cfg: &RunConfig, force: bool) -> Result<()> {
    let data = io::read_dataset(Path::new(&cfg.data_dir))?;
    let out = Path::new(&cfg.out_dir);
    io::prepare_out_dir(out, force)?;

    let enc = cfg.encoder_config(data.vocab.size, data.d_visual, data.d_aux)?;
    let kind = cfg.model_kind()?;
    let train_cfg = cfg.train_config()?;
    let model = Model::init(enc, kind, cfg.seed)
        .map_err(anyhow::Error::msg)
        .context("model initialization failed")?;
    io::write_text(&out.join(io::MODEL_META_FILE), &io::model_meta_text(&model))?;
    io::write_text(&out.join("config.resolved"), &cfg.resolved_text())?;

    let started = SystemTime::now();
    let timer = Instant::now();
    let mut progress = Progress {
        data: &data,
        heldout: data.split_indices(true),
        eval_every: cfg.eval_every,
        eval_k: cfg.resolved_eval_k()?,
        out: out.to_path_buf(),
        history: String::new(),
        epoch_loss_sum: 0.0,
        epoch_steps: 0,
    };
    info!(
        "training {} on {} queries for {} epochs",
        cfg.model,
        data.split_indices(false).len(),
        train_cfg.epochs
    );
    let run = train(model, &data, &train_cfg, &mut progress)
        .map_err(anyhow::Error::msg)
        .context("training failed")?;

    // Artifacts are written even when the run diverged, so the last good
    // checkpoint and the history leading up to the failure are kept.
    io::save_model(out, &run.model)?;
    io::write_text(&out.join("history.jsonl"), &progress.history)?;
    let wall = timer.elapsed().as_secs_f64();
    let stamp = |t: SystemTime| {
        t.duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    };
    io::write_text(
        &out.join("train.log"),
        &format!(
            "started_unix={}\nfinished_unix={}\nwall_seconds={wall:.3}\n",
            stamp(started),
            stamp(SystemTime::now())
        ),
    )?;

    if let Some(step) = run.diverged {
        bail!(
            "training diverged at step {step}; last good checkpoint retained in {}",
            out.display()
        );
    }

    let final_loss = run.history.last().map(|r| r.loss);
    println!("checkpoint written to {}", out.join(io::CHECKPOINT_FILE).display());
    println!("steps: {}", run.history.len());
    if let Some(loss) = final_loss {
        println!("final loss: {}", report::fmt_val(loss));
    }
    Ok(())
}
