//! `hammer ablate`: train and evaluate one arm per combination of the values
//! named by `--vary key=a,b`, then emit a consolidated comparison table.
//!
//! Every axis value is validated against the configuration schema before any
//! arm starts, so a typo refuses the whole run instead of failing halfway.
//! All arms share the same master seed and dataset; with `--threads > 1`
//! arms run concurrently but write exactly the same bytes as a sequential
//! run, because each arm depends only on its own configuration.

use std::path::Path;

use anyhow::{bail, Context, Result};
use hammer_core::data::Dataset;
use hammer_core::encoder::Model;
use hammer_core::train::{evaluate_model, train, TrainObserver};
use log::info;
use serde::Serialize;

use crate::config::RunConfig;
use crate::exec::parallel_map;
use crate::io;
use crate::report::{core, fmt_val};

struct Quiet;
impl TrainObserver for Quiet {}

#[derive(Debug, Clone)]
struct Axis {
    key: String,
    values: Vec<String>,
}

fn parse_axes(vary: &[String]) -> Result<Vec<Axis>> {
    if vary.is_empty() {
        bail!("ablate needs at least one --vary KEY=V1,V2 axis");
    }
    let mut axes = Vec::new();
    for spec in vary {
        let (key, values) = spec
            .split_once('=')
            .ok_or_else(|| anyhow::anyhow!("expected KEY=V1,V2[,V3...] in --vary, got `{spec}`"))?;
        let key = key.trim().to_string();
        let values: Vec<String> = values
            .split(',')
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        if values.is_empty() {
            bail!("--vary {key}= lists no values");
        }
        if axes.iter().any(|a: &Axis| a.key == key) {
            bail!("--vary names the key `{key}` twice");
        }
        axes.push(Axis { key, values });
    }
    Ok(axes)
}

/// One fully-resolved arm: its label, its assignments, and its config.
#[derive(Debug)]
struct Arm {
    label: String,
    assignments: Vec<(String, String)>,
    cfg: RunConfig,
}

fn build_arms(base: &RunConfig, axes: &[Axis]) -> Result<Vec<Arm>> {
    let mut combos: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for axis in axes {
        let mut next = Vec::new();
        for combo in &combos {
            for v in &axis.values {
                let mut c = combo.clone();
                c.push((axis.key.clone(), v.clone()));
                next.push(c);
            }
        }
        combos = next;
    }
    combos
        .into_iter()
        .map(|assignments| {
            let mut cfg = base.clone();
            for (k, v) in &assignments {
                cfg.apply(k, v)
                    .with_context(|| format!("--vary {k}={v} is not a valid setting"))?;
            }
            let label = assignments
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(",");
            Ok(Arm { label, assignments, cfg })
        })
        .collect()
}

#[derive(Serialize)]
struct ArmRow {
    arm: String,
    assignments: Vec<(String, String)>,
    diverged: Option<usize>,
    final_loss: Option<f64>,
    vr_recall: Vec<(usize, f64)>,
    vr_median_rank: Option<f64>,
    tl_miou: Option<f64>,
    mlvc_recall: Vec<(usize, f64, f64)>,
}

fn run_arm(index: usize, arm: &Arm, data: &Dataset, out: &Path) -> Result<ArmRow> {
    let dir = out.join(format!("arm-{index:02}"));
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create {}", dir.display()))?;

    let cfg = &arm.cfg;
    let enc = cfg.encoder_config(data.vocab.size, data.d_visual, data.d_aux)?;
    let kind = cfg.model_kind()?;
    let model = Model::init(enc, kind, cfg.seed)
        .map_err(anyhow::Error::msg)
        .with_context(|| format!("arm `{}`: model initialization failed", arm.label))?;

    let mut quiet = Quiet;
    let run = train(model, data, &cfg.train_config()?, &mut quiet)
        .map_err(anyhow::Error::msg)
        .with_context(|| format!("arm `{}`: training failed", arm.label))?;
    io::save_model(&dir, &run.model)?;
    io::write_text(&dir.join("config.resolved"), &cfg.resolved_text())?;

    let mut row = ArmRow {
        arm: arm.label.clone(),
        assignments: arm.assignments.clone(),
        diverged: run.diverged,
        final_loss: run.history.last().map(|r| r.loss),
        vr_recall: Vec::new(),
        vr_median_rank: None,
        tl_miou: None,
        mlvc_recall: Vec::new(),
    };
    if run.diverged.is_some() {
        return Ok(row);
    }

    let heldout = data.split_indices(true);
    if heldout.is_empty() {
        return Ok(row);
    }
    let eval_k = cfg.resolved_eval_k()?;
    let evals = evaluate_model(&run.model, data, &heldout, eval_k, None)
        .map_err(anyhow::Error::msg)
        .with_context(|| format!("arm `{}`: evaluation failed", arm.label))?;
    let records: Vec<_> = evals.iter().map(|e| e.record.clone()).collect();
    let outcomes: Vec<_> = records.iter().map(|r| r.rank.clone()).collect();
    let ious: Vec<f64> = records.iter().map(|r| r.tl_iou).collect();
    for &k in &cfg.k_values()? {
        row.vr_recall
            .push((k, core(hammer_core::metrics::recall_at_k(&outcomes, k))?));
    }
    row.vr_median_rank = Some(core(hammer_core::metrics::median_rank(&outcomes))?);
    row.tl_miou = Some(core(hammer_core::metrics::mean_iou(&ious))?);
    for &k in &cfg.k_values()? {
        for &tau in &cfg.tau_values()? {
            row.mlvc_recall
                .push((k, tau, core(hammer_core::metrics::mlvc_recall(&records, k, tau))?));
        }
    }
    Ok(row)
}

fn render_table(rows: &[ArmRow], ks: &[usize], tau: f64) -> String {
    let mut header = vec!["arm".to_string()];
    for k in ks {
        header.push(format!("R@{k}"));
    }
    header.push("MedRank".into());
    header.push("mIoU".into());
    let grid_k = ks.iter().copied().max().unwrap_or(1);
    header.push(format!("MLVC R@{grid_k} IoU>={tau}"));
    header.push("final_loss".into());
    header.push("diverged".into());

    let mut table: Vec<Vec<String>> = vec![header];
    for row in rows {
        let mut cells = vec![row.arm.clone()];
        for k in ks {
            let v = row.vr_recall.iter().find(|(rk, _)| rk == k).map(|(_, v)| *v);
            cells.push(v.map(fmt_val).unwrap_or_else(|| "-".into()));
        }
        cells.push(row.vr_median_rank.map(fmt_val).unwrap_or_else(|| "-".into()));
        cells.push(row.tl_miou.map(fmt_val).unwrap_or_else(|| "-".into()));
        let mlvc = row
            .mlvc_recall
            .iter()
            .find(|(k, t, _)| *k == grid_k && *t == tau)
            .map(|(_, _, v)| *v);
        cells.push(mlvc.map(fmt_val).unwrap_or_else(|| "-".into()));
        cells.push(row.final_loss.map(fmt_val).unwrap_or_else(|| "-".into()));
        cells.push(
            row.diverged
                .map(|s| format!("step {s}"))
                .unwrap_or_else(|| "no".into()),
        );
        table.push(cells);
    }

    let cols = table[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| table.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut s = String::new();
    for row in &table {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| format!("{cell:<w$}", w = widths[c]))
            .collect();
        s.push_str(line.join("  ").trim_end());
        s.push('\n');
    }
    s
}

pub fn run(base: &RunConfig, vary: &[String], force: bool) -> Result<()> {
    let axes = parse_axes(vary)?;
    let arms = build_arms(base, &axes)?;
    let data = io::read_dataset(Path::new(&base.data_dir))?;
    let out = Path::new(&base.out_dir);
    io::prepare_out_dir(out, force)?;
    io::write_text(&out.join("config.resolved"), &base.resolved_text())?;

    info!("running {} ablation arms (threads={})", arms.len(), base.threads);
    let results = parallel_map(arms.len(), base.threads, &|i| run_arm(i, &arms[i], &data, out));
    let mut rows = Vec::with_capacity(results.len());
    for r in results {
        rows.push(r?);
    }

    let ks = base.k_values()?;
    let taus = base.tau_values()?;
    let table = render_table(&rows, &ks, taus.first().copied().unwrap_or(0.5));
    io::write_text(&out.join("ablation.txt"), &table)?;
    let mut jsonl = String::new();
    for row in &rows {
        jsonl.push_str(&serde_json::to_string(row).expect("arm rows serialize"));
        jsonl.push('\n');
    }
    io::write_text(&out.join("ablation.jsonl"), &jsonl)?;
    print!("{table}");

    let diverged: Vec<&str> = rows
        .iter()
        .filter(|r| r.diverged.is_some())
        .map(|r| r.arm.as_str())
        .collect();
    if !diverged.is_empty() {
        bail!("{} arm(s) diverged: {}", diverged.len(), diverged.join("; "));
    }
    Ok(())
}
