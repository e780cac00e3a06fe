//! `hammer gen-data`: synthesize a corpus and write it as a dataset directory.

use std::path::Path;

use anyhow::{Context, Result};
use hammer_core::data::gen_corpus;
use log::info;

use crate::config::RunConfig;
use crate::io;

pub fn run(cfg: &RunConfig, force: bool) -> Result<()> {
    let corpus_cfg = cfg.corpus_config()?;
    let out = Path::new(&cfg.out_dir);
    io::prepare_out_dir(out, force)?;

    info!(
        "generating corpus: {} videos x {} frames, sigma {}, seed {}",
        corpus_cfg.num_videos, corpus_cfg.frames_per_video, corpus_cfg.noise_sigma, corpus_cfg.master_seed
    );
    let corpus = gen_corpus(&corpus_cfg)
        .map_err(anyhow::Error::msg)
        .context("corpus generation failed")?;
    let data = &corpus.data;

    io::write_dataset(out, data)?;
    io::write_text(&out.join("config.resolved"), &cfg.resolved_text())?;

    let heldout = data.split_indices(true).len();
    let train = data.split_indices(false).len();
    println!("dataset written to {}", out.display());
    println!("videos: {}", data.videos.len());
    println!(
        "queries: {} ({} train, {} heldout)",
        data.examples.len(),
        train,
        heldout
    );
    println!("vocab: {}", data.vocab.size);
    println!("noise_sigma: {}", corpus_cfg.noise_sigma);
    println!("seed: {}", corpus_cfg.master_seed);
    Ok(())
}
