//! `hammer localize`: run one query against the corpus and print the ranked
//! candidate moments.

use std::path::Path;

use anyhow::{bail, Context, Result};
use hammer_core::data::{Dataset, TokenRole};
use hammer_core::infer::mlvc_retrieve;

use crate::config::RunConfig;
use crate::io;
use crate::report::fmt_val;

/// Which query to run: one the dataset already carries, or raw token ids.
pub enum Query {
    Id(String),
    Tokens(String),
}

fn parse_tokens(data: &Dataset, text: &str) -> Result<Vec<u32>> {
    let raw: Vec<&str> = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .collect();
    if raw.is_empty() {
        bail!("no tokens given; pass space- or comma-separated token ids");
    }
    let vocab = &data.vocab;
    let mut ids = Vec::with_capacity(raw.len());
    for piece in raw {
        let id: u32 = piece
            .parse()
            .with_context(|| format!("token `{piece}` is not an unsigned integer"))?;
        let role = vocab.role(id).ok();
        match role {
            Some(TokenRole::Content) | Some(TokenRole::Filler) => ids.push(id),
            _ => bail!(
                "token {id} is outside the usable vocabulary; content ids are {}..{} and filler ids are {}..{}",
                vocab.content.start,
                vocab.content.end - 1,
                vocab.filler.start,
                vocab.filler.end - 1
            ),
        }
    }
    Ok(ids)
}

pub fn run(cfg: &RunConfig, query: Query) -> Result<()> {
    let data = io::read_dataset(Path::new(&cfg.data_dir))?;
    let model = io::load_model(Path::new(&cfg.checkpoint))?;
    super::eval::check_model_matches(&model, &data)?;
    let mode = cfg.decode_mode()?;

    let (tokens, annotated): (Vec<u32>, Option<(&str, hammer_core::Segment)>) =
        match &query {
            Query::Id(id) => {
                let ex = data
                    .examples
                    .iter()
                    .find(|e| &e.query_id == id)
                    .ok_or_else(|| {
                        anyhow::anyhow!(
                            "unknown query id `{id}`; the dataset has {} queries (q00000..q{:05})",
                            data.examples.len(),
                            data.examples.len().saturating_sub(1)
                        )
                    })?;
                (ex.tokens.clone(), Some((ex.video_id.as_str(), ex.segment)))
            }
            Query::Tokens(text) => (parse_tokens(&data, text)?, None),
        };

    let k = cfg.top_k.max(1);
    let result = mlvc_retrieve(&model, &data.videos, &tokens, k, None, mode)
        .map_err(anyhow::Error::msg)
        .context("localization failed")?;

    println!("query tokens: {tokens:?}");
    if let Some((vid, seg)) = annotated {
        println!("annotated: {vid} [{}, {}]", seg.start(), seg.end());
    }
    println!("{:<5} {:<8} {:<14} {:<14} {}", "rank", "video", "segment", "video_score", "pair_score");
    for (i, c) in result.candidates.iter().enumerate() {
        println!(
            "{:<5} {:<8} {:<14} {:<14} {}",
            i + 1,
            c.video_id,
            format!("[{}, {}]", c.segment.start(), c.segment.end()),
            fmt_val(c.video_score),
            fmt_val(c.pair_score)
        );
    }
    Ok(())
}
