//! Files on disk: dataset directories, checkpoints with their model
//! descriptions, and output-directory hygiene.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use hammer_core::checkpoint::{decode_checkpoint, encode_checkpoint};
use hammer_core::data::{decode_dataset, encode_dataset, Dataset, DatasetFiles};
use hammer_core::encoder::{EncoderConfig, Model, ModelKind};

use crate::config::parse_kv_text;

pub const DATASET_FILES: [&str; 4] =
    ["manifest.txt", "features.bin", "vocab.txt", "checksum.txt"];
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const MODEL_META_FILE: &str = "model.meta";

/// Create `dir` if needed; refuse to reuse a non-empty one without
/// `force`.
pub fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir)
            .with_context(|| format!("cannot inspect `{}`", dir.display()))?
            .next()
            .is_some();
        if non_empty && !force {
            bail!(
                "output directory `{}` is not empty; pass --force to write into it",
                dir.display()
            );
        }
    }
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory `{}`", dir.display()))?;
    Ok(())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("cannot write `{}`", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("cannot read `{}`", path.display()))
}

/// Write the four dataset files into `dir`.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    let files = encode_dataset(data).map_err(|e| anyhow!("{e}"))?;
    let [manifest, features, vocab, checksum] = DATASET_FILES;
    write_bytes(&dir.join(manifest), &files.manifest)?;
    write_bytes(&dir.join(features), &files.features)?;
    write_bytes(&dir.join(vocab), &files.vocab)?;
    write_bytes(&dir.join(checksum), &files.checksum)?;
    Ok(())
}

/// Load a dataset directory; the features checksum is verified before
/// anything else is parsed.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let [manifest, features, vocab, checksum] = DATASET_FILES;
    let files = DatasetFiles {
        manifest: read_bytes(&dir.join(manifest))?,
        features: read_bytes(&dir.join(features))?,
        vocab: read_bytes(&dir.join(vocab))?,
        checksum: read_bytes(&dir.join(checksum))?,
    };
    decode_dataset(&files)
        .map_err(|e| anyhow!("{e}"))
        .with_context(|| format!("dataset `{}` failed to load", dir.display()))
}

fn meta_bool(b: bool) -> &'static str {
    if b {
        "true"
    } else {
        "false"
    }
}

/// Serialize the architecture description next to the weights so a
/// checkpoint is self-describing.
pub fn model_meta_text(model: &Model) -> String {
    let c = &model.config;
    let kind = match model.kind {
        ModelKind::Hammer => "hammer",
        ModelKind::Flat => "flat",
    };
    let mut s = String::from("# model architecture; consumed by eval/localize\n");
    for (k, v) in [
        ("kind", kind.to_string()),
        ("d_model", c.d_model.to_string()),
        ("heads", c.heads.to_string()),
        ("text_layers", c.text_layers.to_string()),
        ("visual_layers", c.visual_layers.to_string()),
        ("cross_modal_layers", c.cross_modal_layers.to_string()),
        ("clip_length", c.clip_length.to_string()),
        ("n_max", c.n_max.to_string()),
        ("max_query_len", c.max_query_len.to_string()),
        ("vocab_size", c.vocab_size.to_string()),
        ("d_visual", c.d_visual.to_string()),
        ("d_aux", c.d_aux.unwrap_or(0).to_string()),
        ("clip_position_embeddings", meta_bool(c.clip_position_embeddings).to_string()),
        ("share_frame_clip_weights", meta_bool(c.share_frame_clip_weights).to_string()),
        ("share_u", meta_bool(c.share_u).to_string()),
        ("dropout", c.dropout.to_string()),
        ("ffn_mult", c.ffn_mult.to_string()),
    ] {
        s.push_str(k);
        s.push('=');
        s.push_str(&v);
        s.push('\n');
    }
    s
}

fn parse_model_meta(text: &str, origin: &str) -> Result<(EncoderConfig, ModelKind)> {
    let mut cfg = EncoderConfig::default();
    let mut kind = None;
    for a in parse_kv_text(text, origin)? {
        let v = a.value.as_str();
        let int = || -> Result<usize> {
            v.parse().map_err(|_| anyhow!("{}: `{}` expects an integer, got `{v}`", a.origin, a.key))
        };
        let flag = || -> Result<bool> {
            v.parse().map_err(|_| anyhow!("{}: `{}` expects true/false, got `{v}`", a.origin, a.key))
        };
        match a.key.as_str() {
            "kind" => {
                kind = Some(match v {
                    "hammer" => ModelKind::Hammer,
                    "flat" => ModelKind::Flat,
                    _ => bail!("{}: unknown model kind `{v}`", a.origin),
                })
            }
            "d_model" => cfg.d_model = int()?,
            "heads" => cfg.heads = int()?,
            "text_layers" => cfg.text_layers = int()?,
            "visual_layers" => cfg.visual_layers = int()?,
            "cross_modal_layers" => cfg.cross_modal_layers = int()?,
            "clip_length" => cfg.clip_length = int()?,
            "n_max" => cfg.n_max = int()?,
            "max_query_len" => cfg.max_query_len = int()?,
            "vocab_size" => cfg.vocab_size = int()?,
            "d_visual" => cfg.d_visual = int()?,
            "d_aux" => {
                let n = int()?;
                cfg.d_aux = if n == 0 { None } else { Some(n) };
            }
            "clip_position_embeddings" => cfg.clip_position_embeddings = flag()?,
            "share_frame_clip_weights" => cfg.share_frame_clip_weights = flag()?,
            "share_u" => cfg.share_u = flag()?,
            "dropout" => {
                cfg.dropout = v
                    .parse()
                    .map_err(|_| anyhow!("{}: `dropout` expects a number, got `{v}`", a.origin))?
            }
            "ffn_mult" => cfg.ffn_mult = int()?,
            other => bail!("{}: unknown model.meta key `{other}`", a.origin),
        }
    }
    let kind = kind.ok_or_else(|| anyhow!("{origin}: missing `kind`"))?;
    Ok((cfg, kind))
}

/// Write `checkpoint.bin` and `model.meta` into `dir`.
pub fn save_model(dir: &Path, model: &Model) -> Result<()> {
    write_bytes(&dir.join(CHECKPOINT_FILE), &encode_checkpoint(&model.params))?;
    write_text(&dir.join(MODEL_META_FILE), &model_meta_text(model))
}

/// Resolve `spec` to (checkpoint.bin, model.meta): either a directory
/// containing both, or a direct path to the weights with the meta file
/// alongside.
fn model_paths(spec: &Path) -> Result<(PathBuf, PathBuf)> {
    if spec.as_os_str().is_empty() {
        bail!("no checkpoint given; pass --checkpoint or set the `checkpoint` key");
    }
    let (ckpt, meta) = if spec.is_dir() {
        (spec.join(CHECKPOINT_FILE), spec.join(MODEL_META_FILE))
    } else {
        let meta = spec
            .parent()
            .map(|p| p.join(MODEL_META_FILE))
            .ok_or_else(|| anyhow!("checkpoint path `{}` has no parent", spec.display()))?;
        (spec.to_path_buf(), meta)
    };
    Ok((ckpt, meta))
}

/// Load a model from a checkpoint directory or weight-file path.
pub fn load_model(spec: &Path) -> Result<Model> {
    let (ckpt_path, meta_path) = model_paths(spec)?;
    let meta_text = fs::read_to_string(&meta_path)
        .with_context(|| format!("cannot read `{}`", meta_path.display()))?;
    let (cfg, kind) = parse_model_meta(&meta_text, &meta_path.display().to_string())?;
    let bytes = read_bytes(&ckpt_path)?;
    let params = decode_checkpoint(&bytes)
        .map_err(|e| anyhow!("{e}"))
        .with_context(|| format!("checkpoint `{}` failed to parse", ckpt_path.display()))?;
    Model::from_params(cfg, kind, params)
        .map_err(|e| anyhow!("{e}"))
        .with_context(|| format!("checkpoint `{}` does not fit its model.meta", ckpt_path.display()))
}
