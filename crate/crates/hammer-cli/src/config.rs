//! One flat bag of every tunable, with a `key=value` file format.
//!
//! Precedence, lowest to highest: built-in defaults, the preset named by
//! any `preset` assignment, the `--config` file top to bottom, `--set`
//! pairs in order, then named command-line flags. The effective
//! configuration is echoed to `config.resolved` in the output directory,
//! and that file parses back to the identical configuration.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use hammer_core::data::{long_preset, tiny_preset, CorpusConfig, VocabLayout};
use hammer_core::encoder::{EncoderConfig, ModelKind};
use hammer_core::heads::{MlmFlags, TaskWeights};
use hammer_core::infer::DecodeMode;
use hammer_core::train::TrainConfig;

/// Union of the corpus, model, training, and inference knobs plus paths.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // corpus
    pub preset: String,
    pub num_videos: usize,
    pub frames_per_video: usize,
    pub segments_per_video: usize,
    pub queries_per_video: usize,
    pub d_visual: usize,
    /// Width of the auxiliary per-frame feature stream; 0 disables it.
    pub d_aux: usize,
    pub noise_sigma: f64,
    pub heldout_fraction: f64,
    pub vocab_size: usize,

    // model
    pub model: String,
    pub d_model: usize,
    pub heads: usize,
    pub text_layers: usize,
    pub visual_layers: usize,
    pub cross_modal_layers: usize,
    pub clip_length: usize,
    pub n_max: usize,
    pub max_query_len: usize,
    pub clip_position_embeddings: bool,
    pub share_frame_clip_weights: bool,
    pub share_u: bool,
    pub dropout: f64,
    pub ffn_mult: usize,

    // training
    pub epochs: usize,
    pub batch_size: usize,
    pub max_lr: f64,
    pub clip_norm: f64,
    pub lambda_vr: f64,
    pub lambda_tl: f64,
    pub lambda_mlm: f64,
    pub mlm_fm: bool,
    pub mlm_cm: bool,
    pub mask_rate: f64,
    pub tl_framewise3way: bool,
    pub divergence_threshold: f64,
    /// Epochs between held-out evaluations and checkpoint snapshots
    /// during training; 0 records only the final state.
    pub eval_every: usize,

    // inference and reporting
    pub decode: String,
    pub k_list: String,
    pub tau_list: String,
    /// Videos localized per query in two-stage evaluation; 0 means the
    /// largest entry of `k_list`.
    pub eval_k: usize,
    pub buckets: usize,
    /// Candidates printed by `localize`.
    pub top_k: usize,

    // run plumbing
    pub seed: u64,
    pub threads: usize,
    pub data_dir: String,
    pub out_dir: String,
    pub checkpoint: String,
    pub split: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preset: "custom".into(),
            num_videos: 16,
            frames_per_video: 32,
            segments_per_video: 2,
            queries_per_video: 4,
            d_visual: 16,
            d_aux: 0,
            noise_sigma: 0.3,
            heldout_fraction: 0.2,
            vocab_size: 64,

            model: "hammer".into(),
            d_model: 32,
            heads: 4,
            text_layers: 5,
            visual_layers: 1,
            cross_modal_layers: 1,
            clip_length: 32,
            n_max: 128,
            max_query_len: 32,
            clip_position_embeddings: true,
            share_frame_clip_weights: false,
            share_u: false,
            dropout: 0.1,
            ffn_mult: 4,

            epochs: 10,
            batch_size: 8,
            max_lr: 3e-3,
            clip_norm: 1.0,
            lambda_vr: 1.0,
            lambda_tl: 5.0,
            lambda_mlm: 0.1,
            mlm_fm: true,
            mlm_cm: true,
            mask_rate: 0.15,
            tl_framewise3way: false,
            divergence_threshold: 1e3,
            eval_every: 0,

            decode: "joint".into(),
            k_list: "1,10,100".into(),
            tau_list: "0.5,0.7".into(),
            eval_k: 0,
            buckets: 4,
            top_k: 5,

            seed: 0,
            threads: 1,
            data_dir: "data".into(),
            out_dir: "out".into(),
            checkpoint: String::new(),
            split: "heldout".into(),
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => bail!("key `{key}` expects a boolean (true/false/on/off), got `{v}`"),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str, what: &str) -> Result<T> {
    v.parse::<T>().map_err(|_| anyhow!("key `{key}` expects {what}, got `{v}`"))
}

impl RunConfig {
    /// Set one field from its textual form. Unknown keys and malformed
    /// values are errors; this is the sole write path for files, `--set`
    /// pairs, named flags, and ablation grids alike.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "preset" => self.apply_preset(v)?,
            "num_videos" => self.num_videos = parse_num(key, v, "a positive integer")?,
            "frames_per_video" => self.frames_per_video = parse_num(key, v, "a positive integer")?,
            "segments_per_video" => {
                self.segments_per_video = parse_num(key, v, "a positive integer")?
            }
            "queries_per_video" => self.queries_per_video = parse_num(key, v, "a positive integer")?,
            "d_visual" => self.d_visual = parse_num(key, v, "a positive integer")?,
            "d_aux" => self.d_aux = parse_num(key, v, "an integer (0 disables)")?,
            "noise_sigma" => self.noise_sigma = parse_num(key, v, "a number")?,
            "heldout_fraction" => self.heldout_fraction = parse_num(key, v, "a number in [0,1]")?,
            "vocab_size" => self.vocab_size = parse_num(key, v, "an integer >= 8")?,

            "model" => match v {
                "hammer" | "flat" => self.model = v.into(),
                _ => bail!("key `model` expects `hammer` or `flat`, got `{v}`"),
            },
            "d_model" => self.d_model = parse_num(key, v, "a positive integer")?,
            "heads" => self.heads = parse_num(key, v, "a positive integer")?,
            "text_layers" => self.text_layers = parse_num(key, v, "an integer")?,
            "visual_layers" => self.visual_layers = parse_num(key, v, "an integer")?,
            "cross_modal_layers" => self.cross_modal_layers = parse_num(key, v, "an integer")?,
            "clip_length" => self.clip_length = parse_num(key, v, "a positive integer")?,
            "n_max" => self.n_max = parse_num(key, v, "a positive integer")?,
            "max_query_len" => self.max_query_len = parse_num(key, v, "an integer >= 2")?,
            "clip_position_embeddings" => {
                self.clip_position_embeddings = parse_bool(key, v)?
            }
            "share_frame_clip_weights" => self.share_frame_clip_weights = parse_bool(key, v)?,
            "share_u" => self.share_u = parse_bool(key, v)?,
            "dropout" => self.dropout = parse_num(key, v, "a number in [0,1)")?,
            "ffn_mult" => self.ffn_mult = parse_num(key, v, "a positive integer")?,

            "epochs" => self.epochs = parse_num(key, v, "a positive integer")?,
            "batch_size" => self.batch_size = parse_num(key, v, "an integer >= 2")?,
            "max_lr" => self.max_lr = parse_num(key, v, "a positive number")?,
            "clip_norm" => self.clip_norm = parse_num(key, v, "a positive number")?,
            "lambda_vr" => self.lambda_vr = parse_num(key, v, "a number >= 0")?,
            "lambda_tl" => self.lambda_tl = parse_num(key, v, "a number >= 0")?,
            "lambda_mlm" => self.lambda_mlm = parse_num(key, v, "a number >= 0")?,
            "mlm_fm" => self.mlm_fm = parse_bool(key, v)?,
            "mlm_cm" => self.mlm_cm = parse_bool(key, v)?,
            "mask_rate" => self.mask_rate = parse_num(key, v, "a number in [0,1]")?,
            "tl_framewise3way" => self.tl_framewise3way = parse_bool(key, v)?,
            "divergence_threshold" => {
                self.divergence_threshold = parse_num(key, v, "a positive number")?
            }
            "eval_every" => self.eval_every = parse_num(key, v, "an integer (0 disables)")?,

            "decode" => match v {
                "joint" | "greedy-repair" => self.decode = v.into(),
                _ => bail!("key `decode` expects `joint` or `greedy-repair`, got `{v}`"),
            },
            "k_list" => self.k_list = v.into(),
            "tau_list" => self.tau_list = v.into(),
            "eval_k" => self.eval_k = parse_num(key, v, "an integer (0 = max of k_list)")?,
            "buckets" => self.buckets = parse_num(key, v, "a positive integer")?,
            "top_k" => self.top_k = parse_num(key, v, "a positive integer")?,

            "seed" => self.seed = parse_num(key, v, "an unsigned integer")?,
            "threads" => self.threads = parse_num(key, v, "a positive integer")?,
            "data_dir" => self.data_dir = v.into(),
            "out_dir" => self.out_dir = v.into(),
            "checkpoint" => self.checkpoint = v.into(),
            "split" => match v {
                "train" | "heldout" => self.split = v.into(),
                _ => bail!("key `split` expects `train` or `heldout`, got `{v}`"),
            },
            _ => bail!("unknown configuration key `{key}`"),
        }
        Ok(())
    }

    fn apply_preset(&mut self, name: &str) -> Result<()> {
        let cc = match name {
            "custom" => {
                self.preset = name.into();
                return Ok(());
            }
            "tiny" => tiny_preset(self.seed),
            "long" => long_preset(self.seed),
            _ => bail!("unknown preset `{name}` (expected `tiny`, `long`, or `custom`)"),
        };
        self.preset = name.into();
        self.num_videos = cc.num_videos;
        self.frames_per_video = cc.frames_per_video;
        self.segments_per_video = cc.segments_per_video;
        self.queries_per_video = cc.queries_per_video;
        self.d_visual = cc.d_visual;
        self.d_aux = cc.d_aux.unwrap_or(0);
        self.noise_sigma = cc.noise_sigma;
        self.heldout_fraction = cc.heldout_fraction;
        self.vocab_size = cc.vocab.size;
        Ok(())
    }

    /// Every key with its current textual value, alphabetically.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut e: Vec<(&'static str, String)> = vec![
            ("batch_size", self.batch_size.to_string()),
            ("buckets", self.buckets.to_string()),
            ("checkpoint", self.checkpoint.clone()),
            ("clip_length", self.clip_length.to_string()),
            ("clip_norm", self.clip_norm.to_string()),
            ("clip_position_embeddings", self.clip_position_embeddings.to_string()),
            ("cross_modal_layers", self.cross_modal_layers.to_string()),
            ("d_aux", self.d_aux.to_string()),
            ("d_model", self.d_model.to_string()),
            ("d_visual", self.d_visual.to_string()),
            ("data_dir", self.data_dir.clone()),
            ("decode", self.decode.clone()),
            ("divergence_threshold", self.divergence_threshold.to_string()),
            ("dropout", self.dropout.to_string()),
            ("epochs", self.epochs.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("eval_k", self.eval_k.to_string()),
            ("ffn_mult", self.ffn_mult.to_string()),
            ("frames_per_video", self.frames_per_video.to_string()),
            ("heads", self.heads.to_string()),
            ("heldout_fraction", self.heldout_fraction.to_string()),
            ("k_list", self.k_list.clone()),
            ("lambda_mlm", self.lambda_mlm.to_string()),
            ("lambda_tl", self.lambda_tl.to_string()),
            ("lambda_vr", self.lambda_vr.to_string()),
            ("mask_rate", self.mask_rate.to_string()),
            ("max_lr", self.max_lr.to_string()),
            ("max_query_len", self.max_query_len.to_string()),
            ("mlm_cm", self.mlm_cm.to_string()),
            ("mlm_fm", self.mlm_fm.to_string()),
            ("model", self.model.clone()),
            ("n_max", self.n_max.to_string()),
            ("noise_sigma", self.noise_sigma.to_string()),
            ("num_videos", self.num_videos.to_string()),
            ("out_dir", self.out_dir.clone()),
            ("preset", self.preset.clone()),
            ("queries_per_video", self.queries_per_video.to_string()),
            ("seed", self.seed.to_string()),
            ("segments_per_video", self.segments_per_video.to_string()),
            ("share_frame_clip_weights", self.share_frame_clip_weights.to_string()),
            ("share_u", self.share_u.to_string()),
            ("split", self.split.clone()),
            ("tau_list", self.tau_list.clone()),
            ("text_layers", self.text_layers.to_string()),
            ("threads", self.threads.to_string()),
            ("tl_framewise3way", self.tl_framewise3way.to_string()),
            ("top_k", self.top_k.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("visual_layers", self.visual_layers.to_string()),
        ];
        e.sort_by_key(|(k, _)| *k);
        e
    }

    /// Render the effective configuration as a reloadable key=value file.
    pub fn resolved_text(&self) -> String {
        let mut s = String::from("# effective configuration; reloadable via --config\n");
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    // ---- typed views ------------------------------------------------

    pub fn corpus_config(&self) -> Result<CorpusConfig> {
        let vocab = VocabLayout::standard(self.vocab_size)
            .map_err(|e| anyhow!("{e}"))
            .context("invalid `vocab_size`")?;
        let cc = CorpusConfig {
            num_videos: self.num_videos,
            frames_per_video: self.frames_per_video,
            segments_per_video: self.segments_per_video,
            queries_per_video: self.queries_per_video,
            d_visual: self.d_visual,
            d_aux: if self.d_aux == 0 { None } else { Some(self.d_aux) },
            noise_sigma: self.noise_sigma,
            heldout_fraction: self.heldout_fraction,
            vocab,
            master_seed: self.seed,
        };
        cc.validate().map_err(|e| anyhow!("infeasible corpus configuration: {e}"))?;
        Ok(cc)
    }

    /// Model hyper-parameters; widths that must match the data (vocabulary,
    /// feature streams) come from the dataset, everything else from keys.
    pub fn encoder_config(
        &self,
        vocab_size: usize,
        d_visual: usize,
        d_aux: Option<usize>,
    ) -> Result<EncoderConfig> {
        let ec = EncoderConfig {
            d_model: self.d_model,
            heads: self.heads,
            text_layers: self.text_layers,
            visual_layers: self.visual_layers,
            cross_modal_layers: self.cross_modal_layers,
            clip_length: self.clip_length,
            n_max: self.n_max,
            max_query_len: self.max_query_len,
            vocab_size,
            d_visual,
            d_aux,
            clip_position_embeddings: self.clip_position_embeddings,
            share_frame_clip_weights: self.share_frame_clip_weights,
            share_u: self.share_u,
            dropout: self.dropout,
            ffn_mult: self.ffn_mult,
        };
        ec.validate().map_err(|e| anyhow!("invalid model configuration: {e}"))?;
        Ok(ec)
    }

    pub fn model_kind(&self) -> Result<ModelKind> {
        match self.model.as_str() {
            "hammer" => Ok(ModelKind::Hammer),
            "flat" => Ok(ModelKind::Flat),
            other => bail!("key `model` expects `hammer` or `flat`, got `{other}`"),
        }
    }

    pub fn decode_mode(&self) -> Result<DecodeMode> {
        match self.decode.as_str() {
            "joint" => Ok(DecodeMode::Joint),
            "greedy-repair" => Ok(DecodeMode::GreedyRepair),
            other => bail!("key `decode` expects `joint` or `greedy-repair`, got `{other}`"),
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let tc = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            max_lr: self.max_lr,
            clip_norm: self.clip_norm,
            weights: TaskWeights {
                vr: self.lambda_vr,
                tl: self.lambda_tl,
                mlm: self.lambda_mlm,
            },
            mlm_flags: MlmFlags { fm: self.mlm_fm, cm: self.mlm_cm },
            mask_rate: self.mask_rate,
            tl_framewise3way: self.tl_framewise3way,
            divergence_threshold: self.divergence_threshold,
            seed: self.seed,
        };
        tc.validate().map_err(|e| anyhow!("invalid training configuration: {e}"))?;
        Ok(tc)
    }

    pub fn k_values(&self) -> Result<Vec<usize>> {
        let ks: Vec<usize> = self
            .k_list
            .split(',')
            .map(|t| parse_num("k_list", t.trim(), "comma-separated integers >= 1"))
            .collect::<Result<_>>()?;
        if ks.is_empty() || ks.iter().any(|&k| k == 0) {
            bail!("key `k_list` expects comma-separated integers >= 1, got `{}`", self.k_list);
        }
        Ok(ks)
    }

    pub fn tau_values(&self) -> Result<Vec<f64>> {
        let taus: Vec<f64> = self
            .tau_list
            .split(',')
            .map(|t| parse_num("tau_list", t.trim(), "comma-separated numbers in [0,1]"))
            .collect::<Result<_>>()?;
        if taus.is_empty() || taus.iter().any(|t| !(0.0..=1.0).contains(t)) {
            bail!(
                "key `tau_list` expects comma-separated numbers in [0,1], got `{}`",
                self.tau_list
            );
        }
        Ok(taus)
    }

    /// The two-stage localization depth: `eval_k`, defaulting to the
    /// largest requested k so every reported MLVC cell sees localized
    /// candidates.
    pub fn resolved_eval_k(&self) -> Result<usize> {
        let max_k = *self.k_values()?.iter().max().expect("k_values is non-empty");
        if self.eval_k == 0 {
            return Ok(max_k);
        }
        if self.eval_k < max_k {
            bail!(
                "eval_k={} localizes fewer videos than k_list `{}` reports on; \
                 raise eval_k to at least {max_k} or trim k_list",
                self.eval_k,
                self.k_list
            );
        }
        Ok(self.eval_k)
    }
}

/// One `key=value` assignment with a provenance label for error messages.
#[derive(Debug, Clone)]
pub struct Assignment {
    pub key: String,
    pub value: String,
    pub origin: String,
}

/// Parse flat `key=value` text. `#` begins a comment line; blank lines
/// are ignored. `origin` labels errors (e.g. a file path).
pub fn parse_kv_text(text: &str, origin: &str) -> Result<Vec<Assignment>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{origin}:{}: expected key=value, got `{line}`", i + 1))?;
        out.push(Assignment {
            key: k.trim().to_string(),
            value: v.trim().to_string(),
            origin: format!("{origin}:{}", i + 1),
        });
    }
    Ok(out)
}

/// Parse one `KEY=VALUE` argument (for `--set` and ablation grids).
pub fn parse_pair(arg: &str, origin: &str) -> Result<Assignment> {
    let (k, v) = arg
        .split_once('=')
        .ok_or_else(|| anyhow!("{origin}: expected KEY=VALUE, got `{arg}`"))?;
    Ok(Assignment {
        key: k.trim().to_string(),
        value: v.trim().to_string(),
        origin: origin.to_string(),
    })
}

/// Build the effective configuration from a config file, `--set` pairs,
/// and named flags, in that precedence order. Any `preset` assignment is
/// applied before all other keys so explicit keys always win over preset
/// values regardless of where they appear.
pub fn resolve(
    file: Option<&Path>,
    sets: &[String],
    named: &[(&'static str, String)],
) -> Result<RunConfig> {
    let mut assignments: Vec<Assignment> = Vec::new();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file `{}`", path.display()))?;
        assignments.extend(parse_kv_text(&text, &path.display().to_string())?);
    }
    for s in sets {
        assignments.push(parse_pair(s, "--set")?);
    }
    for (k, v) in named {
        assignments.push(Assignment {
            key: (*k).to_string(),
            value: v.clone(),
            origin: format!("--{}", k.replace('_', "-")),
        });
    }

    let mut cfg = RunConfig::default();
    // seed first: presets derive their master seed from it
    for a in assignments.iter().filter(|a| a.key == "seed") {
        cfg.apply(&a.key, &a.value).with_context(|| a.origin.clone())?;
    }
    if let Some(p) = assignments.iter().filter(|a| a.key == "preset").last() {
        cfg.apply(&p.key, &p.value).with_context(|| p.origin.clone())?;
    }
    for a in assignments.iter().filter(|a| a.key != "preset" && a.key != "seed") {
        cfg.apply(&a.key, &a.value).with_context(|| a.origin.clone())?;
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_entry_round_trips_through_apply() {
        let mut cfg = RunConfig::default();
        // perturb a representative of each value type
        cfg.apply("model", "flat").unwrap();
        cfg.apply("clip_length", "16").unwrap();
        cfg.apply("max_lr", "0.00025").unwrap();
        cfg.apply("mlm_cm", "off").unwrap();
        cfg.apply("k_list", "1,5").unwrap();
        cfg.apply("checkpoint", "runs/a/checkpoint.bin").unwrap();

        let mut rebuilt = RunConfig::default();
        for (k, v) in cfg.entries() {
            rebuilt.apply(k, &v).unwrap();
        }
        assert_eq!(cfg, rebuilt);

        // and through the rendered file
        let parsed = parse_kv_text(&cfg.resolved_text(), "resolved").unwrap();
        let mut again = RunConfig::default();
        for a in &parsed {
            again.apply(&a.key, &a.value).unwrap();
        }
        assert_eq!(cfg, again);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let mut cfg = RunConfig::default();
        assert!(cfg.apply("no_such_knob", "1").unwrap_err().to_string().contains("no_such_knob"));
        assert!(cfg.apply("epochs", "three").is_err());
        assert!(cfg.apply("mlm_fm", "maybe").is_err());
        assert!(cfg.apply("model", "resnet").is_err());
        assert!(cfg.apply("preset", "huge").is_err());
        assert!(cfg.apply("split", "validation").is_err());
    }

    #[test]
    fn precedence_is_defaults_preset_file_set_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(
            &path,
            "# comment\n\npreset=tiny\nnum_videos=32\nepochs=7\nmax_lr=1e-3\n",
        )
        .unwrap();

        let cfg = resolve(
            Some(&path),
            &["epochs=9".to_string()],
            &[("max_lr", "2e-3".to_string())],
        )
        .unwrap();

        assert_eq!(cfg.preset, "tiny");
        assert_eq!(cfg.frames_per_video, 64); // from the preset
        assert_eq!(cfg.num_videos, 32); // file overrides preset
        assert_eq!(cfg.epochs, 9); // --set overrides file
        assert!((cfg.max_lr - 2e-3).abs() < 1e-15); // flag overrides --set
    }

    #[test]
    fn preset_wins_over_position_and_seed_feeds_it() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        // num_videos written before the preset line must still win
        std::fs::write(&path, "num_videos=5\npreset=tiny\n").unwrap();
        let cfg = resolve(Some(&path), &[], &[("seed", "42".to_string())]).unwrap();
        assert_eq!(cfg.num_videos, 5);
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.corpus_config().unwrap().master_seed, 42);
    }

    #[test]
    fn eval_k_must_cover_the_reported_grid() {
        let mut cfg = RunConfig::default();
        cfg.apply("k_list", "1,10").unwrap();
        assert_eq!(cfg.resolved_eval_k().unwrap(), 10);
        cfg.apply("eval_k", "4").unwrap();
        assert!(cfg.resolved_eval_k().is_err());
        cfg.apply("eval_k", "12").unwrap();
        assert_eq!(cfg.resolved_eval_k().unwrap(), 12);
    }

    #[test]
    fn typed_views_validate() {
        let cfg = RunConfig::default();
        assert!(cfg.corpus_config().is_ok());
        assert!(cfg.encoder_config(64, 16, None).is_ok());
        assert!(cfg.train_config().is_ok());

        let mut bad = RunConfig::default();
        bad.apply("segments_per_video", "40").unwrap();
        bad.apply("frames_per_video", "8").unwrap();
        let err = bad.corpus_config().unwrap_err();
        assert!(format!("{err:#}").contains("8 frames cannot hold 40 segments"));
    }
}
