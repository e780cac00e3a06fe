//! Synthetic moment-localization corpora and the on-disk dataset codec.
//!
//! Each video is tiled by segments; each segment realizes one "concept":
//! a short template of content tokens whose visual prototype is the
//! normalized sum of per-token basis vectors. Frames are the prototype
//! plus Gaussian noise, and queries wrap the template in filler tokens.
//! Because prototypes are compositional, token/visual alignment learned
//! on training queries transfers to held-out ones.
//!
//! All randomness derives from the master seed through dedicated
//! streams, so generation is exactly reproducible.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::encoder::{AuxTrack, VideoRecord};
use crate::error::{Error, Result};
use crate::rng::{derive, Stream};
use crate::types::Segment;

/// Shortest allowed segment, in frames.
pub const MIN_SEGMENT_LEN: usize = 2;

/// Token-id space: two reserved ids plus contiguous content and filler
/// ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabLayout {
    pub size: usize,
    pub pad: u32,
    pub mask: u32,
    pub content: Range<u32>,
    pub filler: Range<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenRole {
    Pad,
    Mask,
    Content,
    Filler,
}

impl VocabLayout {
    /// Conventional split: ids 0/1 reserved, then roughly three quarters
    /// content and the rest filler.
    pub fn standard(size: usize) -> Result<VocabLayout> {
        if size < 8 {
            return Err(Error::config(format!("vocabulary of {size} is too small (need >= 8)")));
        }
        let content_end = 2 + ((size - 2) * 3 / 4) as u32;
        let layout = VocabLayout {
            size,
            pad: 0,
            mask: 1,
            content: 2..content_end,
            filler: content_end..size as u32,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        let ranges_ok = self.pad != self.mask
            && (self.pad as usize) < self.size
            && (self.mask as usize) < self.size
            && self.content.end as usize <= self.size
            && self.filler.end as usize <= self.size
            && self.content.start >= 2.max(self.pad.max(self.mask) + 1).min(2)
            && !self.content.contains(&self.pad)
            && !self.content.contains(&self.mask)
            && !self.filler.contains(&self.pad)
            && !self.filler.contains(&self.mask)
            && (self.content.end <= self.filler.start || self.filler.end <= self.content.start);
        if !ranges_ok {
            return Err(Error::config(String::from(
                "vocabulary ranges must be disjoint, in bounds, and avoid reserved ids",
            )));
        }
        if self.content.len() < 4 {
            return Err(Error::config(String::from(
                "need at least 4 content tokens to form templates",
            )));
        }
        if self.filler.is_empty() {
            return Err(Error::config(String::from("need at least 1 filler token")));
        }
        Ok(())
    }

    pub fn role(&self, id: u32) -> Result<TokenRole> {
        if id == self.pad {
            Ok(TokenRole::Pad)
        } else if id == self.mask {
            Ok(TokenRole::Mask)
        } else if self.content.contains(&id) {
            Ok(TokenRole::Content)
        } else if self.filler.contains(&id) {
            Ok(TokenRole::Filler)
        } else {
            Err(Error::input(format!("token id {id} has no role in this vocabulary")))
        }
    }
}

/// Generation parameters for a synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub num_videos: usize,
    pub frames_per_video: usize,
    pub segments_per_video: usize,
    pub queries_per_video: usize,
    pub d_visual: usize,
    pub d_aux: Option<usize>,
    pub noise_sigma: f64,
    pub heldout_fraction: f64,
    pub vocab: VocabLayout,
    pub master_seed: u64,
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_videos == 0 || self.segments_per_video == 0 || self.queries_per_video == 0 {
            return Err(Error::config(String::from(
                "num_videos, segments_per_video, and queries_per_video must be >= 1",
            )));
        }
        if self.frames_per_video < self.segments_per_video * MIN_SEGMENT_LEN {
            return Err(Error::config(format!(
                "{} frames cannot hold {} segments of at least {MIN_SEGMENT_LEN} frames",
                self.frames_per_video, self.segments_per_video
            )));
        }
        if self.d_visual == 0 || self.d_aux == Some(0) {
            return Err(Error::config(String::from("feature widths must be >= 1")));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::config(String::from("noise_sigma must be finite and >= 0")));
        }
        if !(0.0..=1.0).contains(&self.heldout_fraction) {
            return Err(Error::config(String::from("heldout_fraction must be in [0,1]")));
        }
        self.vocab.validate()
    }

    pub fn num_concepts(&self) -> usize {
        self.num_videos * self.segments_per_video
    }
}

/// Small corpus sized for end-to-end training in tests: 64 videos of 64
/// frames, 4 segments each, 256 queries.
pub fn tiny_preset(master_seed: u64) -> CorpusConfig {
    CorpusConfig {
        num_videos: 64,
        frames_per_video: 64,
        segments_per_video: 4,
        queries_per_video: 4,
        d_visual: 16,
        d_aux: None,
        noise_sigma: 0.3,
        heldout_fraction: 0.2,
        vocab: VocabLayout::standard(64).expect("standard vocab"),
        master_seed,
    }
}

/// Longer videos with more segments, for duration-stratified comparisons:
/// 16 videos of 128 frames, 8 segments each.
pub fn long_preset(master_seed: u64) -> CorpusConfig {
    CorpusConfig {
        num_videos: 16,
        frames_per_video: 128,
        segments_per_video: 8,
        queries_per_video: 8,
        d_visual: 16,
        d_aux: None,
        noise_sigma: 0.3,
        heldout_fraction: 0.2,
        vocab: VocabLayout::standard(64).expect("standard vocab"),
        master_seed,
    }
}

/// One concept: a template of distinct content tokens and its visual
/// prototype(s). Prototype coordinates are quantized through f32 so that
/// generated features survive the on-disk format bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Concept {
    pub template: Vec<u32>,
    pub prototype: Vec<f64>,
    pub aux_prototype: Option<Vec<f64>>,
}

/// All concepts plus the per-token basis they are composed from.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptBank {
    pub concepts: Vec<Concept>,
    token_basis: Vec<Vec<f64>>,
    aux_basis: Option<Vec<Vec<f64>>>,
    content_start: u32,
}

impl ConceptBank {
    pub fn generate(cfg: &CorpusConfig) -> Result<ConceptBank> {
        cfg.validate()?;
        let content: Vec<u32> = cfg.vocab.content.clone().collect();

        let mut basis_rng = derive(cfg.master_seed, Stream::ConceptBank, 0);
        let token_basis: Vec<Vec<f64>> =
            (0..content.len()).map(|_| unit_vector(cfg.d_visual, &mut basis_rng)).collect();
        let aux_basis = cfg.d_aux.map(|da| {
            let mut rng = derive(cfg.master_seed, Stream::ConceptBank, 1);
            (0..content.len()).map(|_| unit_vector(da, &mut rng)).collect::<Vec<_>>()
        });

        let mut rng = derive(cfg.master_seed, Stream::ConceptBank, 2);
        let mut concepts: Vec<Concept> = Vec::with_capacity(cfg.num_concepts());
        let mut used_sets: Vec<Vec<u32>> = Vec::with_capacity(cfg.num_concepts());
        for _ in 0..cfg.num_concepts() {
            let mut attempts = 0;
            let template = loop {
                attempts += 1;
                if attempts > 10_000 {
                    return Err(Error::config(format!(
                        "could not draw {} distinct templates from {} content tokens",
                        cfg.num_concepts(),
                        content.len()
                    )));
                }
                let len = rng.gen_range(2..=4usize.min(content.len()));
                let mut tokens: Vec<u32> = Vec::with_capacity(len);
                while tokens.len() < len {
                    let t = content[rng.gen_range(0..content.len())];
                    if !tokens.contains(&t) {
                        tokens.push(t);
                    }
                }
                let mut key = tokens.clone();
                key.sort_unstable();
                if !used_sets.contains(&key) {
                    used_sets.push(key);
                    break tokens;
                }
            };
            let start = cfg.vocab.content.start;
            let prototype = compose(&template, &token_basis, start)?;
            let aux_prototype = match &aux_basis {
                Some(ab) => Some(compose(&template, ab, start)?),
                None => None,
            };
            concepts.push(Concept { template, prototype, aux_prototype });
        }

        // Distinct token sets compose to distinct prototypes for random
        // bases; verify outright so downstream separability is airtight.
        for i in 0..concepts.len() {
            for j in 0..i {
                let close = concepts[i]
                    .prototype
                    .iter()
                    .zip(&concepts[j].prototype)
                    .all(|(a, b)| (a - b).abs() < 1e-6);
                if close {
                    return Err(Error::config(String::from(
                        "degenerate concept bank: two prototypes coincide; change the seed",
                    )));
                }
            }
        }
        Ok(ConceptBank {
            concepts,
            token_basis,
            aux_basis,
            content_start: cfg.vocab.content.start,
        })
    }

    /// Index of the prototype nearest to `frame` (Euclidean).
    pub fn nearest_prototype(&self, frame: &[f64]) -> Result<usize> {
        if self.concepts.is_empty() {
            return Err(Error::contract(String::from("empty concept bank")));
        }
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, c) in self.concepts.iter().enumerate() {
            if c.prototype.len() != frame.len() {
                return Err(Error::input(format!(
                    "frame width {} does not match prototype width {}",
                    frame.len(),
                    c.prototype.len()
                )));
            }
            let d: f64 =
                c.prototype.iter().zip(frame).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        Ok(best)
    }
}

fn unit_vector(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn compose(template: &[u32], basis: &[Vec<f64>], content_start: u32) -> Result<Vec<f64>> {
    let d = basis.first().map(|b| b.len()).unwrap_or(0);
    let mut sum = alloc::vec![0.0; d];
    for &t in template {
        let row = basis
            .get((t - content_start) as usize)
            .ok_or_else(|| Error::input(format!("token {t} outside content range")))?;
        for (s, b) in sum.iter_mut().zip(row) {
            *s += b;
        }
    }
    let norm = libm::sqrt(sum.iter().map(|x| x * x).sum::<f64>());
    if norm < 1e-9 {
        return Err(Error::numeric(String::from("zero-norm prototype")));
    }
    Ok(sum.into_iter().map(|x| quantize(x / norm)).collect())
}

#[inline]
fn quantize(x: f64) -> f64 {
    x as f32 as f64
}

/// One annotated query: which video, which span, the token sequence, and
/// its evaluation split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedExample {
    pub query_id: String,
    pub video_id: String,
    pub video_index: usize,
    pub tokens: Vec<u32>,
    pub segment: Segment,
    pub heldout: bool,
}

/// A loadable dataset: videos, annotations, and the vocabulary they use.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub videos: Vec<VideoRecord>,
    pub examples: Vec<AnnotatedExample>,
    pub vocab: VocabLayout,
    pub d_visual: usize,
    pub d_aux: Option<usize>,
}

impl Dataset {
    /// Example indices for one split.
    pub fn split_indices(&self, heldout: bool) -> Vec<usize> {
        self.examples
            .iter()
            .enumerate()
            .filter(|(_, e)| e.heldout == heldout)
            .map(|(i, _)| i)
            .collect()
    }
}

/// A generated corpus: the dataset plus its generating config and bank.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub bank: ConceptBank,
    pub data: Dataset,
    /// Segment boundaries per video, in order.
    pub spans: Vec<Vec<Segment>>,
}

pub fn gen_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    cfg.validate()?;
    let bank = ConceptBank::generate(cfg)?;
    let s = cfg.segments_per_video;
    let n = cfg.frames_per_video;

    let mut videos = Vec::with_capacity(cfg.num_videos);
    let mut spans: Vec<Vec<Segment>> = Vec::with_capacity(cfg.num_videos);
    for v in 0..cfg.num_videos {
        let mut rng = derive(cfg.master_seed, Stream::VideoContent, v as u64);

        // segment lengths: minimum everywhere, spare frames spread uniformly
        let mut lengths = alloc::vec![MIN_SEGMENT_LEN; s];
        for _ in 0..n - s * MIN_SEGMENT_LEN {
            lengths[rng.gen_range(0..s)] += 1;
        }
        let mut segs = Vec::with_capacity(s);
        let mut start = 0;
        for &len in &lengths {
            segs.push(Segment::new(start, start + len - 1)?);
            start += len;
        }

        let mut frames = Vec::with_capacity(n * cfg.d_visual);
        let mut aux_frames = cfg.d_aux.map(|da| Vec::with_capacity(n * da));
        for (i, seg) in segs.iter().enumerate() {
            let concept = &bank.concepts[v * s + i];
            for _ in seg.start()..=seg.end() {
                for &p in &concept.prototype {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    frames.push(quantize(p + cfg.noise_sigma * z));
                }
                if let (Some(buf), Some(proto)) = (aux_frames.as_mut(), &concept.aux_prototype)
                {
                    for &p in proto {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        buf.push(quantize(p + cfg.noise_sigma * z));
                    }
                }
            }
        }
        videos.push(VideoRecord {
            video_id: format!("v{v:04}"),
            n_frames: n,
            d_visual: cfg.d_visual,
            frames,
            aux: match (aux_frames, cfg.d_aux) {
                (Some(f), Some(da)) => Some(AuxTrack { d: da, frames: f }),
                _ => None,
            },
        });
        spans.push(segs);
    }

    let mut examples = Vec::with_capacity(cfg.num_videos * cfg.queries_per_video);
    let mut qid = 0usize;
    for v in 0..cfg.num_videos {
        let mut rng = derive(cfg.master_seed, Stream::Query, v as u64);
        for q in 0..cfg.queries_per_video {
            let span_idx = q % s;
            let concept = &bank.concepts[v * s + span_idx];
            let n_fill = rng.gen_range(1..=3usize);
            let fillers: Vec<u32> = (0..n_fill)
                .map(|_| rng.gen_range(cfg.vocab.filler.start..cfg.vocab.filler.end))
                .collect();
            let n_prefix = rng.gen_range(0..=n_fill);
            let mut tokens = Vec::with_capacity(n_fill + concept.template.len());
            tokens.extend_from_slice(&fillers[..n_prefix]);
            tokens.extend_from_slice(&concept.template);
            tokens.extend_from_slice(&fillers[n_prefix..]);
            examples.push(AnnotatedExample {
                query_id: format!("q{qid:05}"),
                video_id: format!("v{v:04}"),
                video_index: v,
                tokens,
                segment: spans[v][span_idx],
                heldout: false,
            });
            qid += 1;
        }
    }

    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut split_rng = derive(cfg.master_seed, Stream::Split, 0);
    order.shuffle(&mut split_rng);
    let heldout_count =
        ((cfg.heldout_fraction * examples.len() as f64) + 0.5) as usize;
    for &i in order.iter().take(heldout_count.min(examples.len())) {
        examples[i].heldout = true;
    }

    Ok(Corpus {
        config: cfg.clone(),
        bank,
        data: Dataset {
            videos,
            examples,
            vocab: cfg.vocab.clone(),
            d_visual: cfg.d_visual,
            d_aux: cfg.d_aux,
        },
        spans,
    })
}

/// Shuffle the pool and greedily fill batches whose examples come from
/// pairwise-distinct videos (so in-batch negatives are never false).
/// When no remaining example extends the current batch, the batch closes
/// early; every pool entry appears in exactly one batch.
pub fn batch_plan(
    examples: &[AnnotatedExample],
    pool: &[usize],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::config(String::from("batch_size must be >= 2")));
    }
    for &i in pool {
        if i >= examples.len() {
            return Err(Error::Index { op: "batch-plan", index: i, len: examples.len() });
        }
    }
    let mut remaining: Vec<usize> = pool.to_vec();
    remaining.shuffle(rng);
    let mut batches = Vec::new();
    while !remaining.is_empty() {
        let mut batch: Vec<usize> = Vec::with_capacity(batch_size);
        let mut used: Vec<usize> = Vec::with_capacity(batch_size);
        let mut rest = Vec::with_capacity(remaining.len());
        for idx in remaining.drain(..) {
            let vid = examples[idx].video_index;
            if batch.len() < batch_size && !used.contains(&vid) {
                used.push(vid);
                batch.push(idx);
            } else {
                rest.push(idx);
            }
        }
        remaining = rest;
        batches.push(batch);
    }
    Ok(batches)
}

// ── on-disk dataset format ──────────────────────────────────────────────

/// The four files of a stored dataset, as raw bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetFiles {
    pub manifest: Vec<u8>,
    pub features: Vec<u8>,
    pub vocab: Vec<u8>,
    pub checksum: Vec<u8>,
}

const FEATURES_MAGIC: &[u8; 8] = b"HMRDATA1";
const MANIFEST_HEADER: &str = "hmr-dataset 1";

/// FNV-1a 64-bit hash.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn encode_dataset(d: &Dataset) -> Result<DatasetFiles> {
    d.vocab.validate()?;
    let mut features: Vec<u8> = Vec::new();
    features.extend_from_slice(FEATURES_MAGIC);

    let mut manifest = String::new();
    manifest.push_str(MANIFEST_HEADER);
    manifest.push('\n');
    manifest.push_str(&format!("videos {}\n", d.videos.len()));
    manifest.push_str(&format!("examples {}\n", d.examples.len()));
    manifest.push_str(&format!("d_visual {}\n", d.d_visual));
    match d.d_aux {
        Some(da) => manifest.push_str(&format!("d_aux {da}\n")),
        None => manifest.push_str("d_aux -\n"),
    }

    for v in d.videos.iter() {
        v.validate()?;
        if v.d_visual != d.d_visual {
            return Err(Error::input(format!(
                "video {} width {} does not match dataset width {}",
                v.video_id, v.d_visual, d.d_visual
            )));
        }
        let vis_off = features.len();
        for &x in &v.frames {
            features.extend_from_slice(&(x as f32).to_le_bytes());
        }
        let aux_off = match (&v.aux, d.d_aux) {
            (Some(a), Some(da)) => {
                if a.d != da {
                    return Err(Error::input(format!(
                        "video {} aux width {} does not match dataset width {da}",
                        v.video_id, a.d
                    )));
                }
                let off = features.len();
                for &x in &a.frames {
                    features.extend_from_slice(&(x as f32).to_le_bytes());
                }
                Some(off)
            }
            (None, None) => None,
            _ => {
                return Err(Error::input(format!(
                    "video {} disagrees with the dataset about having an auxiliary track",
                    v.video_id
                )))
            }
        };
        match aux_off {
            Some(ao) => manifest
                .push_str(&format!("video {} {} {vis_off} {ao}\n", v.video_id, v.n_frames)),
            None => manifest
                .push_str(&format!("video {} {} {vis_off} -\n", v.video_id, v.n_frames)),
        }
    }

    for e in &d.examples {
        let toks: Vec<String> = e.tokens.iter().map(|t| format!("{t}")).collect();
        manifest.push_str(&format!(
            "ann {} {} {} {} {} {}\n",
            e.query_id,
            e.video_id,
            e.segment.start(),
            e.segment.end(),
            if e.heldout { "heldout" } else { "train" },
            toks.join(",")
        ));
    }

    let vocab = format!(
        "size {}\npad {}\nmask {}\ncontent {} {}\nfiller {} {}\n",
        d.vocab.size,
        d.vocab.pad,
        d.vocab.mask,
        d.vocab.content.start,
        d.vocab.content.end,
        d.vocab.filler.start,
        d.vocab.filler.end
    );
    let checksum = format!("{:016x} features.bin\n", fnv1a64(&features));

    Ok(DatasetFiles {
        manifest: manifest.into_bytes(),
        features,
        vocab: vocab.into_bytes(),
        checksum: checksum.into_bytes(),
    })
}

fn load_err(file: &str, field: &str, what: impl Into<String>) -> Error {
    Error::Load { file: String::from(file), field: String::from(field), what: what.into() }
}

fn parse_num<T: core::str::FromStr>(file: &str, field: &str, s: &str) -> Result<T> {
    s.parse::<T>().map_err(|_| load_err(file, field, format!("cannot parse '{s}' as a number")))
}

pub fn decode_dataset(files: &DatasetFiles) -> Result<Dataset> {
    // checksum gate first: refuse to touch corrupt features
    let sum_text = core::str::from_utf8(&files.checksum)
        .map_err(|_| load_err("checksum", "encoding", "not valid UTF-8"))?;
    let mut sum_parts = sum_text.split_whitespace();
    let stated = sum_parts
        .next()
        .ok_or_else(|| load_err("checksum", "digest", "file is empty"))?;
    let stated = u64::from_str_radix(stated, 16)
        .map_err(|_| load_err("checksum", "digest", format!("'{stated}' is not hex")))?;
    let actual = fnv1a64(&files.features);
    if stated != actual {
        return Err(load_err(
            "checksum",
            "features.bin",
            format!("digest mismatch: stated {stated:016x}, computed {actual:016x}"),
        ));
    }
    if files.features.len() < FEATURES_MAGIC.len()
        || &files.features[..FEATURES_MAGIC.len()] != FEATURES_MAGIC
    {
        return Err(load_err("features.bin", "magic", "missing HMRDATA1 header"));
    }

    // vocabulary
    let vocab_text = core::str::from_utf8(&files.vocab)
        .map_err(|_| load_err("vocab", "encoding", "not valid UTF-8"))?;
    let mut size = None;
    let mut pad = None;
    let mut mask = None;
    let mut content = None;
    let mut filler = None;
    for line in vocab_text.lines().filter(|l| !l.trim().is_empty()) {
        let mut it = line.split_whitespace();
        let key = it.next().unwrap_or("");
        match key {
            "size" => size = Some(parse_num::<usize>("vocab", "size", it.next().unwrap_or(""))?),
            "pad" => pad = Some(parse_num::<u32>("vocab", "pad", it.next().unwrap_or(""))?),
            "mask" => mask = Some(parse_num::<u32>("vocab", "mask", it.next().unwrap_or(""))?),
            "content" | "filler" => {
                let a = parse_num::<u32>("vocab", key, it.next().unwrap_or(""))?;
                let b = parse_num::<u32>("vocab", key, it.next().unwrap_or(""))?;
                if key == "content" {
                    content = Some(a..b);
                } else {
                    filler = Some(a..b);
                }
            }
            other => return Err(load_err("vocab", other, "unknown field")),
        }
    }
    let vocab = VocabLayout {
        size: size.ok_or_else(|| load_err("vocab", "size", "missing"))?,
        pad: pad.ok_or_else(|| load_err("vocab", "pad", "missing"))?,
        mask: mask.ok_or_else(|| load_err("vocab", "mask", "missing"))?,
        content: content.ok_or_else(|| load_err("vocab", "content", "missing"))?,
        filler: filler.ok_or_else(|| load_err("vocab", "filler", "missing"))?,
    };
    vocab.validate()?;

    // manifest
    let text = core::str::from_utf8(&files.manifest)
        .map_err(|_| load_err("manifest", "encoding", "not valid UTF-8"))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().unwrap_or("");
    if header != MANIFEST_HEADER {
        return Err(load_err("manifest", "header", format!("unrecognized header '{header}'")));
    }
    let mut n_videos = None;
    let mut n_examples = None;
    let mut d_visual = None;
    let mut d_aux: Option<Option<usize>> = None;
    let mut videos: Vec<VideoRecord> = Vec::new();
    let mut examples: Vec<AnnotatedExample> = Vec::new();
    let mut index_of: BTreeMap<String, usize> = BTreeMap::new();

    let read_block = |off: usize, count: usize| -> Result<Vec<f64>> {
        let end = off
            .checked_add(count * 4)
            .ok_or_else(|| load_err("manifest", "offset", "overflowing feature offset"))?;
        let block = files
            .features
            .get(off..end)
            .ok_or_else(|| {
                load_err(
                    "features.bin",
                    "extent",
                    format!("block {off}..{end} is outside the {}-byte file", files.features.len()),
                )
            })?;
        Ok(block
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    };

    for line in lines {
        let mut it = line.split_whitespace();
        let key = it.next().unwrap_or("");
        match key {
            "videos" => {
                n_videos =
                    Some(parse_num::<usize>("manifest", "videos", it.next().unwrap_or(""))?)
            }
            "examples" => {
                n_examples =
                    Some(parse_num::<usize>("manifest", "examples", it.next().unwrap_or(""))?)
            }
            "d_visual" => {
                d_visual =
                    Some(parse_num::<usize>("manifest", "d_visual", it.next().unwrap_or(""))?)
            }
            "d_aux" => {
                let v = it.next().unwrap_or("");
                d_aux = Some(if v == "-" {
                    None
                } else {
                    Some(parse_num::<usize>("manifest", "d_aux", v)?)
                });
            }
            "video" => {
                let dv = d_visual
                    .ok_or_else(|| load_err("manifest", "d_visual", "must precede video lines"))?;
                let da = d_aux
                    .ok_or_else(|| load_err("manifest", "d_aux", "must precede video lines"))?;
                let id = it
                    .next()
                    .ok_or_else(|| load_err("manifest", "video", "missing id"))?;
                let n = parse_num::<usize>("manifest", "video frames", it.next().unwrap_or(""))?;
                let vis_off =
                    parse_num::<usize>("manifest", "video offset", it.next().unwrap_or(""))?;
                let aux_field = it.next().unwrap_or("");
                let frames = read_block(vis_off, n * dv)?;
                let aux = match (aux_field, da) {
                    ("-", None) => None,
                    (s, Some(daw)) => {
                        let off = parse_num::<usize>("manifest", "video aux offset", s)?;
                        Some(AuxTrack { d: daw, frames: read_block(off, n * daw)? })
                    }
                    _ => {
                        return Err(load_err(
                            "manifest",
                            "video",
                            format!("aux offset '{aux_field}' disagrees with d_aux"),
                        ))
                    }
                };
                if index_of.insert(String::from(id), videos.len()).is_some() {
                    return Err(load_err("manifest", "video", format!("duplicate id {id}")));
                }
                let rec = VideoRecord {
                    video_id: String::from(id),
                    n_frames: n,
                    d_visual: dv,
                    frames,
                    aux,
                };
                rec.validate()?;
                videos.push(rec);
            }
            "ann" => {
                let qid = it
                    .next()
                    .ok_or_else(|| load_err("manifest", "ann", "missing query id"))?;
                let vid = it
                    .next()
                    .ok_or_else(|| load_err("manifest", "ann", "missing video id"))?;
                let start = parse_num::<usize>("manifest", "ann start", it.next().unwrap_or(""))?;
                let end = parse_num::<usize>("manifest", "ann end", it.next().unwrap_or(""))?;
                let split = it.next().unwrap_or("");
                let heldout = match split {
                    "train" => false,
                    "heldout" => true,
                    other => {
                        return Err(load_err(
                            "manifest",
                            "ann split",
                            format!("expected train|heldout, found '{other}'"),
                        ))
                    }
                };
                let toks = it
                    .next()
                    .ok_or_else(|| load_err("manifest", "ann", "missing token list"))?;
                let mut tokens = Vec::new();
                for t in toks.split(',') {
                    tokens.push(parse_num::<u32>("manifest", "ann token", t)?);
                }
                let video_index = *index_of.get(vid).ok_or_else(|| {
                    load_err("manifest", "ann", format!("unknown video id {vid}"))
                })?;
                let video = &videos[video_index];
                if end >= video.n_frames {
                    return Err(load_err(
                        "manifest",
                        "ann end",
                        format!("frame {end} outside video of {} frames", video.n_frames),
                    ));
                }
                examples.push(AnnotatedExample {
                    query_id: String::from(qid),
                    video_id: String::from(vid),
                    video_index,
                    tokens,
                    segment: Segment::new(start, end)?,
                    heldout,
                });
            }
            other => return Err(load_err("manifest", other, "unknown directive")),
        }
    }

    let n_videos = n_videos.ok_or_else(|| load_err("manifest", "videos", "missing"))?;
    let n_examples = n_examples.ok_or_else(|| load_err("manifest", "examples", "missing"))?;
    if videos.len() != n_videos {
        return Err(load_err(
            "manifest",
            "videos",
            format!("declared {n_videos} but found {}", videos.len()),
        ));
    }
    if examples.len() != n_examples {
        return Err(load_err(
            "manifest",
            "examples",
            format!("declared {n_examples} but found {}", examples.len()),
        ));
    }
    Ok(Dataset {
        videos,
        examples,
        vocab,
        d_visual: d_visual.ok_or_else(|| load_err("manifest", "d_visual", "missing"))?,
        d_aux: d_aux.ok_or_else(|| load_err("manifest", "d_aux", "missing"))?,
    })
}
