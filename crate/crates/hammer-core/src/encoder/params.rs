//! Parameter layout: canonical names, shapes, initialization, and
//! re-binding of loaded parameter sets.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::encoder::{EncoderConfig, ModelKind};
use crate::error::{Error, Result};
use crate::rng::{derive, Stream};
use crate::tensor::{Graph, NodeId, ParamSet, Tensor};


/// Indices (into the owning `ParamSet`) of one attention projection group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttnIdx {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
}

/// One residual encoder layer: attention + feed-forward, each followed
/// by layer normalization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerIdx {
    pub attn: AttnIdx,
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub ff_w1: usize,
    pub ff_b1: usize,
    pub ff_w2: usize,
    pub ff_b2: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
}

/// One bidirectional cross-modal layer. When the auxiliary stream is
/// present the text side carries a second attention (`t2a`) whose output
/// is summed with the visual attention before the shared feed-forward,
/// and the auxiliary stream gets its own text-attending layer (`a2t`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrossIdx {
    pub t2v: LayerIdx,
    pub t2a: Option<AttnIdx>,
    pub v2t: LayerIdx,
    pub a2t: Option<LayerIdx>,
}

/// All layers of one encoder block (text stack, visual stack, optional
/// auxiliary stack, cross-modal layers, optional stream-fusion
/// projection).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockIdx {
    pub text: Vec<LayerIdx>,
    pub vis: Vec<LayerIdx>,
    pub aux: Vec<LayerIdx>,
    pub cross: Vec<CrossIdx>,
    pub fuse_w: Option<usize>,
    pub fuse_b: Option<usize>,
}

/// Input embedding tables and projections.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbedIdx {
    pub token: usize,
    pub text_pos: usize,
    pub text_ln_g: usize,
    pub text_ln_b: usize,
    pub vis_w: usize,
    pub vis_b: usize,
    pub vis_ln_g: usize,
    pub vis_ln_b: usize,
    pub frame_pos: usize,
    pub clip_pos: Option<usize>,
    pub aux_w: Option<usize>,
    pub aux_b: Option<usize>,
    pub aux_ln_g: Option<usize>,
    pub aux_ln_b: Option<usize>,
    pub ccls: usize,
    pub tcls: usize,
}

/// Scoring heads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadIdx {
    pub vr_theta: usize,
    /// Clip-level boundary projections; absent for the flat variant.
    /// With a shared projection both indices coincide.
    pub u_start: Option<usize>,
    pub u_end: Option<usize>,
    pub w_start: usize,
    pub w_end: usize,
    pub mlm_w: usize,
}

/// How the clip-level encoder's weights relate to the frame-level ones.
#[derive(Debug, Clone, PartialEq)]
pub enum ClipWires {
    /// Flat variant: no clip level at all.
    None,
    /// One set of weights serves both levels.
    Shared,
    /// Independent clip-level weights.
    Separate(BlockIdx),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelLayout {
    pub embed: EmbedIdx,
    pub frame: BlockIdx,
    pub clip: ClipWires,
    pub head: HeadIdx,
}

impl ModelLayout {
    pub fn clip_block(&self) -> Option<&BlockIdx> {
        match &self.clip {
            ClipWires::None => None,
            ClipWires::Shared => Some(&self.frame),
            ClipWires::Separate(b) => Some(b),
        }
    }
}

/// A model: its architecture, variant, parameter values, and the layout
/// mapping structural roles to parameter indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: EncoderConfig,
    pub kind: ModelKind,
    pub params: ParamSet,
    pub layout: ModelLayout,
}

impl Model {
    /// Fresh model with fan-in-scaled normal weights (see `Fill`), zero
    /// biases, and unit layer-norm gains, all drawn from a dedicated
    /// seeded stream.
    pub fn init(config: EncoderConfig, kind: ModelKind, master_seed: u64) -> Result<Model> {
        config.validate()?;
        let mut rng = derive(master_seed, Stream::Init, 0);
        let (params, layout) = build(&config, kind, &mut Source::Init(&mut rng))?;
        Ok(Model { config, kind, params, layout })
    }

    /// Rebuild a model around previously saved parameters, verifying that
    /// every expected tensor is present with the right shape and that no
    /// stray tensors remain.
    pub fn from_params(config: EncoderConfig, kind: ModelKind, saved: ParamSet) -> Result<Model> {
        config.validate()?;
        let mut used = alloc::vec![false; saved.len()];
        let (params, layout) = build(&config, kind, &mut Source::Load(&saved, &mut used))?;
        if let Some(i) = used.iter().position(|u| !u) {
            return Err(Error::Load {
                file: String::from("checkpoint"),
                field: String::from(saved.name(i)),
                what: String::from("parameter not used by this architecture"),
            });
        }
        Ok(Model { config, kind, params, layout })
    }
}

enum Source<'a> {
    Init(&'a mut ChaCha8Rng),
    Load(&'a ParamSet, &'a mut Vec<bool>),
}

#[derive(Clone, Copy)]
enum Fill {
    /// Linear-map weight for row-vector inputs (`y = x W`): fan-in scaled,
    /// normal(0, 1/sqrt(rows)), so outputs keep the input's magnitude and
    /// logits start O(1) even at small widths.
    Weight,
    /// Lookup-table row (token/position/cls embeddings): normal(0, 1/sqrt(cols)),
    /// giving each d-dimensional row roughly unit norm.
    Embed,
    Zero,
    One,
}

struct Builder<'a, 'b> {
    out: ParamSet,
    src: &'a mut Source<'b>,
}

impl Builder<'_, '_> {
    fn add(&mut self, name: String, rows: usize, cols: usize, fill: Fill) -> Result<usize> {
        let tensor = match self.src {
            Source::Init(rng) => {
                let n = rows * cols;
                let gauss = |rng: &mut ChaCha8Rng, std: f64| {
                    let mut v = Vec::with_capacity(n);
                    for _ in 0..n {
                        let z: f64 = StandardNormal.sample(&mut *rng);
                        v.push(z * std);
                    }
                    v
                };
                let data = match fill {
                    Fill::Weight => gauss(rng, 1.0 / libm::sqrt(rows as f64)),
                    Fill::Embed => gauss(rng, 1.0 / libm::sqrt(cols as f64)),
                    Fill::Zero => alloc::vec![0.0; n],
                    Fill::One => alloc::vec![1.0; n],
                };
                Tensor::matrix(rows, cols, data)?
            }
            Source::Load(saved, used) => {
                let i = saved.index_of(&name).ok_or_else(|| Error::Load {
                    file: String::from("checkpoint"),
                    field: name.clone(),
                    what: String::from("parameter missing"),
                })?;
                let t = saved.tensor(i);
                let (r, c) = t.dims2();
                if (r, c) != (rows, cols) {
                    return Err(Error::Load {
                        file: String::from("checkpoint"),
                        field: name.clone(),
                        what: format!("shape {r}x{c} but architecture expects {rows}x{cols}"),
                    });
                }
                used[i] = true;
                t.clone()
            }
        };
        let idx = self.out.len();
        self.out.push(name, tensor)?;
        Ok(idx)
    }

    fn attn(&mut self, prefix: &str, d: usize) -> Result<AttnIdx> {
        Ok(AttnIdx {
            wq: self.add(format!("{prefix}.wq"), d, d, Fill::Weight)?,
            bq: self.add(format!("{prefix}.bq"), 1, d, Fill::Zero)?,
            wk: self.add(format!("{prefix}.wk"), d, d, Fill::Weight)?,
            bk: self.add(format!("{prefix}.bk"), 1, d, Fill::Zero)?,
            wv: self.add(format!("{prefix}.wv"), d, d, Fill::Weight)?,
            bv: self.add(format!("{prefix}.bv"), 1, d, Fill::Zero)?,
            wo: self.add(format!("{prefix}.wo"), d, d, Fill::Weight)?,
            bo: self.add(format!("{prefix}.bo"), 1, d, Fill::Zero)?,
        })
    }

    fn layer(&mut self, prefix: &str, d: usize, ffd: usize) -> Result<LayerIdx> {
        Ok(LayerIdx {
            attn: self.attn(&format!("{prefix}.attn"), d)?,
            ln1_g: self.add(format!("{prefix}.ln1.g"), 1, d, Fill::One)?,
            ln1_b: self.add(format!("{prefix}.ln1.b"), 1, d, Fill::Zero)?,
            ff_w1: self.add(format!("{prefix}.ffn.w1"), d, ffd, Fill::Weight)?,
            ff_b1: self.add(format!("{prefix}.ffn.b1"), 1, ffd, Fill::Zero)?,
            ff_w2: self.add(format!("{prefix}.ffn.w2"), ffd, d, Fill::Weight)?,
            ff_b2: self.add(format!("{prefix}.ffn.b2"), 1, d, Fill::Zero)?,
            ln2_g: self.add(format!("{prefix}.ln2.g"), 1, d, Fill::One)?,
            ln2_b: self.add(format!("{prefix}.ln2.b"), 1, d, Fill::Zero)?,
        })
    }

    fn block(&mut self, prefix: &str, cfg: &EncoderConfig, with_aux: bool) -> Result<BlockIdx> {
        let d = cfg.d_model;
        let ffd = d * cfg.ffn_mult;
        let mut text = Vec::new();
        for i in 0..cfg.text_layers {
            text.push(self.layer(&format!("{prefix}.text.{i}"), d, ffd)?);
        }
        let mut vis = Vec::new();
        for i in 0..cfg.visual_layers {
            vis.push(self.layer(&format!("{prefix}.vis.{i}"), d, ffd)?);
        }
        let mut aux = Vec::new();
        if with_aux {
            for i in 0..cfg.visual_layers {
                aux.push(self.layer(&format!("{prefix}.aux.{i}"), d, ffd)?);
            }
        }
        let mut cross = Vec::new();
        for i in 0..cfg.cross_modal_layers {
            let t2v = self.layer(&format!("{prefix}.cross.{i}.t2v"), d, ffd)?;
            let t2a = if with_aux {
                Some(self.attn(&format!("{prefix}.cross.{i}.t2a"), d)?)
            } else {
                None
            };
            let v2t = self.layer(&format!("{prefix}.cross.{i}.v2t"), d, ffd)?;
            let a2t = if with_aux {
                Some(self.layer(&format!("{prefix}.cross.{i}.a2t"), d, ffd)?)
            } else {
                None
            };
            cross.push(CrossIdx { t2v, t2a, v2t, a2t });
        }
        let (fuse_w, fuse_b) = if with_aux {
            (
                Some(self.add(format!("{prefix}.fuse.w"), 2 * d, d, Fill::Weight)?),
                Some(self.add(format!("{prefix}.fuse.b"), 1, d, Fill::Zero)?),
            )
        } else {
            (None, None)
        };
        Ok(BlockIdx { text, vis, aux, cross, fuse_w, fuse_b })
    }
}

fn build(
    cfg: &EncoderConfig,
    kind: ModelKind,
    src: &mut Source<'_>,
) -> Result<(ParamSet, ModelLayout)> {
    let d = cfg.d_model;
    let mut b = Builder { out: ParamSet::new(), src };

    let embed = EmbedIdx {
        token: b.add(String::from("embed.token"), cfg.vocab_size, d, Fill::Embed)?,
        text_pos: b.add(String::from("embed.text_pos"), cfg.max_query_len, d, Fill::Embed)?,
        text_ln_g: b.add(String::from("embed.text_ln.g"), 1, d, Fill::One)?,
        text_ln_b: b.add(String::from("embed.text_ln.b"), 1, d, Fill::Zero)?,
        vis_w: b.add(String::from("embed.vis_proj.w"), cfg.d_visual, d, Fill::Weight)?,
        vis_b: b.add(String::from("embed.vis_proj.b"), 1, d, Fill::Zero)?,
        vis_ln_g: b.add(String::from("embed.vis_ln.g"), 1, d, Fill::One)?,
        vis_ln_b: b.add(String::from("embed.vis_ln.b"), 1, d, Fill::Zero)?,
        frame_pos: b.add(String::from("embed.frame_pos"), cfg.n_max, d, Fill::Embed)?,
        clip_pos: if kind == ModelKind::Hammer && cfg.clip_position_embeddings {
            Some(b.add(String::from("embed.clip_pos"), cfg.max_clips(), d, Fill::Embed)?)
        } else {
            None
        },
        aux_w: match cfg.d_aux {
            Some(da) => Some(b.add(String::from("embed.aux_proj.w"), da, d, Fill::Weight)?),
            None => None,
        },
        aux_b: match cfg.d_aux {
            Some(_) => Some(b.add(String::from("embed.aux_proj.b"), 1, d, Fill::Zero)?),
            None => None,
        },
        aux_ln_g: match cfg.d_aux {
            Some(_) => Some(b.add(String::from("embed.aux_ln.g"), 1, d, Fill::One)?),
            None => None,
        },
        aux_ln_b: match cfg.d_aux {
            Some(_) => Some(b.add(String::from("embed.aux_ln.b"), 1, d, Fill::Zero)?),
            None => None,
        },
        ccls: b.add(String::from("embed.ccls"), 1, d, Fill::Embed)?,
        tcls: b.add(String::from("embed.tcls"), 1, d, Fill::Embed)?,
    };

    let with_aux = cfg.d_aux.is_some();
    let shared = kind == ModelKind::Hammer && cfg.share_frame_clip_weights;
    let frame_prefix = if shared { "encoder" } else { "frame_encoder" };
    let frame = b.block(frame_prefix, cfg, with_aux)?;
    let clip = match kind {
        ModelKind::Flat => ClipWires::None,
        ModelKind::Hammer if shared => ClipWires::Shared,
        ModelKind::Hammer => ClipWires::Separate(b.block("clip_encoder", cfg, false)?),
    };

    let (u_start, u_end) = if kind == ModelKind::Hammer {
        if cfg.share_u {
            let u = b.add(String::from("head.tl.u"), 2 * d, 1, Fill::Weight)?;
            (Some(u), Some(u))
        } else {
            (
                Some(b.add(String::from("head.tl.u_start"), 2 * d, 1, Fill::Weight)?),
                Some(b.add(String::from("head.tl.u_end"), 2 * d, 1, Fill::Weight)?),
            )
        }
    } else {
        (None, None)
    };
    let head = HeadIdx {
        vr_theta: b.add(String::from("head.vr.theta"), d, 1, Fill::Weight)?,
        u_start,
        u_end,
        w_start: b.add(String::from("head.tl.w_start"), 2 * d, 1, Fill::Weight)?,
        w_end: b.add(String::from("head.tl.w_end"), 2 * d, 1, Fill::Weight)?,
        mlm_w: b.add(String::from("head.mlm.w"), d, cfg.vocab_size, Fill::Weight)?,
    };

    Ok((b.out, ModelLayout { embed, frame, clip, head }))
}

/// A model's parameters materialized as graph nodes, either trainable
/// leaves (gradients flow) or constants (frozen).
pub struct BoundModel<'m> {
    pub model: &'m Model,
    ids: Vec<NodeId>,
}

/// Insert every parameter into `g`, preserving parameter-set order.
pub fn bind<'m>(g: &mut Graph, model: &'m Model, trainable: bool) -> Result<BoundModel<'m>> {
    let mut ids = Vec::with_capacity(model.params.len());
    for i in 0..model.params.len() {
        let t = model.params.tensor(i);
        let id = if trainable { g.param(t) } else { g.constant(t) };
        ids.push(id);
    }
    Ok(BoundModel { model, ids })
}

impl BoundModel<'_> {
    /// Graph node for parameter index `idx` (as recorded in the layout).
    pub fn id(&self, idx: usize) -> NodeId {
        self.ids[idx]
    }

    /// All parameter nodes in parameter-set order.
    pub fn param_nodes(&self) -> &[NodeId] {
        &self.ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;

    fn tiny_cfg() -> EncoderConfig {
        EncoderConfig {
            d_model: 8,
            heads: 2,
            text_layers: 2,
            visual_layers: 1,
            cross_modal_layers: 1,
            clip_length: 4,
            n_max: 16,
            max_query_len: 8,
            vocab_size: 12,
            d_visual: 6,
            d_aux: None,
            ..EncoderConfig::default()
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = Model::init(tiny_cfg(), ModelKind::Hammer, 7).unwrap();
        let b = Model::init(tiny_cfg(), ModelKind::Hammer, 7).unwrap();
        let c = Model::init(tiny_cfg(), ModelKind::Hammer, 8).unwrap();
        for i in 0..a.params.len() {
            assert_eq!(a.params.tensor(i).data(), b.params.tensor(i).data());
        }
        let differs =
            (0..a.params.len()).any(|i| a.params.tensor(i).data() != c.params.tensor(i).data());
        assert!(differs);
    }

    #[test]
    fn shared_weights_halve_the_block_parameters() {
        let unshared = Model::init(tiny_cfg(), ModelKind::Hammer, 1).unwrap();
        let shared = Model::init(
            EncoderConfig { share_frame_clip_weights: true, ..tiny_cfg() },
            ModelKind::Hammer,
            1,
        )
        .unwrap();
        let count_prefix = |m: &Model, p: &str| {
            m.params.iter().filter(|(n, _)| n.starts_with(p)).count()
        };
        assert_eq!(count_prefix(&shared, "clip_encoder."), 0);
        assert_eq!(count_prefix(&shared, "encoder."), count_prefix(&unshared, "frame_encoder."));
        assert_eq!(
            count_prefix(&unshared, "frame_encoder."),
            count_prefix(&unshared, "clip_encoder.")
        );
        assert!(shared.params.len() < unshared.params.len());
    }

    #[test]
    fn flat_model_has_no_clip_level_or_clip_projections() {
        let flat = Model::init(tiny_cfg(), ModelKind::Flat, 1).unwrap();
        assert!(flat.layout.clip_block().is_none());
        assert!(flat.layout.head.u_start.is_none());
        assert!(flat.layout.embed.clip_pos.is_none());
        assert!(flat.params.index_of("head.tl.w_start").is_some());
    }

    #[test]
    fn shared_boundary_projection_collapses_to_one_tensor() {
        let m = Model::init(
            EncoderConfig { share_u: true, ..tiny_cfg() },
            ModelKind::Hammer,
            1,
        )
        .unwrap();
        assert_eq!(m.layout.head.u_start, m.layout.head.u_end);
        assert!(m.params.index_of("head.tl.u").is_some());
        assert!(m.params.index_of("head.tl.u_start").is_none());
    }

    #[test]
    fn aux_stream_adds_its_own_projections_and_fusion() {
        let m = Model::init(
            EncoderConfig { d_aux: Some(5), ..tiny_cfg() },
            ModelKind::Hammer,
            1,
        )
        .unwrap();
        assert!(m.params.index_of("embed.aux_proj.w").is_some());
        assert!(m.params.index_of("frame_encoder.cross.0.t2a.wq").is_some());
        assert!(m.params.index_of("frame_encoder.cross.0.a2t.attn.wq").is_some());
        assert!(m.params.index_of("frame_encoder.fuse.w").is_some());
        // clip level never sees the auxiliary stream
        assert!(m.params.index_of("clip_encoder.fuse.w").is_none());
        assert!(m.params.index_of("clip_encoder.aux.0.attn.wq").is_none());
    }

    #[test]
    fn roundtrip_through_saved_params_is_identity() {
        let m = Model::init(tiny_cfg(), ModelKind::Hammer, 3).unwrap();
        let re = Model::from_params(tiny_cfg(), ModelKind::Hammer, m.params.clone()).unwrap();
        assert_eq!(m.params, re.params);
        assert_eq!(m.layout, re.layout);
    }

    #[test]
    fn loading_rejects_missing_extra_and_misshapen_tensors() {
        let m = Model::init(tiny_cfg(), ModelKind::Hammer, 3).unwrap();

        // missing: wrong variant consumes fewer tensors -> extra error
        let err = Model::from_params(tiny_cfg(), ModelKind::Flat, m.params.clone()).unwrap_err();
        assert!(matches!(err, Error::Load { .. }), "{err}");

        // extra tensor
        let mut extra = m.params.clone();
        extra
            .push(String::from("stray.w"), Tensor::matrix(1, 1, alloc::vec![0.0]).unwrap())
            .unwrap();
        let err = Model::from_params(tiny_cfg(), ModelKind::Hammer, extra).unwrap_err();
        match &err {
            Error::Load { field, .. } => assert_eq!(field, "stray.w"),
            other => panic!("unexpected error {other}"),
        }

        // shape mismatch: change d_visual so the projection disagrees
        let cfg2 = EncoderConfig { d_visual: 7, ..tiny_cfg() };
        let err = Model::from_params(cfg2, ModelKind::Hammer, m.params.clone()).unwrap_err();
        match &err {
            Error::Load { field, what, .. } => {
                assert_eq!(field, "embed.vis_proj.w");
                assert!(what.contains("expects"), "{what}");
            }
            other => panic!("unexpected error {other}"),
        }
    }
}
