//! The trainable adapter branch.
//!
//! FBNM (nuances mining) runs a conv stem on the raw image, builds a
//! 1/8-1/16-1/32 pyramid with a stride-2 conv plus FGSAttn per level,
//! projects every level to width `D`, flattens and concatenates them, and
//! injects the result into the ViT tokens through cross-attention.
//!
//! FBFE (feature enhancement) runs after every backbone group: FGSAttn over
//! the ViT tokens, adapter <- ViT extraction cross-attention, a convolutional
//! FFN per pyramid level, and (except after the last group) ViT <- adapter
//! injection cross-attention.

use crate::backbone::TokenSequence;
use crate::error::{Error, Result};
use crate::fgsattn::{
    fgsattn_forward_traced, fgsattn_tokens_traced, FgsAttn, FgsAttnTrace, InitMode,
};
use crate::tensor::{
    attention, concat, conv2d, conv2d_depthwise, init_xavier, linear, maxpool2d, ParamSet, Tensor,
};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdapterConfig {
    /// Shared token width D (equals the backbone embed dim).
    pub dim: usize,
    /// Ring width d for every FGSAttn instance (clamped per map size).
    pub ring_width: usize,
    pub heads: usize,
    pub ffn_mult: usize,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        AdapterConfig {
            dim: 64,
            ring_width: 1,
            heads: 4,
            ffn_mult: 4,
        }
    }
}

impl AdapterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.ring_width == 0 || self.ffn_mult == 0 {
            return Err(Error::Config(
                "adapter dim, ring width and ffn_mult must be positive".into(),
            ));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "adapter dim {} not divisible into {} heads",
                self.dim, self.heads
            )));
        }
        Ok(())
    }

    fn stem_channels(&self) -> usize {
        (self.dim / 4).max(2)
    }

    fn level_channels(&self) -> usize {
        (self.dim / 2).max(4)
    }
}

// ---------------------------------------------------------------------------
// Feature pyramid
// ---------------------------------------------------------------------------

/// Three projected pyramid levels stored as one flattened token matrix
/// `[A1 + A2 + A3, D]` (rows in 1/8, 1/16, 1/32 order) plus the spatial
/// extents needed to unflatten. Flatten/unflatten round-trips bit-exactly.
pub struct FeaturePyramid {
    pub flat: Tensor,
    pub level_shapes: Vec<(usize, usize)>,
}

impl FeaturePyramid {
    /// Row-concatenates `[h, w, D]` maps in the given order.
    pub fn from_levels(levels: &[Tensor]) -> Result<FeaturePyramid> {
        if levels.is_empty() {
            return Err(Error::invalid("feature_pyramid", "no levels"));
        }
        let mut level_shapes = Vec::with_capacity(levels.len());
        let mut flats = Vec::with_capacity(levels.len());
        let d = levels[0].shape()[2];
        for lvl in levels {
            let s = lvl.shape();
            if s.len() != 3 || s[2] != d {
                return Err(Error::shape(
                    "feature_pyramid",
                    format!("level {:?} does not match width {}", s, d),
                ));
            }
            level_shapes.push((s[0], s[1]));
            flats.push(lvl.reshape(&[s[0] * s[1], d])?);
        }
        let refs: Vec<&Tensor> = flats.iter().collect();
        Ok(FeaturePyramid {
            flat: concat(&refs, 0)?,
            level_shapes,
        })
    }

    pub fn width(&self) -> usize {
        self.flat.shape()[1]
    }

    pub fn rows(&self) -> usize {
        self.flat.shape()[0]
    }

    /// Splits the flat matrix back into `[h, w, D]` level maps.
    pub fn unflatten(&self) -> Result<Vec<Tensor>> {
        let d = self.width();
        let mut out = Vec::with_capacity(self.level_shapes.len());
        let mut row = 0;
        for &(h, w) in &self.level_shapes {
            let part = crate::tensor::slice(&self.flat, 0, row, h * w)?;
            out.push(part.reshape(&[h, w, d])?);
            row += h * w;
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Submodules
// ---------------------------------------------------------------------------

/// Multi-head cross-attention with its four projections. The output
/// projection is zero-initialized in `ZeroResidual` mode so the enclosing
/// residual starts as an exact identity.
pub struct CrossAttention {
    wq: Tensor,
    bq: Tensor,
    // no key bias: softmax is invariant to constant key shifts, which would
    // leave the parameter permanently gradient-free
    wk: Tensor,
    wv: Tensor,
    bv: Tensor,
    wo: Tensor,
    bo: Tensor,
    heads: usize,
}

impl CrossAttention {
    fn new(dim: usize, heads: usize, rng: &mut ChaCha8Rng, init: InitMode) -> CrossAttention {
        CrossAttention {
            wq: init_xavier(rng, &[dim, dim], dim, dim),
            bq: Tensor::zeros(&[dim]),
            wk: init_xavier(rng, &[dim, dim], dim, dim),
            wv: init_xavier(rng, &[dim, dim], dim, dim),
            bv: Tensor::zeros(&[dim]),
            wo: match init {
                InitMode::ZeroResidual => Tensor::zeros(&[dim, dim]),
                InitMode::Random => init_xavier(rng, &[dim, dim], dim, dim),
            },
            bo: Tensor::zeros(&[dim]),
            heads,
        }
    }

    /// Queries from `query [Nq, D]`, keys/values from `keyval [Nk, D]`.
    pub fn forward(&self, query: &Tensor, keyval: &Tensor) -> Result<Tensor> {
        if query.shape().len() != 2
            || keyval.shape().len() != 2
            || query.shape()[1] != keyval.shape()[1]
        {
            return Err(Error::shape(
                "cross_attention",
                format!("query {:?} vs keyval {:?}", query.shape(), keyval.shape()),
            ));
        }
        let q = linear(query, &self.wq, Some(&self.bq))?;
        let k = linear(keyval, &self.wk, None)?;
        let v = linear(keyval, &self.wv, Some(&self.bv))?;
        let ctx = attention(&q, &k, &v, self.heads)?;
        linear(&ctx, &self.wo, Some(&self.bo))
    }

    fn register(&self, params: &mut ParamSet, prefix: &str, trainable: bool) {
        params.insert(format!("{prefix}/wq"), &self.wq, trainable);
        params.insert(format!("{prefix}/bq"), &self.bq, trainable);
        params.insert(format!("{prefix}/wk"), &self.wk, trainable);
        params.insert(format!("{prefix}/wv"), &self.wv, trainable);
        params.insert(format!("{prefix}/bv"), &self.bv, trainable);
        params.insert(format!("{prefix}/wo"), &self.wo, trainable);
        params.insert(format!("{prefix}/bo"), &self.bo, trainable);
    }
}

/// Convolutional feed-forward applied to one unflattened pyramid level:
/// 1x1 conv (D -> h*D), depthwise 3x3, GELU, 1x1 conv (h*D -> D).
struct ConvFfn {
    w1: Tensor,
    b1: Tensor,
    dw: Tensor,
    db: Tensor,
    w2: Tensor,
    b2: Tensor,
}

impl ConvFfn {
    fn new(dim: usize, mult: usize, rng: &mut ChaCha8Rng, init: InitMode) -> ConvFfn {
        let hidden = dim * mult;
        ConvFfn {
            w1: init_xavier(rng, &[1, 1, dim, hidden], dim, hidden),
            b1: Tensor::zeros(&[hidden]),
            dw: init_xavier(rng, &[3, 3, hidden], 9, 9),
            db: Tensor::zeros(&[hidden]),
            w2: match init {
                InitMode::ZeroResidual => Tensor::zeros(&[1, 1, hidden, dim]),
                InitMode::Random => init_xavier(rng, &[1, 1, hidden, dim], hidden, dim),
            },
            b2: Tensor::zeros(&[dim]),
        }
    }

    fn forward(&self, level: &Tensor) -> Result<Tensor> {
        let x = conv2d(level, &self.w1, Some(&self.b1), 1, 0)?;
        let x = conv2d_depthwise(&x, &self.dw, Some(&self.db), 1, 1)?.gelu();
        conv2d(&x, &self.w2, Some(&self.b2), 1, 0)
    }

    fn register(&self, params: &mut ParamSet, prefix: &str, trainable: bool) {
        params.insert(format!("{prefix}/w1"), &self.w1, trainable);
        params.insert(format!("{prefix}/b1"), &self.b1, trainable);
        params.insert(format!("{prefix}/dw"), &self.dw, trainable);
        params.insert(format!("{prefix}/db"), &self.db, trainable);
        params.insert(format!("{prefix}/w2"), &self.w2, trainable);
        params.insert(format!("{prefix}/b2"), &self.b2, trainable);
    }
}

/// ResNet-style stem: stride-2 conv, two 3x3 convs, stride-2 max pool.
pub struct ConvStem {
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
    w3: Tensor,
    b3: Tensor,
}

impl ConvStem {
    fn new(c0: usize, rng: &mut ChaCha8Rng) -> ConvStem {
        ConvStem {
            w1: init_xavier(rng, &[3, 3, 3, c0], 27, 9 * c0),
            b1: Tensor::zeros(&[c0]),
            w2: init_xavier(rng, &[3, 3, c0, c0], 9 * c0, 9 * c0),
            b2: Tensor::zeros(&[c0]),
            w3: init_xavier(rng, &[3, 3, c0, c0], 9 * c0, 9 * c0),
            b3: Tensor::zeros(&[c0]),
        }
    }

    /// `[H, W, 3] -> [H/4, W/4, C0]`; extents must divide by 32 so the
    /// pyramid below bottoms out on whole bins.
    pub fn forward(&self, image: &Tensor) -> Result<Tensor> {
        let s = image.shape();
        if s.len() != 3 || s[2] != 3 {
            return Err(Error::shape(
                "conv_stem",
                format!("expected [H, W, 3], got {:?}", s),
            ));
        }
        if !s[0].is_multiple_of(32) || !s[1].is_multiple_of(32) {
            return Err(Error::invalid(
                "conv_stem",
                format!("extents {}x{} not divisible by 32", s[0], s[1]),
            ));
        }
        let x = conv2d(image, &self.w1, Some(&self.b1), 2, 1)?;
        let x = conv2d(&x, &self.w2, Some(&self.b2), 1, 1)?;
        let x = conv2d(&x, &self.w3, Some(&self.b3), 1, 1)?;
        maxpool2d(&x, 2, 2)
    }

    fn register(&self, params: &mut ParamSet, prefix: &str, trainable: bool) {
        params.insert(format!("{prefix}/w1"), &self.w1, trainable);
        params.insert(format!("{prefix}/b1"), &self.b1, trainable);
        params.insert(format!("{prefix}/w2"), &self.w2, trainable);
        params.insert(format!("{prefix}/b2"), &self.b2, trainable);
        params.insert(format!("{prefix}/w3"), &self.w3, trainable);
        params.insert(format!("{prefix}/b3"), &self.b3, trainable);
    }
}

struct FbnmLevel {
    conv_w: Tensor,
    conv_b: Tensor,
    /// Absent on degenerate 1x1 maps, where a single bin has no frequency
    /// structure and the attention acts as the identity.
    attn: Option<FgsAttn>,
}

/// Frequency-based nuances mining: stem, pyramid, projection, injection.
pub struct Fbnm {
    stem: ConvStem,
    levels: Vec<FbnmLevel>,
    proj_w: Vec<Tensor>,
    proj_b: Vec<Tensor>,
    inject: CrossAttention,
}

impl Fbnm {
    fn new(
        image_size: usize,
        cfg: &AdapterConfig,
        rng: &mut ChaCha8Rng,
        init: InitMode,
    ) -> Result<Fbnm> {
        let c0 = cfg.stem_channels();
        let cl = cfg.level_channels();
        let stem = ConvStem::new(c0, rng);
        let mut levels = Vec::with_capacity(3);
        let mut in_c = c0;
        let mut extent = image_size / 4;
        for _ in 0..3 {
            extent /= 2;
            let attn = if extent >= 2 {
                Some(FgsAttn::new(extent, extent, cfg.ring_width, rng, init)?)
            } else {
                None
            };
            levels.push(FbnmLevel {
                conv_w: init_xavier(rng, &[3, 3, in_c, cl], 9 * in_c, 9 * cl),
                conv_b: Tensor::zeros(&[cl]),
                attn,
            });
            in_c = cl;
        }
        let proj_w = (0..3)
            .map(|_| init_xavier(rng, &[1, 1, cl, cfg.dim], cl, cfg.dim))
            .collect();
        let proj_b = (0..3).map(|_| Tensor::zeros(&[cfg.dim])).collect();
        Ok(Fbnm {
            stem,
            levels,
            proj_w,
            proj_b,
            inject: CrossAttention::new(cfg.dim, cfg.heads, rng, init),
        })
    }

    /// Three stride-2 conv + FGSAttn blocks over the stem output, producing
    /// the pre-projection 1/8, 1/16, 1/32 maps and their attention traces.
    pub fn pyramid(&self, stem_out: &Tensor) -> Result<(Vec<Tensor>, Vec<Option<FgsAttnTrace>>)> {
        let mut maps = Vec::with_capacity(3);
        let mut traces = Vec::with_capacity(3);
        let mut x = stem_out.clone();
        for level in &self.levels {
            x = conv2d(&x, &level.conv_w, Some(&level.conv_b), 2, 1)?;
            if let Some(attn) = &level.attn {
                let (out, trace) = fgsattn_forward_traced(&x, &attn.params, &attn.part)?;
                x = out;
                traces.push(Some(trace));
            } else {
                traces.push(None);
            }
            maps.push(x.clone());
        }
        Ok((maps, traces))
    }

    /// Per-level 1x1 projection to D, flatten, concat in 1/8-1/16-1/32 order.
    pub fn project_flatten(&self, maps: &[Tensor]) -> Result<FeaturePyramid> {
        if maps.len() != 3 {
            return Err(Error::shape(
                "fbnm_project",
                format!("expected 3 levels, got {}", maps.len()),
            ));
        }
        let mut projected = Vec::with_capacity(3);
        for (i, map) in maps.iter().enumerate() {
            projected.push(conv2d(map, &self.proj_w[i], Some(&self.proj_b[i]), 1, 0)?);
        }
        FeaturePyramid::from_levels(&projected)
    }

    /// Residual injection of the pyramid into the ViT tokens.
    pub fn inject(&self, vit: &TokenSequence, pyramid: &FeaturePyramid) -> Result<TokenSequence> {
        let delta = self.inject.forward(&vit.tokens, &pyramid.flat)?;
        Ok(TokenSequence {
            tokens: vit.tokens.add(&delta)?,
            grid: vit.grid,
        })
    }

    /// stem -> pyramid -> project -> inject.
    pub fn forward(
        &self,
        image: &Tensor,
        vit: &TokenSequence,
    ) -> Result<(FeaturePyramid, TokenSequence, Vec<Option<FgsAttnTrace>>)> {
        let stem_out = self.stem.forward(image)?;
        let (maps, traces) = self.pyramid(&stem_out)?;
        let pyramid = self.project_flatten(&maps)?;
        let injected = self.inject(vit, &pyramid)?;
        Ok((pyramid, injected, traces))
    }

    pub fn stem(&self) -> &ConvStem {
        &self.stem
    }

    fn register(&self, params: &mut ParamSet, prefix: &str, trainable: bool) {
        self.stem
            .register(params, &format!("{prefix}/stem"), trainable);
        for (i, level) in self.levels.iter().enumerate() {
            params.insert(
                format!("{prefix}/level{i}/conv_w"),
                &level.conv_w,
                trainable,
            );
            params.insert(
                format!("{prefix}/level{i}/conv_b"),
                &level.conv_b,
                trainable,
            );
            if let Some(attn) = &level.attn {
                attn.register(params, &format!("{prefix}/level{i}/fgsattn"), trainable);
            }
        }
        for i in 0..3 {
            params.insert(format!("{prefix}/proj{i}/w"), &self.proj_w[i], trainable);
            params.insert(format!("{prefix}/proj{i}/b"), &self.proj_b[i], trainable);
        }
        self.inject
            .register(params, &format!("{prefix}/inject"), trainable);
    }
}

/// One frequency-based feature enhancement step (after one backbone group).
pub struct Fbfe {
    attn: FgsAttn,
    extract: CrossAttention,
    ffn: ConvFfn,
    /// Absent on the last step: the ViT stream is not updated there.
    inject: Option<CrossAttention>,
}

impl Fbfe {
    fn new(
        token_grid: (usize, usize),
        cfg: &AdapterConfig,
        is_last: bool,
        rng: &mut ChaCha8Rng,
        init: InitMode,
    ) -> Result<Fbfe> {
        Ok(Fbfe {
            attn: FgsAttn::new(token_grid.0, token_grid.1, cfg.ring_width, rng, init)?,
            extract: CrossAttention::new(cfg.dim, cfg.heads, rng, init),
            ffn: ConvFfn::new(cfg.dim, cfg.ffn_mult, rng, init),
            inject: if is_last {
                None
            } else {
                Some(CrossAttention::new(cfg.dim, cfg.heads, rng, init))
            },
        })
    }

    /// FGSAttn on the ViT stream, adapter extraction, per-level conv FFN,
    /// then (unless last) injection back into the ViT stream.
    pub fn forward(
        &self,
        vit: &TokenSequence,
        pyramid: &FeaturePyramid,
    ) -> Result<(TokenSequence, FeaturePyramid, FgsAttnTrace)> {
        let (vit_hat, trace) =
            fgsattn_tokens_traced(&vit.tokens, vit.grid, &self.attn.params, &self.attn.part)?;

        let extracted = self.extract.forward(&pyramid.flat, &vit_hat)?;
        let adapter_hat = FeaturePyramid {
            flat: pyramid.flat.add(&extracted)?,
            level_shapes: pyramid.level_shapes.clone(),
        };

        let mut new_levels = Vec::with_capacity(adapter_hat.level_shapes.len());
        for level in adapter_hat.unflatten()? {
            new_levels.push(level.add(&self.ffn.forward(&level)?)?);
        }
        let adapter_next = FeaturePyramid::from_levels(&new_levels)?;

        let vit_next = match &self.inject {
            Some(inject) => vit_hat.add(&inject.forward(&vit_hat, &adapter_next.flat)?)?,
            None => vit_hat,
        };
        Ok((
            TokenSequence {
                tokens: vit_next,
                grid: vit.grid,
            },
            adapter_next,
            trace,
        ))
    }

    fn register(&self, params: &mut ParamSet, prefix: &str, trainable: bool) {
        self.attn
            .register(params, &format!("{prefix}/fgsattn"), trainable);
        self.extract
            .register(params, &format!("{prefix}/extract"), trainable);
        self.ffn
            .register(params, &format!("{prefix}/ffn"), trainable);
        if let Some(inject) = &self.inject {
            inject.register(params, &format!("{prefix}/inject"), trainable);
        }
    }
}

/// The full adapter: one FBNM plus one FBFE per backbone group.
pub struct Adapter {
    pub cfg: AdapterConfig,
    pub fbnm: Fbnm,
    pub fbfe: Vec<Fbfe>,
}

impl Adapter {
    pub fn new(
        image_size: usize,
        token_grid: (usize, usize),
        group_count: usize,
        cfg: &AdapterConfig,
        rng: &mut ChaCha8Rng,
        init: InitMode,
    ) -> Result<Adapter> {
        cfg.validate()?;
        if !image_size.is_multiple_of(32) {
            return Err(Error::Config(format!(
                "image size {} not divisible by 32",
                image_size
            )));
        }
        let fbnm = Fbnm::new(image_size, cfg, rng, init)?;
        let fbfe = (0..group_count)
            .map(|g| Fbfe::new(token_grid, cfg, g + 1 == group_count, rng, init))
            .collect::<Result<Vec<_>>>()?;
        Ok(Adapter {
            cfg: cfg.clone(),
            fbnm,
            fbfe,
        })
    }

    pub fn register(&self, params: &mut ParamSet, trainable: bool) {
        self.fbnm.register(params, "adapter/fbnm", trainable);
        for (g, fbfe) in self.fbfe.iter().enumerate() {
            fbfe.register(params, &format!("adapter/fbfe{g}"), trainable);
        }
    }
}
