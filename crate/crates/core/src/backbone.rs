//! Toy frozen ViT backbone: patch embedding plus L pre-norm transformer
//! layers split into M groups of K layers. The adapter interacts at group
//! boundaries, so groups are exposed individually rather than as one stack.
//!
//! "Pretrained" at desk scale means a fixed-seed random initialization that is
//! checkpointed and then frozen; the adaptation mechanics are identical.

use crate::error::{Error, Result};
use crate::tensor::{
    attention, init_uniform, init_xavier, layer_norm, linear, softmax_rows, ParamSet, Tensor,
};
use rand_chacha::ChaCha8Rng;
use std::rc::Rc;

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackboneConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub group_count: usize,
    pub layers_per_group: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            image_size: 64,
            patch_size: 8,
            embed_dim: 64,
            depth: 8,
            heads: 4,
            group_count: 4,
            layers_per_group: 2,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth != self.group_count * self.layers_per_group {
            return Err(Error::Config(format!(
                "depth {} must equal group_count {} x layers_per_group {}",
                self.depth, self.group_count, self.layers_per_group
            )));
        }
        if self.patch_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return Err(Error::Config(format!(
                "image size {} not divisible by patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "embed dim {} not divisible into {} heads",
                self.embed_dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> (usize, usize) {
        let g = self.image_size / self.patch_size;
        (g, g)
    }

    pub fn token_count(&self) -> usize {
        let (h, w) = self.grid();
        h * w
    }
}

/// Serialized patch tokens plus their spatial grid.
pub struct TokenSequence {
    pub tokens: Tensor,
    pub grid: (usize, usize),
}

struct Mhsa {
    wq: Tensor,
    bq: Tensor,
    wk: Tensor,
    bk: Tensor,
    wv: Tensor,
    bv: Tensor,
    wo: Tensor,
    bo: Tensor,
    heads: usize,
}

impl Mhsa {
    fn new(dim: usize, heads: usize, rng: &mut ChaCha8Rng, zero: bool) -> Mhsa {
        let mk = |rng: &mut ChaCha8Rng| {
            if zero {
                Tensor::zeros(&[dim, dim])
            } else {
                init_xavier(rng, &[dim, dim], dim, dim)
            }
        };
        Mhsa {
            wq: mk(rng),
            bq: Tensor::zeros(&[dim]),
            wk: mk(rng),
            bk: Tensor::zeros(&[dim]),
            wv: mk(rng),
            bv: Tensor::zeros(&[dim]),
            wo: mk(rng),
            bo: Tensor::zeros(&[dim]),
            heads,
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let q = linear(x, &self.wq, Some(&self.bq))?;
        let k = linear(x, &self.wk, Some(&self.bk))?;
        let v = linear(x, &self.wv, Some(&self.bv))?;
        let ctx = attention(&q, &k, &v, self.heads)?;
        linear(&ctx, &self.wo, Some(&self.bo))
    }

    fn register(&self, params: &mut ParamSet, prefix: &str, trainable: bool) {
        params.insert(format!("{prefix}/wq"), &self.wq, trainable);
        params.insert(format!("{prefix}/bq"), &self.bq, trainable);
        params.insert(format!("{prefix}/wk"), &self.wk, trainable);
        params.insert(format!("{prefix}/bk"), &self.bk, trainable);
        params.insert(format!("{prefix}/wv"), &self.wv, trainable);
        params.insert(format!("{prefix}/bv"), &self.bv, trainable);
        params.insert(format!("{prefix}/wo"), &self.wo, trainable);
        params.insert(format!("{prefix}/bo"), &self.bo, trainable);
    }
}

struct Mlp {
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
}

impl Mlp {
    fn new(dim: usize, hidden: usize, rng: &mut ChaCha8Rng, zero: bool) -> Mlp {
        Mlp {
            w1: if zero {
                Tensor::zeros(&[dim, hidden])
            } else {
                init_xavier(rng, &[dim, hidden], dim, hidden)
            },
            b1: Tensor::zeros(&[hidden]),
            w2: if zero {
                Tensor::zeros(&[hidden, dim])
            } else {
                init_xavier(rng, &[hidden, dim], hidden, dim)
            },
            b2: Tensor::zeros(&[dim]),
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = linear(x, &self.w1, Some(&self.b1))?.gelu();
        linear(&h, &self.w2, Some(&self.b2))
    }

    fn register(&self, params: &mut ParamSet, prefix: &str, trainable: bool) {
        params.insert(format!("{prefix}/w1"), &self.w1, trainable);
        params.insert(format!("{prefix}/b1"), &self.b1, trainable);
        params.insert(format!("{prefix}/w2"), &self.w2, trainable);
        params.insert(format!("{prefix}/b2"), &self.b2, trainable);
    }
}

/// Pre-norm transformer layer with learned LayerNorm affines.
struct TransformerLayer {
    ln1_gamma: Tensor,
    ln1_beta: Tensor,
    attn: Mhsa,
    ln2_gamma: Tensor,
    ln2_beta: Tensor,
    mlp: Mlp,
}

impl TransformerLayer {
    fn new(dim: usize, heads: usize, rng: &mut ChaCha8Rng, zero: bool) -> TransformerLayer {
        TransformerLayer {
            ln1_gamma: Tensor::full(&[dim], 1.0),
            ln1_beta: Tensor::zeros(&[dim]),
            attn: Mhsa::new(dim, heads, rng, zero),
            ln2_gamma: Tensor::full(&[dim], 1.0),
            ln2_beta: Tensor::zeros(&[dim]),
            mlp: Mlp::new(dim, dim * 4, rng, zero),
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let normed = layer_norm(x, LN_EPS)?
            .mul(&self.ln1_gamma)?
            .add(&self.ln1_beta)?;
        let x = x.add(&self.attn.forward(&normed)?)?;
        let normed = layer_norm(&x, LN_EPS)?
            .mul(&self.ln2_gamma)?
            .add(&self.ln2_beta)?;
        x.add(&self.mlp.forward(&normed)?)
    }

    fn register(&self, params: &mut ParamSet, prefix: &str, trainable: bool) {
        params.insert(format!("{prefix}/ln1_gamma"), &self.ln1_gamma, trainable);
        params.insert(format!("{prefix}/ln1_beta"), &self.ln1_beta, trainable);
        self.attn
            .register(params, &format!("{prefix}/attn"), trainable);
        params.insert(format!("{prefix}/ln2_gamma"), &self.ln2_gamma, trainable);
        params.insert(format!("{prefix}/ln2_beta"), &self.ln2_beta, trainable);
        self.mlp
            .register(params, &format!("{prefix}/mlp"), trainable);
    }
}

struct PatchEmbed {
    weight: Tensor,
    bias: Tensor,
    pos: Tensor,
    patch_perm: Rc<Vec<usize>>,
    token_count: usize,
    patch_dim: usize,
}

impl PatchEmbed {
    fn new(cfg: &BackboneConfig, rng: &mut ChaCha8Rng) -> PatchEmbed {
        let p = cfg.patch_size;
        let s = cfg.image_size;
        let grid = s / p;
        let n = grid * grid;
        let patch_dim = p * p * 3;
        // out[token][py, px, c] <- image[(gy*p+py), (gx*p+px), c]
        let mut perm = Vec::with_capacity(n * patch_dim);
        for gy in 0..grid {
            for gx in 0..grid {
                for py in 0..p {
                    for px in 0..p {
                        for c in 0..3 {
                            perm.push(((gy * p + py) * s + gx * p + px) * 3 + c);
                        }
                    }
                }
            }
        }
        PatchEmbed {
            weight: init_xavier(rng, &[patch_dim, cfg.embed_dim], patch_dim, cfg.embed_dim),
            bias: Tensor::zeros(&[cfg.embed_dim]),
            pos: init_uniform(rng, &[n, cfg.embed_dim], -0.02, 0.02),
            patch_perm: Rc::new(perm),
            token_count: n,
            patch_dim,
        }
    }

    fn forward(&self, image: &Tensor) -> Result<Tensor> {
        let patches = image.index_permute(
            Rc::clone(&self.patch_perm),
            &[self.token_count, self.patch_dim],
        )?;
        linear(&patches, &self.weight, Some(&self.bias))?.add(&self.pos)
    }

    fn register(&self, params: &mut ParamSet, prefix: &str, trainable: bool) {
        params.insert(format!("{prefix}/weight"), &self.weight, trainable);
        params.insert(format!("{prefix}/bias"), &self.bias, trainable);
        params.insert(format!("{prefix}/pos"), &self.pos, trainable);
    }
}

/// The frozen ViT: patch embedding plus `depth` transformer layers.
pub struct Vit {
    pub cfg: BackboneConfig,
    patch: PatchEmbed,
    layers: Vec<TransformerLayer>,
}

impl Vit {
    pub fn new(cfg: &BackboneConfig, rng: &mut ChaCha8Rng) -> Result<Vit> {
        Vit::build(cfg, rng, false)
    }

    /// All attention/MLP weights zero: every layer is an exact identity.
    pub fn new_zeroed(cfg: &BackboneConfig, rng: &mut ChaCha8Rng) -> Result<Vit> {
        Vit::build(cfg, rng, true)
    }

    fn build(cfg: &BackboneConfig, rng: &mut ChaCha8Rng, zero: bool) -> Result<Vit> {
        cfg.validate()?;
        let patch = PatchEmbed::new(cfg, rng);
        let layers = (0..cfg.depth)
            .map(|_| TransformerLayer::new(cfg.embed_dim, cfg.heads, rng, zero))
            .collect();
        Ok(Vit {
            cfg: cfg.clone(),
            patch,
            layers,
        })
    }

    /// Non-overlapping patch flattening, linear projection, learned
    /// positional embedding. No class token: dense prediction only.
    pub fn patch_embed(&self, image: &Tensor) -> Result<TokenSequence> {
        let s = image.shape();
        if s != vec![self.cfg.image_size, self.cfg.image_size, 3] {
            return Err(Error::shape(
                "patch_embed",
                format!("image {:?} for configured size {}", s, self.cfg.image_size),
            ));
        }
        Ok(TokenSequence {
            tokens: self.patch.forward(image)?,
            grid: self.cfg.grid(),
        })
    }

    /// Applies the K layers of one group.
    pub fn run_group(&self, tokens: &TokenSequence, group_id: usize) -> Result<TokenSequence> {
        if group_id >= self.cfg.group_count {
            return Err(Error::invalid(
                "run_group",
                format!("group {} of {} groups", group_id, self.cfg.group_count),
            ));
        }
        let k = self.cfg.layers_per_group;
        let mut x = tokens.tokens.clone();
        for layer in &self.layers[group_id * k..(group_id + 1) * k] {
            x = layer.forward(&x)?;
        }
        Ok(TokenSequence {
            tokens: x,
            grid: tokens.grid,
        })
    }

    /// Registers every parameter under `prefix`, frozen.
    pub fn register(&self, params: &mut ParamSet, prefix: &str) {
        self.patch
            .register(params, &format!("{prefix}/patch"), false);
        for (i, layer) in self.layers.iter().enumerate() {
            layer.register(params, &format!("{prefix}/layer{i:02}"), false);
        }
    }
}

/// Marks every parameter under `backbone/` untrainable and reports
/// (trainable elements, total elements) afterwards.
pub fn freeze_backbone(params: &mut ParamSet) -> (usize, usize) {
    params.set_trainable_prefix("backbone/", false);
    params.element_counts()
}

/// Row sums of the softmax attention matrix for probing; exposed for tests.
pub fn attention_row_sums(q: &Tensor, k: &Tensor, heads: usize) -> Result<Vec<f64>> {
    let d = q.shape()[1] / heads;
    let mut sums = Vec::new();
    for head in 0..heads {
        let qh = crate::tensor::slice(q, 1, head * d, d)?;
        let kh = crate::tensor::slice(k, 1, head * d, d)?;
        let scores = qh
            .matmul(&kh.transpose2d()?)?
            .scale(1.0 / (d as f64).sqrt());
        let w = softmax_rows(&scores)?;
        let data = w.data();
        let cols = w.shape()[1];
        for row in 0..w.shape()[0] {
            sums.push(data[row * cols..(row + 1) * cols].iter().sum());
        }
    }
    Ok(sums)
}
