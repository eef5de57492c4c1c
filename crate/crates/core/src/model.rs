//! Full network assembly: frozen ViT backbone, FBNM entry, per-group FBFE
//! exchange, detection head.

use crate::adapter::{Adapter, AdapterConfig, FeaturePyramid};
use crate::backbone::{freeze_backbone, BackboneConfig, Vit};
use crate::error::{Error, Result};
use crate::fgsattn::InitMode;
use crate::head::{Head, PredictionMask};
use crate::tensor::{ParamSet, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct FgsaNet {
    pub backbone: Vit,
    pub adapter: Adapter,
    pub head: Head,
}

/// Everything a forward pass produces besides the prediction itself.
pub struct ForwardArtifacts {
    pub pyramid: FeaturePyramid,
    /// Named `[H, W]` attention maps from every FGSAttn instance, in
    /// execution order (FBNM levels first, then one per FBFE step).
    pub attention_maps: Vec<(String, Tensor)>,
}

impl FgsaNet {
    pub fn new(
        backbone_cfg: &BackboneConfig,
        adapter_cfg: &AdapterConfig,
        seed: u64,
        init: InitMode,
    ) -> Result<FgsaNet> {
        backbone_cfg.validate()?;
        adapter_cfg.validate()?;
        if adapter_cfg.dim != backbone_cfg.embed_dim {
            return Err(Error::Config(format!(
                "adapter dim {} must equal backbone embed dim {}",
                adapter_cfg.dim, backbone_cfg.embed_dim
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = Vit::new(backbone_cfg, &mut rng)?;
        let adapter = Adapter::new(
            backbone_cfg.image_size,
            backbone_cfg.grid(),
            backbone_cfg.group_count,
            adapter_cfg,
            &mut rng,
            init,
        )?;
        let head = Head::new(adapter_cfg.dim, backbone_cfg.image_size, &mut rng);
        Ok(FgsaNet {
            backbone,
            adapter,
            head,
        })
    }

    /// patch embed -> FBNM -> M x (backbone group, FBFE) -> final pyramid.
    pub fn full_forward(&self, image: &Tensor) -> Result<ForwardArtifacts> {
        let tokens = self.backbone.patch_embed(image)?;
        let (mut pyramid, mut tokens, fbnm_traces) = self.adapter.fbnm.forward(image, &tokens)?;

        let mut attention_maps = Vec::new();
        for (i, trace) in fbnm_traces.into_iter().enumerate() {
            if let Some(t) = trace {
                attention_maps.push((format!("fbnm_level{i}"), t.attention));
            }
        }
        for (g, fbfe) in self.adapter.fbfe.iter().enumerate() {
            let after_group = self.backbone.run_group(&tokens, g)?;
            let (next_tokens, next_pyramid, trace) = fbfe.forward(&after_group, &pyramid)?;
            tokens = next_tokens;
            pyramid = next_pyramid;
            attention_maps.push((format!("fbfe{g}"), trace.attention));
        }
        Ok(ForwardArtifacts {
            pyramid,
            attention_maps,
        })
    }

    pub fn predict(&self, image: &Tensor) -> Result<(PredictionMask, ForwardArtifacts)> {
        let artifacts = self.full_forward(image)?;
        let mask = self.head.decode(&artifacts.pyramid)?;
        Ok((mask, artifacts))
    }

    /// Registers all parameters: backbone frozen, adapter and head trainable.
    pub fn param_set(&self) -> ParamSet {
        let mut params = ParamSet::new();
        self.backbone.register(&mut params, "backbone");
        self.adapter.register(&mut params, true);
        self.head.register(&mut params, true);
        freeze_backbone(&mut params);
        params
    }

    /// Parameter set holding only the frozen backbone entries.
    pub fn backbone_param_set(&self) -> ParamSet {
        let mut params = ParamSet::new();
        self.backbone.register(&mut params, "backbone");
        params
    }

    /// Parameter set holding only the trainable (adapter + head) entries.
    pub fn trainable_param_set(&self) -> ParamSet {
        let mut params = ParamSet::new();
        self.adapter.register(&mut params, true);
        self.head.register(&mut params, true);
        params
    }
}

#[cfg(test)]
mod tests {

    // temporary debug probe

    use super::*;
    use crate::head::weighted_bce_iou_loss;
    use rand::Rng;

    fn micro() -> (BackboneConfig, AdapterConfig) {
        (
            BackboneConfig {
                image_size: 32,
                patch_size: 16,
                embed_dim: 8,
                depth: 2,
                heads: 2,
                group_count: 2,
                layers_per_group: 1,
            },
            AdapterConfig {
                dim: 8,
                ring_width: 1,
                heads: 2,
                ffn_mult: 2,
            },
        )
    }

    fn random_image(seed: u64, size: usize) -> Tensor {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(
            (0..size * size * 3)
                .map(|_| r.gen_range(0.0..1.0))
                .collect(),
            &[size, size, 3],
        )
        .unwrap()
    }

    #[test]
    fn toy_shapes_end_to_end() {
        let bcfg = BackboneConfig {
            image_size: 64,
            patch_size: 8,
            embed_dim: 16,
            depth: 2,
            heads: 2,
            group_count: 2,
            layers_per_group: 1,
        };
        let acfg = AdapterConfig {
            dim: 16,
            ring_width: 1,
            heads: 2,
            ffn_mult: 2,
        };
        let net = FgsaNet::new(&bcfg, &acfg, 0, InitMode::ZeroResidual).unwrap();
        let (mask, artifacts) = net.predict(&random_image(1, 64)).unwrap();
        assert_eq!(mask.probs.shape(), vec![64, 64]);
        assert_eq!(artifacts.pyramid.level_shapes, vec![(8, 8), (4, 4), (2, 2)]);
        assert_eq!(artifacts.pyramid.width(), 16);
        // 3 FBNM attention maps + one per group
        assert_eq!(artifacts.attention_maps.len(), 5);
    }

    #[test]
    fn zero_init_matches_head_on_fbnm_pyramid() {
        let (bcfg, acfg) = micro();
        let net = FgsaNet::new(&bcfg, &acfg, 3, InitMode::ZeroResidual).unwrap();
        let image = random_image(4, 32);

        let full = net.predict(&image).unwrap().0;

        // baseline: decode the FBNM pyramid directly (adapter stream is
        // untouched by zero-initialized FBFE steps)
        let tokens = net.backbone.patch_embed(&image).unwrap();
        let (pyramid, _, _) = net.adapter.fbnm.forward(&image, &tokens).unwrap();
        let baseline = net.head.decode(&pyramid).unwrap();

        assert_eq!(full.probs.data(), baseline.probs.data());
    }

    #[test]
    fn deterministic_given_seed() {
        let (bcfg, acfg) = micro();
        let image = random_image(5, 32);
        let a = FgsaNet::new(&bcfg, &acfg, 7, InitMode::Random)
            .unwrap()
            .predict(&image)
            .unwrap()
            .0;
        let b = FgsaNet::new(&bcfg, &acfg, 7, InitMode::Random)
            .unwrap()
            .predict(&image)
            .unwrap()
            .0;
        assert_eq!(a.probs.data(), b.probs.data());
    }

    #[test]
    fn gradients_reach_every_adapter_and_head_param() {
        let (bcfg, acfg) = micro();
        let net = FgsaNet::new(&bcfg, &acfg, 11, InitMode::Random).unwrap();
        let params = net.param_set();
        params.zero_grads();

        let image = random_image(6, 32);
        let mut r = ChaCha8Rng::seed_from_u64(12);
        let gt_data: Vec<f64> = (0..32 * 32)
            .map(|_| if r.gen_bool(0.3) { 1.0 } else { 0.0 })
            .collect();
        let gt = Tensor::from_vec(gt_data, &[32, 32]).unwrap();

        let (mask, _) = net.predict(&image).unwrap();
        let loss = weighted_bce_iou_loss(&mask, &gt).unwrap();
        assert!(loss.item() > 0.0);
        loss.backward().unwrap();

        for (name, param) in params.iter() {
            if param.trainable {
                let grad = param.tensor.grad();
                assert!(
                    grad.map(|g| g.iter().any(|&v| v != 0.0)).unwrap_or(false),
                    "no gradient reached `{}`",
                    name
                );
            } else {
                assert!(
                    param.tensor.grad().is_none(),
                    "frozen `{}` got a gradient",
                    name
                );
            }
        }
    }

    #[test]
    fn tunable_fraction_reported() {
        let (bcfg, acfg) = micro();
        let net = FgsaNet::new(&bcfg, &acfg, 13, InitMode::ZeroResidual).unwrap();
        let params = net.param_set();
        let f = params.tunable_fraction();
        assert!(f > 0.0 && f < 1.0);
    }
}
