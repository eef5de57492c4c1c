//! Detection head and training loss.
//!
//! The head fuses the adapter pyramid top-down (upsample the coarser level,
//! 1x1-conv merge with the finer one), maps to a single logit channel with a
//! 3x3 conv, upsamples to the input resolution and applies a sigmoid.
//!
//! The loss is the boundary-weighted BCE + IoU pair: each pixel carries
//! weight `1 + 5 * |mean_pool(gt, k) - gt|` with a 31-bin window (shrunk on
//! tiny images), so pixels near mask boundaries dominate.

use crate::adapter::FeaturePyramid;
use crate::error::{Error, Result};
use crate::tensor::{bilinear_resize, concat, conv2d, init_xavier, ParamSet, Tensor};
use rand_chacha::ChaCha8Rng;

const PROB_EPS: f64 = 1e-7;
pub const BOUNDARY_WEIGHT_WINDOW: usize = 31;
pub const BOUNDARY_WEIGHT_FACTOR: f64 = 5.0;

/// Full-resolution probability mask plus the logits it came from.
pub struct PredictionMask {
    pub probs: Tensor,
    pub logits: Tensor,
}

/// Top-down fusion decoder over a three-level pyramid of width `dim`.
pub struct Head {
    merge_coarse_w: Tensor,
    merge_coarse_b: Tensor,
    merge_fine_w: Tensor,
    merge_fine_b: Tensor,
    final_w: Tensor,
    final_b: Tensor,
    out_size: usize,
}

impl Head {
    pub fn new(dim: usize, out_size: usize, rng: &mut ChaCha8Rng) -> Head {
        Head {
            merge_coarse_w: init_xavier(rng, &[1, 1, 2 * dim, dim], 2 * dim, dim),
            merge_coarse_b: Tensor::zeros(&[dim]),
            merge_fine_w: init_xavier(rng, &[1, 1, 2 * dim, dim], 2 * dim, dim),
            merge_fine_b: Tensor::zeros(&[dim]),
            final_w: init_xavier(rng, &[3, 3, dim, 1], 9 * dim, 9),
            final_b: Tensor::zeros(&[1]),
            out_size,
        }
    }

    /// Decodes the pyramid to a `[out_size, out_size]` probability mask.
    pub fn decode(&self, pyramid: &FeaturePyramid) -> Result<PredictionMask> {
        let levels = pyramid.unflatten()?;
        if levels.len() != 3 {
            return Err(Error::shape(
                "decode",
                format!("expected 3 pyramid levels, got {}", levels.len()),
            ));
        }
        let (fine, mid, coarse) = (&levels[0], &levels[1], &levels[2]);

        let up = bilinear_resize(coarse, mid.shape()[0], mid.shape()[1])?;
        let merged = conv2d(
            &concat(&[&up, mid], 2)?,
            &self.merge_coarse_w,
            Some(&self.merge_coarse_b),
            1,
            0,
        )?;
        let up = bilinear_resize(&merged, fine.shape()[0], fine.shape()[1])?;
        let merged = conv2d(
            &concat(&[&up, fine], 2)?,
            &self.merge_fine_w,
            Some(&self.merge_fine_b),
            1,
            0,
        )?;
        let logit_map = conv2d(&merged, &self.final_w, Some(&self.final_b), 1, 1)?;
        let logits = bilinear_resize(&logit_map, self.out_size, self.out_size)?
            .reshape(&[self.out_size, self.out_size])?;
        Ok(PredictionMask {
            probs: logits.sigmoid(),
            logits,
        })
    }

    pub fn register(&self, params: &mut ParamSet, trainable: bool) {
        params.insert("head/merge_coarse_w", &self.merge_coarse_w, trainable);
        params.insert("head/merge_coarse_b", &self.merge_coarse_b, trainable);
        params.insert("head/merge_fine_w", &self.merge_fine_w, trainable);
        params.insert("head/merge_fine_b", &self.merge_fine_b, trainable);
        params.insert("head/final_w", &self.final_w, trainable);
        params.insert("head/final_b", &self.final_b, trainable);
    }
}

fn check_binary_mask(op: &'static str, gt: &Tensor) -> Result<(usize, usize)> {
    let s = gt.shape();
    if s.len() != 2 {
        return Err(Error::shape(
            op,
            format!("expected [H, W] mask, got {:?}", s),
        ));
    }
    if gt.data_ref().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid(op, "ground truth must be binary"));
    }
    Ok((s[0], s[1]))
}

/// Boundary-emphasis weights `1 + 5|mean_pool(gt) - gt|`, zero-padded mean
/// over the full window. Constant regions beyond the pooling radius get 1.
pub fn boundary_weights(gt: &Tensor) -> Result<Vec<f64>> {
    let (h, w) = check_binary_mask("boundary_weights", gt)?;
    let k = if BOUNDARY_WEIGHT_WINDOW <= h.min(w) {
        BOUNDARY_WEIGHT_WINDOW
    } else {
        (h.min(w) / 2) * 2 + 1
    };
    let r = k / 2;
    let area = (k * k) as f64;
    let gd = gt.data_ref();

    // summed-area table for the zero-padded window mean
    let mut sat = vec![0.0; (h + 1) * (w + 1)];
    for i in 0..h {
        for j in 0..w {
            sat[(i + 1) * (w + 1) + j + 1] =
                gd[i * w + j] + sat[i * (w + 1) + j + 1] + sat[(i + 1) * (w + 1) + j]
                    - sat[i * (w + 1) + j];
        }
    }
    let rect = |y0: usize, x0: usize, y1: usize, x1: usize| {
        sat[y1 * (w + 1) + x1] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0]
            + sat[y0 * (w + 1) + x0]
    };
    let mut weights = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let y0 = i.saturating_sub(r);
            let x0 = j.saturating_sub(r);
            let y1 = (i + r + 1).min(h);
            let x1 = (j + r + 1).min(w);
            let mean = rect(y0, x0, y1, x1) / area;
            weights.push(1.0 + BOUNDARY_WEIGHT_FACTOR * (mean - gd[i * w + j]).abs());
        }
    }
    Ok(weights)
}

/// `L = L^w_BCE + L^w_IOU` against a binary mask.
pub fn weighted_bce_iou_loss(pred: &PredictionMask, gt: &Tensor) -> Result<Tensor> {
    let (h, w) = check_binary_mask("weighted_bce_iou_loss", gt)?;
    if pred.probs.shape() != vec![h, w] {
        return Err(Error::shape(
            "weighted_bce_iou_loss",
            format!(
                "prediction {:?} vs mask {:?}",
                pred.probs.shape(),
                gt.shape()
            ),
        ));
    }
    let weights = Tensor::from_vec(boundary_weights(gt)?, &[h, w])?;
    let weight_total: f64 = weights.data_ref().iter().sum();

    let p = pred.probs.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let one_minus_gt = gt.neg().add_scalar(1.0);
    let bce = gt
        .mul(&p.ln())?
        .add(&one_minus_gt.mul(&p.neg().add_scalar(1.0).ln())?)?
        .neg();
    let l_bce = weights.mul(&bce)?.sum().scale(1.0 / weight_total);

    let inter = weights.mul(&p.mul(gt)?)?.sum();
    let union = weights.mul(&p.add(gt)?.sub(&p.mul(gt)?)?)?.sum();
    let l_iou = inter
        .add_scalar(1.0)
        .div(&union.add_scalar(1.0))?
        .neg()
        .add_scalar(1.0);

    l_bce.add(&l_iou)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn disk_mask(n: usize, radius: f64) -> Tensor {
        let c = n as f64 / 2.0 - 0.5;
        let data: Vec<f64> = (0..n * n)
            .map(|idx| {
                let (i, j) = ((idx / n) as f64, (idx % n) as f64);
                if ((i - c).powi(2) + (j - c).powi(2)).sqrt() < radius {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        Tensor::from_vec(data, &[n, n]).unwrap()
    }

    fn random_pyramid(r: &mut ChaCha8Rng, d: usize) -> FeaturePyramid {
        let mk = |r: &mut ChaCha8Rng, shape: &[usize]| {
            let n: usize = shape.iter().product();
            Tensor::from_vec((0..n).map(|_| r.gen_range(-1.0..1.0)).collect(), shape).unwrap()
        };
        FeaturePyramid::from_levels(&[mk(r, &[8, 8, d]), mk(r, &[4, 4, d]), mk(r, &[2, 2, d])])
            .unwrap()
    }

    #[test]
    fn decode_shape_and_range() {
        let mut r = rng(0);
        let head = Head::new(8, 64, &mut r);
        let pyr = random_pyramid(&mut r, 8);
        let mask = head.decode(&pyr).unwrap();
        assert_eq!(mask.probs.shape(), vec![64, 64]);
        assert!(mask.probs.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn decode_gradcheck() {
        use crate::tensor::grad_check;
        let mut r = rng(1);
        let head = std::rc::Rc::new(Head::new(4, 32, &mut r));
        let pyr = std::rc::Rc::new(random_pyramid(&mut r, 4));
        let (hc, pc) = (std::rc::Rc::clone(&head), std::rc::Rc::clone(&pyr));
        let err = grad_check(
            move || Ok(hc.decode(&pc)?.logits.sum()),
            &[&pyr.flat, &head.merge_coarse_w, &head.final_w],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "gradient error {}", err);
    }

    #[test]
    fn perfect_prediction_loss_near_zero() {
        let gt = disk_mask(32, 8.0);
        let big = 20.0;
        let logits_data: Vec<f64> = gt
            .data()
            .iter()
            .map(|&g| if g > 0.5 { big } else { -big })
            .collect();
        let logits = Tensor::from_vec(logits_data, &[32, 32]).unwrap();
        let pred = PredictionMask {
            probs: logits.sigmoid(),
            logits,
        };
        let loss = weighted_bce_iou_loss(&pred, &gt).unwrap().item();
        assert!(loss < 1e-3, "loss = {}", loss);
    }

    #[test]
    fn uniform_half_prediction_closed_form() {
        // gt all zero, pred uniformly 0.5 on an 8x8 map: weights are 1,
        // BCE = ln 2 and IoU term = 1 - 1/(64*0.5 + 1)
        let gt = Tensor::zeros(&[8, 8]);
        let logits = Tensor::zeros(&[8, 8]);
        let pred = PredictionMask {
            probs: logits.sigmoid(),
            logits,
        };
        let loss = weighted_bce_iou_loss(&pred, &gt).unwrap().item();
        let expected = std::f64::consts::LN_2 + (1.0 - 1.0 / 33.0);
        assert!((loss - expected).abs() < 1e-12, "loss = {}", loss);
    }

    #[test]
    fn boundary_pixels_outweigh_interior() {
        // disk interior wider than the pooling radius, so the center sees a
        // constant region and keeps weight exactly 1
        let gt = disk_mask(64, 22.0);
        let weights = boundary_weights(&gt).unwrap();
        let center = weights[32 * 64 + 32];
        let edge = weights[32 * 64 + (32 + 22)];
        let corner = weights[0];
        assert_eq!(center, 1.0);
        assert!(edge > center);
        assert_eq!(corner, 1.0);
    }

    #[test]
    fn weights_are_one_on_constant_regions() {
        let gt = Tensor::zeros(&[40, 40]);
        assert!(boundary_weights(&gt).unwrap().iter().all(|&w| w == 1.0));
    }

    #[test]
    fn loss_nonnegative_and_monotone_toward_gt() {
        let gt = disk_mask(16, 5.0);
        let gd = gt.data();
        let p0: Vec<f64> = gd.iter().map(|&g| 0.5 - 0.3 * (g - 0.5)).collect(); // wrongish start
        let mut last = f64::INFINITY;
        for step in 0..=10 {
            let t = step as f64 / 10.0;
            let probs: Vec<f64> = p0
                .iter()
                .zip(&gd)
                .map(|(&p, &g)| (1.0 - t) * p + t * g)
                .collect();
            let logits: Vec<f64> = probs
                .iter()
                .map(|&p| {
                    let pc = p.clamp(1e-9, 1.0 - 1e-9);
                    (pc / (1.0 - pc)).ln()
                })
                .collect();
            let pred = PredictionMask {
                probs: Tensor::from_vec(probs, &[16, 16]).unwrap(),
                logits: Tensor::from_vec(logits, &[16, 16]).unwrap(),
            };
            let loss = weighted_bce_iou_loss(&pred, &gt).unwrap().item();
            assert!(loss >= 0.0);
            assert!(loss <= last + 1e-12, "loss not decreasing at t={}", t);
            last = loss;
        }
    }

    #[test]
    fn loss_gradcheck_through_logits() {
        use crate::tensor::grad_check;
        let mut r = rng(2);
        let gt = disk_mask(8, 2.5);
        let logits =
            Tensor::from_vec((0..64).map(|_| r.gen_range(-1.5..1.5)).collect(), &[8, 8]).unwrap();
        let (lc, gc) = (logits.clone(), gt.clone());
        let err = grad_check(
            move || {
                let pred = PredictionMask {
                    probs: lc.sigmoid(),
                    logits: lc.clone(),
                };
                weighted_bce_iou_loss(&pred, &gc)
            },
            &[&logits],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "gradient error {}", err);
    }

    #[test]
    fn rejects_non_binary_gt() {
        let gt = Tensor::full(&[4, 4], 0.5);
        let logits = Tensor::zeros(&[4, 4]);
        let pred = PredictionMask {
            probs: logits.sigmoid(),
            logits,
        };
        assert!(weighted_bce_iou_loss(&pred, &gt).is_err());
    }
}
