//! Config-driven run engine behind the CLI: dataset assembly, training with
//! the frozen backbone, evaluation, the gradient-check suite, feature dumps
//! and ablation sweeps. Every command is deterministic under a fixed seed.

use crate::adapter::FeaturePyramid;
use crate::config::{DataSource, RunConfig};
use crate::data::{self, Sample};
use crate::error::{Error, Result};
use crate::fgsattn::InitMode;
use crate::head::weighted_bce_iou_loss;
use crate::metrics::{self, MetricsReport};
use crate::model::FgsaNet;
use crate::tensor::{
    load_checkpoint, save_checkpoint, with_no_grad, AdamW, AdamWConfig, CheckpointRecord, Tensor,
};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

pub const BACKBONE_CKPT: &str = "backbone.ckpt";
pub const ADAPTER_CKPT: &str = "adapter.ckpt";
const META_DIGEST: &str = "__meta/backbone_sha256";

/// Which half of the dataset a command operates on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// Loads one split, either from disk (`<root>/<split>/{images,masks}`) or by
/// regenerating the seeded synthetic set and picking the matching prefix.
pub fn load_split(cfg: &RunConfig, split: Split) -> Result<Vec<Sample>> {
    let samples = match &cfg.data {
        DataSource::Root(root) => {
            let dir = root.join(match split {
                Split::Train => "train",
                Split::Test => "test",
            });
            data::load_pairs(&dir.join("images"), &dir.join("masks"))?
        }
        DataSource::Synth(synth) => {
            let prefix = match split {
                Split::Train => "train_",
                Split::Test => "test_",
            };
            data::generate(synth)?
                .into_iter()
                .filter(|s| s.id.starts_with(prefix))
                .collect()
        }
    };
    if samples.is_empty() {
        return Err(Error::Data(format!("{split:?} split is empty")));
    }
    for s in &samples {
        let shape = s.image.shape();
        if shape[0] != cfg.backbone.image_size || shape[1] != cfg.backbone.image_size {
            return Err(Error::Data(format!(
                "sample `{}` is {}x{} but the model expects {}",
                s.id, shape[0], shape[1], cfg.backbone.image_size
            )));
        }
    }
    Ok(samples)
}

pub fn build_model(cfg: &RunConfig) -> Result<FgsaNet> {
    FgsaNet::new(
        &cfg.backbone,
        &cfg.adapter,
        cfg.train.seed,
        InitMode::ZeroResidual,
    )
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

fn digest_record(digest: [u8; 32]) -> CheckpointRecord {
    CheckpointRecord {
        name: META_DIGEST.into(),
        trainable: false,
        data: digest.iter().map(|&b| b as f64).collect(),
        shape: vec![32],
    }
}

/// Writes the trained checkpoint: the frozen-backbone digest record followed
/// by every trainable parameter.
pub fn save_trained(net: &FgsaNet, path: &Path) -> Result<()> {
    let mut records = vec![digest_record(net.backbone_param_set().digest())];
    records.extend(net.trainable_param_set().records());
    let mut file = std::fs::File::create(path)?;
    save_checkpoint(&mut file, &records)
}

/// Restores trainable parameters, verifying the stored backbone digest
/// against the model actually built.
pub fn load_trained(net: &FgsaNet, path: &Path) -> Result<()> {
    let mut file = std::fs::File::open(path)?;
    let records = load_checkpoint(&mut file)?;
    let (meta, rest): (Vec<_>, Vec<_>) = records.into_iter().partition(|r| r.name == META_DIGEST);
    let meta = meta
        .first()
        .ok_or_else(|| Error::Format("checkpoint is missing the backbone digest record".into()))?;
    let expected: Vec<f64> = net
        .backbone_param_set()
        .digest()
        .iter()
        .map(|&b| b as f64)
        .collect();
    if meta.data != expected {
        return Err(Error::Format(
            "checkpoint was trained against a different frozen backbone".into(),
        ));
    }
    net.trainable_param_set().load_records(&rest)
}

pub fn save_backbone(net: &FgsaNet, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    save_checkpoint(&mut file, &net.backbone_param_set().records())
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

pub struct TrainReport {
    pub steps: usize,
    pub epoch_losses: Vec<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub tunable_fraction: f64,
    pub backbone_digest_before: [u8; 32],
    pub backbone_digest_after: [u8; 32],
    pub checkpoint: PathBuf,
    pub backbone_checkpoint: PathBuf,
}

/// Adapter-and-head-only training with the backbone frozen.
pub fn cmd_train(cfg: &RunConfig, mut log: impl FnMut(&str)) -> Result<TrainReport> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    let samples = load_split(cfg, Split::Train)?;
    let net = build_model(cfg)?;
    let params = net.param_set();
    let (trainable, total) = params.element_counts();
    let tunable_fraction = trainable as f64 / total as f64;
    log(&format!(
        "model: {} trainable / {} total elements ({:.2}% tunable)",
        trainable,
        total,
        100.0 * tunable_fraction
    ));

    let backbone_checkpoint = cfg.out_dir.join(BACKBONE_CKPT);
    save_backbone(&net, &backbone_checkpoint)?;
    let backbone_digest_before = net.backbone_param_set().digest();

    let mut optimizer = AdamW::new(AdamWConfig {
        lr: cfg.train.lr,
        weight_decay: cfg.train.weight_decay,
        ..AdamWConfig::default()
    });
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.train.seed ^ 0x9e37_79b9);

    let mut step_losses: Vec<f64> = Vec::new();
    let mut epoch_losses = Vec::new();
    // max_steps pins the exact optimizer-step budget; epochs repeat as needed
    let (max_steps, epochs) = match cfg.train.max_steps {
        Some(n) => (n, usize::MAX),
        None => (usize::MAX, cfg.train.epochs),
    };
    let mut steps = 0usize;

    'training: for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut epoch_batches = 0usize;
        for batch in order.chunks(cfg.train.batch) {
            if steps >= max_steps {
                break 'training;
            }
            params.zero_grads();
            let mut batch_loss = 0.0;
            for &idx in batch {
                let sample = &samples[idx];
                let (mask, _) = net.predict(&sample.image)?;
                let loss = weighted_bce_iou_loss(&mask, &sample.mask)?;
                batch_loss += loss.item();
                loss.scale(1.0 / batch.len() as f64).backward()?;
            }
            optimizer.step(&params)?;
            steps += 1;
            let avg = batch_loss / batch.len() as f64;
            step_losses.push(avg);
            epoch_loss += avg;
            epoch_batches += 1;
        }
        if epoch_batches > 0 {
            let mean = epoch_loss / epoch_batches as f64;
            epoch_losses.push(mean);
            log(&format!(
                "epoch {:3}  step {:5}  loss {:.6}",
                epoch, steps, mean
            ));
        }
    }

    let window = (step_losses.len() / 10).max(3).min(step_losses.len());
    let initial_loss = step_losses[..window].iter().sum::<f64>() / window as f64;
    let final_loss = step_losses[step_losses.len() - window..]
        .iter()
        .sum::<f64>()
        / window as f64;
    log(&format!(
        "trained {} steps: loss {:.6} -> {:.6}",
        steps, initial_loss, final_loss
    ));

    let backbone_digest_after = net.backbone_param_set().digest();
    let checkpoint = cfg.out_dir.join(ADAPTER_CKPT);
    save_trained(&net, &checkpoint)?;

    Ok(TrainReport {
        steps,
        epoch_losses,
        initial_loss,
        final_loss,
        tunable_fraction,
        backbone_digest_before,
        backbone_digest_after,
        checkpoint,
        backbone_checkpoint,
    })
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

pub struct EvalOutcome {
    pub report: MetricsReport,
    pub pred_dir: PathBuf,
    pub report_path: PathBuf,
}

/// Runs the model (or the gt-as-prediction oracle) over a split, writes
/// per-sample masks and the aggregate JSON report.
pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    split: Split,
    oracle: bool,
) -> Result<EvalOutcome> {
    let samples = load_split(cfg, split)?;
    let split_name = match split {
        Split::Train => "train",
        Split::Test => "test",
    };
    let pred_dir = cfg.out_dir.join("preds").join(split_name);
    std::fs::create_dir_all(&pred_dir)?;

    let mut pairs = Vec::with_capacity(samples.len());
    if oracle {
        for s in &samples {
            pairs.push((s.mask.clone(), s.mask.clone()));
        }
    } else {
        let net = build_model(cfg)?;
        if let Some(ckpt) = checkpoint {
            load_trained(&net, ckpt)?;
        }
        for s in &samples {
            let probs = with_no_grad(|| net.predict(&s.image).map(|(m, _)| m.probs))?;
            pairs.push((probs, s.mask.clone()));
        }
    }

    let size = cfg.backbone.image_size;
    for (s, (pred, _)) in samples.iter().zip(&pairs) {
        data::save_gray_png(
            &pred_dir.join(format!("{}.png", s.id)),
            &pred.data(),
            size,
            size,
        )?;
    }

    let report = metrics::evaluate_pairs(&pairs)?;
    let report_path = cfg.out_dir.join(format!("report_{split_name}.json"));
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
    Ok(EvalOutcome {
        report,
        pred_dir,
        report_path,
    })
}

/// Metric evaluation over two directories of saved masks (continuous
/// predictions vs binarized ground truth), paired by file stem.
pub fn eval_dirs(pred_dir: &Path, gt_dir: &Path) -> Result<MetricsReport> {
    let mut names: Vec<String> = std::fs::read_dir(pred_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|e| e == "png").unwrap_or(false))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Data(format!(
            "no predictions in {}",
            pred_dir.display()
        )));
    }
    let mut pairs = Vec::with_capacity(names.len());
    for name in &names {
        let gt_path = gt_dir.join(format!("{name}.png"));
        if !gt_path.exists() {
            return Err(Error::Data(format!(
                "prediction `{name}` has no ground truth"
            )));
        }
        let (pred, h, w) = data::load_gray_png(&pred_dir.join(format!("{name}.png")))?;
        let (gt_raw, gh, gw) = data::load_gray_png(&gt_path)?;
        if (gh, gw) != (h, w) {
            return Err(Error::Data(format!("size mismatch for `{name}`")));
        }
        let gt: Vec<f64> = gt_raw
            .iter()
            .map(|&v| {
                if v * 255.0 >= data::MASK_THRESHOLD as f64 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        pairs.push((
            Tensor::from_vec(pred, &[h, w])?,
            Tensor::from_vec(gt, &[h, w])?,
        ));
    }
    metrics::evaluate_pairs(&pairs)
}

// ---------------------------------------------------------------------------
// Feature dumps
// ---------------------------------------------------------------------------

/// Writes every FGSAttn attention map, the final prediction and per-level
/// pyramid energy maps for one sample. Returns the created files.
pub fn cmd_dump(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    split: Split,
    index: usize,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let samples = load_split(cfg, split)?;
    let sample = samples.get(index).ok_or_else(|| {
        Error::Data(format!(
            "sample index {} out of range ({} samples)",
            index,
            samples.len()
        ))
    })?;
    let net = build_model(cfg)?;
    if let Some(ckpt) = checkpoint {
        load_trained(&net, ckpt)?;
    }
    std::fs::create_dir_all(out_dir)?;

    let (mask, artifacts) = with_no_grad(|| net.predict(&sample.image))?;
    let mut written = Vec::new();

    for (name, map) in &artifacts.attention_maps {
        let shape = map.shape();
        let path = out_dir.join(format!("attn_{name}.png"));
        data::save_gray_png(&path, &map.data(), shape[0], shape[1])?;
        written.push(path);
    }

    let size = cfg.backbone.image_size;
    let pred_path = out_dir.join("prediction.png");
    data::save_gray_png(&pred_path, &mask.probs.data(), size, size)?;
    written.push(pred_path);

    for (i, map) in pyramid_energy(&artifacts.pyramid)?.into_iter().enumerate() {
        let (values, h, w) = map;
        let path = out_dir.join(format!("pyramid_level{i}_energy.png"));
        data::save_gray_png(&path, &values, h, w)?;
        written.push(path);
    }
    Ok(written)
}

/// Min-max-normalized per-pixel channel energy of each pyramid level.
fn pyramid_energy(pyramid: &FeaturePyramid) -> Result<Vec<(Vec<f64>, usize, usize)>> {
    let mut out = Vec::new();
    for level in pyramid.unflatten()? {
        let shape = level.shape();
        let (h, w, c) = (shape[0], shape[1], shape[2]);
        let data = level.data();
        let mut energy: Vec<f64> = (0..h * w)
            .map(|px| {
                data[px * c..(px + 1) * c]
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let lo = energy.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = energy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let range = (hi - lo).max(1e-8);
        for v in energy.iter_mut() {
            *v = (*v - lo) / range;
        }
        out.push((energy, h, w));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Gradient-check suite
// ---------------------------------------------------------------------------

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
const GRADCHECK_STEP: f64 = 1e-5;

pub struct GradCheckEntry {
    pub name: &'static str,
    pub max_rel_error: f64,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    crate::tensor::init_uniform(rng, shape, lo, hi)
}

/// Fixed random projection to a scalar, so every output element carries a
/// distinct gradient signal.
fn project(t: &Tensor, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let w = rand_tensor(rng, &t.shape(), -1.0, 1.0);
    Ok(t.mul(&w)?.sum())
}

/// Runs analytic-vs-finite-difference checks for every differentiable op and
/// every composed module, over `seeds` random seeds each. Returns the worst
/// relative error per entry.
pub fn gradcheck_suite(seeds: u64) -> Result<Vec<GradCheckEntry>> {
    use crate::fgsattn::{
        build_ring_partition, channel_pool, fgsattn_forward, fgsattn_tokens, min_max_normalize,
        FgsAttnParams,
    };
    use crate::tensor::{
        amp_phase, bilinear_resize, concat, conv2d, conv2d_depthwise, fft2, fftshift,
        global_avg_pool, grad_check, ifft2, ifftshift, layer_norm, linear, maxpool2d, reconstruct,
        slice, softmax_rows,
    };

    let mut entries: Vec<GradCheckEntry> = Vec::new();
    let mut run =
        |name: &'static str, check: &mut dyn FnMut(&mut ChaCha8Rng) -> Result<f64>| -> Result<()> {
            let mut worst = 0.0_f64;
            for seed in 0..seeds {
                let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE ^ seed);
                worst = worst.max(check(&mut rng)?);
            }
            entries.push(GradCheckEntry {
                name,
                max_rel_error: worst,
            });
            Ok(())
        };

    run("conv2d", &mut |rng| {
        let x = rand_tensor(rng, &[7, 7, 3], -1.0, 1.0);
        let w = rand_tensor(rng, &[3, 3, 3, 4], -0.7, 0.7);
        let b = rand_tensor(rng, &[4], -0.3, 0.3);
        let (xc, wc, bc) = (x.clone(), w.clone(), b.clone());
        let prng = rng.clone();
        grad_check(
            move || project(&conv2d(&xc, &wc, Some(&bc), 2, 1)?, &mut prng.clone()),
            &[&x, &w, &b],
            GRADCHECK_STEP,
        )
    })?;

    run("conv2d_depthwise", &mut |rng| {
        let x = rand_tensor(rng, &[6, 6, 4], -1.0, 1.0);
        let w = rand_tensor(rng, &[3, 3, 4], -0.7, 0.7);
        let b = rand_tensor(rng, &[4], -0.3, 0.3);
        let (xc, wc, bc) = (x.clone(), w.clone(), b.clone());
        let prng = rng.clone();
        grad_check(
            move || {
                project(
                    &conv2d_depthwise(&xc, &wc, Some(&bc), 1, 1)?,
                    &mut prng.clone(),
                )
            },
            &[&x, &w, &b],
            GRADCHECK_STEP,
        )
    })?;

    run("maxpool2d", &mut |rng| {
        let x = rand_tensor(rng, &[6, 6, 3], -1.0, 1.0);
        let xc = x.clone();
        let prng = rng.clone();
        grad_check(
            move || project(&maxpool2d(&xc, 2, 2)?, &mut prng.clone()),
            &[&x],
            GRADCHECK_STEP,
        )
    })?;

    run("channel_pool", &mut |rng| {
        let x = rand_tensor(rng, &[5, 5, 6], -1.0, 1.0);
        let xc = x.clone();
        let prng = rng.clone();
        grad_check(
            move || project(&channel_pool(&xc)?, &mut prng.clone()),
            &[&x],
            GRADCHECK_STEP,
        )
    })?;

    run("global_avg_pool", &mut |rng| {
        let x = rand_tensor(rng, &[5, 4, 3], -1.0, 1.0);
        let xc = x.clone();
        let prng = rng.clone();
        grad_check(
            move || project(&global_avg_pool(&xc)?, &mut prng.clone()),
            &[&x],
            GRADCHECK_STEP,
        )
    })?;

    run("linear", &mut |rng| {
        let x = rand_tensor(rng, &[5, 4], -1.0, 1.0);
        let w = rand_tensor(rng, &[4, 6], -0.7, 0.7);
        let b = rand_tensor(rng, &[6], -0.3, 0.3);
        let (xc, wc, bc) = (x.clone(), w.clone(), b.clone());
        let prng = rng.clone();
        grad_check(
            move || project(&linear(&xc, &wc, Some(&bc))?, &mut prng.clone()),
            &[&x, &w, &b],
            GRADCHECK_STEP,
        )
    })?;

    run("layer_norm", &mut |rng| {
        let x = rand_tensor(rng, &[4, 6], -1.0, 1.0);
        let xc = x.clone();
        let prng = rng.clone();
        grad_check(
            move || project(&layer_norm(&xc, 1e-5)?, &mut prng.clone()),
            &[&x],
            GRADCHECK_STEP,
        )
    })?;

    run("softmax", &mut |rng| {
        let x = rand_tensor(rng, &[4, 7], -2.0, 2.0);
        let xc = x.clone();
        let prng = rng.clone();
        grad_check(
            move || project(&softmax_rows(&xc)?, &mut prng.clone()),
            &[&x],
            GRADCHECK_STEP,
        )
    })?;

    run("gelu", &mut |rng| {
        let x = rand_tensor(rng, &[3, 9], -2.0, 2.0);
        let xc = x.clone();
        let prng = rng.clone();
        grad_check(
            move || project(&xc.gelu(), &mut prng.clone()),
            &[&x],
            GRADCHECK_STEP,
        )
    })?;

    run("leaky_relu", &mut |rng| {
        let x = rand_tensor(rng, &[3, 9], -2.0, 2.0);
        let xc = x.clone();
        let prng = rng.clone();
        grad_check(
            move || project(&xc.leaky_relu(0.01), &mut prng.clone()),
            &[&x],
            GRADCHECK_STEP,
        )
    })?;

    run("sigmoid", &mut |rng| {
        let x = rand_tensor(rng, &[3, 9], -3.0, 3.0);
        let xc = x.clone();
        let prng = rng.clone();
        grad_check(
            move || project(&xc.sigmoid(), &mut prng.clone()),
            &[&x],
            GRADCHECK_STEP,
        )
    })?;

    run("add_mul_broadcast", &mut |rng| {
        let m = rand_tensor(rng, &[4, 4, 1], -1.0, 1.0);
        let f = rand_tensor(rng, &[4, 4, 3], -1.0, 1.0);
        let (mc, fc) = (m.clone(), f.clone());
        let prng = rng.clone();
        grad_check(
            move || project(&fc.add(&mc.mul(&fc)?)?, &mut prng.clone()),
            &[&m, &f],
            GRADCHECK_STEP,
        )
    })?;

    run("matmul", &mut |rng| {
        let a = rand_tensor(rng, &[4, 5], -1.0, 1.0);
        let b = rand_tensor(rng, &[5, 3], -1.0, 1.0);
        let (ac, bc) = (a.clone(), b.clone());
        let prng = rng.clone();
        grad_check(
            move || project(&ac.matmul(&bc)?, &mut prng.clone()),
            &[&a, &b],
            GRADCHECK_STEP,
        )
    })?;

    run("reshape_concat_slice", &mut |rng| {
        let a = rand_tensor(rng, &[3, 4], -1.0, 1.0);
        let b = rand_tensor(rng, &[2, 4], -1.0, 1.0);
        let (ac, bc) = (a.clone(), b.clone());
        let prng = rng.clone();
        grad_check(
            move || {
                let joined = concat(&[&ac, &bc], 0)?;
                let cut = slice(&joined, 0, 1, 3)?.reshape(&[4, 3])?;
                project(&cut, &mut prng.clone())
            },
            &[&a, &b],
            GRADCHECK_STEP,
        )
    })?;

    run("bilinear_resize", &mut |rng| {
        let x = rand_tensor(rng, &[4, 5, 2], -1.0, 1.0);
        let xc = x.clone();
        let prng = rng.clone();
        grad_check(
            move || {
                let up = bilinear_resize(&xc, 7, 9)?;
                let down = bilinear_resize(&up, 3, 3)?;
                project(&down, &mut prng.clone())
            },
            &[&x],
            GRADCHECK_STEP,
        )
    })?;

    run("fft2", &mut |rng| {
        let x = rand_tensor(rng, &[6, 8], -1.0, 1.0);
        let xc = x.clone();
        let prng = rng.clone();
        grad_check(
            move || {
                let s = fft2(&xc)?;
                let mut prng = prng.clone();
                project(&s.real, &mut prng)?.add(&project(&s.imag, &mut prng)?)
            },
            &[&x],
            GRADCHECK_STEP,
        )
    })?;

    run("ifft2", &mut |rng| {
        let re = rand_tensor(rng, &[6, 6], -1.0, 1.0);
        let im = rand_tensor(rng, &[6, 6], -1.0, 1.0);
        let (rc, ic) = (re.clone(), im.clone());
        let prng = rng.clone();
        grad_check(
            move || {
                let s = crate::tensor::ComplexSpectrum {
                    real: rc.clone(),
                    imag: ic.clone(),
                    centered: false,
                };
                project(&ifft2(&s)?, &mut prng.clone())
            },
            &[&re, &im],
            GRADCHECK_STEP,
        )
    })?;

    run("amp_phase_reconstruct", &mut |rng| {
        // planes bounded away from the amplitude origin keep phase smooth
        let re = rand_tensor(rng, &[4, 4], 0.5, 1.5);
        let im = rand_tensor(rng, &[4, 4], 0.5, 1.5);
        let (rc, ic) = (re.clone(), im.clone());
        let prng = rng.clone();
        grad_check(
            move || {
                let s = crate::tensor::ComplexSpectrum {
                    real: rc.clone(),
                    imag: ic.clone(),
                    centered: true,
                };
                let (amp, phase) = amp_phase(&s)?;
                let rec = reconstruct(&amp.scale(1.1), &phase, true)?;
                let mut prng = prng.clone();
                project(&rec.real, &mut prng)?.add(&project(&rec.imag, &mut prng)?)
            },
            &[&re, &im],
            GRADCHECK_STEP,
        )
    })?;

    run("fftshift_ifftshift", &mut |rng| {
        let x = rand_tensor(rng, &[5, 6], -1.0, 1.0);
        let xc = x.clone();
        let prng = rng.clone();
        grad_check(
            move || {
                let s = fftshift(&fft2(&xc)?)?;
                let back = ifftshift(&s)?;
                project(&back.real, &mut prng.clone())
            },
            &[&x],
            GRADCHECK_STEP,
        )
    })?;

    run("min_max_normalize", &mut |rng| {
        let x = rand_tensor(rng, &[5, 5], -1.0, 1.0);
        let xc = x.clone();
        let prng = rng.clone();
        grad_check(
            move || project(&min_max_normalize(&xc)?, &mut prng.clone()),
            &[&x],
            GRADCHECK_STEP,
        )
    })?;

    run("fgsattn_forward", &mut |rng| {
        let f = rand_tensor(rng, &[8, 8, 4], -1.0, 1.0);
        let part = build_ring_partition(8, 8, 1)?;
        let params = FgsAttnParams::new(part.n_rings, rng, InitMode::Random);
        let (fc, pc) = (f.clone(), params.clone());
        let prng = rng.clone();
        grad_check(
            move || {
                let part = build_ring_partition(8, 8, 1)?;
                let (out, _) = fgsattn_forward(&fc, &pc, &part)?;
                project(&out, &mut prng.clone())
            },
            &[
                &f,
                &params.fc1_weight,
                &params.fc1_bias,
                &params.fc2_weight,
                &params.fc2_bias,
            ],
            GRADCHECK_STEP,
        )
    })?;

    run("fgsattn_tokens", &mut |rng| {
        let tokens = rand_tensor(rng, &[16, 4], -1.0, 1.0);
        let part = build_ring_partition(4, 4, 1)?;
        let params = FgsAttnParams::new(part.n_rings, rng, InitMode::Random);
        let (tc, pc) = (tokens.clone(), params.clone());
        let prng = rng.clone();
        grad_check(
            move || {
                let part = build_ring_partition(4, 4, 1)?;
                project(&fgsattn_tokens(&tc, (4, 4), &pc, &part)?, &mut prng.clone())
            },
            &[&tokens, &params.fc1_weight, &params.fc2_weight],
            GRADCHECK_STEP,
        )
    })?;

    run("weighted_loss", &mut |rng| {
        let logits = rand_tensor(rng, &[8, 8], -1.5, 1.5);
        let gt_data: Vec<f64> = (0..64)
            .map(|i| if (i / 8 + i % 8) % 3 == 0 { 1.0 } else { 0.0 })
            .collect();
        let gt = Tensor::from_vec(gt_data, &[8, 8])?;
        let lc = logits.clone();
        grad_check(
            move || {
                let pred = crate::head::PredictionMask {
                    probs: lc.sigmoid(),
                    logits: lc.clone(),
                };
                weighted_bce_iou_loss(&pred, &gt)
            },
            &[&logits],
            GRADCHECK_STEP,
        )
    })?;

    // composed modules on the 32x32 / 4-patch micro configuration
    let micro_backbone = crate::backbone::BackboneConfig {
        image_size: 32,
        patch_size: 16,
        embed_dim: 8,
        depth: 2,
        heads: 2,
        group_count: 2,
        layers_per_group: 1,
    };
    let micro_adapter = crate::adapter::AdapterConfig {
        dim: 8,
        ring_width: 1,
        heads: 2,
        ffn_mult: 2,
    };

    run("fbnm_module", &mut |rng| {
        let net = FgsaNet::new(
            &micro_backbone,
            &micro_adapter,
            rng.next_u64(),
            InitMode::Random,
        )?;
        let image = rand_tensor(rng, &[32, 32, 3], 0.0, 1.0);
        let net = std::rc::Rc::new(net);
        let (nc, ic) = (std::rc::Rc::clone(&net), image.clone());
        let prng = rng.clone();
        let params = net.trainable_param_set();
        let proj = &params
            .get("adapter/fbnm/proj1/w")
            .expect("registered")
            .tensor;
        let inj = &params
            .get("adapter/fbnm/inject/wq")
            .expect("registered")
            .tensor;
        grad_check(
            move || {
                let tokens = nc.backbone.patch_embed(&ic)?;
                let (pyramid, injected, _) = nc.adapter.fbnm.forward(&ic, &tokens)?;
                let mut prng = prng.clone();
                project(&pyramid.flat, &mut prng)?.add(&project(&injected.tokens, &mut prng)?)
            },
            &[proj, inj],
            GRADCHECK_STEP,
        )
    })?;

    run("fbfe_module", &mut |rng| {
        let net = FgsaNet::new(
            &micro_backbone,
            &micro_adapter,
            rng.next_u64(),
            InitMode::Random,
        )?;
        let tokens = rand_tensor(rng, &[4, 8], -1.0, 1.0);
        let levels = [
            rand_tensor(rng, &[2, 2, 8], -1.0, 1.0),
            rand_tensor(rng, &[2, 2, 8], -1.0, 1.0),
            rand_tensor(rng, &[1, 1, 8], -1.0, 1.0),
        ];
        let net = std::rc::Rc::new(net);
        let nc = std::rc::Rc::clone(&net);
        let (tc, l0, l1, l2) = (
            tokens.clone(),
            levels[0].clone(),
            levels[1].clone(),
            levels[2].clone(),
        );
        let prng = rng.clone();
        grad_check(
            move || {
                let vit = crate::backbone::TokenSequence {
                    tokens: tc.clone(),
                    grid: (2, 2),
                };
                let pyr = FeaturePyramid::from_levels(&[l0.clone(), l1.clone(), l2.clone()])?;
                let (vit_out, pyr_out, _) = nc.adapter.fbfe[0].forward(&vit, &pyr)?;
                let mut prng = prng.clone();
                project(&vit_out.tokens, &mut prng)?.add(&project(&pyr_out.flat, &mut prng)?)
            },
            &[&tokens, &levels[0], &levels[1]],
            GRADCHECK_STEP,
        )
    })?;

    // full network + loss: each seed checks one rotating trainable tensor;
    // the first two seeds also check the input image itself
    let mut full_net_calls = 0usize;
    run("full_net_loss", &mut |rng| {
        full_net_calls += 1;
        let check_image = full_net_calls <= 2;
        let seed = rng.next_u64();
        let net = FgsaNet::new(&micro_backbone, &micro_adapter, seed, InitMode::Random)?;
        let image = rand_tensor(rng, &[32, 32, 3], 0.0, 1.0);
        let gt_data: Vec<f64> = (0..32 * 32)
            .map(|i| {
                let (y, x) = ((i / 32) as f64, (i % 32) as f64);
                if ((y - 16.0).powi(2) + (x - 14.0).powi(2)).sqrt() < 7.0 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let gt = Tensor::from_vec(gt_data, &[32, 32])?;
        let params = net.trainable_param_set();
        let rotating = [
            "adapter/fbnm/level0/fgsattn/fc1_weight",
            "adapter/fbnm/proj2/w",
            "adapter/fbnm/inject/wo",
            "adapter/fbfe0/extract/wq",
            "adapter/fbfe0/ffn/w2",
            "adapter/fbfe1/fgsattn/fc2_weight",
            "head/merge_fine_w",
            "head/final_w",
            "adapter/fbfe0/inject/wv",
            "adapter/fbnm/stem/w2",
        ];
        let pick = rotating[(seed % rotating.len() as u64) as usize];
        let target = &params.get(pick).expect("registered").tensor;

        let net = std::rc::Rc::new(net);
        let (nc, ic, gc) = (std::rc::Rc::clone(&net), image.clone(), gt.clone());
        let f = move || {
            let (mask, _) = nc.predict(&ic)?;
            weighted_bce_iou_loss(&mask, &gc)
        };
        let mut worst = grad_check(&f, &[target], GRADCHECK_STEP)?;
        if check_image {
            worst = worst.max(grad_check(&f, &[&image], GRADCHECK_STEP)?);
        }
        Ok(worst)
    })?;

    Ok(entries)
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub enum SweepValue {
    RingWidth(usize),
    Grouping {
        layers_per_group: usize,
        groups: usize,
    },
}

impl std::fmt::Display for SweepValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SweepValue::RingWidth(d) => write!(f, "{d}"),
            SweepValue::Grouping {
                layers_per_group,
                groups,
            } => write!(f, "{layers_per_group}x{groups}"),
        }
    }
}

pub struct SweepRow {
    pub value: String,
    pub report: MetricsReport,
}

/// Train + evaluate once per value, shared seed; rows in argument order.
pub fn cmd_sweep(
    base: &RunConfig,
    values: &[SweepValue],
    mut log: impl FnMut(&str),
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(values.len());
    for value in values {
        let mut cfg = base.clone();
        match *value {
            SweepValue::RingWidth(d) => {
                if d == 0 {
                    return Err(Error::Config("ring width must be positive".into()));
                }
                cfg.adapter.ring_width = d;
            }
            SweepValue::Grouping {
                layers_per_group,
                groups,
            } => {
                cfg.backbone.layers_per_group = layers_per_group;
                cfg.backbone.group_count = groups;
                cfg.backbone.validate()?;
            }
        }
        cfg.out_dir = base.out_dir.join(format!("sweep_{value}"));
        log(&format!("sweep value {value}: training"));
        let train = cmd_train(&cfg, |line| log(&format!("  {line}")))?;
        let eval = cmd_eval(&cfg, Some(&train.checkpoint), Split::Test, false)?;
        rows.push(SweepRow {
            value: value.to_string(),
            report: eval.report,
        });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("param_value,s_alpha,e_phi,f_w_beta,mae\n");
    for row in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6}\n",
            row.value, row.report.s_alpha, row.report.e_phi, row.report.f_w_beta, row.report.mae
        ));
    }
    out
}
