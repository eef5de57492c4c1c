//! Synthetic camouflage data and image/mask file IO.
//!
//! Each sample hides a smooth random shape in a procedural background. The
//! foreground copies the background's first-order statistics (mean matched to
//! within `contrast_delta`) but carries extra energy in a mid/high spatial
//! frequency band, so the figure is separable by frequency cues where plain
//! intensity statistics tie.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

/// One (image, binary mask) pair.
#[derive(Debug)]
pub struct Sample {
    /// `[H, W, 3]`, values in [0, 1].
    pub image: Tensor,
    /// `[H, W]`, strictly binary.
    pub mask: Tensor,
    pub id: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Ellipse,
    Blob,
    Polygon,
}

impl std::str::FromStr for ShapeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<ShapeKind> {
        match s {
            "ellipse" => Ok(ShapeKind::Ellipse),
            "blob" => Ok(ShapeKind::Blob),
            "polygon" => Ok(ShapeKind::Polygon),
            other => Err(Error::Config(format!("unknown shape kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub size: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Octave count of the background value-noise texture.
    pub texture_octaves: usize,
    pub shape: ShapeKind,
    /// Permitted foreground/background mean gap, in [0, 0.2].
    pub contrast_delta: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            size: 64,
            n_train: 32,
            n_test: 16,
            texture_octaves: 4,
            shape: ShapeKind::Blob,
            contrast_delta: 0.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 32 || !self.size.is_multiple_of(32) {
            return Err(Error::Config(format!(
                "sample size {} must be a positive multiple of 32",
                self.size
            )));
        }
        if self.n_train + self.n_test == 0 {
            return Err(Error::Config("no samples requested".into()));
        }
        if !(0.0..=0.2).contains(&self.contrast_delta) {
            return Err(Error::Config(format!(
                "contrast_delta {} outside [0, 0.2]",
                self.contrast_delta
            )));
        }
        Ok(())
    }
}

const AREA_MIN: f64 = 0.05;
const AREA_MAX: f64 = 0.40;
const BAND_AMPLITUDE: f64 = 0.12;

/// Deterministic dataset: `n_train` samples named `train_*` followed by
/// `n_test` samples named `test_*`, all from one seeded stream.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut samples = Vec::with_capacity(cfg.n_train + cfg.n_test);
    for i in 0..cfg.n_train {
        samples.push(make_sample(cfg, &mut rng, format!("train_{i:04}"))?);
    }
    for i in 0..cfg.n_test {
        samples.push(make_sample(cfg, &mut rng, format!("test_{i:04}"))?);
    }
    Ok(samples)
}

fn make_sample(cfg: &SynthConfig, rng: &mut ChaCha8Rng, id: String) -> Result<Sample> {
    let n = cfg.size;

    let mask = loop {
        let candidate = draw_shape(cfg.shape, n, rng);
        let area = candidate.iter().sum::<f64>() / (n * n) as f64;
        if (AREA_MIN..=AREA_MAX).contains(&area) {
            break candidate;
        }
    };

    let base = value_noise(n, cfg.texture_octaves, rng);
    let band = band_noise(n, rng);

    // Per-channel composition with mean matching on the masked region.
    let target_gap = rng.gen_range(-cfg.contrast_delta..=cfg.contrast_delta);
    let mut image = vec![0.0; n * n * 3];
    for c in 0..3 {
        let tint = rng.gen_range(-0.02..0.02);
        let amp = BAND_AMPLITUDE * rng.gen_range(0.9..1.1);
        let bg: Vec<f64> = base.iter().map(|&v| (v + tint).clamp(0.02, 0.98)).collect();
        let mut fg: Vec<f64> = bg.iter().zip(&band).map(|(&b, &f)| b + amp * f).collect();
        // bring the masked mean onto bg mean + target_gap; two passes absorb
        // any clamping
        for _ in 0..2 {
            let (mut fg_sum, mut fg_n, mut bg_sum, mut bg_n) = (0.0, 0usize, 0.0, 0usize);
            for (i, &m) in mask.iter().enumerate() {
                if m == 1.0 {
                    fg_sum += fg[i].clamp(0.0, 1.0);
                    fg_n += 1;
                } else {
                    bg_sum += bg[i];
                    bg_n += 1;
                }
            }
            let shift = bg_sum / bg_n as f64 + target_gap - fg_sum / fg_n as f64;
            for v in fg.iter_mut() {
                *v += shift;
            }
        }
        for (i, &m) in mask.iter().enumerate() {
            image[i * 3 + c] = if m == 1.0 {
                fg[i].clamp(0.0, 1.0)
            } else {
                bg[i]
            };
        }
    }

    Ok(Sample {
        image: Tensor::from_vec(image, &[n, n, 3])?,
        mask: Tensor::from_vec(mask, &[n, n])?,
        id,
    })
}

/// Multi-octave value noise normalized around mid gray.
fn value_noise(n: usize, octaves: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut acc = vec![0.0; n * n];
    let mut amplitude = 1.0;
    let mut total = 0.0;
    for octave in 0..octaves.max(1) {
        let cells = 4usize << octave;
        if cells > n {
            break;
        }
        let grid: Vec<f64> = (0..(cells + 1) * (cells + 1))
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let step = n as f64 / cells as f64;
        for i in 0..n {
            for j in 0..n {
                let gy = i as f64 / step;
                let gx = j as f64 / step;
                let (y0, x0) = (gy.floor() as usize, gx.floor() as usize);
                let (fy, fx) = (gy - y0 as f64, gx - x0 as f64);
                // smoothstep interpolation
                let (sy, sx) = (fy * fy * (3.0 - 2.0 * fy), fx * fx * (3.0 - 2.0 * fx));
                let g = |y: usize, x: usize| grid[y * (cells + 1) + x];
                let v = g(y0, x0) * (1.0 - sy) * (1.0 - sx)
                    + g(y0, x0 + 1) * (1.0 - sy) * sx
                    + g(y0 + 1, x0) * sy * (1.0 - sx)
                    + g(y0 + 1, x0 + 1) * sy * sx;
                acc[i * n + j] += amplitude * v;
            }
        }
        total += amplitude;
        amplitude *= 0.55;
    }
    acc.iter()
        .map(|v| (0.5 + 0.22 * v / total).clamp(0.05, 0.95))
        .collect()
}

/// Zero-mean unit-std noise restricted to a mid/high radial frequency band.
fn band_noise(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut re: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut im = vec![0.0; n * n];
    crate::tensor::dft2_unitary(&mut re, &mut im, n, n, false);
    let r_max = (n / 2) as f64;
    let (lo, hi) = (0.35 * r_max, 0.75 * r_max);
    for i in 0..n {
        for j in 0..n {
            // unshifted spectrum: measure radius from the nearest corner alias
            let fy = i.min(n - i) as f64;
            let fx = j.min(n - j) as f64;
            let rho = fy.hypot(fx);
            if rho < lo || rho > hi {
                re[i * n + j] = 0.0;
                im[i * n + j] = 0.0;
            }
        }
    }
    crate::tensor::dft2_unitary(&mut re, &mut im, n, n, true);
    let mu = re.iter().sum::<f64>() / re.len() as f64;
    let var = re.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / re.len() as f64;
    let inv = 1.0 / var.sqrt().max(1e-12);
    re.iter().map(|v| (v - mu) * inv).collect()
}

fn draw_shape(kind: ShapeKind, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let cx = rng.gen_range(0.38..0.62) * n as f64;
    let cy = rng.gen_range(0.38..0.62) * n as f64;
    let r0 = rng.gen_range(0.16..0.27) * n as f64;
    match kind {
        ShapeKind::Ellipse => {
            let ratio = rng.gen_range(0.6..1.0);
            let theta = rng.gen_range(0.0..PI);
            let (ct, st) = (theta.cos(), theta.sin());
            fill(n, |y, x| {
                let (dy, dx) = (y - cy, x - cx);
                let u = dx * ct + dy * st;
                let v = -dx * st + dy * ct;
                (u / r0).powi(2) + (v / (r0 * ratio)).powi(2) <= 1.0
            })
        }
        ShapeKind::Blob => {
            let harmonics: Vec<(f64, f64, f64)> = (2..=5)
                .map(|k| {
                    (
                        k as f64,
                        rng.gen_range(0.0..0.22 / (k as f64).sqrt()),
                        rng.gen_range(0.0..2.0 * PI),
                    )
                })
                .collect();
            fill(n, |y, x| {
                let (dy, dx) = (y - cy, x - cx);
                let dist = dx.hypot(dy);
                let theta = dy.atan2(dx);
                let r = r0
                    * (1.0
                        + harmonics
                            .iter()
                            .map(|&(k, a, p)| a * (k * theta + p).cos())
                            .sum::<f64>());
                dist <= r
            })
        }
        ShapeKind::Polygon => {
            let sides = rng.gen_range(5..9);
            let verts: Vec<(f64, f64)> = (0..sides)
                .map(|s| {
                    let ang = 2.0 * PI * s as f64 / sides as f64 + rng.gen_range(-0.25..0.25);
                    let r = r0 * rng.gen_range(0.75..1.25);
                    (cx + r * ang.cos(), cy + r * ang.sin())
                })
                .collect();
            fill(n, |y, x| point_in_polygon(x, y, &verts))
        }
    }
}

fn fill(n: usize, inside: impl Fn(f64, f64) -> bool) -> Vec<f64> {
    let mut mask = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if inside(i as f64 + 0.5, j as f64 + 0.5) {
                mask[i * n + j] = 1.0;
            }
        }
    }
    mask
}

fn point_in_polygon(x: f64, y: f64, verts: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = verts.len() - 1;
    for i in 0..verts.len() {
        let (xi, yi) = verts[i];
        let (xj, yj) = verts[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

// ---------------------------------------------------------------------------
// File IO
// ---------------------------------------------------------------------------

pub const MASK_THRESHOLD: u8 = 128;

/// Writes `<images>/<id>.png` (RGB) and `<masks>/<id>.png` (8-bit gray).
pub fn save_sample(sample: &Sample, image_dir: &Path, mask_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(image_dir)?;
    std::fs::create_dir_all(mask_dir)?;
    let shape = sample.image.shape();
    let (h, w) = (shape[0], shape[1]);
    let data = sample.image.data();
    let mut rgb = image::RgbImage::new(w as u32, h as u32);
    for i in 0..h {
        for j in 0..w {
            let px = &data[(i * w + j) * 3..(i * w + j) * 3 + 3];
            rgb.put_pixel(
                j as u32,
                i as u32,
                image::Rgb([to_byte(px[0]), to_byte(px[1]), to_byte(px[2])]),
            );
        }
    }
    rgb.save(image_dir.join(format!("{}.png", sample.id)))?;
    save_gray_png(
        &mask_dir.join(format!("{}.png", sample.id)),
        &sample.mask.data(),
        h,
        w,
    )
}

/// 8-bit grayscale PNG from values in [0, 1] (`round(255 * v)`).
pub fn save_gray_png(path: &Path, values: &[f64], h: usize, w: usize) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut img = image::GrayImage::new(w as u32, h as u32);
    for i in 0..h {
        for j in 0..w {
            img.put_pixel(
                j as u32,
                i as u32,
                image::Luma([to_byte(values[i * w + j])]),
            );
        }
    }
    img.save(path)?;
    Ok(())
}

fn to_byte(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

/// Grayscale PNG back to [0, 1] values.
pub fn load_gray_png(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values = img.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
    Ok((values, h, w))
}

/// Loads matched `<stem>.png` pairs sorted by filename. Masks binarize at
/// [`MASK_THRESHOLD`]; images normalize to [0, 1].
pub fn load_pairs(image_dir: &Path, mask_dir: &Path) -> Result<Vec<Sample>> {
    let list = |dir: &Path| -> Result<Vec<String>> {
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut names: Vec<String> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().map(|e| e == "png").unwrap_or(false))
            .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
            .collect();
        names.sort();
        Ok(names)
    };
    let images = list(image_dir)?;
    let masks = list(mask_dir)?;
    for name in &images {
        if !masks.contains(name) {
            return Err(Error::Data(format!(
                "image `{name}` has no mask counterpart"
            )));
        }
    }
    for name in &masks {
        if !images.contains(name) {
            return Err(Error::Data(format!(
                "mask `{name}` has no image counterpart"
            )));
        }
    }

    let mut samples = Vec::with_capacity(images.len());
    for name in images {
        let img = image::open(image_dir.join(format!("{name}.png")))?.into_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = Vec::with_capacity(h * w * 3);
        for i in 0..h {
            for j in 0..w {
                let p = img.get_pixel(j as u32, i as u32);
                data.extend(p.0.iter().map(|&b| b as f64 / 255.0));
            }
        }
        let (mask_raw, mh, mw) = load_gray_png(&mask_dir.join(format!("{name}.png")))?;
        if (mh, mw) != (h, w) {
            return Err(Error::Data(format!(
                "mask `{name}` is {}x{} but image is {}x{}",
                mh, mw, h, w
            )));
        }
        let mask: Vec<f64> = mask_raw
            .iter()
            .map(|&v| {
                if v * 255.0 >= MASK_THRESHOLD as f64 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        samples.push(Sample {
            image: Tensor::from_vec(data, &[h, w, 3])?,
            mask: Tensor::from_vec(mask, &[h, w])?,
            id: name,
        });
    }
    Ok(samples)
}

/// Writes a dataset split under `<root>/{images,masks}`.
pub fn save_split(samples: &[Sample], root: &Path) -> Result<(PathBuf, PathBuf)> {
    let image_dir = root.join("images");
    let mask_dir = root.join("masks");
    for s in samples {
        save_sample(s, &image_dir, &mask_dir)?;
    }
    Ok((image_dir, mask_dir))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(sample: &Sample) -> (f64, f64) {
        let img = sample.image.data();
        let mask = sample.mask.data();
        let (mut fs, mut fc, mut bs, mut bc) = (0.0, 0, 0.0, 0);
        for (i, &m) in mask.iter().enumerate() {
            let gray = (img[i * 3] + img[i * 3 + 1] + img[i * 3 + 2]) / 3.0;
            if m == 1.0 {
                fs += gray;
                fc += 1;
            } else {
                bs += gray;
                bc += 1;
            }
        }
        (fs / fc as f64, bs / bc as f64)
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = SynthConfig {
            n_train: 3,
            n_test: 1,
            ..SynthConfig::default()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.image.data(), y.image.data());
            assert_eq!(x.mask.data(), y.mask.data());
        }
    }

    #[test]
    fn camouflage_property_zero_contrast() {
        let cfg = SynthConfig {
            n_train: 6,
            n_test: 0,
            contrast_delta: 0.0,
            ..SynthConfig::default()
        };
        for sample in generate(&cfg).unwrap() {
            let (fg, bg) = stats(&sample);
            assert!(
                (fg - bg).abs() <= 0.02,
                "sample {} mean gap {}",
                sample.id,
                (fg - bg).abs()
            );
        }
    }

    #[test]
    fn mask_area_within_bounds_and_binary() {
        for shape in [ShapeKind::Ellipse, ShapeKind::Blob, ShapeKind::Polygon] {
            let cfg = SynthConfig {
                n_train: 4,
                n_test: 0,
                shape,
                seed: 11,
                ..SynthConfig::default()
            };
            for sample in generate(&cfg).unwrap() {
                let m = sample.mask.data();
                assert!(m.iter().all(|&v| v == 0.0 || v == 1.0));
                let area = m.iter().sum::<f64>() / m.len() as f64;
                assert!((0.05..=0.40).contains(&area), "area {}", area);
                assert!(sample
                    .image
                    .data()
                    .iter()
                    .all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_train: 2,
            n_test: 0,
            ..SynthConfig::default()
        };
        let samples = generate(&cfg).unwrap();
        let (image_dir, mask_dir) = save_split(&samples, dir.path()).unwrap();
        let loaded = load_pairs(&image_dir, &mask_dir).unwrap();
        assert_eq!(loaded.len(), 2);
        for (orig, back) in samples.iter().zip(&loaded) {
            assert_eq!(orig.mask.data(), back.mask.data());
            for (a, b) in orig.image.data().iter().zip(back.image.data()) {
                assert!((a - b).abs() <= 1.0 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn empty_dirs_give_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let out = load_pairs(&dir.path().join("images"), &dir.path().join("masks")).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn orphan_file_is_named_in_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_train: 1,
            n_test: 0,
            ..SynthConfig::default()
        };
        let samples = generate(&cfg).unwrap();
        let (image_dir, mask_dir) = save_split(&samples, dir.path()).unwrap();
        std::fs::remove_file(mask_dir.join("train_0000.png")).unwrap();
        let err = load_pairs(&image_dir, &mask_dir).unwrap_err();
        assert!(err.to_string().contains("train_0000"));
    }

    #[test]
    fn foreground_band_energy_exceeds_background() {
        // the generator's premise: figure and ground differ in a frequency
        // band even when means match
        let cfg = SynthConfig {
            n_train: 4,
            n_test: 0,
            contrast_delta: 0.0,
            seed: 3,
            ..SynthConfig::default()
        };
        let mut fg_wins = 0;
        for sample in generate(&cfg).unwrap() {
            let n = 64;
            let img = sample.image.data();
            let mask = sample.mask.data();
            let gray: Vec<f64> = (0..n * n)
                .map(|i| (img[i * 3] + img[i * 3 + 1] + img[i * 3 + 2]) / 3.0)
                .collect();
            // local high-frequency proxy: squared horizontal differences
            let (mut fg_e, mut fg_n, mut bg_e, mut bg_n) = (0.0, 0, 0.0, 0);
            for i in 0..n {
                for j in 1..n {
                    let d = gray[i * n + j] - gray[i * n + j - 1];
                    if mask[i * n + j] == 1.0 && mask[i * n + j - 1] == 1.0 {
                        fg_e += d * d;
                        fg_n += 1;
                    } else if mask[i * n + j] == 0.0 && mask[i * n + j - 1] == 0.0 {
                        bg_e += d * d;
                        bg_n += 1;
                    }
                }
            }
            if fg_e / fg_n as f64 > bg_e / bg_n as f64 {
                fg_wins += 1;
            }
        }
        assert_eq!(fg_wins, 4);
    }
}
