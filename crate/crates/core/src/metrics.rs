//! The four standard COD evaluation measures: structure measure S_alpha,
//! mean enhanced-alignment measure E_phi, weighted F-measure F^w_beta, and
//! mean absolute error.
//!
//! Formulas follow the metrics' source papers. Conventions that the sources
//! leave degenerate are pinned here and locked by tests:
//! - all-background gt scores S as `1 - mean(pred)`, all-foreground as
//!   `mean(pred)`;
//! - E_phi averages over H*W pixels (the source paper's formula; its released
//!   code divides by H*W - 1) across 256 midpoint thresholds (k+0.5)/256;
//! - F^w_beta of an empty-foreground gt is 0 (the released code would produce
//!   NaN there, which breaks the [0,1] range);
//! - S-measure region blocks with zero area contribute 0 at weight 0.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

const EPS: f64 = f64::EPSILON;

/// Aggregate scores over an evaluation split (arithmetic means).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub s_alpha: f64,
    pub e_phi: f64,
    pub f_w_beta: f64,
    pub mae: f64,
    pub n_samples: usize,
}

fn validated(
    op: &'static str,
    pred: &Tensor,
    gt: &Tensor,
) -> Result<(Vec<f64>, Vec<f64>, usize, usize)> {
    let ps = pred.shape();
    let gs = gt.shape();
    if ps.len() != 2 || ps != gs {
        return Err(Error::shape(
            op,
            format!("prediction {:?} vs ground truth {:?}", ps, gs),
        ));
    }
    let p = pred.data();
    let g = gt.data();
    if p.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::invalid(op, "prediction values outside [0, 1]"));
    }
    if g.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid(op, "ground truth must be binary"));
    }
    Ok((p, g, ps[0], ps[1]))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean absolute error.
pub fn mae(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    let (p, g, _, _) = validated("mae", pred, gt)?;
    Ok(p.iter().zip(&g).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64)
}

// ---------------------------------------------------------------------------
// Structure measure
// ---------------------------------------------------------------------------

/// `S = alpha * S_object + (1 - alpha) * S_region`, clamped to [0, 1].
pub fn s_measure(pred: &Tensor, gt: &Tensor, alpha: f64) -> Result<f64> {
    let (p, g, h, w) = validated("s_measure", pred, gt)?;
    let y = mean(&g);
    let q = if y == 0.0 {
        1.0 - mean(&p)
    } else if y == 1.0 {
        mean(&p)
    } else {
        alpha * s_object(&p, &g) + (1.0 - alpha) * s_region(&p, &g, h, w)
    };
    Ok(q.clamp(0.0, 1.0))
}

fn masked_mean_std(values: &[f64], mask: &[f64], keep: f64) -> (f64, f64) {
    let selected: Vec<f64> = values
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m == keep)
        .map(|(&v, _)| v)
        .collect();
    if selected.is_empty() {
        return (0.0, 0.0);
    }
    let mu = mean(&selected);
    if selected.len() == 1 {
        return (mu, 0.0);
    }
    let var =
        selected.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (selected.len() - 1) as f64;
    (mu, var.sqrt())
}

fn object_score(x: f64, sigma: f64) -> f64 {
    2.0 * x / (x * x + 1.0 + sigma + EPS)
}

fn s_object(p: &[f64], g: &[f64]) -> f64 {
    let (x_fg, s_fg) = masked_mean_std(p, g, 1.0);
    let inv: Vec<f64> = p.iter().map(|v| 1.0 - v).collect();
    let (x_bg, s_bg) = masked_mean_std(&inv, g, 0.0);
    let u = mean(g);
    u * object_score(x_fg, s_fg) + (1.0 - u) * object_score(x_bg, s_bg)
}

/// Ground-truth centroid in 1-based coordinates, matching the source's
/// rounding convention.
fn centroid(g: &[f64], h: usize, w: usize) -> (usize, usize) {
    let total: f64 = g.iter().sum();
    if total == 0.0 {
        return (
            (w as f64 / 2.0).round() as usize,
            (h as f64 / 2.0).round() as usize,
        );
    }
    let mut col_weighted = 0.0;
    let mut row_weighted = 0.0;
    for i in 0..h {
        for j in 0..w {
            let v = g[i * w + j];
            col_weighted += v * (j + 1) as f64;
            row_weighted += v * (i + 1) as f64;
        }
    }
    (
        (col_weighted / total).round() as usize,
        (row_weighted / total).round() as usize,
    )
}

/// SSIM-style block similarity over one region pair.
fn block_ssim(p: &[f64], g: &[f64]) -> f64 {
    let n = p.len() as f64;
    let x = mean(p);
    let y = mean(g);
    let denom = n - 1.0 + EPS;
    let sigma_x2 = p.iter().map(|v| (v - x) * (v - x)).sum::<f64>() / denom;
    let sigma_y2 = g.iter().map(|v| (v - y) * (v - y)).sum::<f64>() / denom;
    let sigma_xy = p.iter().zip(g).map(|(a, b)| (a - x) * (b - y)).sum::<f64>() / denom;
    let alpha = 4.0 * x * y * sigma_xy;
    let beta = (x * x + y * y) * (sigma_x2 + sigma_y2);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn extract_block(
    src: &[f64],
    w: usize,
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for i in rows {
        for j in cols.clone() {
            out.push(src[i * w + j]);
        }
    }
    out
}

fn s_region(p: &[f64], g: &[f64], h: usize, w: usize) -> f64 {
    let (cx, cy) = centroid(g, h, w);
    let area = (h * w) as f64;
    // block weights from the gt partition about the centroid
    let w1 = (cx * cy) as f64 / area;
    let w2 = ((w - cx) * cy) as f64 / area;
    let w3 = (cx * (h - cy)) as f64 / area;
    let w4 = 1.0 - w1 - w2 - w3;

    let blocks = [
        (0..cy, 0..cx, w1),
        (0..cy, cx..w, w2),
        (cy..h, 0..cx, w3),
        (cy..h, cx..w, w4),
    ];
    let mut q = 0.0;
    for (rows, cols, weight) in blocks {
        if rows.is_empty() || cols.is_empty() {
            continue; // zero-area block carries zero weight
        }
        let pb = extract_block(p, w, rows.clone(), cols.clone());
        let gb = extract_block(g, w, rows, cols);
        q += weight * block_ssim(&pb, &gb);
    }
    q
}

// ---------------------------------------------------------------------------
// Mean enhanced-alignment measure
// ---------------------------------------------------------------------------

const E_THRESHOLDS: usize = 256;

/// Mean E over 256 midpoint thresholds.
pub fn e_measure_mean(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    let (p, g, h, w) = validated("e_measure", pred, gt)?;
    let n = (h * w) as f64;
    let gt_sum: f64 = g.iter().sum();
    let mu_g = gt_sum / n;

    let mut total = 0.0;
    for k in 0..E_THRESHOLDS {
        let t = (k as f64 + 0.5) / E_THRESHOLDS as f64;
        let fm: Vec<f64> = p.iter().map(|&v| if v >= t { 1.0 } else { 0.0 }).collect();
        let score = if gt_sum == 0.0 {
            fm.iter().map(|v| 1.0 - v).sum::<f64>() / n
        } else if gt_sum == n {
            fm.iter().sum::<f64>() / n
        } else {
            let mu_f = mean(&fm);
            let mut acc = 0.0;
            for (fv, gv) in fm.iter().zip(&g) {
                let af = fv - mu_f;
                let ag = gv - mu_g;
                let align = 2.0 * ag * af / (ag * ag + af * af + EPS);
                acc += (align + 1.0) * (align + 1.0) / 4.0;
            }
            acc / n
        };
        total += score;
    }
    Ok((total / E_THRESHOLDS as f64).clamp(0.0, 1.0))
}

// ---------------------------------------------------------------------------
// Weighted F-measure
// ---------------------------------------------------------------------------

const WFB_SIGMA: f64 = 5.0;
const WFB_WINDOW: usize = 7;

/// Exact Euclidean distance to the nearest foreground pixel plus that pixel's
/// flat index, for every pixel. Ties break in row-major scan order.
fn distance_to_foreground(g: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let fg: Vec<(usize, usize, usize)> = (0..h * w)
        .filter(|&i| g[i] == 1.0)
        .map(|i| (i / w, i % w, i))
        .collect();
    let mut dist = vec![0.0; h * w];
    let mut nearest = vec![0usize; h * w];
    for i in 0..h {
        for j in 0..w {
            let idx = i * w + j;
            if g[idx] == 1.0 {
                nearest[idx] = idx;
                continue;
            }
            let mut best = u64::MAX;
            let mut arg = 0usize;
            for &(fi, fj, fidx) in &fg {
                let dy = fi as i64 - i as i64;
                let dx = fj as i64 - j as i64;
                let d2 = (dy * dy + dx * dx) as u64;
                if d2 < best {
                    best = d2;
                    arg = fidx;
                }
            }
            dist[idx] = (best as f64).sqrt();
            nearest[idx] = arg;
        }
    }
    (dist, nearest)
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let r = size as isize / 2;
    let mut k = Vec::with_capacity(size * size);
    for y in -r..=r {
        for x in -r..=r {
            k.push((-((x * x + y * y) as f64) / (2.0 * sigma * sigma)).exp());
        }
    }
    let total: f64 = k.iter().sum();
    k.iter().map(|v| v / total).collect()
}

/// Zero-padded 'same' correlation with a square kernel.
fn filter_same(src: &[f64], h: usize, w: usize, kernel: &[f64], size: usize) -> Vec<f64> {
    let r = size as isize / 2;
    let mut out = vec![0.0; h * w];
    for i in 0..h as isize {
        for j in 0..w as isize {
            let mut acc = 0.0;
            for ky in -r..=r {
                for kx in -r..=r {
                    let (y, x) = (i + ky, j + kx);
                    if y >= 0 && y < h as isize && x >= 0 && x < w as isize {
                        acc += src[(y * w as isize + x) as usize]
                            * kernel[((ky + r) * size as isize + kx + r) as usize];
                    }
                }
            }
            out[(i * w as isize + j) as usize] = acc;
        }
    }
    out
}

/// Weighted F-measure with dependency-smoothed foreground errors and
/// distance-attenuated background importance.
pub fn weighted_f_measure(pred: &Tensor, gt: &Tensor, beta2: f64) -> Result<f64> {
    let (p, g, h, w) = validated("weighted_f_measure", pred, gt)?;
    let gt_sum: f64 = g.iter().sum();
    if gt_sum == 0.0 {
        return Ok(0.0);
    }

    let e: Vec<f64> = p.iter().zip(&g).map(|(a, b)| (a - b).abs()).collect();
    let (dist, nearest) = distance_to_foreground(&g, h, w);

    // background errors take the error of their nearest foreground pixel
    let et: Vec<f64> = (0..h * w)
        .map(|i| if g[i] == 1.0 { e[i] } else { e[nearest[i]] })
        .collect();
    let ea = filter_same(
        &et,
        h,
        w,
        &gaussian_kernel(WFB_WINDOW, WFB_SIGMA),
        WFB_WINDOW,
    );

    // on foreground, take the smoothed error when it is smaller
    let min_e_ea: Vec<f64> = (0..h * w)
        .map(|i| {
            if g[i] == 1.0 && ea[i] < e[i] {
                ea[i]
            } else {
                e[i]
            }
        })
        .collect();

    // pixel importance: 1 on foreground, distance-decayed toward 2 on background
    let decay = 0.5_f64.ln() / 5.0;
    let importance: Vec<f64> = (0..h * w)
        .map(|i| {
            if g[i] == 1.0 {
                1.0
            } else {
                2.0 - (decay * dist[i]).exp()
            }
        })
        .collect();

    let ew: Vec<f64> = min_e_ea
        .iter()
        .zip(&importance)
        .map(|(a, b)| a * b)
        .collect();
    let ew_fg: f64 = (0..h * w).filter(|&i| g[i] == 1.0).map(|i| ew[i]).sum();
    let ew_bg: f64 = (0..h * w).filter(|&i| g[i] == 0.0).map(|i| ew[i]).sum();

    let tpw = gt_sum - ew_fg;
    let fpw = ew_bg;
    let recall = 1.0 - ew_fg / gt_sum;
    let precision = tpw / (EPS + tpw + fpw);
    let q = (1.0 + beta2) * recall * precision / (EPS + recall + beta2 * precision);
    Ok(q.clamp(0.0, 1.0))
}

/// Evaluates all four measures over (prediction, mask) pairs and averages.
pub fn evaluate_pairs(pairs: &[(Tensor, Tensor)]) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::Data("no samples to evaluate".into()));
    }
    let mut report = MetricsReport {
        s_alpha: 0.0,
        e_phi: 0.0,
        f_w_beta: 0.0,
        mae: 0.0,
        n_samples: pairs.len(),
    };
    for (pred, gt) in pairs {
        report.s_alpha += s_measure(pred, gt, 0.5)?;
        report.e_phi += e_measure_mean(pred, gt)?;
        report.f_w_beta += weighted_f_measure(pred, gt, 1.0)?;
        report.mae += mae(pred, gt)?;
    }
    let n = pairs.len() as f64;
    report.s_alpha /= n;
    report.e_phi /= n;
    report.f_w_beta /= n;
    report.mae /= n;
    Ok(report)
}
