//! Independent oracles for the acceptance suite: a direct O(H^2 W^2) DFT and
//! definition-level reimplementations of the evaluation measures, written
//! straight from the source formulas without sharing code with the library.

#![allow(dead_code)]

const MEPS: f64 = f64::EPSILON;

/// Direct unitary DFT: per-bin double sum with explicit trigonometry.
pub fn naive_dft2(x: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let norm = 1.0 / ((h * w) as f64).sqrt();
    let mut re = vec![0.0; h * w];
    let mut im = vec![0.0; h * w];
    for u in 0..h {
        for v in 0..w {
            let mut acc_re = 0.0;
            let mut acc_im = 0.0;
            for row in 0..h {
                for col in 0..w {
                    let angle = -2.0
                        * std::f64::consts::PI
                        * (u as f64 * row as f64 / h as f64 + v as f64 * col as f64 / w as f64);
                    acc_re += x[row * w + col] * angle.cos();
                    acc_im += x[row * w + col] * angle.sin();
                }
            }
            re[u * w + v] = acc_re * norm;
            im[u * w + v] = acc_im * norm;
        }
    }
    (re, im)
}

fn mean2(a: &[f64]) -> f64 {
    a.iter().sum::<f64>() / a.len() as f64
}

// ---------------------------------------------------------------------------
// Structure measure oracle
// ---------------------------------------------------------------------------

pub fn s_measure_oracle(pred: &[f64], gt: &[f64], h: usize, w: usize) -> f64 {
    let y = mean2(gt);
    if y == 0.0 {
        return (1.0 - mean2(pred)).clamp(0.0, 1.0);
    }
    if y == 1.0 {
        return mean2(pred).clamp(0.0, 1.0);
    }
    let q = 0.5 * oracle_s_object(pred, gt) + 0.5 * oracle_s_region(pred, gt, h, w);
    q.clamp(0.0, 1.0)
}

fn oracle_object(values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let x = mean2(&values);
    let sigma = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - x) * (v - x)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
    };
    2.0 * x / (x * x + 1.0 + sigma + MEPS)
}

fn oracle_s_object(pred: &[f64], gt: &[f64]) -> f64 {
    let fg: Vec<f64> = pred
        .iter()
        .zip(gt)
        .filter(|(_, &g)| g == 1.0)
        .map(|(&p, _)| p)
        .collect();
    let bg: Vec<f64> = pred
        .iter()
        .zip(gt)
        .filter(|(_, &g)| g == 0.0)
        .map(|(&p, _)| 1.0 - p)
        .collect();
    let u = mean2(gt);
    u * oracle_object(fg) + (1.0 - u) * oracle_object(bg)
}

fn oracle_ssim(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len() as f64;
    let x = mean2(pred);
    let y = mean2(gt);
    let sx = pred.iter().map(|v| (v - x) * (v - x)).sum::<f64>() / (n - 1.0 + MEPS);
    let sy = gt.iter().map(|v| (v - y) * (v - y)).sum::<f64>() / (n - 1.0 + MEPS);
    let sxy = pred
        .iter()
        .zip(gt)
        .map(|(a, b)| (a - x) * (b - y))
        .sum::<f64>()
        / (n - 1.0 + MEPS);
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + MEPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn oracle_s_region(pred: &[f64], gt: &[f64], h: usize, w: usize) -> f64 {
    // centroid, 1-based with round-half-away-from-zero
    let total: f64 = gt.iter().sum();
    let (cx, cy) = if total == 0.0 {
        (
            (w as f64 / 2.0).round() as usize,
            (h as f64 / 2.0).round() as usize,
        )
    } else {
        let mut sx = 0.0;
        let mut sy = 0.0;
        for i in 0..h {
            for j in 0..w {
                sx += gt[i * w + j] * (j + 1) as f64;
                sy += gt[i * w + j] * (i + 1) as f64;
            }
        }
        ((sx / total).round() as usize, (sy / total).round() as usize)
    };

    let take = |src: &[f64], r0: usize, r1: usize, c0: usize, c1: usize| -> Vec<f64> {
        let mut out = Vec::new();
        for i in r0..r1 {
            for j in c0..c1 {
                out.push(src[i * w + j]);
            }
        }
        out
    };
    let area = (h * w) as f64;
    let weights = [
        (cx * cy) as f64 / area,
        ((w - cx) * cy) as f64 / area,
        (cx * (h - cy)) as f64 / area,
        0.0, // filled below
    ];
    let w4 = 1.0 - weights[0] - weights[1] - weights[2];
    let regions = [
        (0, cy, 0, cx, weights[0]),
        (0, cy, cx, w, weights[1]),
        (cy, h, 0, cx, weights[2]),
        (cy, h, cx, w, w4),
    ];
    let mut q = 0.0;
    for (r0, r1, c0, c1, weight) in regions {
        if r0 == r1 || c0 == c1 {
            continue;
        }
        q += weight * oracle_ssim(&take(pred, r0, r1, c0, c1), &take(gt, r0, r1, c0, c1));
    }
    q
}

// ---------------------------------------------------------------------------
// Mean E-measure oracle
// ---------------------------------------------------------------------------

pub fn e_measure_oracle(pred: &[f64], gt: &[f64], _h: usize, _w: usize) -> f64 {
    let n = gt.len() as f64;
    let fg_count: f64 = gt.iter().sum();
    let mut total = 0.0;
    for k in 0..256 {
        let threshold = (k as f64 + 0.5) / 256.0;
        let binary: Vec<f64> = pred
            .iter()
            .map(|&v| if v >= threshold { 1.0 } else { 0.0 })
            .collect();
        let enhanced_sum: f64 = if fg_count == 0.0 {
            binary.iter().map(|b| 1.0 - b).sum()
        } else if fg_count == n {
            binary.iter().sum()
        } else {
            let mu_fm = mean2(&binary);
            let mu_gt = mean2(gt);
            binary
                .iter()
                .zip(gt)
                .map(|(&f, &g)| {
                    let (af, ag) = (f - mu_fm, g - mu_gt);
                    let phi = 2.0 * ag * af / (ag * ag + af * af + MEPS);
                    (phi + 1.0) * (phi + 1.0) / 4.0
                })
                .sum()
        };
        total += enhanced_sum / n;
    }
    (total / 256.0).clamp(0.0, 1.0)
}

// ---------------------------------------------------------------------------
// Weighted F-measure oracle (brute force, no separable or incremental tricks)
// ---------------------------------------------------------------------------

pub fn weighted_f_oracle(pred: &[f64], gt: &[f64], h: usize, w: usize) -> f64 {
    if gt.iter().all(|&g| g == 0.0) {
        return 0.0;
    }
    let n = h * w;
    let e: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| (p - g).abs()).collect();

    // true brute force nearest foreground pixel: all pairs
    let mut dist = vec![0.0; n];
    let mut idx = vec![0usize; n];
    for i in 0..n {
        if gt[i] == 1.0 {
            idx[i] = i;
            continue;
        }
        let (iy, ix) = (i / w, i % w);
        let mut best_d2 = i64::MAX;
        for (j, &gv) in gt.iter().enumerate() {
            if gv != 1.0 {
                continue;
            }
            let (jy, jx) = (j / w, j % w);
            let d2 = (iy as i64 - jy as i64).pow(2) + (ix as i64 - jx as i64).pow(2);
            if d2 < best_d2 {
                best_d2 = d2;
                idx[i] = j;
            }
        }
        dist[i] = (best_d2 as f64).sqrt();
    }

    let et: Vec<f64> = (0..n)
        .map(|i| if gt[i] == 1.0 { e[i] } else { e[idx[i]] })
        .collect();

    // direct 7x7 sigma-5 gaussian correlation with zero padding
    let mut kernel = [[0.0; 7]; 7];
    let mut ksum = 0.0;
    for (dy, krow) in kernel.iter_mut().enumerate() {
        for (dx, kv) in krow.iter_mut().enumerate() {
            let (y, x) = (dy as f64 - 3.0, dx as f64 - 3.0);
            *kv = (-(y * y + x * x) / 50.0).exp();
            ksum += *kv;
        }
    }
    let mut ea = vec![0.0; n];
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for (dy, krow) in kernel.iter().enumerate() {
                for (dx, &kv) in krow.iter().enumerate() {
                    let y = i as isize + dy as isize - 3;
                    let x = j as isize + dx as isize - 3;
                    if y >= 0 && (y as usize) < h && x >= 0 && (x as usize) < w {
                        acc += et[y as usize * w + x as usize] * kv / ksum;
                    }
                }
            }
            ea[i * w + j] = acc;
        }
    }

    let mut ew = vec![0.0; n];
    for i in 0..n {
        let err = if gt[i] == 1.0 && ea[i] < e[i] {
            ea[i]
        } else {
            e[i]
        };
        let b = if gt[i] == 1.0 {
            1.0
        } else {
            2.0 - (0.5_f64.ln() / 5.0 * dist[i]).exp()
        };
        ew[i] = err * b;
    }

    let gt_total: f64 = gt.iter().sum();
    let ew_fg: f64 = (0..n).filter(|&i| gt[i] == 1.0).map(|i| ew[i]).sum();
    let ew_bg: f64 = (0..n).filter(|&i| gt[i] == 0.0).map(|i| ew[i]).sum();
    let tpw = gt_total - ew_fg;
    let recall = 1.0 - ew_fg / gt_total;
    let precision = tpw / (MEPS + tpw + ew_bg);
    ((2.0 * recall * precision) / (MEPS + recall + precision)).clamp(0.0, 1.0)
}
