//! Acceptance suite: one test per release criterion, each printing a
//! `[criterion N] name: PASS/FAIL` line (visible with `-- --nocapture`).
//!
//! Run with `cargo test --test acceptance -- --nocapture`.

mod common;

use fgsa_core::config::{DataSource, RunConfig};
use fgsa_core::data::SynthConfig;
use fgsa_core::fgsattn::{
    build_ring_partition, fgsattn_forward, fgsattn_forward_traced, min_max_normalize, FgsAttnParams,
};
use fgsa_core::head::{boundary_weights, weighted_bce_iou_loss, PredictionMask};
use fgsa_core::metrics;
use fgsa_core::run::{
    cmd_eval, cmd_sweep, cmd_train, gradcheck_suite, sweep_csv, Split, SweepValue,
    GRADCHECK_TOLERANCE,
};
use fgsa_core::tensor::{fft2, grad_check, ifft2, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn criterion(n: usize, name: &str, body: impl FnOnce() + std::panic::UnwindSafe) {
    match std::panic::catch_unwind(body) {
        Ok(()) => println!("[criterion {n}] {name}: PASS"),
        Err(cause) => {
            println!("[criterion {n}] {name}: FAIL");
            std::panic::resume_unwind(cause);
        }
    }
}

fn random_plane(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f64> {
    (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn criterion_1_fft_correctness() {
    criterion(1, "FFT vs naive DFT, Parseval, round trip", || {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(h, w) in &[
            (4usize, 4usize),
            (8, 8),
            (16, 16),
            (32, 32),
            (5, 5),
            (6, 10),
            (12, 28),
            (32, 17),
        ] {
            let data = random_plane(&mut rng, h, w);
            let x = Tensor::from_vec(data.clone(), &[h, w]).unwrap();
            let spec = fft2(&x).unwrap();
            let (oracle_re, oracle_im) = common::naive_dft2(&data, h, w);

            let re = spec.real.data();
            let im = spec.imag.data();
            for k in 0..h * w {
                assert!(
                    (re[k] - oracle_re[k]).abs() <= 1e-10,
                    "re bin {k} off by {} at {h}x{w}",
                    (re[k] - oracle_re[k]).abs()
                );
                assert!(
                    (im[k] - oracle_im[k]).abs() <= 1e-10,
                    "im bin {k} off by {} at {h}x{w}",
                    (im[k] - oracle_im[k]).abs()
                );
            }

            let spatial: f64 = data.iter().map(|v| v * v).sum();
            let spectral: f64 = re.iter().zip(&im).map(|(r, i)| r * r + i * i).sum();
            assert!(
                (spectral - spatial).abs() / spatial <= 1e-10,
                "Parseval violated at {h}x{w}"
            );

            let back = ifft2(&spec).unwrap().data();
            for k in 0..h * w {
                assert!((back[k] - data[k]).abs() <= 1e-10, "round trip at {h}x{w}");
            }
        }
        assert!(start.elapsed().as_secs() < 10, "criterion 1 over budget");
    });
}

#[test]
fn criterion_2_ring_partition_exhaustive() {
    criterion(2, "ring partition disjoint and covering", || {
        let start = Instant::now();
        for h in (4..=32).step_by(2) {
            for w in (4..=32).step_by(2) {
                for d in [1usize, 2, 4] {
                    let r = h.min(w) / 2;
                    let part = match build_ring_partition(h, w, d) {
                        Ok(p) => p,
                        Err(_) => {
                            assert!(d > r, "rejected valid width d={d} at {h}x{w}");
                            continue;
                        }
                    };
                    assert!(d <= r);
                    let mut seen = vec![false; h * w];
                    for ring in 0..part.n_rings {
                        for &idx in part.bin_indices(ring) {
                            assert!(!seen[idx], "bin {idx} double-covered at {h}x{w} d={d}");
                            seen[idx] = true;
                        }
                    }
                    assert!(seen.iter().all(|&b| b), "uncovered bin at {h}x{w} d={d}");
                    assert_eq!(part.ring_counts.iter().sum::<usize>(), h * w);
                }
            }
        }
        assert!(start.elapsed().as_secs() < 5, "criterion 2 over budget");
    });
}

#[test]
fn criterion_3_fgsattn_identity_properties() {
    criterion(3, "FGSAttn identity and zeroed-attention residual", || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = Tensor::from_vec(
            (0..8 * 8 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            &[8, 8, 4],
        )
        .unwrap();
        let part = build_ring_partition(8, 8, 1).unwrap();

        // FC forced to all-ones: amplitude reconstructs exactly, M is the
        // min-max normalized pooled map
        let identity = FgsAttnParams::identity(part.n_rings);
        let (_, trace) = fgsattn_forward_traced(&f, &identity, &part).unwrap();
        let amp = trace.amp.data();
        let amp_recal = trace.amp_recal.data();
        for k in 0..amp.len() {
            assert!((amp[k] - amp_recal[k]).abs() <= 1e-10);
        }
        let expected_m = min_max_normalize(&trace.pooled).unwrap().data();
        let m = trace.attention.data();
        for k in 0..m.len() {
            assert!((m[k] - expected_m[k]).abs() <= 1e-10);
        }

        // zeroed attention contribution: exact pass-through
        let zero = FgsAttnParams::zero(part.n_rings);
        let (out, m) = fgsattn_forward(&f, &zero, &part).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0));
        assert_eq!(out.data(), f.data());
    });
}

#[test]
fn criterion_4_gradient_suite() {
    criterion(4, "finite-difference gradient suite (10 seeds)", || {
        let start = Instant::now();
        let entries = gradcheck_suite(10).unwrap();
        for e in &entries {
            println!("  {:<24} max rel err {:.3e}", e.name, e.max_rel_error);
            assert!(
                e.max_rel_error < GRADCHECK_TOLERANCE,
                "{} failed at {}",
                e.name,
                e.max_rel_error
            );
        }
        assert!(start.elapsed().as_secs() < 300, "criterion 4 over budget");
    });
}

#[test]
fn criterion_5_freeze_contract() {
    criterion(5, "frozen backbone bit-identical after 200 steps", || {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.backbone.image_size = 32;
        cfg.backbone.patch_size = 8;
        cfg.backbone.embed_dim = 16;
        cfg.backbone.depth = 2;
        cfg.backbone.heads = 2;
        cfg.backbone.group_count = 2;
        cfg.backbone.layers_per_group = 1;
        cfg.adapter.dim = 16;
        cfg.adapter.heads = 2;
        cfg.adapter.ffn_mult = 2;
        cfg.train.max_steps = Some(200);
        cfg.data = DataSource::Synth(SynthConfig {
            size: 32,
            n_train: 8,
            n_test: 2,
            ..SynthConfig::default()
        });
        cfg.out_dir = dir.path().to_path_buf();

        let report = cmd_train(&cfg, |_| {}).unwrap();
        assert_eq!(report.steps, 200);
        assert_eq!(
            report.backbone_digest_before, report.backbone_digest_after,
            "backbone bytes changed during training"
        );
        assert!(report.tunable_fraction > 0.0 && report.tunable_fraction < 1.0);
        println!(
            "  tunable fraction at this toy scale: {:.2}% (paper-scale context: ~7%)",
            100.0 * report.tunable_fraction
        );
    });
}

#[test]
fn criterion_6_metric_oracles() {
    criterion(6, "metrics match independent reimplementations", || {
        let mut rng = ChaCha8Rng::seed_from_u64(6);

        // perfect scores at pred == gt
        let gt_disk: Vec<f64> = (0..256)
            .map(|i| {
                let (y, x) = ((i / 16) as f64, (i % 16) as f64);
                if ((y - 8.0).powi(2) + (x - 7.0).powi(2)).sqrt() < 5.0 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let gt = Tensor::from_vec(gt_disk, &[16, 16]).unwrap();
        assert!((metrics::s_measure(&gt, &gt, 0.5).unwrap() - 1.0).abs() < 1e-6);
        assert!((metrics::e_measure_mean(&gt, &gt).unwrap() - 1.0).abs() < 1e-6);
        assert!((metrics::weighted_f_measure(&gt, &gt, 1.0).unwrap() - 1.0).abs() < 1e-6);
        assert!(metrics::mae(&gt, &gt).unwrap() == 0.0);

        // 50 random pairs against the oracles
        for pair in 0..50 {
            let pred_data: Vec<f64> = (0..256).map(|_| rng.gen_range(0.0..1.0)).collect();
            let density = rng.gen_range(0.15..0.6);
            let gt_data: Vec<f64> = (0..256)
                .map(|_| if rng.gen_bool(density) { 1.0 } else { 0.0 })
                .collect();
            let pred = Tensor::from_vec(pred_data.clone(), &[16, 16]).unwrap();
            let gt = Tensor::from_vec(gt_data.clone(), &[16, 16]).unwrap();

            let s = metrics::s_measure(&pred, &gt, 0.5).unwrap();
            let s_oracle = common::s_measure_oracle(&pred_data, &gt_data, 16, 16);
            assert!(
                (s - s_oracle).abs() < 1e-9,
                "S mismatch {} on pair {pair}",
                (s - s_oracle).abs()
            );

            let e = metrics::e_measure_mean(&pred, &gt).unwrap();
            let e_oracle = common::e_measure_oracle(&pred_data, &gt_data, 16, 16);
            assert!(
                (e - e_oracle).abs() < 1e-9,
                "E mismatch {} on pair {pair}",
                (e - e_oracle).abs()
            );

            let f = metrics::weighted_f_measure(&pred, &gt, 1.0).unwrap();
            let f_oracle = common::weighted_f_oracle(&pred_data, &gt_data, 16, 16);
            assert!(
                (f - f_oracle).abs() < 1e-6,
                "F mismatch {} on pair {pair}",
                (f - f_oracle).abs()
            );
        }

        // MAE monotone along gt -> (1 - gt)
        let gt_data: Vec<f64> = (0..256)
            .map(|_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 })
            .collect();
        let gt = Tensor::from_vec(gt_data.clone(), &[16, 16]).unwrap();
        let mut last = -1.0;
        for step in 0..=10 {
            let t = step as f64 / 10.0;
            let pred = Tensor::from_vec(
                gt_data
                    .iter()
                    .map(|&g| (1.0 - t) * g + t * (1.0 - g))
                    .collect(),
                &[16, 16],
            )
            .unwrap();
            let m = metrics::mae(&pred, &gt).unwrap();
            assert!(m >= last - 1e-12, "MAE dipped at t={t}");
            last = m;
        }
    });
}

#[test]
fn criterion_7_loss_properties() {
    criterion(7, "weighted BCE+IoU loss properties", || {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let disk: Vec<f64> = (0..64 * 64)
            .map(|i| {
                let (y, x) = ((i / 64) as f64, (i % 64) as f64);
                if ((y - 31.5).powi(2) + (x - 31.5).powi(2)).sqrt() < 22.0 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let gt = Tensor::from_vec(disk, &[64, 64]).unwrap();

        // non-negative on arbitrary predictions
        for _ in 0..5 {
            let logits = Tensor::from_vec(
                (0..64 * 64).map(|_| rng.gen_range(-3.0..3.0)).collect(),
                &[64, 64],
            )
            .unwrap();
            let pred = PredictionMask {
                probs: logits.sigmoid(),
                logits,
            };
            assert!(weighted_bce_iou_loss(&pred, &gt).unwrap().item() >= 0.0);
        }

        // near-perfect prediction scores under 1e-3
        let sharp: Vec<f64> = gt
            .data()
            .iter()
            .map(|&g| if g > 0.5 { 20.0 } else { -20.0 })
            .collect();
        let logits = Tensor::from_vec(sharp, &[64, 64]).unwrap();
        let pred = PredictionMask {
            probs: logits.sigmoid(),
            logits,
        };
        assert!(weighted_bce_iou_loss(&pred, &gt).unwrap().item() < 1e-3);

        // gradient check through the logits
        let small_gt = Tensor::from_vec(
            (0..64)
                .map(|i| {
                    let (y, x) = ((i / 8) as f64, (i % 8) as f64);
                    if ((y - 4.0).powi(2) + (x - 3.0).powi(2)).sqrt() < 2.5 {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect(),
            &[8, 8],
        )
        .unwrap();
        let logits =
            Tensor::from_vec((0..64).map(|_| rng.gen_range(-1.5..1.5)).collect(), &[8, 8]).unwrap();
        let (lc, gc) = (logits.clone(), small_gt.clone());
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
        assert!(err < 1e-4, "loss gradient error {err}");

        // boundary pixels outweigh interior on a disk mask
        let weights = boundary_weights(&gt).unwrap();
        let center = weights[32 * 64 + 32];
        let edge = weights[32 * 64 + 32 + 22];
        assert_eq!(center, 1.0);
        assert!(edge > center);
    });
}

#[test]
fn criterion_8_training_smoke() {
    criterion(
        8,
        "200-step training halves loss and beats zero-init",
        || {
            let start = Instant::now();
            let dir = tempfile::tempdir().unwrap();
            let mut cfg = RunConfig::default();
            cfg.backbone.image_size = 64;
            cfg.backbone.patch_size = 8;
            cfg.backbone.embed_dim = 32;
            cfg.backbone.depth = 4;
            cfg.backbone.heads = 4;
            cfg.backbone.group_count = 2;
            cfg.backbone.layers_per_group = 2;
            cfg.adapter.dim = 32;
            cfg.adapter.heads = 4;
            cfg.adapter.ffn_mult = 2;
            cfg.train.max_steps = Some(200);
            cfg.train.lr = 1e-3;
            cfg.data = DataSource::Synth(SynthConfig {
                size: 64,
                n_train: 32,
                n_test: 16,
                contrast_delta: 0.0,
                ..SynthConfig::default()
            });
            cfg.out_dir = dir.path().to_path_buf();

            let report = cmd_train(&cfg, |_| {}).unwrap();
            assert_eq!(report.steps, 200);
            assert!(
                report.final_loss <= 0.5 * report.initial_loss,
                "loss {} -> {} did not halve",
                report.initial_loss,
                report.final_loss
            );

            let trained = cmd_eval(&cfg, Some(&report.checkpoint), Split::Test, false).unwrap();
            let untrained = cmd_eval(&cfg, None, Split::Test, false).unwrap();
            println!(
                "  test MAE: trained {:.4} vs zero-init {:.4}",
                trained.report.mae, untrained.report.mae
            );
            assert!(
                trained.report.mae < untrained.report.mae,
                "trained model did not beat the zero-init baseline"
            );
            assert!(start.elapsed().as_secs() < 300, "criterion 8 over budget");
        },
    );
}

#[test]
fn criterion_9_ablation_machinery() {
    criterion(9, "d and KxM sweeps deterministic, CSV well-formed", || {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.backbone.image_size = 64;
        cfg.backbone.patch_size = 8;
        cfg.backbone.embed_dim = 16;
        cfg.backbone.depth = 8;
        cfg.backbone.heads = 2;
        cfg.backbone.group_count = 4;
        cfg.backbone.layers_per_group = 2;
        cfg.adapter.dim = 16;
        cfg.adapter.heads = 2;
        cfg.adapter.ffn_mult = 2;
        cfg.train.max_steps = Some(3);
        cfg.data = DataSource::Synth(SynthConfig {
            size: 64,
            n_train: 4,
            n_test: 2,
            ..SynthConfig::default()
        });

        let d_values = [
            SweepValue::RingWidth(1),
            SweepValue::RingWidth(2),
            SweepValue::RingWidth(4),
        ];
        let km_values = [
            SweepValue::Grouping {
                layers_per_group: 2,
                groups: 4,
            },
            SweepValue::Grouping {
                layers_per_group: 4,
                groups: 2,
            },
        ];

        let run_once = |tag: &str| {
            let mut cfg = cfg.clone();
            cfg.out_dir = dir.path().join(tag);
            let d_rows = cmd_sweep(&cfg, &d_values, |_| {}).unwrap();
            let km_rows = cmd_sweep(&cfg, &km_values, |_| {}).unwrap();
            (sweep_csv(&d_rows), sweep_csv(&km_rows))
        };
        let (d_csv_a, km_csv_a) = run_once("a");
        let (d_csv_b, km_csv_b) = run_once("b");

        assert_eq!(d_csv_a, d_csv_b, "d sweep not deterministic");
        assert_eq!(km_csv_a, km_csv_b, "KxM sweep not deterministic");

        for (csv, rows) in [(&d_csv_a, 3), (&km_csv_a, 2)] {
            let lines: Vec<&str> = csv.lines().collect();
            assert_eq!(lines.len(), rows + 1);
            assert_eq!(lines[0], "param_value,s_alpha,e_phi,f_w_beta,mae");
            for line in &lines[1..] {
                let fields: Vec<&str> = line.split(',').collect();
                assert_eq!(fields.len(), 5);
                for v in &fields[1..] {
                    let parsed: f64 = v.parse().expect("numeric CSV field");
                    assert!((0.0..=1.0).contains(&parsed));
                }
            }
        }
        println!("  d sweep rows:\n{}", d_csv_a.trim_end());
    });
}
