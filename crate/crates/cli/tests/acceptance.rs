//! Acceptance suite. Every criterion prints one PASS or FAIL line straight to
//! stderr so the verdicts stay visible under the default output capture.

mod common;

use std::io::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use flamesense_core::ann::{
    cost, gradient, init_weights, residual_jacobian, train, train_lm, train_scg, EarlyStopping, LinearModel, MlpModel,
    Regressor, StopReason, TrainConfig, TrainMethod,
};
use flamesense_core::dataset::{split, CubicSpline, SplitSpec};
use flamesense_core::eval::{mse, parse_report_table, pearson_r, TableRow};
use flamesense_core::flame_model::{channel_cov, channel_mean, channel_std};
use flamesense_core::imaging::{grid_windows, ChannelId, ChannelPlane, GridSpec};
use flamesense_core::similarity::{gmm_weight_grid, pdf_uni, MvnDensity};
use flamesense_core::synth::{render_frame, RigConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn criterion(n: u32, title: &str, limit: Duration, body: impl FnOnce() -> Outcome) {
    let start = Instant::now();
    let outcome = body();
    let elapsed = start.elapsed();
    let outcome = outcome.and_then(|detail| {
        if elapsed < limit {
            Ok(detail)
        } else {
            Err(format!("{detail}; took {elapsed:.2?}, limit {limit:?}"))
        }
    });
    let line = match &outcome {
        Ok(detail) => format!("PASS criterion {n:>2} {title}: {detail} [{elapsed:.2?}]\n"),
        Err(why) => format!("FAIL criterion {n:>2} {title}: {why} [{elapsed:.2?}]\n"),
    };
    let _ = std::io::stderr().write_all(line.as_bytes());
    if let Err(why) = outcome {
        panic!("criterion {n} failed: {why}");
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

#[test]
fn criterion_01_density_identities() {
    criterion(1, "density identities", secs(1), || {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let mut worst = 0.0f64;
        for _ in 0..200 {
            // Dyadic values keep mu + sigma exact, so the offset is exactly one sigma.
            let mu = rng.random_range(-25600..76800) as f64 / 256.0;
            let sigma = rng.random_range(3..20480) as f64 / 256.0;
            let peak = pdf_uni(mu, mu, sigma).map_err(|e| e.to_string())?;
            let expected = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            worst = worst.max(rel(peak, expected));
            let ratio = pdf_uni(mu + sigma, mu, sigma).unwrap() / peak;
            worst = worst.max(rel(ratio, (-0.5f64).exp()));
        }
        ensure(worst <= 1e-14, || format!("pdf_uni relative error {worst:e}"))?;

        let mut mvn_worst = 0.0f64;
        for _ in 0..1000 {
            let mean: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..255.0)).collect();
            let sd: Vec<f64> = (0..3).map(|_| rng.random_range(1.0..60.0)).collect();
            let mut cov = vec![0.0; 9];
            for i in 0..3 {
                cov[i * 3 + i] = sd[i] * sd[i];
            }
            let mvn = MvnDensity::new(&mean, &cov, "diag").map_err(|e| e.to_string())?;
            let x: [f64; 3] = std::array::from_fn(|i| mean[i] + rng.random_range(-2.0..2.0) * sd[i]);
            let product: f64 = (0..3).map(|i| pdf_uni(x[i], mean[i], sd[i]).unwrap()).product();
            mvn_worst = mvn_worst.max(rel(mvn.eval(&x), product));
        }
        ensure(mvn_worst <= 1e-10, || {
            format!("MVN vs product relative error {mvn_worst:e}")
        })?;
        Ok(format!("pdf max rel err {worst:.1e}, MVN max rel err {mvn_worst:.1e}"))
    });
}

fn random_plane(rng: &mut ChaCha8Rng, ch: ChannelId, h: usize, w: usize) -> ChannelPlane {
    let values = (0..h * w).map(|_| rng.random_range(0..=255u8) as f64).collect();
    ChannelPlane::new(ch, h, w, values).unwrap()
}

#[test]
fn criterion_02_moment_oracles() {
    criterion(2, "moment oracles", secs(1), || {
        let mut rng = ChaCha8Rng::seed_from_u64(202);
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let a = random_plane(&mut rng, ChannelId::R, 8, 8);
            let b = random_plane(&mut rng, ChannelId::G, 8, 8);
            let n = 64.0;
            let (mut sa, mut sb) = (0.0, 0.0);
            for r in 0..8 {
                for c in 0..8 {
                    sa += a.get(r, c);
                    sb += b.get(r, c);
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let (mut vaa, mut vab) = (0.0, 0.0);
            for r in 0..8 {
                for c in 0..8 {
                    vaa += (a.get(r, c) - ma) * (a.get(r, c) - ma);
                    vab += (a.get(r, c) - ma) * (b.get(r, c) - mb);
                }
            }
            let (var, cov) = (vaa / n, vab / n);
            worst = worst
                .max(rel(channel_mean(&a), ma))
                .max(rel(channel_std(&a), var.sqrt()))
                .max(rel(channel_cov(&a, &b).unwrap(), cov))
                .max(rel(channel_std(&a).powi(2), channel_cov(&a, &a).unwrap()));
        }
        ensure(worst <= 1e-12, || format!("max relative error {worst:e}"))?;
        Ok(format!("100 planes, max rel err {worst:.1e}"))
    });
}

#[test]
fn criterion_03_grid_contract() {
    criterion(3, "grid contract", secs(1), || {
        let mut rng = ChaCha8Rng::seed_from_u64(303);
        let plane = random_plane(&mut rng, ChannelId::I, 1088, 1088);
        let windows = grid_windows(&plane, GridSpec::default()).map_err(|e| e.to_string())?;
        ensure(windows.len() == 256, || format!("{} windows", windows.len()))?;
        ensure(windows.iter().all(|w| w.height == 68 && w.width == 68), || {
            "window size is not 68x68".into()
        })?;
        for _ in 0..20 {
            let (gr, gc) = (rng.random_range(1..=6), rng.random_range(1..=6));
            let (h, w) = (gr * rng.random_range(1..=7), gc * rng.random_range(1..=7));
            let p = random_plane(&mut rng, ChannelId::R, h, w);
            let ws = grid_windows(&p, GridSpec::new(gr, gc).unwrap()).map_err(|e| e.to_string())?;
            let mut tiled: Vec<f64> = ws.iter().flat_map(|w| w.values.iter().copied()).collect();
            let mut all = p.values().to_vec();
            tiled.sort_by(f64::total_cmp);
            all.sort_by(f64::total_cmp);
            ensure(tiled == all, || {
                format!("{h}x{w} / {gr}x{gc}: tiling is not a partition")
            })?;
            for win in &ws {
                for r in 0..win.height {
                    for c in 0..win.width {
                        ensure(
                            win.values[r * win.width + c] == p.get(win.top + r, win.left + c),
                            || format!("window {} misplaced", win.index),
                        )?;
                    }
                }
            }
        }
        Ok("256 windows of 68x68; 20 random tilings are exact partitions".into())
    });
}

#[test]
fn criterion_04_weight_grid() {
    criterion(4, "mixture weight grid", secs(1), || {
        let two = gmm_weight_grid(&[ChannelId::R, ChannelId::G]).map_err(|e| e.to_string())?;
        ensure(two.len() == 10, || format!("{} tuples for 2 channels", two.len()))?;
        for b in 0..10 {
            let want = [0.05 + 0.1 * b as f64, 0.95 - 0.1 * b as f64];
            let hits = two
                .iter()
                .filter(|w| w.weights().iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12))
                .count();
            ensure(hits == 1, || format!("tuple {want:?} found {hits} times"))?;
        }
        let three = gmm_weight_grid(&ChannelId::RGB).map_err(|e| e.to_string())?;
        for dominant in 0..3 {
            let want: Vec<f64> = (0..3).map(|i| if i == dominant { 0.95 } else { 0.025 }).collect();
            ensure(
                three
                    .iter()
                    .any(|w| w.weights().iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12)),
                || format!("missing {want:?}"),
            )?;
        }
        for w in two.iter().chain(&three) {
            let s: f64 = w.weights().iter().sum();
            ensure(s == 1.0, || format!("{:?} sums to {s:?}", w.weights()))?;
        }
        Ok(format!(
            "2 channels: 10 tuples; 3 channels: {} tuples; all sums exactly 1",
            three.len()
        ))
    });
}

fn random_batch(rng: &mut ChaCha8Rng, d: usize, c: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let xs = (0..c)
        .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let ys = (0..c).map(|_| rng.random_range(0.5..3.0)).collect();
    (xs, ys)
}

#[test]
fn criterion_05_gradient_check() {
    criterion(5, "gradient check", secs(10), || {
        let mut rng = ChaCha8Rng::seed_from_u64(505);
        let (d, h) = (20, 6);
        let (mut worst_fd, mut worst_jac) = (0.0f64, 0.0f64);
        for _ in 0..10 {
            let mut m = MlpModel::zeros(d, h);
            let p: Vec<f64> = (0..m.param_count()).map(|_| rng.random_range(-0.5..0.5)).collect();
            m.set_params(&p);
            let (xs, ys) = random_batch(&mut rng, d, 30);
            let g = gradient(&m, &xs, &ys).map_err(|e| e.to_string())?;
            let step = 1e-6;
            for k in 0..p.len() {
                let mut q = p.clone();
                q[k] = p[k] + step;
                let mut plus = m.clone();
                plus.set_params(&q);
                q[k] = p[k] - step;
                let mut minus = m.clone();
                minus.set_params(&q);
                let fd = (cost(&plus, &xs, &ys).unwrap() - cost(&minus, &xs, &ys).unwrap()) / (2.0 * step);
                worst_fd = worst_fd.max((g[k] - fd).abs() / g[k].abs().max(1e-3));
            }
            let (j, e) = residual_jacobian(&m, &xs, &ys).map_err(|e| e.to_string())?;
            let jte = j.transpose() * DVector::from_vec(e);
            for (a, b) in jte.iter().zip(&g) {
                worst_jac = worst_jac.max((a / xs.len() as f64 - b).abs() / b.abs().max(1e-12));
            }
        }
        ensure(worst_fd <= 1e-6, || {
            format!("finite-difference relative error {worst_fd:e}")
        })?;
        ensure(worst_jac <= 1e-10, || {
            format!("Jacobian consistency error {worst_jac:e}")
        })?;
        Ok(format!(
            "FD max rel err {worst_fd:.1e}, (1/C)J^T e vs grad {worst_jac:.1e}"
        ))
    });
}

/// Noisy linear data and its least-squares solution from a QR solve.
fn linear_problem(seed: u64, c: usize, d: usize) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<Vec<f64>> = (0..c)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let truth: Vec<f64> = (0..=d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|x| truth[d] + x.iter().zip(&truth).map(|(a, b)| a * b).sum::<f64>() + 0.1 * rng.random_range(-1.0..1.0))
        .collect();
    let design = DMatrix::from_fn(c, d + 1, |i, k| if k < d { xs[i][k] } else { 1.0 });
    let qr = design.qr();
    let qty = qr.q().transpose() * DVector::from_column_slice(&ys);
    let solution = qr.r().solve_upper_triangular(&qty).unwrap();
    (xs, ys, solution.iter().copied().collect())
}

#[test]
fn criterion_06_optimizer_oracles() {
    criterion(6, "optimizer oracles", secs(10), || {
        let (xs, ys, sol) = linear_problem(606, 50, 4);
        let mut cfg = TrainConfig::new(TrainMethod::Lm, 1);
        cfg.max_epochs = 50;
        let (m, report) = train_lm(LinearModel::zeros(4), (&xs, &ys), (&xs, &ys), &cfg).map_err(|e| e.to_string())?;
        let lm_err = m
            .params()
            .iter()
            .zip(&sol)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        ensure(lm_err <= 1e-8 && report.epochs() <= 50, || {
            format!("LM error {lm_err:e} after {} iterations", report.epochs())
        })?;

        let (xs, ys, sol) = linear_problem(607, 80, 5);
        let mut cfg = TrainConfig::new(TrainMethod::Scg, 1);
        cfg.patience = cfg.max_epochs;
        let (m, _) = train_scg(LinearModel::zeros(5), (&xs, &ys), (&xs, &ys), &cfg).map_err(|e| e.to_string())?;
        let scg_err = m
            .params()
            .iter()
            .zip(&sol)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        ensure(scg_err <= 1e-6, || format!("SCG error {scg_err:e}"))?;

        let curve = [5.0, 4.0, 3.0, 3.5, 3.2, 4.0, 2.5, 2.6, 2.7, 2.8, 2.9, 3.0, 3.1, 3.2];
        let mut es = EarlyStopping::new(6);
        let stop = curve.iter().enumerate().position(|(e, v)| {
            es.observe(e, *v);
            es.should_stop()
        });
        ensure(stop == Some(12) && es.best_epoch() == 6, || {
            format!("crafted curve stopped at {stop:?}, best {}", es.best_epoch())
        })?;

        let xs: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 / 20.0 - 1.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x[0] + 1.0).collect();
        let vy: Vec<f64> = xs.iter().map(|x| x[0] + 1.0).collect();
        for method in TrainMethod::ALL {
            let init = init_weights(1, 5).unwrap();
            let (m, report) =
                train(init, (&xs, &ys), (&xs, &vy), &TrainConfig::new(method, 5)).map_err(|e| e.to_string())?;
            let best = report.val_cost.iter().cloned().fold(f64::INFINITY, f64::min);
            ensure(cost(&m, &xs, &vy).unwrap() == best, || {
                format!("{method}: best weights not restored")
            })?;
            ensure(
                report.stop_reason == StopReason::ValidationPatience && report.epochs() == report.best_epoch + 6,
                || format!("{method}: stopped at {} (best {})", report.epochs(), report.best_epoch),
            )?;
        }
        Ok(format!(
            "LM err {lm_err:.1e} in {} iterations, SCG err {scg_err:.1e}, patience rule holds",
            report.epochs()
        ))
    });
}

#[test]
fn criterion_07_interpolation() {
    criterion(7, "spline interpolation", secs(1), || {
        let f = |t: f64| t * t * t - 2.0 * t + 1.0;
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|&t| f(t)).collect();
        let s = CubicSpline::not_a_knot(&xs, &ys).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(707);
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let t = rng.random_range(0.0..9.0);
            worst = worst.max((s.eval(t).unwrap() - f(t)).abs());
        }
        ensure(worst <= 1e-9, || format!("max error {worst:e}"))?;
        ensure(xs.iter().zip(&ys).all(|(&t, &y)| s.eval(t).unwrap() == y), || {
            "knot values not exact".into()
        })?;
        ensure(s.eval(-0.01).is_err() && s.eval(9.01).is_err(), || {
            "out-of-range query accepted".into()
        })?;
        Ok(format!(
            "max error {worst:.1e} at 100 queries; knots exact; out-of-range rejected"
        ))
    });
}

#[test]
fn criterion_08_split_counts() {
    criterion(8, "split counts", secs(1), || {
        let s = split(9956, &SplitSpec::standard(1)).map_err(|e| e.to_string())?;
        let counts = (s.train.len(), s.validation.len(), s.test.len());
        ensure(counts == (6970, 1493, 1493), || format!("C=9956 gives {counts:?}"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(808);
        for _ in 0..100 {
            let c = rng.random_range(1..20000usize);
            let s = split(c, &SplitSpec::standard(rng.random())).map_err(|e| e.to_string())?;
            let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
            all.sort_unstable();
            ensure(all == (0..c).collect::<Vec<_>>(), || format!("C={c}: not a partition"))?;
            let share = (c * 15) / 100;
            ensure(s.validation.len() == share && s.test.len() == share, || {
                format!("C={c}: wrong shares")
            })?;
        }
        Ok("9956 -> 6970/1493/1493; 100 random sizes partition exactly".into())
    });
}

#[test]
fn criterion_09_metric_oracles() {
    criterion(9, "metric oracles", secs(1), || {
        let m = mse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).map_err(|e| e.to_string())?;
        ensure((m - 1.0 / 3.0).abs() < 1e-15, || format!("mse = {m}"))?;
        let r = pearson_r(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).map_err(|e| e.to_string())?;
        ensure((r - 0.8).abs() < 1e-15, || format!("r = {r}"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(909);
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let n = rng.random_range(3..50);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let (a, b) = (rng.random_range(0.1..10.0), rng.random_range(-10.0..10.0));
            let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            worst = worst.max((pearson_r(&ax, &y).unwrap() - pearson_r(&x, &y).unwrap()).abs());
        }
        ensure(worst <= 1e-12, || format!("affine invariance error {worst:e}"))?;
        Ok(format!("mse 1/3, r 0.8, affine invariance err {worst:.1e}"))
    });
}

fn row<'a>(rows: &'a [TableRow], method: &str) -> Result<&'a TableRow, String> {
    rows.iter()
        .find(|r| r.method == method)
        .ok_or_else(|| format!("no row for {method}"))
}

#[test]
fn criterion_10_synthetic_end_to_end() {
    criterion(10, "synthetic end-to-end", secs(300), || {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path();
        write(
            &p.join("run.toml"),
            "seed = 42\nruns = 3\ntrainer = \"scg\"\n\
             methods = [\"sumsim:R-G-B\", \"naive-bayes:R-G-B\", \"mvn:R-G-B\", \"gmm/G5:R-G-B\"]\n\
             [synth]\nimage_size = 128\nduration_s = 1000\nframe_rate_hz = 2\nreference_frames = 22\n",
        );
        for cmd in ["synth", "sync", "fit-model", "evaluate"] {
            let out = run(p, &["--config", "run.toml", cmd]);
            ensure(out.status.success(), || format!("{cmd}: {}", stderr(&out)))?;
        }
        let manifest = std::fs::read_to_string(p.join("session/manifest.csv")).unwrap();
        ensure(manifest.lines().count() == 2001, || {
            "manifest does not hold 2000 frames".into()
        })?;
        let rows = parse_report_table(&std::fs::read_to_string(p.join("results/report.tsv")).unwrap())
            .map_err(|e| e.to_string())?;
        let sumsim = row(&rows, "sumsim:R-G-B")?;
        ensure(sumsim.feature_len == 768 && sumsim.failed == 0, || {
            "sumsim row malformed".into()
        })?;
        ensure(sumsim.test.r >= 0.95 && sumsim.test.mse <= 0.05, || {
            format!("SumSim test R {:.4}, MSE {:.5}", sumsim.test.r, sumsim.test.mse)
        })?;
        let mut detail = format!("SumSim-RGB+SCG test R {:.4} MSE {:.5}", sumsim.test.r, sumsim.test.mse);
        for m in ["naive-bayes:R-G-B", "mvn:R-G-B", "gmm/G5:R-G-B"] {
            let r = row(&rows, m)?;
            ensure(r.test.r >= 0.80, || format!("{m} test R {:.4}", r.test.r))?;
            detail.push_str(&format!("; {m} R {:.4}", r.test.r));
        }
        Ok(detail)
    });
}

#[test]
fn criterion_11_prediction_latency() {
    criterion(11, "prediction latency", secs(30), || {
        let dir = prepared("seed = 11\n[synth]\nimage_size = 64\nduration_s = 100\n");
        let p = dir.path();
        ok(p, &["--config", "run.toml", "train"]);
        let cfg = RigConfig {
            image_size: 1088,
            ..RigConfig::default()
        };
        render_frame(&cfg, 1.9, 1)
            .unwrap()
            .save_png(&p.join("big.png"))
            .unwrap();
        let start = Instant::now();
        let stdout = ok(p, &["--config", "run.toml", "--out", "big.tsv", "predict", "big.png"]);
        let wall = start.elapsed();
        let lines = std::fs::read_to_string(p.join("big.tsv")).unwrap();
        ensure(lines.lines().count() == 2, || "expected one prediction".into())?;
        ensure(wall < secs(1), || {
            format!("1088x1088 frame took {wall:.2?} including process start")
        })?;
        Ok(format!(
            "whole command {wall:.2?}; {}",
            stdout.trim().rsplit("; ").next().unwrap_or("")
        ))
    });
}

#[test]
fn criterion_12_determinism() {
    criterion(12, "determinism", secs(120), || {
        let config = "seed = 12\nruns = 2\ntrainers = [\"scg\", \"lm\"]\n\
                      methods = [\"sumsim:R-G-B\", \"gmm:R-G\", \"pca2\"]\n\
                      [synth]\nimage_size = 64\nduration_s = 100\n";
        let pipeline = |p: &Path| {
            write(&p.join("run.toml"), config);
            for cmd in ["synth", "sync", "fit-model", "extract", "train", "evaluate"] {
                ok(p, &["--config", "run.toml", cmd]);
            }
            ok(
                p,
                &[
                    "--config", "run.toml", "--method", "pca2", "--out", "pca2.tsv", "extract",
                ],
            );
            ok(
                p,
                &[
                    "--config",
                    "run.toml",
                    "--method",
                    "gmm",
                    "--channels",
                    "G-B",
                    "--out",
                    "gmm/f.tsv",
                    "extract",
                ],
            );
            ok(
                p,
                &["--config", "run.toml", "--trainer", "lm", "--out", "lm.txt", "train"],
            );
            ok(
                p,
                &["--config", "run.toml", "predict", "--frames", "session/frame_index.csv"],
            );
            tree(p)
        };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let (ta, tb) = (pipeline(a.path()), pipeline(b.path()));
        let differing: Vec<_> = ta
            .iter()
            .filter(|(k, v)| tb.get(*k) != Some(v))
            .map(|(k, _)| k.clone())
            .collect();
        ensure(ta.len() == tb.len() && differing.is_empty(), || {
            format!("differing outputs: {differing:?}")
        })?;
        Ok(format!(
            "{} files byte-identical across two full pipeline runs",
            ta.len()
        ))
    });
}
