//! Acceptance gate for the whole pipeline. Each test covers one numbered
//! criterion and prints a `criterion N: PASS` line when its checks hold,
//! so a full run reports one pass/fail line per criterion.
//!
//!  1. gradient integrity (every layer kind + tiny end-to-end models)
//!  2. kernel/metric equivalence against independent naive oracles
//!  3. five-class synthetic joint experiment reaches >= 95% test accuracy
//!  4. CNN-only trails CNN+LSTM by >= 5 points on a purely temporal task
//!  5. recall >= precision - 0.02 on the imbalanced binary task
//!  6. SMOTE output is uniform and every synthetic row is a verified
//!     convex combination of a sample and one of its k nearest neighbors
//!  7. Shapley efficiency/dummy/symmetry axioms and sampling convergence
//!  8. Grad-CAM mass localizes to the planted quadrant
//!  9. training is byte-for-byte deterministic under a fixed seed
//! 10. train_loop overfits one repeated mini-batch on both branches

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;

use gait_core::datapipe::io::load_dataset;
use gait_core::datapipe::{pad_or_crop, smote_oversample, subject_split, Modality};
use gait_core::explain::{grad_cam, shap_temporal, Baseline, SeqScorer, ShapMode};
use gait_core::layers::*;
use gait_core::models::{build_model, GavdConfig, Head, ModelConfig, ModelGraph, OumvlpConfig};
use gait_core::rng::{rng_from, subseed};
use gait_core::tensor::kernels::{
    conv1d_forward, conv3d_forward, maxpool1d, maxpool2d_spatial, Activation,
};
use gait_core::training::{compute_metrics, train_loop, Dataset, Metrics, TrainConfig};
use gait_core::Tensor;
use rand::Rng as _;

// ---------------------------------------------------------------- helpers

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_gait")
}

fn run_ok(args: &[&str]) -> String {
    let out = Command::new(bin()).args(args).output().expect("spawn gait");
    assert!(
        out.status.success(),
        "gait {:?} exited with {:?}\nstdout:\n{}\nstderr:\n{}",
        args,
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_cfg(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

/// Read `key = value` out of a metrics/kv file.
fn kv_metric(path: &Path, key: &str) -> f64 {
    let text = std::fs::read_to_string(path).unwrap();
    let prefix = format!("{} = ", key);
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix(&prefix) {
            return rest.trim().parse().unwrap();
        }
    }
    panic!("key '{}' not found in {}", key, path.display());
}

fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = rng_from(seed);
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

const DELTA: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

// ------------------------------------------------- criterion 1: gradients

/// Scalar probe: fixed weighted sum of the outputs, so d(loss)/d(out) is
/// just the weight tensor.
fn layer_probe(layer: &mut dyn Layer, input: &Tensor, w: &Tensor, mode: Mode) -> f64 {
    let y = layer.forward(input, mode).unwrap();
    y.iter().zip(w.iter()).map(|(&a, &b)| a * b).sum()
}

fn check_layer_gradients(layer: &mut dyn Layer, input: &Tensor, mode: Mode, label: &str) {
    let out_shape = layer.out_shape(input.shape()).unwrap();
    let w = random_tensor(&out_shape, 4242);

    let _ = layer.forward(input, mode).unwrap();
    let dx = layer.backward(&w).unwrap();
    let param_grads: Vec<Tensor> = layer.params().iter().map(|p| p.grad.clone()).collect();

    let mut x = input.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + DELTA;
        let lp = layer_probe(layer, &x, &w, mode);
        x.data_mut()[i] = orig - DELTA;
        let lm = layer_probe(layer, &x, &w, mode);
        x.data_mut()[i] = orig;
        let fd = (lp - lm) / (2.0 * DELTA);
        assert!(
            rel_err(dx.data()[i], fd) < GRAD_TOL,
            "{}: input grad [{}] analytic {} vs fd {}",
            label,
            i,
            dx.data()[i],
            fd
        );
    }
    for pi in 0..param_grads.len() {
        for i in 0..param_grads[pi].len() {
            let orig = layer.params()[pi].value.data()[i];
            layer.params_mut()[pi].value.data_mut()[i] = orig + DELTA;
            let lp = layer_probe(layer, input, &w, mode);
            layer.params_mut()[pi].value.data_mut()[i] = orig - DELTA;
            let lm = layer_probe(layer, input, &w, mode);
            layer.params_mut()[pi].value.data_mut()[i] = orig;
            let fd = (lp - lm) / (2.0 * DELTA);
            let a = param_grads[pi].data()[i];
            assert!(
                rel_err(a, fd) < GRAD_TOL,
                "{}: param {} grad [{}] analytic {} vs fd {}",
                label,
                pi,
                i,
                a,
                fd
            );
        }
    }
}

fn model_probe(model: &mut ModelGraph, input: &Tensor, w: &Tensor) -> f64 {
    let y = model.forward(input, Mode::Train).unwrap();
    y.iter().zip(w.iter()).map(|(&a, &b)| a * b).sum()
}

/// End-to-end: every parameter and every input element of a whole branch
/// model against central differences.
fn check_model_gradients(mut model: ModelGraph, input: &Tensor, label: &str) {
    let out = model.forward(input, Mode::Train).unwrap();
    let w = random_tensor(out.shape(), 999);
    model.zero_grad();
    let dx = model.backward(&w).unwrap();
    let analytic: Vec<Tensor> = model.params_mut().iter().map(|p| p.grad.clone()).collect();

    let n_params = model.params_mut().len();
    for pi in 0..n_params {
        for i in 0..analytic[pi].len() {
            let orig = model.params_mut()[pi].value.data()[i];
            model.params_mut()[pi].value.data_mut()[i] = orig + DELTA;
            let lp = model_probe(&mut model, input, &w);
            model.params_mut()[pi].value.data_mut()[i] = orig - DELTA;
            let lm = model_probe(&mut model, input, &w);
            model.params_mut()[pi].value.data_mut()[i] = orig;
            let fd = (lp - lm) / (2.0 * DELTA);
            let a = analytic[pi].data()[i];
            assert!(
                rel_err(a, fd) < GRAD_TOL,
                "{}: param {} [{}] analytic {} vs fd {}",
                label,
                pi,
                i,
                a,
                fd
            );
        }
    }
    let mut x = input.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + DELTA;
        let lp = model_probe(&mut model, &x, &w);
        x.data_mut()[i] = orig - DELTA;
        let lm = model_probe(&mut model, &x, &w);
        x.data_mut()[i] = orig;
        let fd = (lp - lm) / (2.0 * DELTA);
        assert!(
            rel_err(dx.data()[i], fd) < GRAD_TOL,
            "{}: input [{}] analytic {} vs fd {}",
            label,
            i,
            dx.data()[i],
            fd
        );
    }
}

#[test]
fn criterion_01_gradient_integrity() {
    let mut rng = rng_from(11);

    let mut conv1 = Conv1d::new(2, 3, 3, 1, 1, &mut rng);
    check_layer_gradients(&mut conv1, &random_tensor(&[2, 2, 6], 1), Mode::Train, "conv1d");
    let mut conv3 = Conv3d::new(2, 2, [2, 2, 2], [1, 1, 1], [1, 0, 1], &mut rng);
    check_layer_gradients(&mut conv3, &random_tensor(&[2, 2, 3, 3, 3], 2), Mode::Train, "conv3d");
    let mut dense = Dense::new(4, 3, &mut rng);
    check_layer_gradients(&mut dense, &random_tensor(&[3, 4], 3), Mode::Train, "dense");
    let mut bn = BatchNorm::new(3);
    check_layer_gradients(&mut bn, &random_tensor(&[4, 3, 2], 4), Mode::Train, "batchnorm train");
    // fresh instance: gradients accumulate across backward calls, so the
    // eval-mode check must not inherit the train-mode check's grads
    let mut bn_eval = BatchNorm::new(3);
    bn_eval.forward(&random_tensor(&[4, 3, 2], 5), Mode::Train).unwrap();
    check_layer_gradients(&mut bn_eval, &random_tensor(&[2, 3, 2], 6), Mode::Eval, "batchnorm eval");
    let mut mp1 = MaxPool1d::new(2, 2);
    check_layer_gradients(&mut mp1, &random_tensor(&[2, 2, 6], 7), Mode::Train, "maxpool1d");
    let mut mp2 = MaxPool2dSpatial::new(2, 2);
    check_layer_gradients(&mut mp2, &random_tensor(&[2, 2, 2, 4, 4], 8), Mode::Train, "maxpool2d");
    let mut lstm = LstmLayer::new(3, 2, Direction::Forward, &mut rng);
    check_layer_gradients(&mut lstm, &random_tensor(&[2, 4, 3], 9), Mode::Train, "lstm");
    let mut bilstm = LstmLayer::new(2, 2, Direction::Bidirectional, &mut rng);
    check_layer_gradients(&mut bilstm, &random_tensor(&[2, 5, 2], 10), Mode::Train, "bilstm");
    for (kind, label) in [
        (Activation::Relu, "relu"),
        (Activation::Sigmoid, "sigmoid"),
        (Activation::Tanh, "tanh"),
        (Activation::Softmax, "softmax"),
    ] {
        let mut act = ActivationLayer::new(kind);
        check_layer_gradients(&mut act, &random_tensor(&[3, 4], 11), Mode::Train, label);
    }
    // stochastic layer: replay the same mask by reseeding before every
    // forward, so finite differences see a fixed function
    struct Replayed(Dropout);
    impl Layer for Replayed {
        fn kind(&self) -> &'static str {
            "dropout"
        }
        fn out_shape(&self, s: &[usize]) -> gait_core::Result<Vec<usize>> {
            self.0.out_shape(s)
        }
        fn forward(&mut self, input: &Tensor, mode: Mode) -> gait_core::Result<Tensor> {
            self.0.reseed(321);
            self.0.forward(input, mode)
        }
        fn backward(&mut self, upstream: &Tensor) -> gait_core::Result<Tensor> {
            self.0.backward(upstream)
        }
    }
    let mut drop = Replayed(Dropout::new(0.5, 321).unwrap());
    check_layer_gradients(&mut drop, &random_tensor(&[40], 12), Mode::Train, "dropout");
    let mut t12 = Transpose12::new();
    check_layer_gradients(&mut t12, &random_tensor(&[2, 3, 4], 13), Mode::Train, "transpose12");
    let mut tl = TakeLast::new();
    check_layer_gradients(&mut tl, &random_tensor(&[2, 3, 4], 14), Mode::Train, "take_last");
    let mut mot = MeanOverTime::new();
    check_layer_gradients(&mut mot, &random_tensor(&[2, 3, 4], 15), Mode::Train, "mean_over_time");
    let mut ec = ExpandChannel::new();
    check_layer_gradients(&mut ec, &random_tensor(&[2, 2, 3, 3], 16), Mode::Train, "expand_channel");
    let mut smts = SpatialMeanToSeq::new();
    check_layer_gradients(&mut smts, &random_tensor(&[2, 2, 3, 2, 2], 17), Mode::Train, "spatial_mean");

    // tiny end-to-end models, dropout disabled so the graph is a fixed
    // deterministic function of inputs and parameters
    let gavd = build_model(&ModelConfig::Gavd(GavdConfig {
        seq_len: 6,
        feat_dim: 3,
        conv_channels: vec![2],
        kernel: 3,
        stride: 1,
        padding: 1,
        pool_window: 2,
        pool_stride: 2,
        lstm_hidden: vec![3],
        bidirectional: false,
        use_lstm: true,
        dense_units: 4,
        dropout: 0.0,
        head: Head::SigmoidBinary,
        seed: 21,
    }))
    .unwrap();
    check_model_gradients(gavd, &random_tensor(&[3, 6, 3], 100), "gavd_1d end-to-end");

    let oumvlp = build_model(&ModelConfig::Oumvlp(OumvlpConfig {
        frames: 4,
        dim1: 6,
        dim2: 6,
        conv_channels: vec![2],
        kernel: 3,
        pool_window: 2,
        pool_stride: 2,
        lstm_hidden: vec![2],
        bidirectional: true,
        use_lstm: true,
        dense_units: 3,
        dropout: 0.0,
        head: Head::SigmoidBinary,
        seed: 22,
    }))
    .unwrap();
    check_model_gradients(oumvlp, &random_tensor(&[3, 4, 6, 6], 101), "oumvlp_3d end-to-end");

    println!("criterion 1: PASS (gradient integrity, all layer kinds + both branches end-to-end)");
}

// -------------------------------------------- criterion 2: naive oracles

/// Independent conv1d on an explicitly zero-padded copy; same (ci, k)
/// accumulation order as the production kernel, so equality is exact.
fn oracle_conv1d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, padding: usize) -> Tensor {
    let (c_in, len) = (x.shape()[0], x.shape()[1]);
    let (c_out, _, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let pl = len + 2 * padding;
    let mut padded = vec![0.0; c_in * pl];
    for ci in 0..c_in {
        for l in 0..len {
            padded[ci * pl + padding + l] = x.at(&[ci, l]).unwrap();
        }
    }
    let l_out = (pl - k) / stride + 1;
    let mut out = Tensor::zeros(&[c_out, l_out]);
    for co in 0..c_out {
        for lo in 0..l_out {
            let mut acc = 0.0;
            for ci in 0..c_in {
                for kk in 0..k {
                    acc += padded[ci * pl + lo * stride + kk] * w.at(&[co, ci, kk]).unwrap();
                }
            }
            out.data_mut()[co * l_out + lo] = acc + b.data()[co];
        }
    }
    out
}

fn oracle_conv3d(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    strides: [usize; 3],
    paddings: [usize; 3],
) -> Tensor {
    let (c_in, d, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let c_out = w.shape()[0];
    let (kd, kh, kw) = (w.shape()[2], w.shape()[3], w.shape()[4]);
    let (pd, ph, pw) = (d + 2 * paddings[0], h + 2 * paddings[1], wd + 2 * paddings[2]);
    let mut padded = vec![0.0; c_in * pd * ph * pw];
    for ci in 0..c_in {
        for zd in 0..d {
            for zh in 0..h {
                for zw in 0..wd {
                    padded[((ci * pd + zd + paddings[0]) * ph + zh + paddings[1]) * pw
                        + zw
                        + paddings[2]] = x.at(&[ci, zd, zh, zw]).unwrap();
                }
            }
        }
    }
    let d_out = (pd - kd) / strides[0] + 1;
    let h_out = (ph - kh) / strides[1] + 1;
    let w_out = (pw - kw) / strides[2] + 1;
    let mut out = Tensor::zeros(&[c_out, d_out, h_out, w_out]);
    for co in 0..c_out {
        for od in 0..d_out {
            for oh in 0..h_out {
                for ow in 0..w_out {
                    let mut acc = 0.0;
                    for ci in 0..c_in {
                        for zd in 0..kd {
                            for zh in 0..kh {
                                for zw in 0..kw {
                                    acc += padded[((ci * pd + od * strides[0] + zd) * ph
                                        + oh * strides[1]
                                        + zh)
                                        * pw
                                        + ow * strides[2]
                                        + zw]
                                        * w.at(&[co, ci, zd, zh, zw]).unwrap();
                                }
                            }
                        }
                    }
                    out.data_mut()[((co * d_out + od) * h_out + oh) * w_out + ow] =
                        acc + b.data()[co];
                }
            }
        }
    }
    out
}

/// Metrics recomputed without a confusion matrix: direct tp/fp/fn counts
/// per class from the prediction stream.
fn oracle_metrics(preds: &[usize], labels: &[usize], k: usize) -> (f64, f64, f64, f64) {
    let n = preds.len() as f64;
    let correct = preds.iter().zip(labels).filter(|(p, y)| p == y).count() as f64;
    let prf = |c: usize| {
        let tp = preds.iter().zip(labels).filter(|&(&p, &y)| p == c && y == c).count() as f64;
        let fp = preds.iter().zip(labels).filter(|&(&p, &y)| p == c && y != c).count() as f64;
        let fn_ = preds.iter().zip(labels).filter(|&(&p, &y)| p != c && y == c).count() as f64;
        let pr = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let rc = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let f1 = if pr + rc > 0.0 { 2.0 * pr * rc / (pr + rc) } else { 0.0 };
        (pr, rc, f1)
    };
    let (pr, rc, f1) = if k == 2 {
        prf(1)
    } else {
        let mut s = (0.0, 0.0, 0.0);
        for c in 0..k {
            let (p, r, f) = prf(c);
            s = (s.0 + p, s.1 + r, s.2 + f);
        }
        (s.0 / k as f64, s.1 / k as f64, s.2 / k as f64)
    };
    (correct / n, pr, rc, f1)
}

#[test]
fn criterion_02_oracle_equivalence() {
    let mut rng = rng_from(202);

    for _ in 0..100 {
        let c_in = rng.gen_range(1..=3);
        let c_out = rng.gen_range(1..=3);
        let k = rng.gen_range(1..=3);
        let len = rng.gen_range(k..=8);
        let stride = rng.gen_range(1..=2);
        let padding = rng.gen_range(0..=1);
        let x = random_tensor(&[c_in, len], rng.gen());
        let w = random_tensor(&[c_out, c_in, k], rng.gen());
        let b = random_tensor(&[c_out], rng.gen());
        let got = conv1d_forward(&x, &w, &b, stride, padding).unwrap();
        let want = oracle_conv1d(&x, &w, &b, stride, padding);
        assert_eq!(got, want, "conv1d mismatch");
    }

    for _ in 0..100 {
        let c_in = rng.gen_range(1..=2);
        let c_out = rng.gen_range(1..=2);
        let kd = rng.gen_range(1..=2);
        let kh = rng.gen_range(1..=3);
        let kw = rng.gen_range(1..=3);
        let d = rng.gen_range(kd..=4);
        let h = rng.gen_range(kh..=5);
        let wd = rng.gen_range(kw..=5);
        let strides = [rng.gen_range(1..=2), rng.gen_range(1..=2), rng.gen_range(1..=2)];
        let paddings = [rng.gen_range(0..=1), rng.gen_range(0..=1), rng.gen_range(0..=1)];
        let x = random_tensor(&[c_in, d, h, wd], rng.gen());
        let w = random_tensor(&[c_out, c_in, kd, kh, kw], rng.gen());
        let b = random_tensor(&[c_out], rng.gen());
        let got = conv3d_forward(&x, &w, &b, strides, paddings).unwrap();
        let want = oracle_conv3d(&x, &w, &b, strides, paddings);
        assert_eq!(got, want, "conv3d mismatch");
    }

    for _ in 0..100 {
        let c = rng.gen_range(1..=3);
        let window = rng.gen_range(1..=3);
        let len = rng.gen_range(window..=9);
        let stride = rng.gen_range(1..=2);
        let x = random_tensor(&[c, len], rng.gen());
        let (got, arg) = maxpool1d(&x, window, stride).unwrap();
        let l_out = (len - window) / stride + 1;
        for ci in 0..c {
            for lo in 0..l_out {
                // naive window scan with ties to the lowest flat index
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for kk in 0..window {
                    let idx = ci * len + lo * stride + kk;
                    if x.data()[idx] > best {
                        best = x.data()[idx];
                        best_idx = idx;
                    }
                }
                assert_eq!(got.at(&[ci, lo]).unwrap(), best, "maxpool1d value");
                assert_eq!(arg[ci * l_out + lo], best_idx, "maxpool1d argmax");
            }
        }
    }

    for _ in 0..100 {
        let c = rng.gen_range(1..=2);
        let d = rng.gen_range(1..=3);
        let window = rng.gen_range(1..=2);
        let h = rng.gen_range(window..=5);
        let wd = rng.gen_range(window..=5);
        let stride = rng.gen_range(1..=2);
        let x = random_tensor(&[c, d, h, wd], rng.gen());
        let (got, arg) = maxpool2d_spatial(&x, window, stride).unwrap();
        let h_out = (h - window) / stride + 1;
        let w_out = (wd - window) / stride + 1;
        for ci in 0..c {
            for di in 0..d {
                for oh in 0..h_out {
                    for ow in 0..w_out {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0;
                        for zh in 0..window {
                            for zw in 0..window {
                                let idx = ((ci * d + di) * h + oh * stride + zh) * wd
                                    + ow * stride
                                    + zw;
                                if x.data()[idx] > best {
                                    best = x.data()[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        let o_idx = ((ci * d + di) * h_out + oh) * w_out + ow;
                        assert_eq!(got.data()[o_idx], best, "maxpool2d value");
                        assert_eq!(arg[o_idx], best_idx, "maxpool2d argmax");
                    }
                }
            }
        }
    }

    for _ in 0..100 {
        let k = rng.gen_range(2..=4);
        let n = rng.gen_range(1..=30);
        let preds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let got: Metrics = compute_metrics(&preds, &labels, k).unwrap();
        let (acc, pr, rc, f1) = oracle_metrics(&preds, &labels, k);
        assert_eq!(got.accuracy, acc, "accuracy");
        assert_eq!(got.precision, pr, "precision");
        assert_eq!(got.recall, rc, "recall");
        assert_eq!(got.f1, f1, "f1");
        for c in 0..k {
            for p in 0..k {
                let want = preds.iter().zip(&labels).filter(|&(&pp, &yy)| yy == c && pp == p).count();
                assert_eq!(got.confusion[c][p], want, "confusion[{}][{}]", c, p);
            }
        }
    }

    println!("criterion 2: PASS (conv1d/conv3d/maxpool/metrics exactly match naive oracles, 100 instances each)");
}

// ------------------------- criterion 3: five-class synthetic experiment

#[test]
fn criterion_03_synthetic_five_class_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let synth_cfg = write_cfg(dir.path(), "synth.cfg", "subjects = 20\nsequences_per_subject = 20\n");
    let data = dir.path().join("data");
    run_ok(&["synth", "--config", synth_cfg.to_str().unwrap(), "--out", data.to_str().unwrap(), "--seed", "42"]);

    let train_cfg = write_cfg(
        dir.path(),
        "train.cfg",
        "conv_channels = 32,64,128\nlstm_hidden = 64,32\ndense_units = 64\ndropout = 0.3\n\
         learning_rate = 0.001\nbatch_size = 32\nmax_epochs = 30\npatience = 30\n",
    );
    let run = dir.path().join("run");
    run_ok(&[
        "train",
        "--config",
        train_cfg.to_str().unwrap(),
        "--manifest",
        data.join("manifest.csv").to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--seed",
        "7",
    ]);
    let acc = kv_metric(&run.join("metrics.txt"), "accuracy");
    assert!(acc >= 0.95, "five-class test accuracy {} < 0.95", acc);
    println!("criterion 3: PASS (five-class synthetic test accuracy {:.4} >= 0.95 within 30 epochs)", acc);
}

// --------------------------------- criterion 4: LSTM ablation direction

#[test]
fn criterion_04_ablation_direction() {
    let dir = tempfile::tempdir().unwrap();
    let synth_cfg = write_cfg(
        dir.path(),
        "synth.cfg",
        "mode = temporal-lag\nsubjects = 10\nsequences_per_subject = 20\nseq_len = 50\n",
    );
    let data = dir.path().join("data");
    run_ok(&["synth", "--config", synth_cfg.to_str().unwrap(), "--out", data.to_str().unwrap(), "--seed", "42"]);

    // the class signal is the lag between two events; per-frame marginals
    // are identical, so a model that pools time away has nothing to learn
    let base = "conv_channels = 16\npool_window = 1\npool_stride = 1\nlstm_hidden = 32\n\
                dense_units = 32\ndropout = 0.3\nlearning_rate = 0.001\nbatch_size = 32\n\
                max_epochs = 30\npatience = 30\n";
    let mut accs = Vec::new();
    for use_lstm in ["true", "false"] {
        let cfg = write_cfg(
            dir.path(),
            &format!("train_{}.cfg", use_lstm),
            &format!("{}use_lstm = {}\n", base, use_lstm),
        );
        let run = dir.path().join(format!("run_{}", use_lstm));
        run_ok(&[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--manifest",
            data.join("manifest.csv").to_str().unwrap(),
            "--out",
            run.to_str().unwrap(),
            "--seed",
            "7",
        ]);
        accs.push(kv_metric(&run.join("metrics.txt"), "accuracy"));
    }
    let (with_lstm, without_lstm) = (accs[0], accs[1]);
    assert!(
        with_lstm - without_lstm >= 0.05,
        "CNN+LSTM {} vs CNN-only {}: gap below 5 points",
        with_lstm,
        without_lstm
    );
    println!(
        "criterion 4: PASS (temporal task: CNN+LSTM {:.4} vs CNN-only {:.4}, gap >= 0.05)",
        with_lstm, without_lstm
    );
}

// --------------------------------- criterion 5: recall-priority behavior

#[test]
fn criterion_05_recall_priority() {
    let dir = tempfile::tempdir().unwrap();
    let synth_cfg = write_cfg(
        dir.path(),
        "synth.cfg",
        "classes = normal,normal,normal,lurch\nsubjects = 12\nsequences_per_subject = 20\n",
    );
    let data = dir.path().join("data");
    run_ok(&["synth", "--config", synth_cfg.to_str().unwrap(), "--out", data.to_str().unwrap(), "--seed", "42"]);

    let train_cfg = write_cfg(
        dir.path(),
        "train.cfg",
        "conv_channels = 16,32\nlstm_hidden = 32\ndense_units = 32\ndropout = 0.3\n\
         learning_rate = 0.001\nbatch_size = 32\nmax_epochs = 20\npatience = 20\n",
    );
    let run = dir.path().join("run");
    run_ok(&[
        "train",
        "--config",
        train_cfg.to_str().unwrap(),
        "--manifest",
        data.join("manifest.csv").to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--seed",
        "7",
    ]);
    // last history row: epoch,train_loss,val_loss,val_acc,val_precision,val_recall,val_f1
    let history = std::fs::read_to_string(run.join("history.csv")).unwrap();
    let last = history.lines().last().unwrap();
    let cols: Vec<f64> = last.split(',').map(|c| c.parse().unwrap()).collect();
    let (precision, recall) = (cols[4], cols[5]);
    assert!(
        recall >= precision - 0.02,
        "final val recall {} < precision {} - 0.02",
        recall,
        precision
    );
    println!(
        "criterion 5: PASS (imbalanced binary: final val recall {:.4} >= precision {:.4} - 0.02)",
        recall, precision
    );
}

// ------------------------------------------ criterion 6: SMOTE correctness

/// A synthetic row is valid if some original same-class row x and one of
/// its k nearest same-class neighbors nn reproduce it as x + u(nn - x)
/// with a single u in [0, 1] shared by every feature.
fn valid_convex_combination(s: &[f64], class_rows: &[Vec<f64>], k: usize) -> bool {
    let dist2 = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };
    for (xi, x) in class_rows.iter().enumerate() {
        let mut neighbors: Vec<(f64, usize)> = class_rows
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != xi)
            .map(|(j, r)| (dist2(x, r), j))
            .collect();
        neighbors.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        for &(_, j) in neighbors.iter().take(k) {
            let nn = &class_rows[j];
            let mut u: Option<f64> = None;
            let mut consistent = true;
            for f in 0..x.len() {
                let denom = nn[f] - x[f];
                if denom.abs() > 1e-12 {
                    let cand = (s[f] - x[f]) / denom;
                    match u {
                        None => u = Some(cand),
                        Some(v) if (v - cand).abs() < 1e-9 => {}
                        _ => {
                            consistent = false;
                            break;
                        }
                    }
                } else if (s[f] - x[f]).abs() > 1e-9 {
                    consistent = false;
                    break;
                }
            }
            if consistent {
                match u {
                    Some(v) if (-1e-12..=1.0 + 1e-12).contains(&v) => return true,
                    None => return true, // nn == x, synthetic must equal x
                    _ => {}
                }
            }
        }
    }
    false
}

#[test]
fn criterion_06_smote_correctness() {
    let mut rng = rng_from(606);
    for instance in 0..20 {
        let n_classes = rng.gen_range(2..=3);
        let feat = rng.gen_range(3..=6);
        let mut counts: Vec<usize> = (0..n_classes).map(|_| rng.gen_range(2..=16)).collect();
        while counts.iter().sum::<usize>() > 50 {
            let i = rng.gen_range(0..n_classes);
            if counts[i] > 2 {
                counts[i] -= 1;
            }
        }
        if counts.iter().all(|&c| c == counts[0]) {
            counts[0] += 1; // force an imbalance so SMOTE has work to do
        }
        let min_count = *counts.iter().min().unwrap();
        let max_count = *counts.iter().max().unwrap();
        let k = rng.gen_range(1..=min_count - 1).max(1);

        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (c, &count) in counts.iter().enumerate() {
            for _ in 0..count {
                for _ in 0..feat {
                    data.push(c as f64 * 3.0 + rng.gen_range(-1.0..1.0));
                }
                labels.push(c);
            }
        }
        let n = labels.len();
        let x = Tensor::new(vec![n, feat], data).unwrap();
        let (out, out_labels) = smote_oversample(&x, &labels, k, 1000 + instance).unwrap();

        // exactly uniform histogram at the majority count
        let mut hist = vec![0usize; n_classes];
        for &c in &out_labels {
            hist[c] += 1;
        }
        assert!(
            hist.iter().all(|&h| h == max_count),
            "instance {}: histogram {:?} not uniform at {}",
            instance,
            hist,
            max_count
        );
        // originals retained verbatim at the front
        assert_eq!(&out_labels[..n], &labels[..]);
        assert_eq!(&out.data()[..n * feat], x.data());

        for (row, &c) in out_labels.iter().enumerate().skip(n) {
            let s = &out.data()[row * feat..(row + 1) * feat];
            let class_rows: Vec<Vec<f64>> = (0..n)
                .filter(|&i| labels[i] == c)
                .map(|i| x.data()[i * feat..(i + 1) * feat].to_vec())
                .collect();
            assert!(
                valid_convex_combination(s, &class_rows, k),
                "instance {}: synthetic row {} is not x + u(nn - x) for any (x, nn in kNN(x)), u in [0,1]",
                instance,
                row
            );
        }
    }
    println!("criterion 6: PASS (SMOTE uniform histograms and verified convex combinations, 20 instances)");
}

// ------------------------------------------- criterion 7: Shapley axioms

struct Additive {
    w: Vec<f64>,
}
impl SeqScorer for Additive {
    fn score(&mut self, seq: &Tensor) -> gait_core::Result<f64> {
        let t = seq.shape()[0];
        let per = seq.len() / t;
        Ok((0..t)
            .map(|i| {
                let mean: f64 =
                    seq.data()[i * per..(i + 1) * per].iter().sum::<f64>() / per as f64;
                self.w[i] * mean
            })
            .sum())
    }
}

/// f = (sum of every value)^2: genuine pairwise interactions, so sampled
/// permutation estimates have real variance to shrink.
struct SquaredSum;
impl SeqScorer for SquaredSum {
    fn score(&mut self, seq: &Tensor) -> gait_core::Result<f64> {
        let s: f64 = seq.iter().sum();
        Ok(s * s)
    }
}

#[test]
fn criterion_07_shapley_axioms() {
    // efficiency: attributions telescope to f(x) - f(baseline)
    let seq = random_tensor(&[8, 2], 70);
    let attr = shap_temporal(&mut SquaredSum, &seq, Baseline::ZeroFrames, ShapMode::Exact, 1, 0).unwrap();
    assert!(
        attr.efficiency_residual() < 1e-6,
        "efficiency residual {}",
        attr.efficiency_residual()
    );

    // dummy: a frame the scorer never reads gets exactly zero
    let mut add = Additive {
        w: vec![1.0, -2.0, 0.0, 3.0, 0.5, -1.0],
    };
    let seq = random_tensor(&[6, 3], 71);
    let attr = shap_temporal(&mut add, &seq, Baseline::ZeroFrames, ShapMode::Exact, 1, 0).unwrap();
    assert_eq!(attr.phi[2], 0.0, "dummy frame attribution must be exactly 0");

    // symmetry: interchangeable frames get equal attributions
    let mut data = random_tensor(&[5, 2], 72).data().to_vec();
    data[2] = data[6];
    data[3] = data[7]; // frame 1 == frame 3
    let seq = Tensor::new(vec![5, 2], data).unwrap();
    let attr = shap_temporal(&mut SquaredSum, &seq, Baseline::ZeroFrames, ShapMode::Exact, 1, 0).unwrap();
    assert!(
        (attr.phi[1] - attr.phi[3]).abs() < 1e-9,
        "symmetric frames differ: {} vs {}",
        attr.phi[1],
        attr.phi[3]
    );

    // sampling convergence: median absolute error over 10 seeds halves
    // (at least) from 128 to 2048 permutations
    let seq = random_tensor(&[10, 2], 73);
    let exact = shap_temporal(&mut SquaredSum, &seq, Baseline::ZeroFrames, ShapMode::Exact, 1, 0).unwrap();
    let mae = |n_samples: usize, seed: u64| -> f64 {
        let s = shap_temporal(
            &mut SquaredSum,
            &seq,
            Baseline::ZeroFrames,
            ShapMode::Sampled { n_samples },
            1,
            seed,
        )
        .unwrap();
        s.phi
            .iter()
            .zip(&exact.phi)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / s.phi.len() as f64
    };
    let median = |mut v: Vec<f64>| -> f64 {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    let coarse = median((0..10).map(|s| mae(128, s)).collect());
    let fine = median((0..10).map(|s| mae(2048, s)).collect());
    assert!(
        fine < 0.5 * coarse,
        "sampled error did not converge: 2048-perm median {} vs 128-perm median {}",
        fine,
        coarse
    );

    println!("criterion 7: PASS (Shapley efficiency/dummy/symmetry exact; sampling error halves 128 -> 2048 perms)");
}

// ------------------------------------- criterion 8: Grad-CAM localization

#[test]
fn criterion_08_gradcam_localization() {
    let dir = tempfile::tempdir().unwrap();
    // quadrant 1 = top-right; blob covers <= 25% of the frame area
    let synth_cfg = write_cfg(
        dir.path(),
        "synth.cfg",
        "mode = planted-quadrant\nmodality = silhouettes\nquadrant = 1\nheight = 16\nwidth = 16\n\
         seq_len = 20\nsubjects = 10\nsequences_per_subject = 20\n",
    );
    let data = dir.path().join("data");
    run_ok(&["synth", "--config", synth_cfg.to_str().unwrap(), "--out", data.to_str().unwrap(), "--seed", "42"]);

    let train_cfg = write_cfg(
        dir.path(),
        "train.cfg",
        "seq_len = 20\ndim1 = 16\ndim2 = 16\nconv_channels = 8\nlstm_hidden = 16\n\
         dense_units = 16\ndropout = 0.3\nlearning_rate = 0.001\nbatch_size = 32\n\
         max_epochs = 15\npatience = 15\n",
    );
    let run = dir.path().join("run");
    run_ok(&[
        "train",
        "--config",
        train_cfg.to_str().unwrap(),
        "--manifest",
        data.join("manifest.csv").to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--seed",
        "7",
    ]);

    // rebuild the held-out subject split the trainer used (seed 7)
    let (manifest, samples) = load_dataset(&data.join("manifest.csv")).unwrap();
    assert_eq!(manifest.modality, Modality::Silhouettes);
    let outer = subject_split(&manifest, 0.8, subseed(7, "data")).unwrap();
    let labels: BTreeSet<String> = manifest.entries.iter().map(|e| e.label.clone()).collect();
    let classes: Vec<String> = labels.into_iter().collect(); // sorted, no "normal" present

    let mut model = ModelGraph::load_checkpoint(&run.join("checkpoint")).unwrap();
    let conv_layer = model.last_conv_layer().expect("model has a conv layer");

    let mut n_correct = 0usize;
    let mut n_localized = 0usize;
    for (entry, seq) in manifest.entries.iter().zip(&samples) {
        if !outer.test_subjects.contains(&entry.subject_id) {
            continue;
        }
        let label = classes.iter().position(|c| *c == entry.label).unwrap();
        let input = pad_or_crop(seq, 20).frames;
        let mut shape = vec![1];
        shape.extend_from_slice(input.shape());
        let logit = model
            .forward(&input.reshape(&shape).unwrap(), Mode::Eval)
            .unwrap()
            .data()[0];
        let pred = usize::from(logit > 0.0);
        if pred != label {
            continue;
        }
        n_correct += 1;

        let cam = grad_cam(&mut model, &input, 0, conv_layer).unwrap();
        let mut inside = 0.0;
        let mut total = 0.0;
        for map in &cam.maps {
            let (h, w) = (map.shape()[0], map.shape()[1]);
            for i in 0..h {
                for j in 0..w {
                    let v = map.data()[i * w + j];
                    total += v;
                    if i < h / 2 && j >= w / 2 {
                        inside += v;
                    }
                }
            }
        }
        if total > 0.0 && inside / total >= 0.6 {
            n_localized += 1;
        }
    }
    assert!(n_correct > 0, "no correctly classified test samples");
    let frac = n_localized as f64 / n_correct as f64;
    assert!(
        frac >= 0.8,
        ">= 60% heatmap mass in the planted quadrant for only {:.0}% of {} correct test samples",
        frac * 100.0,
        n_correct
    );
    println!(
        "criterion 8: PASS (Grad-CAM mass >= 60% in planted quadrant for {:.0}% of {} correct test samples)",
        frac * 100.0,
        n_correct
    );
}

// --------------------------------- criterion 9: pipeline determinism

#[test]
fn criterion_09_pipeline_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let synth_cfg = write_cfg(dir.path(), "synth.cfg", "subjects = 6\nsequences_per_subject = 4\n");
    let data = dir.path().join("data");
    run_ok(&["synth", "--config", synth_cfg.to_str().unwrap(), "--out", data.to_str().unwrap(), "--seed", "42"]);

    let train_cfg = write_cfg(
        dir.path(),
        "train.cfg",
        "conv_channels = 8\nlstm_hidden = 8\ndense_units = 8\ndropout = 0.3\n\
         learning_rate = 0.001\nbatch_size = 16\nmax_epochs = 3\npatience = 3\n",
    );
    let mut outputs = Vec::new();
    for run_name in ["run_a", "run_b"] {
        let run = dir.path().join(run_name);
        run_ok(&[
            "--threads",
            "1",
            "train",
            "--config",
            train_cfg.to_str().unwrap(),
            "--manifest",
            data.join("manifest.csv").to_str().unwrap(),
            "--out",
            run.to_str().unwrap(),
            "--seed",
            "7",
        ]);
        outputs.push((
            std::fs::read(run.join("history.csv")).unwrap(),
            std::fs::read(run.join("metrics.txt")).unwrap(),
        ));
    }
    assert_eq!(outputs[0].0, outputs[1].0, "history.csv differs between identical runs");
    assert_eq!(outputs[0].1, outputs[1].1, "metrics.txt differs between identical runs");
    println!("criterion 9: PASS (byte-identical history.csv and metrics.txt across two seeded runs)");
}

// ------------------------------------------ criterion 10: overfit sanity

/// Separable two-class data: one repeated mini-batch the optimizer must be
/// able to memorize.
fn toy_batch(shape: &[usize], seed: u64) -> Dataset {
    let mut rng = rng_from(seed);
    let n = shape[0];
    let per: usize = shape[1..].iter().product();
    let mut data = Vec::with_capacity(n * per);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 2;
        let mean = if c == 0 { -1.0 } else { 1.0 };
        for _ in 0..per {
            data.push(mean + rng.gen_range(-0.1..0.1));
        }
        labels.push(c);
    }
    Dataset::new(Tensor::new(shape.to_vec(), data).unwrap(), labels).unwrap()
}

#[test]
fn criterion_10_overfit_sanity() {
    let configs = [
        (
            "gavd_1d",
            ModelConfig::Gavd(GavdConfig {
                seq_len: 8,
                feat_dim: 4,
                conv_channels: vec![4],
                kernel: 3,
                stride: 1,
                padding: 1,
                pool_window: 2,
                pool_stride: 2,
                lstm_hidden: vec![4],
                bidirectional: false,
                use_lstm: true,
                dense_units: 4,
                dropout: 0.0,
                head: Head::SigmoidBinary,
                seed: 31,
            }),
            vec![8usize, 8, 4],
            0.05,
        ),
        (
            "oumvlp_3d",
            ModelConfig::Oumvlp(OumvlpConfig {
                frames: 5,
                dim1: 6,
                dim2: 6,
                conv_channels: vec![3],
                kernel: 3,
                pool_window: 2,
                pool_stride: 2,
                lstm_hidden: vec![3],
                bidirectional: true,
                use_lstm: true,
                dense_units: 4,
                dropout: 0.0,
                head: Head::SigmoidBinary,
                seed: 32,
            }),
            vec![8usize, 5, 6, 6],
            0.02,
        ),
    ];
    for (name, config, shape, learning_rate) in configs {
        let mut model = build_model(&config).unwrap();
        let batch = toy_batch(&shape, 1000);
        // batch_size == dataset size: one optimizer step per epoch, so
        // max_epochs bounds the step count
        let train_cfg = TrainConfig {
            learning_rate,
            batch_size: shape[0],
            max_epochs: 500,
            patience: 500,
            seed: 5,
            class_weighting: false,
        };
        let history = train_loop(&mut model, &batch, &batch, &train_cfg).unwrap();
        let best = history
            .records
            .iter()
            .map(|r| r.train_loss)
            .fold(f64::INFINITY, f64::min);
        assert!(
            best < 0.01,
            "{}: repeated-batch loss only reached {} in {} steps",
            name,
            best,
            history.records.len()
        );
        println!(
            "criterion 10 ({}): reached train loss {:.6} in {} steps",
            name,
            best,
            history.records.len()
        );
    }
    println!("criterion 10: PASS (one-batch overfit below 0.01 within 500 steps on both branches)");
}
