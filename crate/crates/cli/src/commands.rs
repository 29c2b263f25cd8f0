//! Subcommand implementations. Every command resolves its configuration
//! through [`Cfg`], writes a `run.cfg` echo into the output directory, and
//! is a pure function of (input files, resolved config, seed).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use gait_core::datapipe::io::{load_dataset, write_dataset};
use gait_core::datapipe::{
    subject_split, synth_generate, variance_filter, DatasetManifest, Modality, Sequence,
    SynthConfig, SynthMode, GAIT_CLASSES,
};
use gait_core::error::{Error, Result};
use gait_core::explain::{
    grad_cam, shap_temporal, write_heatmap, Baseline, ModelScorer, ShapMode, EXACT_UNIT_LIMIT,
};
use gait_core::layers::Mode;
use gait_core::models::{build_model, Branch, GavdConfig, Head, ModelConfig, ModelGraph, OumvlpConfig};
use gait_core::rng::subseed;
use gait_core::tensor::Tensor;
use gait_core::training::{
    compute_metrics, predict_classes, random_search, train_loop, Dataset, Metrics, TrainConfig,
};

use crate::config::Cfg;
use crate::pipeline::{
    augment_dataset, class_order, filter_by_subjects, smote_dataset, to_dataset, PreprocSpec,
};

pub const CHECKPOINT_DIR: &str = "checkpoint";

fn ensure_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)
        .map_err(|e| Error::config(format!("cannot create output directory {}: {}", out.display(), e)))
}

pub fn cmd_synth(cfg: &Cfg, out: &Path) -> Result<()> {
    ensure_out(out)?;
    let modality = Modality::from_str(&cfg.str_or("modality", "joints"))?;
    let mode_name = cfg.str_or("mode", "gait");
    let seq_len = cfg.parse_or("seq_len", 50usize)?;
    let default_classes = match (mode_name.as_str(), modality) {
        ("gait", Modality::Joints) => GAIT_CLASSES.join(","),
        ("gait", Modality::Silhouettes) => "subject_a,subject_b".to_string(),
        ("temporal-lag", _) => "lag_short,lag_long".to_string(),
        ("planted-quadrant", _) => "pulse_slow,pulse_fast".to_string(),
        _ => return Err(Error::config(format!("unknown synth mode '{}'", mode_name))),
    };
    let classes: Vec<String> = cfg
        .str_or("classes", &default_classes)
        .split(',')
        .map(str::to_string)
        .collect();
    let mode = match mode_name.as_str() {
        "gait" => SynthMode::Gait,
        "temporal-lag" => SynthMode::TemporalLag {
            lag_a: cfg.parse_or("lag_a", 12usize)?,
            lag_b: cfg.parse_or("lag_b", 25usize)?,
        },
        "planted-quadrant" => SynthMode::PlantedQuadrant {
            quadrant: cfg.parse_or("quadrant", 0usize)?,
        },
        _ => unreachable!("mode validated above"),
    };
    let synth = SynthConfig {
        modality,
        classes: classes.iter().map(|c| c.trim().to_string()).collect(),
        subjects: cfg.parse_or("subjects", 10usize)?,
        sequences_per_subject: cfg.parse_or("sequences_per_subject", 20usize)?,
        seq_len,
        height: cfg.parse_or("height", 128usize)?,
        width: cfg.parse_or("width", 88usize)?,
        noise_sigma: cfg.parse_or("noise_sigma", 0.01f64)?,
        mode,
        seed: cfg.parse_or("seed", 0u64)?,
    };
    cfg.reject_unknown()?;
    let samples = synth_generate(&synth)?;
    let manifest_path = write_dataset(out, &samples, modality)?;
    cfg.write_echo(out)?;
    let manifest = gait_core::datapipe::io::read_manifest(&manifest_path)?;
    println!("wrote {} sequences to {}", samples.len(), out.display());
    for (label, count) in manifest.histogram() {
        println!("  {}: {}", label, count);
    }
    Ok(())
}

/// Prepared splits plus the preprocessing spec they were built with.
pub struct Prepared {
    pub spec: PreprocSpec,
    pub branch: Branch,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Shared head of `train` and `search`: load, split by subject, fit the
/// variance mask on the train split, rebalance, augment.
pub fn prepare(cfg: &Cfg) -> Result<Prepared> {
    let manifest_path = PathBuf::from(cfg.require_str("manifest")?);
    let seed = cfg.parse_or("seed", 0u64)?;
    let (manifest, samples) = load_dataset(&manifest_path)?;
    if samples.is_empty() {
        return Err(Error::Data("manifest lists no samples".into()));
    }
    let modality = manifest.modality;
    let default_branch = match modality {
        Modality::Joints => Branch::Gavd1d,
        Modality::Silhouettes => Branch::Oumvlp3d,
    };
    let branch = Branch::from_str(&cfg.str_or("branch", default_branch.as_str()))?;
    match (branch, modality) {
        (Branch::Gavd1d, Modality::Joints) | (Branch::Oumvlp3d, Modality::Silhouettes) => {}
        _ => {
            return Err(Error::config(format!(
                "branch {} cannot consume {} data",
                branch.as_str(),
                modality.as_str()
            )))
        }
    }

    let seq_len = cfg.parse_or("seq_len", 50usize)?;
    let (dim1, dim2) = match modality {
        Modality::Joints => (0, 0),
        Modality::Silhouettes => (
            cfg.parse_or("dim1", 44usize)?,
            cfg.parse_or("dim2", 64usize)?,
        ),
    };
    let labels: BTreeSet<String> = manifest.entries.iter().map(|e| e.label.clone()).collect();
    let classes = class_order(&labels);
    if classes.len() < 2 {
        return Err(Error::Data("need at least 2 classes to train".into()));
    }

    // subject-independent 80:20, then 10% of the train subjects become the
    // validation set
    let split_ratio = cfg.parse_or("split_ratio", 0.8f64)?;
    let val_fraction = cfg.parse_or("val_fraction", 0.1f64)?;
    let outer = subject_split(&manifest, split_ratio, subseed(seed, "data"))?;
    let train_manifest = DatasetManifest {
        entries: manifest
            .entries
            .iter()
            .filter(|e| outer.train_subjects.contains(&e.subject_id))
            .cloned()
            .collect(),
        modality,
    };
    let inner = subject_split(&train_manifest, 1.0 - val_fraction, subseed(seed, "val"))?;
    let train_seqs = filter_by_subjects(&manifest, &samples, &inner.train_subjects);
    let val_seqs = filter_by_subjects(&manifest, &samples, &inner.test_subjects);
    let test_seqs = filter_by_subjects(&manifest, &samples, &outer.test_subjects);

    // variance mask fitted on train frames only, reused verbatim elsewhere
    let mut spec = PreprocSpec {
        modality,
        seq_len,
        dim1,
        dim2,
        mask: None,
        classes,
    };
    if modality == Modality::Joints && cfg.bool_or("variance_filter", true)? {
        let threshold = cfg.parse_or("variance_threshold", 1e-8f64)?;
        let feat = gait_core::datapipe::JOINT_FEATURES;
        let mut rows = Vec::new();
        for s in &train_seqs {
            let fixed = gait_core::datapipe::pad_or_crop(s, seq_len);
            rows.extend_from_slice(fixed.frames.data());
        }
        let stacked = Tensor::new(vec![rows.len() / feat, feat], rows)?;
        let (mask, _) = variance_filter(&stacked, threshold)?;
        spec.mask = Some(mask);
    }

    let owned = |v: Vec<&Sequence>| -> Vec<Sequence> { v.into_iter().cloned().collect() };
    let mut train = to_dataset(&owned(train_seqs), &spec)?;
    let val = to_dataset(&owned(val_seqs), &spec)?;
    let test = to_dataset(&owned(test_seqs), &spec)?;

    if cfg.bool_or("smote", true)? {
        let mut counts = vec![0usize; spec.classes.len()];
        for &c in &train.labels {
            counts[c] += 1;
        }
        let (min_c, max_c) = (
            *counts.iter().min().expect("non-empty"),
            *counts.iter().max().expect("non-empty"),
        );
        if max_c > min_c {
            let default_k = min_c.saturating_sub(1).clamp(1, 5);
            let k = cfg.parse_or("smote_k", default_k)?;
            train = smote_dataset(&train, k, subseed(seed, "smote"))?;
        } else {
            // still consume the key so overrides are echoed consistently
            let _ = cfg.parse_or("smote_k", 1usize)?;
        }
    }
    if cfg.bool_or("augment", false)? {
        let sigma = cfg.parse_or("augment_sigma", 0.01f64)?;
        let max_shift = cfg.parse_or("augment_shift", 5usize)?;
        train = augment_dataset(&train, sigma, max_shift, seed)?;
    }
    Ok(Prepared {
        spec,
        branch,
        train,
        val,
        test,
    })
}

/// Model configuration from config keys plus data-derived dimensions.
pub fn branch_model_config(
    cfg: &Cfg,
    prep: &Prepared,
    dropout: f64,
    seed: u64,
) -> Result<ModelConfig> {
    let k = prep.spec.classes.len();
    let default_head = if k == 2 {
        "sigmoid".to_string()
    } else {
        format!("softmax:{}", k)
    };
    let head = Head::from_str(&cfg.str_or("head", &default_head))?;
    let config = match prep.branch {
        Branch::Gavd1d => {
            let d = GavdConfig::default();
            ModelConfig::Gavd(GavdConfig {
                seq_len: prep.spec.seq_len,
                feat_dim: prep.spec.feat_dim(),
                conv_channels: cfg.usize_list_or("conv_channels", &d.conv_channels)?,
                kernel: cfg.parse_or("kernel", d.kernel)?,
                stride: cfg.parse_or("stride", d.stride)?,
                padding: cfg.parse_or("padding", d.padding)?,
                pool_window: cfg.parse_or("pool_window", d.pool_window)?,
                pool_stride: cfg.parse_or("pool_stride", d.pool_stride)?,
                lstm_hidden: cfg.usize_list_or("lstm_hidden", &d.lstm_hidden)?,
                bidirectional: cfg.bool_or("bidirectional", d.bidirectional)?,
                use_lstm: cfg.bool_or("use_lstm", d.use_lstm)?,
                dense_units: cfg.parse_or("dense_units", d.dense_units)?,
                dropout,
                head,
                seed,
            })
        }
        Branch::Oumvlp3d => {
            let d = OumvlpConfig::default();
            ModelConfig::Oumvlp(OumvlpConfig {
                frames: prep.spec.seq_len,
                dim1: prep.spec.dim1,
                dim2: prep.spec.dim2,
                conv_channels: cfg.usize_list_or("conv_channels", &d.conv_channels)?,
                kernel: cfg.parse_or("kernel", d.kernel)?,
                pool_window: cfg.parse_or("pool_window", d.pool_window)?,
                pool_stride: cfg.parse_or("pool_stride", d.pool_stride)?,
                lstm_hidden: cfg.usize_list_or("lstm_hidden", &d.lstm_hidden)?,
                bidirectional: cfg.bool_or("bidirectional", d.bidirectional)?,
                use_lstm: cfg.bool_or("use_lstm", d.use_lstm)?,
                dense_units: cfg.parse_or("dense_units", d.dense_units)?,
                dropout,
                head,
                seed,
            })
        }
    };
    Ok(config)
}

fn with_trial_params(base: &ModelConfig, dropout: f64, seed: u64) -> ModelConfig {
    let mut mc = base.clone();
    match &mut mc {
        ModelConfig::Gavd(c) => {
            c.dropout = dropout;
            c.seed = seed;
        }
        ModelConfig::Oumvlp(c) => {
            c.dropout = dropout;
            c.seed = seed;
        }
    }
    mc
}

fn train_config(cfg: &Cfg, branch: Branch, seed: u64) -> Result<TrainConfig> {
    let default_lr = match branch {
        Branch::Gavd1d => 1e-3,
        Branch::Oumvlp3d => 1e-4,
    };
    Ok(TrainConfig {
        learning_rate: cfg.parse_or("learning_rate", default_lr)?,
        batch_size: cfg.parse_or("batch_size", 64usize)?,
        max_epochs: cfg.parse_or("max_epochs", 100usize)?,
        patience: cfg.parse_or("patience", 10usize)?,
        seed,
        class_weighting: cfg.bool_or("class_weighting", true)?,
    })
}

fn eval_split(model: &mut ModelGraph, data: &Dataset, k: usize) -> Result<Metrics> {
    let outputs = model.forward(&data.inputs, Mode::Eval)?;
    let preds = predict_classes(&outputs, &model.head)?;
    compute_metrics(&preds, &data.labels, k)
}

fn write_metrics(out: &Path, metrics: &Metrics, split: &str) -> Result<()> {
    let text = format!("split = {}\n{}", split, metrics.to_kv());
    std::fs::write(out.join("metrics.txt"), text)?;
    std::fs::write(out.join("confusion.csv"), metrics.confusion_csv())?;
    Ok(())
}

pub fn cmd_train(cfg: &Cfg, out: &Path) -> Result<()> {
    ensure_out(out)?;
    let seed = cfg.parse_or("seed", 0u64)?;
    let prep = prepare(cfg)?;
    let dropout = cfg.parse_or("dropout", 0.5f64)?;
    let mut model = build_model(&branch_model_config(cfg, &prep, dropout, subseed(seed, "init"))?)?;
    let tc = train_config(cfg, prep.branch, seed)?;
    cfg.reject_unknown()?;

    let history = train_loop(&mut model, &prep.train, &prep.val, &tc)?;

    let ckpt = out.join(CHECKPOINT_DIR);
    std::fs::create_dir_all(&ckpt)?;
    model.save_checkpoint(&ckpt)?;
    prep.spec.save(&ckpt)?;
    history.write_csv(&out.join("history.csv"))?;
    let metrics = eval_split(&mut model, &prep.test, prep.spec.classes.len())?;
    write_metrics(out, &metrics, "test")?;
    cfg.write_echo(out)?;
    println!(
        "trained {} epochs; best val loss {:.6}; test accuracy {:.4}",
        history.records.len(),
        history.best_val_loss().unwrap_or(f64::NAN),
        metrics.accuracy
    );
    Ok(())
}

/// Load every sample from a manifest through a checkpoint's preprocessing
/// spec.
fn load_for_checkpoint(manifest_path: &Path, spec: &PreprocSpec) -> Result<(Vec<Sequence>, Dataset)> {
    let (manifest, samples) = load_dataset(manifest_path)?;
    if samples.is_empty() {
        return Err(Error::Data("manifest lists no samples".into()));
    }
    if manifest.modality != spec.modality {
        return Err(Error::config(format!(
            "checkpoint expects {} data, manifest holds {}",
            spec.modality.as_str(),
            manifest.modality.as_str()
        )));
    }
    let ds = to_dataset(&samples, spec)?;
    Ok((samples, ds))
}

pub fn cmd_eval(cfg: &Cfg, checkpoint: &Path, manifest: &Path, out: &Path) -> Result<()> {
    ensure_out(out)?;
    cfg.reject_unknown()?;
    let mut model = ModelGraph::load_checkpoint(checkpoint)?;
    let spec = PreprocSpec::load(checkpoint)?;
    let (_, ds) = load_for_checkpoint(manifest, &spec)?;
    let metrics = eval_split(&mut model, &ds, spec.classes.len())?;
    write_metrics(out, &metrics, "eval")?;
    cfg.write_echo(out)?;
    println!(
        "evaluated {} samples: accuracy {:.4}, f1 {:.4}",
        ds.len(),
        metrics.accuracy,
        metrics.f1
    );
    Ok(())
}

pub fn cmd_explain(
    cfg: &Cfg,
    checkpoint: &Path,
    manifest: &Path,
    index: usize,
    tool: &str,
    out: &Path,
) -> Result<()> {
    ensure_out(out)?;
    let mut model = ModelGraph::load_checkpoint(checkpoint)?;
    let spec = PreprocSpec::load(checkpoint)?;
    let (samples, ds) = load_for_checkpoint(manifest, &spec)?;
    if index >= samples.len() {
        return Err(Error::config(format!(
            "sample index {} out of range (manifest has {})",
            index,
            samples.len()
        )));
    }
    let per = ds.inputs.len() / ds.len();
    let sample_shape = ds.inputs.shape()[1..].to_vec();
    let input = Tensor::new(
        sample_shape.clone(),
        ds.inputs.data()[index * per..(index + 1) * per].to_vec(),
    )?;
    let seed = cfg.parse_or("seed", 0u64)?;
    let target: usize = cfg.parse_or("target", 0usize)?;

    let mut manifest_kv = std::collections::BTreeMap::new();
    manifest_kv.insert("checkpoint".to_string(), checkpoint.display().to_string());
    manifest_kv.insert("sample_index".to_string(), index.to_string());
    manifest_kv.insert("tool".to_string(), tool.to_string());
    manifest_kv.insert("seed".to_string(), seed.to_string());
    manifest_kv.insert("target".to_string(), target.to_string());

    match tool {
        "gradcam" => {
            let layer = match cfg.opt_str("layer") {
                Some(v) => v
                    .parse::<usize>()
                    .map_err(|_| Error::config(format!("bad layer '{}'", v)))?,
                None => model
                    .last_conv_layer()
                    .ok_or_else(|| Error::config("model has no convolution layer"))?,
            };
            cfg.reject_unknown()?;
            let cam = grad_cam(&mut model, &input, target, layer)?;
            manifest_kv.insert("layer".to_string(), layer.to_string());
            manifest_kv.insert("maps".to_string(), cam.maps.len().to_string());
            match spec.modality {
                Modality::Silhouettes => {
                    let d = cam.maps.len();
                    let (t_in, h, w) = (sample_shape[0], sample_shape[1], sample_shape[2]);
                    for (i, map) in cam.maps.iter().enumerate() {
                        // underlay: the input frame this slice was computed
                        // from (nearest retained index)
                        let src = i * t_in / d;
                        let under = Tensor::new(
                            vec![h, w],
                            input.data()[src * h * w..(src + 1) * h * w].to_vec(),
                        )?;
                        write_heatmap(&out.join(format!("heatmap_{:04}.ppm", i)), map, &under)?;
                    }
                }
                Modality::Joints => {
                    // temporal saliency over frames
                    let mut csv = String::from("frame_index,value\n");
                    for (t, v) in cam.maps[0].iter().enumerate() {
                        csv.push_str(&format!("{},{:?}\n", t, v));
                    }
                    std::fs::write(out.join("gradcam.csv"), csv)?;
                }
            }
        }
        "shap" => {
            let baseline = Baseline::from_str(&cfg.str_or("baseline", "zero-frames"))?;
            let group_size = cfg.parse_or("group_size", 1usize)?;
            let t = sample_shape[0];
            let units = t.div_ceil(group_size);
            let default_mode = if units <= EXACT_UNIT_LIMIT { "exact" } else { "sampled" };
            let mode = match cfg.str_or("shap_mode", default_mode).as_str() {
                "exact" => ShapMode::Exact,
                "sampled" => ShapMode::Sampled {
                    n_samples: cfg.parse_or("n_samples", 256usize)?,
                },
                other => return Err(Error::config(format!("unknown shap_mode '{}'", other))),
            };
            cfg.reject_unknown()?;
            let mut scorer = ModelScorer {
                model: &mut model,
                target_logit: target,
            };
            let attr = shap_temporal(&mut scorer, &input, baseline, mode, group_size, seed)?;
            std::fs::write(out.join("attribution.csv"), attr.to_csv())?;
            manifest_kv.insert("baseline".to_string(), baseline.as_str().to_string());
            manifest_kv.insert(
                "mode".to_string(),
                match mode {
                    ShapMode::Exact => "exact".to_string(),
                    ShapMode::Sampled { n_samples } => format!("sampled:{}", n_samples),
                },
            );
            manifest_kv.insert("f_x".to_string(), format!("{:?}", attr.f_x));
            manifest_kv.insert("f_baseline".to_string(), format!("{:?}", attr.f_baseline));
            manifest_kv.insert(
                "efficiency_residual".to_string(),
                format!("{:?}", attr.efficiency_residual()),
            );
        }
        other => {
            return Err(Error::config(format!(
                "unknown tool '{}' (expected gradcam or shap)",
                other
            )))
        }
    }
    std::fs::write(out.join("explain_manifest.cfg"), gait_core::kv::format(&manifest_kv))?;
    cfg.write_echo(out)?;
    println!("explain artifacts written to {}", out.display());
    Ok(())
}

pub fn cmd_search(cfg: &Cfg, out: &Path, parallel: bool) -> Result<()> {
    ensure_out(out)?;
    let seed = cfg.parse_or("seed", 0u64)?;
    let prep = prepare(cfg)?;
    let n_trials = cfg.parse_or("n_trials", 9usize)?;
    let budget_epochs = cfg.parse_or("budget_epochs", 5usize)?;
    let patience = cfg.parse_or("patience", 10usize)?;
    let class_weighting = cfg.bool_or("class_weighting", true)?;
    // resolve model keys once; trials only swap dropout and seed
    let base_config = branch_model_config(cfg, &prep, 0.5, 0)?;
    cfg.reject_unknown()?;

    let results = random_search(n_trials, seed, parallel, |i, trial| {
        let mc = with_trial_params(
            &base_config,
            trial.dropout,
            subseed(seed, &format!("trial-init/{}", i)),
        );
        let mut model = build_model(&mc)?;
        let tc = TrainConfig {
            learning_rate: trial.learning_rate,
            batch_size: trial.batch_size,
            max_epochs: budget_epochs,
            patience,
            seed: subseed(seed, &format!("trial/{}", i)),
            class_weighting,
        };
        let history = train_loop(&mut model, &prep.train, &prep.val, &tc)?;
        history
            .best_val_loss()
            .ok_or_else(|| Error::State("trial produced no epochs".into()))
    })?;

    let mut csv = String::from("rank,trial,learning_rate,batch_size,dropout,best_val_loss\n");
    for (rank, r) in results.iter().enumerate() {
        csv.push_str(&format!(
            "{},{},{:?},{},{:?},{:?}\n",
            rank, r.trial, r.config.learning_rate, r.config.batch_size, r.config.dropout, r.best_val_loss
        ));
    }
    std::fs::write(out.join("trials.csv"), csv)?;
    cfg.write_echo(out)?;
    let best = &results[0];
    println!(
        "best trial {}: lr {:.6}, batch {}, dropout {}, val loss {:.6}",
        best.trial, best.config.learning_rate, best.config.batch_size, best.config.dropout, best.best_val_loss
    );
    Ok(())
}
