//! Shared data plumbing between commands: label/index mapping, per-sample
//! preprocessing, tensor stacking, SMOTE/augmentation at the dataset
//! level, and the preprocessing spec persisted next to checkpoints.

use std::collections::BTreeSet;
use std::path::Path;

use gait_core::datapipe::{
    apply_column_mask, gaussian_augment, pad_or_crop, resize_silhouette, smote_oversample,
    temporal_shift, DatasetManifest, Modality, Sequence,
};
use gait_core::error::{Error, Result};
use gait_core::kv;
use gait_core::rng::{rng_from, subseed};
use gait_core::tensor::Tensor;
use gait_core::training::Dataset;
use rand::Rng as _;

/// Deterministic class ordering: sorted labels, except that a binary set
/// containing `normal` puts `normal` first (so the positive class is the
/// abnormality).
pub fn class_order(labels: &BTreeSet<String>) -> Vec<String> {
    let mut classes: Vec<String> = labels.iter().cloned().collect();
    if classes.len() == 2 && classes.iter().any(|c| c == "normal") {
        classes.sort_by_key(|c| (c != "normal", c.clone()));
    }
    classes
}

pub fn label_index(classes: &[String], label: &str) -> Result<usize> {
    classes
        .iter()
        .position(|c| c == label)
        .ok_or_else(|| Error::Data(format!("label '{}' not in the class set {:?}", label, classes)))
}

/// Everything needed to map a raw sequence into model input space;
/// persisted into the checkpoint directory so `eval`/`explain` reproduce
/// training-time preprocessing exactly.
#[derive(Clone, Debug)]
pub struct PreprocSpec {
    pub modality: Modality,
    pub seq_len: usize,
    /// Target spatial extents (silhouettes only).
    pub dim1: usize,
    pub dim2: usize,
    /// Column keep-mask from the train-split variance filter (joints only).
    pub mask: Option<Vec<bool>>,
    pub classes: Vec<String>,
}

pub const PREPROC_FILE: &str = "preproc.cfg";

impl PreprocSpec {
    pub fn feat_dim(&self) -> usize {
        match &self.mask {
            Some(m) => m.iter().filter(|&&b| b).count(),
            None => gait_core::datapipe::JOINT_FEATURES,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut m = std::collections::BTreeMap::new();
        m.insert("modality".to_string(), self.modality.as_str().to_string());
        m.insert("seq_len".to_string(), self.seq_len.to_string());
        m.insert("dim1".to_string(), self.dim1.to_string());
        m.insert("dim2".to_string(), self.dim2.to_string());
        let mask = match &self.mask {
            Some(mask) => mask
                .iter()
                .map(|&b| if b { "1" } else { "0" })
                .collect::<Vec<_>>()
                .join(","),
            None => "none".to_string(),
        };
        m.insert("mask".to_string(), mask);
        m.insert("classes".to_string(), self.classes.join(","));
        std::fs::write(dir.join(PREPROC_FILE), kv::format(&m))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m = kv::parse(&std::fs::read_to_string(dir.join(PREPROC_FILE))?)?;
        let get = |k: &str| -> Result<&String> {
            m.get(k)
                .ok_or_else(|| Error::Format(format!("{}: missing key '{}'", PREPROC_FILE, k)))
        };
        let mask = match get("mask")?.as_str() {
            "none" => None,
            s => Some(s.split(',').map(|c| c == "1").collect()),
        };
        Ok(PreprocSpec {
            modality: Modality::from_str(get("modality")?)?,
            seq_len: kv::get_parsed(&m, "seq_len")?,
            dim1: kv::get_parsed(&m, "dim1")?,
            dim2: kv::get_parsed(&m, "dim2")?,
            mask,
            classes: get("classes")?.split(',').map(str::to_string).collect(),
        })
    }
}

/// Fixed-length, resized, column-masked model input for one sequence.
pub fn preprocess_sample(seq: &Sequence, spec: &PreprocSpec) -> Result<Tensor> {
    let fixed = pad_or_crop(seq, spec.seq_len);
    match spec.modality {
        Modality::Joints => match &spec.mask {
            Some(mask) => apply_column_mask(&fixed.frames, mask),
            None => Ok(fixed.frames),
        },
        Modality::Silhouettes => {
            let shape = fixed.frames.shape().to_vec();
            if shape[1] == spec.dim1 && shape[2] == spec.dim2 {
                return Ok(fixed.frames);
            }
            let (h, w) = (shape[1], shape[2]);
            let mut data = Vec::with_capacity(spec.seq_len * spec.dim1 * spec.dim2);
            for t in 0..spec.seq_len {
                let frame = Tensor::new(
                    vec![h, w],
                    fixed.frames.data()[t * h * w..(t + 1) * h * w].to_vec(),
                )?;
                data.extend_from_slice(resize_silhouette(&frame, (spec.dim1, spec.dim2))?.data());
            }
            Tensor::new(vec![spec.seq_len, spec.dim1, spec.dim2], data)
        }
    }
}

/// Stack sequences into a `[N, ...]` dataset in input order.
pub fn to_dataset(seqs: &[Sequence], spec: &PreprocSpec) -> Result<Dataset> {
    if seqs.is_empty() {
        return Err(Error::Data("no samples in split".into()));
    }
    let first = preprocess_sample(&seqs[0], spec)?;
    let mut shape = vec![seqs.len()];
    shape.extend_from_slice(first.shape());
    let per = first.len();
    let mut data = Vec::with_capacity(seqs.len() * per);
    data.extend_from_slice(first.data());
    let mut labels = vec![label_index(&spec.classes, &seqs[0].label)?];
    for s in &seqs[1..] {
        let t = preprocess_sample(s, spec)?;
        if t.len() != per {
            return Err(Error::shape("inconsistent sample shapes after preprocessing"));
        }
        data.extend_from_slice(t.data());
        labels.push(label_index(&spec.classes, &s.label)?);
    }
    Dataset::new(Tensor::new(shape, data)?, labels)
}

/// SMOTE over flattened per-sample vectors; rows come back in original
/// order with synthetics appended.
pub fn smote_dataset(ds: &Dataset, k: usize, seed: u64) -> Result<Dataset> {
    let n = ds.len();
    let per = ds.inputs.len() / n;
    let flat = ds.inputs.reshape(&[n, per])?;
    let (out, labels) = smote_oversample(&flat, &ds.labels, k, seed)?;
    let mut shape = ds.inputs.shape().to_vec();
    shape[0] = labels.len();
    Dataset::new(out.reshape(&shape)?, labels)
}

/// Append one augmented copy per row: Gaussian noise plus a circular
/// temporal shift, both drawn from the seeded stream.
pub fn augment_dataset(ds: &Dataset, sigma: f64, max_shift: usize, seed: u64) -> Result<Dataset> {
    let n = ds.len();
    let per = ds.inputs.len() / n;
    let mut shape = ds.inputs.shape().to_vec();
    let row_shape = shape[1..].to_vec();
    shape[0] = 2 * n;
    let mut data = Vec::with_capacity(2 * n * per);
    data.extend_from_slice(ds.inputs.data());
    let mut labels = ds.labels.clone();
    let mut rng = rng_from(subseed(seed, "augment"));
    for i in 0..n {
        let frames = Tensor::new(row_shape.clone(), ds.inputs.data()[i * per..(i + 1) * per].to_vec())?;
        let seq = Sequence {
            frames,
            subject_id: String::new(),
            label: String::new(),
        };
        let shift = if max_shift > 0 {
            rng.gen_range(0..=max_shift) as i64
        } else {
            0
        };
        let shifted = temporal_shift(&seq, shift);
        let noisy = gaussian_augment(&shifted, sigma, rng.gen::<u64>())?;
        data.extend_from_slice(noisy.frames.data());
        labels.push(ds.labels[i]);
    }
    Dataset::new(Tensor::new(shape, data)?, labels)
}

/// Entries of a manifest restricted to a subject set, preserving order.
pub fn filter_by_subjects<'a>(
    manifest: &DatasetManifest,
    samples: &'a [Sequence],
    subjects: &BTreeSet<String>,
) -> Vec<&'a Sequence> {
    manifest
        .entries
        .iter()
        .zip(samples)
        .filter(|(e, _)| subjects.contains(&e.subject_id))
        .map(|(_, s)| s)
        .collect()
}
