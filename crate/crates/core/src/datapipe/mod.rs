//! Ingestion, preprocessing, augmentation, class rebalancing,
//! subject-independent splitting, and the seeded synthetic generator.

pub mod io;
pub mod smote;
pub mod synth;

pub use smote::smote_oversample;
pub use synth::{synth_generate, SynthConfig, SynthMode};

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::rng::{rng_from, Rng};
use crate::tensor::Tensor;
use rand::Rng as _;

pub const NUM_JOINTS: usize = 18;
pub const JOINT_FEATURES: usize = 2 * NUM_JOINTS;

/// The GAVD label set; the class vocabulary is open (identity labels for
/// the silhouette modality are arbitrary strings).
pub const GAIT_CLASSES: [&str; 5] = ["normal", "antalgic", "lurch", "spastic", "steppage"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Joints,
    Silhouettes,
}

impl Modality {
    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::Joints => "joints",
            Modality::Silhouettes => "silhouettes",
        }
    }

    pub fn from_str(s: &str) -> Result<Self> {
        match s {
            "joints" => Ok(Modality::Joints),
            "silhouettes" => Ok(Modality::Silhouettes),
            _ => Err(Error::config(format!("unknown modality '{}'", s))),
        }
    }
}

/// One sample: a per-frame tensor plus identity metadata. Joints samples
/// are `[T, 36]`; silhouette samples are `[T, dim1, dim2]` binary.
#[derive(Clone, Debug)]
pub struct Sequence {
    pub frames: Tensor,
    pub subject_id: String,
    pub label: String,
}

impl Sequence {
    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }
}

#[derive(Clone, Debug)]
pub struct ManifestEntry {
    pub path: String,
    pub subject_id: String,
    pub label: String,
}

#[derive(Clone, Debug)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub modality: Modality,
}

impl DatasetManifest {
    pub fn histogram(&self) -> BTreeMap<String, usize> {
        let mut h = BTreeMap::new();
        for e in &self.entries {
            *h.entry(e.label.clone()).or_insert(0) += 1;
        }
        h
    }

    pub fn subjects(&self) -> BTreeSet<String> {
        self.entries.iter().map(|e| e.subject_id.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.iter().any(|e| e.subject_id.is_empty()) {
            return Err(Error::Data("empty subject_id in manifest".into()));
        }
        let total: usize = self.histogram().values().sum();
        if total != self.entries.len() {
            return Err(Error::Data("histogram does not sum to entry count".into()));
        }
        Ok(())
    }
}

/// Subject-level train/test assignment; the two sets never overlap.
#[derive(Clone, Debug)]
pub struct SplitAssignment {
    pub train_subjects: BTreeSet<String>,
    pub test_subjects: BTreeSet<String>,
    pub ratio: f64,
    pub seed: u64,
}

/// Flatten `[T, 18, 2]` keypoints into `[T, 36]`, interleaved
/// x0,y0,...,x17,y17 per frame.
pub fn flatten_keypoints(keypoints: &Tensor) -> Result<Tensor> {
    if keypoints.rank() != 3
        || keypoints.shape()[1] != NUM_JOINTS
        || keypoints.shape()[2] != 2
    {
        return Err(Error::Format(format!(
            "expected [T, {}, 2] keypoints, got {:?}",
            NUM_JOINTS,
            keypoints.shape()
        )));
    }
    // row-major [T, 18, 2] is already x,y interleaved per joint
    keypoints.reshape(&[keypoints.shape()[0], JOINT_FEATURES])
}

/// Inverse of [`flatten_keypoints`].
pub fn unflatten_keypoints(frames: &Tensor) -> Result<Tensor> {
    if frames.rank() != 2 || frames.shape()[1] != JOINT_FEATURES {
        return Err(Error::Format(format!(
            "expected [T, {}] frames, got {:?}",
            JOINT_FEATURES,
            frames.shape()
        )));
    }
    frames.reshape(&[frames.shape()[0], NUM_JOINTS, 2])
}

/// Keep columns of an `[N, F]` matrix whose population variance exceeds
/// `threshold`. The mask is computed on training data only; reuse it
/// verbatim on test data via [`apply_column_mask`].
pub fn variance_filter(train_matrix: &Tensor, threshold: f64) -> Result<(Vec<bool>, Tensor)> {
    if train_matrix.rank() != 2 {
        return Err(Error::shape("variance_filter expects [N, F]"));
    }
    let (n, f) = (train_matrix.shape()[0], train_matrix.shape()[1]);
    if n < 2 {
        return Err(Error::Data("variance filter needs at least 2 rows".into()));
    }
    let mut mask = vec![false; f];
    for j in 0..f {
        let mut mean = 0.0;
        for i in 0..n {
            mean += train_matrix.data()[i * f + j];
        }
        mean /= n as f64;
        let mut var = 0.0;
        for i in 0..n {
            let d = train_matrix.data()[i * f + j] - mean;
            var += d * d;
        }
        var /= n as f64;
        mask[j] = var > threshold;
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::Data(
            "variance filter removed every feature column".into(),
        ));
    }
    let filtered = apply_column_mask(train_matrix, &mask)?;
    Ok((mask, filtered))
}

pub fn apply_column_mask(matrix: &Tensor, mask: &[bool]) -> Result<Tensor> {
    if matrix.rank() != 2 || matrix.shape()[1] != mask.len() {
        return Err(Error::shape("column mask length vs matrix width"));
    }
    let (n, f) = (matrix.shape()[0], matrix.shape()[1]);
    let kept: Vec<usize> = (0..f).filter(|&j| mask[j]).collect();
    let mut data = Vec::with_capacity(n * kept.len());
    for i in 0..n {
        for &j in &kept {
            data.push(matrix.data()[i * f + j]);
        }
    }
    Tensor::new(vec![n, kept.len()], data)
}

/// Two independent standard normals via Box-Muller (keeps the RNG
/// dependency surface to the uniform generator).
pub(crate) fn gaussian_pair(rng: &mut Rng) -> (f64, f64) {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = 2.0 * std::f64::consts::PI * u2;
    (r * theta.cos(), r * theta.sin())
}

/// Add i.i.d. zero-mean Gaussian noise of stddev `sigma` to every value.
pub fn gaussian_augment(seq: &Sequence, sigma: f64, seed: u64) -> Result<Sequence> {
    if sigma < 0.0 {
        return Err(Error::config("sigma must be >= 0"));
    }
    if sigma == 0.0 {
        return Ok(seq.clone());
    }
    let mut rng = rng_from(seed);
    let mut frames = seq.frames.clone();
    let n = frames.len();
    let mut i = 0;
    while i < n {
        let (a, b) = gaussian_pair(&mut rng);
        frames.data_mut()[i] += sigma * a;
        i += 1;
        if i < n {
            frames.data_mut()[i] += sigma * b;
            i += 1;
        }
    }
    Ok(Sequence {
        frames,
        subject_id: seq.subject_id.clone(),
        label: seq.label.clone(),
    })
}

/// Circular shift by `s mod T` along the time axis (axis 0). Positive `s`
/// rotates frames toward later indices: `[A,B,C]` with `s = 1` becomes
/// `[C,A,B]`.
pub fn temporal_shift(seq: &Sequence, s: i64) -> Sequence {
    let t = seq.num_frames() as i64;
    let shift = s.rem_euclid(t) as usize;
    if shift == 0 {
        return seq.clone();
    }
    let t = t as usize;
    let per = seq.frames.len() / t;
    let mut data = vec![0.0; seq.frames.len()];
    for src in 0..t {
        let dst = (src + shift) % t;
        data[dst * per..(dst + 1) * per]
            .copy_from_slice(&seq.frames.data()[src * per..(src + 1) * per]);
    }
    Sequence {
        frames: Tensor::new(seq.frames.shape().to_vec(), data).expect("same shape"),
        subject_id: seq.subject_id.clone(),
        label: seq.label.clone(),
    }
}

/// Fix the frame count: short sequences get trailing all-zero frames,
/// long ones keep the centered window starting at `floor((T - target)/2)`.
pub fn pad_or_crop(seq: &Sequence, target: usize) -> Sequence {
    let t = seq.num_frames();
    if t == target {
        return seq.clone();
    }
    let per = seq.frames.len() / t;
    let mut shape = seq.frames.shape().to_vec();
    shape[0] = target;
    let mut data = vec![0.0; target * per];
    if t < target {
        data[..t * per].copy_from_slice(seq.frames.data());
    } else {
        let start = (t - target) / 2;
        data.copy_from_slice(&seq.frames.data()[start * per..(start + target) * per]);
    }
    Sequence {
        frames: Tensor::new(shape, data).expect("shape/data agree"),
        subject_id: seq.subject_id.clone(),
        label: seq.label.clone(),
    }
}

/// Nearest-neighbor resize of a binary `[H, W]` image:
/// `src_index = floor(dst_index * src_extent / dst_extent)` per axis.
pub fn resize_silhouette(img: &Tensor, target: (usize, usize)) -> Result<Tensor> {
    if img.rank() != 2 {
        return Err(Error::shape("resize_silhouette expects [H, W]"));
    }
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(Error::config("target extents must be >= 1"));
    }
    let mut out = Tensor::zeros(&[th, tw]);
    for i in 0..th {
        let si = i * h / th;
        for j in 0..tw {
            let sj = j * w / tw;
            out.data_mut()[i * tw + j] = img.data()[si * w + sj];
        }
    }
    Ok(out)
}

/// Shuffle subjects with a seeded permutation; the first
/// `ceil(ratio * S)` become the training set.
pub fn subject_split(
    manifest: &DatasetManifest,
    ratio: f64,
    seed: u64,
) -> Result<SplitAssignment> {
    let subjects: Vec<String> = manifest.subjects().into_iter().collect();
    if subjects.len() < 2 {
        return Err(Error::Data(format!(
            "subject split needs >= 2 subjects, got {}",
            subjects.len()
        )));
    }
    if !(0.0..1.0).contains(&ratio) || ratio == 0.0 {
        return Err(Error::config("split ratio must be in (0, 1)"));
    }
    let mut order = subjects;
    let mut rng = rng_from(seed);
    // Fisher-Yates
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let n_train = (ratio * order.len() as f64).ceil() as usize;
    let n_train = n_train.min(order.len() - 1); // keep test non-empty
    let train_subjects: BTreeSet<String> = order[..n_train].iter().cloned().collect();
    let test_subjects: BTreeSet<String> = order[n_train..].iter().cloned().collect();
    Ok(SplitAssignment {
        train_subjects,
        test_subjects,
        ratio,
        seed,
    })
}
