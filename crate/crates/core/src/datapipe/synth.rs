//! Seeded synthetic dataset generator. Joints mode emits sinusoidal limb
//! trajectories with per-subject signatures and class-specific gait
//! deformations; silhouette mode renders a moving figure whose stride
//! geometry differs by class. Two auxiliary modes exist for controlled
//! experiments: a purely-temporal lag task and a planted-quadrant
//! localization task.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::rng::{rng_from, subseed, Rng};
use crate::tensor::Tensor;
use rand::Rng as _;

use super::{gaussian_pair, Modality, Sequence, GAIT_CLASSES, JOINT_FEATURES, NUM_JOINTS};

#[derive(Clone, Debug)]
pub enum SynthMode {
    /// Gait-like signal: per-class kinematic deformations on a shared
    /// walking cycle (joints) or class-specific stride geometry
    /// (silhouettes).
    Gait,
    /// Binary task whose only class signal is the circular temporal lag
    /// between two feature-group events; per-frame marginals are identical
    /// across classes. Joints modality only.
    TemporalLag { lag_a: usize, lag_b: usize },
    /// Binary task whose discriminative signal (a pulsing blob) is
    /// confined to one spatial quadrant. Silhouettes modality only.
    /// Quadrants: 0 = top-left, 1 = top-right, 2 = bottom-left,
    /// 3 = bottom-right.
    PlantedQuadrant { quadrant: usize },
}

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub modality: Modality,
    pub classes: Vec<String>,
    pub subjects: usize,
    pub sequences_per_subject: usize,
    pub seq_len: usize,
    /// Silhouette frame extents; ignored for joints.
    pub height: usize,
    pub width: usize,
    pub noise_sigma: f64,
    pub mode: SynthMode,
    pub seed: u64,
}

impl SynthConfig {
    pub fn joints(classes: &[&str], subjects: usize, sequences_per_subject: usize, seed: u64) -> Self {
        SynthConfig {
            modality: Modality::Joints,
            classes: classes.iter().map(|s| s.to_string()).collect(),
            subjects,
            sequences_per_subject,
            seq_len: 50,
            height: 0,
            width: 0,
            noise_sigma: 0.01,
            mode: SynthMode::Gait,
            seed,
        }
    }

    pub fn silhouettes(
        classes: &[&str],
        subjects: usize,
        sequences_per_subject: usize,
        seed: u64,
    ) -> Self {
        SynthConfig {
            modality: Modality::Silhouettes,
            classes: classes.iter().map(|s| s.to_string()).collect(),
            subjects,
            sequences_per_subject,
            seq_len: 50,
            height: 128,
            width: 88,
            noise_sigma: 0.0,
            mode: SynthMode::Gait,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.subjects < 2 {
            return Err(Error::config("synth: need >= 2 subjects"));
        }
        if self.classes.len() < 2 {
            return Err(Error::config("synth: need >= 2 classes"));
        }
        if self.sequences_per_subject == 0 || self.seq_len == 0 {
            return Err(Error::config("synth: empty sequences requested"));
        }
        match (&self.mode, self.modality) {
            (SynthMode::Gait, Modality::Joints) => {
                for c in &self.classes {
                    if !GAIT_CLASSES.contains(&c.as_str()) {
                        return Err(Error::config(format!(
                            "synth: unknown gait class '{}'",
                            c
                        )));
                    }
                }
            }
            (SynthMode::Gait, Modality::Silhouettes) => {}
            (SynthMode::TemporalLag { lag_a, lag_b }, Modality::Joints) => {
                if self.classes.len() != 2 {
                    return Err(Error::config("temporal-lag mode is binary"));
                }
                if lag_a == lag_b || *lag_a >= self.seq_len || *lag_b >= self.seq_len {
                    return Err(Error::config("temporal-lag: lags must differ and be < T"));
                }
            }
            (SynthMode::PlantedQuadrant { quadrant }, Modality::Silhouettes) => {
                if self.classes.len() != 2 {
                    return Err(Error::config("planted-quadrant mode is binary"));
                }
                if *quadrant > 3 {
                    return Err(Error::config("quadrant must be 0..=3"));
                }
                if self.height < 8 || self.width < 8 {
                    return Err(Error::config("planted-quadrant frames must be >= 8x8"));
                }
            }
            _ => {
                return Err(Error::config("synth: mode/modality mismatch"));
            }
        }
        if self.modality == Modality::Silhouettes && (self.height < 4 || self.width < 4) {
            return Err(Error::config("silhouette extents must be >= 4"));
        }
        Ok(())
    }
}

/// Generate a seed-deterministic dataset. Labels cycle round-robin over the
/// requested classes so the class histogram is exactly uniform (up to the
/// remainder when the total is not divisible), and every subject emits
/// sequences of every class so subject identity carries no label signal.
pub fn synth_generate(config: &SynthConfig) -> Result<Vec<Sequence>> {
    config.validate()?;
    let mut out = Vec::with_capacity(config.subjects * config.sequences_per_subject);
    for subj in 0..config.subjects {
        let subject_id = format!("subj{:03}", subj);
        let sig = SubjectSignature::draw(config.seed, subj);
        for i in 0..config.sequences_per_subject {
            let global = subj * config.sequences_per_subject + i;
            let class_idx = global % config.classes.len();
            let label = config.classes[class_idx].clone();
            let mut rng = rng_from(subseed(config.seed, &format!("synth/{}/{}", subj, i)));
            let frames = match (&config.mode, config.modality) {
                (SynthMode::Gait, Modality::Joints) => {
                    gait_joints(config, &sig, &label, &mut rng)
                }
                (SynthMode::Gait, Modality::Silhouettes) => {
                    gait_silhouettes(config, &sig, class_idx, &mut rng)
                }
                (SynthMode::TemporalLag { lag_a, lag_b }, _) => {
                    let lag = if class_idx == 0 { *lag_a } else { *lag_b };
                    temporal_lag_joints(config, lag, &mut rng)
                }
                (SynthMode::PlantedQuadrant { quadrant }, _) => {
                    planted_quadrant(config, *quadrant, class_idx, &mut rng)
                }
            };
            out.push(Sequence {
                frames,
                subject_id: subject_id.clone(),
                label,
            });
        }
    }
    Ok(out)
}

/// Per-subject gait signature, stable across that subject's sequences.
struct SubjectSignature {
    phase: f64,
    /// cycles per frame
    omega: f64,
    amp: f64,
    height_scale: f64,
}

impl SubjectSignature {
    fn draw(seed: u64, subject: usize) -> Self {
        let mut rng = rng_from(subseed(seed, &format!("subject/{}", subject)));
        SubjectSignature {
            phase: rng.gen::<f64>() * 2.0 * PI,
            omega: 2.0 * PI * rng.gen_range(0.8..1.2) / 25.0,
            amp: rng.gen_range(0.9..1.1),
            height_scale: rng.gen_range(0.95..1.05),
        }
    }
}

// joint indices (2D pose, 18 keypoints)
const NOSE: usize = 0;
const NECK: usize = 1;
const R_SHOULDER: usize = 2;
const R_ELBOW: usize = 3;
const R_WRIST: usize = 4;
const L_SHOULDER: usize = 5;
const L_ELBOW: usize = 6;
const L_WRIST: usize = 7;
const R_HIP: usize = 8;
const R_KNEE: usize = 9;
const R_ANKLE: usize = 10;
const L_HIP: usize = 11;
const L_KNEE: usize = 12;
const L_ANKLE: usize = 13;
const R_EYE: usize = 14;
const L_EYE: usize = 15;
const R_EAR: usize = 16;
const L_EAR: usize = 17;

/// Neutral standing pose, (x, y) with y increasing downward, unit height.
fn base_pose() -> [(f64, f64); NUM_JOINTS] {
    let mut p = [(0.0, 0.0); NUM_JOINTS];
    p[NOSE] = (0.50, 0.08);
    p[NECK] = (0.50, 0.18);
    p[R_SHOULDER] = (0.42, 0.20);
    p[R_ELBOW] = (0.40, 0.33);
    p[R_WRIST] = (0.39, 0.45);
    p[L_SHOULDER] = (0.58, 0.20);
    p[L_ELBOW] = (0.60, 0.33);
    p[L_WRIST] = (0.61, 0.45);
    p[R_HIP] = (0.45, 0.50);
    p[R_KNEE] = (0.45, 0.70);
    p[R_ANKLE] = (0.45, 0.92);
    p[L_HIP] = (0.55, 0.50);
    p[L_KNEE] = (0.55, 0.70);
    p[L_ANKLE] = (0.55, 0.92);
    p[R_EYE] = (0.47, 0.06);
    p[L_EYE] = (0.53, 0.06);
    p[R_EAR] = (0.44, 0.08);
    p[L_EAR] = (0.56, 0.08);
    p
}

fn gait_joints(config: &SynthConfig, sig: &SubjectSignature, label: &str, rng: &mut Rng) -> Tensor {
    let t_len = config.seq_len;
    let seq_phase = rng.gen::<f64>() * 2.0 * PI;
    let mut data = Vec::with_capacity(t_len * JOINT_FEATURES);
    let base = base_pose();
    for t in 0..t_len {
        let theta = sig.omega * t as f64 + sig.phase + seq_phase;
        let swing = 0.08 * sig.amp;
        let mut pose = base;
        for (_, y) in pose.iter_mut() {
            *y *= sig.height_scale;
        }
        // contralateral limb swing: right leg with left arm
        let s_r = swing * theta.sin();
        let s_l = swing * (theta + PI).sin();
        let gain_r = 1.0;
        let mut gain_l = 1.0;
        if label == "antalgic" {
            // guarded left leg: reduced swing, dropped pelvis on the
            // painful side
            gain_l = 0.35;
            pose[L_HIP].1 += 0.04;
            pose[L_KNEE].1 += 0.04;
        }
        pose[R_KNEE].0 += 0.6 * s_r * gain_r;
        pose[R_ANKLE].0 += s_r * gain_r;
        pose[L_KNEE].0 += 0.6 * s_l * gain_l;
        pose[L_ANKLE].0 += s_l * gain_l;
        pose[R_ELBOW].0 += 0.5 * s_l;
        pose[R_WRIST].0 += 0.8 * s_l;
        pose[L_ELBOW].0 += 0.5 * s_r;
        pose[L_WRIST].0 += 0.8 * s_r;
        // vertical bob at double the stride frequency
        let bob = 0.015 * (2.0 * theta).sin();
        for j in [NOSE, NECK, R_SHOULDER, L_SHOULDER, R_HIP, L_HIP, R_EYE, L_EYE, R_EAR, L_EAR] {
            pose[j].1 += bob;
        }
        match label {
            "lurch" => {
                // trunk lurches down-and-sideways each stance phase
                let drop = 0.15 * theta.sin().abs();
                for j in [NOSE, NECK, R_SHOULDER, L_SHOULDER, R_EYE, L_EYE, R_EAR, L_EAR] {
                    pose[j].1 += drop;
                    pose[j].0 += 0.05 * theta.sin().abs();
                }
            }
            "spastic" => {
                // stiff flexed knees plus jitter bursts on the distal leg
                pose[R_KNEE].0 += 0.03;
                pose[L_KNEE].0 += 0.03;
                if (3.0 * theta).sin() > 0.3 {
                    for j in [R_KNEE, R_ANKLE, L_KNEE, L_ANKLE] {
                        let (a, b) = gaussian_pair(rng);
                        pose[j].0 += 0.05 * a;
                        pose[j].1 += 0.05 * b;
                    }
                }
            }
            "steppage" => {
                // exaggerated foot lift during swing
                pose[R_ANKLE].1 -= 0.12 * theta.sin().max(0.0) + 0.02;
                pose[L_ANKLE].1 -= 0.12 * (theta + PI).sin().max(0.0) + 0.02;
            }
            _ => {}
        }
        for (x, y) in pose {
            data.push(x);
            data.push(y);
        }
    }
    let mut frames = Tensor::new(vec![t_len, JOINT_FEATURES], data).expect("shape/data agree");
    add_noise(&mut frames, config.noise_sigma, rng);
    frames
}

fn temporal_lag_joints(config: &SynthConfig, lag: usize, rng: &mut Rng) -> Tensor {
    let t_len = config.seq_len;
    let half = JOINT_FEATURES / 2;
    let pos = rng.gen_range(0..t_len);
    let width = 2.0;
    let mut frames = Tensor::zeros(&[t_len, JOINT_FEATURES]);
    for t in 0..t_len {
        // circular distance to each event center
        let bump = |center: usize| -> f64 {
            let d = (t as i64 - center as i64).rem_euclid(t_len as i64) as f64;
            let d = d.min(t_len as f64 - d);
            (-d * d / (2.0 * width * width)).exp()
        };
        let p = bump(pos);
        let q = bump((pos + lag) % t_len);
        for j in 0..half {
            frames.data_mut()[t * JOINT_FEATURES + j] = p;
            frames.data_mut()[t * JOINT_FEATURES + half + j] = q;
        }
    }
    add_noise(&mut frames, config.noise_sigma.max(0.02), rng);
    frames
}

fn add_noise(frames: &mut Tensor, sigma: f64, rng: &mut Rng) {
    if sigma <= 0.0 {
        return;
    }
    let n = frames.len();
    let mut i = 0;
    while i < n {
        let (a, b) = gaussian_pair(rng);
        frames.data_mut()[i] += sigma * a;
        i += 1;
        if i < n {
            frames.data_mut()[i] += sigma * b;
            i += 1;
        }
    }
}

struct Canvas<'a> {
    data: &'a mut [f64],
    h: usize,
    w: usize,
}

impl Canvas<'_> {
    fn fill_ellipse(&mut self, cy: f64, cx: f64, ry: f64, rx: f64) {
        let i0 = ((cy - ry).floor().max(0.0)) as usize;
        let i1 = ((cy + ry).ceil().min(self.h as f64 - 1.0)) as usize;
        for i in i0..=i1.min(self.h - 1) {
            for j in 0..self.w {
                let dy = (i as f64 - cy) / ry;
                let dx = (j as f64 - cx) / rx;
                if dy * dy + dx * dx <= 1.0 {
                    self.data[i * self.w + j] = 1.0;
                }
            }
        }
    }

    /// Thick segment from (y0,x0) to (y1,x1).
    fn stroke(&mut self, y0: f64, x0: f64, y1: f64, x1: f64, thickness: f64) {
        let steps = ((y1 - y0).abs().max((x1 - x0).abs()).ceil() as usize).max(1) * 2;
        for s in 0..=steps {
            let u = s as f64 / steps as f64;
            let cy = y0 + u * (y1 - y0);
            let cx = x0 + u * (x1 - x0);
            self.fill_ellipse(cy, cx, thickness, thickness);
        }
    }
}

fn gait_silhouettes(
    config: &SynthConfig,
    sig: &SubjectSignature,
    class_idx: usize,
    rng: &mut Rng,
) -> Tensor {
    let (t_len, h, w) = (config.seq_len, config.height, config.width);
    let seq_phase = rng.gen::<f64>() * 2.0 * PI;
    // class-specific stride geometry
    let stride = 0.25 + 0.18 * class_idx as f64;
    let leg_len = (0.34 + 0.03 * class_idx as f64) * sig.height_scale;
    let mut frames = Tensor::zeros(&[t_len, h, w]);
    let (hf, wf) = (h as f64, w as f64);
    for t in 0..t_len {
        let theta = sig.omega * t as f64 + sig.phase + seq_phase;
        let start = t * h * w;
        let mut canvas = Canvas {
            data: &mut frames.data_mut()[start..start + h * w],
            h,
            w,
        };
        let cx = wf * 0.5;
        let bob = 0.01 * hf * (2.0 * theta).sin();
        let head_y = hf * 0.14 + bob;
        canvas.fill_ellipse(head_y, cx, hf * 0.07, hf * 0.05);
        let hip_y = hf * 0.52 + bob;
        canvas.fill_ellipse(hf * 0.34 + bob, cx, hf * 0.19, hf * 0.085 * sig.amp);
        // legs swing in antiphase with class-specific stride angle
        for (side, ph) in [(1.0, 0.0), (-1.0, PI)] {
            let ang = stride * (theta + ph).sin() * sig.amp;
            let foot_y = hip_y + leg_len * hf * ang.cos();
            let foot_x = cx + side * wf * 0.02 + leg_len * hf * ang.sin();
            canvas.stroke(hip_y, cx + side * wf * 0.02, foot_y, foot_x, hf * 0.022);
        }
    }
    binarize(&mut frames);
    frames
}

fn planted_quadrant(
    config: &SynthConfig,
    quadrant: usize,
    class_idx: usize,
    rng: &mut Rng,
) -> Tensor {
    let (t_len, h, w) = (config.seq_len, config.height, config.width);
    let seq_phase = rng.gen::<f64>() * 2.0 * PI;
    let mut frames = Tensor::zeros(&[t_len, h, w]);
    let (hf, wf) = (h as f64, w as f64);
    // blob center inside the inner half of the planted quadrant
    let (qy0, qx0) = (
        if quadrant >= 2 { hf / 2.0 } else { 0.0 },
        if quadrant % 2 == 1 { wf / 2.0 } else { 0.0 },
    );
    let blob_r = hf.min(wf) * 0.10;
    let by = qy0 + hf / 4.0 + (rng.gen::<f64>() - 0.5) * (hf / 4.0 - blob_r).max(0.0);
    let bx = qx0 + wf / 4.0 + (rng.gen::<f64>() - 0.5) * (wf / 4.0 - blob_r).max(0.0);
    // class signal: blob radius pulses slowly (class 0) or fast (class 1);
    // everything outside the planted quadrant stays empty so localization
    // oracles can attribute all mass to it
    let pulse_omega = if class_idx == 0 { 2.0 * PI / 20.0 } else { 2.0 * PI / 5.0 };
    for t in 0..t_len {
        let start = t * h * w;
        let mut canvas = Canvas {
            data: &mut frames.data_mut()[start..start + h * w],
            h,
            w,
        };
        let r = blob_r * (0.6 + 0.4 * (pulse_omega * t as f64 + seq_phase).sin());
        if r >= 0.5 {
            canvas.fill_ellipse(by, bx, r, r);
        }
    }
    binarize(&mut frames);
    frames
}

fn binarize(t: &mut Tensor) {
    for v in t.data_mut() {
        *v = if *v > 0.5 { 1.0 } else { 0.0 };
    }
}
