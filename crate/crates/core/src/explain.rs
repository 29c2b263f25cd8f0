//! Post-hoc explainability: Grad-CAM spatial heatmaps over convolutional
//! activations and Shapley-value temporal attributions over frames.

use std::io::Write as _;
use std::path::Path;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::models::ModelGraph;
use crate::rng::rng_from;
use crate::tensor::Tensor;

/// Exact Shapley enumeration is capped at 2^12 coalition evaluations.
pub const EXACT_UNIT_LIMIT: usize = 12;

/// Scalar score of a single (unbatched) sequence; the unit Shapley
/// attributions are computed against. Implemented by [`ModelScorer`] and by
/// analytic surrogates in tests.
pub trait SeqScorer {
    fn score(&mut self, seq: &Tensor) -> Result<f64>;
}

/// Scores a sequence as one target logit of a model in eval mode.
pub struct ModelScorer<'a> {
    pub model: &'a mut ModelGraph,
    pub target_logit: usize,
}

impl SeqScorer for ModelScorer<'_> {
    fn score(&mut self, seq: &Tensor) -> Result<f64> {
        let mut shape = vec![1];
        shape.extend_from_slice(seq.shape());
        let batch = seq.reshape(&shape)?;
        let out = self.model.forward(&batch, Mode::Eval)?;
        out.data()
            .get(self.target_logit)
            .copied()
            .ok_or_else(|| Error::config(format!("target logit {} out of range", self.target_logit)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    /// Masked frames become all-zero frames ("absent" pose/silhouette).
    ZeroFrames,
    /// Masked frames become the sequence's temporal mean frame.
    MeanFrame,
}

impl Baseline {
    pub fn as_str(&self) -> &'static str {
        match self {
            Baseline::ZeroFrames => "zero-frames",
            Baseline::MeanFrame => "mean-frame",
        }
    }

    pub fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero-frames" => Ok(Baseline::ZeroFrames),
            "mean-frame" => Ok(Baseline::MeanFrame),
            _ => Err(Error::config(format!("unknown baseline '{}'", s))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapMode {
    Exact,
    /// Seeded permutation sampling with the given permutation count.
    Sampled { n_samples: usize },
}

#[derive(Clone, Debug)]
pub struct ShapAttribution {
    /// One value per frame; grouped units split their value equally over
    /// member frames so the per-frame sum still telescopes.
    pub phi: Vec<f64>,
    pub baseline: Baseline,
    pub mode: ShapMode,
    pub f_x: f64,
    pub f_baseline: f64,
}

impl ShapAttribution {
    /// `|Σφ − (f(x) − f(baseline))|`; < 1e-6 in exact mode.
    pub fn efficiency_residual(&self) -> f64 {
        (self.phi.iter().sum::<f64>() - (self.f_x - self.f_baseline)).abs()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame_index,phi\n");
        for (t, phi) in self.phi.iter().enumerate() {
            out.push_str(&format!("{},{:?}\n", t, phi));
        }
        out
    }
}

fn baseline_frames(seq: &Tensor, baseline: Baseline) -> Tensor {
    match baseline {
        Baseline::ZeroFrames => Tensor::zeros(seq.shape()),
        Baseline::MeanFrame => {
            let t = seq.shape()[0];
            let per = seq.len() / t;
            let mut mean = vec![0.0; per];
            for ti in 0..t {
                for i in 0..per {
                    mean[i] += seq.data()[ti * per + i];
                }
            }
            for v in &mut mean {
                *v /= t as f64;
            }
            let mut data = Vec::with_capacity(seq.len());
            for _ in 0..t {
                data.extend_from_slice(&mean);
            }
            Tensor::new(seq.shape().to_vec(), data).expect("same shape")
        }
    }
}

/// Contiguous frame ranges forming the attribution units; `group_size = 1`
/// is per-frame attribution.
fn unit_ranges(t: usize, group_size: usize) -> Vec<(usize, usize)> {
    let mut units = Vec::new();
    let mut start = 0;
    while start < t {
        let end = (start + group_size).min(t);
        units.push((start, end));
        start = end;
    }
    units
}

/// Compose a coalition input: frames in present units keep real content,
/// the rest take baseline frames.
fn mask_input(
    seq: &Tensor,
    base: &Tensor,
    units: &[(usize, usize)],
    present: u64,
) -> Tensor {
    let t = seq.shape()[0];
    let per = seq.len() / t;
    let mut data = base.data().to_vec();
    for (u, &(s, e)) in units.iter().enumerate() {
        if present & (1 << u) != 0 {
            data[s * per..e * per].copy_from_slice(&seq.data()[s * per..e * per]);
        }
    }
    Tensor::new(seq.shape().to_vec(), data).expect("same shape")
}

/// Shapley attribution of the scorer's output over temporal units.
///
/// Exact mode enumerates all 2^n coalitions (n ≤ 12) and satisfies
/// efficiency, dummy, and symmetry exactly; sampled mode averages marginal
/// contributions over seeded permutations.
pub fn shap_temporal<S: SeqScorer>(
    scorer: &mut S,
    seq: &Tensor,
    baseline: Baseline,
    mode: ShapMode,
    group_size: usize,
    seed: u64,
) -> Result<ShapAttribution> {
    if seq.rank() < 2 {
        return Err(Error::shape("shap expects a [T, ...] sequence"));
    }
    if group_size == 0 {
        return Err(Error::config("group_size must be >= 1"));
    }
    let t = seq.shape()[0];
    let units = unit_ranges(t, group_size);
    let n = units.len();
    let base = baseline_frames(seq, baseline);

    let mut unit_phi = vec![0.0; n];
    let (f_x, f_baseline);
    match mode {
        ShapMode::Exact => {
            if n > EXACT_UNIT_LIMIT {
                return Err(Error::config(format!(
                    "exact mode supports at most {} units, got {}; use sampled mode or a larger group size",
                    EXACT_UNIT_LIMIT, n
                )));
            }
            // one evaluation per coalition bitmask
            let mut values = vec![0.0; 1usize << n];
            for mask in 0..(1usize << n) {
                values[mask] = scorer.score(&mask_input(seq, &base, &units, mask as u64))?;
            }
            f_baseline = values[0];
            f_x = values[(1usize << n) - 1];
            // precomputed |S|!(n-|S|-1)!/n! by coalition size
            let mut fact = vec![1.0; n + 1];
            for i in 1..=n {
                fact[i] = fact[i - 1] * i as f64;
            }
            let weight: Vec<f64> = (0..n).map(|s| fact[s] * fact[n - s - 1] / fact[n]).collect();
            for i in 0..n {
                for mask in 0..(1usize << n) {
                    if mask & (1 << i) != 0 {
                        continue;
                    }
                    let s = (mask as u64).count_ones() as usize;
                    unit_phi[i] += weight[s] * (values[mask | (1 << i)] - values[mask]);
                }
            }
        }
        ShapMode::Sampled { n_samples } => {
            if n_samples == 0 {
                return Err(Error::config("sampled mode needs n_samples >= 1"));
            }
            f_baseline = scorer.score(&base)?;
            f_x = scorer.score(seq)?;
            let mut rng = rng_from(seed);
            let mut order: Vec<usize> = (0..n).collect();
            for _ in 0..n_samples {
                for i in (1..n).rev() {
                    let j = rng.gen_range(0..=i);
                    order.swap(i, j);
                }
                let mut mask: u64 = 0;
                let mut prev = f_baseline;
                for &u in &order {
                    mask |= 1 << u;
                    let v = if mask == (1u64 << n) - 1 {
                        f_x
                    } else {
                        scorer.score(&mask_input(seq, &base, &units, mask))?
                    };
                    unit_phi[u] += v - prev;
                    prev = v;
                }
            }
            for p in &mut unit_phi {
                *p /= n_samples as f64;
            }
        }
    }

    // spread each unit's value equally over its frames
    let mut phi = vec![0.0; t];
    for (u, &(s, e)) in units.iter().enumerate() {
        let share = unit_phi[u] / (e - s) as f64;
        for item in phi.iter_mut().take(e).skip(s) {
            *item = share;
        }
    }
    Ok(ShapAttribution {
        phi,
        baseline,
        mode,
        f_x,
        f_baseline,
    })
}

/// Grad-CAM heatmaps normalized to [0, 1].
#[derive(Clone, Debug)]
pub struct GradCamMap {
    /// One map per retained temporal slice for the 3D branch (`[H, W]`
    /// each, upsampled to input spatial size); a single `[T]` map for the
    /// 1D branch.
    pub maps: Vec<Tensor>,
    pub layer: usize,
    pub target_logit: usize,
}

/// Nearest-neighbor upsample of `[h, w]` to `[th, tw]`:
/// `src = floor(dst * src_extent / dst_extent)`.
fn upsample2d(map: &[f64], h: usize, w: usize, th: usize, tw: usize) -> Tensor {
    let mut out = Tensor::zeros(&[th, tw]);
    for i in 0..th {
        let si = i * h / th;
        for j in 0..tw {
            let sj = j * w / tw;
            out.data_mut()[i * tw + j] = map[si * w + sj];
        }
    }
    out
}

fn upsample1d(map: &[f64], l: usize, tl: usize) -> Tensor {
    let mut out = Tensor::zeros(&[tl]);
    for i in 0..tl {
        out.data_mut()[i] = map[i * l / tl];
    }
    out
}

/// Grad-CAM at a convolution layer for one (unbatched) input: channel
/// weights are the spatial mean of the target-logit gradient, the map is
/// the ReLU of the weighted activation sum, upsampled to input size and
/// normalized by the global max (an all-zero map stays zero).
pub fn grad_cam(
    model: &mut ModelGraph,
    input: &Tensor,
    target_logit: usize,
    layer: usize,
) -> Result<GradCamMap> {
    let kind = model.layer_kind(layer)?;
    if kind != "conv1d" && kind != "conv3d" {
        return Err(Error::config(format!(
            "grad-cam target layer {} is '{}', not a convolution",
            layer, kind
        )));
    }
    let mut shape = vec![1];
    shape.extend_from_slice(input.shape());
    let batch = input.reshape(&shape)?;
    let out = model.forward(&batch, Mode::Eval)?;
    if target_logit >= out.len() {
        return Err(Error::config(format!("target logit {} out of range", target_logit)));
    }
    let mut upstream = Tensor::zeros(out.shape());
    upstream.data_mut()[target_logit] = 1.0;
    model.zero_grad();
    let grads = model.backward_to(layer + 1, &upstream)?;
    let acts = model.layer_output(layer)?.clone();
    if grads.shape() != acts.shape() {
        return Err(Error::State("gradient/activation shape mismatch".into()));
    }

    let mut maps = Vec::new();
    match kind {
        "conv1d" => {
            // activations [1, C, L]
            let (c, l) = (acts.shape()[1], acts.shape()[2]);
            let mut map = vec![0.0; l];
            for ci in 0..c {
                let g = &grads.data()[ci * l..(ci + 1) * l];
                let a = &acts.data()[ci * l..(ci + 1) * l];
                let w: f64 = g.iter().sum::<f64>() / l as f64;
                for x in 0..l {
                    map[x] += w * a[x];
                }
            }
            for v in &mut map {
                *v = v.max(0.0);
            }
            maps.push(upsample1d(&map, l, input.shape()[0]));
        }
        _ => {
            // activations [1, C, D, H, W]; per-slice channel weights
            let (c, d, h, w) = (acts.shape()[1], acts.shape()[2], acts.shape()[3], acts.shape()[4]);
            let (in_h, in_w) = (input.shape()[1], input.shape()[2]);
            for di in 0..d {
                let mut map = vec![0.0; h * w];
                for ci in 0..c {
                    let off = (ci * d + di) * h * w;
                    let g = &grads.data()[off..off + h * w];
                    let a = &acts.data()[off..off + h * w];
                    let wgt: f64 = g.iter().sum::<f64>() / (h * w) as f64;
                    for x in 0..h * w {
                        map[x] += wgt * a[x];
                    }
                }
                for v in &mut map {
                    *v = v.max(0.0);
                }
                maps.push(upsample2d(&map, h, w, in_h, in_w));
            }
        }
    }
    let global_max = maps
        .iter()
        .flat_map(|m| m.iter().copied())
        .fold(0.0f64, f64::max);
    if global_max > 0.0 {
        for m in &mut maps {
            for v in m.data_mut() {
                *v /= global_max;
            }
        }
    }
    Ok(GradCamMap {
        maps,
        layer,
        target_logit,
    })
}

/// Blend a normalized heatmap over a binary/grayscale underlay and encode
/// as a binary PPM (`P6`): every channel is `round(255 * (0.5*under +
/// 0.5*map))`.
pub fn render_heatmap(map: &Tensor, underlay: &Tensor) -> Result<Vec<u8>> {
    if map.rank() != 2 || underlay.rank() != 2 || map.shape() != underlay.shape() {
        return Err(Error::shape("heatmap/underlay must be matching [H, W]"));
    }
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let mut out = Vec::with_capacity(32 + 3 * h * w);
    write!(out, "P6\n{} {}\n255\n", w, h)?;
    for i in 0..h * w {
        let v = 255.0 * (0.5 * underlay.data()[i] + 0.5 * map.data()[i]);
        let byte = v.round().clamp(0.0, 255.0) as u8;
        out.extend([byte, byte, byte]);
    }
    Ok(out)
}

pub fn write_heatmap(path: &Path, map: &Tensor, underlay: &Tensor) -> Result<()> {
    std::fs::write(path, render_heatmap(map, underlay)?)?;
    Ok(())
}
