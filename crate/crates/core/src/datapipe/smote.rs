//! Minority-class oversampling by interpolation between nearest neighbors.

use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::tensor::Tensor;
use rand::Rng as _;

/// Raise every minority class up to the majority count. Each synthetic row
/// is `x + u * (nn - x)` for a uniformly drawn base row `x` of the class,
/// one of its `k` nearest same-class neighbors `nn` (Euclidean), and
/// `u ~ U[0, 1)`. Returns the original rows followed by synthetic rows.
pub fn smote_oversample(
    features: &Tensor,
    labels: &[usize],
    k: usize,
    seed: u64,
) -> Result<(Tensor, Vec<usize>)> {
    if features.rank() != 2 {
        return Err(Error::shape("smote expects [N, F] features"));
    }
    let (n, f) = (features.shape()[0], features.shape()[1]);
    if labels.len() != n {
        return Err(Error::shape("labels length vs feature rows"));
    }
    if k == 0 {
        return Err(Error::config("k must be >= 1"));
    }
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }
    let majority = by_class.iter().map(Vec::len).max().unwrap_or(0);

    let mut out_rows: Vec<f64> = features.data().to_vec();
    let mut out_labels: Vec<usize> = labels.to_vec();
    let mut rng = rng_from(seed);

    let row = |i: usize| &features.data()[i * f..(i + 1) * f];

    for (class, members) in by_class.iter().enumerate() {
        let deficit = majority - members.len();
        if deficit == 0 || members.is_empty() {
            continue;
        }
        if members.len() == 1 {
            return Err(Error::Data(format!(
                "class {} has a single sample; cannot interpolate",
                class
            )));
        }
        if k > members.len() - 1 {
            return Err(Error::config(format!(
                "k = {} exceeds class {} size - 1 = {}",
                k,
                class,
                members.len() - 1
            )));
        }
        // k nearest same-class neighbors per member, ties broken by index
        let mut neighbors: Vec<Vec<usize>> = Vec::with_capacity(members.len());
        for &i in members {
            let mut dists: Vec<(f64, usize)> = members
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| {
                    let d: f64 = row(i)
                        .iter()
                        .zip(row(j))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (d, j)
                })
                .collect();
            dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
            neighbors.push(dists[..k].iter().map(|&(_, j)| j).collect());
        }
        for _ in 0..deficit {
            let base_idx = rng.gen_range(0..members.len());
            let base = members[base_idx];
            let nn = neighbors[base_idx][rng.gen_range(0..k)];
            let u: f64 = rng.gen::<f64>();
            for col in 0..f {
                let x = row(base)[col];
                out_rows.push(x + u * (row(nn)[col] - x));
            }
            out_labels.push(class);
        }
    }
    let total = out_labels.len();
    Ok((Tensor::new(vec![total, f], out_rows)?, out_labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balances_9_3_to_9_9() {
        // 9 of class 0, 3 of class 1
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..9 {
            rows.extend([i as f64, 0.0]);
            labels.push(0);
        }
        for i in 0..3 {
            rows.extend([100.0 + i as f64, 5.0]);
            labels.push(1);
        }
        let feats = Tensor::new(vec![12, 2], rows).unwrap();
        let (out, out_labels) = smote_oversample(&feats, &labels, 2, 11).unwrap();
        assert_eq!(out.shape(), &[18, 2]);
        assert_eq!(out_labels.iter().filter(|&&c| c == 0).count(), 9);
        assert_eq!(out_labels.iter().filter(|&&c| c == 1).count(), 9);
        // originals preserved verbatim at the front
        assert_eq!(&out.data()[..24], feats.data());
        // synthetics stay inside the class-1 bounding box
        for i in 12..18 {
            assert_eq!(out_labels[i], 1);
            let x = out.at(&[i, 0]).unwrap();
            let y = out.at(&[i, 1]).unwrap();
            assert!((100.0..=102.0).contains(&x), "x {}", x);
            assert_eq!(y, 5.0);
        }
    }

    #[test]
    fn balanced_input_is_unchanged() {
        let feats = Tensor::new(vec![4, 1], vec![0.0, 1.0, 10.0, 11.0]).unwrap();
        let labels = vec![0, 0, 1, 1];
        let (out, out_labels) = smote_oversample(&feats, &labels, 1, 0).unwrap();
        assert_eq!(out, feats);
        assert_eq!(out_labels, labels);
    }

    #[test]
    fn singleton_minority_errors() {
        let feats = Tensor::new(vec![3, 1], vec![0.0, 1.0, 10.0]).unwrap();
        assert!(smote_oversample(&feats, &[0, 0, 1], 1, 0).is_err());
    }

    #[test]
    fn k_out_of_range_errors() {
        let feats = Tensor::new(vec![5, 1], vec![0.0, 1.0, 2.0, 10.0, 11.0]).unwrap();
        let labels = [0, 0, 0, 1, 1];
        assert!(smote_oversample(&feats, &labels, 2, 0).is_err()); // class 1 size 2
        assert!(smote_oversample(&feats, &labels, 0, 0).is_err());
        assert!(smote_oversample(&feats, &labels, 1, 0).is_ok());
    }

    #[test]
    fn deterministic_under_seed() {
        let feats = Tensor::new(vec![5, 1], vec![0.0, 1.0, 2.0, 10.0, 11.0]).unwrap();
        let labels = [0, 0, 0, 1, 1];
        let a = smote_oversample(&feats, &labels, 1, 42).unwrap();
        let b = smote_oversample(&feats, &labels, 1, 42).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }
}
