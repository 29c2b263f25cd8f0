//! On-disk dataset formats.
//!
//! - Manifest: text, one row per sample: `path,subject_id,label`; paths are
//!   relative to the manifest's directory.
//! - Joint sequence: numeric text, one row per frame, 36 comma-separated
//!   columns.
//! - Silhouette sequence: one directory per sequence holding binary PGM
//!   (`P5`) frames with zero-padded indices, plus a `frames.txt` descriptor
//!   that lists frame order.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{DatasetManifest, ManifestEntry, Modality, Sequence, JOINT_FEATURES};

pub const MANIFEST_NAME: &str = "manifest.csv";

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    manifest.validate()?;
    let mut out = String::new();
    out.push_str(&format!("# modality: {}\n", manifest.modality.as_str()));
    for e in &manifest.entries {
        if e.path.contains(',') || e.subject_id.contains(',') || e.label.contains(',') {
            return Err(Error::Format("manifest fields must not contain commas".into()));
        }
        out.push_str(&format!("{},{},{}\n", e.path, e.subject_id, e.label));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path)?;
    let mut modality = None;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(m) = rest.trim().strip_prefix("modality:") {
                modality = Some(Modality::from_str(m.trim())?);
            }
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::Format(format!(
                "{}:{}: expected `path,subject_id,label`",
                path.display(),
                lineno + 1
            )));
        }
        entries.push(ManifestEntry {
            path: parts[0].trim().to_string(),
            subject_id: parts[1].trim().to_string(),
            label: parts[2].trim().to_string(),
        });
    }
    let modality = modality.unwrap_or_else(|| {
        // fall back on the first entry's file shape: directories hold
        // silhouette frames, files hold joint rows
        let dir = path.parent().unwrap_or(Path::new("."));
        match entries.first() {
            Some(e) if dir.join(&e.path).is_dir() => Modality::Silhouettes,
            _ => Modality::Joints,
        }
    });
    let manifest = DatasetManifest { entries, modality };
    manifest.validate()?;
    Ok(manifest)
}

pub fn write_joints(path: &Path, frames: &Tensor) -> Result<()> {
    if frames.rank() != 2 || frames.shape()[1] != JOINT_FEATURES {
        return Err(Error::shape("joint sequence must be [T, 36]"));
    }
    let f = fs::File::create(path)?;
    let mut w = BufWriter::new(f);
    let cols = frames.shape()[1];
    for t in 0..frames.shape()[0] {
        let row: Vec<String> = (0..cols)
            .map(|j| format!("{:?}", frames.data()[t * cols + j]))
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_joints(path: &Path) -> Result<Tensor> {
    let text = fs::read_to_string(path)?;
    let mut data = Vec::new();
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| {
                v.trim().parse::<f64>().map_err(|_| {
                    Error::Format(format!("{}:{}: bad number '{}'", path.display(), lineno + 1, v))
                })
            })
            .collect::<Result<_>>()?;
        if vals.len() != JOINT_FEATURES {
            return Err(Error::Format(format!(
                "{}:{}: expected {} columns, got {}",
                path.display(),
                lineno + 1,
                JOINT_FEATURES,
                vals.len()
            )));
        }
        data.extend(vals);
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Format(format!("{}: empty joint sequence", path.display())));
    }
    Tensor::new(vec![rows, JOINT_FEATURES], data)
}

/// Binary (`P5`) PGM; values are 0 or 255 on write, read back as 0/1 with
/// a > 127 threshold.
pub fn write_pgm(path: &Path, img: &Tensor) -> Result<()> {
    if img.rank() != 2 {
        return Err(Error::shape("PGM frame must be [H, W]"));
    }
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let f = fs::File::create(path)?;
    let mut out = BufWriter::new(f);
    write!(out, "P5\n{} {}\n255\n", w, h)?;
    let bytes: Vec<u8> = img.iter().map(|&v| if v > 0.5 { 255 } else { 0 }).collect();
    out.write_all(&bytes)?;
    out.flush()?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |msg: &str| Error::Format(format!("{}: {}", path.display(), msg));
    // header: magic, width, height, maxval as whitespace-separated tokens
    let mut pos = 0;
    let mut token = || -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(bad("not a binary PGM (expected P5)"));
    }
    let w: usize = token()?.parse().map_err(|_| bad("bad width"))?;
    let h: usize = token()?.parse().map_err(|_| bad("bad height"))?;
    let maxval: usize = token()?.parse().map_err(|_| bad("bad maxval"))?;
    if maxval == 0 || maxval > 255 {
        return Err(bad("unsupported maxval"));
    }
    pos += 1; // single whitespace after maxval
    if bytes.len() < pos + h * w {
        return Err(bad("truncated pixel payload"));
    }
    let data: Vec<f64> = bytes[pos..pos + h * w]
        .iter()
        .map(|&b| if b > 127 { 1.0 } else { 0.0 })
        .collect();
    Tensor::new(vec![h, w], data)
}

pub fn write_silhouette_sequence(dir: &Path, frames: &Tensor) -> Result<()> {
    if frames.rank() != 3 {
        return Err(Error::shape("silhouette sequence must be [T, H, W]"));
    }
    fs::create_dir_all(dir)?;
    let (t_len, h, w) = (frames.shape()[0], frames.shape()[1], frames.shape()[2]);
    let mut order = String::new();
    for t in 0..t_len {
        let name = format!("frame_{:04}.pgm", t);
        let frame = Tensor::new(
            vec![h, w],
            frames.data()[t * h * w..(t + 1) * h * w].to_vec(),
        )?;
        write_pgm(&dir.join(&name), &frame)?;
        order.push_str(&name);
        order.push('\n');
    }
    fs::write(dir.join("frames.txt"), order)?;
    Ok(())
}

pub fn read_silhouette_sequence(dir: &Path) -> Result<Tensor> {
    let listing = fs::read_to_string(dir.join("frames.txt"))
        .map_err(|e| Error::Format(format!("{}: missing frames.txt ({})", dir.display(), e)))?;
    let names: Vec<&str> = listing.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    if names.is_empty() {
        return Err(Error::Format(format!("{}: empty frames.txt", dir.display())));
    }
    let first = read_pgm(&dir.join(names[0]))?;
    let (h, w) = (first.shape()[0], first.shape()[1]);
    let mut data = Vec::with_capacity(names.len() * h * w);
    data.extend_from_slice(first.data());
    for name in &names[1..] {
        let frame = read_pgm(&dir.join(name))?;
        if frame.shape() != [h, w] {
            return Err(Error::Format(format!(
                "{}: frame {} shape {:?} != [{}, {}]",
                dir.display(),
                name,
                frame.shape(),
                h,
                w
            )));
        }
        data.extend_from_slice(frame.data());
    }
    Tensor::new(vec![names.len(), h, w], data)
}

/// Write samples plus a manifest under `dir`; returns the manifest path.
pub fn write_dataset(dir: &Path, samples: &[Sequence], modality: Modality) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let rel = match modality {
            Modality::Joints => {
                let rel = format!("seq_{:05}.csv", i);
                write_joints(&dir.join(&rel), &s.frames)?;
                rel
            }
            Modality::Silhouettes => {
                let rel = format!("seq_{:05}", i);
                write_silhouette_sequence(&dir.join(&rel), &s.frames)?;
                rel
            }
        };
        entries.push(ManifestEntry {
            path: rel,
            subject_id: s.subject_id.clone(),
            label: s.label.clone(),
        });
    }
    let manifest = DatasetManifest { entries, modality };
    let path = dir.join(MANIFEST_NAME);
    write_manifest(&path, &manifest)?;
    Ok(path)
}

/// Load every sample referenced by a manifest, in manifest order.
pub fn load_dataset(manifest_path: &Path) -> Result<(DatasetManifest, Vec<Sequence>)> {
    let manifest = read_manifest(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut samples = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let frames = match manifest.modality {
            Modality::Joints => read_joints(&dir.join(&e.path))?,
            Modality::Silhouettes => read_silhouette_sequence(&dir.join(&e.path))?,
        };
        samples.push(Sequence {
            frames,
            subject_id: e.subject_id.clone(),
            label: e.label.clone(),
        });
    }
    Ok((manifest, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::synth::{synth_generate, SynthConfig};

    #[test]
    fn joints_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let frames = Tensor::new(
            vec![3, JOINT_FEATURES],
            (0..3 * JOINT_FEATURES).map(|i| (i as f64) * 0.1 - 1.7).collect(),
        )
        .unwrap();
        let path = dir.path().join("seq.csv");
        write_joints(&path, &frames).unwrap();
        assert_eq!(read_joints(&path).unwrap(), frames);
    }

    #[test]
    fn pgm_round_trip_preserves_binary_frames() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Tensor::zeros(&[5, 7]);
        img.set(&[0, 0], 1.0).unwrap();
        img.set(&[4, 6], 1.0).unwrap();
        img.set(&[2, 3], 1.0).unwrap();
        let path = dir.path().join("f.pgm");
        write_pgm(&path, &img).unwrap();
        assert_eq!(read_pgm(&path).unwrap(), img);
    }

    #[test]
    fn silhouette_sequence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut frames = Tensor::zeros(&[4, 6, 5]);
        for t in 0..4 {
            frames.set(&[t, t, t], 1.0).unwrap();
        }
        let seq_dir = dir.path().join("seq");
        write_silhouette_sequence(&seq_dir, &frames).unwrap();
        assert_eq!(read_silhouette_sequence(&seq_dir).unwrap(), frames);
    }

    #[test]
    fn dataset_round_trip_both_modalities() {
        for modality in [Modality::Joints, Modality::Silhouettes] {
            let dir = tempfile::tempdir().unwrap();
            let mut cfg = match modality {
                Modality::Joints => SynthConfig::joints(&["normal", "lurch"], 2, 2, 1),
                Modality::Silhouettes => SynthConfig::silhouettes(&["a", "b"], 2, 2, 1),
            };
            cfg.seq_len = 4;
            if modality == Modality::Silhouettes {
                cfg.height = 12;
                cfg.width = 10;
            }
            let samples = synth_generate(&cfg).unwrap();
            let manifest_path = write_dataset(dir.path(), &samples, modality).unwrap();
            let (manifest, loaded) = load_dataset(&manifest_path).unwrap();
            assert_eq!(manifest.modality, modality);
            assert_eq!(loaded.len(), samples.len());
            for (a, b) in samples.iter().zip(&loaded) {
                assert_eq!(a.subject_id, b.subject_id);
                assert_eq!(a.label, b.label);
                if modality == Modality::Joints {
                    assert_eq!(a.frames, b.frames);
                } else {
                    // silhouettes are binary so the round trip is exact
                    assert_eq!(a.frames, b.frames);
                }
            }
        }
    }

    #[test]
    fn malformed_manifest_row_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        std::fs::write(&path, "only_two,fields\n").unwrap();
        assert!(read_manifest(&path).is_err());
    }
}
