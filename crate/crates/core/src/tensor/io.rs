//! Flat binary tensor format.
//!
//! Header: magic `GLTB`, version u8, precision u8 (0 = single, 1 = double),
//! rank u8, extents as little-endian u32. Payload: little-endian IEEE-754.

use std::io::{Read, Write};

use super::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"GLTB";
const VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    Single,
    Double,
}

pub fn write_tensor(w: &mut impl Write, t: &Tensor, precision: Precision) -> Result<()> {
    if t.rank() > u8::MAX as usize {
        return Err(Error::Format("rank exceeds u8".into()));
    }
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION, if precision == Precision::Single { 0 } else { 1 }])?;
    w.write_all(&[t.rank() as u8])?;
    for &e in t.shape() {
        let e = u32::try_from(e).map_err(|_| Error::Format("extent exceeds u32".into()))?;
        w.write_all(&e.to_le_bytes())?;
    }
    match precision {
        Precision::Single => {
            for &v in t.data() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Precision::Double => {
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_tensor(r: &mut impl Read) -> Result<Tensor> {
    let mut head = [0u8; 7];
    r.read_exact(&mut head)?;
    if &head[0..4] != MAGIC {
        return Err(Error::Format("bad tensor magic".into()));
    }
    if head[4] != VERSION {
        return Err(Error::Format(format!("unsupported tensor version {}", head[4])));
    }
    let precision = match head[5] {
        0 => Precision::Single,
        1 => Precision::Double,
        p => return Err(Error::Format(format!("unknown precision byte {}", p))),
    };
    let rank = head[6] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        shape.push(u32::from_le_bytes(b) as usize);
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    match precision {
        Precision::Single => {
            for _ in 0..n {
                let mut b = [0u8; 4];
                r.read_exact(&mut b)?;
                data.push(f64::from(f32::from_le_bytes(b)));
            }
        }
        Precision::Double => {
            for _ in 0..n {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
        }
    }
    Tensor::new(shape, data)
}

pub fn save_tensor(path: &std::path::Path, t: &Tensor, precision: Precision) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_tensor(&mut f, t, precision)
}

pub fn load_tensor(path: &std::path::Path) -> Result<Tensor> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_tensor(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn double_round_trip_is_exact() {
        let t = Tensor::new(vec![2, 3], vec![1.5, -2.25, 0.0, 1e-300, 7.0, -0.5]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t, Precision::Double).unwrap();
        let back = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn single_narrows() {
        let t = Tensor::from_vec(vec![1.0 / 3.0]);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t, Precision::Single).unwrap();
        let back = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(back.data()[0], f64::from(1.0f32 / 3.0f32));
    }

    #[test]
    fn bad_magic_rejected() {
        let buf = b"NOPE\x01\x01\x01\x02\x00\x00\x00".to_vec();
        assert!(read_tensor(&mut buf.as_slice()).is_err());
    }
}
