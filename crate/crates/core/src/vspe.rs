//! "VSPE v1" tensor file format.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic   4 bytes  b"VSPE"
//! version 1 byte   0x01
//! rank    1 byte   1..=4
//! dims    rank x u32
//! values  product(dims) x f32, row-major
//! ```
//!
//! Readers promote values to f64; writers round to nearest-even f32 (the
//! rounding `as f32` performs).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: [u8; 4] = *b"VSPE";
const VERSION: u8 = 0x01;

pub fn write_to(w: &mut impl Write, t: &Tensor) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&[VERSION, t.rank() as u8])?;
    for &d in t.shape() {
        let d = u32::try_from(d)
            .map_err(|_| Error::Format(format!("dimension {d} exceeds u32 range")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    for &x in t.data() {
        w.write_all(&(x as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_from(r: &mut impl Read) -> Result<Tensor> {
    let mut head = [0u8; 6];
    r.read_exact(&mut head)
        .map_err(|_| Error::Format("file shorter than header".into()))?;
    if head[..4] != MAGIC {
        return Err(Error::Format("bad magic, expected `VSPE`".into()));
    }
    if head[4] != VERSION {
        return Err(Error::Format(format!("unsupported version {}", head[4])));
    }
    let rank = head[5] as usize;
    if !(1..=4).contains(&rank) {
        return Err(Error::Format(format!("rank {rank} outside 1..=4")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)
            .map_err(|_| Error::Format("truncated dimension list".into()))?;
        let d = u32::from_le_bytes(b) as usize;
        if d == 0 {
            return Err(Error::Format("zero dimension".into()));
        }
        shape.push(d);
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    let mut b = [0u8; 4];
    for _ in 0..n {
        r.read_exact(&mut b)
            .map_err(|_| Error::Format("truncated value data".into()))?;
        data.push(f32::from_le_bytes(b) as f64);
    }
    // trailing bytes are a format violation, not silently ignored
    let mut extra = [0u8; 1];
    match r.read(&mut extra)? {
        0 => Tensor::new(shape, data),
        _ => Err(Error::Format("trailing bytes after value data".into())),
    }
}

pub fn write_file(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_to(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn read_file(path: impl AsRef<Path>) -> Result<Tensor> {
    read_from(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{randn, SeededRng};

    fn round_trip(t: &Tensor) -> Tensor {
        let mut buf = Vec::new();
        write_to(&mut buf, t).unwrap();
        read_from(&mut buf.as_slice()).unwrap()
    }

    #[test]
    fn round_trips_through_f32() {
        let t = randn(vec![3, 5, 2], &SeededRng::new(9)).unwrap();
        let rt = round_trip(&t);
        assert_eq!(rt.shape(), t.shape());
        for (&a, &b) in t.data().iter().zip(rt.data()) {
            assert_eq!(b, a as f32 as f64);
        }
        // second pass is lossless: values are already f32-representable
        assert_eq!(round_trip(&rt), rt);
    }

    #[test]
    fn header_layout_is_bit_exact() {
        let t = Tensor::new(vec![2, 1], vec![1.0, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_to(&mut buf, &t).unwrap();
        let mut expect = b"VSPE\x01\x02".to_vec();
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&1.0f32.to_le_bytes());
        expect.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(buf, expect);
    }

    #[test]
    fn rejects_corrupt_input() {
        let t = Tensor::from_vec(vec![1.0, 2.0]).unwrap();
        let mut good = Vec::new();
        write_to(&mut good, &t).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(read_from(&mut bad_magic.as_slice()).is_err());

        let mut bad_version = good.clone();
        bad_version[4] = 2;
        assert!(read_from(&mut bad_version.as_slice()).is_err());

        let mut bad_rank = good.clone();
        bad_rank[5] = 5;
        assert!(read_from(&mut bad_rank.as_slice()).is_err());

        let truncated = &good[..good.len() - 2];
        assert!(read_from(&mut &truncated[..]).is_err());

        let mut trailing = good.clone();
        trailing.push(0);
        assert!(read_from(&mut trailing.as_slice()).is_err());
    }
}
