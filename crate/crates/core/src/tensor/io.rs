//! Raw tensor file format.
//!
//! ```text
//! magic    "TKTN"          4 bytes
//! version  u32 LE
//! dtype    u8              0 = f32, 1 = f16, 2 = f64
//! rank     u8
//! extents  u64 LE x rank
//! data     little-endian elements, row-major
//! ```

use std::io::{Read, Write};

use half::f16;

use super::{Precision, Storage, Tensor};
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"TKTN";
pub const TENSOR_VERSION: u32 = 1;

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&TENSOR_VERSION.to_le_bytes())?;
    w.write_all(&[t.precision().code(), t.rank() as u8])?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.payload_bytes());
    match t.storage() {
        Storage::F16(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        Storage::F32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        Storage::F64(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format(format!("truncated tensor: missing {what}"))
        } else {
            Error::RawIo(e)
        }
    })
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "magic")?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Format(format!("bad tensor magic {magic:?}")));
    }
    let mut b4 = [0u8; 4];
    read_exact(r, &mut b4, "version")?;
    let version = u32::from_le_bytes(b4);
    if version != TENSOR_VERSION {
        return Err(Error::Format(format!("unsupported tensor version {version}")));
    }
    let mut hdr = [0u8; 2];
    read_exact(r, &mut hdr, "dtype/rank")?;
    let precision = Precision::from_code(hdr[0])
        .ok_or_else(|| Error::Format(format!("unknown dtype code {}", hdr[0])))?;
    let rank = hdr[1] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b8 = [0u8; 8];
        read_exact(r, &mut b8, "extent")?;
        shape.push(usize::try_from(u64::from_le_bytes(b8)).map_err(|_| Error::Format("extent overflow".into()))?);
    }
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("element count overflow".into()))?;
    let nbytes = numel
        .checked_mul(precision.size_bytes())
        .ok_or_else(|| Error::Format("payload size overflow".into()))?;
    let mut raw = vec![0u8; nbytes];
    read_exact(r, &mut raw, "element data")?;
    let storage = match precision {
        Precision::F16 => Storage::F16(
            raw.chunks_exact(2)
                .map(|c| f16::from_le_bytes([c[0], c[1]]))
                .collect(),
        ),
        Precision::F32 => Storage::F32(
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ),
        Precision::F64 => Storage::F64(
            raw.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect(),
        ),
    };
    Tensor::new(&shape, storage)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::uniform;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::from_f32(&[2, 1], &[1.0, -2.0], Precision::F32).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let mut want = Vec::new();
        want.extend_from_slice(b"TKTN");
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&[0u8, 2u8]);
        want.extend_from_slice(&2u64.to_le_bytes());
        want.extend_from_slice(&1u64.to_le_bytes());
        want.extend_from_slice(&1.0f32.to_le_bytes());
        want.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(buf, want);
    }

    #[test]
    fn bad_magic_and_truncation_are_errors() {
        let t = Tensor::zeros(&[3], Precision::F16);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_tensor(&mut bad.as_slice()), Err(Error::Format(_))));
        let short = &buf[..buf.len() - 1];
        assert!(matches!(read_tensor(&mut &short[..]), Err(Error::Format(_))));
        let mut unknown = buf.clone();
        unknown[8] = 9;
        assert!(read_tensor(&mut unknown.as_slice()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_is_bit_exact(dims in proptest::collection::vec(0usize..5, 0..5), code in 0u8..3, seed in 0u64..100) {
            let p = Precision::from_code(code).unwrap();
            let t = uniform(&dims, -10.0, 10.0, seed, p);
            let mut buf = Vec::new();
            write_tensor(&mut buf, &t).unwrap();
            let back = read_tensor(&mut buf.as_slice()).unwrap();
            prop_assert!(back.bit_eq(&t));
        }
    }
}
