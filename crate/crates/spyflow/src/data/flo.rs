//! Middlebury .flo interchange format: little-endian f32 tag 202021.25,
//! i32 width, i32 height, then h*w interleaved (u, v) f32 pairs row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::flow::FlowField;

pub const FLO_TAG: f32 = 202021.25;

pub fn write_flo(flow: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let to_err = |e| Error::io(path.display().to_string(), e);
    let mut w = BufWriter::new(File::create(path).map_err(to_err)?);
    w.write_all(&FLO_TAG.to_le_bytes()).map_err(to_err)?;
    w.write_all(&(flow.width as i32).to_le_bytes()).map_err(to_err)?;
    w.write_all(&(flow.height as i32).to_le_bytes()).map_err(to_err)?;
    for y in 0..flow.height {
        for x in 0..flow.width {
            w.write_all(&flow.u_at(x, y).to_le_bytes()).map_err(to_err)?;
            w.write_all(&flow.v_at(x, y).to_le_bytes()).map_err(to_err)?;
        }
    }
    w.flush().map_err(to_err)
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(display.clone(), e))?;
    let size = file
        .metadata()
        .map_err(|e| Error::io(display.clone(), e))?
        .len();
    let mut r = BufReader::new(file);
    let fail = |offset: u64, reason: String| Error::Format {
        path: display.clone(),
        offset,
        reason,
    };
    let mut head = [0u8; 12];
    r.read_exact(&mut head)
        .map_err(|_| fail(0, "file shorter than the 12-byte header".into()))?;
    let tag = f32::from_le_bytes(head[0..4].try_into().unwrap());
    if tag != FLO_TAG {
        return Err(fail(0, format!("bad tag {tag}, expected {FLO_TAG}")));
    }
    let width = i32::from_le_bytes(head[4..8].try_into().unwrap());
    let height = i32::from_le_bytes(head[8..12].try_into().unwrap());
    if width <= 0 || height <= 0 || width > 1 << 20 || height > 1 << 20 {
        return Err(fail(4, format!("invalid dimensions {width}x{height}")));
    }
    let (w, h) = (width as usize, height as usize);
    let expected = 12 + (w * h * 8) as u64;
    if size != expected {
        return Err(fail(
            12,
            format!("payload size {size} bytes, expected {expected} for {w}x{h}"),
        ));
    }
    let mut raw = vec![0u8; w * h * 8];
    r.read_exact(&mut raw)
        .map_err(|_| fail(12, "truncated payload".into()))?;
    let mut flow = FlowField::zeros(w, h);
    for i in 0..w * h {
        flow.u[i] = f32::from_le_bytes(raw[i * 8..i * 8 + 4].try_into().unwrap());
        flow.v[i] = f32::from_le_bytes(raw[i * 8 + 4..i * 8 + 8].try_into().unwrap());
    }
    Ok(flow)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_by_one_golden_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.flo");
        let mut f = FlowField::zeros(1, 1);
        f.set(0, 0, 1.0, -1.0);
        write_flo(&f, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 20);
        let mut golden = Vec::new();
        golden.extend_from_slice(&202021.25f32.to_le_bytes());
        golden.extend_from_slice(&1i32.to_le_bytes());
        golden.extend_from_slice(&1i32.to_le_bytes());
        golden.extend_from_slice(&1.0f32.to_le_bytes());
        golden.extend_from_slice(&(-1.0f32).to_le_bytes());
        assert_eq!(bytes, golden);
        assert_eq!(i32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(i32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
    }

    #[test]
    fn zero_tag_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.flo");
        std::fs::write(&p, [0u8; 20]).unwrap();
        let err = read_flo(&p).unwrap_err();
        assert!(err.to_string().contains("tag"), "{err}");
    }

    #[test]
    fn size_mismatch_rejected_with_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("short.flo");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&FLO_TAG.to_le_bytes());
        bytes.extend_from_slice(&4i32.to_le_bytes());
        bytes.extend_from_slice(&4i32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 16]); // far fewer than 4*4*8
        std::fs::write(&p, &bytes).unwrap();
        match read_flo(&p).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, 12),
            other => panic!("unexpected error {other}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn round_trip_is_bitwise(
            w in 1usize..12,
            h in 1usize..12,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut f = FlowField::zeros(w, h);
            for i in 0..w * h {
                f.u[i] = rng.gen_range(-100.0..100.0);
                f.v[i] = rng.gen_range(-100.0..100.0);
            }
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("rt.flo");
            write_flo(&f, &p).unwrap();
            let back = read_flo(&p).unwrap();
            prop_assert_eq!(f.u.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                            back.u.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(f.v.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                            back.v.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        }
    }
}
