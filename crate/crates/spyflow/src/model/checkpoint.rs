//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! magic "SPYN" | u32 version=1 | u32 level_count
//! per level:  u32 layer_count
//! per layer:  u32 shape[4] = [out, in, 7, 7]
//!             out*in*49 f32 weights
//!             u32 bias_len | bias_len f32 bias
//! ```
//!
//! Save/load round trips are bitwise lossless.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{LevelNetwork, PyramidModel};
use crate::nn::{ConvLayer, KERNEL_SIZE};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SPYN";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(model: &PyramidModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let to_err = |e| Error::io(path.display().to_string(), e);
    let mut w = BufWriter::new(File::create(path).map_err(to_err)?);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(to_err);
    put(&CHECKPOINT_MAGIC)?;
    put(&CHECKPOINT_VERSION.to_le_bytes())?;
    put(&(model.levels.len() as u32).to_le_bytes())?;
    for net in &model.levels {
        put(&(net.layers.len() as u32).to_le_bytes())?;
        for layer in &net.layers {
            for &d in layer.weights.shape() {
                put(&(d as u32).to_le_bytes())?;
            }
            for &v in layer.weights.data() {
                put(&v.to_le_bytes())?;
            }
            put(&(layer.bias.len() as u32).to_le_bytes())?;
            for &v in layer.bias.data() {
                put(&v.to_le_bytes())?;
            }
        }
    }
    w.into_inner()
        .map_err(|e| Error::io(path.display().to_string(), e.into_error()))?
        .sync_all()
        .ok();
    Ok(())
}

struct Cursor<'a, R: Read> {
    reader: R,
    path: &'a str,
    offset: u64,
}

impl<'a, R: Read> Cursor<'a, R> {
    fn fail(&self, reason: String) -> Error {
        Error::Format {
            path: self.path.to_string(),
            offset: self.offset,
            reason,
        }
    }

    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.reader
            .read_exact(&mut buf)
            .map_err(|_| self.fail(format!("truncated: expected {N} bytes for {what}")))?;
        self.offset += N as u64;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes::<4>(what)?))
    }

    fn f32_vec(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let mut raw = vec![0u8; n * 4];
        self.reader.read_exact(&mut raw).map_err(|_| {
            self.fail(format!("truncated: expected {} bytes for {what}", n * 4))
        })?;
        self.offset += (n * 4) as u64;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<PyramidModel> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(display.clone(), e))?;
    let mut cur = Cursor {
        reader: BufReader::new(file),
        path: &display,
        offset: 0,
    };

    let magic: [u8; 4] = cur.bytes("magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(cur.fail(format!(
            "bad magic {:?}, expected {:?}",
            magic, CHECKPOINT_MAGIC
        )));
    }
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(cur.fail(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let level_count = cur.u32("level count")? as usize;
    if level_count == 0 || level_count > 64 {
        return Err(cur.fail(format!("implausible level count {level_count}")));
    }

    let mut levels = Vec::with_capacity(level_count);
    for li in 0..level_count {
        let layer_count = cur.u32("layer count")? as usize;
        let mut layers = Vec::with_capacity(layer_count);
        for _ in 0..layer_count {
            let out = cur.u32("out channels")? as usize;
            let inc = cur.u32("in channels")? as usize;
            let kh = cur.u32("kernel height")? as usize;
            let kw = cur.u32("kernel width")? as usize;
            if kh != KERNEL_SIZE || kw != KERNEL_SIZE {
                return Err(cur.fail(format!(
                    "kernel {kh}x{kw}, expected {KERNEL_SIZE}x{KERNEL_SIZE}"
                )));
            }
            if out == 0 || inc == 0 || out > 4096 || inc > 4096 {
                return Err(cur.fail(format!("implausible layer shape {out}x{inc}")));
            }
            let weights = cur.f32_vec(out * inc * kh * kw, "weights")?;
            let bias_len = cur.u32("bias length")? as usize;
            if bias_len != out {
                return Err(cur.fail(format!("bias length {bias_len}, expected {out}")));
            }
            let bias = cur.f32_vec(bias_len, "bias")?;
            layers.push(ConvLayer::new(
                Tensor::new(vec![out, inc, kh, kw], weights)?,
                Tensor::new(vec![out], bias)?,
            )?);
        }
        let net = LevelNetwork { layers };
        net.validate().map_err(|e| {
            cur.fail(format!("level {li} violates network invariants: {e}"))
        })?;
        levels.push(net);
    }
    let mut trailing = [0u8; 1];
    if cur.reader.read(&mut trailing).map_err(|e| Error::io(display.clone(), e))? != 0 {
        return Err(cur.fail("trailing bytes after last level".into()));
    }
    PyramidModel::new(levels, level_count)
}
