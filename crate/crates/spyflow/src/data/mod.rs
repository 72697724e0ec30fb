//! Data plumbing: Middlebury .flo I/O, lossless image I/O, flow
//! colorization, the synthetic-motion dataset generator, and dataset
//! manifests.

mod color;
mod flo;
mod image_io;
mod synth;

pub use color::flow_to_color;
pub use flo::{read_flo, write_flo, FLO_TAG};
pub use image_io::{read_image, write_image};
pub use synth::{generate_sample, MotionFlags, SynthSpec};

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::tensor::Tensor;

/// One training example: an RGB image pair in `[0, 1]` with dense ground
/// truth flow at frame resolution, plus the seed it was generated from.
#[derive(Debug, Clone)]
pub struct Sample {
    pub frame1: Tensor,
    pub frame2: Tensor,
    pub gt_flow: FlowField,
    pub seed: u64,
}

impl Sample {
    pub fn validate(&self) -> Result<()> {
        let (_, h, w) = self.frame1.chw()?;
        let (_, h2, w2) = self.frame2.chw()?;
        if (h, w) != (h2, w2) || (self.gt_flow.height, self.gt_flow.width) != (h, w) {
            return Err(Error::shape(
                "Sample",
                format!("{h}x{w}"),
                format!("frame2 {h2}x{w2}, flow {}x{}", self.gt_flow.height, self.gt_flow.width),
            ));
        }
        Ok(())
    }
}

/// One manifest line: frame1, frame2 and ground-truth flow paths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub frame1: PathBuf,
    pub frame2: PathBuf,
    pub flow: PathBuf,
}

/// Writes a dataset manifest: one tab-separated (frame1, frame2, flow)
/// triple per line.
pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    for e in entries {
        writeln!(
            f,
            "{}\t{}\t{}",
            e.frame1.display(),
            e.frame2.display(),
            e.flow.display()
        )
        .map_err(|err| Error::io(path.display().to_string(), err))?;
    }
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut entries = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 {
            return Err(Error::Format {
                path: path.display().to_string(),
                offset: i as u64,
                reason: format!("manifest line {} has {} fields, expected 3", i + 1, parts.len()),
            });
        }
        entries.push(ManifestEntry {
            frame1: parts[0].into(),
            frame2: parts[1].into(),
            flow: parts[2].into(),
        });
    }
    Ok(entries)
}

/// Loads every sample referenced by a manifest. Relative paths resolve
/// against the manifest's directory.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let manifest_path = manifest_path.as_ref();
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };
    let mut samples = Vec::new();
    for entry in read_manifest(manifest_path)? {
        let sample = Sample {
            frame1: read_image(resolve(&entry.frame1))?,
            frame2: read_image(resolve(&entry.frame2))?,
            gt_flow: read_flo(resolve(&entry.flow))?,
            seed: 0,
        };
        sample.validate()?;
        samples.push(sample);
    }
    Ok(samples)
}
