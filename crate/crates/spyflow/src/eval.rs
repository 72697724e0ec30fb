//! Evaluation metrics: aggregate endpoint error and the velocity /
//! boundary-distance segmented report, plus inference runtime statistics.
//!
//! Motion boundaries are defined here as pixels where the forward-difference
//! gradient magnitude of the ground-truth flow (combined over u and v)
//! exceeds a threshold (default 1.0 px/px). This is a stand-in for
//! benchmark-provided segmentations and is labeled as such in reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::model::{infer, PyramidModel};
use crate::tensor::Tensor;

/// Default flow-gradient threshold for motion boundary extraction, px/px.
pub const BOUNDARY_GRADIENT_THRESHOLD: f32 = 1.0;

pub const S_BIN_LABELS: [&str; 3] = ["s0-10", "s10-40", "s40+"];
pub const D_BIN_LABELS: [&str; 3] = ["d0-10", "d10-60", "d60-140"];

/// Per-bin statistics. `mean_epe` is absent when the bin is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct BinStat {
    pub count: usize,
    pub mean_epe: Option<f64>,
}

/// Aggregate EPE plus the velocity / boundary-distance segmentation.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub mean_epe: f64,
    pub bins: BTreeMap<String, BinStat>,
    pub runtime_ms: Option<f64>,
    pub param_count: Option<usize>,
}

impl EvalReport {
    /// Human-readable table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "mean EPE: {:.6}", self.mean_epe);
        let _ = writeln!(out, "{:<10} {:>12} {:>10}", "bin", "mean EPE", "pixels");
        for label in S_BIN_LABELS.iter().chain(D_BIN_LABELS.iter()) {
            if let Some(stat) = self.bins.get(*label) {
                match stat.mean_epe {
                    Some(epe) => {
                        let _ = writeln!(out, "{:<10} {:>12.6} {:>10}", label, epe, stat.count);
                    }
                    None => {
                        let _ = writeln!(out, "{:<10} {:>12} {:>10}", label, "-", stat.count);
                    }
                }
            }
        }
        if let Some(ms) = self.runtime_ms {
            let _ = writeln!(out, "runtime: {ms:.3} ms");
        }
        if let Some(n) = self.param_count {
            let _ = writeln!(out, "parameters: {n}");
        }
        out.push_str("(motion boundaries: thresholded flow-gradient stand-in)\n");
        out
    }

    /// Machine-readable key=value lines.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "mean_epe={:.9}", self.mean_epe);
        for (label, stat) in &self.bins {
            match stat.mean_epe {
                Some(epe) => {
                    let _ = writeln!(out, "{label}_epe={epe:.9}");
                }
                None => {
                    let _ = writeln!(out, "{label}_epe=");
                }
            }
            let _ = writeln!(out, "{label}_count={}", stat.count);
        }
        if let Some(ms) = self.runtime_ms {
            let _ = writeln!(out, "runtime_ms={ms:.3}");
        }
        if let Some(n) = self.param_count {
            let _ = writeln!(out, "param_count={n}");
        }
        out
    }
}

/// Mean Euclidean norm of the flow difference. This is the metric, not the
/// training loss: no smoothing term.
pub fn average_epe(pred: &FlowField, gt: &FlowField) -> Result<f64> {
    pred.same_resolution(gt, "average_epe")?;
    let n = pred.num_pixels();
    let mut acc = 0.0f64;
    for i in 0..n {
        let du = (pred.u[i] - gt.u[i]) as f64;
        let dv = (pred.v[i] - gt.v[i]) as f64;
        acc += (du * du + dv * dv).sqrt();
    }
    Ok(acc / n as f64)
}

/// Motion-boundary mask: forward-difference flow gradient magnitude above
/// `threshold`.
fn boundary_mask(gt: &FlowField, threshold: f32) -> Vec<bool> {
    let (w, h) = (gt.width, gt.height);
    let mut mask = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let ux = if x + 1 < w { gt.u_at(x + 1, y) - gt.u_at(x, y) } else { 0.0 };
            let uy = if y + 1 < h { gt.u_at(x, y + 1) - gt.u_at(x, y) } else { 0.0 };
            let vx = if x + 1 < w { gt.v_at(x + 1, y) - gt.v_at(x, y) } else { 0.0 };
            let vy = if y + 1 < h { gt.v_at(x, y + 1) - gt.v_at(x, y) } else { 0.0 };
            mask[y * w + x] = (ux * ux + uy * uy + vx * vx + vy * vy).sqrt() > threshold;
        }
    }
    mask
}

/// 1-d squared Euclidean distance transform (lower envelope of parabolas).
fn dt1d(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64))
                / (2.0 * q as f64 - 2.0 * p as f64);
            if s <= z[k] {
                if k == 0 {
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        d[q] = dq * dq + f[p];
    }
    d
}

/// Exact Euclidean distance (pixels) to the nearest masked pixel.
/// Infinity everywhere when the mask is empty.
fn distance_transform(mask: &[bool], w: usize, h: usize) -> Vec<f64> {
    const FAR: f64 = 1e18;
    let mut sq = vec![FAR; w * h];
    for (i, &m) in mask.iter().enumerate() {
        if m {
            sq[i] = 0.0;
        }
    }
    // columns then rows
    let mut col = vec![0.0f64; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = sq[y * w + x];
        }
        let d = dt1d(&col);
        for y in 0..h {
            sq[y * w + x] = d[y];
        }
    }
    let mut row = vec![0.0f64; w];
    for y in 0..h {
        row.copy_from_slice(&sq[y * w..(y + 1) * w]);
        let d = dt1d(&row);
        sq[y * w..(y + 1) * w].copy_from_slice(&d);
    }
    sq.into_iter().map(f64::sqrt).collect()
}

/// Segmented EPE with the default boundary threshold.
pub fn segmented_report(pred: &FlowField, gt: &FlowField) -> Result<EvalReport> {
    segmented_report_with_threshold(pred, gt, BOUNDARY_GRADIENT_THRESHOLD)
}

/// Velocity bins partition all pixels by ground-truth speed into
/// `[0,10) [10,40) [40,inf)`. Distance bins assign pixels by Euclidean
/// distance to the nearest motion-boundary pixel into `[0,10) [10,60)
/// [60,140)`; pixels at 140+ (or all pixels when no boundary exists) are
/// excluded.
pub fn segmented_report_with_threshold(
    pred: &FlowField,
    gt: &FlowField,
    boundary_threshold: f32,
) -> Result<EvalReport> {
    pred.same_resolution(gt, "segmented_report")?;
    let (w, h) = (gt.width, gt.height);
    let n = w * h;

    let mut epe = vec![0.0f64; n];
    let mut total = 0.0f64;
    for i in 0..n {
        let du = (pred.u[i] - gt.u[i]) as f64;
        let dv = (pred.v[i] - gt.v[i]) as f64;
        epe[i] = (du * du + dv * dv).sqrt();
        total += epe[i];
    }

    let mut sums = [0.0f64; 6];
    let mut counts = [0usize; 6];
    for i in 0..n {
        let speed = ((gt.u[i] as f64).powi(2) + (gt.v[i] as f64).powi(2)).sqrt();
        let s_bin = if speed < 10.0 {
            0
        } else if speed < 40.0 {
            1
        } else {
            2
        };
        sums[s_bin] += epe[i];
        counts[s_bin] += 1;
    }

    let mask = boundary_mask(gt, boundary_threshold);
    if mask.iter().any(|&m| m) {
        let dist = distance_transform(&mask, w, h);
        for i in 0..n {
            let bin = if dist[i] < 10.0 {
                3
            } else if dist[i] < 60.0 {
                4
            } else if dist[i] < 140.0 {
                5
            } else {
                continue;
            };
            sums[bin] += epe[i];
            counts[bin] += 1;
        }
    }

    let mut bins = BTreeMap::new();
    for (i, label) in S_BIN_LABELS.iter().chain(D_BIN_LABELS.iter()).enumerate() {
        bins.insert(
            label.to_string(),
            BinStat {
                count: counts[i],
                mean_epe: if counts[i] > 0 {
                    Some(sums[i] / counts[i] as f64)
                } else {
                    None
                },
            },
        );
    }

    Ok(EvalReport {
        mean_epe: total / n as f64,
        bins,
        runtime_ms: None,
        param_count: None,
    })
}

/// Wall-clock inference timing with images preloaded.
#[derive(Debug, Clone)]
pub struct RuntimeStats {
    pub min_ms: f64,
    pub median_ms: f64,
    pub mean_ms: f64,
    pub param_count: usize,
}

pub fn benchmark_inference(
    model: &PyramidModel,
    frame1: &Tensor,
    frame2: &Tensor,
    repetitions: usize,
) -> Result<RuntimeStats> {
    if repetitions == 0 {
        return Err(Error::InvalidConfig("repetitions must be >= 1".into()));
    }
    let mut times = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let t0 = Instant::now();
        let flow = infer(model, frame1, frame2)?;
        let dt = t0.elapsed().as_secs_f64() * 1e3;
        std::hint::black_box(flow.u[0]);
        times.push(dt);
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let median = if times.len() % 2 == 1 {
        times[times.len() / 2]
    } else {
        (times[times.len() / 2 - 1] + times[times.len() / 2]) / 2.0
    };
    Ok(RuntimeStats {
        min_ms: times[0],
        median_ms: median,
        mean_ms: mean,
        param_count: model.count_params().1,
    })
}
