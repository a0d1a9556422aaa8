//! Preprocessing pipeline and its exact inverse.
//!
//! Samples longer than a stroke budget are split at character boundaries,
//! coordinates are shifted so each sample starts at the origin, converted to
//! step-to-step deltas, and normalized to zero mean and unit variance using
//! corpus-wide statistics. Pen bits pass through untouched.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::data::{Corpus, InkSample, StrokePoint};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_STROKES: usize = 300;

/// Floor applied to degenerate per-axis standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

/// Corpus-wide delta statistics used for normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl NormStats {
    /// Identity normalization.
    pub fn unit() -> Self {
        NormStats { mean: [0.0, 0.0], std: [1.0, 1.0] }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        crate::io::write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
        let stats: NormStats = serde_json::from_str(&text)
            .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        if stats.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::data("norm stats std must be positive"));
        }
        Ok(stats)
    }
}

/// Normalized delta sequence with the labels carried along.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSequence {
    /// `(du, dv, pen)` per step; the first row is `(0, 0, pen_0)`.
    pub deltas: Vec<[f64; 3]>,
    pub y: Vec<usize>,
    pub eoc: Vec<u8>,
    pub bow: Vec<u8>,
    pub author: String,
    pub text: String,
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }
}

/// Split a sample into pieces of at most `max_strokes` points, cutting only
/// immediately after an `eoc = 1` point so characters stay whole. When a
/// window contains no eoc at all the piece is cut hard at the limit and
/// flagged via [`InkSample::hard_split`].
pub fn split_long_samples(sample: &InkSample, max_strokes: usize) -> Vec<InkSample> {
    assert!(max_strokes >= 1);
    let t = sample.len();
    if t <= max_strokes {
        return vec![sample.clone()];
    }
    let mut pieces = Vec::new();
    let mut start = 0;
    while t - start > max_strokes {
        let window_end = start + max_strokes; // exclusive
        let cut = (start..window_end)
            .rev()
            .find(|&i| sample.eoc[i] == 1)
            .map(|i| i + 1);
        let (end, hard) = match cut {
            Some(c) => (c, false),
            None => (window_end, true),
        };
        pieces.push(slice_sample(sample, start, end, hard));
        start = end;
    }
    if start < t {
        pieces.push(slice_sample(sample, start, t, false));
    }
    pieces
}

fn slice_sample(sample: &InkSample, start: usize, end: usize, hard: bool) -> InkSample {
    InkSample {
        points: sample.points[start..end].to_vec(),
        y: sample.y[start..end].to_vec(),
        eoc: sample.eoc[start..end].to_vec(),
        bow: sample.bow[start..end].to_vec(),
        author: sample.author.clone(),
        text: sample.text.clone(),
        hard_split: hard || sample.hard_split,
    }
}

/// Per-axis flags set when the corpus had (near-)constant deltas and the
/// standard deviation was floored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StatsWarnings {
    pub degenerate_axis: [bool; 2],
}

impl StatsWarnings {
    pub fn any(&self) -> bool {
        self.degenerate_axis.iter().any(|&b| b)
    }
}

/// Population mean and standard deviation of all `(du, dv)` deltas in the
/// corpus, after the origin-shift and delta steps.
pub fn compute_stats(corpus: &Corpus) -> Result<(NormStats, StatsWarnings)> {
    let mut count = 0usize;
    let mut sum = [0.0f64; 2];
    for s in &corpus.samples {
        for d in raw_deltas(s) {
            sum[0] += d[0];
            sum[1] += d[1];
            count += 1;
        }
    }
    if corpus.samples.is_empty() || count < 2 {
        return Err(Error::data(format!(
            "cannot compute stats: corpus has {count} deltas, need at least 2"
        )));
    }
    let mean = [sum[0] / count as f64, sum[1] / count as f64];
    let mut sq = [0.0f64; 2];
    for s in &corpus.samples {
        for d in raw_deltas(s) {
            sq[0] += (d[0] - mean[0]) * (d[0] - mean[0]);
            sq[1] += (d[1] - mean[1]) * (d[1] - mean[1]);
        }
    }
    let mut warnings = StatsWarnings::default();
    let mut std = [0.0f64; 2];
    for a in 0..2 {
        std[a] = (sq[a] / count as f64).sqrt();
        if std[a] < STD_FLOOR {
            std[a] = STD_FLOOR;
            warnings.degenerate_axis[a] = true;
        }
    }
    Ok((NormStats { mean, std }, warnings))
}

/// Unnormalized deltas of a sample: `d_0 = (0, 0)`, `d_t = x_t - x_{t-1}`.
fn raw_deltas(sample: &InkSample) -> impl Iterator<Item = [f64; 2]> + '_ {
    sample.points.iter().enumerate().map(|(t, p)| {
        if t == 0 {
            [0.0, 0.0]
        } else {
            let prev = &sample.points[t - 1];
            [p.u - prev.u, p.v - prev.v]
        }
    })
}

/// Origin-shift, difference, and normalize a sample into model space.
pub fn to_model_space(sample: &InkSample, stats: &NormStats) -> EncodedSequence {
    let deltas = raw_deltas(sample)
        .zip(sample.points.iter())
        .map(|(d, p)| {
            [
                (d[0] - stats.mean[0]) / stats.std[0],
                (d[1] - stats.mean[1]) / stats.std[1],
                p.pen as f64,
            ]
        })
        .collect();
    EncodedSequence {
        deltas,
        y: sample.y.clone(),
        eoc: sample.eoc.clone(),
        bow: sample.bow.clone(),
        author: sample.author.clone(),
        text: sample.text.clone(),
    }
}

/// Invert [`to_model_space`]: denormalize, cumulative-sum, add the origin.
pub fn from_model_space(encoded: &EncodedSequence, stats: &NormStats, origin: [f64; 2]) -> InkSample {
    let mut points = Vec::with_capacity(encoded.len());
    let mut pos = origin;
    for (t, d) in encoded.deltas.iter().enumerate() {
        let du = d[0] * stats.std[0] + stats.mean[0];
        let dv = d[1] * stats.std[1] + stats.mean[1];
        if t > 0 {
            pos[0] += du;
            pos[1] += dv;
        }
        points.push(StrokePoint {
            u: pos[0],
            v: pos[1],
            pen: if d[2] >= 0.5 { 1 } else { 0 },
        });
    }
    InkSample {
        points,
        y: encoded.y.clone(),
        eoc: encoded.eoc.clone(),
        bow: encoded.bow.clone(),
        author: encoded.author.clone(),
        text: encoded.text.clone(),
        hard_split: false,
    }
}
