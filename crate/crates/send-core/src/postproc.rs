//! Turns network outputs into diarization decisions: argmax decoding of
//! power-set logits, threshold binarization for the multi-label head,
//! per-speaker median smoothing, and segment extraction.

use crate::error::{Error, Result};
use crate::pse::{BinaryLabelMatrix, PseCodec, PseLabelSequence};
use crate::tensor::Tensor;

/// A diarization segment: who, when, for how long (seconds).
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub speaker: String,
    pub onset: f64,
    pub duration: f64,
}

/// Per-recording segment collection. `frame_rate` is 0 when unknown
/// (e.g. parsed from interchange files that do not carry it).
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentList {
    pub recording: String,
    pub frame_rate: f64,
    pub segments: Vec<Segment>,
}

impl SegmentList {
    pub fn empty(recording: impl Into<String>, frame_rate: f64) -> Self {
        SegmentList {
            recording: recording.into(),
            frame_rate,
            segments: Vec::new(),
        }
    }

    /// Sort by (onset, speaker) for a canonical ordering.
    pub fn normalize(&mut self) {
        self.segments.sort_by(|a, b| {
            a.onset
                .partial_cmp(&b.onset)
                .unwrap()
                .then_with(|| a.speaker.cmp(&b.speaker))
                .then_with(|| a.duration.partial_cmp(&b.duration).unwrap())
        });
    }

    pub fn speakers(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.segments.iter().map(|s| s.speaker.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn end_time(&self) -> f64 {
        self.segments
            .iter()
            .map(|s| s.onset + s.duration)
            .fold(0.0, f64::max)
    }
}

/// Per-frame argmax over class logits; ties break toward the lowest id.
pub fn argmax_decode(logits: &Tensor) -> PseLabelSequence {
    let (t, c) = (logits.rows(), logits.cols());
    let mut class_ids = Vec::with_capacity(t);
    for r in 0..t {
        let row = &logits.data()[r * c..(r + 1) * c];
        let mut best = 0usize;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        class_ids.push(best);
    }
    PseLabelSequence { class_ids }
}

/// 1 where probability >= threshold.
pub fn binarize(probabilities: &Tensor, threshold: f64) -> BinaryLabelMatrix {
    let (t, n) = (probabilities.rows(), probabilities.cols());
    let values = probabilities
        .data()
        .iter()
        .map(|&p| u8::from(p >= threshold))
        .collect();
    BinaryLabelMatrix::new(t, n, values).unwrap()
}

/// Sliding-window majority over a binary stream with replicate edge
/// padding. Window must be odd.
pub fn median_filter_binary(stream: &[u8], window: usize) -> Result<Vec<u8>> {
    if window % 2 == 0 || window == 0 {
        return Err(Error::Domain(format!("window must be odd, got {window}")));
    }
    let t = stream.len();
    if t == 0 || window == 1 {
        return Ok(stream.to_vec());
    }
    let half = (window / 2) as isize;
    let clamp = |i: isize| -> usize { i.clamp(0, t as isize - 1) as usize };
    let mut out = Vec::with_capacity(t);
    for c in 0..t as isize {
        let mut ones = 0usize;
        for i in (c - half)..=(c + half) {
            ones += stream[clamp(i)] as usize;
        }
        out.push(u8::from(2 * ones > window));
    }
    Ok(out)
}

/// Zero out active runs shorter than `min_frames`. 0 or 1 disables.
pub fn drop_short_runs(stream: &mut [u8], min_frames: usize) {
    if min_frames <= 1 {
        return;
    }
    let mut t = 0;
    while t < stream.len() {
        if stream[t] == 1 {
            let start = t;
            while t < stream.len() && stream[t] == 1 {
                t += 1;
            }
            if t - start < min_frames {
                for v in &mut stream[start..t] {
                    *v = 0;
                }
            }
        } else {
            t += 1;
        }
    }
}

/// Contiguous active runs become segments at frame resolution.
pub fn segments_from_binary(
    labels: &BinaryLabelMatrix,
    speaker_ids: &[String],
    frame_rate: f64,
    recording: &str,
    min_duration_frames: usize,
) -> Result<SegmentList> {
    if speaker_ids.len() != labels.speakers() {
        return Err(Error::dim(
            "segments_from_binary",
            format!(
                "{} speaker ids for {} columns",
                speaker_ids.len(),
                labels.speakers()
            ),
        ));
    }
    if frame_rate <= 0.0 {
        return Err(Error::Domain("frame rate must be positive".into()));
    }
    let mut list = SegmentList::empty(recording, frame_rate);
    for (n, id) in speaker_ids.iter().enumerate() {
        let mut stream = labels.speaker_stream(n);
        drop_short_runs(&mut stream, min_duration_frames);
        let mut t = 0;
        while t < stream.len() {
            if stream[t] == 1 {
                let start = t;
                while t < stream.len() && stream[t] == 1 {
                    t += 1;
                }
                list.segments.push(Segment {
                    speaker: id.clone(),
                    onset: start as f64 / frame_rate,
                    duration: (t - start) as f64 / frame_rate,
                });
            } else {
                t += 1;
            }
        }
    }
    list.normalize();
    Ok(list)
}

#[derive(Clone, Debug)]
pub struct DecodeConfig {
    pub median_window: usize,
    pub min_duration_frames: usize,
    pub frame_rate: f64,
    pub recording: String,
    pub speaker_ids: Vec<String>,
}

impl DecodeConfig {
    pub fn new(frame_rate: f64, n_speakers: usize) -> Self {
        DecodeConfig {
            median_window: default_median_window(frame_rate),
            min_duration_frames: 0,
            frame_rate,
            recording: "rec".to_string(),
            speaker_ids: default_speaker_ids(n_speakers),
        }
    }
}

/// 83 frames at 100 fps, scaled proportionally and kept odd.
pub fn default_median_window(frame_rate: f64) -> usize {
    let w = (83.0 * frame_rate / 100.0).round() as usize;
    let w = w.max(1);
    if w % 2 == 0 {
        w + 1
    } else {
        w
    }
}

pub fn default_speaker_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("spk{i}")).collect()
}

/// Full decision pipeline for power-set logits: argmax, per-frame decode,
/// per-speaker median smoothing, short-run removal, segment extraction.
pub fn decode_pipeline(
    logits: &Tensor,
    codec: &PseCodec,
    cfg: &DecodeConfig,
) -> Result<(BinaryLabelMatrix, SegmentList)> {
    let seq = argmax_decode(logits);
    let raw = codec.decode_sequence(&seq)?;
    let mut smoothed = BinaryLabelMatrix::zeros(raw.frames(), raw.speakers());
    for n in 0..raw.speakers() {
        let stream = median_filter_binary(&raw.speaker_stream(n), cfg.median_window)?;
        smoothed.set_speaker_stream(n, &stream);
    }
    hyp_to_segments(smoothed, cfg)
}

/// Median-smooth a binarized multi-label matrix with the same settings as
/// the power-set path.
pub fn smooth_binary(labels: &BinaryLabelMatrix, median_window: usize) -> Result<BinaryLabelMatrix> {
    let mut out = BinaryLabelMatrix::zeros(labels.frames(), labels.speakers());
    for n in 0..labels.speakers() {
        let stream = median_filter_binary(&labels.speaker_stream(n), median_window)?;
        out.set_speaker_stream(n, &stream);
    }
    Ok(out)
}

fn hyp_to_segments(
    mut labels: BinaryLabelMatrix,
    cfg: &DecodeConfig,
) -> Result<(BinaryLabelMatrix, SegmentList)> {
    if cfg.min_duration_frames > 1 {
        for n in 0..labels.speakers() {
            let mut stream = labels.speaker_stream(n);
            drop_short_runs(&mut stream, cfg.min_duration_frames);
            labels.set_speaker_stream(n, &stream);
        }
    }
    let segments = segments_from_binary(
        &labels,
        &cfg.speaker_ids,
        cfg.frame_rate,
        &cfg.recording,
        0,
    )?;
    Ok((labels, segments))
}
