//! RTTM segment interchange: parsing, writing, and rasterization to
//! frame-level activity matrices.

use crate::error::{Error, Result};
use crate::postproc::{Segment, SegmentList};
use crate::pse::BinaryLabelMatrix;
use std::collections::BTreeMap;

/// Parse result: recordings in sorted id order plus a count of skipped
/// non-SPEAKER records.
#[derive(Clone, Debug)]
pub struct RttmDocument {
    pub recordings: Vec<SegmentList>,
    pub skipped_records: usize,
}

impl RttmDocument {
    pub fn recording(&self, id: &str) -> Option<&SegmentList> {
        self.recordings.iter().find(|r| r.recording == id)
    }

    /// The single recording in the document, if there is exactly one.
    pub fn sole_recording(&self) -> Result<&SegmentList> {
        match self.recordings.len() {
            1 => Ok(&self.recordings[0]),
            n => Err(Error::Input(format!("expected one recording, found {n}"))),
        }
    }
}

/// Accepts `SPEAKER <rec> <chan> <onset> <dur> <NA> <NA> <spk> <NA> <NA>`
/// lines; blank lines and `;;` comments are ignored, other record types
/// are counted and skipped.
pub fn parse_rttm(text: &str) -> Result<RttmDocument> {
    let mut by_rec: BTreeMap<String, Vec<Segment>> = BTreeMap::new();
    let mut skipped = 0usize;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with(";;") {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields[0] != "SPEAKER" {
            skipped += 1;
            continue;
        }
        if fields.len() < 8 {
            return Err(Error::Parse {
                line: line_no,
                detail: format!("expected at least 8 fields, got {}", fields.len()),
            });
        }
        let onset: f64 = fields[3].parse().map_err(|_| Error::Parse {
            line: line_no,
            detail: format!("bad onset `{}`", fields[3]),
        })?;
        let duration: f64 = fields[4].parse().map_err(|_| Error::Parse {
            line: line_no,
            detail: format!("bad duration `{}`", fields[4]),
        })?;
        if !(onset >= 0.0) || !(duration > 0.0) {
            return Err(Error::Parse {
                line: line_no,
                detail: format!("invalid interval onset={onset} duration={duration}"),
            });
        }
        by_rec.entry(fields[1].to_string()).or_default().push(Segment {
            speaker: fields[7].to_string(),
            onset,
            duration,
        });
    }
    let recordings = by_rec
        .into_iter()
        .map(|(recording, segments)| {
            let mut list = SegmentList {
                recording,
                frame_rate: 0.0,
                segments,
            };
            list.normalize();
            list
        })
        .collect();
    Ok(RttmDocument {
        recordings,
        skipped_records: skipped,
    })
}

/// One line per segment, onset and duration with exactly 3 decimals.
pub fn write_rttm(list: &SegmentList) -> String {
    let mut out = String::new();
    for s in &list.segments {
        out.push_str(&format!(
            "SPEAKER {} 1 {:.3} {:.3} <NA> <NA> {} <NA> <NA>\n",
            list.recording, s.onset, s.duration, s.speaker
        ));
    }
    out
}

// Tolerance for mapping second boundaries onto frame indices; absorbs
// float dust from onset = frame / rate round trips.
const FRAME_EPS: f64 = 1e-9;

/// Frame t is active for a speaker iff t / frame_rate lies in
/// [onset, onset + duration). Segments are clipped to [0, total_frames).
pub fn frames_from_segments(
    list: &SegmentList,
    frame_rate: f64,
    total_frames: usize,
    speaker_order: &[String],
) -> Result<BinaryLabelMatrix> {
    if frame_rate <= 0.0 {
        return Err(Error::Domain("frame rate must be positive".into()));
    }
    let mut matrix = BinaryLabelMatrix::zeros(total_frames, speaker_order.len());
    for seg in &list.segments {
        let col = speaker_order
            .iter()
            .position(|s| *s == seg.speaker)
            .ok_or_else(|| Error::Input(format!("unknown speaker `{}`", seg.speaker)))?;
        let begin = (seg.onset * frame_rate - FRAME_EPS).ceil().max(0.0) as usize;
        let end = ((seg.onset + seg.duration) * frame_rate - FRAME_EPS).ceil() as usize;
        for t in begin..end.min(total_frames) {
            matrix.set(t, col, 1);
        }
    }
    Ok(matrix)
}
