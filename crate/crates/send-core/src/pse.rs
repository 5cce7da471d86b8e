//! Power-set label codec.
//!
//! A frame's multi-hot speaker activity vector is folded into a single
//! class id: the activity bits form an integer (speaker n maps to bit
//! n-1), and the codec numbers all masks with at most `max_overlap` bits
//! set, in ascending mask order. With `max_overlap == n_speakers` the
//! class id equals the mask itself.

use crate::error::{Error, Result};

pub const MAX_SPEAKERS: u32 = 16;

/// T x N frame-level activity labels with strictly binary entries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryLabelMatrix {
    frames: usize,
    speakers: usize,
    values: Vec<u8>,
}

impl BinaryLabelMatrix {
    pub fn zeros(frames: usize, speakers: usize) -> Self {
        BinaryLabelMatrix {
            frames,
            speakers,
            values: vec![0; frames * speakers],
        }
    }

    pub fn new(frames: usize, speakers: usize, values: Vec<u8>) -> Result<Self> {
        if values.len() != frames * speakers {
            return Err(Error::dim(
                "labels",
                format!("{} values for {frames}x{speakers}", values.len()),
            ));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::Input("label entries must be 0 or 1".into()));
        }
        Ok(BinaryLabelMatrix {
            frames,
            speakers,
            values,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn speakers(&self) -> usize {
        self.speakers
    }

    pub fn get(&self, frame: usize, speaker: usize) -> u8 {
        self.values[frame * self.speakers + speaker]
    }

    pub fn set(&mut self, frame: usize, speaker: usize, v: u8) {
        debug_assert!(v <= 1);
        self.values[frame * self.speakers + speaker] = v;
    }

    pub fn frame_row(&self, frame: usize) -> &[u8] {
        &self.values[frame * self.speakers..(frame + 1) * self.speakers]
    }

    /// Column as a contiguous 0/1 stream.
    pub fn speaker_stream(&self, speaker: usize) -> Vec<u8> {
        (0..self.frames).map(|t| self.get(t, speaker)).collect()
    }

    pub fn set_speaker_stream(&mut self, speaker: usize, stream: &[u8]) {
        for (t, &v) in stream.iter().enumerate() {
            self.set(t, speaker, v);
        }
    }

    pub fn active_count(&self, frame: usize) -> usize {
        self.frame_row(frame).iter().map(|&v| v as usize).sum()
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }
}

/// Per-frame class ids produced by [`PseCodec::encode_sequence`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PseLabelSequence {
    pub class_ids: Vec<usize>,
}

impl PseLabelSequence {
    pub fn frames(&self) -> usize {
        self.class_ids.len()
    }
}

/// Policy for frames whose active-speaker count exceeds the codec capacity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OverflowPolicy {
    /// Fail with the offending frame.
    Strict,
    /// Keep the active speakers with the lowest indices, drop the rest.
    KeepLowest,
}

/// Bijection between speaker-subset masks (popcount <= max_overlap) and
/// contiguous class ids. Immutable after construction.
#[derive(Clone, Debug)]
pub struct PseCodec {
    n_speakers: u32,
    max_overlap: u32,
    class_table: Vec<u32>,
    inverse_table: Vec<Option<u32>>,
}

fn check_domain(n: u32, k: u32) -> Result<()> {
    if n == 0 || n > MAX_SPEAKERS {
        return Err(Error::Domain(format!(
            "speaker count {n} outside 1..={MAX_SPEAKERS}"
        )));
    }
    if k == 0 || k > n {
        return Err(Error::Domain(format!("max overlap {k} outside 1..={n}")));
    }
    Ok(())
}

/// Number of speaker subsets with cardinality at most `k` among `n`
/// speakers: the sum of binomial coefficients C(n, 0..=k).
pub fn num_classes(n: u32, k: u32) -> Result<usize> {
    check_domain(n, k)?;
    let mut total = 0usize;
    let mut choose = 1usize; // C(n, 0)
    for j in 0..=k as usize {
        if j > 0 {
            choose = choose * (n as usize - j + 1) / j;
        }
        total += choose;
    }
    Ok(total)
}

impl PseCodec {
    pub fn new(n_speakers: u32, max_overlap: u32) -> Result<Self> {
        check_domain(n_speakers, max_overlap)?;
        let space = 1usize << n_speakers;
        let mut class_table = Vec::new();
        let mut inverse_table = vec![None; space];
        for mask in 0..space as u32 {
            if mask.count_ones() <= max_overlap {
                inverse_table[mask as usize] = Some(class_table.len() as u32);
                class_table.push(mask);
            }
        }
        Ok(PseCodec {
            n_speakers,
            max_overlap,
            class_table,
            inverse_table,
        })
    }

    pub fn n_speakers(&self) -> u32 {
        self.n_speakers
    }

    pub fn max_overlap(&self) -> u32 {
        self.max_overlap
    }

    pub fn num_classes(&self) -> usize {
        self.class_table.len()
    }

    pub fn class_table(&self) -> &[u32] {
        &self.class_table
    }

    fn vector_to_mask(&self, labels: &[u8]) -> Result<u32> {
        if labels.len() != self.n_speakers as usize {
            return Err(Error::dim(
                "pse_encode",
                format!("{} labels for {} speakers", labels.len(), self.n_speakers),
            ));
        }
        let mut mask = 0u32;
        for (i, &v) in labels.iter().enumerate() {
            match v {
                0 => {}
                1 => mask |= 1 << i,
                _ => return Err(Error::Input(format!("non-binary label {v}"))),
            }
        }
        Ok(mask)
    }

    pub fn encode_mask(&self, mask: u32, frame: usize) -> Result<usize> {
        match self.inverse_table.get(mask as usize).copied().flatten() {
            Some(id) => Ok(id as usize),
            None => Err(Error::Cardinality {
                frame,
                mask,
                active: mask.count_ones(),
                max_overlap: self.max_overlap,
            }),
        }
    }

    /// Class id of one frame's activity vector.
    pub fn encode(&self, labels: &[u8]) -> Result<usize> {
        let mask = self.vector_to_mask(labels)?;
        self.encode_mask(mask, 0)
    }

    /// Activity vector for a class id.
    pub fn decode(&self, class_id: usize) -> Result<Vec<u8>> {
        let mask = *self
            .class_table
            .get(class_id)
            .ok_or_else(|| Error::Index(format!(
                "class {class_id} >= {}",
                self.class_table.len()
            )))?;
        Ok((0..self.n_speakers)
            .map(|i| ((mask >> i) & 1) as u8)
            .collect())
    }

    /// Encode a whole label matrix frame by frame.
    pub fn encode_sequence(
        &self,
        labels: &BinaryLabelMatrix,
        policy: OverflowPolicy,
    ) -> Result<PseLabelSequence> {
        if labels.speakers() != self.n_speakers as usize {
            return Err(Error::dim(
                "encode_sequence",
                format!(
                    "matrix has {} speakers, codec {}",
                    labels.speakers(),
                    self.n_speakers
                ),
            ));
        }
        let mut class_ids = Vec::with_capacity(labels.frames());
        for t in 0..labels.frames() {
            let mut mask = self.vector_to_mask(labels.frame_row(t))?;
            if mask.count_ones() > self.max_overlap {
                match policy {
                    OverflowPolicy::Strict => {
                        return Err(Error::Cardinality {
                            frame: t,
                            mask,
                            active: mask.count_ones(),
                            max_overlap: self.max_overlap,
                        });
                    }
                    OverflowPolicy::KeepLowest => {
                        let mut kept = 0u32;
                        let mut count = 0;
                        for i in 0..self.n_speakers {
                            if mask & (1 << i) != 0 && count < self.max_overlap {
                                kept |= 1 << i;
                                count += 1;
                            }
                        }
                        mask = kept;
                    }
                }
            }
            class_ids.push(self.encode_mask(mask, t)?);
        }
        Ok(PseLabelSequence { class_ids })
    }

    /// Decode a class-id sequence back to an activity matrix.
    pub fn decode_sequence(&self, seq: &PseLabelSequence) -> Result<BinaryLabelMatrix> {
        let mut out = BinaryLabelMatrix::zeros(seq.frames(), self.n_speakers as usize);
        for (t, &id) in seq.class_ids.iter().enumerate() {
            for (s, v) in self.decode(id)?.into_iter().enumerate() {
                out.set(t, s, v);
            }
        }
        Ok(out)
    }
}

// ── Label file formats ───────────────────────────────────────────────

/// One line per frame, N space-separated 0/1 tokens.
pub fn format_label_matrix(labels: &BinaryLabelMatrix) -> String {
    let mut out = String::with_capacity(labels.frames() * (labels.speakers() * 2 + 1));
    for t in 0..labels.frames() {
        let row = labels.frame_row(t);
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push(if *v == 1 { '1' } else { '0' });
        }
        out.push('\n');
    }
    out
}

pub fn parse_label_matrix(text: &str) -> Result<BinaryLabelMatrix> {
    let mut rows: Vec<Vec<u8>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for tok in line.split_whitespace() {
            match tok {
                "0" => row.push(0),
                "1" => row.push(1),
                _ => {
                    return Err(Error::Parse {
                        line: ln + 1,
                        detail: format!("expected 0/1, got `{tok}`"),
                    })
                }
            }
        }
        rows.push(row);
    }
    let speakers = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.iter().any(|r| r.len() != speakers) {
        return Err(Error::Input("ragged label rows".into()));
    }
    BinaryLabelMatrix::new(rows.len(), speakers, rows.concat())
}

/// One class id per line.
pub fn format_class_ids(seq: &PseLabelSequence) -> String {
    let mut out = String::new();
    for id in &seq.class_ids {
        out.push_str(&id.to_string());
        out.push('\n');
    }
    out
}

pub fn parse_class_ids(text: &str) -> Result<PseLabelSequence> {
    let mut class_ids = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let id = line.parse::<usize>().map_err(|_| Error::Parse {
            line: ln + 1,
            detail: format!("expected class id, got `{line}`"),
        })?;
        class_ids.push(id);
    }
    Ok(PseLabelSequence { class_ids })
}
