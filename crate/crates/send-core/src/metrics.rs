//! Diarization error rate. Frame-level scoring is the ground truth;
//! segment scoring rasterizes to frames and reuses it.

use crate::error::{Error, Result};
use crate::postproc::{smooth_binary, SegmentList};
use crate::pse::BinaryLabelMatrix;
use crate::rttm::frames_from_segments;
use crate::tensor::Tensor;

/// Frame accounting for one scored recording or split.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DerReport {
    /// Scored reference speaker-frames (sum over frames of active ref speakers).
    pub total: u64,
    pub missed: u64,
    pub false_alarm: u64,
    pub confusion: u64,
}

impl DerReport {
    pub fn der(&self) -> f64 {
        (self.missed + self.false_alarm + self.confusion) as f64 / self.total.max(1) as f64
    }

    pub fn merge(&mut self, other: &DerReport) {
        self.total += other.total;
        self.missed += other.missed;
        self.false_alarm += other.false_alarm;
        self.confusion += other.confusion;
    }

    /// `total  miss  fa  conf  der` on one line.
    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{:.6}",
            self.total,
            self.missed,
            self.false_alarm,
            self.confusion,
            self.der()
        )
    }

    pub fn to_block(&self) -> String {
        format!(
            "scored speaker-frames: {}\nmissed speech:         {}\nfalse alarm:           {}\nspeaker confusion:     {}\nDER:                   {:.4} ({:.2}%)\n",
            self.total,
            self.missed,
            self.false_alarm,
            self.confusion,
            self.der(),
            self.der() * 100.0
        )
    }
}

/// How hypothesis speaker columns align with reference columns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SpeakerMapping {
    /// Columns already correspond (enrolled target speakers).
    Identity,
    /// Search all column permutations for the lowest DER.
    Optimal,
}

fn score_with_permutation(
    reference: &BinaryLabelMatrix,
    hypothesis: &BinaryLabelMatrix,
    perm: Option<&[usize]>,
) -> DerReport {
    let n = reference.speakers();
    let mut report = DerReport::default();
    for t in 0..reference.frames() {
        let ref_row = reference.frame_row(t);
        let hyp_row = hypothesis.frame_row(t);
        let mut ref_count = 0u64;
        let mut hyp_count = 0u64;
        let mut both = 0u64;
        for c in 0..n {
            let r = ref_row[c];
            let h = match perm {
                // perm[j] is the reference column hypothesis column j plays.
                Some(p) => {
                    let mut v = 0;
                    for (j, &pj) in p.iter().enumerate() {
                        if pj == c {
                            v = hyp_row[j];
                            break;
                        }
                    }
                    v
                }
                None => hyp_row[c],
            };
            ref_count += r as u64;
            hyp_count += h as u64;
            both += (r & h) as u64;
        }
        report.total += ref_count;
        report.missed += ref_count.saturating_sub(hyp_count);
        report.false_alarm += hyp_count.saturating_sub(ref_count);
        report.confusion += ref_count.min(hyp_count) - both.min(ref_count.min(hyp_count));
    }
    report
}

/// Frame-level DER with full overlap scoring and no collar.
///
/// Per frame, with R the reference active set and H the (mapped)
/// hypothesis active set: missed grows by max(|R|-|H|, 0), false alarm by
/// max(|H|-|R|, 0), confusion by min(|R|,|H|) - |R∩H|.
pub fn der_frames(
    reference: &BinaryLabelMatrix,
    hypothesis: &BinaryLabelMatrix,
    mapping: SpeakerMapping,
) -> Result<DerReport> {
    if reference.frames() != hypothesis.frames() || reference.speakers() != hypothesis.speakers() {
        return Err(Error::dim(
            "der_frames",
            format!(
                "{}x{} vs {}x{}",
                reference.frames(),
                reference.speakers(),
                hypothesis.frames(),
                hypothesis.speakers()
            ),
        ));
    }
    match mapping {
        SpeakerMapping::Identity => Ok(score_with_permutation(reference, hypothesis, None)),
        SpeakerMapping::Optimal => {
            let perm = optimal_mapping(reference, hypothesis)?;
            Ok(score_with_permutation(reference, hypothesis, Some(&perm)))
        }
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut items: Vec<usize> = (0..n).collect();
    fn heap_lex(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
        // generate in lexicographic order by choosing each position in turn
        if k == items.len() {
            out.push(items.clone());
            return;
        }
        for i in k..items.len() {
            let v = items.remove(i);
            items.insert(k, v);
            heap_lex(items, k + 1, out);
            let v = items.remove(k);
            items.insert(i, v);
        }
    }
    heap_lex(&mut items, 0, &mut out);
    out
}

/// Brute-force search over all column permutations of the hypothesis for
/// the one minimizing DER. `perm[j]` is the reference column that
/// hypothesis column `j` is mapped onto. Ties resolve to the
/// lexicographically smallest permutation.
pub fn optimal_mapping(
    reference: &BinaryLabelMatrix,
    hypothesis: &BinaryLabelMatrix,
) -> Result<Vec<usize>> {
    let n = reference.speakers();
    if n > 8 {
        return Err(Error::Domain(format!(
            "optimal mapping supports up to 8 speakers, got {n}"
        )));
    }
    if reference.frames() != hypothesis.frames() || n != hypothesis.speakers() {
        return Err(Error::dim("optimal_mapping", "shape mismatch"));
    }
    let mut best: Option<(u64, Vec<usize>)> = None;
    for perm in permutations(n) {
        let report = score_with_permutation(reference, hypothesis, Some(&perm));
        let errors = report.missed + report.false_alarm + report.confusion;
        match &best {
            Some((e, _)) if *e <= errors => {}
            _ => best = Some((errors, perm)),
        }
    }
    Ok(best.expect("at least one permutation").1)
}

/// Rasterize both segment lists at `frame_rate`, drop frames within
/// `collar` seconds of any reference boundary (strictly closer than the
/// collar, so collar 0 scores everything), then score frames.
pub fn der_segments(
    reference: &SegmentList,
    hypothesis: &SegmentList,
    frame_rate: f64,
    collar: f64,
) -> Result<DerReport> {
    if reference.recording != hypothesis.recording {
        return Err(Error::Input(format!(
            "recording ids differ: `{}` vs `{}`",
            reference.recording, hypothesis.recording
        )));
    }
    if frame_rate <= 0.0 {
        return Err(Error::Domain("frame rate must be positive".into()));
    }
    let mut speakers: Vec<String> = reference
        .speakers()
        .into_iter()
        .chain(hypothesis.speakers())
        .collect();
    speakers.sort();
    speakers.dedup();

    let end = reference.end_time().max(hypothesis.end_time());
    let total_frames = (end * frame_rate - 1e-9).ceil().max(0.0) as usize;
    let ref_m = frames_from_segments(reference, frame_rate, total_frames, &speakers)?;
    let hyp_m = frames_from_segments(hypothesis, frame_rate, total_frames, &speakers)?;

    let (ref_m, hyp_m) = if collar > 0.0 {
        let mut boundaries = Vec::new();
        for s in &reference.segments {
            boundaries.push(s.onset);
            boundaries.push(s.onset + s.duration);
        }
        let keep: Vec<bool> = (0..total_frames)
            .map(|t| {
                let time = t as f64 / frame_rate;
                boundaries.iter().all(|b| (time - b).abs() >= collar)
            })
            .collect();
        let kept = keep.iter().filter(|&&k| k).count();
        let mut rf = BinaryLabelMatrix::zeros(kept, speakers.len());
        let mut hf = BinaryLabelMatrix::zeros(kept, speakers.len());
        let mut row = 0;
        for t in 0..total_frames {
            if keep[t] {
                for c in 0..speakers.len() {
                    rf.set(row, c, ref_m.get(t, c));
                    hf.set(row, c, hyp_m.get(t, c));
                }
                row += 1;
            }
        }
        (rf, hf)
    } else {
        (ref_m, hyp_m)
    };

    der_frames(&ref_m, &hyp_m, SpeakerMapping::Identity)
}

/// One sweep point: decision threshold and the score it produced.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub threshold: f64,
    pub report: DerReport,
}

#[derive(Clone, Debug)]
pub struct ThresholdSweep {
    pub points: Vec<SweepPoint>,
    /// Mean DER of the three best thresholds.
    pub best3_mean_der: f64,
}

/// Binarize + median-smooth + score at each threshold in {0, step, .., 1}.
pub fn threshold_sweep(
    probabilities: &Tensor,
    reference: &BinaryLabelMatrix,
    grid_step: f64,
    median_window: usize,
) -> Result<ThresholdSweep> {
    if !(grid_step > 0.0 && grid_step < 1.0) {
        return Err(Error::Domain(format!(
            "grid step must lie in (0,1), got {grid_step}"
        )));
    }
    let steps = (1.0 / grid_step).round() as usize;
    let mut points = Vec::with_capacity(steps + 1);
    for i in 0..=steps {
        let threshold = (i as f64 * grid_step).min(1.0);
        let binary = crate::postproc::binarize(probabilities, threshold);
        let smoothed = smooth_binary(&binary, median_window)?;
        let report = der_frames(reference, &smoothed, SpeakerMapping::Identity)?;
        points.push(SweepPoint { threshold, report });
    }
    let mut ders: Vec<f64> = points.iter().map(|p| p.report.der()).collect();
    ders.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = ders.len().min(3);
    let best3_mean_der = ders[..k].iter().sum::<f64>() / k as f64;
    Ok(ThresholdSweep {
        points,
        best3_mean_der,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::postproc::{default_speaker_ids, segments_from_binary};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_matrix(frames: usize, speakers: usize, p: f64, rng: &mut ChaCha12Rng) -> BinaryLabelMatrix {
        let mut m = BinaryLabelMatrix::zeros(frames, speakers);
        for t in 0..frames {
            for n in 0..speakers {
                if rng.gen_bool(p) {
                    m.set(t, n, 1);
                }
            }
        }
        m
    }

    #[test]
    fn identical_matrices_score_zero() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let m = random_matrix(50, 4, 0.4, &mut rng);
        let r = der_frames(&m, &m, SpeakerMapping::Identity).unwrap();
        assert_eq!(r.der(), 0.0);
        assert_eq!(r.total, m.values().iter().map(|&v| v as u64).sum::<u64>());
    }

    #[test]
    fn silent_hypothesis_is_all_missed() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let m = random_matrix(40, 3, 0.5, &mut rng);
        let silent = BinaryLabelMatrix::zeros(40, 3);
        let r = der_frames(&m, &silent, SpeakerMapping::Identity).unwrap();
        assert_eq!(r.missed, r.total);
        assert_eq!(r.false_alarm, 0);
        assert_eq!(r.confusion, 0);
        assert_eq!(r.der(), 1.0);
    }

    #[test]
    fn hand_counted_quarter_der() {
        // ref: spk1 frames 0-9, spk2 frames 5-14; hyp: spk1 0-9, spk2 0-14
        let mut reference = BinaryLabelMatrix::zeros(15, 2);
        let mut hypothesis = BinaryLabelMatrix::zeros(15, 2);
        for t in 0..10 {
            reference.set(t, 0, 1);
            hypothesis.set(t, 0, 1);
        }
        for t in 5..15 {
            reference.set(t, 1, 1);
        }
        for t in 0..15 {
            hypothesis.set(t, 1, 1);
        }
        let r = der_frames(&reference, &hypothesis, SpeakerMapping::Identity).unwrap();
        assert_eq!(r.total, 20);
        assert_eq!(r.false_alarm, 5);
        assert_eq!(r.missed, 0);
        assert_eq!(r.confusion, 0);
        assert!((r.der() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn segment_scoring_matches_frame_scoring_at_zero_collar() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let ids = default_speaker_ids(3);
        for _ in 0..100 {
            let frames = rng.gen_range(5..80);
            let reference = random_matrix(frames, 3, 0.35, &mut rng);
            let hypothesis = random_matrix(frames, 3, 0.35, &mut rng);
            let ref_segs = segments_from_binary(&reference, &ids, 100.0, "rec", 0).unwrap();
            let hyp_segs = segments_from_binary(&hypothesis, &ids, 100.0, "rec", 0).unwrap();
            let frame_report = der_frames(&reference, &hypothesis, SpeakerMapping::Identity).unwrap();
            let seg_report = der_segments(&ref_segs, &hyp_segs, 100.0, 0.0).unwrap();
            // Rasterization length only covers active regions; trailing
            // all-silence frames contribute nothing to any count.
            assert_eq!(frame_report, seg_report);
        }
    }

    #[test]
    fn quarter_der_example_as_segments() {
        use crate::postproc::{Segment, SegmentList};
        let reference = SegmentList {
            recording: "m".into(),
            frame_rate: 100.0,
            segments: vec![
                Segment { speaker: "spk1".into(), onset: 0.0, duration: 0.1 },
                Segment { speaker: "spk2".into(), onset: 0.05, duration: 0.1 },
            ],
        };
        let hypothesis = SegmentList {
            recording: "m".into(),
            frame_rate: 100.0,
            segments: vec![
                Segment { speaker: "spk1".into(), onset: 0.0, duration: 0.1 },
                Segment { speaker: "spk2".into(), onset: 0.0, duration: 0.15 },
            ],
        };
        let r = der_segments(&reference, &hypothesis, 100.0, 0.0).unwrap();
        assert_eq!(r.total, 20);
        assert!((r.der() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn collar_covering_everything_scores_zero_total() {
        use crate::postproc::{Segment, SegmentList};
        let reference = SegmentList {
            recording: "m".into(),
            frame_rate: 100.0,
            segments: vec![Segment { speaker: "a".into(), onset: 0.0, duration: 1.0 }],
        };
        let hypothesis = SegmentList {
            recording: "m".into(),
            frame_rate: 100.0,
            segments: vec![Segment { speaker: "a".into(), onset: 0.2, duration: 0.3 }],
        };
        let r = der_segments(&reference, &hypothesis, 100.0, 100.0).unwrap();
        assert_eq!(r.total, 0);
        assert_eq!(r.der(), 0.0);
    }

    #[test]
    fn mismatched_recordings_are_rejected() {
        let a = SegmentList::empty("a", 100.0);
        let b = SegmentList::empty("b", 100.0);
        assert!(der_segments(&a, &b, 100.0, 0.0).is_err());
    }

    #[test]
    fn optimal_mapping_recovers_column_swap() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let reference = random_matrix(60, 3, 0.4, &mut rng);
        // hyp column j = ref column sigma(j), sigma = (1,2,0)
        let sigma = [1usize, 2, 0];
        let mut hypothesis = BinaryLabelMatrix::zeros(60, 3);
        for t in 0..60 {
            for j in 0..3 {
                hypothesis.set(t, j, reference.get(t, sigma[j]));
            }
        }
        let perm = optimal_mapping(&reference, &hypothesis).unwrap();
        assert_eq!(perm, sigma.to_vec());
        let r = der_frames(&reference, &hypothesis, SpeakerMapping::Optimal).unwrap();
        assert_eq!(r.der(), 0.0);
    }

    #[test]
    fn optimal_mapping_identity_for_equal_inputs() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let m = random_matrix(30, 4, 0.3, &mut rng);
        assert_eq!(optimal_mapping(&m, &m).unwrap(), vec![0, 1, 2, 3]);
        assert!(optimal_mapping(
            &BinaryLabelMatrix::zeros(2, 9),
            &BinaryLabelMatrix::zeros(2, 9)
        )
        .is_err());
    }

    /// Set-based rescoring used only to cross-check the column
    /// implementation: collects explicit index sets per frame.
    fn der_by_sets(
        reference: &BinaryLabelMatrix,
        hypothesis: &BinaryLabelMatrix,
        perm: &[usize],
    ) -> (u64, u64, u64, u64) {
        use std::collections::HashSet;
        let (mut total, mut miss, mut fa, mut conf) = (0u64, 0u64, 0u64, 0u64);
        for t in 0..reference.frames() {
            let r: HashSet<usize> = (0..reference.speakers())
                .filter(|&c| reference.get(t, c) == 1)
                .collect();
            let h: HashSet<usize> = (0..hypothesis.speakers())
                .filter(|&c| hypothesis.get(t, c) == 1)
                .map(|c| perm[c])
                .collect();
            total += r.len() as u64;
            miss += (r.len() as i64 - h.len() as i64).max(0) as u64;
            fa += (h.len() as i64 - r.len() as i64).max(0) as u64;
            conf += (r.len().min(h.len()) - r.intersection(&h).count()) as u64;
        }
        (total, miss, fa, conf)
    }

    #[test]
    fn mapping_agrees_with_independent_reimplementation() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        for _ in 0..50 {
            let frames = rng.gen_range(10..50);
            let reference = random_matrix(frames, 3, 0.4, &mut rng);
            let hypothesis = random_matrix(frames, 3, 0.4, &mut rng);

            let perm = optimal_mapping(&reference, &hypothesis).unwrap();
            let got = score_with_permutation(&reference, &hypothesis, Some(&perm));
            let (total, miss, fa, conf) = der_by_sets(&reference, &hypothesis, &perm);
            assert_eq!((got.total, got.missed, got.false_alarm, got.confusion), (total, miss, fa, conf));

            // exhaustive search over the 6 permutations with the set oracle
            let mut best_err = u64::MAX;
            for p in permutations(3) {
                let (_, m, f, c) = der_by_sets(&reference, &hypothesis, &p);
                best_err = best_err.min(m + f + c);
            }
            assert_eq!(got.missed + got.false_alarm + got.confusion, best_err);
        }
    }

    #[test]
    fn der_invariant_under_joint_permutation() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let reference = random_matrix(40, 4, 0.35, &mut rng);
        let hypothesis = random_matrix(40, 4, 0.35, &mut rng);
        let base = der_frames(&reference, &hypothesis, SpeakerMapping::Identity).unwrap();
        let perm = [2usize, 0, 3, 1];
        let mut ref_p = BinaryLabelMatrix::zeros(40, 4);
        let mut hyp_p = BinaryLabelMatrix::zeros(40, 4);
        for t in 0..40 {
            for c in 0..4 {
                ref_p.set(t, perm[c], reference.get(t, c));
                hyp_p.set(t, perm[c], hypothesis.get(t, c));
            }
        }
        let permuted = der_frames(&ref_p, &hyp_p, SpeakerMapping::Identity).unwrap();
        assert_eq!(base, permuted);
    }

    #[test]
    fn removing_hypothesis_activity_never_decreases_missed() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        for _ in 0..50 {
            let frames = rng.gen_range(5..40);
            let reference = random_matrix(frames, 3, 0.4, &mut rng);
            let hypothesis = random_matrix(frames, 3, 0.4, &mut rng);
            let base = der_frames(&reference, &hypothesis, SpeakerMapping::Identity).unwrap();

            let active: Vec<(usize, usize)> = (0..frames)
                .flat_map(|t| (0..3).map(move |n| (t, n)))
                .filter(|&(t, n)| hypothesis.get(t, n) == 1)
                .collect();
            if active.is_empty() {
                continue;
            }
            let (t, n) = active[rng.gen_range(0..active.len())];
            let mut reduced = hypothesis.clone();
            reduced.set(t, n, 0);
            let after = der_frames(&reference, &reduced, SpeakerMapping::Identity).unwrap();
            assert!(after.missed >= base.missed);
        }
    }

    #[test]
    fn sweep_counts_and_oracle_probabilities() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let reference = random_matrix(30, 2, 0.4, &mut rng);
        let probs = Tensor::new(
            vec![30, 2],
            reference.values().iter().map(|&v| v as f64).collect(),
        )
        .unwrap();
        let sweep = threshold_sweep(&probs, &reference, 0.1, 1).unwrap();
        assert_eq!(sweep.points.len(), 11);
        // all interior thresholds reproduce the labels exactly
        for p in &sweep.points {
            if p.threshold > 0.0 && p.threshold < 1.0 + 1e-12 {
                assert_eq!(p.report.der(), 0.0, "threshold {}", p.threshold);
            }
        }
        assert_eq!(sweep.best3_mean_der, 0.0);
    }

    #[test]
    fn report_tsv_shape() {
        let r = DerReport { total: 20, missed: 0, false_alarm: 5, confusion: 0 };
        assert_eq!(r.to_tsv(), "20\t0\t5\t0\t0.250000");
        assert!(r.to_block().contains("25.00%"));
    }
}
