//! Synthetic overlapping-speech corpus. Speakers are unit-norm signature
//! vectors; a frame's feature vector is the gain-weighted sum of the
//! signatures active at that frame plus isotropic Gaussian noise, so
//! speaker identity is linearly recoverable from clean features. Activity
//! comes from per-speaker two-state Markov chains with a hard cap on
//! simultaneous speakers.

use crate::error::{Error, Result};
use crate::pse::{format_label_matrix, parse_label_matrix, BinaryLabelMatrix};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Target-speaker inventory: ids plus unit-norm signature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerInventory {
    pub ids: Vec<String>,
    /// N x D, one unit-norm row per speaker.
    pub signatures: Tensor,
}

impl SpeakerInventory {
    pub fn count(&self) -> usize {
        self.ids.len()
    }

    pub fn dim(&self) -> usize {
        self.signatures.cols()
    }
}

/// Frame-level activity with its frame rate.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivityTemplate {
    pub matrix: BinaryLabelMatrix,
    pub frame_rate: f64,
}

/// One simulated chunk: features aligned with labels.
#[derive(Clone, Debug)]
pub struct SimChunk {
    pub features: Tensor,
    pub labels: BinaryLabelMatrix,
}

// ── Stream derivation ────────────────────────────────────────────────
// Every random draw comes from a ChaCha stream addressed by purpose, so
// output is independent of generation order and worker count.

const STREAM_INVENTORY: u64 = 1;
const STREAM_EMBED_NOISE: u64 = 2;
const STREAM_CHUNK_BASE: u64 = 16;

fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn chunk_stream(split_idx: usize, chunk_idx: usize, retry: usize, kind: u64) -> u64 {
    STREAM_CHUNK_BASE
        + kind
        + 4 * (chunk_idx as u64)
        + (1 << 32) * (retry as u64 + 1)
        + (1 << 48) * (split_idx as u64 + 1)
}

/// Draw `n` unit-norm signature vectors of dimension `d`.
pub fn gen_inventory(n: usize, d: usize, seed: u64) -> Result<SpeakerInventory> {
    if n == 0 || d < 2 {
        return Err(Error::Domain(format!(
            "inventory wants n >= 1 and d >= 2, got n={n} d={d}"
        )));
    }
    let mut rng = stream_rng(seed, STREAM_INVENTORY);
    let mut signatures = Tensor::zeros(&[n, d]);
    for r in 0..n {
        loop {
            let row: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                for (c, v) in row.iter().enumerate() {
                    signatures.set(r, c, v / norm);
                }
                break;
            }
        }
    }
    Ok(SpeakerInventory {
        ids: (0..n).map(|i| format!("spk{i}")).collect(),
        signatures,
    })
}

/// Sample per-speaker speech activity jointly. Each speaker follows a
/// silence/speech Markov chain (silence enters speech with `on_prob`,
/// speech returns to silence with `off_prob`). When a frame would exceed
/// `max_overlap` active speakers, the earliest-activated keep talking and
/// the newly activated are suppressed.
pub fn gen_template(
    frames: usize,
    inventory: &SpeakerInventory,
    on_prob: f64,
    off_prob: f64,
    max_overlap: u32,
    frame_rate: f64,
    seed: u64,
) -> Result<ActivityTemplate> {
    let mut rng = stream_rng(seed, STREAM_CHUNK_BASE);
    Ok(ActivityTemplate {
        matrix: sample_activity(frames, inventory.count(), on_prob, off_prob, max_overlap, &mut rng)?,
        frame_rate,
    })
}

fn sample_activity(
    frames: usize,
    n: usize,
    on_prob: f64,
    off_prob: f64,
    max_overlap: u32,
    rng: &mut ChaCha12Rng,
) -> Result<BinaryLabelMatrix> {
    if !(on_prob > 0.0 && on_prob < 1.0 && off_prob > 0.0 && off_prob < 1.0) {
        return Err(Error::Domain(
            "transition probabilities must lie in (0,1)".into(),
        ));
    }
    if max_overlap == 0 {
        return Err(Error::Domain("max_overlap must be at least 1".into()));
    }
    let mut matrix = BinaryLabelMatrix::zeros(frames, n);
    let mut active = vec![false; n];
    let mut activated_at = vec![usize::MAX; n];
    for t in 0..frames {
        let mut fresh: Vec<usize> = Vec::new();
        for s in 0..n {
            if active[s] {
                if rng.gen_bool(off_prob) {
                    active[s] = false;
                    activated_at[s] = usize::MAX;
                }
            } else if rng.gen_bool(on_prob) {
                active[s] = true;
                activated_at[s] = t;
                fresh.push(s);
            }
        }
        let count = active.iter().filter(|&&a| a).count();
        if count > max_overlap as usize {
            // Ongoing speakers never exceed the cap, so only fresh
            // activations can; drop the newest until back under it.
            let excess = count - max_overlap as usize;
            for &s in fresh.iter().rev().take(excess) {
                active[s] = false;
                activated_at[s] = usize::MAX;
            }
        }
        for s in 0..n {
            if active[s] {
                matrix.set(t, s, 1);
            }
        }
    }
    Ok(matrix)
}

/// Fraction of speech frames carrying two or more active speakers;
/// 0 when there is no speech at all.
pub fn overlap_ratio(matrix: &BinaryLabelMatrix) -> f64 {
    let mut speech = 0usize;
    let mut overlapped = 0usize;
    for t in 0..matrix.frames() {
        let active = matrix.active_count(t);
        if active >= 1 {
            speech += 1;
        }
        if active >= 2 {
            overlapped += 1;
        }
    }
    if speech == 0 {
        0.0
    } else {
        overlapped as f64 / speech as f64
    }
}

/// Render features for a template: every contiguous active run gets one
/// gain drawn uniformly from `gain_range`, frames sum the gain-weighted
/// signatures of their active speakers, and isotropic Gaussian noise with
/// deviation `noise_sigma` is added everywhere.
pub fn render_features(
    template: &ActivityTemplate,
    inventory: &SpeakerInventory,
    noise_sigma: f64,
    gain_range: (f64, f64),
    seed: u64,
) -> Result<Tensor> {
    render_features_with(template, inventory, noise_sigma, gain_range, &mut stream_rng(seed, STREAM_CHUNK_BASE + 1))
}

fn render_features_with(
    template: &ActivityTemplate,
    inventory: &SpeakerInventory,
    noise_sigma: f64,
    gain_range: (f64, f64),
    rng: &mut ChaCha12Rng,
) -> Result<Tensor> {
    if noise_sigma < 0.0 {
        return Err(Error::Domain("noise_sigma must be nonnegative".into()));
    }
    let (lo, hi) = gain_range;
    if !(lo <= hi) || lo <= 0.0 {
        return Err(Error::Domain(format!("bad gain range [{lo}, {hi}]")));
    }
    let matrix = &template.matrix;
    if matrix.speakers() != inventory.count() {
        return Err(Error::dim(
            "render_features",
            "template speakers vs inventory size",
        ));
    }
    let frames = matrix.frames();
    let dim = inventory.dim();

    // Per-frame gains, constant within each contiguous active run.
    let mut gains = vec![0.0f64; frames * matrix.speakers()];
    for s in 0..matrix.speakers() {
        let mut t = 0;
        while t < frames {
            if matrix.get(t, s) == 1 {
                let start = t;
                while t < frames && matrix.get(t, s) == 1 {
                    t += 1;
                }
                let g = if lo == hi { lo } else { rng.gen_range(lo..hi) };
                for row in start..t {
                    gains[row * matrix.speakers() + s] = g;
                }
            } else {
                t += 1;
            }
        }
    }

    let mut features = Tensor::zeros(&[frames, dim]);
    for t in 0..frames {
        for s in 0..matrix.speakers() {
            if matrix.get(t, s) == 1 {
                let g = gains[t * matrix.speakers() + s];
                let sig = inventory.signatures.row(s);
                for c in 0..dim {
                    let v = features.at(t, c) + g * sig[c];
                    features.set(t, c, v);
                }
            }
        }
        if noise_sigma > 0.0 {
            for c in 0..dim {
                let z: f64 = rng.sample(StandardNormal);
                let v = features.at(t, c) + noise_sigma * z;
                features.set(t, c, v);
            }
        }
    }
    Ok(features)
}

// ── Corpus configuration and generation ──────────────────────────────

pub const SPLIT_NAMES: [&str; 3] = ["train", "eval", "test"];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_speakers: u32,
    pub max_overlap: u32,
    pub feature_dim: usize,
    pub chunk_frames: usize,
    pub frame_rate: f64,
    pub train_chunks: usize,
    pub eval_chunks: usize,
    pub test_chunks: usize,
    pub on_prob: f64,
    pub off_prob: f64,
    pub noise_sigma: f64,
    pub gain_range: (f64, f64),
    /// Deviation of the Gaussian perturbation applied to the embeddings
    /// handed to the model (the rendered features always use the clean
    /// signatures).
    pub embed_noise: f64,
    pub overlap_band: (f64, f64),
    pub max_retries: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_speakers: 4,
            max_overlap: 4,
            feature_dim: 16,
            chunk_frames: 400,
            frame_rate: 100.0,
            train_chunks: 2000,
            eval_chunks: 200,
            test_chunks: 200,
            on_prob: 0.006,
            off_prob: 0.02,
            noise_sigma: 0.3,
            gain_range: (0.6, 1.4),
            embed_noise: 0.05,
            overlap_band: (0.30, 0.45),
            max_retries: 25,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitManifest {
    pub name: String,
    pub chunks: usize,
    pub overlap_ratio: f64,
    pub retries: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub config: CorpusConfig,
    pub splits: Vec<SplitManifest>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const EMBEDDINGS_FILE: &str = "speakers.emb";

fn feat_path(root: &Path, split: &str, idx: usize) -> PathBuf {
    root.join(split).join(format!("chunk_{idx}.feat"))
}

fn lab_path(root: &Path, split: &str, idx: usize) -> PathBuf {
    root.join(split).join(format!("chunk_{idx}.lab"))
}

fn format_features(features: &Tensor) -> String {
    let (t, f) = (features.rows(), features.cols());
    let mut out = String::with_capacity(t * f * 20);
    let _ = writeln!(out, "{t} {f}");
    for r in 0..t {
        let row = features.row(r);
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

fn parse_features(text: &str) -> Result<Tensor> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, detail: "empty feature file".into() })?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Parse { line: 1, detail: format!("bad header `{header}`") })?;
    if dims.len() != 2 {
        return Err(Error::Parse { line: 1, detail: "header wants `T F`".into() });
    }
    let (t, f) = (dims[0], dims[1]);
    let mut data = Vec::with_capacity(t * f);
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                line: idx + 1,
                detail: format!("bad value `{tok}`"),
            })?;
            data.push(v);
        }
    }
    Tensor::new(vec![t, f], data)
}

fn format_embeddings(inventory: &SpeakerInventory) -> String {
    let (n, d) = (inventory.count(), inventory.dim());
    let mut out = String::new();
    let _ = writeln!(out, "{n} {d}");
    for (r, id) in inventory.ids.iter().enumerate() {
        let _ = write!(out, "{id}");
        for v in inventory.signatures.row(r) {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    out
}

fn parse_embeddings(text: &str) -> Result<SpeakerInventory> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, detail: "empty embedding file".into() })?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Parse { line: 1, detail: format!("bad header `{header}`") })?;
    if dims.len() != 2 {
        return Err(Error::Parse { line: 1, detail: "header wants `N D`".into() });
    }
    let (n, d) = (dims[0], dims[1]);
    let mut ids = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * d);
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        let id = toks.next().ok_or_else(|| Error::Parse {
            line: idx + 1,
            detail: "missing speaker id".into(),
        })?;
        ids.push(id.to_string());
        for tok in toks {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                line: idx + 1,
                detail: format!("bad value `{tok}`"),
            })?;
            data.push(v);
        }
    }
    Ok(SpeakerInventory {
        ids,
        signatures: Tensor::new(vec![n, d], data)?,
    })
}

/// Generate and persist a full train/eval/test corpus. Splits draw from
/// disjoint random streams; a split is regenerated with a fresh stream
/// while its overlap ratio falls outside the configured band.
pub fn make_corpus(config: &CorpusConfig, root: impl AsRef<Path>, seed: u64) -> Result<Manifest> {
    let root = root.as_ref();
    let (lo, hi) = config.overlap_band;
    if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
        return Err(Error::Domain(format!("bad overlap band [{lo}, {hi}]")));
    }
    if config.max_overlap == 0 || config.max_overlap > config.n_speakers {
        return Err(Error::Domain("max_overlap outside 1..=n_speakers".into()));
    }

    let inventory = gen_inventory(config.n_speakers as usize, config.feature_dim, seed)?;

    // The embeddings handed to the model; features below use the clean rows.
    let published = if config.embed_noise > 0.0 {
        let mut rng = stream_rng(seed, STREAM_EMBED_NOISE);
        let mut sig = inventory.signatures.clone();
        for v in sig.data_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += config.embed_noise * z;
        }
        SpeakerInventory { ids: inventory.ids.clone(), signatures: sig }
    } else {
        inventory.clone()
    };

    std::fs::create_dir_all(root)?;
    std::fs::write(root.join(EMBEDDINGS_FILE), format_embeddings(&published))?;

    let counts = [config.train_chunks, config.eval_chunks, config.test_chunks];
    let mut splits = Vec::new();
    for (split_idx, (&name, &count)) in SPLIT_NAMES.iter().zip(counts.iter()).enumerate() {
        std::fs::create_dir_all(root.join(name))?;
        let mut retry = 0usize;
        let (templates, ratio) = loop {
            let mut templates = Vec::with_capacity(count);
            let mut speech = 0usize;
            let mut overlapped = 0usize;
            for chunk in 0..count {
                let mut rng = stream_rng(seed, chunk_stream(split_idx, chunk, retry, 0));
                let matrix = sample_activity(
                    config.chunk_frames,
                    config.n_speakers as usize,
                    config.on_prob,
                    config.off_prob,
                    config.max_overlap,
                    &mut rng,
                )?;
                for t in 0..matrix.frames() {
                    let active = matrix.active_count(t);
                    if active >= 1 {
                        speech += 1;
                    }
                    if active >= 2 {
                        overlapped += 1;
                    }
                }
                templates.push(matrix);
            }
            let ratio = if speech == 0 {
                0.0
            } else {
                overlapped as f64 / speech as f64
            };
            if ratio >= lo && ratio <= hi {
                break (templates, ratio);
            }
            retry += 1;
            if retry > config.max_retries {
                return Err(Error::Generation {
                    achieved: ratio,
                    lo,
                    hi,
                    retries: config.max_retries,
                });
            }
        };

        for (chunk, matrix) in templates.into_iter().enumerate() {
            let template = ActivityTemplate {
                matrix,
                frame_rate: config.frame_rate,
            };
            let mut rng = stream_rng(seed, chunk_stream(split_idx, chunk, retry, 1));
            let features = render_features_with(
                &template,
                &inventory,
                config.noise_sigma,
                config.gain_range,
                &mut rng,
            )?;
            std::fs::write(feat_path(root, name, chunk), format_features(&features))?;
            std::fs::write(lab_path(root, name, chunk), format_label_matrix(&template.matrix))?;
        }
        splits.push(SplitManifest {
            name: name.to_string(),
            chunks: count,
            overlap_ratio: ratio,
            retries: retry,
        });
    }

    let manifest = Manifest {
        version: 1,
        seed,
        config: config.clone(),
        splits,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(root.join(MANIFEST_FILE), text)?;
    Ok(manifest)
}

/// In-memory view of a persisted corpus.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub inventory: SpeakerInventory,
    root: PathBuf,
}

impl Dataset {
    pub fn open(root: impl AsRef<Path>) -> Result<Dataset> {
        let root = root.as_ref().to_path_buf();
        let manifest: Manifest =
            serde_json::from_str(&std::fs::read_to_string(root.join(MANIFEST_FILE))?)?;
        let inventory = parse_embeddings(&std::fs::read_to_string(root.join(EMBEDDINGS_FILE))?)?;
        Ok(Dataset {
            manifest,
            inventory,
            root,
        })
    }

    pub fn split_chunk_count(&self, split: &str) -> Result<usize> {
        self.manifest
            .splits
            .iter()
            .find(|s| s.name == split)
            .map(|s| s.chunks)
            .ok_or_else(|| Error::Input(format!("unknown split `{split}`")))
    }

    pub fn load_chunk(&self, split: &str, idx: usize) -> Result<SimChunk> {
        let features = parse_features(&std::fs::read_to_string(feat_path(&self.root, split, idx))?)?;
        let labels = parse_label_matrix(&std::fs::read_to_string(lab_path(&self.root, split, idx))?)?;
        if features.rows() != labels.frames() {
            return Err(Error::dim("load_chunk", "feature/label frame mismatch"));
        }
        Ok(SimChunk { features, labels })
    }

    pub fn load_split(&self, split: &str) -> Result<Vec<SimChunk>> {
        let count = self.split_chunk_count(split)?;
        use rayon::prelude::*;
        (0..count)
            .into_par_iter()
            .map(|i| self.load_chunk(split, i))
            .collect()
    }
}
