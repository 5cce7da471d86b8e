//! The diarization scorer network: a speech encoder over frame features,
//! a speaker encoder over target embeddings, context-independent and
//! context-dependent similarity scorers, a post-processing stack over the
//! concatenated scores, and a class head (power-set softmax logits or
//! per-speaker multi-label logits).

pub mod attention;
pub mod fsmn;

use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamStore};
use crate::pse::num_classes;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use attention::{cd_score_one_speaker, positional_encoding, CdScorerDims};
use fsmn::{fsmn_layer_forward, receptive_field, Activation, FsmnLayerSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CdScorerKind {
    SelfAttention,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    Pse,
    Multilabel,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub speech_layers: Vec<FsmnLayerSpec>,
    pub post_layers: Vec<FsmnLayerSpec>,
    pub speaker_layers: usize,
    pub ci_scorer: bool,
    pub cd_scorer: CdScorerKind,
    pub cd_depth: usize,
    pub cd_heads: usize,
    pub cd_ffn_mult: usize,
    pub head: HeadKind,
    pub n_speakers: u32,
    pub max_overlap: u32,
}

fn exp_strides(count: usize) -> Vec<FsmnLayerSpec> {
    // stride pattern 1,2,4,8 on the first four layers, repeating beyond
    (0..count)
        .map(|i| FsmnLayerSpec::new(1, 1, 1 << (i % 4)))
        .collect()
}

impl ModelConfig {
    /// Desk-scale configuration: hidden 64, 4-layer speech encoder plus
    /// 3-layer post stack, 2-layer/2-head context scorer.
    pub fn small() -> Self {
        ModelConfig {
            feature_dim: 16,
            embed_dim: 16,
            hidden_dim: 64,
            speech_layers: exp_strides(4),
            post_layers: exp_strides(3),
            speaker_layers: 2,
            ci_scorer: true,
            cd_scorer: CdScorerKind::SelfAttention,
            cd_depth: 2,
            cd_heads: 2,
            cd_ffn_mult: 2,
            head: HeadKind::Pse,
            n_speakers: 4,
            max_overlap: 4,
        }
    }

    /// Full-scale configuration: hidden 512, 8-layer speech encoder,
    /// 6-layer post stack, 3-layer speaker encoder, 4-layer/4-head
    /// context scorer.
    pub fn paper() -> Self {
        let mut post = exp_strides(6);
        post[4] = FsmnLayerSpec::new(1, 1, 1);
        post[5] = FsmnLayerSpec::new(1, 1, 1);
        ModelConfig {
            feature_dim: 80,
            embed_dim: 512,
            hidden_dim: 512,
            speech_layers: exp_strides(8),
            post_layers: post,
            speaker_layers: 3,
            ci_scorer: true,
            cd_scorer: CdScorerKind::SelfAttention,
            cd_depth: 4,
            cd_heads: 4,
            cd_ffn_mult: 4,
            head: HeadKind::Pse,
            n_speakers: 4,
            max_overlap: 4,
        }
    }

    /// Tiny configuration for gradient checks and fast tests.
    pub fn tiny(feature_dim: usize, n_speakers: u32, hidden_dim: usize) -> Self {
        ModelConfig {
            feature_dim,
            embed_dim: feature_dim,
            hidden_dim,
            speech_layers: vec![FsmnLayerSpec::new(1, 1, 1), FsmnLayerSpec::new(1, 1, 2)],
            post_layers: vec![FsmnLayerSpec::new(1, 1, 1)],
            speaker_layers: 2,
            ci_scorer: true,
            cd_scorer: CdScorerKind::SelfAttention,
            cd_depth: 1,
            cd_heads: 2,
            cd_ffn_mult: 2,
            head: HeadKind::Pse,
            n_speakers,
            max_overlap: n_speakers,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "small" => Ok(ModelConfig::small()),
            "paper" => Ok(ModelConfig::paper()),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected `small` or `paper`)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.speech_layers.is_empty() || self.post_layers.is_empty() {
            return Err(Error::Config("need at least one layer per stack".into()));
        }
        if self.speaker_layers == 0 {
            return Err(Error::Config("speaker encoder needs a layer".into()));
        }
        if !self.ci_scorer && self.cd_scorer == CdScorerKind::None {
            return Err(Error::Config("all scorers disabled".into()));
        }
        if self.cd_scorer == CdScorerKind::SelfAttention {
            if self.cd_heads == 0 || self.hidden_dim % self.cd_heads != 0 {
                return Err(Error::Config(format!(
                    "hidden {} not divisible into {} heads",
                    self.hidden_dim, self.cd_heads
                )));
            }
            if self.cd_depth == 0 {
                return Err(Error::Config("context scorer needs depth >= 1".into()));
            }
        }
        num_classes(self.n_speakers, self.max_overlap)?;
        Ok(())
    }

    /// Width of the class head: the power-set class count, or one output
    /// per speaker for the multi-label head.
    pub fn head_width(&self) -> Result<usize> {
        match self.head {
            HeadKind::Pse => num_classes(self.n_speakers, self.max_overlap),
            HeadKind::Multilabel => Ok(self.n_speakers as usize),
        }
    }

    /// Width of the concatenated score matrix feeding the post stack.
    pub fn score_width(&self) -> usize {
        let n = self.n_speakers as usize;
        let mut w = 0;
        if self.ci_scorer {
            w += n;
        }
        if self.cd_scorer == CdScorerKind::SelfAttention {
            w += n;
        }
        w
    }

    fn cd_dims(&self) -> CdScorerDims {
        CdScorerDims {
            hidden: self.hidden_dim,
            depth: self.cd_depth,
            heads: self.cd_heads,
            ffn_mult: self.cd_ffn_mult,
        }
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(std::fs::write(path, text)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

// ── Parameter manifest ───────────────────────────────────────────────

fn fsmn_entries(
    out: &mut Vec<(String, Vec<usize>)>,
    prefix: &str,
    specs: &[FsmnLayerSpec],
    in_dim: usize,
    hidden: usize,
) {
    let mut dim = in_dim;
    for (i, spec) in specs.iter().enumerate() {
        let p = format!("{prefix}.layer{i}");
        out.push((format!("{p}.w"), vec![hidden, dim]));
        out.push((format!("{p}.wm"), vec![hidden, dim]));
        out.push((format!("{p}.a"), vec![spec.left_order + 1, dim]));
        out.push((format!("{p}.c"), vec![spec.right_order + 1, dim]));
        out.push((format!("{p}.b"), vec![1, hidden]));
        dim = hidden;
    }
}

/// Canonical parameter names and shapes, in checkpoint order.
pub fn param_manifest(config: &ModelConfig) -> Result<Vec<(String, Vec<usize>)>> {
    config.validate()?;
    let h = config.hidden_dim;
    let mut out = Vec::new();

    fsmn_entries(&mut out, "speech_enc", &config.speech_layers, config.feature_dim, h);

    let mut dim = config.embed_dim;
    for i in 0..config.speaker_layers {
        out.push((format!("spk_enc.layer{i}.w"), vec![h, dim]));
        out.push((format!("spk_enc.layer{i}.b"), vec![1, h]));
        dim = h;
    }

    if config.cd_scorer == CdScorerKind::SelfAttention {
        let dims = config.cd_dims();
        let dh = dims.head_dim();
        let ffn = dims.ffn_dim();
        out.push(("cd.fuse.wh".into(), vec![h, h]));
        out.push(("cd.fuse.we".into(), vec![h, h]));
        out.push(("cd.fuse.b".into(), vec![1, h]));
        for blk in 0..config.cd_depth {
            let p = format!("cd.block{blk}");
            out.push((format!("{p}.ln1.g"), vec![1, h]));
            out.push((format!("{p}.ln1.b"), vec![1, h]));
            for head in 0..config.cd_heads {
                out.push((format!("{p}.attn.head{head}.wq"), vec![dh, h]));
                out.push((format!("{p}.attn.head{head}.wk"), vec![dh, h]));
                out.push((format!("{p}.attn.head{head}.wv"), vec![dh, h]));
            }
            out.push((format!("{p}.attn.wo"), vec![h, h]));
            out.push((format!("{p}.attn.bo"), vec![1, h]));
            out.push((format!("{p}.ln2.g"), vec![1, h]));
            out.push((format!("{p}.ln2.b"), vec![1, h]));
            out.push((format!("{p}.ffn.w1"), vec![ffn, h]));
            out.push((format!("{p}.ffn.b1"), vec![1, ffn]));
            out.push((format!("{p}.ffn.w2"), vec![h, ffn]));
            out.push((format!("{p}.ffn.b2"), vec![1, h]));
        }
        out.push(("cd.out.w".into(), vec![1, h]));
        out.push(("cd.out.b".into(), vec![1, 1]));
    }

    fsmn_entries(&mut out, "post", &config.post_layers, config.score_width(), h);

    let head_width = config.head_width()?;
    out.push(("head.w".into(), vec![head_width, h]));
    out.push(("head.b".into(), vec![1, head_width]));
    Ok(out)
}

/// Random initialization. Dense weights are scaled by 1/sqrt(fan-in),
/// memory taps start small, norms start at identity, and the head starts
/// near zero so initial class probabilities are near uniform.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ParamStore> {
    let manifest = param_manifest(config)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, shape) in manifest {
        let tensor = if name.ends_with(".ln1.g") || name.ends_with(".ln2.g") {
            Tensor::full(&shape, 1.0)
        } else if name.ends_with(".b")
            || name.ends_with(".b1")
            || name.ends_with(".b2")
            || name.ends_with(".bo")
            || name.ends_with(".ln1.b")
            || name.ends_with(".ln2.b")
        {
            Tensor::zeros(&shape)
        } else if name.ends_with(".a") || name.ends_with(".c") {
            Tensor::randn(&shape, 0.1, &mut rng)
        } else if name.starts_with("head.") {
            Tensor::randn(&shape, 0.01 / (config.hidden_dim as f64).sqrt(), &mut rng)
        } else {
            let fan_in = *shape.last().unwrap();
            Tensor::randn(&shape, 1.0 / (fan_in as f64).sqrt(), &mut rng)
        };
        store.insert(name, tensor);
    }
    Ok(store)
}

pub fn param_count(config: &ModelConfig) -> Result<usize> {
    Ok(param_manifest(config)?
        .iter()
        .map(|(_, shape)| shape.iter().product::<usize>())
        .sum())
}

/// Floating-point operations for one forward pass over `frames` frames,
/// counting two per multiply-accumulate in every dense product, memory
/// block, and attention product.
pub fn flops_count(config: &ModelConfig, frames: usize) -> Result<u64> {
    config.validate()?;
    let t = frames as u64;
    let n = config.n_speakers as u64;
    let h = config.hidden_dim as u64;
    let mut flops = 0u64;

    let fsmn_stack = |specs: &[FsmnLayerSpec], in_dim: u64| -> u64 {
        let mut dim = in_dim;
        let mut sum = 0u64;
        for spec in specs {
            let taps = (spec.left_order + spec.right_order + 2) as u64;
            sum += 2 * t * dim * taps; // memory block
            sum += 2 * t * h * dim * 2; // direct and memory projections
            dim = h;
        }
        sum
    };

    flops += fsmn_stack(&config.speech_layers, config.feature_dim as u64);

    let mut dim = config.embed_dim as u64;
    for _ in 0..config.speaker_layers {
        flops += 2 * n * h * dim;
        dim = h;
    }

    if config.ci_scorer {
        flops += 2 * t * n * h;
    }

    if config.cd_scorer == CdScorerKind::SelfAttention {
        let dims = config.cd_dims();
        let dh = dims.head_dim() as u64;
        let heads = config.cd_heads as u64;
        let ffn = dims.ffn_dim() as u64;
        let mut per_speaker = 0u64;
        per_speaker += 2 * t * h * h + 2 * h * h; // fusion of frames and embedding
        for _ in 0..config.cd_depth {
            per_speaker += heads * 3 * 2 * t * dh * h; // q, k, v
            per_speaker += heads * 2 * 2 * t * t * dh; // scores and weighted sum
            per_speaker += 2 * t * h * h; // output projection
            per_speaker += 2 * 2 * t * ffn * h; // feed-forward
        }
        per_speaker += 2 * t * h; // scalar projection
        flops += n * per_speaker;
    }

    flops += fsmn_stack(&config.post_layers, config.score_width() as u64);
    flops += 2 * t * config.head_width()? as u64 * h;
    Ok(flops)
}

// ── Forward pass ─────────────────────────────────────────────────────

fn speaker_encoder_forward(
    tape: &mut Tape,
    params: &BoundParams,
    config: &ModelConfig,
    embeddings: Var,
) -> Result<Var> {
    let mut x = embeddings;
    for i in 0..config.speaker_layers {
        let w = params.var(&format!("spk_enc.layer{i}.w"))?;
        let b = params.var(&format!("spk_enc.layer{i}.b"))?;
        let y = tape.matmul_nt(x, w)?;
        let y = tape.add_row(y, b)?;
        x = if i + 1 < config.speaker_layers {
            tape.relu(y)
        } else {
            y
        };
    }
    Ok(x)
}

fn fsmn_stack_forward(
    tape: &mut Tape,
    params: &BoundParams,
    prefix: &str,
    specs: &[FsmnLayerSpec],
    input: Var,
) -> Result<Var> {
    let mut x = input;
    for (i, spec) in specs.iter().enumerate() {
        x = fsmn_layer_forward(
            tape,
            x,
            params,
            &format!("{prefix}.layer{i}"),
            *spec,
            Activation::Relu,
        )?;
    }
    Ok(x)
}

/// Run the network. `features` is a T x F leaf, `embeddings` an N x D
/// leaf. Returns frame logits: T x C for the power-set head, T x N for
/// the multi-label head. No output nonlinearity is applied here.
pub fn forward(
    tape: &mut Tape,
    params: &BoundParams,
    config: &ModelConfig,
    features: Var,
    embeddings: Var,
) -> Result<Var> {
    let (t, f) = (tape.value(features).rows(), tape.value(features).cols());
    if f != config.feature_dim {
        return Err(Error::dim(
            "forward",
            format!("feature dim {f}, config wants {}", config.feature_dim),
        ));
    }
    if tape.value(embeddings).rows() != config.n_speakers as usize
        || tape.value(embeddings).cols() != config.embed_dim
    {
        return Err(Error::dim(
            "forward",
            format!(
                "embeddings {:?}, config wants {}x{}",
                tape.value(embeddings).shape(),
                config.n_speakers,
                config.embed_dim
            ),
        ));
    }

    let frame_enc = fsmn_stack_forward(tape, params, "speech_enc", &config.speech_layers, features)?;
    let speaker_enc = speaker_encoder_forward(tape, params, config, embeddings)?;

    let mut score_parts: Vec<Var> = Vec::new();
    if config.ci_scorer {
        score_parts.push(ci_score(tape, frame_enc, speaker_enc)?);
    }
    if config.cd_scorer == CdScorerKind::SelfAttention {
        let dims = config.cd_dims();
        let position = tape.leaf(positional_encoding(t, config.hidden_dim));
        let mut columns = Vec::with_capacity(config.n_speakers as usize);
        for speaker in 0..config.n_speakers as usize {
            let row = tape.row(speaker_enc, speaker)?;
            columns.push(cd_score_one_speaker(
                tape, params, &dims, frame_enc, row, position,
            )?);
        }
        score_parts.push(tape.concat_cols(&columns)?);
    }
    let scores = if score_parts.len() == 1 {
        score_parts[0]
    } else {
        tape.concat_cols(&score_parts)?
    };

    let post = fsmn_stack_forward(tape, params, "post", &config.post_layers, scores)?;
    let logits = tape.matmul_nt(post, params.var("head.w")?)?;
    tape.add_row(logits, params.var("head.b")?)
}

/// Similarity by plain dot product: S[t, n] = <h_t, e_n>.
pub fn ci_score(tape: &mut Tape, frame_enc: Var, speaker_enc: Var) -> Result<Var> {
    tape.matmul_nt(frame_enc, speaker_enc)
}

pub use fsmn::receptive_field as stack_receptive_field;

/// Receptive field of the whole logits pipeline (speech stack plus post
/// stack; the context scorer is global and excluded by definition).
pub fn model_receptive_field(config: &ModelConfig) -> (usize, usize) {
    let (sl, sr) = receptive_field(&config.speech_layers);
    let (pl, pr) = receptive_field(&config.post_layers);
    (sl + pl, sr + pr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use rand::Rng;

    fn tiny_forward_config() -> ModelConfig {
        ModelConfig::tiny(6, 2, 8)
    }

    fn leaf_randn(tape: &mut Tape, shape: &[usize], rng: &mut ChaCha12Rng) -> Var {
        tape.leaf(Tensor::randn(shape, 0.7, rng))
    }

    #[test]
    fn forward_shapes_for_both_heads() {
        let mut config = ModelConfig::small();
        config.speech_layers = exp_strides(2);
        config.post_layers = exp_strides(1);
        config.cd_depth = 1;
        let store = init_params(&config, 3).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let x = leaf_randn(&mut tape, &[12, 16], &mut rng);
        let e = leaf_randn(&mut tape, &[4, 16], &mut rng);
        let logits = forward(&mut tape, &bound, &config, x, e).unwrap();
        assert_eq!(tape.value(logits).shape(), &[12, 16]); // 2^4 classes

        let mut ml = config.clone();
        ml.head = HeadKind::Multilabel;
        let store = init_params(&ml, 3).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let x = leaf_randn(&mut tape, &[12, 16], &mut rng);
        let e = leaf_randn(&mut tape, &[4, 16], &mut rng);
        let logits = forward(&mut tape, &bound, &ml, x, e).unwrap();
        assert_eq!(tape.value(logits).shape(), &[12, 4]);
    }

    #[test]
    fn score_width_depends_on_scorers() {
        let mut config = ModelConfig::small();
        assert_eq!(config.score_width(), 8);
        config.cd_scorer = CdScorerKind::None;
        assert_eq!(config.score_width(), 4);
        config.ci_scorer = false;
        assert!(config.validate().is_err());
    }

    #[test]
    fn ci_score_hand_cases() {
        let mut tape = Tape::new();
        let h = tape.leaf(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let e = tape.leaf(Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap());
        let s = ci_score(&mut tape, h, e).unwrap();
        assert_eq!(tape.value(s).data(), &[11.0]);

        // one-hot embedding picks out a component
        let h = tape.leaf(Tensor::new(vec![2, 3], vec![5.0, 6.0, 7.0, 1.0, 2.0, 3.0]).unwrap());
        let mut basis = Tensor::zeros(&[1, 3]);
        basis.set(0, 2, 1.0);
        let e = tape.leaf(basis);
        let s = ci_score(&mut tape, h, e).unwrap();
        assert_eq!(tape.value(s).data(), &[7.0, 3.0]);

        let zero = tape.leaf(Tensor::zeros(&[2, 3]));
        let hz = tape.leaf(Tensor::randn(&[4, 3], 1.0, &mut ChaCha12Rng::seed_from_u64(1)));
        let s = ci_score(&mut tape, hz, zero).unwrap();
        assert!(tape.value(s).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_speaker_encoder_passes_input_through() {
        let mut config = tiny_forward_config();
        config.speaker_layers = 1;
        config.hidden_dim = config.embed_dim;
        let mut store = ParamStore::new();
        store.insert("spk_enc.layer0.w", Tensor::eye(config.embed_dim));
        store.insert("spk_enc.layer0.b", Tensor::zeros(&[1, config.embed_dim]));
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let e = tape.leaf(Tensor::randn(&[2, 6], 1.0, &mut ChaCha12Rng::seed_from_u64(2)));
        let out = speaker_encoder_forward(&mut tape, &bound, &config, e).unwrap();
        assert_eq!(tape.value(out).data(), tape.value(e).data());
    }

    #[test]
    fn speaker_row_permutation_permutes_score_columns() {
        let config = tiny_forward_config();
        let store = init_params(&config, 11).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let features = Tensor::randn(&[9, 6], 0.8, &mut rng);
        let embeds = Tensor::randn(&[2, 6], 0.8, &mut rng);
        let mut swapped = Tensor::zeros(&[2, 6]);
        for c in 0..6 {
            swapped.set(0, c, embeds.at(1, c));
            swapped.set(1, c, embeds.at(0, c));
        }

        let score_pair = |e: &Tensor| -> (Vec<f64>, Vec<f64>) {
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let x = tape.leaf(features.clone());
            let ev = tape.leaf(e.clone());
            let frame_enc =
                fsmn_stack_forward(&mut tape, &bound, "speech_enc", &config.speech_layers, x)
                    .unwrap();
            let spk = speaker_encoder_forward(&mut tape, &bound, &config, ev).unwrap();
            let ci = ci_score(&mut tape, frame_enc, spk).unwrap();
            let dims = config.cd_dims();
            let pos = tape.leaf(positional_encoding(9, config.hidden_dim));
            let mut cd_cols = Vec::new();
            for s in 0..2 {
                let row = tape.row(spk, s).unwrap();
                cd_cols.push(
                    cd_score_one_speaker(&mut tape, &bound, &dims, frame_enc, row, pos).unwrap(),
                );
            }
            let cd = tape.concat_cols(&cd_cols).unwrap();
            (
                tape.value(ci).data().to_vec(),
                tape.value(cd).data().to_vec(),
            )
        };

        let (ci_a, cd_a) = score_pair(&embeds);
        let (ci_b, cd_b) = score_pair(&swapped);
        for t in 0..9 {
            for n in 0..2 {
                assert_eq!(ci_a[t * 2 + n], ci_b[t * 2 + (1 - n)]);
                assert_eq!(cd_a[t * 2 + n], cd_b[t * 2 + (1 - n)]);
            }
        }
    }

    #[test]
    fn cd_score_depends_on_other_frames() {
        // finite-difference probe: perturbing frame 0 must move some
        // score at a different frame
        let config = tiny_forward_config();
        let store = init_params(&config, 21).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let base = Tensor::randn(&[6, 6], 0.8, &mut rng);
        let embeds = Tensor::randn(&[2, 6], 0.8, &mut rng);

        let run = |features: &Tensor| -> Vec<f64> {
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let x = tape.leaf(features.clone());
            let ev = tape.leaf(embeds.clone());
            let frame_enc =
                fsmn_stack_forward(&mut tape, &bound, "speech_enc", &config.speech_layers, x)
                    .unwrap();
            let spk = speaker_encoder_forward(&mut tape, &bound, &config, ev).unwrap();
            let dims = config.cd_dims();
            let pos = tape.leaf(positional_encoding(6, config.hidden_dim));
            let row = tape.row(spk, 0).unwrap();
            let col = cd_score_one_speaker(&mut tape, &bound, &dims, frame_enc, row, pos).unwrap();
            tape.value(col).data().to_vec()
        };

        let a = run(&base);
        let mut nudged = base.clone();
        nudged.set(0, 0, base.at(0, 0) + 1e-3);
        let b = run(&nudged);
        let far_moved = (1..6).any(|t| (a[t] - b[t]).abs() > 1e-12);
        assert!(far_moved, "context scorer ignored cross-frame dependence");
    }

    #[test]
    fn without_memory_and_context_frame_t_is_local() {
        // degenerate locality: zero-order memory everywhere and no
        // context scorer means frame t's logits see only frame t
        let mut config = tiny_forward_config();
        config.cd_scorer = CdScorerKind::None;
        config.speech_layers = vec![FsmnLayerSpec::new(0, 0, 1); 2];
        config.post_layers = vec![FsmnLayerSpec::new(0, 0, 1)];
        let store = init_params(&config, 9).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let base = Tensor::randn(&[5, 6], 0.8, &mut rng);
        let embeds = Tensor::randn(&[2, 6], 0.8, &mut rng);

        let run = |features: &Tensor| -> Tensor {
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let x = tape.leaf(features.clone());
            let ev = tape.leaf(embeds.clone());
            let logits = forward(&mut tape, &bound, &config, x, ev).unwrap();
            tape.value(logits).clone()
        };

        let a = run(&base);
        let mut nudged = base.clone();
        for c in 0..6 {
            nudged.set(2, c, base.at(2, c) + 0.37);
        }
        let b = run(&nudged);
        for t in 0..5 {
            let changed = (0..a.cols()).any(|c| (a.at(t, c) - b.at(t, c)).abs() > 0.0);
            assert_eq!(changed, t == 2, "frame {t}");
        }
    }

    #[test]
    fn fsmn_layer_matches_literal_per_frame_loop() {
        // oracle: direct evaluation of the memory equation frame by frame
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        for case in 0..100 {
            let t = rng.gen_range(1..12);
            let in_dim = rng.gen_range(1..6);
            let out_dim = rng.gen_range(1..6);
            let spec = FsmnLayerSpec::new(
                rng.gen_range(0..4),
                rng.gen_range(0..4),
                rng.gen_range(1..4),
            );
            let mut store = ParamStore::new();
            let a = Tensor::randn(&[spec.left_order + 1, in_dim], 0.9, &mut rng);
            let c = Tensor::randn(&[spec.right_order + 1, in_dim], 0.9, &mut rng);
            let w = Tensor::randn(&[out_dim, in_dim], 0.9, &mut rng);
            let wm = Tensor::randn(&[out_dim, in_dim], 0.9, &mut rng);
            let b = Tensor::randn(&[1, out_dim], 0.9, &mut rng);
            store.insert("l.a", a.clone());
            store.insert("l.c", c.clone());
            store.insert("l.w", w.clone());
            store.insert("l.wm", wm.clone());
            store.insert("l.b", b.clone());
            let x = Tensor::randn(&[t, in_dim], 0.9, &mut rng);

            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let xv = tape.leaf(x.clone());
            let y = fsmn_layer_forward(&mut tape, xv, &bound, "l", spec, Activation::Relu).unwrap();

            for frame in 0..t {
                // memory vector for this frame, straight from the formula
                let mut mem = vec![0.0; in_dim];
                for i in 0..=spec.left_order {
                    let src = frame as isize - (i * spec.stride) as isize;
                    if src >= 0 && (src as usize) < t {
                        for dcol in 0..in_dim {
                            mem[dcol] += a.at(i, dcol) * x.at(src as usize, dcol);
                        }
                    }
                }
                for j in 0..=spec.right_order {
                    let src = frame + j * spec.stride;
                    if src < t {
                        for dcol in 0..in_dim {
                            mem[dcol] += c.at(j, dcol) * x.at(src, dcol);
                        }
                    }
                }
                for o in 0..out_dim {
                    let mut v = b.at(0, o);
                    for dcol in 0..in_dim {
                        v += w.at(o, dcol) * x.at(frame, dcol) + wm.at(o, dcol) * mem[dcol];
                    }
                    let want = v.max(0.0);
                    let got = tape.value(y).at(frame, o);
                    assert!(
                        (got - want).abs() < 1e-12,
                        "case {case} frame {frame} out {o}: {got} vs {want}"
                    );
                }
            }
        }
    }

    /// Perturbation tracing: which output frames move when one input
    /// frame is nudged. An output at frame o depends on inputs
    /// [o - left, o + right], so nudging input `probe` moves outputs in
    /// [probe - right, probe + left].
    fn traced_span(specs: &[FsmnLayerSpec], seed: u64) -> (usize, usize) {
        let dim = 3;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let (left, right) = receptive_field(specs);
        let t = 2 * (left + right) + 8;
        let mut store = ParamStore::new();
        let mut in_dim = dim;
        for (i, spec) in specs.iter().enumerate() {
            store.insert(format!("s.layer{i}.w"), Tensor::randn(&[dim, in_dim], 0.5, &mut rng));
            store.insert(format!("s.layer{i}.wm"), Tensor::randn(&[dim, in_dim], 0.5, &mut rng));
            store.insert(
                format!("s.layer{i}.a"),
                Tensor::randn(&[spec.left_order + 1, in_dim], 0.5, &mut rng),
            );
            store.insert(
                format!("s.layer{i}.c"),
                Tensor::randn(&[spec.right_order + 1, in_dim], 0.5, &mut rng),
            );
            store.insert(format!("s.layer{i}.b"), Tensor::randn(&[1, dim], 0.5, &mut rng));
            in_dim = dim;
        }
        let base = Tensor::randn(&[t, dim], 0.8, &mut rng);
        let run = |x: &Tensor| -> Tensor {
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let xv = tape.leaf(x.clone());
            // identity activation so sign flips cannot mask dependence
            let mut cur = xv;
            for (i, spec) in specs.iter().enumerate() {
                cur = fsmn_layer_forward(
                    &mut tape,
                    cur,
                    &bound,
                    &format!("s.layer{i}"),
                    *spec,
                    Activation::Identity,
                )
                .unwrap();
            }
            tape.value(cur).clone()
        };
        let a = run(&base);
        let probe = left.max(right) + 2; // interior frame
        let mut nudged = base.clone();
        for c in 0..dim {
            nudged.set(probe, c, base.at(probe, c) + 0.618);
        }
        let b = run(&nudged);
        let mut lo = probe;
        let mut hi = probe;
        for frame in 0..t {
            let moved = (0..dim).any(|c| (a.at(frame, c) - b.at(frame, c)).abs() > 1e-12);
            if moved {
                lo = lo.min(frame);
                hi = hi.max(frame);
            }
        }
        (probe - lo, hi - probe)
    }

    #[test]
    fn receptive_field_matches_perturbation_tracing() {
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        for case in 0..50 {
            let layers = rng.gen_range(1..4);
            let specs: Vec<FsmnLayerSpec> = (0..layers)
                .map(|_| {
                    FsmnLayerSpec::new(
                        rng.gen_range(0..3),
                        rng.gen_range(0..3),
                        rng.gen_range(1..4),
                    )
                })
                .collect();
            let formula = receptive_field(&specs);
            // output moved <=> the perturbed frame is inside the field;
            // a zero random weight could in principle hide a frame, but
            // at these sizes the probability is negligible
            let traced = traced_span(&specs, 1000 + case);
            assert_eq!(formula, traced, "case {case} specs {specs:?}");
        }
        // exponential-stride preset: four layers, strides 1,2,4,8
        let preset = exp_strides(4);
        assert_eq!(receptive_field(&preset), (15, 15));
        assert_eq!(traced_span(&preset, 4242), (15, 15));
    }

    #[test]
    fn end_to_end_gradients_check_out_on_tiny_configs() {
        let mut rng = ChaCha12Rng::seed_from_u64(123);
        for case in 0..2 {
            let config = tiny_forward_config();
            let store = init_params(&config, 100 + case).unwrap();
            let features = Tensor::randn(&[5, 6], 0.8, &mut rng);
            let embeds = Tensor::randn(&[2, 6], 0.8, &mut rng);
            let targets: Vec<usize> = (0..5).map(|_| rng.gen_range(0..4)).collect();
            let names: Vec<String> = store.names().map(String::from).collect();
            let tensors: Vec<Tensor> = store.tensors().cloned().collect();
            let err = grad_check(
                |tape, vars| {
                    let mut bound_store = ParamStore::new();
                    for (name, _) in names.iter().zip(vars.iter()) {
                        bound_store.insert(name.clone(), Tensor::scalar(0.0));
                    }
                    // bind vars directly by rebuilding the name map
                    let mut by_name = std::collections::HashMap::new();
                    for (name, var) in names.iter().zip(vars.iter()) {
                        by_name.insert(name.clone(), *var);
                    }
                    let bound = crate::params::BoundParams::from_map(vars.to_vec(), by_name);
                    let x = tape.leaf(features.clone());
                    let e = tape.leaf(embeds.clone());
                    let logits = forward(tape, &bound, &config, x, e)?;
                    tape.cross_entropy(logits, &targets)
                },
                &tensors,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "case {case}: {err}");
        }
    }

    #[test]
    fn param_count_hand_case_and_doubling_flops() {
        // single dense layer 3 -> 2 with bias: 8 parameters
        let mut store = ParamStore::new();
        store.insert("w", Tensor::zeros(&[2, 3]));
        store.insert("b", Tensor::zeros(&[1, 2]));
        assert_eq!(store.total_values(), 8);

        let config = ModelConfig::small();
        let f1 = flops_count(&config, 100).unwrap();
        let f2 = flops_count(&config, 200).unwrap();
        assert_eq!(2 * f1, f2);

        let counted = param_count(&config).unwrap();
        let built = init_params(&config, 0).unwrap().total_values();
        assert_eq!(counted, built);
    }

    #[test]
    fn paper_scale_parameters_are_in_the_expected_range() {
        let config = ModelConfig::paper();
        let count = param_count(&config).unwrap() as f64 / 1e6;
        // the published full-scale model reports 18.42M; exact wiring of
        // the fusion and feed-forward widths is not recoverable, so only
        // sanity-check the magnitude here
        assert!(count > 10.0 && count < 30.0, "{count}M");
    }
}

