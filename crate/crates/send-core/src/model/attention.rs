//! Context-dependent scorer: for each target speaker the frame encodings
//! and the speaker embedding are fused, position information is added,
//! and a pre-norm self-attention stack turns the fused sequence into one
//! similarity score per frame.

use crate::error::Result;
use crate::params::BoundParams;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Classic sinusoidal position table, frames x dim.
pub fn positional_encoding(frames: usize, dim: usize) -> Tensor {
    let mut pe = Tensor::zeros(&[frames, dim]);
    for t in 0..frames {
        for i in 0..dim {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = t as f64 / rate;
            let v = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            pe.set(t, i, v);
        }
    }
    pe
}

pub struct CdScorerDims {
    pub hidden: usize,
    pub depth: usize,
    pub heads: usize,
    pub ffn_mult: usize,
}

impl CdScorerDims {
    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn ffn_dim(&self) -> usize {
        self.hidden * self.ffn_mult
    }
}

/// Score one speaker: fuse the frame encodings with the speaker's encoded
/// embedding, run the shared attention stack, and project each frame to a
/// scalar. Returns a T x 1 column.
pub fn cd_score_one_speaker(
    tape: &mut Tape,
    params: &BoundParams,
    dims: &CdScorerDims,
    frame_enc: Var,
    speaker_row: Var,
    position: Var,
) -> Result<Var> {
    // u_t = P_h h_t + P_e e_n + b: a linear projection of concat(h_t, e_n)
    // with the weight split into its two column blocks.
    let wh = params.var("cd.fuse.wh")?;
    let we = params.var("cd.fuse.we")?;
    let fb = params.var("cd.fuse.b")?;
    let h_part = tape.matmul_nt(frame_enc, wh)?;
    let e_part = tape.matmul_nt(speaker_row, we)?;
    let fused = tape.add_row(h_part, e_part)?;
    let fused = tape.add_row(fused, fb)?;
    let mut z = tape.add(fused, position)?;

    let scale = 1.0 / (dims.head_dim() as f64).sqrt();
    for block in 0..dims.depth {
        let p = |name: &str| format!("cd.block{block}.{name}");

        let ln1g = params.var(&p("ln1.g"))?;
        let ln1b = params.var(&p("ln1.b"))?;
        let normed = tape.layer_norm_rows(z, ln1g, ln1b, 1e-5)?;

        let mut heads = Vec::with_capacity(dims.heads);
        for h in 0..dims.heads {
            let q = tape.matmul_nt(normed, params.var(&p(&format!("attn.head{h}.wq")))?)?;
            let k = tape.matmul_nt(normed, params.var(&p(&format!("attn.head{h}.wk")))?)?;
            let v = tape.matmul_nt(normed, params.var(&p(&format!("attn.head{h}.wv")))?)?;
            let scores = tape.matmul_nt(q, k)?;
            let scores = tape.scale(scores, scale);
            let weights = tape.softmax_rows(scores)?;
            heads.push(tape.matmul(weights, v)?);
        }
        let cat = tape.concat_cols(&heads)?;
        let proj = tape.matmul_nt(cat, params.var(&p("attn.wo"))?)?;
        let proj = tape.add_row(proj, params.var(&p("attn.bo"))?)?;
        z = tape.add(z, proj)?;

        let ln2g = params.var(&p("ln2.g"))?;
        let ln2b = params.var(&p("ln2.b"))?;
        let normed = tape.layer_norm_rows(z, ln2g, ln2b, 1e-5)?;
        let f = tape.matmul_nt(normed, params.var(&p("ffn.w1"))?)?;
        let f = tape.add_row(f, params.var(&p("ffn.b1"))?)?;
        let f = tape.relu(f);
        let f = tape.matmul_nt(f, params.var(&p("ffn.w2"))?)?;
        let f = tape.add_row(f, params.var(&p("ffn.b2"))?)?;
        z = tape.add(z, f)?;
    }

    // per-frame scalar projection w · z_t + beta
    let col = tape.matmul_nt(z, params.var("cd.out.w")?)?;
    tape.add_row(col, params.var("cd.out.b")?)
}
