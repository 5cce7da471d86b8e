//! Feed-forward layers with learnable memory taps over past and future
//! frames. Each layer aggregates strided taps of its input sequence with
//! per-tap weight vectors, then mixes the current frame and the memory
//! through two dense projections.

use crate::error::Result;
use crate::params::BoundParams;
use crate::tape::{Tape, Var};
use serde::{Deserialize, Serialize};

/// Memory geometry of one layer: tap counts into the past and future and
/// the stride between taps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FsmnLayerSpec {
    pub left_order: usize,
    pub right_order: usize,
    pub stride: usize,
}

impl FsmnLayerSpec {
    pub fn new(left_order: usize, right_order: usize, stride: usize) -> Self {
        FsmnLayerSpec {
            left_order,
            right_order,
            stride: stride.max(1),
        }
    }
}

/// Activation applied to a layer output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

/// One layer: memory aggregation followed by two projections and a bias.
///
/// The memory term sums `a_i ⊙ h_{t-i·d}` for i in 0..=left_order and
/// `c_j ⊙ h_{t+j·d}` for j in 0..=right_order; taps outside the sequence
/// read zero vectors, and both zero-offset taps are present.
pub fn fsmn_layer_forward(
    tape: &mut Tape,
    input: Var,
    params: &BoundParams,
    prefix: &str,
    spec: FsmnLayerSpec,
    activation: Activation,
) -> Result<Var> {
    let a = params.var(&format!("{prefix}.a"))?;
    let c = params.var(&format!("{prefix}.c"))?;
    let w = params.var(&format!("{prefix}.w"))?;
    let wm = params.var(&format!("{prefix}.wm"))?;
    let b = params.var(&format!("{prefix}.b"))?;

    let mut memory: Option<Var> = None;
    let mut add_tap = |tape: &mut Tape, offset: isize, weights: Var, idx: usize| -> Result<()> {
        let tap = tape.row(weights, idx)?;
        let shifted = if offset == 0 {
            input
        } else {
            tape.shift(input, offset)?
        };
        let term = tape.mul_row(shifted, tap)?;
        memory = Some(match memory {
            Some(m) => tape.add(m, term)?,
            None => term,
        });
        Ok(())
    };
    let d = spec.stride as isize;
    for i in 0..=spec.left_order {
        add_tap(tape, i as isize * d, a, i)?;
    }
    for j in 0..=spec.right_order {
        add_tap(tape, -(j as isize) * d, c, j)?;
    }
    let memory = memory.expect("at least the zero-offset taps exist");

    let direct = tape.matmul_nt(input, w)?;
    let mixed = tape.matmul_nt(memory, wm)?;
    let sum = tape.add(direct, mixed)?;
    let out = tape.add_row(sum, b)?;
    Ok(match activation {
        Activation::Relu => tape.relu(out),
        Activation::Identity => out,
    })
}

/// Frames of context a stack of layers can see: the sum over layers of
/// order times stride, separately to the left and right.
pub fn receptive_field(specs: &[FsmnLayerSpec]) -> (usize, usize) {
    let left = specs.iter().map(|s| s.left_order * s.stride).sum();
    let right = specs.iter().map(|s| s.right_order * s.stride).sum();
    (left, right)
}
