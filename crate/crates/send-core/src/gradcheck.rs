use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Compare the reverse-mode gradient of a scalar function against central
/// finite differences, returning the maximum relative error over all
/// parameter entries. The relative error uses the denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(f: F, point: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(Error::Domain(format!("eps must be positive, got {eps}")));
    }

    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if v.numel() != 1 {
            return Err(Error::GradCheck(format!(
                "function output must be scalar, got shape {:?}",
                v.shape()
            )));
        }
        let y = v.data()[0];
        if !y.is_finite() {
            return Err(Error::GradCheck(format!("non-finite evaluation: {y}")));
        }
        Ok(y)
    };

    // Analytic gradients via one reverse pass.
    let analytic: Vec<Tensor> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = point.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        if tape.value(out).numel() != 1 {
            return Err(Error::GradCheck("function output must be scalar".into()));
        }
        if !tape.value(out).data()[0].is_finite() {
            return Err(Error::GradCheck("non-finite evaluation at point".into()));
        }
        tape.backward(out)?;
        vars.iter().map(|&v| tape.grad(v)).collect()
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = point.to_vec();
    for pi in 0..point.len() {
        for j in 0..point[pi].numel() {
            let orig = work[pi].data()[j];

            work[pi].data_mut()[j] = orig + eps;
            let plus = eval(&work)?;
            work[pi].data_mut()[j] = orig - eps;
            let minus = eval(&work)?;
            work[pi].data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let exact = analytic[pi].data()[j];
            let denom = exact.abs().max(numeric.abs()).max(1e-8);
            let rel = (exact - numeric).abs() / denom;
            if !rel.is_finite() {
                return Err(Error::GradCheck(format!(
                    "non-finite relative error at param {pi} entry {j}"
                )));
            }
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
