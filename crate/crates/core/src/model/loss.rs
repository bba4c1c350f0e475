//! Numerically stable binary cross-entropy on logits.

use crate::error::{Error, Result};

/// Stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn bce_term(z: f64, y: f64) -> f64 {
    // max(z, 0) - z*y + ln(1 + exp(-|z|)); never materializes sigmoid(z)
    // inside the log, so it stays finite for any |z|.
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

fn check_targets(logits: &[f64], targets: &[f64]) -> Result<()> {
    if logits.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: logits.len(),
            right: targets.len(),
        });
    }
    if logits.is_empty() {
        return Err(Error::EmptyBatch);
    }
    for &t in targets {
        if t != 0.0 && t != 1.0 {
            return Err(Error::InvalidArgument(format!(
                "bce target {t} is not binary"
            )));
        }
    }
    Ok(())
}

/// Mean BCE-with-logits over the batch.
pub fn bce_with_logits(logits: &[f64], targets: &[f64]) -> Result<f64> {
    check_targets(logits, targets)?;
    let sum: f64 = logits
        .iter()
        .zip(targets)
        .map(|(&z, &y)| bce_term(z, y))
        .sum();
    Ok(sum / logits.len() as f64)
}

/// Mean loss plus its gradient w.r.t. each logit: (sigmoid(z) - y) / N.
pub fn bce_with_logits_grad(logits: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_targets(logits, targets)?;
    let n = logits.len() as f64;
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(targets) {
        sum += bce_term(z, y);
        grad.push((sigmoid(z) - y) / n);
    }
    Ok((sum / n, grad))
}
