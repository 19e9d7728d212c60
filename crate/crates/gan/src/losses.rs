//! Non-saturating adversarial losses and the R1 penalty.

use dusty_tensor::Var;

use crate::error::{GanError, Result};

fn nonempty(logits: &Var<'_>) -> Result<()> {
    if logits.numel() == 0 {
        return Err(GanError::Shape("empty batch".into()));
    }
    Ok(())
}

/// `E[softplus(−D(real))] + E[softplus(D(fake))]`.
pub fn loss_d<'g>(real_logits: Var<'g>, fake_logits: Var<'g>) -> Result<Var<'g>> {
    nonempty(&real_logits)?;
    nonempty(&fake_logits)?;
    let real = real_logits.scale(-1.0)?.softplus()?.mean()?;
    let fake = fake_logits.softplus()?.mean()?;
    Ok(real.add(fake)?)
}

/// `E[softplus(−D(fake))]`.
pub fn loss_g<'g>(fake_logits: Var<'g>) -> Result<Var<'g>> {
    nonempty(&fake_logits)?;
    Ok(fake_logits.scale(-1.0)?.softplus()?.mean()?)
}

/// `(γ/2) · mean over samples of ‖∂ΣD/∂x‖²`. `real` must be a leaf that
/// requires gradients and `real_logits` must depend on it.
pub fn r1_penalty<'g>(real: Var<'g>, real_logits: Var<'g>, gamma: f32) -> Result<Var<'g>> {
    nonempty(&real_logits)?;
    let n = real.shape()[0] as f32;
    let graph = real.graph();
    let grad = graph.grad(real_logits.sum()?, &[real])?.remove(0);
    Ok(grad.square()?.sum()?.scale(0.5 * gamma / n)?)
}
