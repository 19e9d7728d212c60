use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// max over coordinates of `|analytic − numeric| / max(1, |analytic|)`
    pub max_rel_error: f64,
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences with step `eps`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f32) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&g, &vars)?;
        if out.numel() != 1 {
            return Err(TensorError::Usage(format!(
                "grad_check needs a scalar function, got shape {:?}",
                out.shape()
            )));
        }
        Ok(out.item()? as f64)
    };

    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&g, &vars)?;
    if out.numel() != 1 {
        return Err(TensorError::Usage(format!(
            "grad_check needs a scalar function, got shape {:?}",
            out.shape()
        )));
    }
    let analytic: Vec<Tensor> = g
        .grad(out, &vars)?
        .iter()
        .map(|v| (*v.value()).clone())
        .collect();

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut worst = 0.0f64;
    let mut xs = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let mut num = Tensor::zeros(input.shape());
        for j in 0..input.numel() {
            let orig = input.data()[j];
            xs[i].data_mut()[j] = orig + eps;
            let hi = eval(&xs)?;
            xs[i].data_mut()[j] = orig - eps;
            let lo = eval(&xs)?;
            xs[i].data_mut()[j] = orig;
            // Use the perturbation actually representable in f32.
            let h = (orig + eps) as f64 - (orig - eps) as f64;
            let d = (hi - lo) / h;
            num.data_mut()[j] = d as f32;
            let a = analytic[i].data()[j] as f64;
            worst = worst.max((a - d).abs() / a.abs().max(1.0));
        }
        numeric.push(num);
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        analytic,
        numeric,
    })
}
