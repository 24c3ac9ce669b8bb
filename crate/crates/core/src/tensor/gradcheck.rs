use super::{Tape, Tensor, TensorError, Var};

/// Comparison of reverse-mode gradients against central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst `|analytic - numeric| / max(1, |numeric|)` per input.
    pub per_input: Vec<f64>,
    pub max_error: f64,
    pub evaluations: usize,
}

fn eval_scalar<F>(f: &F, inputs: &[Tensor]) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.numel() != 1 {
        return Err(TensorError::NonScalarLoss(v.shape().to_vec()));
    }
    let y = v.item();
    if !y.is_finite() {
        return Err(TensorError::NonFinite(format!("gradcheck output {y}")));
    }
    Ok(y)
}

/// Checks every input of a scalar-valued `f` with step `step`.
pub fn grad_check_many<F>(inputs: &[Tensor], f: F, step: f64) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
        .collect();

    let mut work = inputs.to_vec();
    let mut per_input = Vec::with_capacity(inputs.len());
    let mut evaluations = 1;
    for (p, grad) in analytic.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for k in 0..inputs[p].numel() {
            let orig = inputs[p].data()[k];
            work[p].data_mut()[k] = orig + step;
            let plus = eval_scalar(&f, &work)?;
            work[p].data_mut()[k] = orig - step;
            let minus = eval_scalar(&f, &work)?;
            work[p].data_mut()[k] = orig;
            evaluations += 2;
            let numeric = (plus - minus) / (2.0 * step);
            let err = (grad.data()[k] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
        per_input.push(worst);
    }
    let max_error = per_input.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_input,
        max_error,
        evaluations,
    })
}

/// Single-input convenience wrapper around [`grad_check_many`].
pub fn grad_check<F>(point: &Tensor, f: F, step: f64) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, TensorError>,
{
    grad_check_many(std::slice::from_ref(point), |t, v| f(t, v[0]), step)
}
