use super::{Tape, Tensor, TensorError, TensorResult, Var};

/// Central-difference check of a scalar function of one tensor.
///
/// Returns the max over coordinates of
/// `|analytic - numeric| / max(1, |analytic|)`.
pub fn grad_check<F>(f: F, point: &Tensor, step: f64) -> TensorResult<f64>
where
    F: Fn(&mut Tape, Var) -> TensorResult<Var>,
{
    grad_check_many(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(point),
        step,
    )
}

/// [`grad_check`] over several differentiable inputs at once.
pub fn grad_check_many<F>(f: F, points: &[Tensor], step: f64) -> TensorResult<f64>
where
    F: Fn(&mut Tape, &[Var]) -> TensorResult<Var>,
{
    let eval = |pts: &[Tensor]| -> TensorResult<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = pts.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        scalar_of(&tape, out)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    scalar_of(&tape, out)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(&tape, v)).collect();
    drop(tape);

    let mut work = points.to_vec();
    let mut worst = 0.0f64;
    for (p, grad) in analytic.iter().enumerate() {
        for i in 0..grad.len() {
            let x0 = work[p].data()[i];
            work[p].data_mut()[i] = x0 + step;
            let plus = eval(&work)?;
            work[p].data_mut()[i] = x0 - step;
            let minus = eval(&work)?;
            work[p].data_mut()[i] = x0;
            let numeric = (plus - minus) / (2.0 * step);
            let a = grad.data()[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}

fn scalar_of(tape: &Tape, v: Var) -> TensorResult<f64> {
    let t = tape.value(v);
    if !t.is_scalar() {
        return Err(TensorError::Contract(format!(
            "grad_check needs a scalar function, got shape {:?}",
            t.shape()
        )));
    }
    Ok(t.item())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let p = Tensor::from_fn(&[6], |i| (i as f64 * 1.37).sin() * 3.0);
        let err = grad_check(
            |tape, x| {
                let sq = tape.mul(x, x)?;
                Ok(tape.sum(sq))
            },
            &p,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn sigmoid_chain() {
        let p = Tensor::from_fn(&[2, 3], |i| (i as f64 * 0.91).cos());
        let err = grad_check(
            |tape, x| {
                let a = tape.sigmoid(x);
                let b = tape.scale(a, 2.5);
                let c = tape.sigmoid(b);
                let d = tape.mul(c, x)?;
                Ok(tape.sum(d))
            },
            &p,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
