//! Central finite-difference check of the reverse pass.

use super::layer::{Network, Tape};
use crate::error::Result;
use crate::tensor::Tensor;

/// Largest parameter count `grad_check` accepts.
pub const MAX_CHECKED_PARAMS: usize = 50_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - fd| / max(1, |analytic|, |fd|)` over every parameter
    /// and every input element.
    pub max_rel_error: f64,
    pub params_checked: usize,
    pub inputs_checked: usize,
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Compare reverse-mode gradients of `loss(net(input))` against central
/// differences with step `h`, perturbing every weight and every input value.
/// `loss` returns the scalar and its gradient with respect to the output.
pub fn grad_check(
    net: &Network,
    input: &Tensor,
    loss: &dyn Fn(&Tensor) -> Result<(f64, Tensor)>,
    h: f64,
) -> Result<GradCheckReport> {
    let count = net.param_count();
    if count > MAX_CHECKED_PARAMS {
        return Err(crate::Error::Invalid(format!(
            "{} parameters is too many to check (limit {})",
            count, MAX_CHECKED_PARAMS
        )));
    }
    let mut tape = Tape::new();
    let out = net.forward_recorded(input, &mut tape)?;
    let (_, upstream) = loss(&out)?;
    let (grads, input_grad) = net.backward(&tape, &upstream)?;

    let eval = |n: &Network, x: &Tensor| -> Result<f64> { Ok(loss(&n.forward(x)?)?.0) };
    let mut worst = 0.0f64;

    let mut probe = net.clone();
    let n_tensors = grads.0.len();
    for ti in 0..n_tensors {
        for i in 0..grads.0[ti].len() {
            let orig = probe.params()[ti].data()[i];
            probe.params_mut()[ti].data_mut()[i] = orig + h;
            let up = eval(&probe, input)?;
            probe.params_mut()[ti].data_mut()[i] = orig - h;
            let down = eval(&probe, input)?;
            probe.params_mut()[ti].data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(grads.0[ti].data()[i], fd));
        }
    }

    let mut x = input.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + h;
        let up = eval(net, &x)?;
        x.data_mut()[i] = orig - h;
        let down = eval(net, &x)?;
        x.data_mut()[i] = orig;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max(rel_err(input_grad.data()[i], fd));
    }

    Ok(GradCheckReport {
        max_rel_error: worst,
        params_checked: count,
        inputs_checked: input.len(),
    })
}

/// `L = sum_i c_i y_i` with fixed coefficients: a loss whose output gradient
/// is `c`, handy for checking layers in isolation.
pub fn linear_probe(coeffs: Tensor) -> impl Fn(&Tensor) -> Result<(f64, Tensor)> {
    move |y: &Tensor| {
        if y.shape() != coeffs.shape() {
            return Err(crate::Error::Shape(format!(
                "probe {:?} vs output {:?}",
                coeffs.shape(),
                y.shape()
            )));
        }
        let v = y.data().iter().zip(coeffs.data()).map(|(a, b)| a * b).sum();
        Ok((v, coeffs.clone()))
    }
}
