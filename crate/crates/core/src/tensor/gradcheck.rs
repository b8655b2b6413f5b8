//! Central finite-difference verification of analytic gradients.

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Compares the analytic gradient returned by `f` at `params` with central
/// differences of step `eps` and returns the largest
/// `|analytic - numeric| / max(1, |numeric|)` over all coordinates.
///
/// `f` maps a parameter tensor to `(loss, d loss / d params)`.
pub fn grad_check<F>(f: F, params: &Tensor, eps: Real) -> Result<Real>
where
    F: FnMut(&Tensor) -> Result<(Real, Tensor)>,
{
    let coords: Vec<usize> = (0..params.numel()).collect();
    grad_check_coords(f, params, eps, &coords)
}

/// [`grad_check`] restricted to the listed flat coordinates.
pub fn grad_check_coords<F>(mut f: F, params: &Tensor, eps: Real, coords: &[usize]) -> Result<Real>
where
    F: FnMut(&Tensor) -> Result<(Real, Tensor)>,
{
    if !(eps > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {eps}")));
    }
    let (loss, analytic) = f(params)?;
    check_loss(loss)?;
    params.same_shape(&analytic, "grad_check analytic gradient")?;
    let mut probe = params.clone();
    let mut worst: Real = 0.0;
    for &i in coords {
        let original = probe.data()[i];
        probe.data_mut()[i] = original + eps;
        let plus = f(&probe)?.0;
        probe.data_mut()[i] = original - eps;
        let minus = f(&probe)?.0;
        probe.data_mut()[i] = original;
        check_loss(plus)?;
        check_loss(minus)?;
        let numeric = (plus - minus) / (2.0 * eps);
        let err = (analytic.data()[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

fn check_loss(loss: Real) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite("grad_check loss".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let p = Tensor::new(&[1], vec![0.7]).unwrap();
        let err = grad_check(|x| Ok((3.0 * x.data()[0] - 2.0, Tensor::full(&[1], 3.0))), &p, 1e-5).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn detects_wrong_gradient() {
        let p = Tensor::new(&[2], vec![0.5, -1.0]).unwrap();
        let err = grad_check(
            |x| {
                let d = x.data();
                Ok((d[0] * d[0] + d[1], Tensor::new(&[2], vec![d[0], 1.0])?))
            },
            &p,
            1e-5,
        )
        .unwrap();
        assert!(err > 0.1);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let p = Tensor::new(&[1], vec![0.0]).unwrap();
        let r = grad_check(|x| Ok((1.0 / x.data()[0], Tensor::zeros(&[1]))), &p, 1e-5);
        assert!(matches!(r, Err(Error::NonFinite(_))));
        assert!(grad_check(|_| Ok((0.0, Tensor::zeros(&[1]))), &p, 0.0).is_err());
    }
}
