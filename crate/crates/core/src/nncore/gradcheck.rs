use super::params::ParamSet;
use crate::error::{Error, Result};

/// Compare analytic gradients against central differences.
///
/// `loss_fn` must evaluate the loss at the given values and accumulate its
/// analytic gradient into the (pre-zeroed) grad slots. For every named
/// parameter the relative error is `‖analytic − numeric‖₂ / (‖numeric‖₂ + 1e-8)`;
/// the maximum over parameters is returned.
pub fn grad_check<F>(mut loss_fn: F, params: &ParamSet<f64>, step: f64) -> Result<f64>
where
    F: FnMut(&mut ParamSet<f64>) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step {step}")));
    }
    let mut work = params.clone();
    work.zero_grads();
    let base = loss_fn(&mut work)?;
    if !base.is_finite() {
        return Err(Error::NonFinite("loss in grad_check".into()));
    }
    let analytic: Vec<(String, Vec<f64>)> =
        work.iter().map(|(n, p)| (n.to_string(), p.grad.data().to_vec())).collect();

    let mut eval = |ps: &mut ParamSet<f64>| -> Result<f64> {
        ps.zero_grads();
        let l = loss_fn(ps)?;
        if l.is_finite() {
            Ok(l)
        } else {
            Err(Error::NonFinite("loss in grad_check".into()))
        }
    };

    let mut worst = 0.0f64;
    for (name, grad) in &analytic {
        let mut num = vec![0.0; grad.len()];
        for (i, slot) in num.iter_mut().enumerate() {
            let orig = work.value(name)?.data()[i];
            work.value_mut(name)?.data_mut()[i] = orig + step;
            let plus = eval(&mut work)?;
            work.value_mut(name)?.data_mut()[i] = orig - step;
            let minus = eval(&mut work)?;
            work.value_mut(name)?.data_mut()[i] = orig;
            *slot = (plus - minus) / (2.0 * step);
        }
        let diff = grad.iter().zip(&num).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let scale = num.iter().map(|n| n * n).sum::<f64>().sqrt();
        worst = worst.max(diff / (scale + 1e-8));
    }
    Ok(worst)
}
