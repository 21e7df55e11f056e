use candle_core::{DType, Tensor, Var};

use crate::error::{Error, Result};

/// Gradients smaller than this in magnitude are compared on an absolute scale.
pub const GRAD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat element index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub n_checked: usize,
}

/// Compares backprop gradients of the scalar `f` against central differences.
///
/// `f` must read its inputs through the given vars; each coordinate is perturbed
/// by `±eps` in place and restored. The error per coordinate is
/// `|a - n| / max(|a|, |n|, GRAD_FLOOR)`. Use f64 vars for meaningful results.
pub fn grad_check<F>(f: F, inputs: &[Var], eps: f64) -> Result<GradCheckReport>
where
    F: Fn() -> Result<Tensor>,
{
    let loss = f()?;
    if loss.elem_count() != 1 {
        return Err(Error::Shape(format!("grad_check needs a scalar, got {:?}", loss.dims())));
    }
    let grads = loss.backward()?;
    let scalar = |t: &Tensor| -> Result<f64> { Ok(t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?[0]) };

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, analytic: 0.0, numeric: 0.0, n_checked: 0 };
    for (vi, var) in inputs.iter().enumerate() {
        let dtype = var.dtype();
        let shape = var.shape().clone();
        let original: Vec<f64> = var.as_tensor().to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
        let analytic: Vec<f64> = match grads.get(var.as_tensor()) {
            Some(g) => g.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?,
            None => vec![0.0; original.len()],
        };
        let mut values = original.clone();
        let set = |vals: &[f64]| -> Result<()> {
            var.set(&Tensor::from_slice(vals, shape.clone(), var.device())?.to_dtype(dtype)?)?;
            Ok(())
        };
        for i in 0..original.len() {
            values[i] = original[i] + eps;
            set(&values)?;
            let plus = scalar(&f()?)?;
            values[i] = original[i] - eps;
            set(&values)?;
            let minus = scalar(&f()?)?;
            values[i] = original[i];
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
            report.n_checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((vi, i));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
        set(&original)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn sum_of_squares_is_exact() {
        let x = Var::from_tensor(&Tensor::new(&[0.3f64, -1.2, 2.5, 0.01], &Device::Cpu).unwrap()).unwrap();
        let r = grad_check(|| Ok(x.as_tensor().sqr()?.sum_all()?), &[x.clone()], 1e-5).unwrap();
        assert!(r.max_rel_error <= 1e-7, "{r:?}");
        assert_eq!(r.n_checked, 4);
        // inputs restored
        assert_eq!(x.as_tensor().to_vec1::<f64>().unwrap(), vec![0.3, -1.2, 2.5, 0.01]);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // detach() hides the dependency from backprop, so the analytic gradient is wrong.
        let x = Var::from_tensor(&Tensor::new(&[1.0f64, 2.0], &Device::Cpu).unwrap()).unwrap();
        let r = grad_check(|| Ok((x.as_tensor().detach().sqr()?.sum_all()? + x.as_tensor().sum_all()?)?), &[x.clone()], 1e-5).unwrap();
        assert!(r.max_rel_error > 0.5);
    }
}
