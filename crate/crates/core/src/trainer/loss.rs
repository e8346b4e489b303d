use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn check_pair<T: Scalar>(predicted: &Tensor<T>, target: &Tensor<T>) -> Result<usize> {
    predicted.check_same_shape(target, "loss target")?;
    match predicted.shape().first() {
        Some(&n) if n > 0 => Ok(n),
        _ => Err(Error::invalid("loss needs a non-empty batch")),
    }
}

/// ℓ = (1 / 2N) Σᵢ ‖Rᵢ − νᵢ‖² over the leading batch axis, accumulated in f64.
pub fn loss<T: Scalar>(predicted: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    let n = check_pair(predicted, target)?;
    let sq: f64 = predicted
        .data()
        .iter()
        .zip(target.data())
        .map(|(r, v)| (r.as_f64() - v.as_f64()).powi(2))
        .sum();
    Ok(sq / (2 * n) as f64)
}

/// The loss together with its gradient `(R − ν) / N` with respect to `predicted`.
pub fn loss_and_grad<T: Scalar>(predicted: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    let value = loss(predicted, target)?;
    let inv_n = T::of(1.0 / predicted.shape()[0] as f64);
    let grad = predicted.zip_map(target, |r, v| (r - v) * inv_n)?;
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_diff_gradient;

    #[test]
    fn equal_inputs_give_zero() {
        let a = Tensor::<f64>::from_fn(&[3, 1, 2, 2], |i| i as f64 * 0.3);
        assert_eq!(loss(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn single_scalar_sample() {
        let r = Tensor::new(vec![1, 1], vec![2.0f64]).unwrap();
        let v = Tensor::new(vec![1, 1], vec![0.0f64]).unwrap();
        assert_eq!(loss(&r, &v).unwrap(), 2.0);
    }

    #[test]
    fn two_samples_hand_value() {
        // squared norms 1 and 3
        let r = Tensor::new(vec![2, 3], vec![1.0f64, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let v = Tensor::zeros(&[2, 3]);
        assert_eq!(loss(&r, &v).unwrap(), 1.0);
    }

    #[test]
    fn empty_batch_rejected() {
        // a rank-0 tensor has no batch axis
        let e = Tensor::<f32>::new(vec![], vec![1.0]).unwrap();
        assert!(matches!(loss(&e, &e), Err(Error::InvalidArgument(_))));
        let a = Tensor::<f32>::zeros(&[2, 4]);
        let b = Tensor::<f32>::zeros(&[2, 5]);
        assert!(loss(&a, &b).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let r = Tensor::<f64>::from_fn(&[3, 2, 2], |i| (i as f64 * 0.7).sin());
        let v = Tensor::<f64>::from_fn(&[3, 2, 2], |i| (i as f64 * 1.3).cos());
        let (_, g) = loss_and_grad(&r, &v).unwrap();
        let fd = finite_diff_gradient(|p| loss(p, &v), &r, 1e-5).unwrap();
        for (a, b) in g.data().iter().zip(fd.data()) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}
