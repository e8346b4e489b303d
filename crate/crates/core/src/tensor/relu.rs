use super::{Scalar, Tensor};
use crate::error::Result;

pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `upstream` where `input > 0`; the subgradient at exactly 0 is 0.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    input.zip_map(upstream, |x, u| if x > T::zero() { u } else { T::zero() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_diff_gradient;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn clamps_negatives() {
        let x = Tensor::<f32>::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
        let pos = Tensor::<f32>::from_fn(&[5], |i| i as f32);
        assert_eq!(relu_forward(&pos), pos);
    }

    #[test]
    fn kink_subgradient_is_zero() {
        let x = Tensor::<f64>::new(vec![2], vec![0.0, 1.0]).unwrap();
        let u = Tensor::full(&[2], 3.0);
        assert_eq!(relu_backward(&x, &u).unwrap().data(), &[0.0, 3.0]);
    }

    #[test]
    fn backward_matches_finite_differences_off_kink() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::randn(&[40], 1.0, &mut rng)
            .map(|v| if v.abs() < 1e-3 { 0.5 } else { v });
        let u = Tensor::randn(&[40], 1.0, &mut rng);
        let g = relu_backward(&x, &u).unwrap();
        let fd = finite_diff_gradient(
            |p| {
                Ok(relu_forward(p)
                    .data()
                    .iter()
                    .zip(u.data())
                    .map(|(a, b)| a * b)
                    .sum())
            },
            &x,
            1e-5,
        )
        .unwrap();
        for (a, b) in g.data().iter().zip(fd.data()) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}
