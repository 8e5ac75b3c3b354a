//! Dense arrays, seeded randomness, and the layer primitives the networks are
//! assembled from.

mod gradcheck;
mod layers;
mod rng;
mod tensor;

pub use gradcheck::{central_difference, finite_difference_grad, relative_error};
pub use layers::{
    conv2d, conv2d_backward, conv2d_backward_accumulate, conv2d_forward, conv2d_output_shape,
    fc_backward, fc_backward_accumulate, fc_forward, fully_connected, pool2d, pool2d_backward,
    pool2d_forward, pool2d_output_shape, Conv2dCache, FcCache, LayerGrad, PoolCache, PoolMode,
};
pub use rng::Rng;
pub use tensor::{Tensor, FT32_MAGIC};

/// Numerically stable softmax in `f64`.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f64> = logits.iter().map(|&z| ((z - max) as f64).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| (e / total) as f32).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use super::Rng;

    #[test]
    fn argmax_ties_to_lowest() {
        assert_eq!(argmax(&[0.5, 0.5, 0.1]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
    }

    proptest! {
        #[test]
        fn conv_is_linear_in_input(
            seed in 0u64..1000,
            a in -4.0f32..4.0,
        ) {
            let mut rng = Rng::new(seed);
            let mut randn = |shape: &[usize]| {
                let n = shape.iter().product();
                Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal() as f32).collect()).unwrap()
            };
            let x = randn(&[2, 5, 5]);
            let w = randn(&[3, 2, 3, 3]);
            let b = Tensor::zeros(&[3]);
            let y = conv2d(&x, &w, &b, 1, 1).unwrap();
            let ya = conv2d(&x.scaled(a), &w, &b, 1, 1).unwrap();
            for (p, q) in y.data().iter().zip(ya.data()) {
                let expected = a * p;
                prop_assert!((expected - q).abs() <= 1e-5 * expected.abs().max(1.0));
            }
        }

        #[test]
        fn conv_is_deterministic(seed in 0u64..1000) {
            let mut rng = Rng::new(seed);
            let x = Tensor::new(vec![1, 6, 6], (0..36).map(|_| rng.normal() as f32).collect()).unwrap();
            let w = Tensor::new(vec![2, 1, 3, 3], (0..18).map(|_| rng.normal() as f32).collect()).unwrap();
            let b = Tensor::from_vec(vec![0.1, -0.2]);
            let y1 = conv2d(&x, &w, &b, 1, 0).unwrap();
            let y2 = conv2d(&x, &w, &b, 1, 0).unwrap();
            prop_assert_eq!(y1, y2);
        }

        #[test]
        fn ft32_round_trip(dims in proptest::collection::vec(1usize..5, 1..4), seed in 0u64..100) {
            let mut rng = Rng::new(seed);
            let n: usize = dims.iter().product();
            let t = Tensor::new(dims, (0..n).map(|_| rng.normal() as f32).collect()).unwrap();
            let mut buf = Vec::new();
            t.write_ft32(&mut buf).unwrap();
            prop_assert_eq!(Tensor::read_ft32(&mut buf.as_slice()).unwrap(), t);
        }
    }
}
