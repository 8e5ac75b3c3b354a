//! Analytic backward passes against central finite differences, 100 seeds
//! per primitive. The scalar loss is a random projection of the output, so
//! the upstream gradient is the projection itself.

use snn_mia::numerics::{
    conv2d, conv2d_backward, conv2d_forward, fc_backward, fc_forward, finite_difference_grad, fully_connected,
    pool2d, pool2d_backward, pool2d_forward, relative_error, PoolMode, Rng, Tensor,
};

const SEEDS: u64 = 100;
const TOL: f64 = 1e-3;
const FLOOR: f64 = 1e-2;

fn randn(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal() as f32).collect()).unwrap()
}

fn project(y: &Tensor, p: &Tensor) -> f64 {
    y.data().iter().zip(p.data()).map(|(a, b)| *a as f64 * *b as f64).sum()
}

fn assert_close(what: &str, seed: u64, analytic: &Tensor, numeric: &Tensor) {
    assert_eq!(analytic.shape(), numeric.shape(), "{what} shape, seed {seed}");
    for (i, (a, n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
        let e = relative_error(*a as f64, *n as f64, FLOOR);
        assert!(e <= TOL, "{what} seed {seed} coord {i}: analytic {a} numeric {n} (err {e:.2e})");
    }
}

fn check_conv(seed: u64, stride: usize) {
    let mut rng = Rng::new(seed);
    let cin = 1 + rng.below(3);
    let cout = 1 + rng.below(3);
    let k = [1, 3][rng.below(2)];
    let pad = rng.below(2);
    let h = k + rng.below(5);
    let w_ = k + rng.below(5);
    let x = randn(&mut rng, &[cin, h, w_]);
    let w = randn(&mut rng, &[cout, cin, k, k]);
    let b = randn(&mut rng, &[cout]);
    let (y, cache) = conv2d_forward(&x, &w, &b, stride, pad).unwrap();
    let p = randn(&mut rng, y.shape());
    let g = conv2d_backward(&cache, &w, &p).unwrap();
    // Affine in each argument, so a wide step is exact and keeps f32
    // rounding in the difference quotient small.
    let eps = 0.5;
    let fx = finite_difference_grad(|t| Ok(project(&conv2d(t, &w, &b, stride, pad)?, &p)), &x, eps).unwrap();
    let fw = finite_difference_grad(|t| Ok(project(&conv2d(&x, t, &b, stride, pad)?, &p)), &w, eps).unwrap();
    let fb = finite_difference_grad(|t| Ok(project(&conv2d(&x, &w, t, stride, pad)?, &p)), &b, eps).unwrap();
    assert_close("conv input", seed, &g.grad_input, &fx);
    assert_close("conv weights", seed, &g.grad_weights, &fw);
    assert_close("conv bias", seed, &g.grad_bias, &fb);
}

#[test]
fn conv2d_gradients() {
    for seed in 0..SEEDS {
        check_conv(seed, 1);
    }
}

#[test]
fn strided_conv2d_gradients() {
    for seed in 0..SEEDS {
        check_conv(1000 + seed, 2);
    }
}

#[test]
fn fc_gradients() {
    for seed in 0..SEEDS {
        let mut rng = Rng::new(2000 + seed);
        let n = 1 + rng.below(12);
        let m = 1 + rng.below(8);
        let x = randn(&mut rng, &[n]);
        let w = randn(&mut rng, &[m, n]);
        let b = randn(&mut rng, &[m]);
        let (y, cache) = fc_forward(&x, &w, &b).unwrap();
        let p = randn(&mut rng, y.shape());
        let g = fc_backward(&cache, &w, &p).unwrap();
        let eps = 0.5;
        let fx = finite_difference_grad(|t| Ok(project(&fully_connected(t, &w, &b)?, &p)), &x, eps).unwrap();
        let fw = finite_difference_grad(|t| Ok(project(&fully_connected(&x, t, &b)?, &p)), &w, eps).unwrap();
        let fb = finite_difference_grad(|t| Ok(project(&fully_connected(&x, &w, t)?, &p)), &b, eps).unwrap();
        assert_close("fc input", seed, &g.grad_input, &fx);
        assert_close("fc weights", seed, &g.grad_weights, &fw);
        assert_close("fc bias", seed, &g.grad_bias, &fb);
    }
}

/// Distinct values spaced 0.1 apart, so a max-pool winner never changes
/// under a perturbation below 0.05.
fn separated(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.below(i + 1));
    }
    let data = order.iter().map(|&r| r as f32 * 0.1 - n as f32 * 0.05).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn check_pool(seed: u64, mode: PoolMode) {
    let mut rng = Rng::new(seed);
    let c = 1 + rng.below(3);
    let window = 1 + rng.below(3);
    let h = window * (1 + rng.below(3));
    let w = window * (1 + rng.below(3));
    let x = separated(&mut rng, &[c, h, w]);
    let (y, cache) = pool2d_forward(&x, window, mode).unwrap();
    let p = randn(&mut rng, y.shape());
    let g = pool2d_backward(&cache, &p).unwrap();
    let eps = match mode {
        PoolMode::Avg => 0.5,
        PoolMode::Max => 0.04,
    };
    let fx = finite_difference_grad(|t| Ok(project(&pool2d(t, window, mode)?, &p)), &x, eps).unwrap();
    assert_close(&format!("{mode:?} pool input"), seed, &g, &fx);
}

#[test]
fn avg_pool_gradients() {
    for seed in 0..SEEDS {
        check_pool(3000 + seed, PoolMode::Avg);
    }
}

#[test]
fn max_pool_gradients() {
    for seed in 0..SEEDS {
        check_pool(4000 + seed, PoolMode::Max);
    }
}
