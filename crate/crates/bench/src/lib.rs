//! Shared fixtures for the benchmark targets.

use embshift::tensor::{randn, SeededRng, Tensor};

pub fn noise_1d(n: usize) -> Tensor {
    randn(vec![n], &SeededRng::new(0)).expect("valid shape")
}

pub fn noise_2d(side: usize) -> Tensor {
    randn(vec![side, side], &SeededRng::new(1)).expect("valid shape")
}

pub fn noise_image(side: usize) -> Tensor {
    randn(vec![side, side, 3], &SeededRng::new(2)).expect("valid shape")
}
