//! Input fixtures shared by the kernel benchmarks.

use edgeface_core::Tensor;

/// Deterministic pseudo-random tensor with values in `[-1, 1)`.
pub fn noise(shape: &[usize], seed: u64) -> Tensor {
    let mut s = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    Tensor::from_fn(shape, |_| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 40) as f32 / (1u64 << 23) as f32 - 1.0
    })
}

/// `[1, 3, side, side]` checkerboard of 8-pixel squares.
pub fn checkerboard(side: usize) -> Tensor {
    Tensor::from_fn(&[1, 3, side, side], |i| {
        let p = i % (side * side);
        if ((p / side) / 8 + (p % side) / 8).is_multiple_of(2) {
            1.0
        } else {
            -1.0
        }
    })
}
