//! Minimal reverse-mode autodiff: dense tensors, a flat tape, named
//! parameters with Adam, and a finite-difference gradient checker.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use params::ParameterSet;
pub use tape::{Axis, NodeId, Tape};
pub use tensor::Tensor;

use rand::Rng;

/// Build an inverted-dropout mask: entries are 0 with probability `p`,
/// otherwise 1/(1-p), so the masked expectation equals the input.
pub fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut impl Rng) -> Tensor {
    assert!((0.0..1.0).contains(&p));
    if p == 0.0 {
        return Tensor::filled(rows, cols, 1.0);
    }
    let keep = 1.0 / (1.0 - p);
    let mut t = Tensor::zeros(rows, cols);
    for v in t.data_mut() {
        if rng.gen::<f64>() >= p {
            *v = keep;
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dropout_preserves_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = 2.0;
        let p = 0.3;
        let trials = 10_000;
        let mut total = 0.0;
        for _ in 0..trials {
            let mask = dropout_mask(1, 1, p, &mut rng);
            total += x * mask.data()[0];
        }
        let mean = total / trials as f64;
        assert!((mean - x).abs() / x < 0.02, "mean {mean}");
    }
}
