//! Reverse-mode gradients against central finite differences.

use crate::error::{Error, Result};
use crate::net::mlp::{mlp_forward, mlp_tape, MlpLayout};
use crate::net::tape::Tape;
use crate::net::tensor::Tensor;

/// Denominator floor of the relative error.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// `l(theta) = sum_rows |net(x_r)|^2 / (2 rows)`.
fn half_mean_square(params: &[f64], layout: &MlpLayout, input: &Tensor) -> Result<f64> {
    let mut acc = 0.0;
    for r in 0..input.rows {
        acc += mlp_forward(params, layout, input.row(r))?
            .iter()
            .map(|v| v * v)
            .sum::<f64>();
    }
    Ok(0.5 * acc / input.rows as f64)
}

/// Largest `|g_tape - g_fd| / max(|g_tape|, |g_fd|, RELATIVE_FLOOR)` over
/// all parameters of `layout`, with the finite differences taken on the
/// plain forward pass.
pub fn gradient_check(layout: &MlpLayout, params: &[f64], input: &Tensor, fd_step: f64) -> Result<f64> {
    if input.cols != layout.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "gradient check input",
            expected: layout.input_dim(),
            got: input.cols,
        });
    }
    let mut tape = Tape::new(params);
    let x = tape.constant(input.clone());
    let out = mlp_tape(&mut tape, layout, x)?;
    let loss = tape.sum_squares(out, 0.5 / input.rows as f64);
    let mut grad = vec![0.0; params.len()];
    tape.backward(loss, &mut grad)?;

    let mut work = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in layout.offset..layout.end() {
        let orig = work[i];
        work[i] = orig + fd_step;
        let up = half_mean_square(&work, layout, input)?;
        work[i] = orig - fd_step;
        let down = half_mean_square(&work, layout, input)?;
        work[i] = orig;
        let fd = (up - down) / (2.0 * fd_step);
        let denom = grad[i].abs().max(fd.abs()).max(RELATIVE_FLOOR);
        worst = worst.max((grad[i] - fd).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::tape::Activation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn small_tanh_net() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = MlpLayout::new(3, &[5, 4], 2, Activation::Tanh, 0).unwrap();
        let p: Vec<f64> = (0..l.end()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec(4, 3, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect());
        assert!(gradient_check(&l, &p, &x, 1e-4).unwrap() < 1e-6);
    }
}
