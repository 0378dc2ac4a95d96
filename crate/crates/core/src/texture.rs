//! Local binary patterns over the 3x3 neighbourhood.
//!
//! Neighbours are visited clockwise starting at the top-left pixel and
//! contribute bit `k` in that order. Borders use edge replication so the map
//! keeps the input's size. The soft variant replaces the threshold with a
//! sigmoid of temperature `tau`, which makes the map differentiable.

use crate::error::{Error, Result};
use crate::tensor::{sigmoid, Real, Tape, Tensor, Var};

/// Default sigmoid temperature for inputs in `[0, 1]`.
pub const DEFAULT_TAU: f64 = 0.05;

/// `(dy, dx)` of neighbour `k`, clockwise from the top-left.
const NEIGHBOURS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
];

#[inline]
fn neighbour(y: usize, x: usize, k: usize, h: usize, w: usize) -> usize {
    let (dy, dx) = NEIGHBOURS[k];
    let ny = (y as isize + dy).clamp(0, h as isize - 1) as usize;
    let nx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
    ny * w + nx
}

fn bit_weights<T: Real>() -> [T; 8] {
    std::array::from_fn(|k| T::cast((1u32 << k) as f64 / 255.0))
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "LBP temperature must be positive, got {tau}"
        )))
    }
}

fn soft_lbp_values<T: Real>(g: &[T], h: usize, w: usize, tau: T) -> Vec<T> {
    let weights = bit_weights::<T>();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let c = g[y * w + x];
            let mut acc = T::zero();
            for (k, &wk) in weights.iter().enumerate() {
                acc += sigmoid((g[neighbour(y, x, k, h, w)] - c) / tau) * wk;
            }
            out.push(acc);
        }
    }
    out
}

fn soft_lbp_grad<T: Real>(g: &[T], h: usize, w: usize, tau: T, grad_out: &[T]) -> Vec<T> {
    let weights = bit_weights::<T>();
    let mut grad = vec![T::zero(); h * w];
    for y in 0..h {
        for x in 0..w {
            let ci = y * w + x;
            let c = g[ci];
            let go = grad_out[ci];
            for (k, &wk) in weights.iter().enumerate() {
                let ni = neighbour(y, x, k, h, w);
                let s = sigmoid((g[ni] - c) / tau);
                let d = go * wk * s * (T::one() - s) / tau;
                grad[ni] += d;
                grad[ci] -= d;
            }
        }
    }
    grad
}

/// Differentiable LBP map of an `[H, W]` image, with values in `[0, 1]`.
pub fn soft_lbp<T: Real>(gray: &Tensor<T>, tau: f64) -> Result<Tensor<T>> {
    check_tau(tau)?;
    let (h, w) = gray.hw()?;
    Tensor::new([h, w], soft_lbp_values(gray.data(), h, w, T::cast(tau)))
}

/// Records [`soft_lbp`] on a tape so gradients flow back to the image.
pub fn soft_lbp_on_tape<T: Real>(tape: &mut Tape<T>, gray: Var, tau: f64) -> Result<Var> {
    let out = soft_lbp(tape.value(gray), tau)?;
    let tau = T::cast(tau);
    tape.custom(&[gray], out, move |inputs, out, grad_out| {
        let (h, w) = (out.shape()[0], out.shape()[1]);
        vec![Some(soft_lbp_grad(inputs[0].data(), h, w, tau, grad_out))]
    })
}

/// Classical hard-threshold LBP: bit `k` is set iff neighbour `k` is at least
/// the centre value. Returns `code / 255`.
pub fn hard_lbp_oracle<T: Real>(gray: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w) = gray.hw()?;
    let g = gray.data();
    let codes = (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            let code = (0..8)
                .filter(|&k| g[neighbour(y, x, k, h, w)] >= g[i])
                .fold(0u32, |acc, k| acc | (1 << k));
            T::cast(code as f64 / 255.0)
        })
        .collect();
    Tensor::new([h, w], codes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn code(v: f64) -> u32 {
        (v * 255.0).round() as u32
    }

    #[test]
    fn constant_image_is_half() {
        let out = soft_lbp(&Tensor::full([5, 4], 0.3f64), 0.05).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn saturated_neighbourhood() {
        let mut g = Tensor::full([3, 3], 1.0f64);
        g.data_mut()[4] = 0.0;
        let out = soft_lbp(&g, 0.001).unwrap();
        assert!((out.at(&[1, 1]) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_non_positive_tau() {
        let g = Tensor::<f64>::zeros([3, 3]);
        assert!(soft_lbp(&g, 0.0).is_err());
        assert!(soft_lbp(&g, -1.0).is_err());
    }

    #[test]
    fn hard_codes_on_hand_enumerated_ramp() {
        // strictly decreasing in raster order
        let g = Tensor::new([3, 3], vec![9.0f64, 8.0, 7.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0]).unwrap();
        let out = hard_lbp_oracle(&g).unwrap();
        // centre 5: neighbours 9,8,7,4,1,2,3,6 -> bits 0,1,2 and 7 set
        assert_eq!(code(out.at(&[1, 1])), 0b1000_0111);
        // top-left 9, replicated border: neighbours 9,9,8,8,5,6,6,9 -> bits 0,1,7
        assert_eq!(code(out.at(&[0, 0])), 0b1000_0011);
        // bottom-right 1 is the minimum, every neighbour is >= 1
        assert_eq!(code(out.at(&[2, 2])), 0xff);
        // top-middle 8: neighbours 9,8,7,7,4,5,6,9 -> bits 0,1,7
        assert_eq!(code(out.at(&[0, 1])), 0b1000_0011);
    }

    #[test]
    fn constant_hard_code_is_all_ones() {
        let out = hard_lbp_oracle(&Tensor::full([4, 4], 0.2f64)).unwrap();
        assert!(out.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn negation_complements_codes_without_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Tensor::from_fn([6, 7], |_| rng.random::<f64>());
        let neg = g.map(|v| -v);
        let a = hard_lbp_oracle(&g).unwrap();
        let b = hard_lbp_oracle(&neg).unwrap();
        for (y, x) in (1..5).flat_map(|y| (1..6).map(move |x| (y, x))) {
            assert_eq!(code(a.at(&[y, x])) ^ code(b.at(&[y, x])), 0xff);
        }
    }

    #[test]
    fn soft_gradient_passes_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = Tensor::from_fn([6, 5], |_| rng.random::<f64>());
        let f = |tape: &mut Tape<f64>, x: Var| {
            let l = soft_lbp_on_tape(tape, x, 0.3)?;
            tape.mean(l)
        };
        let r = grad_check(f, &p, 1e-4, 1e-3).unwrap();
        assert!(r.pass, "{r:?}");
    }
}
