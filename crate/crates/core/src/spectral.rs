//! Two-dimensional Fourier analysis of grayscale images.
//!
//! Transforms are computed by row-column decomposition. Power-of-two lengths
//! use an iterative radix-2 FFT; other lengths go through Bluestein's chirp-z
//! algorithm, which re-expresses the DFT as a power-of-two convolution.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Complex `H x W` frequency-domain array, stored as separate row-major
/// real and imaginary planes.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    height: usize,
    width: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl Spectrum {
    pub fn new(height: usize, width: usize, re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        let n = height * width;
        if re.len() != n || im.len() != n {
            return Err(Error::Shape(format!(
                "spectrum {height}x{width} needs {n} values per plane, got {} and {}",
                re.len(),
                im.len()
            )));
        }
        if re.iter().chain(&im).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("spectrum".into()));
        }
        Ok(Self {
            height,
            width,
            re,
            im,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    pub fn get(&self, u: usize, v: usize) -> (f64, f64) {
        let i = u * self.width + v;
        (self.re[i], self.im[i])
    }

    pub fn magnitude(&self, u: usize, v: usize) -> f64 {
        let (re, im) = self.get(u, v);
        re.hypot(im)
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(r, i)| r.hypot(*i))
            .collect()
    }

    pub fn phases(&self) -> Vec<f64> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(&r, &i)| wrapped_phase(r, i))
            .collect()
    }

    /// Builds a spectrum from polar coordinates.
    pub fn from_polar(
        height: usize,
        width: usize,
        magnitude: &[f64],
        phase: &[f64],
    ) -> Result<Self> {
        let re = magnitude
            .iter()
            .zip(phase)
            .map(|(m, p)| m * p.cos())
            .collect();
        let im = magnitude
            .iter()
            .zip(phase)
            .map(|(m, p)| m * p.sin())
            .collect();
        Self::new(height, width, re, im)
    }
}

/// Angle in `(-pi, pi]`; bins with magnitude below `1e-12` have angle 0.
fn wrapped_phase(re: f64, im: f64) -> f64 {
    if re.hypot(im) < 1e-12 {
        return 0.0;
    }
    let phi = im.atan2(re);
    if phi <= -PI {
        PI
    } else {
        phi
    }
}

/// Precomputed 1D transform for a fixed length.
enum Plan {
    Radix2 {
        n: usize,
        cos: Vec<f64>,
        sin: Vec<f64>,
    },
    Bluestein {
        n: usize,
        m: usize,
        chirp_re: Vec<f64>,
        chirp_im: Vec<f64>,
        kernel_re: Vec<f64>,
        kernel_im: Vec<f64>,
        inner: Box<Plan>,
    },
}

impl Plan {
    fn new(n: usize) -> Self {
        if n.is_power_of_two() {
            let half = n / 2;
            let cos = (0..half)
                .map(|k| (2.0 * PI * k as f64 / n as f64).cos())
                .collect();
            let sin = (0..half)
                .map(|k| -(2.0 * PI * k as f64 / n as f64).sin())
                .collect();
            return Plan::Radix2 { n, cos, sin };
        }
        let m = (2 * n - 1).next_power_of_two();
        let inner = Plan::new(m);
        // chirp w_k = exp(-i pi k^2 / n); k^2 is reduced mod 2n to keep the angle small
        let (chirp_re, chirp_im): (Vec<f64>, Vec<f64>) = (0..n)
            .map(|k| {
                let k2 = (k * k) % (2 * n);
                let a = PI * k2 as f64 / n as f64;
                (a.cos(), -a.sin())
            })
            .unzip();
        let mut kernel_re = vec![0.0; m];
        let mut kernel_im = vec![0.0; m];
        for k in 0..n {
            kernel_re[k] = chirp_re[k];
            kernel_im[k] = -chirp_im[k];
            if k > 0 {
                kernel_re[m - k] = chirp_re[k];
                kernel_im[m - k] = -chirp_im[k];
            }
        }
        inner.run(&mut kernel_re, &mut kernel_im);
        Plan::Bluestein {
            n,
            m,
            chirp_re,
            chirp_im,
            kernel_re,
            kernel_im,
            inner: Box::new(inner),
        }
    }

    fn len(&self) -> usize {
        match self {
            Plan::Radix2 { n, .. } | Plan::Bluestein { n, .. } => *n,
        }
    }

    /// Forward transform in place: `X[k] = sum_j x[j] exp(-2 pi i jk / n)`.
    fn run(&self, re: &mut [f64], im: &mut [f64]) {
        match self {
            Plan::Radix2 { n, cos, sin } => radix2(*n, cos, sin, re, im),
            Plan::Bluestein {
                n,
                m,
                chirp_re,
                chirp_im,
                kernel_re,
                kernel_im,
                inner,
            } => {
                let (n, m) = (*n, *m);
                let mut a_re = vec![0.0; m];
                let mut a_im = vec![0.0; m];
                for k in 0..n {
                    a_re[k] = re[k] * chirp_re[k] - im[k] * chirp_im[k];
                    a_im[k] = re[k] * chirp_im[k] + im[k] * chirp_re[k];
                }
                inner.run(&mut a_re, &mut a_im);
                for k in 0..m {
                    let (r, i) = (a_re[k], a_im[k]);
                    a_re[k] = r * kernel_re[k] - i * kernel_im[k];
                    a_im[k] = r * kernel_im[k] + i * kernel_re[k];
                }
                // inverse via conjugation
                a_im.iter_mut().for_each(|v| *v = -*v);
                inner.run(&mut a_re, &mut a_im);
                let scale = 1.0 / m as f64;
                for k in 0..n {
                    let (r, i) = (a_re[k] * scale, -a_im[k] * scale);
                    re[k] = r * chirp_re[k] - i * chirp_im[k];
                    im[k] = r * chirp_im[k] + i * chirp_re[k];
                }
            }
        }
    }
}

fn radix2(n: usize, cos: &[f64], sin: &[f64], re: &mut [f64], im: &mut [f64]) {
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let (wr, wi) = (cos[k * step], sin[k * step]);
                let (a, b) = (start + k, start + k + half);
                let tr = re[b] * wr - im[b] * wi;
                let ti = re[b] * wi + im[b] * wr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
        len *= 2;
    }
}

fn transform_2d(height: usize, width: usize, re: &mut [f64], im: &mut [f64]) {
    let row_plan = Plan::new(width);
    for (r, i) in re.chunks_exact_mut(width).zip(im.chunks_exact_mut(width)) {
        row_plan.run(r, i);
    }
    let col_plan = if height == width {
        row_plan
    } else {
        Plan::new(height)
    };
    debug_assert_eq!(col_plan.len(), height);
    let mut col_re = vec![0.0; height];
    let mut col_im = vec![0.0; height];
    for v in 0..width {
        for u in 0..height {
            col_re[u] = re[u * width + v];
            col_im[u] = im[u * width + v];
        }
        col_plan.run(&mut col_re, &mut col_im);
        for u in 0..height {
            re[u * width + v] = col_re[u];
            im[u * width + v] = col_im[u];
        }
    }
}

/// `S[u, v] = sum_{x, y} g[x, y] exp(-2 pi i (ux/H + vy/W))` of an `[H, W]` image.
pub fn dft2d<T: Real>(gray: &Tensor<T>) -> Result<Spectrum> {
    if gray.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot transform an empty image".into(),
        ));
    }
    let (h, w) = gray.hw()?;
    if h < 2 || w < 2 {
        return Err(Error::InvalidArgument(format!(
            "transform needs at least 2x2 input, got {h}x{w}"
        )));
    }
    gray.check_finite("dft2d input")?;
    let mut re: Vec<f64> = gray.data().iter().map(|v| v.as_f64()).collect();
    let mut im = vec![0.0; re.len()];
    transform_2d(h, w, &mut re, &mut im);
    Spectrum::new(h, w, re, im)
}

/// Inverse transform, returning the real part of the reconstruction.
pub fn idft2d_real(s: &Spectrum) -> Result<Tensor<f64>> {
    let (h, w) = (s.height, s.width);
    let mut re = s.re.clone();
    let mut im: Vec<f64> = s.im.iter().map(|v| -v).collect();
    transform_2d(h, w, &mut re, &mut im);
    let scale = 1.0 / (h * w) as f64;
    Tensor::new([h, w], re.into_iter().map(|v| v * scale).collect())
}

/// Moves the zero-frequency bin from `(0, 0)` to `(H/2, W/2)` (rounded down).
pub fn fftshift(s: &Spectrum) -> Spectrum {
    let (h, w) = (s.height, s.width);
    let (sh, sw) = (h.div_ceil(2), w.div_ceil(2));
    let mut re = Vec::with_capacity(h * w);
    let mut im = Vec::with_capacity(h * w);
    for u in 0..h {
        let src_u = (u + sh) % h;
        for v in 0..w {
            let i = src_u * w + (v + sw) % w;
            re.push(s.re[i]);
            im.push(s.im[i]);
        }
    }
    Spectrum {
        height: h,
        width: w,
        re,
        im,
    }
}

/// Inverse of [`fftshift`] for any size.
pub fn ifftshift(s: &Spectrum) -> Spectrum {
    let (h, w) = (s.height, s.width);
    let (sh, sw) = (h / 2, w / 2);
    let mut re = Vec::with_capacity(h * w);
    let mut im = Vec::with_capacity(h * w);
    for u in 0..h {
        let src_u = (u + sh) % h;
        for v in 0..w {
            let i = src_u * w + (v + sw) % w;
            re.push(s.re[i]);
            im.push(s.im[i]);
        }
    }
    Spectrum {
        height: h,
        width: w,
        re,
        im,
    }
}

/// Per-image min-max normalization into `[0, 1]`; a constant map becomes zeros.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo + 1e-8;
    values
        .iter()
        .map(|&v| ((v - lo) / range).clamp(0.0, 1.0))
        .collect()
}

/// `log(1 + |s|)` min-max normalized into `[0, 1]`. Expects a shifted spectrum.
pub fn log_magnitude<T: Real>(s: &Spectrum) -> Result<Tensor<T>> {
    let raw: Vec<f64> = s.magnitudes().into_iter().map(f64::ln_1p).collect();
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spectrum magnitude".into()));
    }
    let norm = min_max_normalize(&raw);
    Tensor::new([s.height, s.width], norm.into_iter().map(T::cast).collect())
}

/// Phase angle mapped affinely from `(-pi, pi]` onto `(0, 1]`; near-zero
/// bins map to 0.5. Expects a shifted spectrum.
pub fn phase_map<T: Real>(s: &Spectrum) -> Result<Tensor<T>> {
    let data = s
        .phases()
        .into_iter()
        .map(|phi| T::cast((phi + PI) / (2.0 * PI)))
        .collect();
    Tensor::new([s.height, s.width], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_dft(g: &Tensor<f64>) -> (Vec<f64>, Vec<f64>) {
        let (h, w) = g.hw().unwrap();
        let mut re = vec![0.0; h * w];
        let mut im = vec![0.0; h * w];
        for u in 0..h {
            for v in 0..w {
                for x in 0..h {
                    for y in 0..w {
                        let a = -2.0 * PI * ((u * x) as f64 / h as f64 + (v * y) as f64 / w as f64);
                        re[u * w + v] += g.at(&[x, y]) * a.cos();
                        im[u * w + v] += g.at(&[x, y]) * a.sin();
                    }
                }
            }
        }
        (re, im)
    }

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_fn([h, w], |_| rng.random::<f64>())
    }

    #[test]
    fn constant_image_is_dc_only() {
        let g = Tensor::full([4, 4], 0.7f64);
        let s = dft2d(&g).unwrap();
        for u in 0..4 {
            for v in 0..4 {
                let expect = if (u, v) == (0, 0) { 16.0 * 0.7 } else { 0.0 };
                assert!((s.get(u, v).0 - expect).abs() < 1e-9 && s.get(u, v).1.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn cosine_energy_at_two_bins() {
        let g = Tensor::from_fn([8, 8], |i| (2.0 * PI * (i / 8) as f64 / 8.0).cos());
        let s = dft2d(&g).unwrap();
        for u in 0..8 {
            for v in 0..8 {
                let expect = if v == 0 && (u == 1 || u == 7) {
                    32.0
                } else {
                    0.0
                };
                assert!((s.magnitude(u, v) - expect).abs() < 1e-9, "bin ({u},{v})");
            }
        }
    }

    #[test]
    fn matches_naive_dft_for_mixed_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(h, w) in &[(6, 8), (7, 7), (12, 5), (17, 16), (3, 31)] {
            let g = random_image(&mut rng, h, w);
            let s = dft2d(&g).unwrap();
            let (re, im) = naive_dft(&g);
            for i in 0..h * w {
                assert!((s.re()[i] - re[i]).abs() < 1e-9 && (s.im()[i] - im[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(dft2d(&Tensor::<f64>::zeros([1, 4])).is_err());
        assert!(dft2d(&Tensor::<f64>::zeros([0, 0])).is_err());
    }

    #[test]
    fn shift_moves_dc_to_center() {
        for n in [4usize, 3] {
            let mut re = vec![0.0; n * n];
            re[0] = 1.0;
            let s = fftshift(&Spectrum::new(n, n, re, vec![0.0; n * n]).unwrap());
            let c = n / 2;
            assert_eq!(s.get(c, c).0, 1.0);
            assert_eq!(s.re().iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn shift_is_an_involution_for_even_sizes_and_ifftshift_inverts_it() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = dft2d(&random_image(&mut rng, 6, 8)).unwrap();
        assert_eq!(fftshift(&fftshift(&s)), s);
        let odd = dft2d(&random_image(&mut rng, 5, 7)).unwrap();
        assert_eq!(ifftshift(&fftshift(&odd)), odd);
    }

    #[test]
    fn inverse_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = random_image(&mut rng, 12, 10);
        let back = idft2d_real(&dft2d(&g).unwrap()).unwrap();
        for (a, b) in g.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn log_magnitude_of_constant_image() {
        let s = fftshift(&dft2d(&Tensor::full([4, 4], 1.0f64)).unwrap());
        let m: Tensor<f64> = log_magnitude(&s).unwrap();
        for u in 0..4 {
            for v in 0..4 {
                let expect = if (u, v) == (2, 2) { 1.0 } else { 0.0 };
                assert!((m.at(&[u, v]) - expect).abs() < 1e-6);
            }
        }
        let zero: Tensor<f64> =
            log_magnitude(&fftshift(&dft2d(&Tensor::<f64>::zeros([4, 4])).unwrap())).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn phase_of_positive_dc_is_half() {
        let s = fftshift(&dft2d(&Tensor::full([5, 6], 0.3f64)).unwrap());
        let p: Tensor<f64> = phase_map(&s).unwrap();
        assert!((p.at(&[2, 3]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn phase_matches_atan2_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = fftshift(&dft2d(&random_image(&mut rng, 9, 8)).unwrap());
        let p: Tensor<f64> = phase_map(&s).unwrap();
        for i in 0..72 {
            let phi = s.im()[i].atan2(s.re()[i]);
            assert_eq!(p.data()[i], (phi + PI) / (2.0 * PI));
            assert!(p.data()[i] > 0.0 && p.data()[i] <= 1.0);
        }
    }
}
