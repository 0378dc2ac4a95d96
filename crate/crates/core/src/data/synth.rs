//! Synthetic real/fake pairs that differ only in spectral phase.
//!
//! Real samples are band-limited Gaussian noise pushed through a sigmoid,
//! which gives blob textures with sharp boundaries; those boundaries depend
//! on phase alignment across frequencies. Each fake keeps its real
//! counterpart's magnitude spectrum exactly and jitters the phase of a
//! mid-frequency annulus.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{sample_rng, Dataset, Label, Sample};
use crate::error::{Error, Result};
use crate::spectral::{dft2d, idft2d_real, Spectrum};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_per_class: usize,
    pub side: usize,
    /// Phase offsets are drawn from `U(-s*pi, s*pi)`.
    pub perturb_strength: f64,
    pub seed: u64,
    /// Gain of the sigmoid that sharpens the noise into blobs.
    pub edge_gain: f64,
    /// Low-pass cutoff range, as fractions of the side length.
    pub cutoff: (f64, f64),
    /// Pixel range of real textures; the margin to `[0, 1]` absorbs the
    /// perturbation so fakes rarely clip.
    pub value_range: (f64, f64),
}

impl SynthConfig {
    pub fn new(n_per_class: usize, side: usize, perturb_strength: f64, seed: u64) -> Self {
        Self {
            n_per_class,
            side,
            perturb_strength,
            seed,
            edge_gain: 4.0,
            cutoff: (0.12, 0.25),
            value_range: (0.3, 0.7),
        }
    }
}

/// Radial frequency of bin `(u, v)` in cycles per image.
fn radius(u: usize, v: usize, side: usize) -> f64 {
    let fu = u.min(side - u) as f64;
    let fv = v.min(side - v) as f64;
    fu.hypot(fv)
}

fn real_texture<R: Rng>(rng: &mut R, cfg: &SynthConfig) -> Result<Tensor<f64>> {
    let n = cfg.side;
    let noise = Tensor::from_fn([n, n], |_| rng.sample::<f64, _>(StandardNormal));
    let spec = dft2d(&noise)?;
    let cutoff = n as f64 * rng.random_range(cfg.cutoff.0..=cfg.cutoff.1);
    let mut re = spec.re().to_vec();
    let mut im = spec.im().to_vec();
    for u in 0..n {
        for v in 0..n {
            let gain = (-(radius(u, v, n) / cutoff).powi(2)).exp();
            re[u * n + v] *= gain;
            im[u * n + v] *= gain;
        }
    }
    let field = idft2d_real(&Spectrum::new(n, n, re, im)?)?;
    let mean = field.data().iter().sum::<f64>() / field.len() as f64;
    let var = field.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / field.len() as f64;
    let std = var.sqrt().max(1e-12);
    let (lo, hi) = cfg.value_range;
    Ok(field.map(|v| {
        let t = 1.0 / (1.0 + (-cfg.edge_gain * (v - mean) / std).exp());
        lo + (hi - lo) * t
    }))
}

/// Rotates the phase of every bin whose radius lies in `[side/8, side/4]` by
/// an independent uniform offset, keeping Hermitian symmetry.
fn perturb_phase<R: Rng>(image: &Tensor<f64>, strength: f64, rng: &mut R) -> Result<Tensor<f64>> {
    let n = image.shape()[0];
    let spec = dft2d(image)?;
    let mut re = spec.re().to_vec();
    let mut im = spec.im().to_vec();
    let (r_lo, r_hi) = (n as f64 / 8.0, n as f64 / 4.0);
    let amplitude = strength * PI;
    for u in 0..n {
        for v in 0..n {
            let (pu, pv) = ((n - u) % n, (n - v) % n);
            // each conjugate pair is visited once; self-conjugate bins stay real
            if (u, v) >= (pu, pv) {
                continue;
            }
            let r = radius(u, v, n);
            if r < r_lo || r > r_hi {
                continue;
            }
            let delta = if amplitude > 0.0 {
                rng.random_range(-amplitude..amplitude)
            } else {
                0.0
            };
            let (s, c) = delta.sin_cos();
            for (idx, sign) in [(u * n + v, 1.0), (pu * n + pv, -1.0)] {
                let (a, b) = (re[idx], im[idx]);
                re[idx] = a * c - b * s * sign;
                im[idx] = a * s * sign + b * c;
            }
        }
    }
    let out = idft2d_real(&Spectrum::new(n, n, re, im)?)?;
    Ok(out.map(|v| v.clamp(0.0, 1.0)))
}

fn to_rgb(gray: &Tensor<f64>) -> Tensor<f32> {
    let g = gray.cast::<f32>();
    Tensor::stack_channels(&[&g, &g, &g]).expect("same plane size")
}

/// Generates `n_per_class` real textures followed by their phase-perturbed fakes.
pub fn synth_phase_dataset(
    n_per_class: usize,
    side: usize,
    perturb_strength: f64,
    seed: u64,
) -> Result<Dataset> {
    synth_phase_dataset_with(&SynthConfig::new(n_per_class, side, perturb_strength, seed))
}

pub fn synth_phase_dataset_with(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.side < 16 {
        return Err(Error::InvalidArgument(format!(
            "synthetic side must be at least 16, got {}",
            cfg.side
        )));
    }
    if cfg.n_per_class == 0 {
        return Err(Error::InvalidArgument(
            "need at least one sample per class".into(),
        ));
    }
    let mut reals = Vec::with_capacity(cfg.n_per_class);
    let mut fakes = Vec::with_capacity(cfg.n_per_class);
    for i in 0..cfg.n_per_class {
        let mut rng = sample_rng(cfg.seed, i as u64, 0);
        let real = real_texture(&mut rng, cfg)?;
        let fake = perturb_phase(&real, cfg.perturb_strength, &mut rng)?;
        reals.push(Sample {
            image: to_rgb(&real),
            label: Label::Real,
            id: format!("real_{i:05}"),
        });
        fakes.push(Sample {
            image: to_rgb(&fake),
            label: Label::Fake,
            id: format!("fake_{i:05}"),
        });
    }
    reals.extend(fakes);
    Ok(Dataset::new(reals))
}
