//! Samples, datasets and input construction.

mod augment;
pub mod pnm;
mod synth;

use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{dft2d, fftshift, log_magnitude};
use crate::tensor::{Real, Tensor};
use crate::texture::soft_lbp;

pub use augment::{augment, hflip, resize, rotate, AugmentConfig};
pub use synth::{synth_phase_dataset, synth_phase_dataset_with, SynthConfig};

/// Ground truth; fake is the positive class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    pub fn from_bit(bit: u8) -> Result<Self> {
        match bit {
            0 => Ok(Label::Real),
            1 => Ok(Label::Fake),
            _ => Err(Error::InvalidArgument(format!(
                "label must be 0 or 1, got {bit}"
            ))),
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Label::Real => 0,
            Label::Fake => 1,
        }
    }

    pub fn dir_name(self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Fake => "fake",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

/// An RGB image in `[0, 1]` with its label.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub label: Label,
    pub id: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    n_real: usize,
    n_fake: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Self {
        let n_fake = samples.iter().filter(|s| s.label == Label::Fake).count();
        Self {
            n_real: samples.len() - n_fake,
            n_fake,
            samples,
        }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_real(&self) -> usize {
        self.n_real
    }

    pub fn n_fake(&self) -> usize {
        self.n_fake
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sample> {
        self.samples.iter()
    }

    /// Side length shared by all images, if they are square and equal.
    pub fn side(&self) -> Option<usize> {
        let mut sides = self.samples.iter().map(|s| s.image.shape()[1..].to_vec());
        let first = sides.next()?;
        (first[0] == first[1] && sides.all(|s| s == first)).then_some(first[0])
    }

    /// Writes `root/real/<id>.ppm` and `root/fake/<id>.ppm`.
    pub fn save_image_dir(&self, root: &Path) -> Result<()> {
        for label in [Label::Real, Label::Fake] {
            fs::create_dir_all(root.join(label.dir_name()))?;
        }
        for s in &self.samples {
            let path = root.join(s.label.dir_name()).join(format!("{}.ppm", s.id));
            fs::write(path, pnm::encode_ppm(&s.image)?)?;
        }
        Ok(())
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Sample;
    type IntoIter = std::slice::Iter<'a, Sample>;

    fn into_iter(self) -> Self::IntoIter {
        self.samples.iter()
    }
}

/// Independent RNG stream for one sample in one epoch.
pub fn sample_rng(seed: u64, index: u64, epoch: u64) -> ChaCha8Rng {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    ChaCha8Rng::seed_from_u64(splitmix(splitmix(splitmix(seed) ^ index) ^ epoch))
}

/// BT.601 luma of a `[3, H, W]` image.
pub fn grayscale<T: Real>(image: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = image.chw()?;
    if c != 3 {
        return Err(Error::Shape(format!("grayscale needs 3 channels, got {c}")));
    }
    let (r, g, b) = (image.channel(0), image.channel(1), image.channel(2));
    let (wr, wg, wb) = (T::cast(0.299), T::cast(0.587), T::cast(0.114));
    let data = (0..h * w)
        .map(|i| wr * r[i] + wg * g[i] + wb * b[i])
        .collect();
    Tensor::new([h, w], data)
}

/// Log-magnitude of the centred spectrum of a grayscale image, in `[0, 1]`.
pub fn magnitude_channel<T: Real>(gray: &Tensor<T>) -> Result<Tensor<T>> {
    log_magnitude(&fftshift(&dft2d(gray)?))
}

/// `[R, G, B, log-magnitude, soft LBP]` stacked into `[5, H, W]`.
pub fn build_augmented_input<T: Real>(image: &Tensor<T>, lbp_tau: f64) -> Result<Tensor<T>> {
    let gray = grayscale(image)?;
    let magnitude = magnitude_channel(&gray)?;
    let lbp = soft_lbp(&gray, lbp_tau)?;
    Tensor::stack_channels(&[image, &magnitude, &lbp])
}

/// Splits each class separately after a seeded shuffle. The test part gets
/// `round(n_class * test_fraction)` samples of each class; both parts keep
/// the dataset's order.
pub fn split_stratified(
    data: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidArgument(format!(
            "test fraction must be in [0, 1), got {test_fraction}"
        )));
    }
    let mut is_test = vec![false; data.len()];
    for (k, label) in [Label::Real, Label::Fake].into_iter().enumerate() {
        let mut idx: Vec<usize> = (0..data.len())
            .filter(|&i| data.samples[i].label == label)
            .collect();
        let n_test = (idx.len() as f64 * test_fraction).round() as usize;
        idx.shuffle(&mut sample_rng(seed, u64::MAX - 1 - k as u64, 0));
        idx[..n_test].iter().for_each(|&i| is_test[i] = true);
    }
    let (test, train): (Vec<_>, Vec<_>) = data
        .samples
        .iter()
        .cloned()
        .zip(is_test)
        .partition(|(_, t)| *t);
    Ok((
        Dataset::new(train.into_iter().map(|(s, _)| s).collect()),
        Dataset::new(test.into_iter().map(|(s, _)| s).collect()),
    ))
}

fn list_images(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::Data(format!(
            "missing subdirectory {}",
            dir.display()
        )));
    }
    let mut files: Vec<_> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("ppm") || e.eq_ignore_ascii_case("pgm"))
        })
        .collect();
    // byte order of the file name, independent of locale and platform
    files.sort_by(|a, b| {
        a.file_name()
            .map(|n| n.as_encoded_bytes())
            .cmp(&b.file_name().map(|n| n.as_encoded_bytes()))
    });
    Ok(files)
}

/// Loads `root/real/*` and `root/fake/*` (P6 or P5), resizing every image to
/// `side x side` when a side is given.
pub fn load_image_dir(root: &Path, side: Option<usize>) -> Result<Dataset> {
    let mut samples = Vec::new();
    for label in [Label::Real, Label::Fake] {
        let files = list_images(&root.join(label.dir_name()))?;
        if files.is_empty() {
            return Err(Error::Data(format!(
                "class {label} has zero samples in {}",
                root.display()
            )));
        }
        for path in files {
            let mut image = pnm::read_pnm(&path)?;
            if let Some(side) = side {
                image = resize(&image, side, side);
            }
            let id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            samples.push(Sample { image, label, id });
        }
    }
    Ok(Dataset::new(samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grayscale_weights() {
        let white = Tensor::full([3, 1, 1], 1.0f64);
        assert!((grayscale(&white).unwrap().data()[0] - 1.0).abs() < 1e-15);
        let red = Tensor::new([3, 1, 1], vec![1.0f64, 0.0, 0.0]).unwrap();
        assert_eq!(grayscale(&red).unwrap().data()[0], 0.299);
        let px = Tensor::new([3, 1, 1], vec![0.2f64, 0.5, 0.9]).unwrap();
        assert_eq!(
            grayscale(&px).unwrap().data()[0],
            0.299 * 0.2 + 0.587 * 0.5 + 0.114 * 0.9
        );
        assert!(grayscale(&Tensor::<f64>::zeros([2, 2, 2])).is_err());
    }

    #[test]
    fn augmented_input_layout() {
        let img = Tensor::from_fn([3, 8, 6], |i| (i % 7) as f64 / 7.0);
        let x0 = build_augmented_input(&img, 0.05).unwrap();
        assert_eq!(x0.shape(), &[5, 8, 6]);
        for c in 0..3 {
            assert_eq!(x0.channel(c), img.channel(c));
        }
    }

    #[test]
    fn constant_gray_input_channels() {
        let img = Tensor::full([3, 8, 8], 0.5f64);
        let x0 = build_augmented_input(&img, 0.05).unwrap();
        for (i, &v) in x0.channel(3).iter().enumerate() {
            let expect = if i == 4 * 8 + 4 { 1.0 } else { 0.0 };
            assert!((v - expect).abs() < 1e-6);
        }
        assert!(x0.channel(4).iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn stratified_split_keeps_class_balance() {
        let d = synth_phase_dataset(10, 16, 0.3, 0).unwrap();
        let (train, test) = split_stratified(&d, 0.3, 4).unwrap();
        assert_eq!(
            (train.n_real(), train.n_fake(), test.n_real(), test.n_fake()),
            (7, 7, 3, 3)
        );
        let (again, _) = split_stratified(&d, 0.3, 4).unwrap();
        assert_eq!(train, again);
        let mut ids: Vec<_> = train
            .iter()
            .chain(test.iter())
            .map(|s| s.id.clone())
            .collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 20);
        assert!(split_stratified(&d, 1.0, 0).is_err());
    }

    #[test]
    fn rng_streams_differ_by_index_and_epoch() {
        use rand::Rng;
        let a: u64 = sample_rng(1, 0, 0).random();
        assert_eq!(a, sample_rng(1, 0, 0).random::<u64>());
        assert_ne!(a, sample_rng(1, 1, 0).random::<u64>());
        assert_ne!(a, sample_rng(1, 0, 1).random::<u64>());
    }
}
