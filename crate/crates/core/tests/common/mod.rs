//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

/// Direct `O(N^4)` transform of a row-major `h x w` image, as `(re, im)`.
pub fn naive_dft(g: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut re = vec![0.0; h * w];
    let mut im = vec![0.0; h * w];
    for u in 0..h {
        for v in 0..w {
            let (mut sr, mut si) = (0.0, 0.0);
            for x in 0..h {
                for y in 0..w {
                    let angle = -2.0 * PI * ((u * x) as f64 / h as f64 + (v * y) as f64 / w as f64);
                    sr += g[x * w + y] * angle.cos();
                    si += g[x * w + y] * angle.sin();
                }
            }
            re[u * w + v] = sr;
            im[u * w + v] = si;
        }
    }
    (re, im)
}

/// Fraction of (fake, real) pairs ranked correctly, ties counting one half.
pub fn pair_count_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

const OFFSETS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
];

/// Hard LBP whose ties contribute half a bit, the zero-temperature limit of
/// the sigmoid relaxation. Borders replicate the edge.
pub fn lbp_limit(g: &[f64], h: usize, w: usize) -> Vec<f64> {
    (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            let c = g[i];
            OFFSETS
                .iter()
                .enumerate()
                .map(|(k, &(dy, dx))| {
                    let ny = (y + dy).clamp(0, h as isize - 1) as usize;
                    let nx = (x + dx).clamp(0, w as isize - 1) as usize;
                    let n = g[ny * w + nx];
                    let bit = if n > c {
                        1.0
                    } else if n == c {
                        0.5
                    } else {
                        0.0
                    };
                    bit * (1u32 << k) as f64 / 255.0
                })
                .sum()
        })
        .collect()
}

/// `h x w` values that are a shuffled evenly spaced grid, so no two pixels
/// are closer than `1 / (h w)`.
pub fn tie_free_image(rng: &mut impl rand::Rng, h: usize, w: usize) -> Vec<f64> {
    use rand::seq::SliceRandom;
    let n = h * w;
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
    v.shuffle(rng);
    v
}
