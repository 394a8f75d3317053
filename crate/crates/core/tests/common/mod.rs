#![allow(dead_code)]

use pgu_core::data::{make_blobs, BlobsConfig, Dataset, InputShape};
use pgu_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Columns of a random orthonormal d×k matrix (Gram–Schmidt).
pub fn random_orthonormal(d: usize, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut cols: Vec<Vec<f64>> = Vec::new();
    while cols.len() < k {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        for _ in 0..2 {
            for c in &cols {
                let p: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= p * b);
            }
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-6 {
            cols.push(v.into_iter().map(|a| a / n).collect());
        }
    }
    Matrix::from_fn(d, k, |r, c| cols[c][r])
}

pub fn small_blobs(seed: u64) -> pgu_core::data::Splits {
    make_blobs(&BlobsConfig { classes: 3, n_per_class: 40, dim: 4, spread: 0.6, seed }).unwrap()
}

pub fn random_images(n: usize, side: usize, classes: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let features = Matrix::from_fn(n, side * side, |_, _| r.random_range(0.0..1.0));
    let labels = (0..n).map(|i| i % classes).collect();
    Dataset::new(features, labels, classes, (0..n as u64).collect(), InputShape::Image { channels: 1, height: side, width: side })
        .unwrap()
}
