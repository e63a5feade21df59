//! Seeded synthetic data sets used by demos and tests.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::data::{HsiCube, LabelMap};
use crate::error::{Error, Result};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(sigma: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sigma).map_err(|e| Error::InvalidParam(e.to_string()))
}

/// Compressed-sensing instance `y = A x` with a `K`-sparse `x`.
#[derive(Debug, Clone)]
pub struct SparseRecovery {
    /// `B × N` Gaussian matrix with unit-norm columns.
    pub matrix: Array2<f64>,
    /// Nonzero entries are ±1.
    pub coefficients: Array1<f64>,
    /// Sorted support of `coefficients`.
    pub support: Vec<usize>,
    pub observation: Array1<f64>,
}

pub fn sparse_recovery(n: usize, b: usize, k: usize, seed: u64) -> Result<SparseRecovery> {
    if k > n || b == 0 || n == 0 {
        return Err(Error::InvalidParam(format!("need K ≤ N and B, N ≥ 1, got N={n}, B={b}, K={k}")));
    }
    let mut rng = rng(seed);
    let mut matrix: Array2<f64> = Array2::from_shape_simple_fn((b, n), || StandardNormal.sample(&mut rng));
    for mut col in matrix.columns_mut() {
        let norm = col.dot(&col).sqrt();
        col /= norm;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let mut support = idx[..k].to_vec();
    support.sort_unstable();
    let mut coefficients = Array1::zeros(n);
    for &i in &support {
        coefficients[i] = if rng.random::<bool>() { 1.0 } else { -1.0 };
    }
    let observation = matrix.dot(&coefficients);
    Ok(SparseRecovery {
        matrix,
        coefficients,
        support,
        observation,
    })
}

/// Labeled samples, one per row.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub samples: Array2<f64>,
    pub labels: Vec<i64>,
}

/// Points on concentric spheres in `R^dim`, class `k` at radius `radii[k-1]`
/// with Gaussian radial jitter. Directions are uniform, so the classes are
/// not linearly separable and differ only in norm.
pub fn concentric_shells(per_class: usize, dim: usize, radii: &[f64], jitter: f64, seed: u64) -> Result<LabeledSet> {
    if dim == 0 || radii.is_empty() {
        return Err(Error::InvalidParam("shells need a dimension and at least one radius".into()));
    }
    let mut rng = rng(seed);
    let jitter = normal(jitter)?;
    let mut samples = Array2::zeros((per_class * radii.len(), dim));
    let mut labels = Vec::with_capacity(samples.nrows());
    for (k, &radius) in radii.iter().enumerate() {
        for i in 0..per_class {
            let dir: Array1<f64> = Array1::from_shape_simple_fn(dim, || StandardNormal.sample(&mut rng));
            let norm = dir.dot(&dir).sqrt().max(f64::MIN_POSITIVE);
            let r = radius + jitter.sample(&mut rng);
            samples.row_mut(k * per_class + i).assign(&(dir * (r / norm)));
            labels.push(k as i64 + 1);
        }
    }
    Ok(LabeledSet { samples, labels })
}

/// Class centres for [`gaussian_blobs`]: i.i.d. standard normal in `R^dim`.
pub fn blob_centres(classes: usize, dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = rng(seed);
    Array2::from_shape_simple_fn((classes, dim), || StandardNormal.sample(&mut rng))
}

/// Isotropic Gaussian clouds of standard deviation `spread` around `centres`.
pub fn gaussian_blobs(centres: &Array2<f64>, per_class: usize, spread: f64, seed: u64) -> Result<LabeledSet> {
    let mut rng = rng(seed);
    let noise = normal(spread)?;
    let (c, dim) = centres.dim();
    let mut samples = Array2::zeros((c * per_class, dim));
    let mut labels = Vec::with_capacity(c * per_class);
    for k in 0..c {
        for i in 0..per_class {
            let mut row = samples.row_mut(k * per_class + i);
            for (d, v) in row.iter_mut().enumerate() {
                *v = centres[[k, d]] + noise.sample(&mut rng);
            }
            labels.push(k as i64 + 1);
        }
    }
    Ok(LabeledSet { samples, labels })
}

/// Piecewise-constant scene with noisy spectra.
#[derive(Debug, Clone)]
pub struct BlockyScene {
    pub cube: HsiCube,
    pub ground_truth: LabelMap,
    /// One smooth positive signature per class, `classes × bands`.
    pub signatures: Array2<f64>,
}

/// `height × width` scene tiled by `block × block` squares, each assigned a
/// random class. Pixels carry their class signature plus per-band Gaussian
/// noise of standard deviation `noise`.
pub fn blocky_scene(
    height: usize,
    width: usize,
    bands: usize,
    classes: usize,
    block: usize,
    noise: f64,
    seed: u64,
) -> Result<BlockyScene> {
    if classes == 0 || block == 0 || bands == 0 {
        return Err(Error::InvalidParam("scene needs classes, bands and a block size".into()));
    }
    let mut rng = rng(seed);
    // smooth signatures: random low-order cosine mixtures lifted above zero
    let mut signatures = Array2::zeros((classes, bands));
    for k in 0..classes {
        let coef: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        for b in 0..bands {
            let t = b as f64 / bands as f64;
            let v: f64 = coef
                .iter()
                .enumerate()
                .map(|(j, c)| c * (std::f64::consts::PI * j as f64 * t).cos())
                .sum();
            signatures[[k, b]] = 2.0 + v;
        }
    }
    let (bh, bw) = (height.div_ceil(block), width.div_ceil(block));
    // every class appears at least once when there are enough blocks
    let mut block_class: Vec<usize> = (0..bh * bw).map(|i| i % classes + 1).collect();
    block_class.shuffle(&mut rng);
    let mut labels = Vec::with_capacity(height * width);
    for r in 0..height {
        for c in 0..width {
            labels.push(block_class[(r / block) * bw + c / block]);
        }
    }
    let noise = normal(noise)?;
    let mut values = vec![0.0; height * width * bands];
    for b in 0..bands {
        for (p, &l) in labels.iter().enumerate() {
            values[b * height * width + p] = signatures[[l - 1, b]] + noise.sample(&mut rng);
        }
    }
    Ok(BlockyScene {
        cube: HsiCube::new(height, width, bands, values)?,
        ground_truth: LabelMap::new(height, width, labels)?,
        signatures,
    })
}

/// Training mask with `per_class` randomly chosen pixels of every class.
pub fn random_training_mask(gt: &LabelMap, per_class: usize, seed: u64) -> LabelMap {
    let mut rng = rng(seed);
    let mut mask = LabelMap::zeros(gt.height(), gt.width());
    for k in 1..=gt.max_label() {
        let mut pixels: Vec<usize> = (0..gt.labels().len()).filter(|&i| gt.labels()[i] == k).collect();
        pixels.shuffle(&mut rng);
        for &i in pixels.iter().take(per_class) {
            mask.set(i / gt.width(), i % gt.width(), k);
        }
    }
    mask
}
