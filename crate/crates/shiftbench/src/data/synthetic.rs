//! Synthetic dataset generators: oriented-bar images (rotation-sensitive by
//! construction), uniform-noise images for OOD probes, and tabular rows with
//! categorical token features.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::dataset::{FeatureKind, LabeledDataset};
use crate::error::{Error, Result};

/// Images of a bright bar drawn from the center outward at orientation
/// `class * 180 / classes` degrees, plus optional Gaussian pixel noise.
///
/// The bar covers only one half-axis so no two class orientations are
/// related by a 180-degree rotation; rotating the images therefore moves
/// them away from every training orientation instead of cycling back.
pub fn make_synthetic_bars(
    n_per_class: usize,
    classes: usize,
    side: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if classes < 2 {
        return Err(Error::InvalidArgument("need at least 2 classes".into()));
    }
    if side < 8 {
        return Err(Error::InvalidArgument("side must be at least 8".into()));
    }
    if n_per_class == 0 {
        return Err(Error::InvalidArgument("n_per_class must be positive".into()));
    }
    if !(noise_sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise_sigma {noise_sigma} must be >= 0"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_per_class * classes;
    let d = side * side;
    let mut features = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);

    let templates: Vec<Vec<f64>> = (0..classes)
        .map(|c| {
            let theta = (c as f64) * 180.0 / (classes as f64);
            render_ray(side, theta.to_radians())
        })
        .collect();

    let mut row = 0;
    for (c, template) in templates.iter().enumerate() {
        for _ in 0..n_per_class {
            for (j, &t) in template.iter().enumerate() {
                let v = if noise_sigma > 0.0 {
                    let z: f64 = rng.sample(StandardNormal);
                    (t + noise_sigma * z).clamp(0.0, 1.0)
                } else {
                    t
                };
                features[[row, j]] = v;
            }
            labels.push(c);
            row += 1;
        }
    }

    LabeledDataset::new(
        features,
        labels,
        FeatureKind::Image {
            height: side,
            width: side,
        },
        classes,
        "bars",
    )
}

fn render_ray(side: usize, theta: f64) -> Vec<f64> {
    let c = (side as f64 - 1.0) / 2.0;
    let len = 0.42 * side as f64;
    let half_width = side as f64 / 12.0;
    let (ux, uy) = (theta.cos(), theta.sin());
    let mut out = vec![0.0; side * side];
    for r in 0..side {
        for x in 0..side {
            // Image row grows downward; flip to math coordinates.
            let px = x as f64 - c;
            let py = c - r as f64;
            let along = px * ux + py * uy;
            let perp = -px * uy + py * ux;
            if along >= 0.0 && along <= len {
                out[r * side + x] = (-perp * perp / (2.0 * half_width * half_width)).exp();
            }
        }
    }
    out
}

/// Uniform-noise images used as a fully out-of-distribution probe.
pub fn make_noise_images(n: usize, side: usize, seed: u64) -> Result<LabeledDataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = side * side;
    let mut features = Array2::zeros((n, d));
    for mut row in features.outer_iter_mut() {
        for v in row.iter_mut() {
            *v = rng.gen::<f64>();
        }
    }
    LabeledDataset::new(
        features,
        vec![0; n],
        FeatureKind::Image {
            height: side,
            width: side,
        },
        1,
        "noise",
    )
}

/// Binary-labeled tabular rows: `numeric` nuisance columns drawn from a
/// standard normal, plus one categorical token column per vocabulary. The
/// label depends only on per-token weights, so replacing tokens with
/// out-of-vocabulary ids destroys the signal.
pub fn make_synthetic_tabular(
    n: usize,
    numeric: usize,
    vocab_sizes: &[usize],
    seed: u64,
) -> Result<LabeledDataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    if vocab_sizes.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one categorical feature".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let token_weights: Vec<Vec<f64>> = vocab_sizes
        .iter()
        .map(|&v| {
            (0..v)
                .map(|_| 1.25 * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();

    let d = numeric + vocab_sizes.len();
    let mut features = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        for j in 0..numeric {
            features[[i, j]] = rng.sample::<f64, _>(StandardNormal);
        }
        let mut score = -0.4;
        for (j, &v) in vocab_sizes.iter().enumerate() {
            let token = rng.gen_range(0..v);
            features[[i, numeric + j]] = token as f64;
            score += token_weights[j][token];
        }
        let p = 1.0 / (1.0 + (-score).exp());
        let y = usize::from(rng.gen::<f64>() < p);
        labels.push(y);
    }

    LabeledDataset::new(
        features,
        labels,
        FeatureKind::Tabular {
            numeric,
            vocab_sizes: vocab_sizes.to_vec(),
        },
        2,
        "tabular",
    )
}
