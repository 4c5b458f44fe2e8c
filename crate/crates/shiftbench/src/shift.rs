//! Controlled dataset shifts: image rotation, cyclic translation, Gaussian
//! blur, pixel noise, and categorical token randomization.

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureKind, LabeledDataset, ShiftTag};
use crate::error::{Error, Result};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    Rotate,
    Translate,
    Blur,
    PixelNoise,
    CategoricalRandomize,
}

impl ShiftKind {
    pub fn name(&self) -> &'static str {
        match self {
            ShiftKind::Rotate => "rotate",
            ShiftKind::Translate => "translate",
            ShiftKind::Blur => "blur",
            ShiftKind::PixelNoise => "pixel_noise",
            ShiftKind::CategoricalRandomize => "categorical_randomize",
        }
    }

    fn wants_images(&self) -> bool {
        !matches!(self, ShiftKind::CategoricalRandomize)
    }
}

/// A shift type with an ordered list of intensities. Level semantics follow
/// the kind: degrees, pixels, sigma, sigma, replacement probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub kind: ShiftKind,
    pub levels: Vec<f64>,
}

impl ShiftSpec {
    pub fn new(kind: ShiftKind, levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidArgument("shift needs at least one level".into()));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "shift levels must be strictly increasing".into(),
            ));
        }
        Ok(ShiftSpec { kind, levels })
    }
}

/// Rotate an h x w unit-range image counterclockwise about its center.
///
/// Sampling is bilinear with zero fill outside the frame. Right angles on
/// square images take an exact pixel-permutation path, so four 90-degree
/// turns reproduce the input bit-exactly.
pub fn rotate_image(img: ArrayView1<f64>, h: usize, w: usize, degrees: f64) -> Result<Array2<f64>> {
    if h < 2 || w < 2 {
        return Err(Error::InvalidArgument("image must be at least 2x2".into()));
    }
    if img.len() != h * w {
        return Err(Error::ShapeMismatch(format!(
            "{} pixels for {h}x{w} image",
            img.len()
        )));
    }
    if !degrees.is_finite() {
        return Err(Error::InvalidArgument("degrees must be finite".into()));
    }

    let norm = degrees.rem_euclid(360.0);
    if h == w && (norm == 0.0 || norm == 90.0 || norm == 180.0 || norm == 270.0) {
        let n = h;
        let quarter_turns = (norm / 90.0) as usize;
        let mut out = Array2::zeros((n, n));
        for r in 0..n {
            for c in 0..n {
                // One counterclockwise quarter turn maps (r, c) <- (c, n-1-r)
                // of the source; compose it `quarter_turns` times.
                let (mut sr, mut sc) = (r, c);
                for _ in 0..quarter_turns {
                    let (nr, nc) = (sc, n - 1 - sr);
                    sr = nr;
                    sc = nc;
                }
                out[[r, c]] = img[sr * w + sc];
            }
        }
        return Ok(out);
    }

    let theta = norm.to_radians();
    let (sin, cos) = (theta.sin(), theta.cos());
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut out = Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            // Inverse-rotate output coordinates into the source frame.
            // Image rows grow downward, so a counterclockwise rotation in
            // math coordinates uses the transposed sign convention here.
            let y = r as f64 - cy;
            let x = c as f64 - cx;
            let sx = cos * x - sin * y + cx;
            let sy = sin * x + cos * y + cy;
            out[[r, c]] = bilinear(img, h, w, sy, sx);
        }
    }
    Ok(out)
}

fn bilinear(img: ArrayView1<f64>, h: usize, w: usize, y: f64, x: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let mut acc = 0.0;
    for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
        for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
            let sy = y0 + dy;
            let sx = x0 + dx;
            if sy >= 0.0 && sy < h as f64 && sx >= 0.0 && sx < w as f64 {
                acc += wy * wx * img[sy as usize * w + sx as usize];
            }
        }
    }
    acc
}

/// Shift image columns right by `dx` pixels with wraparound; lossless.
pub fn translate_cyclic(img: ArrayView1<f64>, h: usize, w: usize, dx: i64) -> Result<Array2<f64>> {
    if img.len() != h * w {
        return Err(Error::ShapeMismatch(format!(
            "{} pixels for {h}x{w} image",
            img.len()
        )));
    }
    let shift = dx.rem_euclid(w as i64) as usize;
    let mut out = Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            out[[r, c]] = img[r * w + (c + w - shift) % w];
        }
    }
    Ok(out)
}

/// Separable Gaussian blur with kernel radius ceil(3 sigma) and reflected
/// borders. Sigma 0 is the bit-exact identity; the normalized kernel plus
/// reflection preserve the image mean.
pub fn gaussian_blur(img: ArrayView1<f64>, h: usize, w: usize, sigma: f64) -> Result<Array2<f64>> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "sigma {sigma} must be finite and non-negative"
        )));
    }
    if img.len() != h * w {
        return Err(Error::ShapeMismatch(format!(
            "{} pixels for {h}x{w} image",
            img.len()
        )));
    }
    let mut out = Array2::from_shape_vec((h, w), img.to_vec()).expect("shape checked");
    if sigma == 0.0 {
        return Ok(out);
    }

    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    for i in -radius..=radius {
        kernel.push((-((i * i) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let sum: f64 = kernel.iter().sum();
    for k in kernel.iter_mut() {
        *k /= sum;
    }

    let reflect = |i: i64, n: i64| -> usize {
        let mut i = i;
        loop {
            if i < 0 {
                i = -1 - i;
            } else if i >= n {
                i = 2 * n - 1 - i;
            } else {
                return i as usize;
            }
        }
    };

    // Horizontal pass then vertical pass.
    let mut tmp = Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (ki, &kv) in kernel.iter().enumerate() {
                let sc = reflect(c as i64 + ki as i64 - radius, w as i64);
                acc += kv * out[[r, sc]];
            }
            tmp[[r, c]] = acc;
        }
    }
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (ki, &kv) in kernel.iter().enumerate() {
                let sr = reflect(r as i64 + ki as i64 - radius, h as i64);
                acc += kv * tmp[[sr, c]];
            }
            out[[r, c]] = acc;
        }
    }
    Ok(out)
}

/// Add i.i.d. Gaussian noise and clamp to [0, 1]; deterministic per seed.
pub fn pixel_noise(img: ArrayView1<f64>, sigma: f64, seed: u64) -> Result<Vec<f64>> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "sigma {sigma} must be finite and non-negative"
        )));
    }
    if sigma == 0.0 {
        return Ok(img.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(img
        .iter()
        .map(|&v| {
            let z: f64 = rng.sample(StandardNormal);
            (v + sigma * z).clamp(0.0, 1.0)
        })
        .collect())
}

/// Out-of-vocabulary token for a replaced cell: `vocab_size` plus an offset
/// in [0, vocab_size) derived deterministically from (seed, feature, row).
pub fn oov_token(seed: u64, feature: usize, row: usize, vocab_size: usize) -> usize {
    let h = seeds::mix2(seed, feature as u64, row as u64);
    vocab_size + (h % vocab_size as u64) as usize
}

/// Independently replace each categorical cell with probability `prob` by a
/// reserved out-of-vocabulary token id. Numeric columns are untouched.
pub fn randomize_categorical(
    features: &Array2<f64>,
    prob: f64,
    numeric: usize,
    vocab_sizes: &[usize],
    seed: u64,
) -> Result<Array2<f64>> {
    if !(0.0..=1.0).contains(&prob) {
        return Err(Error::InvalidArgument(format!(
            "prob {prob} outside [0, 1]"
        )));
    }
    if features.ncols() != numeric + vocab_sizes.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} columns for {} numeric + {} categorical",
            features.ncols(),
            numeric,
            vocab_sizes.len()
        )));
    }
    let mut out = features.clone();
    if prob == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for row in 0..out.nrows() {
        for (j, &vocab) in vocab_sizes.iter().enumerate() {
            let token = out[[row, numeric + j]] as usize;
            if token >= vocab {
                return Err(Error::InvalidDataset(format!(
                    "row {row}, feature {j}: token {token} outside vocabulary {vocab}"
                )));
            }
            if rng.gen::<f64>() < prob {
                out[[row, numeric + j]] = oov_token(seed, j, row, vocab) as f64;
            }
        }
    }
    Ok(out)
}

/// Apply a shift spec to a dataset, one output per level, labels preserved.
/// Per-level seeds are derived from the base seed and the level index, so
/// levels are independent of evaluation order.
pub fn apply_shift_series(
    data: &LabeledDataset,
    spec: &ShiftSpec,
    seed: u64,
) -> Result<Vec<LabeledDataset>> {
    match (data.kind(), spec.kind.wants_images()) {
        (FeatureKind::Image { .. }, true) => {}
        (FeatureKind::Tabular { .. }, false) => {}
        (kind, _) => {
            return Err(Error::InvalidArgument(format!(
                "shift {} incompatible with {kind:?}",
                spec.kind.name()
            )))
        }
    }

    let mut out = Vec::with_capacity(spec.levels.len());
    for (li, &level) in spec.levels.iter().enumerate() {
        let level_seed = seeds::mix2(seed, spec.kind as u64, li as u64);
        let shifted = apply_level(data, spec.kind, level, level_seed)?;
        out.push(shifted.with_shift(ShiftTag {
            kind: spec.kind.name().to_string(),
            intensity: li as u32,
        }));
    }
    Ok(out)
}

fn apply_level(
    data: &LabeledDataset,
    kind: ShiftKind,
    level: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    match kind {
        ShiftKind::CategoricalRandomize => {
            let FeatureKind::Tabular {
                numeric,
                vocab_sizes,
            } = data.kind()
            else {
                unreachable!("checked by caller");
            };
            let features =
                randomize_categorical(data.features(), level, *numeric, vocab_sizes, seed)?;
            data.with_features(features)
        }
        _ => {
            let FeatureKind::Image { height, width } = *data.kind() else {
                unreachable!("checked by caller");
            };
            let mut features = data.features().clone();
            for (i, row) in data.features().outer_iter().enumerate() {
                let new: Vec<f64> = match kind {
                    ShiftKind::Rotate => rotate_image(row, height, width, level)?
                        .into_raw_vec(),
                    ShiftKind::Translate => {
                        translate_cyclic(row, height, width, level.round() as i64)?
                            .into_raw_vec()
                    }
                    ShiftKind::Blur => {
                        gaussian_blur(row, height, width, level)?.into_raw_vec()
                    }
                    ShiftKind::PixelNoise => {
                        pixel_noise(row, level, seeds::mix(seed, i as u64))?
                    }
                    ShiftKind::CategoricalRandomize => unreachable!(),
                };
                for (j, v) in new.into_iter().enumerate() {
                    features[[i, j]] = v;
                }
            }
            data.with_features(features)
        }
    }
}
