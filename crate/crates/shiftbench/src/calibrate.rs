//! Post-hoc temperature scaling fitted on held-out logits.

use ndarray::{Array2, ArrayView2};

use crate::data::{softmax, PredictionSet};
use crate::error::{Error, Result};

/// Search interval for the temperature, on a log scale.
pub const T_MIN: f64 = 0.01;
pub const T_MAX: f64 = 100.0;
/// Absolute convergence tolerance in ln t.
pub const LN_T_TOL: f64 = 1e-6;

/// A fitted temperature. `validation_nll` is the mean NLL on the fitting
/// split at `t`; `at_search_bound` flags an optimum pinned to the interval
/// edge, where the reported value is a boundary minimum rather than a
/// stationary point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperature {
    pub t: f64,
    pub at_search_bound: bool,
    pub validation_nll: f64,
}

impl Temperature {
    /// A temperature outside the fitting path (e.g. for direct application).
    pub fn fixed(t: f64) -> Result<Self> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "temperature {t} must be positive and finite"
            )));
        }
        Ok(Temperature {
            t,
            at_search_bound: false,
            validation_nll: f64::NAN,
        })
    }
}

/// Mean NLL of softmax(logits / t) against the labels.
pub fn nll_at_temperature(logits: ArrayView2<f64>, labels: &[usize], t: f64) -> f64 {
    let mut sum = 0.0;
    for (row, &y) in logits.outer_iter().zip(labels) {
        // logsumexp(z/t) - z_y/t, stabilized by the row max.
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / t;
        let lse: f64 = row.iter().map(|&z| (z / t - m).exp()).sum::<f64>().ln() + m;
        sum += lse - row[y] / t;
    }
    sum / labels.len() as f64
}

/// Fit the temperature minimizing validation NLL by golden-section search
/// on ln t over [T_MIN, T_MAX].
///
/// The objective is convex in 1/t, hence unimodal in ln t, so the search is
/// exact up to tolerance. Equal interior evaluations shrink the interval
/// from both sides, which sends constant objectives (e.g. all-zero logits)
/// to the interval midpoint.
pub fn fit_temperature(logits: &Array2<f64>, labels: &[usize]) -> Result<Temperature> {
    if logits.nrows() == 0 {
        return Err(Error::InvalidArgument("no fitting examples".into()));
    }
    if logits.nrows() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} logit rows vs {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite logits".into()));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= logits.ncols()) {
        return Err(Error::InvalidArgument(format!(
            "label {y} out of range for K={}",
            logits.ncols()
        )));
    }

    let g = |u: f64| nll_at_temperature(logits.view(), labels, u.exp());
    let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let (lo, hi) = (T_MIN.ln(), T_MAX.ln());
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = g(x1);
    let mut f2 = g(x2);
    while b - a > LN_T_TOL {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = g(x1);
        } else if f2 < f1 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = g(x2);
        } else {
            // Plateau between the probes: the minimum lies in [x1, x2].
            a = x1;
            b = x2;
            x1 = b - inv_phi * (b - a);
            x2 = a + inv_phi * (b - a);
            f1 = g(x1);
            f2 = g(x2);
        }
    }
    let u = (a + b) / 2.0;
    Ok(Temperature {
        t: u.exp(),
        at_search_bound: (u - lo) <= LN_T_TOL || (hi - u) <= LN_T_TOL,
        validation_nll: g(u),
    })
}

/// Rescale a prediction set's logits by 1/t and recompute probabilities.
/// The argmax of every row is unchanged, so accuracy is invariant.
pub fn apply_temperature(set: &PredictionSet, temp: &Temperature) -> Result<PredictionSet> {
    let logits = set
        .logits()
        .ok_or_else(|| Error::MissingLogits("temperature scaling".into()))?;
    let scaled = logits.mapv(|z| z / temp.t);
    let mut probs = Array2::zeros(scaled.raw_dim());
    for (mut out, row) in probs.outer_iter_mut().zip(scaled.outer_iter()) {
        out.assign(&softmax(row));
    }
    let meta = set.meta().clone();
    let labels = set.labels().map(|l| l.to_vec());
    let scaled_set = PredictionSet::new(probs, labels, Some(scaled), meta)?;
    Ok(scaled_set.with_method(&format!("{}+temp", set.meta().method)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SetMeta, ShiftTag};
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn meta() -> SetMeta {
        SetMeta::new("m", "d", ShiftTag::none(), 0)
    }

    /// The seed-7 recovery fixture: labels sampled from softmax(z),
    /// logits stored as 5z, so the NLL-optimal temperature is near 5.
    fn recovery_fixture(n: usize, k: usize) -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut logits = Array2::zeros((n, k));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let z: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
            let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = z.iter().map(|&v| (v - zmax).exp()).collect();
            let sum: f64 = exps.iter().sum();
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut y = k - 1;
            for (j, &e) in exps.iter().enumerate() {
                acc += e / sum;
                if u < acc {
                    y = j;
                    break;
                }
            }
            labels.push(y);
            for (j, &v) in z.iter().enumerate() {
                logits[[i, j]] = 5.0 * v;
            }
        }
        (logits, labels)
    }

    /// Grid oracle: dense search over ln t at `points` points.
    fn grid_oracle(logits: &Array2<f64>, labels: &[usize], points: usize) -> (f64, f64) {
        let (lo, hi) = (T_MIN.ln(), T_MAX.ln());
        let step = (hi - lo) / (points - 1) as f64;
        let mut best_u = lo;
        let mut best = f64::INFINITY;
        for i in 0..points {
            let u = lo + step * i as f64;
            let v = nll_at_temperature(logits.view(), labels, u.exp());
            if v < best {
                best = v;
                best_u = u;
            }
        }
        (best_u, step)
    }

    #[test]
    fn recovers_planted_temperature_within_grid_tolerance() {
        let (logits, labels) = recovery_fixture(2000, 3);
        let fit = fit_temperature(&logits, &labels).unwrap();
        let (grid_u, step) = grid_oracle(&logits, &labels, 10_000);
        assert!(
            (fit.t.ln() - grid_u).abs() <= 2.0 * step,
            "golden-section {} vs grid {}",
            fit.t.ln(),
            grid_u
        );
        assert!((fit.t - 5.0).abs() < 1.0, "t = {}", fit.t);
        let at_one = nll_at_temperature(logits.view(), &labels, 1.0);
        assert!(fit.validation_nll <= at_one);
        assert!(!fit.at_search_bound);
    }

    #[test]
    fn monotone_objective_pins_to_lower_bound() {
        // One confident-correct pair per class: NLL decreases as t -> 0.
        let logits = array![[1.0, 0.0], [0.0, 1.0]];
        let labels = vec![0, 1];
        let (grid_u, _) = grid_oracle(&logits, &labels, 10_000);
        assert!((grid_u - T_MIN.ln()).abs() < 1e-3, "oracle confirms bound");
        let fit = fit_temperature(&logits, &labels).unwrap();
        assert!((fit.t - T_MIN).abs() < 1e-4);
        assert!(fit.at_search_bound);
    }

    #[test]
    fn constant_objective_returns_midpoint() {
        let logits = Array2::zeros((4, 3));
        let labels = vec![0, 1, 2, 0];
        let fit = fit_temperature(&logits, &labels).unwrap();
        // Midpoint of the log-interval: ln t = (ln 0.01 + ln 100)/2 = 0.
        assert!((fit.t - 1.0).abs() < 1e-4, "t = {}", fit.t);
        assert!((fit.validation_nll - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_finite_and_empty() {
        let logits = array![[f64::NAN, 0.0]];
        assert!(fit_temperature(&logits, &[0]).is_err());
        let empty = Array2::zeros((0, 2));
        assert!(fit_temperature(&empty, &[]).is_err());
    }

    #[test]
    fn apply_identity_temperature() {
        let set = PredictionSet::from_logits(
            array![[2.0, 1.0, 0.0], [0.5, 0.5, -1.0]],
            Some(vec![0, 1]),
            meta(),
        )
        .unwrap();
        let out = apply_temperature(&set, &Temperature::fixed(1.0).unwrap()).unwrap();
        assert_eq!(out.probs(), set.probs());
        assert_eq!(out.meta().method, "m+temp");
    }

    #[test]
    fn apply_huge_temperature_flattens() {
        let set = PredictionSet::from_logits(
            array![[3.0, -2.0, 0.5, 1.0]],
            Some(vec![0]),
            meta(),
        )
        .unwrap();
        let out = apply_temperature(&set, &Temperature::fixed(1e6).unwrap()).unwrap();
        for &p in out.probs().iter() {
            assert!((p - 0.25).abs() < 1e-5);
        }
    }

    #[test]
    fn apply_halving_matches_scalar_softmax() {
        let set =
            PredictionSet::from_logits(array![[2.0, 1.0, 0.0]], Some(vec![0]), meta()).unwrap();
        let out = apply_temperature(&set, &Temperature::fixed(2.0).unwrap()).unwrap();
        // softmax([1, 0.5, 0]) evaluated independently:
        // e = (2.718281828..., 1.648721270..., 1), sum = 5.367003099...
        let e: Vec<f64> = [1.0f64, 0.5, 0.0].iter().map(|&z| z.exp()).collect();
        let s: f64 = e.iter().sum();
        for (j, &p) in out.probs().row(0).iter().enumerate() {
            assert!((p - e[j] / s).abs() < 1e-12);
        }
        assert!((out.probs()[[0, 0]] - 0.506480).abs() < 1e-6);
        assert!((out.probs()[[0, 1]] - 0.307196).abs() < 1e-6);
        assert!((out.probs()[[0, 2]] - 0.186324).abs() < 1e-6);
    }

    #[test]
    fn apply_without_logits_fails() {
        let set = PredictionSet::new(array![[0.5, 0.5]], Some(vec![0]), None, meta()).unwrap();
        assert!(matches!(
            apply_temperature(&set, &Temperature::fixed(2.0).unwrap()),
            Err(Error::MissingLogits(_))
        ));
    }

    #[test]
    fn argmax_is_invariant_under_scaling() {
        let set = PredictionSet::from_logits(
            array![[0.3, 0.9, -0.2], [2.0, -1.0, 1.9], [-3.0, -2.5, -2.6]],
            Some(vec![1, 0, 1]),
            meta(),
        )
        .unwrap();
        for &t in &[0.01, 0.5, 3.0, 100.0] {
            let out = apply_temperature(&set, &Temperature::fixed(t).unwrap()).unwrap();
            assert_eq!(out.predicted_classes(), set.predicted_classes());
        }
    }
}
