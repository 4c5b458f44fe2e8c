//! Forward/backward passes, loss assembly and the Adam optimizer for the
//! from-scratch MLP family.

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Dense, GaussianDense, LayerParams, Method, ModelParams, ModelSpec};
use crate::error::{Error, Result};

/// Fixed noise for one stochastic pass: inverted-dropout multipliers per
/// layer input, and reparameterization draws per Gaussian layer. A draw with
/// all entries `None` is the deterministic pass (dropout off, weights at
/// their posterior means).
#[derive(Debug, Clone)]
pub struct NoiseDraw {
    /// Multiplier matrix (0 or 1/(1-p)) for the input of each layer.
    pub masks: Vec<Option<Array2<f64>>>,
    /// Standard-normal draws for each Gaussian layer's weights and biases.
    pub weight_eps: Vec<Option<(Array2<f64>, Array1<f64>)>>,
}

impl NoiseDraw {
    /// The deterministic pass.
    pub fn mean(n_layers: usize) -> NoiseDraw {
        NoiseDraw {
            masks: vec![None; n_layers],
            weight_eps: vec![None; n_layers],
        }
    }

    /// Sample masks and weight noise for a batch of the given size.
    pub fn sample(
        spec: &ModelSpec,
        dims: &[usize],
        batch: usize,
        rng: &mut ChaCha8Rng,
    ) -> NoiseDraw {
        let n_layers = dims.len() - 1;
        let mut masks = Vec::with_capacity(n_layers);
        let mut weight_eps = Vec::with_capacity(n_layers);
        let p = spec.dropout_rate;
        for i in 0..n_layers {
            if spec.dropout_before(i, n_layers) && p > 0.0 {
                let scale = 1.0 / (1.0 - p);
                let mut m = Array2::zeros((batch, dims[i]));
                for v in m.iter_mut() {
                    *v = if rng.gen::<f64>() < p { 0.0 } else { scale };
                }
                masks.push(Some(m));
            } else {
                masks.push(None);
            }
            if spec.gaussian_layer(i, n_layers) {
                let mut we = Array2::zeros((dims[i], dims[i + 1]));
                for v in we.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                let mut be = Array1::zeros(dims[i + 1]);
                for v in be.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                weight_eps.push(Some((we, be)));
            } else {
                weight_eps.push(None);
            }
        }
        NoiseDraw { masks, weight_eps }
    }
}

impl ModelSpec {
    /// Does dropout apply to the input of layer `i` (of `n_layers`)?
    pub fn dropout_before(&self, i: usize, n_layers: usize) -> bool {
        match self.method {
            Method::Dropout => true,
            Method::LlDropout => i == n_layers - 1,
            _ => false,
        }
    }

    /// Is layer `i` (of `n_layers`) a mean-field Gaussian layer?
    pub fn gaussian_layer(&self, i: usize, n_layers: usize) -> bool {
        match self.method {
            Method::Svi => true,
            Method::LlSvi => i == n_layers - 1,
            _ => false,
        }
    }
}

/// Realized weights for one layer under a noise draw.
fn realize(
    layer: &LayerParams,
    eps: Option<&(Array2<f64>, Array1<f64>)>,
) -> (Array2<f64>, Array1<f64>) {
    match layer {
        LayerParams::Point(d) => (d.w.clone(), d.b.clone()),
        LayerParams::Gaussian(g) => match eps {
            Some((we, be)) => {
                let w = &g.w_mean + &(g.w_log_std.mapv(f64::exp) * we);
                let b = &g.b_mean + &(g.b_log_std.mapv(f64::exp) * be);
                (w, b)
            }
            None => (g.w_mean.clone(), g.b_mean.clone()),
        },
    }
}

struct ForwardCache {
    /// Layer inputs after dropout, one per layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations, one per layer.
    preacts: Vec<Array2<f64>>,
    /// Realized weight matrices, one per layer.
    weights: Vec<Array2<f64>>,
    logits: Array2<f64>,
}

fn forward(params: &ModelParams, x: &Array2<f64>, noise: &NoiseDraw) -> ForwardCache {
    let n_layers = params.layers.len();
    let mut inputs = Vec::with_capacity(n_layers);
    let mut preacts = Vec::with_capacity(n_layers);
    let mut weights = Vec::with_capacity(n_layers);
    let mut a = x.clone();
    for (i, layer) in params.layers.iter().enumerate() {
        if let Some(mask) = &noise.masks[i] {
            a = a * mask;
        }
        let (w, b) = realize(layer, noise.weight_eps[i].as_ref());
        let z = a.dot(&w) + &b;
        inputs.push(a);
        weights.push(w);
        if i + 1 < n_layers {
            a = z.mapv(|v| v.max(0.0));
        } else {
            a = z.clone();
        }
        preacts.push(z);
    }
    let logits = preacts.last().unwrap().clone();
    ForwardCache {
        inputs,
        preacts,
        weights,
        logits,
    }
}

/// Logits of a full forward pass.
pub fn forward_logits(params: &ModelParams, x: &Array2<f64>, noise: &NoiseDraw) -> Array2<f64> {
    forward(params, x, noise).logits
}

/// Mean cross-entropy of logits against labels, via log-sum-exp.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> f64 {
    let mut sum = 0.0;
    for (row, &y) in logits.outer_iter().zip(labels) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse: f64 = row.iter().map(|&z| (z - m).exp()).sum::<f64>().ln() + m;
        sum += lse - row[y];
    }
    sum / labels.len() as f64
}

/// Closed-form KL(q || prior) summed over all Gaussian parameters, with the
/// prior N(0, prior_sigma^2).
pub fn kl_to_prior(params: &ModelParams, prior_sigma: f64) -> f64 {
    let mut total = 0.0;
    for layer in &params.layers {
        if let LayerParams::Gaussian(g) = layer {
            let pairs = g
                .w_mean
                .iter()
                .zip(g.w_log_std.iter())
                .chain(g.b_mean.iter().zip(g.b_log_std.iter()));
            for (&mu, &ls) in pairs {
                let sigma = ls.exp();
                total += prior_sigma.ln() - ls
                    + (sigma * sigma + mu * mu) / (2.0 * prior_sigma * prior_sigma)
                    - 0.5;
            }
        }
    }
    total
}

/// KL value together with its gradients, laid out like the parameters
/// (zeros for point layers).
pub fn kl_value_and_grads(params: &ModelParams, prior_sigma: f64) -> (f64, ModelParams) {
    let mut grads = params.zeros_like();
    let sp2 = prior_sigma * prior_sigma;
    for (layer, glayer) in params.layers.iter().zip(grads.layers.iter_mut()) {
        if let (LayerParams::Gaussian(g), LayerParams::Gaussian(gg)) = (layer, glayer) {
            azip_kl(&g.w_mean, &g.w_log_std, &mut gg.w_mean, &mut gg.w_log_std, sp2);
            for j in 0..g.b_mean.len() {
                gg.b_mean[j] = g.b_mean[j] / sp2;
                let s = g.b_log_std[j].exp();
                gg.b_log_std[j] = s * s / sp2 - 1.0;
            }
        }
    }
    (kl_to_prior(params, prior_sigma), grads)
}

fn azip_kl(
    mean: &Array2<f64>,
    log_std: &Array2<f64>,
    gmean: &mut Array2<f64>,
    glog_std: &mut Array2<f64>,
    sp2: f64,
) {
    ndarray::Zip::from(gmean)
        .and(mean)
        .for_each(|g, &mu| *g = mu / sp2);
    ndarray::Zip::from(glog_std)
        .and(log_std)
        .for_each(|g, &ls| {
            let s = ls.exp();
            *g = s * s / sp2 - 1.0;
        });
}

/// Loss of one training step split into its two parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLoss {
    pub data_nll: f64,
    /// KL(q || prior) / n_train; zero for point-weight methods.
    pub kl_over_n: f64,
}

impl StepLoss {
    pub fn total(&self) -> f64 {
        self.data_nll + self.kl_over_n
    }
}

/// Training loss without gradients, for a fixed noise draw.
pub fn loss_only(
    spec: &ModelSpec,
    params: &ModelParams,
    x: &Array2<f64>,
    labels: &[usize],
    noise: &NoiseDraw,
    n_train: usize,
) -> StepLoss {
    let logits = forward_logits(params, x, noise);
    let data_nll = cross_entropy(&logits, labels);
    let kl_over_n = if spec.method.is_variational() {
        kl_to_prior(params, spec.prior_sigma) / n_train as f64
    } else {
        0.0
    };
    StepLoss { data_nll, kl_over_n }
}

/// Training loss and analytic gradients, laid out like the parameters.
pub fn loss_and_grads(
    spec: &ModelSpec,
    params: &ModelParams,
    x: &Array2<f64>,
    labels: &[usize],
    noise: &NoiseDraw,
    n_train: usize,
) -> (StepLoss, ModelParams) {
    let cache = forward(params, x, noise);
    let batch = x.nrows();
    let k = cache.logits.ncols();

    let data_nll = cross_entropy(&cache.logits, labels);

    // d(mean CE)/d logits = (softmax - onehot) / batch
    let mut g = Array2::<f64>::zeros((batch, k));
    for (i, (row, &y)) in cache.logits.outer_iter().zip(labels).enumerate() {
        let sm = crate::data::softmax(row);
        for j in 0..k {
            g[[i, j]] = (sm[j] - if j == y { 1.0 } else { 0.0 }) / batch as f64;
        }
    }

    let mut grads = params.zeros_like();
    let n_layers = params.layers.len();
    for i in (0..n_layers).rev() {
        let a = &cache.inputs[i];
        let dw = a.t().dot(&g);
        let db = g.sum_axis(Axis(0));
        let mut da = g.dot(&cache.weights[i].t());
        if let Some(mask) = &noise.masks[i] {
            da = da * mask;
        }
        match (&params.layers[i], &mut grads.layers[i]) {
            (LayerParams::Point(_), LayerParams::Point(gd)) => {
                gd.w = dw;
                gd.b = db;
            }
            (LayerParams::Gaussian(gp), LayerParams::Gaussian(gg)) => {
                match noise.weight_eps[i].as_ref() {
                    Some((we, be)) => {
                        gg.w_log_std = &dw * we * &gp.w_log_std.mapv(f64::exp);
                        gg.b_log_std = &db * be * &gp.b_log_std.mapv(f64::exp);
                    }
                    None => {
                        // Weights pinned at the means: std gradient vanishes.
                    }
                }
                gg.w_mean = dw;
                gg.b_mean = db;
            }
            _ => unreachable!("grads mirror params"),
        }
        if i > 0 {
            let relu_grad = cache.preacts[i - 1].mapv(|z| if z > 0.0 { 1.0 } else { 0.0 });
            g = da * relu_grad;
        }
    }

    let kl_over_n = if spec.method.is_variational() {
        let (kl, kl_grads) = kl_value_and_grads(params, spec.prior_sigma);
        grads.add_scaled(&kl_grads, 1.0 / n_train as f64);
        kl / n_train as f64
    } else {
        0.0
    };

    (StepLoss { data_nll, kl_over_n }, grads)
}

impl ModelParams {
    pub fn zeros_like(&self) -> ModelParams {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                LayerParams::Point(d) => LayerParams::Point(Dense {
                    w: Array2::zeros(d.w.raw_dim()),
                    b: Array1::zeros(d.b.raw_dim()),
                }),
                LayerParams::Gaussian(g) => LayerParams::Gaussian(GaussianDense {
                    w_mean: Array2::zeros(g.w_mean.raw_dim()),
                    w_log_std: Array2::zeros(g.w_log_std.raw_dim()),
                    b_mean: Array1::zeros(g.b_mean.raw_dim()),
                    b_log_std: Array1::zeros(g.b_log_std.raw_dim()),
                }),
            })
            .collect();
        ModelParams { layers }
    }

    /// All parameter tensors in a fixed order, as dynamic-dim views.
    pub fn tensors(&self) -> Vec<ArrayViewD<'_, f64>> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                LayerParams::Point(d) => {
                    out.push(d.w.view().into_dyn());
                    out.push(d.b.view().into_dyn());
                }
                LayerParams::Gaussian(g) => {
                    out.push(g.w_mean.view().into_dyn());
                    out.push(g.w_log_std.view().into_dyn());
                    out.push(g.b_mean.view().into_dyn());
                    out.push(g.b_log_std.view().into_dyn());
                }
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                LayerParams::Point(d) => {
                    out.push(d.w.view_mut().into_dyn());
                    out.push(d.b.view_mut().into_dyn());
                }
                LayerParams::Gaussian(g) => {
                    out.push(g.w_mean.view_mut().into_dyn());
                    out.push(g.w_log_std.view_mut().into_dyn());
                    out.push(g.b_mean.view_mut().into_dyn());
                    out.push(g.b_log_std.view_mut().into_dyn());
                }
            }
        }
        out
    }

    fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (mut a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            ndarray::Zip::from(&mut a).and(&b).for_each(|x, &y| *x += scale * y);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8).
pub struct Adam {
    m: ModelParams,
    v: ModelParams,
    step: usize,
    lr: f64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl Adam {
    pub fn new(shape: &ModelParams, lr: f64) -> Adam {
        Adam {
            m: shape.zeros_like(),
            v: shape.zeros_like(),
            step: 0,
            lr,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        let lr = self.lr;
        for (((mut p, g), mut m), mut v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            ndarray::Zip::from(&mut p)
                .and(&g)
                .and(&mut m)
                .and(&mut v)
                .for_each(|p, &g, m, v| {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
                });
        }
    }
}

/// He-scaled random initialization; Gaussian layers start their posterior
/// stds at min(0.05, prior_sigma) so they never exceed the prior.
pub fn init_params(spec: &ModelSpec, dims: &[usize], rng: &mut ChaCha8Rng) -> ModelParams {
    let n_layers = dims.len() - 1;
    let mut layers = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let (fan_in, fan_out) = (dims[i], dims[i + 1]);
        let std = (2.0 / fan_in as f64).sqrt();
        let mut w = Array2::zeros((fan_in, fan_out));
        for v in w.iter_mut() {
            *v = std * rng.sample::<f64, _>(StandardNormal);
        }
        let b = Array1::zeros(fan_out);
        if spec.gaussian_layer(i, n_layers) {
            let sigma0 = spec.prior_sigma.min(0.05);
            layers.push(LayerParams::Gaussian(GaussianDense {
                w_mean: w,
                w_log_std: Array2::from_elem((fan_in, fan_out), sigma0.ln()),
                b_mean: b,
                b_log_std: Array1::from_elem(fan_out, sigma0.ln()),
            }));
        } else {
            layers.push(LayerParams::Point(Dense { w, b }));
        }
    }
    ModelParams { layers }
}

/// Shapes of a params object must match the (input, hidden.., classes) dims.
pub fn check_dims(params: &ModelParams, dims: &[usize]) -> Result<()> {
    if params.layers.len() + 1 != dims.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} layers for {} dims",
            params.layers.len(),
            dims.len()
        )));
    }
    for (i, layer) in params.layers.iter().enumerate() {
        let (rows, cols) = match layer {
            LayerParams::Point(d) => (d.w.nrows(), d.w.ncols()),
            LayerParams::Gaussian(g) => (g.w_mean.nrows(), g.w_mean.ncols()),
        };
        if rows != dims[i] || cols != dims[i + 1] {
            return Err(Error::ShapeMismatch(format!(
                "layer {i} is {rows}x{cols}, expected {}x{}",
                dims[i],
                dims[i + 1]
            )));
        }
    }
    Ok(())
}
