//! Small dense feed-forward networks with hand-derived reverse-mode
//! gradients, softmax losses and a plain gradient-descent optimizer.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{arg, Error, Result};
use crate::kv::KvDoc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => arg(format!("unknown activation {other:?}")),
        }
    }

    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Identity => {}
        }
    }

    /// Derivative expressed through the activation's output.
    fn grad_from_output(self, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if out > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - out * out,
            Activation::Identity => 1.0,
        }
    }
}

/// One dense layer; `weights` is `(in, out)` so a batch maps as `x · W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
}

/// Per-layer `(weight, bias)` gradients, shaped like the owning network.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

/// Every intermediate value of a forward pass. `values[0]` is the input,
/// `values[l + 1]` the post-activation output of layer `l`.
#[derive(Debug, Clone)]
pub struct Activations {
    pub values: Vec<Array2<f64>>,
}

impl Activations {
    pub fn output(&self) -> &Array2<f64> {
        self.values
            .last()
            .expect("forward pass stores at least the input")
    }
}

/// Fan-in scaled uniform initialization: weights on `±sqrt(3 / fan_in)`
/// (variance `1 / fan_in`), zero biases.
pub fn init_network(dims: &[usize], activations: &[Activation], seed: u64) -> Result<Network> {
    if dims.len() < 2 {
        return arg("a network needs at least one layer");
    }
    if activations.len() != dims.len() - 1 {
        return arg(format!(
            "{} activations for {} layers",
            activations.len(),
            dims.len() - 1
        ));
    }
    if dims.contains(&0) {
        return arg("zero-width layer");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = dims
        .windows(2)
        .zip(activations)
        .map(|(w, &activation)| {
            let bound = (3.0 / w[0] as f64).sqrt();
            let weights = Array2::from_shape_fn((w[0], w[1]), |_| rng.random_range(-bound..bound));
            Layer {
                weights,
                bias: Array1::zeros(w[1]),
                activation,
            }
        })
        .collect();
    Ok(Network { layers })
}

impl Network {
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_width()];
        d.extend(self.layers.iter().map(|l| l.bias.len()));
        d
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weights.nrows())
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.bias.len())
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Hash of the exact parameter bits; equal checksums mean bit-identical
    /// parameters for all practical purposes.
    pub fn checksum(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for l in &self.layers {
            l.activation.name().hash(&mut h);
            l.weights.shape().hash(&mut h);
            for v in l.weights.iter().chain(l.bias.iter()) {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    /// Copy with the last layer's weights and bias set to zero.
    pub fn with_zero_output_layer(mut self) -> Self {
        if let Some(l) = self.layers.last_mut() {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
        self
    }

    pub fn forward(&self, input: &Array2<f64>) -> Result<Activations> {
        if input.ncols() != self.input_width() {
            return arg(format!(
                "input width {} does not match network width {}",
                input.ncols(),
                self.input_width()
            ));
        }
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(input.clone());
        for layer in &self.layers {
            let mut z = values.last().unwrap().dot(&layer.weights);
            z += &layer.bias;
            layer.activation.apply(&mut z);
            values.push(z);
        }
        Ok(Activations { values })
    }

    /// Output only.
    pub fn predict(&self, input: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(input)?.values.pop().unwrap())
    }

    /// Reverse-mode pass for a scalar loss with `d loss / d output = output_grad`.
    pub fn backward(&self, acts: &Activations, output_grad: &Array2<f64>) -> Result<GradientSet> {
        Ok(self.backward_with_input(acts, output_grad)?.0)
    }

    /// As [`Network::backward`], also returning the gradient with respect to
    /// the network input.
    pub fn backward_with_input(
        &self,
        acts: &Activations,
        output_grad: &Array2<f64>,
    ) -> Result<(GradientSet, Array2<f64>)> {
        if acts.values.len() != self.layers.len() + 1 {
            return arg("activations do not come from this network");
        }
        if output_grad.dim() != acts.output().dim() {
            return arg(format!(
                "output gradient shape {:?} != output shape {:?}",
                output_grad.dim(),
                acts.output().dim()
            ));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = output_grad.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let out = &acts.values[l + 1];
            if layer.activation != Activation::Identity {
                delta.zip_mut_with(out, |d, &o| *d *= layer.activation.grad_from_output(o));
            }
            let input = &acts.values[l];
            let gw = input.t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            let next = delta.dot(&layer.weights.t());
            grads.push((gw, gb));
            delta = next;
        }
        grads.reverse();
        Ok((GradientSet { layers: grads }, delta))
    }

    /// Gradient-descent step: `p - lr * g`.
    pub fn step(&self, grads: &GradientSet, lr: f64) -> Result<Network> {
        let mut next = self.clone();
        next.apply_step(grads, lr)?;
        Ok(next)
    }

    pub fn apply_step(&mut self, grads: &GradientSet, lr: f64) -> Result<()> {
        if !(lr >= 0.0) || !lr.is_finite() {
            return arg(format!(
                "learning rate {lr} must be finite and non-negative"
            ));
        }
        grads.check_congruent(self)?;
        if !grads.is_finite() {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(&grads.layers) {
            layer.weights.scaled_add(-lr, gw);
            layer.bias.scaled_add(-lr, gb);
        }
        Ok(())
    }

    /// Flat view of all parameters in storage order.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    fn param_mut(&mut self, mut idx: usize) -> &mut f64 {
        for l in &mut self.layers {
            let nw = l.weights.len();
            if idx < nw {
                return l.weights.iter_mut().nth(idx).unwrap();
            }
            idx -= nw;
            let nb = l.bias.len();
            if idx < nb {
                return &mut l.bias[idx];
            }
            idx -= nb;
        }
        panic!("parameter index out of range")
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.push("layers", self.layers.len());
        doc.push(
            "dims",
            self.dims()
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        for (l, layer) in self.layers.iter().enumerate() {
            doc.push(format!("layer{l}.act"), layer.activation.name());
            for ((i, j), v) in layer.weights.indexed_iter() {
                doc.push_f64(format!("layer{l}.w.{i}.{j}"), *v);
            }
            for (j, v) in layer.bias.iter().enumerate() {
                doc.push_f64(format!("layer{l}.b.{j}"), *v);
            }
        }
        doc
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let n: usize = doc.get("layers")?;
        let dims: Vec<usize> = doc
            .raw("dims")?
            .split(',')
            .map(|d| {
                d.trim().parse().map_err(|_| Error::Parse {
                    line: doc.line_of("dims"),
                    msg: format!("bad dims entry {d:?}"),
                })
            })
            .collect::<Result<_>>()?;
        if dims.len() != n + 1 || dims.contains(&0) {
            return Err(Error::Structural(format!(
                "dims {dims:?} inconsistent with {n} layers"
            )));
        }
        let mut layers = Vec::with_capacity(n);
        for l in 0..n {
            let activation = Activation::parse(doc.raw(&format!("layer{l}.act"))?)?;
            let mut weights = Array2::zeros((dims[l], dims[l + 1]));
            for ((i, j), w) in weights.indexed_iter_mut() {
                *w = doc.get(&format!("layer{l}.w.{i}.{j}"))?;
            }
            let mut bias = Array1::zeros(dims[l + 1]);
            for (j, b) in bias.iter_mut().enumerate() {
                *b = doc.get(&format!("layer{l}.b.{j}"))?;
            }
            layers.push(Layer {
                weights,
                bias,
                activation,
            });
        }
        let net = Network { layers };
        if !net.is_finite() {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        Ok(net)
    }

    pub fn to_text(&self) -> String {
        self.to_kv().to_text()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_kv(&KvDoc::parse(text)?)
    }
}

impl GradientSet {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| {
                    (
                        Array2::zeros(l.weights.raw_dim()),
                        Array1::zeros(l.bias.len()),
                    )
                })
                .collect(),
        }
    }

    pub fn check_congruent(&self, net: &Network) -> Result<()> {
        let ok = self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|((gw, gb), l)| gw.dim() == l.weights.dim() && gb.len() == l.bias.len());
        if ok {
            Ok(())
        } else {
            arg("gradient set is not shaped like the network")
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().chain(b.iter()).all(|v| v.is_finite()))
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            *w += ow;
            *b += ob;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for (w, b) in &mut self.layers {
            *w *= k;
            *b *= k;
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.flat().into_iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Row-wise numerically stable softmax.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row /= z;
    }
    p
}

/// Row-wise `log softmax`. The max term is pulled out of the sum and the
/// rest goes through `ln_1p`, so confident rows keep a non-zero log
/// probability instead of rounding to exactly 0.
pub fn log_softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let (k, m) = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(ki, mv), (i, &v)| {
                if v > mv {
                    (i, v)
                } else {
                    (ki, mv)
                }
            });
        let rest: f64 = row
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != k)
            .map(|(_, v)| (v - m).exp())
            .sum();
        let tail = rest.ln_1p();
        for (i, v) in row.iter_mut().enumerate() {
            *v = if i == k { -tail } else { (*v - m) - tail };
        }
    }
    out
}

/// Mean softmax cross-entropy (nats) and its gradient with respect to the
/// logits.
pub fn cross_entropy_with_grad(
    logits: &Array2<f64>,
    labels: &[usize],
) -> Result<(f64, Array2<f64>)> {
    let (n, k) = logits.dim();
    if labels.len() != n {
        return arg(format!("{} labels for {n} rows", labels.len()));
    }
    if n == 0 {
        return arg("empty batch");
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return arg(format!("label {bad} out of range for {k} classes"));
    }
    let logp = log_softmax(logits);
    let mut grad = logp.mapv(f64::exp);
    let mut loss = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        loss -= logp[[i, l]];
        grad[[i, l]] -= 1.0;
    }
    grad /= n as f64;
    Ok((loss / n as f64, grad))
}

/// Mean over rows of the entropy of each row's softmax, with its gradient.
/// For one row, `dH/dz_j = -p_j (ln p_j + H)`.
pub fn mean_prediction_entropy_with_grad(logits: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    let n = logits.nrows();
    if n == 0 {
        return arg("empty batch");
    }
    let logp = log_softmax(logits);
    let p = logp.mapv(f64::exp);
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut total = 0.0;
    for ((lp_row, p_row), mut g_row) in logp.rows().into_iter().zip(p.rows()).zip(grad.rows_mut()) {
        let h: f64 = -lp_row
            .iter()
            .zip(p_row.iter())
            .map(|(l, p)| p * l)
            .sum::<f64>();
        total += h;
        for ((g, &pj), &lpj) in g_row.iter_mut().zip(p_row.iter()).zip(lp_row.iter()) {
            *g = -pj * (lpj + h) / n as f64;
        }
    }
    Ok((total / n as f64, grad))
}

/// Denominator floor used by [`finite_diff_check`].
pub const REL_ERR_FLOOR: f64 = 1e-8;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compare the analytic gradient returned by `loss_fn` at `net` against
/// central differences of its loss value over every parameter. Returns the
/// maximum relative error.
pub fn finite_diff_check<F>(net: &Network, loss_fn: F, eps: f64) -> Result<f64>
where
    F: Fn(&Network) -> Result<(f64, GradientSet)>,
{
    if !(eps > 0.0) {
        return arg("finite-difference step must be positive");
    }
    let (_, analytic) = loss_fn(net)?;
    analytic.check_congruent(net)?;
    let analytic = analytic.flat();
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    for (i, &a) in analytic.iter().enumerate() {
        let orig = *probe.param_mut(i);
        *probe.param_mut(i) = orig + eps;
        let up = loss_fn(&probe)?.0;
        *probe.param_mut(i) = orig - eps;
        let down = loss_fn(&probe)?.0;
        *probe.param_mut(i) = orig;
        worst = worst.max(relative_error(a, (up - down) / (2.0 * eps)));
    }
    Ok(worst)
}

/// Central-difference check of a gradient with respect to an input matrix.
pub fn finite_diff_input<F>(
    input: &Array2<f64>,
    analytic: &Array2<f64>,
    loss: F,
    eps: f64,
) -> Result<f64>
where
    F: Fn(&Array2<f64>) -> Result<f64>,
{
    if analytic.dim() != input.dim() {
        return arg("gradient shape differs from input shape");
    }
    let mut worst: f64 = 0.0;
    let mut probe = input.clone();
    for (idx, &a) in analytic.indexed_iter() {
        let orig = probe[idx];
        probe[idx] = orig + eps;
        let up = loss(&probe)?;
        probe[idx] = orig - eps;
        let down = loss(&probe)?;
        probe[idx] = orig;
        worst = worst.max(relative_error(a, (up - down) / (2.0 * eps)));
    }
    Ok(worst)
}

/// Plain gradient descent with optional step decay: the rate halves every
/// `decay_every` epochs (0 disables decay).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub lr: f64,
    pub decay_every: usize,
}

impl StepSchedule {
    pub fn rate(&self, epoch: usize) -> f64 {
        match epoch.checked_div(self.decay_every) {
            None => self.lr,
            Some(halvings) => self.lr * 0.5f64.powi(halvings as i32),
        }
    }
}

/// Horizontal concatenation of two batches with equal row counts.
pub fn concat_cols(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    if a.nrows() != b.nrows() {
        return arg(format!("row counts differ: {} vs {}", a.nrows(), b.nrows()));
    }
    Ok(ndarray::concatenate(Axis(1), &[a.view(), b.view()]).expect("row counts checked"))
}

/// Split a gradient on concatenated columns back into its two parts.
pub fn split_cols(g: &Array2<f64>, left: usize) -> (Array2<f64>, Array2<f64>) {
    (
        g.slice(s![.., ..left]).to_owned(),
        g.slice(s![.., left..]).to_owned(),
    )
}

/// One-hot encoding of class indices.
pub fn one_hot(labels: &[usize], classes: usize) -> Array2<f64> {
    let mut out = Array2::zeros((labels.len(), classes));
    for (i, &l) in labels.iter().enumerate() {
        out[[i, l]] = 1.0;
    }
    out
}

/// Gather rows by index.
pub fn take_rows(m: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    m.select(Axis(0), idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn random_input(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn init_is_seeded() {
        let a = init_network(&[3, 4, 2], &[Activation::Tanh, Activation::Identity], 5).unwrap();
        let b = init_network(&[3, 4, 2], &[Activation::Tanh, Activation::Identity], 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.checksum(), b.checksum());
        let c = init_network(&[3, 4, 2], &[Activation::Tanh, Activation::Identity], 6).unwrap();
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn init_errors() {
        assert!(init_network(&[3], &[], 0).is_err());
        assert!(init_network(&[3, 0, 1], &[Activation::Relu, Activation::Relu], 0).is_err());
        assert!(init_network(&[3, 2], &[], 0).is_err());
    }

    #[test]
    fn init_variance_matches_fan_in() {
        let fan_in = 25;
        let net = init_network(&[fan_in, 400], &[Activation::Identity], 3).unwrap();
        let w = &net.layers[0].weights;
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // 10^4 draws of U(-a, a): relative standard error of the variance ~ 0.9%.
        assert!((var * fan_in as f64 - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn single_affine_layer() {
        let mut net = init_network(&[2, 1], &[Activation::Identity], 0).unwrap();
        net.layers[0].weights = array![[2.0], [-1.0]];
        net.layers[0].bias = array![0.5];
        let out = net.predict(&array![[1.0, 3.0]]).unwrap();
        assert_eq!(out, array![[-0.5]]);
    }

    #[test]
    fn identity_and_bias_only() {
        let mut net = init_network(&[2, 2], &[Activation::Identity], 0).unwrap();
        net.layers[0].weights = Array2::eye(2);
        net.layers[0].bias.fill(0.0);
        let x = array![[0.3, -0.7], [1.5, 2.0]];
        assert_eq!(net.predict(&x).unwrap(), x);
        net.layers[0].weights.fill(0.0);
        net.layers[0].bias = array![4.0, -1.0];
        let out = net.predict(&x).unwrap();
        assert!(out.rows().into_iter().all(|r| r == array![4.0, -1.0]));
    }

    #[test]
    fn hand_computed_two_layer_forward() {
        let net = Network {
            layers: vec![
                Layer {
                    weights: array![[1.0, -1.0], [2.0, 0.5]],
                    bias: array![0.0, 0.25],
                    activation: Activation::Relu,
                },
                Layer {
                    weights: array![[1.0], [-2.0]],
                    bias: array![0.1],
                    activation: Activation::Identity,
                },
            ],
        };
        // x = [1, 1]: z1 = [3, -0.25] -> relu [3, 0]; out = 3 - 0 + 0.1.
        let acts = net.forward(&array![[1.0, 1.0]]).unwrap();
        assert_eq!(acts.values[1], array![[3.0, 0.0]]);
        assert!((acts.output()[[0, 0]] - 3.1).abs() < 1e-15);
        assert!(net.forward(&array![[1.0, 1.0, 1.0]]).is_err());
    }

    #[test]
    fn backward_linear_closed_form() {
        let net = init_network(&[3, 2], &[Activation::Identity], 1).unwrap();
        let x = random_input(4, 3, 2);
        let g_out = random_input(4, 2, 3);
        let acts = net.forward(&x).unwrap();
        let grads = net.backward(&acts, &g_out).unwrap();
        let expected = x.t().dot(&g_out);
        assert!((&grads.layers[0].0 - &expected)
            .iter()
            .all(|v| v.abs() < 1e-14));
        let zero = net.backward(&acts, &Array2::zeros((4, 2))).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
        assert!(net.backward(&acts, &Array2::zeros((4, 3))).is_err());
    }

    fn sum_sq_loss(
        net: &Network,
        x: &Array2<f64>,
        target: &Array2<f64>,
    ) -> Result<(f64, GradientSet)> {
        let acts = net.forward(x)?;
        let diff = acts.output() - target;
        let loss = 0.5 * diff.iter().map(|v| v * v).sum::<f64>();
        Ok((loss, net.backward(&acts, &diff)?))
    }

    #[test]
    fn backward_matches_finite_differences_three_layers() {
        for seed in 0..3 {
            let net = init_network(
                &[4, 6, 5, 3],
                &[Activation::Tanh, Activation::Relu, Activation::Identity],
                seed,
            )
            .unwrap();
            let x = random_input(7, 4, 100 + seed);
            let t = random_input(7, 3, 200 + seed);
            let err = finite_diff_check(&net, |n| sum_sq_loss(n, &x, &t), 1e-5).unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn linear_least_squares_is_exact() {
        let net = init_network(&[3, 2], &[Activation::Identity], 9).unwrap();
        let x = random_input(5, 3, 10);
        let t = random_input(5, 2, 11);
        let err = finite_diff_check(&net, |n| sum_sq_loss(n, &x, &t), 1e-4).unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn eps_sweep_is_u_shaped() {
        // Truncation error dominates at large steps, round-off at tiny ones.
        let net = init_network(&[3, 8, 2], &[Activation::Tanh, Activation::Tanh], 4).unwrap();
        let x = random_input(6, 3, 12);
        let t = random_input(6, 2, 13);
        let errs: Vec<f64> = [1e-1, 1e-5, 1e-11]
            .iter()
            .map(|&e| finite_diff_check(&net, |n| sum_sq_loss(n, &x, &t), e).unwrap())
            .collect();
        assert!(errs[1] < errs[0] && errs[1] < errs[2], "{errs:?}");
        let mid: Vec<f64> = [1e-4, 1e-5, 1e-6]
            .iter()
            .map(|&e| finite_diff_check(&net, |n| sum_sq_loss(n, &x, &t), e).unwrap())
            .collect();
        assert!(mid.iter().all(|&e| e < 1e-4), "{mid:?}");
    }

    #[test]
    fn step_semantics() {
        let net = init_network(&[2, 2], &[Activation::Identity], 0).unwrap();
        let zero = GradientSet::zeros_like(&net);
        assert_eq!(net.step(&zero, 0.1).unwrap(), net);
        let mut g = GradientSet::zeros_like(&net);
        g.layers[0].0[[0, 0]] = 0.75;
        let p = net.layers[0].weights[[0, 0]];
        let next = net.step(&g, 1.0).unwrap();
        assert_eq!(next.layers[0].weights[[0, 0]], p - 0.75);
        // lr = 0 is the identity even with non-zero gradients.
        assert_eq!(net.step(&g, 0.0).unwrap(), net);
        g.layers[0].1[1] = f64::NAN;
        assert!(matches!(net.step(&g, 0.1), Err(Error::Numeric(_))));
    }

    #[test]
    fn descent_on_convex_quadratic_is_monotone() {
        let net0 = init_network(&[3, 1], &[Activation::Identity], 2).unwrap();
        let x = random_input(20, 3, 5);
        let t = random_input(20, 1, 6);
        let mut net = net0;
        let mut last = f64::INFINITY;
        for _ in 0..100 {
            let (loss, g) = sum_sq_loss(&net, &x, &t).unwrap();
            assert!(loss <= last);
            last = loss;
            net.apply_step(&g, 0.01).unwrap();
        }
    }

    #[test]
    fn cross_entropy_cases() {
        let (l, _) = cross_entropy_with_grad(&array![[0.0, 0.0], [3.0, 3.0]], &[0, 1]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let (l, _) = cross_entropy_with_grad(&array![[1.0, 0.0]], &[0]).unwrap();
        // ln(1 + e^-1)
        assert!((l - 0.313_261_687_518_222_8).abs() < 1e-15);
        let (l, _) = cross_entropy_with_grad(&array![[40.0, -40.0]], &[0]).unwrap();
        assert!(l > 0.0);
        assert!(cross_entropy_with_grad(&array![[1.0, 0.0]], &[2]).is_err());
    }

    #[test]
    fn entropy_cases() {
        let (h, _) = mean_prediction_entropy_with_grad(&array![[0.5, 0.5], [-2.0, -2.0]]).unwrap();
        assert!((h - std::f64::consts::LN_2).abs() < 1e-15);
        let (h, _) = mean_prediction_entropy_with_grad(&array![[60.0, -60.0]]).unwrap();
        assert!(h < 1e-40);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        for seed in 0..3 {
            let z = random_input(5, 3, 40 + seed) * 2.0;
            let labels: Vec<usize> = (0..5).map(|i| (i + seed as usize) % 3).collect();
            let (_, g) = cross_entropy_with_grad(&z, &labels).unwrap();
            let e = finite_diff_input(&z, &g, |z| Ok(cross_entropy_with_grad(z, &labels)?.0), 1e-5)
                .unwrap();
            assert!(e < 1e-4, "ce {e}");
            let (_, g) = mean_prediction_entropy_with_grad(&z).unwrap();
            let e = finite_diff_input(
                &z,
                &g,
                |z| Ok(mean_prediction_entropy_with_grad(z)?.0),
                1e-5,
            )
            .unwrap();
            assert!(e < 1e-4, "entropy {e}");
        }
    }

    #[test]
    fn fitted_toy_reaches_label_entropy() {
        // A bias-only classifier trained to optimum predicts the label
        // frequencies, where cross-entropy equals the label entropy.
        let labels: Vec<usize> = (0..100).map(|i| usize::from(i % 4 == 0)).collect();
        let x = Array2::zeros((100, 1));
        let mut net = init_network(&[1, 2], &[Activation::Identity], 0).unwrap();
        for _ in 0..5000 {
            let acts = net.forward(&x).unwrap();
            let (_, g) = cross_entropy_with_grad(acts.output(), &labels).unwrap();
            let grads = net.backward(&acts, &g).unwrap();
            net.apply_step(&grads, 1.0).unwrap();
        }
        let (l, _) = cross_entropy_with_grad(&net.predict(&x).unwrap(), &labels).unwrap();
        let h = -(0.25f64 * 0.25f64.ln() + 0.75 * 0.75f64.ln());
        assert!((l - h).abs() < 1e-9, "{l} vs {h}");
    }

    #[test]
    fn text_round_trip() {
        let net = init_network(&[3, 4, 2], &[Activation::Relu, Activation::Tanh], 17).unwrap();
        let text = net.to_text();
        assert!(text.contains("layer0.w.2.3="));
        assert_eq!(Network::from_text(&text).unwrap(), net);
    }

    #[test]
    fn schedule_halves() {
        let s = StepSchedule {
            lr: 0.8,
            decay_every: 10,
        };
        assert_eq!(s.rate(0), 0.8);
        assert_eq!(s.rate(9), 0.8);
        assert_eq!(s.rate(10), 0.4);
        assert_eq!(s.rate(25), 0.2);
        assert_eq!(
            StepSchedule {
                lr: 0.8,
                decay_every: 0
            }
            .rate(100),
            0.8
        );
    }
}
