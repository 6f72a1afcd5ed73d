//! Adversarial fair masking: a generator adds bounded masks to the inputs of
//! a frozen classifier while a label-conditioned discriminator tries to
//! recover the sensitive attribute from the masked inputs.

use ndarray::{Array2, Axis};

use crate::config::TrainConfig;
use crate::error::{arg, Error, Result};
use crate::info::{FairnessReport, PredictionRecord};
use crate::jsd::{epoch_batches, sub_seed};
use crate::nn::{
    concat_cols, cross_entropy_with_grad, init_network, mean_prediction_entropy_with_grad, one_hot,
    softmax, split_cols, take_rows, Activation, Activations, GradientSet, Network, StepSchedule,
};
use crate::synth::SampleBatch;

/// Width of each discriminator hidden layer.
pub const DISC_HIDDEN: usize = 16;

/// Two hidden layers of the input width; the output layer is linear and
/// zeroed so the initial mask is exactly zero. The bounding `tanh` is applied
/// by [`generate_mask`].
pub fn init_generator(dim: usize, seed: u64) -> Result<Network> {
    Ok(init_network(
        &[dim, dim, dim, dim],
        &[Activation::Tanh, Activation::Tanh, Activation::Identity],
        seed,
    )?
    .with_zero_output_layer())
}

/// Input is the masked features followed by one-hot `Y`; output is two
/// logits over `S`.
pub fn init_discriminator(dim: usize, seed: u64) -> Result<Network> {
    init_network(
        &[dim + 2, DISC_HIDDEN, DISC_HIDDEN, 2],
        &[Activation::Relu, Activation::Relu, Activation::Identity],
        seed,
    )
}

/// The deployed classifier `head ∘ encoder`, never updated after
/// pretraining.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenModel {
    pub encoder: Network,
    pub head: Network,
}

impl FrozenModel {
    pub fn new(encoder: Network, head: Network) -> Result<Self> {
        if encoder.output_width() != head.input_width() || head.output_width() != 2 {
            return arg("head does not fit encoder output or is not two-class");
        }
        Ok(Self { encoder, head })
    }

    pub fn checksum(&self) -> u64 {
        self.encoder.checksum() ^ self.head.checksum().rotate_left(1)
    }

    /// The composition as one network.
    pub fn as_network(&self) -> Network {
        Network {
            layers: self
                .encoder
                .layers
                .iter()
                .chain(&self.head.layers)
                .cloned()
                .collect(),
        }
    }

    pub fn logits(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.head.predict(&self.encoder.predict(x)?)
    }

    /// `P(Yhat = 1)` per row.
    pub fn scores(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?).column(1).to_vec())
    }

    /// Cross-entropy against `y` and its gradient with respect to `x`.
    fn ce_input_grad(&self, x: &Array2<f64>, y: &[usize]) -> Result<(f64, Array2<f64>)> {
        let enc_acts = self.encoder.forward(x)?;
        let head_acts = self.head.forward(enc_acts.output())?;
        let (ce, g) = cross_entropy_with_grad(head_acts.output(), y)?;
        let (_, ge) = self.head.backward_with_input(&head_acts, &g)?;
        let (_, gx) = self.encoder.backward_with_input(&enc_acts, &ge)?;
        Ok((ce, gx))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedBatch {
    pub x_tilde: Array2<f64>,
    pub mask: Array2<f64>,
}

struct MaskStep {
    acts: Activations,
    bounded: Array2<f64>,
    /// 1 where the step was not clamped.
    pass: Array2<f64>,
}

/// Everything needed to backpropagate from `x_tilde` into the generator.
pub struct MaskTrace {
    steps: Vec<MaskStep>,
    step_eta: f64,
}

fn check_unit(x: &Array2<f64>) -> Result<()> {
    if let Some((row, _)) = x
        .rows()
        .into_iter()
        .enumerate()
        .find(|(_, r)| r.iter().any(|v| !(0.0..=1.0).contains(v)))
    {
        return Err(Error::Data {
            row,
            msg: "feature outside [0, 1]".into(),
        });
    }
    Ok(())
}

/// `x_tilde = clamp(x + eta·tanh(g(x)), 0, 1)`.
pub fn generate_mask(g: &Network, x: &Array2<f64>, eta: f64) -> Result<MaskedBatch> {
    Ok(generate_mask_steps(g, x, eta, 1)?.0)
}

/// `steps` bounded additions of strength `eta / steps`, each clamped to
/// `[0, 1]`. With one step the mask is `eta·tanh(g(x))`; otherwise it is the
/// total displacement `x_tilde - x`.
pub fn generate_mask_steps(
    g: &Network,
    x: &Array2<f64>,
    eta: f64,
    steps: usize,
) -> Result<(MaskedBatch, MaskTrace)> {
    if !(eta >= 0.0) || !eta.is_finite() {
        return arg(format!("eta must be finite and non-negative, got {eta}"));
    }
    if steps == 0 {
        return arg("mask needs at least one step");
    }
    if g.input_width() != x.ncols() || g.output_width() != x.ncols() {
        return arg(format!(
            "generator width {:?} does not match {} features",
            g.dims(),
            x.ncols()
        ));
    }
    check_unit(x).map_err(|e| match e {
        Error::Data { row, msg } => Error::Argument(format!("row {row}: {msg}")),
        other => other,
    })?;
    let step_eta = eta / steps as f64;
    let mut cur = x.clone();
    let mut trace = Vec::with_capacity(steps);
    let mut first_mask = None;
    for _ in 0..steps {
        let acts = g.forward(&cur)?;
        let bounded = acts.output().mapv(f64::tanh);
        let m = &bounded * step_eta;
        let raw = &cur + &m;
        let pass = raw.mapv(|v| if (0.0..=1.0).contains(&v) { 1.0 } else { 0.0 });
        cur = raw.mapv(|v| v.clamp(0.0, 1.0));
        if first_mask.is_none() {
            first_mask = Some(m);
        }
        trace.push(MaskStep {
            acts,
            bounded,
            pass,
        });
    }
    let mask = if steps == 1 {
        first_mask.unwrap()
    } else {
        &cur - x
    };
    let bound = if steps == 1 { eta } else { eta * (1.0 + 1e-12) };
    if mask.iter().any(|m| !(m.abs() <= bound)) {
        return Err(Error::Numeric(format!("mask exceeds bound {eta}")));
    }
    Ok((
        MaskedBatch { x_tilde: cur, mask },
        MaskTrace {
            steps: trace,
            step_eta,
        },
    ))
}

/// Gradient of a loss with respect to the generator, given its gradient with
/// respect to `x_tilde`. Clamped entries pass no gradient.
pub fn mask_backward(
    g: &Network,
    trace: &MaskTrace,
    grad_x_tilde: &Array2<f64>,
) -> Result<GradientSet> {
    let mut total = GradientSet::zeros_like(g);
    let mut upstream = grad_x_tilde.clone();
    for step in trace.steps.iter().rev() {
        let through = &upstream * &step.pass;
        let out_grad = &through * &step.bounded.mapv(|t| trace.step_eta * (1.0 - t * t));
        let (grads, input_grad) = g.backward_with_input(&step.acts, &out_grad)?;
        total.add_assign(&grads);
        upstream = through + input_grad;
    }
    Ok(total)
}

fn disc_input(masked: &MaskedBatch, y: &[usize]) -> Result<Array2<f64>> {
    if y.len() != masked.x_tilde.nrows() {
        return arg("label count differs from batch rows");
    }
    if y.iter().any(|&v| v > 1) {
        return arg("labels must be binary");
    }
    concat_cols(&masked.x_tilde, &one_hot(y, 2))
}

/// Logits over `S` from the masked features concatenated with one-hot `Y`.
pub fn discriminator_predict(
    d: &Network,
    masked: &MaskedBatch,
    y: &[usize],
) -> Result<Array2<f64>> {
    if d.input_width() != masked.x_tilde.ncols() + 2 {
        return arg(format!(
            "discriminator width {} != {} features + 2",
            d.input_width(),
            masked.x_tilde.ncols()
        ));
    }
    d.predict(&disc_input(masked, y)?)
}

/// Empirical label entropy in nats.
pub fn label_entropy(labels: &[usize]) -> f64 {
    let n = labels.len() as f64;
    let ones = labels.iter().filter(|&&v| v == 1).count() as f64;
    [ones, n - ones]
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| -(c / n) * (c / n).ln())
        .sum()
}

/// Terms of the generator objective on one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorTerms {
    pub loss: f64,
    /// `H(S) - CE(d, S)`.
    pub mi_s: f64,
    /// Mean entropy of the discriminator's prediction.
    pub entropy: f64,
    /// `H(Y) - CE(f, Y)`.
    pub mi_y: f64,
}

/// `mi_s - alpha·entropy - beta·mi_y` and its gradient with respect to
/// `x_tilde`. Neither `d` nor the frozen model receives gradient.
pub fn generator_loss_input(
    d: &Network,
    frozen: &FrozenModel,
    masked: &MaskedBatch,
    s: &[usize],
    y: &[usize],
    cfg: &TrainConfig,
) -> Result<(GeneratorTerms, Array2<f64>)> {
    let n = masked.x_tilde.nrows();
    if s.len() != n || y.len() != n {
        return arg("s, y and batch rows differ");
    }
    let dim = masked.x_tilde.ncols();
    let d_acts = d.forward(&disc_input(masked, y)?)?;
    let (ce_s, g_ce_s) = cross_entropy_with_grad(d_acts.output(), s)?;
    let (entropy, g_ent) = mean_prediction_entropy_with_grad(d_acts.output())?;
    // d(loss)/d(logits) = -dCE - alpha·dH.
    let d_out = -(g_ce_s + &(g_ent * cfg.alpha));
    let (_, d_in) = d.backward_with_input(&d_acts, &d_out)?;
    let (mut grad, _) = split_cols(&d_in, dim);
    let (ce_y, g_y) = if cfg.beta != 0.0 {
        frozen.ce_input_grad(&masked.x_tilde, y)?
    } else {
        let logits = frozen.logits(&masked.x_tilde)?;
        (
            cross_entropy_with_grad(&logits, y)?.0,
            Array2::zeros(masked.x_tilde.dim()),
        )
    };
    grad.scaled_add(cfg.beta, &g_y);
    let mi_s = label_entropy(s) - ce_s;
    let mi_y = label_entropy(y) - ce_y;
    let loss = mi_s - cfg.alpha * entropy - cfg.beta * mi_y;
    if !loss.is_finite() || grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite generator loss".into()));
    }
    Ok((
        GeneratorTerms {
            loss,
            mi_s,
            entropy,
            mi_y,
        },
        grad,
    ))
}

/// Generator objective on raw features, with gradients for `g` only.
pub fn generator_loss(
    g: &Network,
    d: &Network,
    frozen: &FrozenModel,
    x: &Array2<f64>,
    s: &[usize],
    y: &[usize],
    cfg: &TrainConfig,
) -> Result<(GeneratorTerms, GradientSet)> {
    let (masked, trace) = generate_mask_steps(g, x, cfg.eta, cfg.mask_steps)?;
    let (terms, grad_x) = generator_loss_input(d, frozen, &masked, s, y, cfg)?;
    Ok((terms, mask_backward(g, &trace, &grad_x)?))
}

/// `CE(d(x_tilde, Y), S) - H(S)` with gradients for `d` only; the mask is a
/// fixed input.
pub fn discriminator_loss(
    d: &Network,
    masked: &MaskedBatch,
    s: &[usize],
    y: &[usize],
) -> Result<(f64, GradientSet)> {
    if s.len() != masked.x_tilde.nrows() {
        return arg("s and batch rows differ");
    }
    let acts = d.forward(&disc_input(masked, y)?)?;
    let (ce, g) = cross_entropy_with_grad(acts.output(), s)?;
    let loss = ce - label_entropy(s);
    if !loss.is_finite() {
        return Err(Error::Numeric("non-finite discriminator loss".into()));
    }
    Ok((loss, d.backward(&acts, &g)?))
}

/// One descent step on the discriminator loss; `g` is read-only.
#[allow(clippy::too_many_arguments)]
pub fn discriminator_step(
    d: &mut Network,
    g: &Network,
    x: &Array2<f64>,
    s: &[usize],
    y: &[usize],
    eta: f64,
    mask_steps: usize,
    lr: f64,
) -> Result<f64> {
    let (masked, _) = generate_mask_steps(g, x, eta, mask_steps)?;
    let (loss, grads) = discriminator_loss(d, &masked, s, y)?;
    d.apply_step(&grads, lr)?;
    Ok(loss)
}

/// One descent step on the generator loss; `d` and `frozen` are read-only.
#[allow(clippy::too_many_arguments)]
pub fn generator_step(
    g: &mut Network,
    d: &Network,
    frozen: &FrozenModel,
    x: &Array2<f64>,
    s: &[usize],
    y: &[usize],
    cfg: &TrainConfig,
    lr: f64,
) -> Result<GeneratorTerms> {
    let (terms, grads) = generator_loss(g, d, frozen, x, s, y, cfg)?;
    g.apply_step(&grads, lr)?;
    Ok(terms)
}

/// Held-out metrics of `frozen` on `g`-masked inputs.
pub fn evaluate_pipeline(
    g: &Network,
    frozen: &FrozenModel,
    data: &SampleBatch,
    eta: f64,
    mask_steps: usize,
) -> Result<FairnessReport> {
    let (masked, _) = generate_mask_steps(g, &data.x, eta, mask_steps)?;
    evaluate_frozen(frozen, &masked.x_tilde, data)
}

/// Metrics of `frozen` on the given features with the labels of `data`.
pub fn evaluate_frozen(
    frozen: &FrozenModel,
    x: &Array2<f64>,
    data: &SampleBatch,
) -> Result<FairnessReport> {
    let records = prediction_records(frozen, x, data)?;
    FairnessReport::evaluate(&records)
}

pub fn prediction_records(
    frozen: &FrozenModel,
    x: &Array2<f64>,
    data: &SampleBatch,
) -> Result<Vec<PredictionRecord>> {
    Ok(frozen
        .scores(x)?
        .into_iter()
        .zip(data.s.iter().zip(&data.y))
        .map(|(p, (&s, &y))| PredictionRecord::from_score(s as u8, y as u8, p))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub report: FairnessReport,
}

pub fn history_csv(history: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,acc,auc,dp,eo,adf\n");
    for h in history {
        let r = &h.report;
        out.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            h.epoch, r.acc, r.auc, r.dp, r.eo, r.adf_nats
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct AdversarialRun {
    pub g: Network,
    pub d: Network,
    pub history: Vec<EpochMetrics>,
}

impl AdversarialRun {
    pub fn final_report(&self) -> FairnessReport {
        self.history
            .last()
            .expect("history holds the epoch 0 row")
            .report
    }
}

/// Alternating minimax: per batch, one discriminator step then one generator
/// step. History row `e` holds held-out metrics after epoch `e` (row 0 is the
/// untrained generator).
pub fn adversarial_train(
    g: Network,
    d: Network,
    frozen: &FrozenModel,
    data: &SampleBatch,
    cfg: &TrainConfig,
) -> Result<AdversarialRun> {
    cfg.validate()?;
    if g.input_width() != data.dim()
        || g.output_width() != data.dim()
        || d.input_width() != data.dim() + 2
    {
        return arg("generator or discriminator width does not fit the data");
    }
    if frozen.encoder.input_width() != data.dim() {
        return arg("frozen model width does not fit the data");
    }
    let before = frozen.checksum();
    let (train, holdout) = data.split(cfg.split, cfg.seed)?;
    let (mut g, mut d) = (g, d);
    let eval = |g: &Network, epoch: usize| {
        evaluate_pipeline(g, frozen, &holdout, cfg.eta, cfg.mask_steps)
            .map(|report| EpochMetrics { epoch, report })
            .map_err(|e| match e {
                Error::Numeric(msg) => Error::Training { epoch, msg },
                other => other,
            })
    };
    let mut history = vec![eval(&g, 0)?];
    let lr_g = StepSchedule {
        lr: cfg.lr_g,
        decay_every: cfg.lr_decay_every,
    };
    let lr_d = StepSchedule {
        lr: cfg.lr_d,
        decay_every: cfg.lr_decay_every,
    };
    let shuffle_seed = sub_seed(cfg.seed, 2);
    for epoch in 1..=cfg.epochs {
        let diverged = |e: Error| match e {
            Error::Numeric(msg) => Error::Training { epoch, msg },
            other => other,
        };
        for idx in epoch_batches(train.len(), cfg.batch, shuffle_seed, epoch) {
            let x = take_rows(&train.x, &idx);
            let s: Vec<usize> = idx.iter().map(|&i| train.s[i]).collect();
            let y: Vec<usize> = idx.iter().map(|&i| train.y[i]).collect();

            discriminator_step(
                &mut d,
                &g,
                &x,
                &s,
                &y,
                cfg.eta,
                cfg.mask_steps,
                lr_d.rate(epoch - 1),
            )
            .map_err(diverged)?;
            generator_step(&mut g, &d, frozen, &x, &s, &y, cfg, lr_g.rate(epoch - 1))
                .map_err(diverged)?;
        }
        if !g.is_finite() || !d.is_finite() {
            return Err(Error::Training {
                epoch,
                msg: "non-finite parameters".into(),
            });
        }
        history.push(eval(&g, epoch)?);
    }
    if frozen.checksum() != before {
        return Err(Error::Training {
            epoch: cfg.epochs,
            msg: "frozen model changed".into(),
        });
    }
    Ok(AdversarialRun { g, d, history })
}

/// Mean absolute input gradient per feature of `sum(logit[1] - logit[0])`,
/// for locating which feature directions a network reads.
pub fn input_saliency(net: &Network, input: &Array2<f64>) -> Result<Vec<f64>> {
    if net.output_width() != 2 {
        return arg("saliency needs a two-logit network");
    }
    let acts = net.forward(input)?;
    let mut og = Array2::zeros(acts.output().dim());
    og.column_mut(0).fill(-1.0);
    og.column_mut(1).fill(1.0);
    let (_, gx) = net.backward_with_input(&acts, &og)?;
    Ok(gx
        .mapv(f64::abs)
        .mean_axis(Axis(0))
        .expect("non-empty input")
        .to_vec())
}
