//! Jensen-Shannon mutual-information lower bound, encoder pretraining and
//! downstream head fine-tuning.

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::error::{arg, Error, Result};
use crate::info::{accuracy, auc, PredictionRecord};
use crate::nn::{
    concat_cols, cross_entropy_with_grad, init_network, softmax, split_cols, take_rows, Activation,
    GradientSet, Network, StepSchedule,
};
use crate::synth::{permutation, SampleBatch};

/// Width of each critic hidden layer.
pub const CRITIC_HIDDEN: usize = 32;

/// Shuffle seed used whenever the estimate is reported on held-out data, so
/// successive reports differ only through the networks.
pub const EVAL_SHUFFLE_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub rows: Array2<f64>,
}

impl EmbeddingBatch {
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite embedding".into()));
        }
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.rows.ncols()
    }
}

/// Sattolo's algorithm: a uniformly random cyclic permutation, which has no
/// fixed points for `n ≥ 2`.
pub fn derangement(n: usize, seed: u64) -> Result<Vec<usize>> {
    if n < 2 {
        return arg(format!("need at least 2 rows to shuffle, got {n}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..i);
        p.swap(i, j);
    }
    Ok(p)
}

/// Row `i` of the result is row `perm[i]` of `e`.
pub fn shuffle_negatives(e: &EmbeddingBatch, seed: u64) -> Result<EmbeddingBatch> {
    let perm = derangement(e.len(), seed)?;
    Ok(EmbeddingBatch {
        rows: take_rows(&e.rows, &perm),
    })
}

pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Gradients of the estimate (ascent direction) with respect to the critic
/// and to both embedding batches.
#[derive(Debug, Clone)]
pub struct JsdGrads {
    pub critic: GradientSet,
    pub e_pos: Array2<f64>,
    pub e_neg: Array2<f64>,
}

/// `mean(-softplus(-T(x, e_pos))) - mean(softplus(T(x, e_neg)))`.
pub fn jsd_mi_estimate(
    critic: &Network,
    x: &Array2<f64>,
    e_pos: &EmbeddingBatch,
    e_neg: &EmbeddingBatch,
) -> Result<(f64, JsdGrads)> {
    let width = x.ncols() + e_pos.width();
    if critic.input_width() != width || e_neg.width() != e_pos.width() {
        return arg(format!(
            "critic expects width {}, inputs give {} + {} / {}",
            critic.input_width(),
            x.ncols(),
            e_pos.width(),
            e_neg.width()
        ));
    }
    if critic.output_width() != 1 {
        return arg("critic must produce one score per row");
    }
    let n = x.nrows();
    if n == 0 || e_pos.len() != n || e_neg.len() != n {
        return arg("x, e_pos and e_neg need the same non-zero row count");
    }
    let acts_pos = critic.forward(&concat_cols(x, &e_pos.rows)?)?;
    let acts_neg = critic.forward(&concat_cols(x, &e_neg.rows)?)?;
    let t_pos = acts_pos.output();
    let t_neg = acts_neg.output();
    let nf = n as f64;
    let value = t_pos.iter().map(|&t| -softplus(-t)).sum::<f64>() / nf
        - t_neg.iter().map(|&t| softplus(t)).sum::<f64>() / nf;
    if !value.is_finite() {
        return Err(Error::Numeric("non-finite estimate".into()));
    }
    let g_pos = t_pos.mapv(|t| sigmoid(-t) / nf);
    let g_neg = t_neg.mapv(|t| -sigmoid(t) / nf);
    let (mut critic_grad, in_pos) = critic.backward_with_input(&acts_pos, &g_pos)?;
    let (neg_grad, in_neg) = critic.backward_with_input(&acts_neg, &g_neg)?;
    critic_grad.add_assign(&neg_grad);
    let (_, e_pos_grad) = split_cols(&in_pos, x.ncols());
    let (_, e_neg_grad) = split_cols(&in_neg, x.ncols());
    Ok((
        value,
        JsdGrads {
            critic: critic_grad,
            e_pos: e_pos_grad,
            e_neg: e_neg_grad,
        },
    ))
}

/// Estimate with negatives drawn by a seeded derangement of `e`.
pub fn jsd_with_shuffle(
    critic: &Network,
    x: &Array2<f64>,
    e: &Array2<f64>,
    seed: u64,
) -> Result<f64> {
    let pos = EmbeddingBatch::new(e.clone())?;
    let neg = shuffle_negatives(&pos, seed)?;
    Ok(jsd_mi_estimate(critic, x, &pos, &neg)?.0)
}

pub fn init_critic(x_dim: usize, embed_dim: usize, seed: u64) -> Result<Network> {
    init_network(
        &[x_dim + embed_dim, CRITIC_HIDDEN, CRITIC_HIDDEN, 1],
        &[Activation::Relu, Activation::Relu, Activation::Identity],
        seed,
    )
}

pub fn init_encoder(x_dim: usize, embed_dim: usize, seed: u64) -> Result<Network> {
    let hidden = 2 * x_dim.max(embed_dim);
    init_network(
        &[x_dim, hidden, embed_dim],
        &[Activation::Relu, Activation::Tanh],
        seed,
    )
}

/// Linear two-class head on the embedding.
pub fn init_head(embed_dim: usize, seed: u64) -> Result<Network> {
    init_network(&[embed_dim, 2], &[Activation::Identity], seed)
}

/// Sub-seeds for the independent random streams of one run.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.random()
}

/// Seeded row order for one epoch, cut into batches.
pub fn epoch_batches(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let perm = permutation(n, sub_seed(seed, 1000 + epoch as u64));
    perm.chunks(batch).map(<[usize]>::to_vec).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainRecord {
    pub epoch: usize,
    /// Held-out estimate.
    pub jsd: f64,
    /// Mean training cross-entropy of the head.
    pub task_loss: f64,
    pub holdout_acc: f64,
}

#[derive(Debug, Clone)]
pub struct Pretrained {
    pub encoder: Network,
    pub critic: Network,
    pub head: Network,
    pub history: Vec<PretrainRecord>,
}

pub fn pretrain_history_csv(history: &[PretrainRecord]) -> String {
    let mut out = String::from("epoch,jsd,task_loss,holdout_acc\n");
    for r in history {
        out.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e}\n",
            r.epoch, r.jsd, r.task_loss, r.holdout_acc
        ));
    }
    out
}

fn head_logits(encoder: &Network, head: &Network, x: &Array2<f64>) -> Result<Array2<f64>> {
    head.predict(&encoder.predict(x)?)
}

fn pretrain_record(
    epoch: usize,
    encoder: &Network,
    critic: &Network,
    head: &Network,
    train: &SampleBatch,
    holdout: &SampleBatch,
) -> Result<PretrainRecord> {
    let e_hold = encoder.predict(&holdout.x)?;
    let jsd = jsd_with_shuffle(critic, &holdout.x, &e_hold, EVAL_SHUFFLE_SEED)?;
    let (task_loss, _) = cross_entropy_with_grad(&head_logits(encoder, head, &train.x)?, &train.y)?;
    let probs = softmax(&head_logits(encoder, head, &holdout.x)?);
    let hits = probs
        .axis_iter(Axis(0))
        .zip(&holdout.y)
        .filter(|(p, &y)| usize::from(p[1] >= p[0]) == y)
        .count();
    let holdout_acc = hits as f64 / holdout.len() as f64;
    let rec = PretrainRecord {
        epoch,
        jsd,
        task_loss,
        holdout_acc,
    };
    if !(jsd.is_finite() && task_loss.is_finite()) {
        return Err(Error::Training {
            epoch,
            msg: "non-finite pretraining loss".into(),
        });
    }
    Ok(rec)
}

/// Alternating ascent: per batch, one critic step on the estimate, then one
/// joint encoder and head step on `-estimate + cross-entropy`. Uses
/// `cfg.pretrain_epochs`, `cfg.lr_pre`, `cfg.batch`, `cfg.split`, `cfg.seed`.
pub fn pretrain_encoder(
    encoder: Network,
    critic: Network,
    head: Network,
    data: &SampleBatch,
    cfg: &TrainConfig,
) -> Result<Pretrained> {
    cfg.validate()?;
    if data.is_empty() {
        return arg("no pretraining data");
    }
    if encoder.input_width() != data.dim()
        || critic.input_width() != data.dim() + encoder.output_width()
        || head.input_width() != encoder.output_width()
        || head.output_width() != 2
    {
        return arg("encoder, critic and head widths do not fit the data");
    }
    let (train, holdout) = data.split(cfg.split, cfg.seed)?;
    if holdout.len() < 2 {
        return arg("held-out split needs at least 2 rows");
    }
    let (mut encoder, mut critic, mut head) = (encoder, critic, head);
    let mut history = vec![pretrain_record(
        0, &encoder, &critic, &head, &train, &holdout,
    )?];
    let schedule = StepSchedule {
        lr: cfg.lr_pre,
        decay_every: cfg.lr_decay_every,
    };
    for epoch in 1..=cfg.pretrain_epochs {
        let lr = schedule.rate(epoch - 1);
        let diverged = |e: Error| match e {
            Error::Numeric(msg) => Error::Training { epoch, msg },
            other => other,
        };
        for (b, idx) in epoch_batches(train.len(), cfg.batch, cfg.seed, epoch)
            .into_iter()
            .enumerate()
        {
            if idx.len() < 2 {
                continue;
            }
            let x = take_rows(&train.x, &idx);
            let y: Vec<usize> = idx.iter().map(|&i| train.y[i]).collect();
            let perm = derangement(
                idx.len(),
                sub_seed(cfg.seed, ((epoch as u64) << 32) | b as u64),
            )?;

            let e = encoder.predict(&x)?;
            let pos = EmbeddingBatch::new(e).map_err(diverged)?;
            let neg = EmbeddingBatch {
                rows: take_rows(&pos.rows, &perm),
            };
            let (_, g) = jsd_mi_estimate(&critic, &x, &pos, &neg).map_err(diverged)?;
            ascend(&mut critic, &g.critic, lr).map_err(diverged)?;

            let enc_acts = encoder.forward(&x)?;
            let pos = EmbeddingBatch::new(enc_acts.output().clone()).map_err(diverged)?;
            let neg = EmbeddingBatch {
                rows: take_rows(&pos.rows, &perm),
            };
            let (_, g) = jsd_mi_estimate(&critic, &x, &pos, &neg).map_err(diverged)?;
            let head_acts = head.forward(&pos.rows)?;
            let (ce, ce_grad) = cross_entropy_with_grad(head_acts.output(), &y)?;
            if !ce.is_finite() {
                return Err(Error::Training {
                    epoch,
                    msg: "non-finite task loss".into(),
                });
            }
            let (head_grad, e_from_ce) = head.backward_with_input(&head_acts, &ce_grad)?;
            // Negatives are rows of the same embedding, so their gradient
            // scatters back through the permutation.
            let mut e_grad = e_from_ce - &g.e_pos;
            for (i, &src) in perm.iter().enumerate() {
                let row = g.e_neg.row(i).to_owned();
                let mut target = e_grad.row_mut(src);
                target -= &row;
            }
            let enc_grad = encoder.backward(&enc_acts, &e_grad)?;
            encoder.apply_step(&enc_grad, lr).map_err(diverged)?;
            head.apply_step(&head_grad, lr).map_err(diverged)?;
        }
        history.push(pretrain_record(
            epoch, &encoder, &critic, &head, &train, &holdout,
        )?);
    }
    Ok(Pretrained {
        encoder,
        critic,
        head,
        history,
    })
}

/// Gradient ascent step.
fn ascend(net: &mut Network, grads: &GradientSet, lr: f64) -> Result<()> {
    let mut neg = grads.clone();
    neg.scale(-1.0);
    net.apply_step(&neg, lr)
}

/// Trains only a critic on fixed `(x, e)` pairs and returns the estimate on
/// the held-out pairs before and after training.
pub fn fit_critic(
    critic: Network,
    x: &Array2<f64>,
    e: &Array2<f64>,
    cfg: &TrainConfig,
) -> Result<(Network, f64, f64)> {
    cfg.validate()?;
    let n = x.nrows();
    if e.nrows() != n {
        return arg("x and e row counts differ");
    }
    let perm = permutation(n, cfg.seed);
    let n_train = ((n as f64) * cfg.split).round() as usize;
    if n_train < 2 || n - n_train < 2 {
        return arg("too few rows for a train/held-out split");
    }
    let (tr, te) = perm.split_at(n_train);
    let (x_tr, e_tr) = (take_rows(x, tr), take_rows(e, tr));
    let (x_te, e_te) = (take_rows(x, te), take_rows(e, te));
    let before = jsd_with_shuffle(&critic, &x_te, &e_te, EVAL_SHUFFLE_SEED)?;
    let mut critic = critic;
    let schedule = StepSchedule {
        lr: cfg.lr_pre,
        decay_every: cfg.lr_decay_every,
    };
    for epoch in 1..=cfg.pretrain_epochs {
        for (b, idx) in epoch_batches(n_train, cfg.batch, cfg.seed, epoch)
            .into_iter()
            .enumerate()
        {
            if idx.len() < 2 {
                continue;
            }
            let xb = take_rows(&x_tr, &idx);
            let pos = EmbeddingBatch::new(take_rows(&e_tr, &idx))?;
            let neg =
                shuffle_negatives(&pos, sub_seed(cfg.seed, ((epoch as u64) << 32) | b as u64))?;
            let (_, g) =
                jsd_mi_estimate(&critic, &xb, &pos, &neg).map_err(|err| Error::Training {
                    epoch,
                    msg: err.to_string(),
                })?;
            ascend(&mut critic, &g.critic, schedule.rate(epoch - 1)).map_err(|err| {
                Error::Training {
                    epoch,
                    msg: err.to_string(),
                }
            })?;
        }
    }
    let after = jsd_with_shuffle(&critic, &x_te, &e_te, EVAL_SHUFFLE_SEED)?;
    Ok((critic, before, after))
}

#[derive(Debug, Clone)]
pub struct FineTuned {
    pub head: Network,
    pub acc: f64,
    pub auc: f64,
}

/// Score-based held-out metrics of `head ∘ encoder`.
pub fn head_metrics(encoder: &Network, head: &Network, data: &SampleBatch) -> Result<(f64, f64)> {
    let probs = softmax(&head_logits(encoder, head, &data.x)?);
    let records: Vec<PredictionRecord> = probs
        .axis_iter(Axis(0))
        .zip(data.y.iter().zip(&data.s))
        .map(|(p, (&y, &s))| PredictionRecord::from_score(s as u8, y as u8, p[1]))
        .collect();
    Ok((accuracy(&records)?, auc(&records)?))
}

/// Trains a fresh linear head on frozen encoder outputs for the labels in
/// `task.y`. Uses `cfg.pretrain_epochs`, `cfg.lr_pre`, `cfg.batch`,
/// `cfg.split`, `cfg.seed`.
pub fn fine_tune_head(
    encoder: &Network,
    task: &SampleBatch,
    cfg: &TrainConfig,
) -> Result<FineTuned> {
    cfg.validate()?;
    if task.y.iter().all(|&y| y == task.y[0]) {
        return Err(Error::Evaluation(
            "task labels contain a single class".into(),
        ));
    }
    let (train, holdout) = task.split(cfg.split, cfg.seed)?;
    for (name, part) in [("training", &train), ("held-out", &holdout)] {
        if part.y.iter().all(|&y| y == part.y[0]) {
            return Err(Error::Evaluation(format!(
                "{name} split contains a single class"
            )));
        }
    }
    let e_train = encoder.predict(&train.x)?;
    let mut head = init_head(encoder.output_width(), sub_seed(cfg.seed, 7))?;
    let schedule = StepSchedule {
        lr: cfg.lr_pre,
        decay_every: cfg.lr_decay_every,
    };
    for epoch in 1..=cfg.pretrain_epochs {
        for idx in epoch_batches(train.len(), cfg.batch, cfg.seed, epoch) {
            let eb = take_rows(&e_train, &idx);
            let y: Vec<usize> = idx.iter().map(|&i| train.y[i]).collect();
            let acts = head.forward(&eb)?;
            let (_, g) = cross_entropy_with_grad(acts.output(), &y)?;
            let grads = head.backward(&acts, &g)?;
            head.apply_step(&grads, schedule.rate(epoch - 1))
                .map_err(|err| Error::Training {
                    epoch,
                    msg: err.to_string(),
                })?;
        }
    }
    let (acc, auc) = head_metrics(encoder, &head, &holdout)?;
    Ok(FineTuned { head, acc, auc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::finite_diff_check;
    use crate::synth::{generate_dataset, SynthSpec};
    use rand_distr::{Distribution, StandardNormal};

    fn normal_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(&mut rng))
    }

    /// `e = rho·x[:, ..k] + sqrt(1 - rho²)·noise`.
    fn coupled_pair(n: usize, k: usize, rho: f64, seed: u64) -> (Array2<f64>, Array2<f64>) {
        let x = normal_matrix(n, k, seed);
        let noise = normal_matrix(n, k, seed + 1);
        let e = &x * rho + &noise * (1.0 - rho * rho).sqrt();
        (x, e)
    }

    fn toy_cfg() -> TrainConfig {
        TrainConfig {
            pretrain_epochs: 30,
            lr_pre: 0.1,
            batch: 128,
            split: 0.8,
            seed: 1,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn derangement_has_no_fixed_points() {
        assert_eq!(derangement(2, 5).unwrap(), vec![1, 0]);
        for seed in 0..50 {
            let p = derangement(17, seed).unwrap();
            assert!(p.iter().enumerate().all(|(i, &j)| i != j));
            let mut sorted = p.clone();
            sorted.sort();
            assert_eq!(sorted, (0..17).collect::<Vec<_>>());
        }
        assert_eq!(derangement(9, 3).unwrap(), derangement(9, 3).unwrap());
        assert!(derangement(1, 0).is_err());
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert_eq!(softplus(-1000.0), 0.0);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-16);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
    }

    #[test]
    fn zero_critic_scores_minus_two_ln2() {
        let critic = init_critic(3, 2, 0).unwrap().with_zero_output_layer();
        let x = normal_matrix(10, 3, 1);
        let e = normal_matrix(10, 2, 2);
        let v = jsd_with_shuffle(&critic, &x, &e, 3).unwrap();
        assert!((v + 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn saturated_critic_approaches_zero() {
        // T = 1000·|x + e| - 500 is large when e = x and very negative when e = -x.
        let x = Array2::from_shape_vec((4, 1), vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let e = x.clone();
        let mut critic =
            init_network(&[2, 2, 1], &[Activation::Relu, Activation::Identity], 0).unwrap();
        critic.layers[0].weights =
            Array2::from_shape_vec((2, 2), vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        critic.layers[0].bias.fill(0.0);
        critic.layers[1].weights = Array2::from_shape_vec((2, 1), vec![1000.0, 1000.0]).unwrap();
        critic.layers[1].bias[0] = -500.0;
        let pos = EmbeddingBatch::new(e.clone()).unwrap();
        let neg = EmbeddingBatch::new(-&e).unwrap();
        let (v, _) = jsd_mi_estimate(&critic, &x, &pos, &neg).unwrap();
        assert!(v <= 0.0 && v > -1e-100, "{v}");
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let critic = init_critic(3, 2, 0).unwrap();
        let x = normal_matrix(4, 3, 1);
        let e = EmbeddingBatch::new(normal_matrix(4, 3, 2)).unwrap();
        assert!(matches!(
            jsd_mi_estimate(&critic, &x, &e, &e),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn estimate_gradients_match_finite_differences() {
        for seed in 0..3 {
            let critic = init_critic(3, 2, seed).unwrap();
            let x = normal_matrix(12, 3, seed + 10);
            let pos = EmbeddingBatch::new(normal_matrix(12, 2, seed + 20)).unwrap();
            let neg = shuffle_negatives(&pos, seed).unwrap();
            let err = finite_diff_check(
                &critic,
                |c| jsd_mi_estimate(c, &x, &pos, &neg).map(|(v, g)| (v, g.critic)),
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "critic {err}");
            let (_, g) = jsd_mi_estimate(&critic, &x, &pos, &neg).unwrap();
            let err = crate::nn::finite_diff_input(
                &pos.rows,
                &g.e_pos,
                |e| Ok(jsd_mi_estimate(&critic, &x, &EmbeddingBatch::new(e.clone())?, &neg)?.0),
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "e_pos {err}");
        }
    }

    #[test]
    fn critic_estimate_is_monotone_in_coupling() {
        let estimates: Vec<f64> = [0.0, 0.6, 0.95]
            .iter()
            .map(|&rho| {
                let (x, e) = coupled_pair(3000, 2, rho, 4);
                fit_critic(init_critic(2, 2, 9).unwrap(), &x, &e, &toy_cfg())
                    .unwrap()
                    .2
            })
            .collect();
        assert!(
            estimates[0] < estimates[1] && estimates[1] < estimates[2],
            "{estimates:?}"
        );
        assert!(
            (estimates[0] + 2.0 * std::f64::consts::LN_2).abs() < 0.05,
            "{estimates:?}"
        );
    }

    fn small_spec() -> SynthSpec {
        SynthSpec {
            seed: 11,
            ..SynthSpec::default()
        }
    }

    fn pretrain_small(epochs: usize) -> (SampleBatch, Pretrained) {
        let data = generate_dataset(&small_spec(), 3000).unwrap();
        let cfg = TrainConfig {
            pretrain_epochs: epochs,
            ..TrainConfig::desk()
        };
        let out = pretrain_encoder(
            init_encoder(8, cfg.embed_dim, 1).unwrap(),
            init_critic(8, cfg.embed_dim, 2).unwrap(),
            init_head(cfg.embed_dim, 3).unwrap(),
            &data,
            &cfg,
        )
        .unwrap();
        (data, out)
    }

    #[test]
    fn zero_epochs_leave_networks_unchanged() {
        let (_, out) = pretrain_small(0);
        assert_eq!(out.encoder, init_encoder(8, 8, 1).unwrap());
        assert_eq!(out.critic, init_critic(8, 8, 2).unwrap());
        assert_eq!(out.head, init_head(8, 3).unwrap());
        assert_eq!(out.history.len(), 1);
    }

    #[test]
    fn pretraining_raises_estimate_and_fits_task() {
        let (_, out) = pretrain_small(40);
        let first = out.history[0];
        let last = *out.history.last().unwrap();
        assert!(last.jsd > first.jsd + 0.1, "{first:?} -> {last:?}");
        assert!(last.holdout_acc > 0.8, "{last:?}");
        assert!(last.task_loss < first.task_loss);
        let csv = pretrain_history_csv(&out.history);
        assert!(csv.starts_with("epoch,jsd,task_loss,holdout_acc\n0,"));
        assert_eq!(csv.lines().count(), 42);
    }

    #[test]
    fn fine_tuning_tasks() {
        let (data, out) = pretrain_small(40);
        let cfg = TrainConfig {
            pretrain_epochs: 10,
            ..TrainConfig::desk()
        };
        let task = |f: &dyn Fn(usize, usize) -> usize| SampleBatch {
            y: data.s.iter().zip(&data.y).map(|(&s, &y)| f(s, y)).collect(),
            ..data.clone()
        };
        let (_, hold) = data.split(cfg.split, cfg.seed).unwrap();
        let (base_acc, _) = head_metrics(&out.encoder, &out.head, &hold).unwrap();
        let same = fine_tune_head(&out.encoder, &data, &cfg).unwrap();
        assert!(same.acc >= base_acc, "{} vs {base_acc}", same.acc);
        for f in [|_, y| y, |s, _| s, |s, y| s | y, |s, y| s & y] {
            let r = fine_tune_head(&out.encoder, &task(&f), &cfg).unwrap();
            assert!(r.auc > 0.5, "{}", r.auc);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let shuffled = SampleBatch {
            y: (0..data.len()).map(|_| rng.random_range(0..2)).collect(),
            ..data.clone()
        };
        let r = fine_tune_head(&out.encoder, &shuffled, &cfg).unwrap();
        assert!((r.auc - 0.5).abs() < 0.05, "{}", r.auc);
        let single = SampleBatch {
            y: vec![1; data.len()],
            ..data.clone()
        };
        assert!(matches!(
            fine_tune_head(&out.encoder, &single, &cfg),
            Err(Error::Evaluation(_))
        ));
    }
}
