//! End-to-end runs: pretrain, freeze, mask. Multi-seed sweeps share one
//! pretrained model per seed across all settings so comparisons are paired.

use ndarray::Array2;

use crate::adversarial::{
    adversarial_train, discriminator_loss, discriminator_predict, evaluate_frozen,
    init_discriminator, init_generator, AdversarialRun, FrozenModel, MaskedBatch,
};
use crate::config::{DataSource, RunConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::info::FairnessReport;
use crate::jsd::{
    epoch_batches, init_critic, init_encoder, init_head, pretrain_encoder, sub_seed, Pretrained,
};
use crate::nn::{take_rows, Network, StepSchedule};
use crate::par;
use crate::synth::{generate_dataset, SampleBatch, SynthSpec};

pub fn load_data(run: &RunConfig) -> Result<SampleBatch> {
    match &run.data {
        DataSource::Synthetic { spec, n } => generate_dataset(spec, *n),
        DataSource::File(path) => SampleBatch::from_csv(&std::fs::read_to_string(path)?),
    }
}

/// Pretrains encoder, critic and head from seeded initializations and
/// freezes encoder and head.
pub fn pretrain_frozen(data: &SampleBatch, cfg: &TrainConfig) -> Result<(Pretrained, FrozenModel)> {
    let dim = data.dim();
    let pre = pretrain_encoder(
        init_encoder(dim, cfg.embed_dim, sub_seed(cfg.seed, 10))?,
        init_critic(dim, cfg.embed_dim, sub_seed(cfg.seed, 11))?,
        init_head(cfg.embed_dim, sub_seed(cfg.seed, 12))?,
        data,
        cfg,
    )?;
    let frozen = FrozenModel::new(pre.encoder.clone(), pre.head.clone())?;
    Ok((pre, frozen))
}

/// Adversarial phase from seeded generator and discriminator.
pub fn adversarial_phase(
    frozen: &FrozenModel,
    data: &SampleBatch,
    cfg: &TrainConfig,
) -> Result<AdversarialRun> {
    let g = init_generator(data.dim(), sub_seed(cfg.seed, 20))?;
    let d = init_discriminator(data.dim(), sub_seed(cfg.seed, 21))?;
    adversarial_train(g, d, frozen, data, cfg)
}

/// Held-out metrics of the frozen model on unmasked inputs.
pub fn vanilla_report(
    frozen: &FrozenModel,
    data: &SampleBatch,
    cfg: &TrainConfig,
) -> Result<FairnessReport> {
    let (_, holdout) = data.split(cfg.split, cfg.seed)?;
    evaluate_frozen(frozen, &holdout.x, &holdout)
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub pretrained: Pretrained,
    pub frozen: FrozenModel,
    pub adversarial: AdversarialRun,
    pub vanilla: FairnessReport,
}

pub fn run_pipeline(data: &SampleBatch, cfg: &TrainConfig) -> Result<PipelineRun> {
    let (pretrained, frozen) = pretrain_frozen(data, cfg)?;
    let vanilla = vanilla_report(&frozen, data, cfg)?;
    let adversarial = adversarial_phase(&frozen, data, cfg)?;
    Ok(PipelineRun {
        pretrained,
        frozen,
        adversarial,
        vanilla,
    })
}

/// Final held-out report for every `(setting, seed)` pair, indexed
/// `[setting][seed]`. Seed `k` generates its data with `spec.seed = k` and
/// trains with `cfg.seed = k`; the pretraining fields of the first setting
/// are used for all settings.
pub fn sweep(
    spec: &SynthSpec,
    n: usize,
    settings: &[TrainConfig],
    seeds: &[u64],
) -> Result<Vec<Vec<FairnessReport>>> {
    let first = settings
        .first()
        .ok_or_else(|| Error::Argument("no settings to sweep".into()))?;
    let prepared = par::map_slice(seeds, |&seed| -> Result<(SampleBatch, FrozenModel)> {
        let data = generate_dataset(&SynthSpec { seed, ..*spec }, n)?;
        let (_, frozen) = pretrain_frozen(&data, &TrainConfig { seed, ..*first })?;
        Ok((data, frozen))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..settings.len())
        .flat_map(|a| (0..seeds.len()).map(move |b| (a, b)))
        .collect();
    let reports = par::map_slice(&jobs, |&(a, b)| {
        let (data, frozen) = &prepared[b];
        let cfg = TrainConfig {
            seed: seeds[b],
            ..settings[a]
        };
        adversarial_phase(frozen, data, &cfg).map(|run| run.final_report())
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(reports
        .chunks(seeds.len())
        .map(<[FairnessReport]>::to_vec)
        .collect())
}

/// Trains a fresh discriminator-shaped network to predict `S` from
/// unmasked features and one-hot `Y`, returning it with its held-out
/// accuracy. Uses `cfg.epochs`, `cfg.lr_d`, `cfg.batch`, `cfg.split`.
pub fn train_probe(data: &SampleBatch, cfg: &TrainConfig) -> Result<(Network, f64)> {
    let (train, holdout) = data.split(cfg.split, cfg.seed)?;
    let mut d = init_discriminator(data.dim(), sub_seed(cfg.seed, 30))?;
    let lr = StepSchedule {
        lr: cfg.lr_d,
        decay_every: cfg.lr_decay_every,
    };
    for epoch in 1..=cfg.epochs {
        for idx in epoch_batches(train.len(), cfg.batch, sub_seed(cfg.seed, 31), epoch) {
            let masked = MaskedBatch {
                x_tilde: take_rows(&train.x, &idx),
                mask: Array2::zeros((idx.len(), data.dim())),
            };
            let s: Vec<usize> = idx.iter().map(|&i| train.s[i]).collect();
            let y: Vec<usize> = idx.iter().map(|&i| train.y[i]).collect();
            let (_, g) = discriminator_loss(&d, &masked, &s, &y)?;
            d.apply_step(&g, lr.rate(epoch - 1))
                .map_err(|e| Error::Training {
                    epoch,
                    msg: e.to_string(),
                })?;
        }
    }
    let masked = MaskedBatch {
        x_tilde: holdout.x.clone(),
        mask: Array2::zeros(holdout.x.dim()),
    };
    let logits = discriminator_predict(&d, &masked, &holdout.y)?;
    let hits = logits
        .rows()
        .into_iter()
        .zip(&holdout.s)
        .filter(|(l, &s)| usize::from(l[1] > l[0]) == s)
        .count();
    Ok((d, hits as f64 / holdout.len() as f64))
}

pub fn probe_accuracy(data: &SampleBatch, cfg: &TrainConfig) -> Result<f64> {
    Ok(train_probe(data, cfg)?.1)
}

/// Field-wise mean.
pub fn mean_report(reports: &[FairnessReport]) -> FairnessReport {
    let n = reports.len() as f64;
    let avg = |f: fn(&FairnessReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    FairnessReport {
        acc: avg(|r| r.acc),
        auc: avg(|r| r.auc),
        dp: avg(|r| r.dp),
        eo: avg(|r| r.eo),
        adf_nats: avg(|r| r.adf_nats),
    }
}

/// Seed-averaged final reports, one per setting.
pub fn sweep_means(
    spec: &SynthSpec,
    n: usize,
    settings: &[TrainConfig],
    seeds: &[u64],
) -> Result<Vec<FairnessReport>> {
    Ok(sweep(spec, n, settings, seeds)?
        .iter()
        .map(|r| mean_report(r))
        .collect())
}
