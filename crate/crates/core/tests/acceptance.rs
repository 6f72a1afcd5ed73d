//! Acceptance gate. Runs every criterion, prints one `PASS`/`FAIL` line
//! each, and exits non-zero if any failed.

use std::f64::consts::LN_2;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use fairdiag::adversarial::{
    adversarial_train, discriminator_loss, generate_mask, generate_mask_steps, generator_loss,
    generator_loss_input, history_csv, init_discriminator, init_generator, mask_backward,
    FrozenModel, MaskedBatch,
};
use fairdiag::config::TrainConfig;
use fairdiag::experiment::{pretrain_frozen, sweep_means};
use fairdiag::info::FairnessReport;
use fairdiag::jsd::{
    fit_critic, init_critic, init_encoder, init_head, jsd_mi_estimate, jsd_with_shuffle,
    shuffle_negatives, EmbeddingBatch,
};
use fairdiag::nn::{
    cross_entropy_with_grad, finite_diff_check, finite_diff_input, init_network,
    mean_prediction_entropy_with_grad, Activation, GradientSet, Network,
};
use fairdiag::scm::{direct_effect, indirect_effect, total_causal_effect, Cards, PathSelector};
use fairdiag::synth::{generate_dataset, SynthSpec};
use fairdiag::theorem::{
    cmi_s_x_given_y, cmi_s_yhat_given_y, counterexample_theorem1, counterexample_theorem2,
    max_abs_direct_effect, random_scm, verify_theorem1, verify_theorem2,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const TRIALS: usize = 1000;
const SUFFICIENCY_TOL: f64 = 1e-10;
const EXACT_TOL: f64 = 1e-12;
const MIN_CMI: f64 = 0.05;
const GRAD_TOL: f64 = 1e-4;
const FD_EPS: f64 = 1e-5;
const FIXTURES: u64 = 3;
const JSD_ZERO_TOL: f64 = 1e-9;
const JSD_MIN_GAP: f64 = 0.2;
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const ROWS: usize = 20_000;
const MIN_ADF_REDUCTION: f64 = 0.5;
const MAX_ACC_DROP: f64 = 0.03;

struct Gate {
    failed: usize,
    total: usize,
}

impl Gate {
    fn check(&mut self, name: &str, ok: bool, detail: String) {
        self.total += 1;
        if !ok {
            self.failed += 1;
        }
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn unit_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(0.0..1.0))
}

fn normal_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(&mut rng))
}

fn labels(n: usize, classes: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

fn live_generator(dim: usize, seed: u64) -> Network {
    init_network(
        &[dim, dim, dim, dim],
        &[Activation::Tanh, Activation::Tanh, Activation::Identity],
        seed,
    )
    .unwrap()
}

fn frozen(dim: usize, seed: u64) -> FrozenModel {
    FrozenModel::new(
        init_encoder(dim, 4, seed).unwrap(),
        init_head(4, seed + 1).unwrap(),
    )
    .unwrap()
}

fn theorems(gate: &mut Gate) {
    let t = Instant::now();
    let r1 = verify_theorem1(TRIALS, 0, SUFFICIENCY_TOL).unwrap();
    let took = t.elapsed();
    gate.check(
        "theorem 1 sufficiency",
        r1.violations == 0 && r1.max_abs_de < SUFFICIENCY_TOL && took < Duration::from_secs(10),
        format!(
            "{TRIALS} trials, max |DE| = {:.3e}, {}",
            r1.max_abs_de,
            secs(took)
        ),
    );

    let ce = counterexample_theorem1();
    let (de, cmi) = (
        max_abs_direct_effect(&ce).unwrap(),
        cmi_s_x_given_y(&ce).unwrap(),
    );
    gate.check(
        "theorem 1 counterexample",
        de < EXACT_TOL && cmi >= MIN_CMI,
        format!("|DE| = {de:.3e}, I(S;X|Y) = {cmi:.4} nats"),
    );

    let t = Instant::now();
    let r2 = verify_theorem2(TRIALS, 0, SUFFICIENCY_TOL).unwrap();
    let took = t.elapsed();
    let ce = counterexample_theorem2();
    let (adf, cmi) = (
        cmi_s_yhat_given_y(&ce).unwrap(),
        cmi_s_x_given_y(&ce).unwrap(),
    );
    gate.check(
        "theorem 2 sufficiency and counterexample",
        r2.violations == 0 && r2.max_cmi < SUFFICIENCY_TOL && adf < EXACT_TOL && cmi >= MIN_CMI,
        format!(
            "{TRIALS} trials, max I(S;Yhat|Y) = {:.3e} ({}); counterexample I(S;Yhat|Y) = {adf:.3e}, I(S;X|Y) = {cmi:.4}",
            r2.max_cmi,
            secs(took)
        ),
    );
}

fn effect_identity(gate: &mut Gate) {
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for seed in 0..TRIALS as u64 {
        let mut card = || rng.random_range(2..=4);
        let cards = Cards::new(card(), card(), card(), card());
        let scm = random_scm(seed, cards).unwrap();
        let s_plus = cards.s - 1;
        let tce = total_causal_effect(&scm, s_plus, 0).unwrap();
        let de = direct_effect(&scm, PathSelector::new(s_plus, 0), 0).unwrap();
        let ie = indirect_effect(&scm, s_plus, 0).unwrap();
        for i in 0..tce.len() {
            worst = worst.max((de[i] + ie[i] - tce[i]).abs());
        }
    }
    gate.check(
        "DE + IE = TCE",
        worst < EXACT_TOL,
        format!("{TRIALS} SCMs, max residual {worst:.3e}"),
    );
}

fn gradients(gate: &mut Gate) {
    let t = Instant::now();
    let mut worst = [0.0f64; 6];
    for seed in 0..FIXTURES {
        let z = normal_matrix(6, 3, 100 + seed) * 2.0;
        let y = labels(6, 3, 200 + seed);
        let (_, g) = cross_entropy_with_grad(&z, &y).unwrap();
        worst[0] = worst[0].max(
            finite_diff_input(&z, &g, |z| Ok(cross_entropy_with_grad(z, &y)?.0), FD_EPS).unwrap(),
        );
        let (_, g) = mean_prediction_entropy_with_grad(&z).unwrap();
        worst[1] = worst[1].max(
            finite_diff_input(
                &z,
                &g,
                |z| Ok(mean_prediction_entropy_with_grad(z)?.0),
                FD_EPS,
            )
            .unwrap(),
        );

        let critic = init_critic(3, 2, seed).unwrap();
        let x = normal_matrix(12, 3, 300 + seed);
        let pos = EmbeddingBatch::new(normal_matrix(12, 2, 400 + seed)).unwrap();
        let neg = shuffle_negatives(&pos, seed).unwrap();
        let (_, jg) = jsd_mi_estimate(&critic, &x, &pos, &neg).unwrap();
        let e = [
            finite_diff_check(
                &critic,
                |c| jsd_mi_estimate(c, &x, &pos, &neg).map(|(v, g)| (v, g.critic)),
                FD_EPS,
            ),
            finite_diff_input(
                &pos.rows,
                &jg.e_pos,
                |e| Ok(jsd_mi_estimate(&critic, &x, &EmbeddingBatch::new(e.clone())?, &neg)?.0),
                FD_EPS,
            ),
            finite_diff_input(
                &neg.rows,
                &jg.e_neg,
                |e| Ok(jsd_mi_estimate(&critic, &x, &pos, &EmbeddingBatch::new(e.clone())?)?.0),
                FD_EPS,
            ),
        ];
        for v in e {
            worst[2] = worst[2].max(v.unwrap());
        }

        let dim = 4;
        let g = live_generator(dim, seed);
        let d = init_discriminator(dim, seed + 1).unwrap();
        let f = frozen(dim, seed + 2);
        let x = unit_matrix(12, dim, seed + 3);
        let (s, y) = (labels(12, 2, seed + 4), labels(12, 2, seed + 5));
        let cfg = TrainConfig {
            eta: 0.3,
            alpha: 0.7,
            beta: 1.3,
            ..TrainConfig::default()
        };
        let e = finite_diff_check(
            &g,
            |net| generator_loss(net, &d, &f, &x, &s, &y, &cfg).map(|(t, gr)| (t.loss, gr)),
            FD_EPS,
        );
        worst[3] = worst[3].max(e.unwrap());
        let m = generate_mask(&g, &x, 0.3).unwrap();
        let (_, gx) = generator_loss_input(&d, &f, &m, &s, &y, &cfg).unwrap();
        let e = finite_diff_input(
            &m.x_tilde,
            &gx,
            |xt| {
                let mm = MaskedBatch {
                    x_tilde: xt.clone(),
                    mask: m.mask.clone(),
                };
                Ok(generator_loss_input(&d, &f, &mm, &s, &y, &cfg)?.0.loss)
            },
            FD_EPS,
        );
        worst[3] = worst[3].max(e.unwrap());
        worst[4] = worst[4]
            .max(finite_diff_check(&d, |net| discriminator_loss(net, &m, &s, &y), FD_EPS).unwrap());

        // Rows on the bounds so some entries clamp.
        let mut xb = unit_matrix(10, dim, seed + 6);
        xb.row_mut(0).assign(&ndarray::array![0.0, 1.0, 0.0, 0.6]);
        xb.row_mut(1).assign(&ndarray::array![1.0, 0.0, 0.3, 1.0]);
        let w = unit_matrix(10, dim, seed + 7) - 0.5;
        for steps in [1, 2] {
            let loss = |net: &Network| -> fairdiag::Result<(f64, GradientSet)> {
                let (m, trace) = generate_mask_steps(net, &xb, 0.2, steps)?;
                let v = (&m.x_tilde * &w).sum() + 0.5 * m.x_tilde.mapv(|t| t * t).sum();
                Ok((v, mask_backward(net, &trace, &(&w + &m.x_tilde))?))
            };
            worst[5] = worst[5].max(finite_diff_check(&g, loss, FD_EPS).unwrap());
        }
    }
    let took = t.elapsed();
    let names = [
        "cross-entropy",
        "entropy",
        "jsd",
        "generator",
        "discriminator",
        "clamp",
    ];
    let detail: Vec<String> = names
        .iter()
        .zip(worst)
        .map(|(n, w)| format!("{n} {w:.1e}"))
        .collect();
    gate.check(
        "gradient validation",
        worst.iter().all(|&w| w < GRAD_TOL) && took < Duration::from_secs(30),
        format!(
            "{FIXTURES} fixtures each, max rel err: {}; {}",
            detail.join(", "),
            secs(took)
        ),
    );
}

fn jsd(gate: &mut Gate) {
    let critic = init_critic(3, 2, 0).unwrap().with_zero_output_layer();
    let zero = jsd_with_shuffle(
        &critic,
        &normal_matrix(50, 3, 1),
        &normal_matrix(50, 2, 2),
        3,
    )
    .unwrap();

    let coupled = |rho: f64| {
        let x = normal_matrix(3000, 2, 4);
        let e = &x * rho + &normal_matrix(3000, 2, 5) * (1.0 - rho * rho).sqrt();
        let cfg = TrainConfig {
            pretrain_epochs: 30,
            lr_pre: 0.1,
            batch: 128,
            split: 0.8,
            seed: 1,
            ..TrainConfig::default()
        };
        fit_critic(init_critic(2, 2, 9).unwrap(), &x, &e, &cfg)
            .unwrap()
            .2
    };
    let (strong, indep) = (coupled(0.95), coupled(0.0));
    gate.check(
        "JSD-MI behavior",
        (zero + 2.0 * LN_2).abs() < JSD_ZERO_TOL && strong - indep >= JSD_MIN_GAP,
        format!(
            "zero critic {zero:.12}, coupled {strong:.4}, independent {indep:.4}, gap {:.4}",
            strong - indep
        ),
    );
}

fn setting(eta: f64, alpha: f64, beta: f64) -> TrainConfig {
    TrainConfig {
        eta,
        alpha,
        beta,
        ..TrainConfig::desk()
    }
}

fn training(gate: &mut Gate) {
    // One paired sweep feeds both the end-to-end and the ablation checks.
    let settings = [
        setting(0.0, 1.0, 1.0),
        setting(0.2, 1.0, 1.0),
        setting(0.4, 1.0, 1.0),
        setting(0.2, 0.0, 1.0),
        setting(0.2, 2.0, 1.0),
        setting(0.2, 4.0, 1.0),
        setting(0.2, 1.0, 0.0),
        setting(0.2, 1.0, 2.0),
        setting(0.2, 1.0, 4.0),
    ];
    let t = Instant::now();
    let m = sweep_means(&SynthSpec::default(), ROWS, &settings, &SEEDS).unwrap();
    let took = t.elapsed();
    for (cfg, r) in settings.iter().zip(&m) {
        println!(
            "     eta={} alpha={} beta={}: {}",
            cfg.eta,
            cfg.alpha,
            cfg.beta,
            r.paper_row()
        );
    }
    let (vanilla, fair) = (&m[0], &m[1]);
    let reduction = 1.0 - fair.adf_nats / vanilla.adf_nats;
    let drop = vanilla.acc - fair.acc;
    gate.check(
        "end-to-end debiasing",
        reduction >= MIN_ADF_REDUCTION && drop <= MAX_ACC_DROP && took < Duration::from_secs(300),
        format!(
            "ADF {:.5} -> {:.5} ({:.1}% lower), accuracy drop {:.2} points, {} for {} settings x {} seeds",
            vanilla.adf_nats,
            fair.adf_nats,
            100.0 * reduction,
            100.0 * drop,
            secs(took),
            settings.len(),
            SEEDS.len()
        ),
    );

    let acc = |r: &FairnessReport| r.acc;
    let adf = |r: &FairnessReport| r.adf_nats;
    let eta = [&m[0], &m[1], &m[2]];
    let alpha = [&m[3], &m[4], &m[5]];
    let beta = [&m[6], &m[1], &m[7], &m[8]];
    let beta = [beta[0], beta[2], beta[3]];
    let non_inc = |v: &[&FairnessReport], f: fn(&FairnessReport) -> f64| {
        v.windows(2).all(|w| f(w[1]) <= f(w[0]))
    };
    let non_dec = |v: &[&FairnessReport], f: fn(&FairnessReport) -> f64| {
        v.windows(2).all(|w| f(w[1]) >= f(w[0]))
    };
    let show = |v: &[&FairnessReport], f: fn(&FairnessReport) -> f64| {
        v.iter()
            .map(|r| format!("{:.5}", f(r)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let ok = non_inc(&eta, acc)
        && adf(eta[1]) < adf(eta[0])
        && non_inc(&alpha, adf)
        && non_dec(&beta, acc)
        && non_dec(&beta, adf);
    gate.check(
        "ablation trends",
        ok,
        format!(
            "acc over eta [{}], ADF over eta [{}], ADF over alpha [{}], acc over beta [{}], ADF over beta [{}]",
            show(&eta, acc),
            show(&eta, adf),
            show(&alpha, adf),
            show(&beta, acc),
            show(&beta, adf)
        ),
    );
}

fn formatting(gate: &mut Gate) {
    let r = FairnessReport {
        acc: 0.8546,
        auc: 0.6385,
        eo: 0.0510,
        dp: 0.0631,
        adf_nats: 0.01059,
    };
    let row = r.paper_row();
    gate.check(
        "formatting fidelity",
        row == "85.46 63.85 5.10 6.31 10.59",
        format!("{row:?}"),
    );
}

fn determinism(gate: &mut Gate) {
    let run = || {
        let data = generate_dataset(
            &SynthSpec {
                seed: 5,
                ..SynthSpec::default()
            },
            2000,
        )
        .unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            pretrain_epochs: 3,
            seed: 5,
            ..TrainConfig::desk()
        };
        let (_, f) = pretrain_frozen(&data, &cfg).unwrap();
        let g = init_generator(data.dim(), 20).unwrap();
        let d = init_discriminator(data.dim(), 21).unwrap();
        history_csv(&adversarial_train(g, d, &f, &data, &cfg).unwrap().history)
    };
    let (a, b) = (run(), run());
    gate.check(
        "determinism",
        a == b,
        format!("{} history bytes, identical = {}", a.len(), a == b),
    );
}

fn main() -> ExitCode {
    let mut gate = Gate {
        failed: 0,
        total: 0,
    };
    theorems(&mut gate);
    effect_identity(&mut gate);
    gradients(&mut gate);
    jsd(&mut gate);
    training(&mut gate);
    formatting(&mut gate);
    determinism(&mut gate);
    println!(
        "acceptance: {} of {} criteria passed",
        gate.total - gate.failed,
        gate.total
    );
    if gate.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
