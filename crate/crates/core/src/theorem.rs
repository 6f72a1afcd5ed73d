//! Executable checks of the two sufficiency results linking conditional
//! independence `S ⊥ X | Y` to a zero direct effect and to a zero
//! `I(S; Yhat | Y)`, plus explicit instances showing neither condition is
//! necessary.
//!
//! Trials run through [`crate::par`], one independent RNG stream per trial,
//! and are merged in trial order so reports are bit-identical across runs
//! and thread counts.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::info::{adf_exact, conditional_mutual_information};
use crate::kv::{fmt_f64, KvDoc};
use crate::par;
use crate::scm::{direct_effect, joint_distribution, Cards, DiscreteScm, PathSelector};

/// Default tolerance for the sufficiency checks at cardinality up to 4.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Largest per-variable cardinality drawn by the randomized checks.
pub const MAX_TRIAL_CARD: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerificationReport {
    pub theorem: u8,
    pub trials: usize,
    /// Largest component-wise `|DE|` over every trial and ordered S pair.
    pub max_abs_de: f64,
    /// Largest conditional MI checked by the theorem: `I(S;X|Y)` for
    /// theorem 1, `I(S;Yhat|Y)` for theorem 2.
    pub max_cmi: f64,
    pub violations: usize,
    pub seed: u64,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    /// Single-line `key=value` block.
    pub fn kv_line(&self) -> String {
        format!(
            "theorem={} trials={} max_abs_de={} max_cmi={} violations={} seed={}",
            self.theorem,
            self.trials,
            fmt_f64(self.max_abs_de),
            fmt_f64(self.max_cmi),
            self.violations,
            self.seed
        )
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.push("theorem", self.theorem);
        doc.push("trials", self.trials);
        doc.push_f64("max_abs_de", self.max_abs_de);
        doc.push_f64("max_cmi", self.max_cmi);
        doc.push("violations", self.violations);
        doc.push("seed", self.seed);
        doc
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.theorem {
            1 => "S ⊥ X | Y implies DE(S) = 0",
            _ => "S ⊥ X | Y implies I(S; Yhat | Y) = 0",
        };
        writeln!(f, "Theorem {} ({what})", self.theorem)?;
        writeln!(f, "  trials      {}", self.trials)?;
        writeln!(f, "  max |DE|    {:.3e}", self.max_abs_de)?;
        writeln!(f, "  max CMI     {:.3e}", self.max_cmi)?;
        writeln!(f, "  violations  {}", self.violations)?;
        writeln!(f, "  seed        {}", self.seed)?;
        write!(f, "{}", self.kv_line())
    }
}

fn dirichlet_row(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    // Normalized Exp(1) draws are Dirichlet(1, ..., 1).
    let draws: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|d| d / total).collect()
}

/// Random SCM with every table row drawn uniformly from the simplex.
pub fn random_scm(seed: u64, cards: Cards) -> Result<DiscreteScm> {
    cards.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_scm_with(&mut rng, cards)
}

fn random_scm_with(rng: &mut ChaCha8Rng, c: Cards) -> Result<DiscreteScm> {
    let p_s = dirichlet_row(rng, c.s);
    let p_y = (0..c.s).map(|_| dirichlet_row(rng, c.y)).collect();
    let p_x = (0..c.y)
        .map(|_| (0..c.s).map(|_| dirichlet_row(rng, c.x)).collect())
        .collect();
    let p_yh = (0..c.x).map(|_| dirichlet_row(rng, c.yhat)).collect();
    DiscreteScm::new(p_s, p_y, p_x, p_yh)
}

/// Copy whose `P(X | Y, S)` is replaced, for every `y`, by the observational
/// `P(X | Y = y) = sum_s P(X | y, s) P(s | y)`. `S ⊥ X | Y` then holds
/// exactly while `P(S)`, `P(Y | S)` and `P(Yhat | X)` are untouched.
pub fn enforce_conditional_independence(scm: &DiscreteScm) -> Result<DiscreteScm> {
    let c = scm.cards();
    let mut table = Vec::with_capacity(c.y);
    for y in 0..c.y {
        let weights: Vec<f64> = (0..c.s)
            .map(|s| scm.p_s()[s] * scm.p_y_given_s(s)[y])
            .collect();
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = if total > 0.0 {
            weights.iter().map(|w| w / total).collect()
        } else {
            vec![1.0 / c.s as f64; c.s]
        };
        let mut row = vec![0.0; c.x];
        for (s, w) in weights.iter().enumerate() {
            for (r, p) in row.iter_mut().zip(scm.p_x_given_ys(y, s)) {
                *r += w * p;
            }
        }
        let norm: f64 = row.iter().sum();
        row.iter_mut().for_each(|r| *r /= norm);
        table.push(vec![row; c.s]);
    }
    scm.with_p_x_given_ys(table)
}

/// Largest `|DE|` component over all ordered pairs `s_plus != s_minus`.
pub fn max_abs_direct_effect(scm: &DiscreteScm) -> Result<f64> {
    let n = scm.cards().s;
    let mut worst: f64 = 0.0;
    for plus in 0..n {
        for minus in 0..n {
            if plus != minus {
                let de = direct_effect(scm, PathSelector::new(plus, minus), minus)?;
                worst = de.iter().fold(worst, |m, v| m.max(v.abs()));
            }
        }
    }
    Ok(worst)
}

/// `I(S; X | Y)` of the exact joint.
pub fn cmi_s_x_given_y(scm: &DiscreteScm) -> Result<f64> {
    conditional_mutual_information(&joint_distribution(scm).marginal(&["S", "X", "Y"])?)
}

/// `I(S; Yhat | Y)` of the exact joint.
pub fn cmi_s_yhat_given_y(scm: &DiscreteScm) -> Result<f64> {
    adf_exact(&joint_distribution(scm))
}

/// Per-trial RNG: cardinalities in `2..=MAX_TRIAL_CARD` and tables both come
/// from a stream keyed on `(seed, trial)`.
fn trial_scm(seed: u64, trial: usize) -> Result<DiscreteScm> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    let mut card = || rng.random_range(2..=MAX_TRIAL_CARD);
    let cards = Cards::new(card(), card(), card(), card());
    random_scm_with(&mut rng, cards)
}

struct TrialOutcome {
    de: f64,
    cmi: f64,
}

fn run_trials<F>(
    theorem: u8,
    trials: usize,
    seed: u64,
    tol: f64,
    check: F,
) -> Result<VerificationReport>
where
    F: Fn(&DiscreteScm) -> Result<TrialOutcome> + Sync + Send,
{
    let outcomes = par::map_indices(trials.max(1), |t| {
        trial_scm(seed, t).and_then(|scm| check(&enforce_conditional_independence(&scm)?))
    });
    let mut report = VerificationReport {
        theorem,
        trials: trials.max(1),
        max_abs_de: 0.0,
        max_cmi: 0.0,
        violations: 0,
        seed,
    };
    for o in outcomes {
        let o = o?;
        report.max_abs_de = report.max_abs_de.max(o.de);
        report.max_cmi = report.max_cmi.max(o.cmi);
        let bad = match theorem {
            1 => o.de > tol,
            _ => o.cmi > tol,
        };
        report.violations += usize::from(bad);
    }
    Ok(report)
}

/// Randomized sufficiency check: after enforcing `S ⊥ X | Y`, every
/// component of DE must be within `tol` of zero.
pub fn verify_theorem1(trials: usize, seed: u64, tol: f64) -> Result<VerificationReport> {
    run_trials(1, trials, seed, tol, |scm| {
        Ok(TrialOutcome {
            de: max_abs_direct_effect(scm)?,
            cmi: cmi_s_x_given_y(scm)?,
        })
    })
}

/// Randomized sufficiency check: after enforcing `S ⊥ X | Y`, the exact
/// `I(S; Yhat | Y)` must be within `tol` of zero. `Yhat` depends on `X` only,
/// so `X` is a complete mediator by construction.
pub fn verify_theorem2(trials: usize, seed: u64, tol: f64) -> Result<VerificationReport> {
    run_trials(2, trials, seed, tol, |scm| {
        Ok(TrialOutcome {
            de: max_abs_direct_effect(scm)?,
            cmi: cmi_s_yhat_given_y(scm)?,
        })
    })
}

/// Constant classifier over an `S`-dependent mediator: DE is zero although
/// `S` and `X` are far from independent given `Y`.
pub fn counterexample_theorem1() -> DiscreteScm {
    DiscreteScm::binary(0.5, [0.4, 0.6], [[0.1, 0.9], [0.2, 0.8]], [0.3, 0.3])
        .expect("constant tables are valid")
}

/// Constant classifier over a ternary `S`-dependent mediator:
/// `I(S; Yhat | Y) = 0` while `I(S; X | Y)` is large.
pub fn counterexample_theorem2() -> DiscreteScm {
    DiscreteScm::new(
        vec![0.4, 0.6],
        vec![vec![0.7, 0.3], vec![0.35, 0.65]],
        vec![
            vec![vec![0.7, 0.2, 0.1], vec![0.1, 0.2, 0.7]],
            vec![vec![0.6, 0.3, 0.1], vec![0.05, 0.15, 0.8]],
        ],
        vec![vec![0.45, 0.55]; 3],
    )
    .expect("constant tables are valid")
}
