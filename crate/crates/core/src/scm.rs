//! Exact discrete structural causal model over the fixed four-node graph
//! `S -> Y`, `S -> X`, `Y -> X`, `X -> Yhat`.
//!
//! Path-specific quantities are computed by dense enumeration. The direct
//! path is `S -> X -> Yhat`; the indirect path is `S -> Y -> X -> Yhat`.
//! A path-specific intervention sets the `S` seen by `P(X | Y, S)` to one
//! value and the `S` seen by `P(Y | S)` to another.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{arg, Error, Result};
use crate::kv::KvDoc;

/// Upper bound on any single variable's cardinality.
pub const MAX_CARD: usize = 64;

/// Tolerance on row sums of conditional tables.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Variable order used by [`joint_distribution`].
pub const JOINT_VARS: [&str; 4] = ["S", "Y", "X", "Yhat"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cards {
    pub s: usize,
    pub y: usize,
    pub x: usize,
    pub yhat: usize,
}

impl Cards {
    pub const BINARY: Cards = Cards {
        s: 2,
        y: 2,
        x: 2,
        yhat: 2,
    };

    pub fn new(s: usize, y: usize, x: usize, yhat: usize) -> Self {
        Cards { s, y, x, yhat }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, c) in [
            ("S", self.s),
            ("Y", self.y),
            ("X", self.x),
            ("Yhat", self.yhat),
        ] {
            if c == 0 {
                return arg(format!("cardinality of {name} must be positive"));
            }
            if c > MAX_CARD {
                return arg(format!("cardinality of {name} is {c}, cap is {MAX_CARD}"));
            }
        }
        Ok(())
    }
}

/// Conditional probability tables for the four-node graph.
///
/// Tables are stored as nested rows:
/// `p_y_given_s[s][y]`, `p_x_given_ys[y][s][x]`, `p_yhat_given_x[x][yhat]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteScm {
    cards: Cards,
    p_s: Vec<f64>,
    p_y_given_s: Vec<Vec<f64>>,
    p_x_given_ys: Vec<Vec<Vec<f64>>>,
    p_yhat_given_x: Vec<Vec<f64>>,
}

fn check_row(name: &str, row: &[f64], card: usize) -> Result<()> {
    if row.len() != card {
        return Err(Error::Structural(format!(
            "{name}: row has {} entries, expected {card}",
            row.len()
        )));
    }
    if let Some(p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return arg(format!("{name}: probability {p} outside [0, 1]"));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return arg(format!("{name}: row sums to {sum}"));
    }
    Ok(())
}

impl DiscreteScm {
    pub fn new(
        p_s: Vec<f64>,
        p_y_given_s: Vec<Vec<f64>>,
        p_x_given_ys: Vec<Vec<Vec<f64>>>,
        p_yhat_given_x: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let card_s = p_s.len();
        let card_y = p_y_given_s.first().map_or(0, Vec::len);
        let card_x = p_yhat_given_x.len();
        let card_yhat = p_yhat_given_x.first().map_or(0, Vec::len);
        let cards = Cards::new(card_s, card_y, card_x, card_yhat);
        cards.validate()?;

        check_row("p_s", &p_s, card_s)?;
        if p_y_given_s.len() != card_s {
            return Err(Error::Structural(format!(
                "p_y_given_s has {} rows, expected {card_s}",
                p_y_given_s.len()
            )));
        }
        for row in &p_y_given_s {
            check_row("p_y_given_s", row, card_y)?;
        }
        if p_x_given_ys.len() != card_y {
            return Err(Error::Structural(format!(
                "p_x_given_ys has {} y-blocks, expected {card_y}",
                p_x_given_ys.len()
            )));
        }
        for block in &p_x_given_ys {
            if block.len() != card_s {
                return Err(Error::Structural(format!(
                    "p_x_given_ys block has {} s-rows, expected {card_s}",
                    block.len()
                )));
            }
            for row in block {
                check_row("p_x_given_ys", row, card_x)?;
            }
        }
        for row in &p_yhat_given_x {
            check_row("p_yhat_given_x", row, card_yhat)?;
        }
        Ok(Self {
            cards,
            p_s,
            p_y_given_s,
            p_x_given_ys,
            p_yhat_given_x,
        })
    }

    /// All-binary SCM from the probabilities of the value 1.
    /// `p_x1[y][s]` is `P(X=1 | Y=y, S=s)`.
    pub fn binary(
        p_s1: f64,
        p_y1: [f64; 2],
        p_x1: [[f64; 2]; 2],
        p_yhat1: [f64; 2],
    ) -> Result<Self> {
        let b = |p: f64| vec![1.0 - p, p];
        Self::new(
            b(p_s1),
            p_y1.iter().map(|&p| b(p)).collect(),
            p_x1.iter()
                .map(|r| r.iter().map(|&p| b(p)).collect())
                .collect(),
            p_yhat1.iter().map(|&p| b(p)).collect(),
        )
    }

    pub fn cards(&self) -> Cards {
        self.cards
    }

    pub fn p_s(&self) -> &[f64] {
        &self.p_s
    }

    pub fn p_y_given_s(&self, s: usize) -> &[f64] {
        &self.p_y_given_s[s]
    }

    pub fn p_x_given_ys(&self, y: usize, s: usize) -> &[f64] {
        &self.p_x_given_ys[y][s]
    }

    pub fn p_yhat_given_x(&self, x: usize) -> &[f64] {
        &self.p_yhat_given_x[x]
    }

    /// Replace the `P(X | Y, S)` table. Used by constructions that rewrite
    /// the mediator mechanism while keeping everything else.
    pub fn with_p_x_given_ys(&self, table: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        Self::new(
            self.p_s.clone(),
            self.p_y_given_s.clone(),
            table,
            self.p_yhat_given_x.clone(),
        )
    }

    fn check_s(&self, s: usize) -> Result<()> {
        if s >= self.cards.s {
            return arg(format!("S value {s} out of range [0, {})", self.cards.s));
        }
        Ok(())
    }

    /// `P(Yhat | S_direct along the direct path, S_indirect along the
    /// indirect path)` as a distribution over `Yhat`.
    pub fn path_intervention(&self, sel: PathSelector) -> Result<Vec<f64>> {
        self.check_s(sel.direct_value)?;
        self.check_s(sel.indirect_value)?;
        let mut out = vec![0.0; self.cards.yhat];
        for x in 0..self.cards.x {
            let mut px = 0.0;
            for y in 0..self.cards.y {
                px += self.p_x_given_ys[y][sel.direct_value][x]
                    * self.p_y_given_s[sel.indirect_value][y];
            }
            for (o, &q) in out.iter_mut().zip(&self.p_yhat_given_x[x]) {
                *o += q * px;
            }
        }
        Ok(out)
    }

    pub fn to_kv(&self) -> KvDoc {
        let c = self.cards;
        let mut doc = KvDoc::new();
        doc.push("card_s", c.s);
        doc.push("card_y", c.y);
        doc.push("card_x", c.x);
        doc.push("card_yhat", c.yhat);
        for (s, p) in self.p_s.iter().enumerate() {
            doc.push_f64(format!("p_s.{s}"), *p);
        }
        for s in 0..c.s {
            for y in 0..c.y {
                doc.push_f64(format!("p_y_given_s.{s}.{y}"), self.p_y_given_s[s][y]);
            }
        }
        for y in 0..c.y {
            for s in 0..c.s {
                for x in 0..c.x {
                    doc.push_f64(
                        format!("p_x_given_ys.{y}.{s}.{x}"),
                        self.p_x_given_ys[y][s][x],
                    );
                }
            }
        }
        for x in 0..c.x {
            for yh in 0..c.yhat {
                doc.push_f64(
                    format!("p_yhat_given_x.{x}.{yh}"),
                    self.p_yhat_given_x[x][yh],
                );
            }
        }
        doc
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let c = Cards::new(
            doc.get("card_s")?,
            doc.get("card_y")?,
            doc.get("card_x")?,
            doc.get("card_yhat")?,
        );
        c.validate()?;
        let expected = 4 + c.s + c.s * c.y + c.y * c.s * c.x + c.x * c.yhat;
        let found = doc.keys().count();
        if found != expected {
            return Err(Error::Structural(format!(
                "expected {expected} keys, found {found}"
            )));
        }
        let p_s = (0..c.s)
            .map(|s| doc.get(&format!("p_s.{s}")))
            .collect::<Result<Vec<f64>>>()?;
        let p_y = (0..c.s)
            .map(|s| {
                (0..c.y)
                    .map(|y| doc.get(&format!("p_y_given_s.{s}.{y}")))
                    .collect()
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        let p_x = (0..c.y)
            .map(|y| {
                (0..c.s)
                    .map(|s| {
                        (0..c.x)
                            .map(|x| doc.get(&format!("p_x_given_ys.{y}.{s}.{x}")))
                            .collect()
                    })
                    .collect()
            })
            .collect::<Result<Vec<Vec<Vec<f64>>>>>()?;
        let p_yh = (0..c.x)
            .map(|x| {
                (0..c.yhat)
                    .map(|yh| doc.get(&format!("p_yhat_given_x.{x}.{yh}")))
                    .collect()
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Self::new(p_s, p_y, p_x, p_yh)
    }

    pub fn to_text(&self) -> String {
        self.to_kv().to_text()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_kv(&KvDoc::parse(text)?)
    }
}

/// S-values applied along the direct and indirect paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathSelector {
    pub direct_value: usize,
    pub indirect_value: usize,
}

impl PathSelector {
    pub fn new(direct_value: usize, indirect_value: usize) -> Self {
        Self {
            direct_value,
            indirect_value,
        }
    }

    /// Both paths see the same value: an ordinary `do(S = s)`.
    pub fn uniform(s: usize) -> Self {
        Self {
            direct_value: s,
            indirect_value: s,
        }
    }
}

/// Dense probability table over an ordered list of named discrete variables.
/// Cells are laid out row-major with the last variable varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    variables: Vec<String>,
    cards: Vec<usize>,
    probs: Vec<f64>,
}

/// Mass tolerance accepted by [`JointTable::new`].
pub const MASS_TOL: f64 = 1e-6;

impl JointTable {
    pub fn new(variables: Vec<String>, cards: Vec<usize>, probs: Vec<f64>) -> Result<Self> {
        if variables.len() != cards.len() {
            return Err(Error::Structural(
                "variable and cardinality lists differ in length".into(),
            ));
        }
        if cards.contains(&0) {
            return Err(Error::Structural("zero cardinality".into()));
        }
        let size: usize = cards.iter().product();
        if probs.len() != size {
            return Err(Error::Structural(format!(
                "table has {} cells, expected {size}",
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
            return arg(format!(
                "table entry {p} is not a non-negative finite number"
            ));
        }
        let mass: f64 = probs.iter().sum();
        if (mass - 1.0).abs() > MASS_TOL {
            return arg(format!("table mass is {mass}, expected 1"));
        }
        Ok(Self {
            variables,
            cards,
            probs,
        })
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mass(&self) -> f64 {
        self.probs.iter().sum()
    }

    fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.cards.len()];
        for i in (0..self.cards.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.cards[i + 1];
        }
        strides
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(self.strides()).map(|(i, s)| i * s).sum()
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.probs[self.flat_index(idx)]
    }

    /// Multi-index of every cell, in storage order.
    pub fn indices(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        let cards = self.cards.clone();
        (0..self.probs.len()).map(move |mut flat| {
            let mut idx = vec![0; cards.len()];
            for i in (0..cards.len()).rev() {
                idx[i] = flat % cards[i];
                flat /= cards[i];
            }
            idx
        })
    }

    fn position(&self, name: &str) -> Result<usize> {
        self.variables
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| Error::Argument(format!("variable {name:?} not in table")))
    }

    /// Marginal over `keep`, with variables in the order given.
    pub fn marginal(&self, keep: &[&str]) -> Result<JointTable> {
        let pos = keep
            .iter()
            .map(|k| self.position(k))
            .collect::<Result<Vec<_>>>()?;
        let cards: Vec<usize> = pos.iter().map(|&p| self.cards[p]).collect();
        let mut out = JointTable {
            variables: keep.iter().map(|s| s.to_string()).collect(),
            cards: cards.clone(),
            probs: vec![0.0; cards.iter().product()],
        };
        let out_strides = out.strides();
        for (idx, p) in self.indices().zip(&self.probs) {
            let flat: usize = pos.iter().zip(&out_strides).map(|(&q, s)| idx[q] * s).sum();
            out.probs[flat] += p;
        }
        Ok(out)
    }
}

/// Full joint `P(s, y, x, yhat)` by the graph factorization.
pub fn joint_distribution(scm: &DiscreteScm) -> JointTable {
    let c = scm.cards;
    let mut probs = Vec::with_capacity(c.s * c.y * c.x * c.yhat);
    for s in 0..c.s {
        for y in 0..c.y {
            for x in 0..c.x {
                for yh in 0..c.yhat {
                    probs.push(
                        scm.p_s[s]
                            * scm.p_y_given_s[s][y]
                            * scm.p_x_given_ys[y][s][x]
                            * scm.p_yhat_given_x[x][yh],
                    );
                }
            }
        }
    }
    JointTable {
        variables: JOINT_VARS.iter().map(|s| s.to_string()).collect(),
        cards: vec![c.s, c.y, c.x, c.yhat],
        probs,
    }
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(a, b)| a - b).collect()
}

/// `P(Yhat | do(S = s_plus)) - P(Yhat | do(S = s_minus))`.
pub fn total_causal_effect(scm: &DiscreteScm, s_plus: usize, s_minus: usize) -> Result<Vec<f64>> {
    if s_plus == s_minus {
        return arg("total causal effect needs two distinct S values");
    }
    let plus = scm.path_intervention(PathSelector::uniform(s_plus))?;
    let minus = scm.path_intervention(PathSelector::uniform(s_minus))?;
    Ok(diff(&plus, &minus))
}

/// Path-specific effect of `sel.direct_value` along the direct path with
/// `sel.indirect_value` (which must equal `s_minus`) along the indirect one,
/// relative to the reference `do(S = s_minus)`.
pub fn direct_effect(scm: &DiscreteScm, sel: PathSelector, s_minus: usize) -> Result<Vec<f64>> {
    if sel.indirect_value != s_minus {
        return arg(format!(
            "indirect path must carry the reference value {s_minus}, got {}",
            sel.indirect_value
        ));
    }
    let mixed = scm.path_intervention(sel)?;
    let reference = scm.path_intervention(PathSelector::uniform(s_minus))?;
    Ok(diff(&mixed, &reference))
}

/// Total causal effect minus direct effect.
pub fn indirect_effect(scm: &DiscreteScm, s_plus: usize, s_minus: usize) -> Result<Vec<f64>> {
    let tce = total_causal_effect(scm, s_plus, s_minus)?;
    let de = direct_effect(scm, PathSelector::new(s_plus, s_minus), s_minus)?;
    Ok(diff(&tce, &de))
}

/// Component at `Yhat = 1` of a binary effect vector.
pub fn positive_component(effect: &[f64]) -> Result<f64> {
    match effect {
        [_, p] => Ok(*p),
        _ => arg(format!(
            "scalar effect needs a binary outcome, got {} components",
            effect.len()
        )),
    }
}

/// Ancestrally sampled `(s, y, x, yhat)` rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscreteSample {
    pub rows: Vec<[usize; 4]>,
}

pub fn sample(scm: &DiscreteScm, n: usize, seed: u64) -> Result<DiscreteSample> {
    if n == 0 {
        return arg("sample size must be at least 1");
    }
    let mk = |row: &[f64]| WeightedIndex::new(row).map_err(|e| Error::Numeric(e.to_string()));
    let ds = mk(&scm.p_s)?;
    let dy = scm
        .p_y_given_s
        .iter()
        .map(|r| mk(r))
        .collect::<Result<Vec<_>>>()?;
    let dx = scm
        .p_x_given_ys
        .iter()
        .map(|b| b.iter().map(|r| mk(r)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let dyh = scm
        .p_yhat_given_x
        .iter()
        .map(|r| mk(r))
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n)
        .map(|_| {
            let s = ds.sample(&mut rng);
            let y = dy[s].sample(&mut rng);
            let x = dx[y][s].sample(&mut rng);
            let yh = dyh[x].sample(&mut rng);
            [s, y, x, yh]
        })
        .collect();
    Ok(DiscreteSample { rows })
}
