//! Plug-in information quantities (all in nats) and the group fairness
//! metrics computed from hard predictions.

use std::fmt;

use crate::error::{arg, Error, Result};
use crate::kv::KvDoc;
use crate::scm::{JointTable, MASS_TOL};

/// Predictions with a score are binarized at this threshold.
pub const DECISION_THRESHOLD: f64 = 0.5;

fn check_mass(joint: &JointTable) -> Result<()> {
    let m = joint.mass();
    if (m - 1.0).abs() > MASS_TOL {
        return arg(format!("joint mass is {m}, expected 1"));
    }
    Ok(())
}

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

/// Shannon entropy `-sum p ln p`, with `0 ln 0 = 0`.
pub fn entropy(dist: &[f64]) -> Result<f64> {
    if let Some(p) = dist.iter().find(|p| !(**p >= 0.0)) {
        return arg(format!("negative or NaN probability {p}"));
    }
    let s: f64 = dist.iter().sum();
    if (s - 1.0).abs() > MASS_TOL {
        return arg(format!("distribution sums to {s}"));
    }
    Ok((-dist.iter().map(|&p| plogp(p)).sum::<f64>()).max(0.0))
}

/// Joint entropy of every variable in the table.
pub fn joint_entropy(joint: &JointTable) -> Result<f64> {
    entropy(joint.probs())
}

/// `I(A; B)` for a two-variable table.
pub fn mutual_information(joint: &JointTable) -> Result<f64> {
    check_mass(joint)?;
    let [ca, cb] = match joint.cards() {
        [a, b] => [*a, *b],
        c => {
            return arg(format!(
                "mutual information needs 2 variables, table has {}",
                c.len()
            ))
        }
    };
    let p = joint.probs();
    let pa: Vec<f64> = (0..ca)
        .map(|a| (0..cb).map(|b| p[a * cb + b]).sum())
        .collect();
    let pb: Vec<f64> = (0..cb)
        .map(|b| (0..ca).map(|a| p[a * cb + b]).sum())
        .collect();
    let mut mi = 0.0;
    for a in 0..ca {
        for b in 0..cb {
            let pab = p[a * cb + b];
            if pab > 0.0 {
                mi += pab * (pab / (pa[a] * pb[b])).ln();
            }
        }
    }
    Ok(mi.max(0.0))
}

/// `I(A; B | C)` for a table over `(A, B, C)` in that order.
pub fn conditional_mutual_information(joint: &JointTable) -> Result<f64> {
    check_mass(joint)?;
    let [ca, cb, cc] = match joint.cards() {
        [a, b, c] => [*a, *b, *c],
        c => {
            return arg(format!(
                "conditional MI needs 3 variables, table has {}",
                c.len()
            ))
        }
    };
    let p = joint.probs();
    let at = |a: usize, b: usize, c: usize| p[(a * cb + b) * cc + c];
    let mut pc = vec![0.0; cc];
    let mut pac = vec![0.0; ca * cc];
    let mut pbc = vec![0.0; cb * cc];
    for a in 0..ca {
        for b in 0..cb {
            for c in 0..cc {
                let v = at(a, b, c);
                pc[c] += v;
                pac[a * cc + c] += v;
                pbc[b * cc + c] += v;
            }
        }
    }
    let mut cmi = 0.0;
    for c in 0..cc {
        if pc[c] <= 0.0 {
            continue;
        }
        for a in 0..ca {
            for b in 0..cb {
                let pabc = at(a, b, c);
                if pabc > 0.0 {
                    cmi += pabc * ((pc[c] * pabc) / (pac[a * cc + c] * pbc[b * cc + c])).ln();
                }
            }
        }
    }
    Ok(cmi.max(0.0))
}

/// Normalized count table over tuples of discrete values.
pub fn empirical_joint<R: AsRef<[usize]>>(
    names: &[&str],
    samples: &[R],
    cards: &[usize],
) -> Result<JointTable> {
    if samples.is_empty() {
        return arg("empirical joint of an empty sample");
    }
    if names.len() != cards.len() {
        return Err(Error::Structural(
            "names and cardinalities differ in length".into(),
        ));
    }
    let counts = count_cells(samples, cards)?;
    let n = samples.len() as f64;
    JointTable::new(
        names.iter().map(|s| s.to_string()).collect(),
        cards.to_vec(),
        counts.into_iter().map(|c| c as f64 / n).collect(),
    )
}

fn count_cells<R: AsRef<[usize]>>(samples: &[R], cards: &[usize]) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; cards.iter().product()];
    for (row, tuple) in samples.iter().enumerate() {
        let tuple = tuple.as_ref();
        if tuple.len() != cards.len() {
            return Err(Error::Data {
                row,
                msg: format!("tuple has {} values, expected {}", tuple.len(), cards.len()),
            });
        }
        let mut flat = 0;
        for (i, (&v, &c)) in tuple.iter().zip(cards).enumerate() {
            if v >= c {
                return Err(Error::Data {
                    row,
                    msg: format!("value {v} of variable {i} outside [0, {c})"),
                });
            }
            flat = flat * c + v;
        }
        counts[flat] += 1;
    }
    Ok(counts)
}

/// One evaluated example: sensitive attribute, true label, hard prediction
/// and an optional probability score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionRecord {
    pub s: u8,
    pub y: u8,
    pub yhat: u8,
    pub score: Option<f64>,
}

impl PredictionRecord {
    pub fn new(s: u8, y: u8, yhat: u8) -> Self {
        Self {
            s,
            y,
            yhat,
            score: None,
        }
    }

    /// Record whose hard prediction is the score binarized at 0.5.
    pub fn from_score(s: u8, y: u8, score: f64) -> Self {
        Self {
            s,
            y,
            yhat: u8::from(score >= DECISION_THRESHOLD),
            score: Some(score),
        }
    }

    fn validate(&self, row: usize) -> Result<()> {
        if self.s > 1 || self.y > 1 || self.yhat > 1 {
            return Err(Error::Data {
                row,
                msg: "s, y and yhat must be 0 or 1".into(),
            });
        }
        if let Some(p) = self.score {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Data {
                    row,
                    msg: format!("score {p} outside [0, 1]"),
                });
            }
        }
        Ok(())
    }
}

fn validate_all(records: &[PredictionRecord]) -> Result<()> {
    records
        .iter()
        .enumerate()
        .try_for_each(|(i, r)| r.validate(i))
}

fn positive_rate<'a>(
    records: impl Iterator<Item = &'a PredictionRecord>,
    group: &str,
) -> Result<f64> {
    let (mut n, mut pos) = (0usize, 0usize);
    for r in records {
        n += 1;
        pos += usize::from(r.yhat);
    }
    if n == 0 {
        return Err(Error::Evaluation(format!("empty group {group}")));
    }
    Ok(pos as f64 / n as f64)
}

/// `|P(Yhat=1 | S=1) - P(Yhat=1 | S=0)|`.
pub fn demographic_parity(records: &[PredictionRecord]) -> Result<f64> {
    validate_all(records)?;
    let r1 = positive_rate(records.iter().filter(|r| r.s == 1), "S=1")?;
    let r0 = positive_rate(records.iter().filter(|r| r.s == 0), "S=0")?;
    Ok((r1 - r0).abs())
}

/// `|P(Yhat=1 | S=1, Y=1) - P(Yhat=1 | S=0, Y=1)|`.
pub fn equalized_opportunity(records: &[PredictionRecord]) -> Result<f64> {
    validate_all(records)?;
    let r1 = positive_rate(records.iter().filter(|r| r.s == 1 && r.y == 1), "S=1,Y=1")?;
    let r0 = positive_rate(records.iter().filter(|r| r.s == 0 && r.y == 1), "S=0,Y=1")?;
    Ok((r1 - r0).abs())
}

/// Plug-in `I(S; Yhat | Y)` over the records.
pub fn adf(records: &[PredictionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Evaluation("no records".into()));
    }
    validate_all(records)?;
    let tuples: Vec<[usize; 3]> = records
        .iter()
        .map(|r| [r.s as usize, r.yhat as usize, r.y as usize])
        .collect();
    conditional_mutual_information(&empirical_joint(&["S", "Yhat", "Y"], &tuples, &[2, 2, 2])?)
}

/// `I(S; Yhat | Y)` of an exact table containing `S`, `Y` and `Yhat`.
pub fn adf_exact(joint: &JointTable) -> Result<f64> {
    conditional_mutual_information(&joint.marginal(&["S", "Yhat", "Y"])?)
}

pub fn accuracy(records: &[PredictionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Evaluation("no records".into()));
    }
    Ok(records.iter().filter(|r| r.y == r.yhat).count() as f64 / records.len() as f64)
}

/// Area under the ROC curve in Mann-Whitney form; ties count one half.
/// Records without a score fall back to their hard prediction.
pub fn auc(records: &[PredictionRecord]) -> Result<f64> {
    let mut scored: Vec<(f64, u8)> = records
        .iter()
        .map(|r| (r.score.unwrap_or(r.yhat as f64), r.y))
        .collect();
    let n_pos = scored.iter().filter(|(_, y)| *y == 1).count();
    let n_neg = scored.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Evaluation("AUC needs both label classes".into()));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Mid-ranks over tie blocks.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < scored.len() {
        let mut j = i;
        while j < scored.len() && scored[j].0 == scored[i].0 {
            j += 1;
        }
        let mid = (i + j + 1) as f64 / 2.0;
        rank_sum_pos += mid * scored[i..j].iter().filter(|(_, y)| *y == 1).count() as f64;
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// The evaluated column set: accuracy, AUC and the three fairness gaps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FairnessReport {
    pub acc: f64,
    pub auc: f64,
    pub dp: f64,
    pub eo: f64,
    pub adf_nats: f64,
}

impl FairnessReport {
    pub fn evaluate(records: &[PredictionRecord]) -> Result<Self> {
        Ok(Self {
            acc: accuracy(records)?,
            auc: auc(records)?,
            dp: demographic_parity(records)?,
            eo: equalized_opportunity(records)?,
            adf_nats: adf(records)?,
        })
    }

    /// Display-scaled values: ACC and AUC in percent, EO and DP times 100,
    /// ADF times 1000.
    pub fn scaled(&self) -> [f64; 5] {
        [
            self.acc * 100.0,
            self.auc * 100.0,
            self.eo * 100.0,
            self.dp * 100.0,
            self.adf_nats * 1000.0,
        ]
    }

    /// Writes `{prefix}acc`, `{prefix}auc`, `{prefix}dp`, `{prefix}eo`,
    /// `{prefix}adf`.
    pub fn write_kv(&self, doc: &mut KvDoc, prefix: &str) {
        doc.push_f64(format!("{prefix}acc"), self.acc);
        doc.push_f64(format!("{prefix}auc"), self.auc);
        doc.push_f64(format!("{prefix}dp"), self.dp);
        doc.push_f64(format!("{prefix}eo"), self.eo);
        doc.push_f64(format!("{prefix}adf"), self.adf_nats);
    }

    pub fn read_kv(doc: &KvDoc, prefix: &str) -> Result<Self> {
        Ok(Self {
            acc: doc.get(&format!("{prefix}acc"))?,
            auc: doc.get(&format!("{prefix}auc"))?,
            dp: doc.get(&format!("{prefix}dp"))?,
            eo: doc.get(&format!("{prefix}eo"))?,
            adf_nats: doc.get(&format!("{prefix}adf"))?,
        })
    }

    /// `ACC AUC EO DP ADF` scaled and at two decimals, single-space separated.
    pub fn paper_row(&self) -> String {
        self.scaled()
            .iter()
            .map(|v| format!("{v:.2}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl fmt::Display for FairnessReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [acc, auc, eo, dp, adf] = self.scaled();
        writeln!(f, "ACC = {:.6}  (ACC_% = {acc:.2})", self.acc)?;
        writeln!(f, "AUC = {:.6}  (AUC_% = {auc:.2})", self.auc)?;
        writeln!(f, "DP  = {:.6}  (DP_e-2 = {dp:.2})", self.dp)?;
        writeln!(f, "EO  = {:.6}  (EO_e-2 = {eo:.2})", self.eo)?;
        write!(f, "ADF = {:.6} nats  (ADF_e-3 = {adf:.2})", self.adf_nats)
    }
}

/// Parse comma-separated predictions with header `s,y,yhat[,score]`.
/// Column order is taken from the header.
pub fn read_predictions(text: &str) -> Result<Vec<PredictionRecord>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (hline, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let find = |name: &str| cols.iter().position(|c| *c == name);
    let missing: Vec<&str> = ["s", "y", "yhat"]
        .into_iter()
        .filter(|c| find(c).is_none())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Parse {
            line: hline + 1,
            msg: format!("missing column(s) {}", missing.join(", ")),
        });
    }
    let (is, iy, iyh, isc) = (
        find("s").unwrap(),
        find("y").unwrap(),
        find("yhat").unwrap(),
        find("score"),
    );

    let mut out = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected {} fields, found {}", cols.len(), fields.len()),
            });
        }
        let bit = |idx: usize, name: &str| -> Result<u8> {
            match fields[idx] {
                "0" => Ok(0),
                "1" => Ok(1),
                v => Err(Error::Parse {
                    line: line_no,
                    msg: format!("column {name} must be 0 or 1, got {v:?}"),
                }),
            }
        };
        let score = match isc.map(|j| fields[j]) {
            None | Some("") => None,
            Some(v) => {
                let p: f64 = v.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("bad score {v:?}"),
                })?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("score {p} outside [0, 1]"),
                    });
                }
                Some(p)
            }
        };
        out.push(PredictionRecord {
            s: bit(is, "s")?,
            y: bit(iy, "y")?,
            yhat: bit(iyh, "yhat")?,
            score,
        });
    }
    Ok(out)
}

pub fn write_predictions(records: &[PredictionRecord]) -> String {
    let mut out = String::from("s,y,yhat,score\n");
    for r in records {
        let score = r.score.map(|p| format!("{p}")).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", r.s, r.y, r.yhat, score));
    }
    out
}
