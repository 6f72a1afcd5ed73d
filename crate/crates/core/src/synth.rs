//! Synthetic biased-diagnosis data on the four-node graph with continuous
//! features.
//!
//! Each row draws `S` uniformly, `Y ~ Bernoulli(label_bias[S])`, and
//! `X = logistic(base + indirect·Y·u_y + direct·S·u_s + noise)` where `u_y`
//! and `u_s` are fixed orthogonal unit vectors. `base` centres both signals
//! around zero so features sit near the steep part of the logistic.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{arg, Error, Result};
use crate::nn::take_rows;
use crate::par;
use crate::scm::DiscreteScm;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub dim: usize,
    /// Magnitude of the `S -> X` signal along `u_s`.
    pub direct_strength: f64,
    /// Magnitude of the `Y -> X` signal along `u_y`.
    pub indirect_strength: f64,
    /// `P(Y = 1 | S = 0)` and `P(Y = 1 | S = 1)`.
    pub label_bias: [f64; 2],
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            dim: 8,
            direct_strength: 1.0,
            indirect_strength: 1.0,
            label_bias: [0.3, 0.7],
            noise_sd: 0.5,
            seed: 0,
        }
    }
}

/// Rows of `(s, y, x)` plus optional hard predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub s: Vec<usize>,
    pub y: Vec<usize>,
    pub x: Array2<f64>,
    pub yhat: Option<Vec<usize>>,
}

impl SampleBatch {
    pub fn new(s: Vec<usize>, y: Vec<usize>, x: Array2<f64>) -> Result<Self> {
        let b = Self {
            s,
            y,
            x,
            yhat: None,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.x.nrows();
        if self.s.len() != n
            || self.y.len() != n
            || self.yhat.as_ref().is_some_and(|v| v.len() != n)
        {
            return Err(Error::Structural(
                "sample batch columns have different lengths".into(),
            ));
        }
        for (row, (&s, &y)) in self.s.iter().zip(&self.y).enumerate() {
            if s > 1 || y > 1 {
                return Err(Error::Data {
                    row,
                    msg: "s and y must be binary".into(),
                });
            }
        }
        if let Some((row, _)) = self
            .x
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

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn subset(&self, idx: &[usize]) -> SampleBatch {
        SampleBatch {
            s: idx.iter().map(|&i| self.s[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            x: take_rows(&self.x, idx),
            yhat: self
                .yhat
                .as_ref()
                .map(|v| idx.iter().map(|&i| v[i]).collect()),
        }
    }

    /// Seeded shuffle, then the first `train_fraction` of rows train and the
    /// rest are held out.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<(SampleBatch, SampleBatch)> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return arg(format!(
                "split fraction {train_fraction} must lie in (0, 1)"
            ));
        }
        let n = self.len();
        let n_train = ((n as f64) * train_fraction).round() as usize;
        if n_train == 0 || n_train == n {
            return arg(format!(
                "split of {n} rows at {train_fraction} leaves an empty side"
            ));
        }
        let perm = permutation(n, seed);
        Ok((self.subset(&perm[..n_train]), self.subset(&perm[n_train..])))
    }

    /// Comma-separated text with header `s,y,x_0,...,x_{d-1}`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,y");
        for j in 0..self.dim() {
            out.push_str(&format!(",x_{j}"));
        }
        out.push('\n');
        for (i, row) in self.x.rows().into_iter().enumerate() {
            out.push_str(&format!("{},{}", self.s[i], self.y[i]));
            for v in row {
                out.push_str(&format!(",{v:e}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty file".into(),
        })?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 3
            || cols[0] != "s"
            || cols[1] != "y"
            || cols[2..]
                .iter()
                .enumerate()
                .any(|(j, c)| *c != format!("x_{j}"))
        {
            return Err(Error::Parse {
                line: 1,
                msg: "header must be s,y,x_0,...".into(),
            });
        }
        let d = cols.len() - 2;
        let (mut s, mut y, mut xs) = (vec![], vec![], vec![]);
        for (i, line) in lines {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = |msg: String| Error::Parse { line: i + 1, msg };
            if f.len() != d + 2 {
                return Err(bad(format!("expected {} fields, found {}", d + 2, f.len())));
            }
            s.push(f[0].parse().map_err(|_| bad(format!("bad s {:?}", f[0])))?);
            y.push(f[1].parse().map_err(|_| bad(format!("bad y {:?}", f[1])))?);
            for v in &f[2..] {
                xs.push(
                    v.parse::<f64>()
                        .map_err(|_| bad(format!("bad feature {v:?}")))?,
                );
            }
        }
        let n = s.len();
        let x = Array2::from_shape_vec((n, d), xs).map_err(|e| Error::Structural(e.to_string()))?;
        Self::new(s, y, x)
    }
}

/// Seeded Fisher-Yates permutation of `0..n`.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        p.swap(i, j);
    }
    p
}

pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return arg("dim must be at least 2");
        }
        if self.label_bias.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return arg("label_bias entries must lie in (0, 1)");
        }
        if !(self.noise_sd > 0.0) || !self.noise_sd.is_finite() {
            return arg("noise_sd must be positive");
        }
        if !self.direct_strength.is_finite() || !self.indirect_strength.is_finite() {
            return arg("signal strengths must be finite");
        }
        Ok(())
    }

    /// `(u_y, u_s)`: `u_y` spreads over the first half of the coordinates and
    /// `u_s` over the second half, so the two are orthogonal unit vectors.
    pub fn directions(&self) -> (Array1<f64>, Array1<f64>) {
        let half = self.dim / 2;
        let mut u_y = Array1::zeros(self.dim);
        let mut u_s = Array1::zeros(self.dim);
        let ky = half.clamp(1, 2);
        let ks = (self.dim - half).clamp(1, 2);
        for j in 0..ky {
            u_y[j] = 1.0 / (ky as f64).sqrt();
        }
        for j in 0..ks {
            u_s[half + j] = 1.0 / (ks as f64).sqrt();
        }
        (u_y, u_s)
    }

    fn base(&self) -> Array1<f64> {
        let (u_y, u_s) = self.directions();
        (&u_y * self.indirect_strength + &u_s * self.direct_strength) * -0.5
    }
}

/// Rows are generated in parallel, each from its own RNG stream keyed on the
/// row index, so the batch depends only on the spec and `n`.
pub fn generate_dataset(spec: &SynthSpec, n: usize) -> Result<SampleBatch> {
    spec.validate()?;
    if n == 0 {
        return arg("dataset size must be at least 1");
    }
    let (u_y, u_s) = spec.directions();
    let base = spec.base();
    let rows = par::map_indices(n, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(i as u64);
        let s = usize::from(rng.random::<f64>() < 0.5);
        let y = usize::from(rng.random::<f64>() < spec.label_bias[s]);
        let x: Vec<f64> = (0..spec.dim)
            .map(|j| {
                let noise: f64 = StandardNormal.sample(&mut rng);
                let z = base[j]
                    + spec.indirect_strength * y as f64 * u_y[j]
                    + spec.direct_strength * s as f64 * u_s[j]
                    + spec.noise_sd * noise;
                logistic(z)
            })
            .collect();
        (s, y, x)
    });
    let mut s = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut flat = Vec::with_capacity(n * spec.dim);
    for (si, yi, xi) in rows {
        s.push(si);
        y.push(yi);
        flat.extend(xi);
    }
    let x = Array2::from_shape_vec((n, spec.dim), flat).expect("row widths are fixed");
    SampleBatch::new(s, y, x)
}

/// Sample size used to estimate the projected mediator table.
pub const PROJECTION_SAMPLES: usize = 100_000;

/// Reference classifier on the projected mediator: `P(Yhat = 1 | b_y, b_s)`
/// reads both binned projections.
pub const PROJECTED_CLASSIFIER: [[f64; 2]; 2] = [[0.2, 0.5], [0.5, 0.8]];

/// Discretize `X` into 4 cells by thresholding its projections on `u_y` and
/// `u_s` (in logit space, halfway between the two signal levels) and
/// estimate `P(cell | Y, S)` by Monte Carlo. `P(S)` and `P(Y | S)` come from
/// the spec exactly; `Yhat` is [`PROJECTED_CLASSIFIER`]. Cell index is
/// `2·b_y + b_s`.
pub fn ground_truth_discrete_projection(spec: &SynthSpec) -> Result<DiscreteScm> {
    let data = generate_dataset(spec, PROJECTION_SAMPLES)?;
    let (u_y, u_s) = spec.directions();
    let base = spec.base();
    let mut counts = [[[0usize; 4]; 2]; 2];
    for (i, row) in data.x.rows().into_iter().enumerate() {
        let z: Array1<f64> = row
            .iter()
            .zip(base.iter())
            .map(|(&x, b)| logit(x) - b)
            .collect();
        let b_y = usize::from(z.dot(&u_y) > 0.5 * spec.indirect_strength);
        let b_s = usize::from(z.dot(&u_s) > 0.5 * spec.direct_strength);
        counts[data.y[i]][data.s[i]][2 * b_y + b_s] += 1;
    }
    let p_x = counts
        .iter()
        .map(|by_s| {
            by_s.iter()
                .map(|c| {
                    let total: usize = c.iter().sum();
                    if total == 0 {
                        vec![0.25; 4]
                    } else {
                        c.iter().map(|&k| k as f64 / total as f64).collect()
                    }
                })
                .collect()
        })
        .collect();
    let b = |p: f64| vec![1.0 - p, p];
    let p_yhat = (0..4)
        .map(|cell| b(PROJECTED_CLASSIFIER[cell / 2][cell % 2]))
        .collect();
    DiscreteScm::new(
        vec![0.5, 0.5],
        spec.label_bias.iter().map(|&p| b(p)).collect(),
        p_x,
        p_yhat,
    )
}
