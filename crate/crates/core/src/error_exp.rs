//! Multi-class error-exponent experiment: pairwise Chernoff information, the
//! mean-exponent bound and a Monte-Carlo prediction-error comparison.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anneal::{self, GridSpec, SweepConfig};
use crate::error::{Error, Result};
use crate::prob::{self, JointDistribution, DEFAULT_SMOOTHING};
use crate::scalar::Real;
use crate::solve::{self, SolveOptions};
use crate::state::{self, BottleneckState, Framework};

pub const DEFAULT_CHERNOFF_TOL: f64 = 1e-9;
/// Slack on `mean bound ≤ dual functional`.
pub const BOUND_SLACK: f64 = 1e-9;
pub const DEFAULT_TRIALS: usize = 10_000;
/// Seed of the shipped eight-class generator.
pub const M8_SEED: u64 = 8;
pub const Z_95: f64 = 1.96;

/// `M` class conditionals `p(x|y_i)` over a common alphabet, and a prior.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationProblem {
    /// Shape `M × n_x`, strictly positive rows.
    pub class_conditionals: Array2<f64>,
    pub prior: Array1<f64>,
}

impl ClassificationProblem {
    /// Validates, smooths each row by `(p + ε) / (1 + n_x ε)` and checks positivity.
    pub fn new(class_conditionals: Array2<f64>, prior: Option<Vec<f64>>, smoothing: f64) -> Result<Self> {
        let (m, n_x) = class_conditionals.dim();
        if m == 0 || n_x == 0 {
            return Err(Error::validation(
                "class_conditionals",
                "needs at least one class and one input",
            ));
        }
        if !(smoothing >= 0.0) || !smoothing.is_finite() {
            return Err(Error::validation("smoothing_epsilon", "must be finite and nonnegative"));
        }
        let mut rows = Array2::zeros((m, n_x));
        for (i, row) in class_conditionals.outer_iter().enumerate() {
            let mut sum = 0.0;
            for (j, &v) in row.iter().enumerate() {
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::validation(
                        format!("class_conditionals[{i}][{j}]"),
                        format!("entry {v} is not a finite nonnegative number"),
                    ));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > prob::INPUT_NORM_TOL {
                return Err(Error::validation(
                    format!("class_conditionals[{i}]"),
                    format!("row sums to {sum}, expected 1"),
                ));
            }
            let denom = 1.0 + smoothing * n_x as f64;
            for (j, &v) in row.iter().enumerate() {
                let s = (v / sum + smoothing) / denom;
                if s <= 0.0 {
                    return Err(Error::validation(
                        format!("class_conditionals[{i}][{j}]"),
                        "zero probability; enable smoothing",
                    ));
                }
                rows[[i, j]] = s;
            }
        }
        let prior = match prior {
            None => Array1::from_elem(m, 1.0 / m as f64),
            Some(p) => {
                if p.len() != m {
                    return Err(Error::DimensionMismatch {
                        context: "prior length vs class count",
                        expected: m,
                        actual: p.len(),
                    });
                }
                let sum: f64 = p.iter().sum();
                if let Some(i) = p.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
                    return Err(Error::validation(format!("prior[{i}]"), "must be positive"));
                }
                if (sum - 1.0).abs() > prob::INPUT_NORM_TOL {
                    return Err(Error::validation("prior", format!("sums to {sum}, expected 1")));
                }
                Array1::from(p.iter().map(|v| v / sum).collect::<Vec<_>>())
            }
        };
        Ok(Self {
            class_conditionals: rows,
            prior,
        })
    }

    /// `M` rows drawn from a symmetric Dirichlet(1) on a seeded ChaCha8 stream,
    /// uniform prior, default smoothing.
    pub fn generate(m: usize, n_x: usize, seed: u64) -> Result<Self> {
        if m == 0 || n_x == 0 {
            return Err(Error::validation("classes", "needs at least one class and one input"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = state::random_stochastic(&mut rng, m, n_x);
        Self::new(rows, None, DEFAULT_SMOOTHING)
    }

    /// The eight-class, sixteen-input problem used by the experiment.
    pub fn m8() -> Self {
        Self::generate(8, 16, M8_SEED).expect("valid generator arguments")
    }

    pub fn n_classes(&self) -> usize {
        self.class_conditionals.nrows()
    }

    pub fn n_x(&self) -> usize {
        self.class_conditionals.ncols()
    }

    /// `p(x, y_i) = p(y_i) p_i(x)`, with `X` as the input and the class as the label.
    pub fn joint(&self) -> Result<JointDistribution<f64>> {
        let p_xy = Array2::from_shape_fn((self.n_x(), self.n_classes()), |(x, i)| {
            self.prior[i] * self.class_conditionals[[i, x]]
        });
        JointDistribution::from_joint(p_xy)
    }
}

fn log_partition<T: Real>(l0: &[T], l1: &[T], lambda: T) -> T {
    prob::log_sum_exp(l0.iter().zip(l1).map(|(&a, &b)| lambda * a + (T::one() - lambda) * b))
}

/// Chernoff information `C = −min_{0<λ<1} log Σ_x p0^λ p1^{1−λ}` by golden
/// section on `λ` down to a bracket of width `tol`. Returns `(C, λ*)`.
///
/// The exponent is reported with the positive sign. Identical inputs give
/// `(0, 1/2)`.
pub fn chernoff_information<T: Real>(p0: &[T], p1: &[T], tol: f64) -> Result<(T, T)> {
    if p0.len() != p1.len() {
        return Err(Error::DimensionMismatch {
            context: "chernoff pair lengths",
            expected: p0.len(),
            actual: p1.len(),
        });
    }
    if !(tol > 0.0) {
        return Err(Error::validation("tol", "must be positive"));
    }
    for (name, p) in [("p0", p0), ("p1", p1)] {
        if let Some(i) = p.iter().position(|&v| !(v > T::zero()) || !v.is_finite()) {
            return Err(Error::validation(format!("{name}[{i}]"), "must be strictly positive"));
        }
    }
    if p0 == p1 {
        return Ok((T::zero(), T::lit(0.5)));
    }
    let l0: Vec<T> = p0.iter().map(|v| v.ln()).collect();
    let l1: Vec<T> = p1.iter().map(|v| v.ln()).collect();
    let r: Vec<T> = l0.iter().zip(&l1).map(|(&a, &b)| a - b).collect();
    let g = |lambda: f64| log_partition(&l0, &l1, T::lit(lambda));
    // g(v) − g(u) = log E_{p_u}[exp((v − u) r)], evaluated without cancellation
    let rises = |u: f64, v: f64| -> bool {
        let w = geometric_interpolation(p0, p1, T::lit(u));
        let step = T::lit(v - u);
        let s: T = w.iter().zip(&r).map(|(&wi, &ri)| wi * (step * ri).exp_m1()).sum();
        s.ln_1p() > T::zero()
    };
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0f64, 1.0f64);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    while b - a > tol {
        if !rises(d, c) {
            b = d;
            d = c;
            c = b - ratio * (b - a);
        } else {
            a = c;
            c = d;
            d = a + ratio * (b - a);
        }
    }
    let lambda = 0.5 * (a + b);
    let value = -g(lambda);
    Ok((value.max(T::zero()), T::lit(lambda)))
}

/// `p_λ ∝ p0^λ p1^{1−λ}`.
pub fn geometric_interpolation<T: Real>(p0: &[T], p1: &[T], lambda: T) -> Vec<T> {
    let mut logs: Vec<T> = p0
        .iter()
        .zip(p1)
        .map(|(&a, &b)| lambda * a.ln() + (T::one() - lambda) * b.ln())
        .collect();
    prob::softmax_row(&mut logs);
    logs
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanExponentBound<T> {
    /// `E_{p(y,x̂)} D[p(x|x̂) ‖ p(x|y)]` with `p(y,x̂) = p(y|x̂) p(x̂)`.
    pub value: T,
    /// Dual functional `I(X;X̂) + β E[d_dual]` at the same state.
    pub dual_functional: T,
    pub beta: T,
}

impl<T: Real> MeanExponentBound<T> {
    /// The bound chain needs `β ≥ 1`; below that the inequality is not claimed.
    pub fn holds(&self) -> bool {
        self.beta < T::one() || self.value <= self.dual_functional + T::lit(BOUND_SLACK)
    }
}

/// Evaluates the mean exponent `E_{p(y,x̂)} D[p(x|x̂) ‖ p(x|y)]` at `state`.
/// Dead clusters contribute nothing.
pub fn mean_exponent_bound<T: Real>(
    state: &BottleneckState<T>,
    joint: &JointDistribution<T>,
) -> Result<MeanExponentBound<T>> {
    ib_check(state, joint)?;
    let inverse = state.inverse_encoder(joint);
    let p_x_given_y = joint.p_x_given_y();
    let mut value = T::zero();
    for k in (0..state.n_xhat()).filter(|&k| state.is_live(k)) {
        let row = inverse.row(k);
        for y in 0..joint.n_y() {
            let w = state.marginal[k] * state.decoder.get(k, y);
            if w > T::zero() {
                let mut kl = T::zero();
                for (x, &p) in row.iter().enumerate() {
                    if p > T::zero() {
                        kl = kl + p * (p.ln() - p_x_given_y.get(y, x).ln());
                    }
                }
                value = value + w * kl;
            }
        }
    }
    let mut dual = state.clone();
    dual.framework = Framework::Dual;
    let (dual_functional, _) = solve::evaluate(joint, &dual);
    Ok(MeanExponentBound {
        value,
        dual_functional,
        beta: state.beta,
    })
}

fn ib_check<T: Real>(state: &BottleneckState<T>, joint: &JointDistribution<T>) -> Result<()> {
    if state.encoder.n_rows() != joint.n_x() || state.decoder.n_cols() != joint.n_y() {
        return Err(Error::DimensionMismatch {
            context: "state vs problem",
            expected: joint.n_x(),
            actual: state.encoder.n_rows(),
        });
    }
    Ok(())
}

/// Estimated misclassification probability per test size for one trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurve {
    pub framework: Framework,
    pub beta: f64,
    pub n_values: Vec<usize>,
    pub p_err: Vec<f64>,
    pub ci_halfwidth: Vec<f64>,
    pub errors: Vec<u64>,
    pub trials: usize,
    pub seed: u64,
}

/// Wald half-width at 95% with a `0.5/N` continuity correction.
pub fn binomial_halfwidth(p: f64, trials: usize) -> f64 {
    let n = trials as f64;
    Z_95 * (p * (1.0 - p) / n).sqrt() + 0.5 / n
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub betas: Vec<f64>,
    pub n_values: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    /// Annealing used to train each model; its grid runs from `anneal_beta_min`
    /// to the largest requested `β`.
    pub sweep: SweepConfig,
    pub anneal_beta_min: f64,
    pub anneal_points_per_octave: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            betas: (1..=6).map(|k| 2f64.powi(k)).collect(),
            n_values: default_n_values(),
            trials: DEFAULT_TRIALS,
            seed: 0,
            sweep: SweepConfig::default(),
            anneal_beta_min: 0.25,
            anneal_points_per_octave: 10,
        }
    }
}

/// `1, 2, 4, …, 256`.
pub fn default_n_values() -> Vec<usize> {
    (0..=8).map(|k| 1usize << k).collect()
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.betas.is_empty() {
            return Err(Error::validation("betas", "at least one beta is required"));
        }
        if let Some(i) = self.betas.iter().position(|&b| !(b > 0.0) || !b.is_finite()) {
            return Err(Error::validation(format!("betas[{i}]"), "must be positive and finite"));
        }
        if self.n_values.is_empty() || self.n_values.contains(&0) {
            return Err(Error::validation(
                "n_values",
                "must be a nonempty list of positive sizes",
            ));
        }
        if self.trials == 0 {
            return Err(Error::validation("trials", "must be at least 1"));
        }
        if !(self.anneal_beta_min > 0.0) {
            return Err(Error::validation("anneal_beta_min", "must be positive"));
        }
        if self.anneal_points_per_octave == 0 {
            return Err(Error::validation("anneal_points_per_octave", "must be at least 1"));
        }
        Ok(())
    }
}

/// Anneals from `anneal_beta_min` and returns the merged converged state at
/// every requested `β`, in the order given.
pub fn train(
    joint: &JointDistribution<f64>,
    framework: Framework,
    config: &ExperimentConfig,
) -> Result<Vec<BottleneckState<f64>>> {
    config.validate()?;
    let top = config.betas.iter().copied().fold(f64::MIN, f64::max);
    let lo = config.anneal_beta_min.min(top);
    let octaves = (top / lo).log2();
    let points = ((octaves * config.anneal_points_per_octave as f64).ceil() as usize + 1).max(2);
    let grid = GridSpec::log(lo, top.max(lo * (1.0 + 1e-12)), points)?;
    let (_, states) = anneal::sweep_with_states(joint, framework, &grid, &config.sweep)?;
    let values = grid.values();
    let opts = SolveOptions {
        record_trace: false,
        ..config.sweep.solve
    };
    config
        .betas
        .iter()
        .map(|&b| {
            // warm start from the last grid state not above b
            let idx = values.iter().rposition(|&v| v <= b * (1.0 + 1e-12)).unwrap_or(0);
            let report = solve::solve(joint, framework, b, &states[idx], &opts)?;
            anneal::merge(&report.state, joint, config.sweep.merge_tol)
        })
        .collect()
}

/// `p_β(x̂|y_i) = Σ_x p(x̂|x) p_i(x)`, shape `M × n_xhat`.
fn class_representations(problem: &ClassificationProblem, state: &BottleneckState<f64>) -> Array2<f64> {
    problem.class_conditionals.dot(&state.encoder.rows())
}

/// `argmin_i D[p̂ ‖ q_i]`, lowest index on ties. Classes with `q_ik = 0`
/// where `p̂_k > 0` are excluded. Returns `None` when every class is excluded.
pub fn classify(empirical: &[f64], classes: &Array2<f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, q) in classes.outer_iter().enumerate() {
        let mut d = 0.0;
        for (&p, &qk) in empirical.iter().zip(q.iter()) {
            if p > 0.0 {
                if qk <= 0.0 {
                    d = f64::INFINITY;
                    break;
                }
                d += p * (p / qk).ln();
            }
        }
        if d.is_finite() && best.is_none_or(|(_, b)| d < b) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

struct Model {
    framework: Framework,
    beta: f64,
    encoder: Array2<f64>,
    classes: Array2<f64>,
}

/// Trains both models for every `β` in the config and estimates `p_err`
/// for each test size. Every model sees the same samples: trial `t` draws
/// its class and a sequence of `max(n_values)` inputs from the ChaCha8
/// stream `t` of `seed`, and size `n` uses the first `n` of them.
pub fn run_prediction_experiment(
    problem: &ClassificationProblem,
    frameworks: &[Framework],
    config: &ExperimentConfig,
) -> Result<Vec<ErrorCurve>> {
    config.validate()?;
    let joint = problem.joint()?;
    let mut models = Vec::new();
    for &fw in frameworks {
        for (state, &beta) in train(&joint, fw, config)?.into_iter().zip(&config.betas) {
            models.push(Model {
                framework: fw,
                beta,
                encoder: state.encoder.rows().to_owned(),
                classes: class_representations(problem, &state),
            });
        }
    }
    let counts = count_errors(problem, &models, config)?;
    let n_len = config.n_values.len();
    Ok(models
        .iter()
        .enumerate()
        .map(|(mi, m)| {
            let errors: Vec<u64> = counts[mi * n_len..(mi + 1) * n_len].to_vec();
            let p_err: Vec<f64> = errors.iter().map(|&e| e as f64 / config.trials as f64).collect();
            ErrorCurve {
                framework: m.framework,
                beta: m.beta,
                n_values: config.n_values.clone(),
                ci_halfwidth: p_err.iter().map(|&p| binomial_halfwidth(p, config.trials)).collect(),
                p_err,
                errors,
                trials: config.trials,
                seed: config.seed,
            }
        })
        .collect())
}

fn count_errors(problem: &ClassificationProblem, models: &[Model], config: &ExperimentConfig) -> Result<Vec<u64>> {
    let prior =
        WeightedIndex::new(problem.prior.iter().copied()).map_err(|e| Error::validation("prior", e.to_string()))?;
    let classes: Vec<WeightedIndex<f64>> = problem
        .class_conditionals
        .outer_iter()
        .enumerate()
        .map(|(i, r)| {
            WeightedIndex::new(r.iter().copied())
                .map_err(|e| Error::validation(format!("class_conditionals[{i}]"), e.to_string()))
        })
        .collect::<Result<_>>()?;
    let max_n = *config.n_values.iter().max().expect("validated nonempty");
    let mut sizes: Vec<(usize, usize)> = config.n_values.iter().copied().enumerate().collect();
    sizes.sort_by_key(|&(_, n)| n);
    let n_x = problem.n_x();
    let n_len = config.n_values.len();
    let width = models.len() * n_len;
    let per_trial = |t: usize| -> Vec<u8> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(t as u64);
        let y = prior.sample(&mut rng);
        let xs: Vec<usize> = (0..max_n).map(|_| classes[y].sample(&mut rng)).collect();
        let mut out = vec![0u8; width];
        let mut counts = vec![0usize; n_x];
        let mut filled = 0;
        let mut empirical = vec![0.0; n_x];
        for &(slot, n) in &sizes {
            for &x in &xs[filled..n] {
                counts[x] += 1;
            }
            filled = n;
            for (e, &c) in empirical.iter_mut().zip(&counts) {
                *e = c as f64 / n as f64;
            }
            for (mi, m) in models.iter().enumerate() {
                let rep: Vec<f64> = m.encoder.t().dot(&Array1::from(empirical.clone())).to_vec();
                let guess = classify(&rep, &m.classes);
                out[mi * n_len + slot] = u8::from(guess != Some(y));
            }
        }
        out
    };
    Ok((0..config.trials)
        .into_par_iter()
        .map(per_trial)
        .fold(
            || vec![0u64; width],
            |mut acc, v| {
                for (a, b) in acc.iter_mut().zip(v) {
                    *a += b as u64;
                }
                acc
            },
        )
        .reduce(
            || vec![0u64; width],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        ))
}

/// Per-size average over curves of one framework, with the averaged half-width.
pub fn mean_over_beta(curves: &[ErrorCurve], framework: Framework) -> Option<(Vec<f64>, Vec<f64>)> {
    let sel: Vec<&ErrorCurve> = curves.iter().filter(|c| c.framework == framework).collect();
    let first = sel.first()?;
    let k = sel.len() as f64;
    let n = first.n_values.len();
    let mean = (0..n)
        .map(|i| sel.iter().map(|c| c.p_err[i]).sum::<f64>() / k)
        .collect();
    let hw = (0..n)
        .map(|i| sel.iter().map(|c| c.ci_halfwidth[i]).sum::<f64>() / k)
        .collect();
    Some((mean, hw))
}

/// Least-squares fit of `log p` against `n`. Returns `(slope, R²)`, or `None`
/// with fewer than two points or any zero or one probability.
pub fn log_linear_fit(n: &[usize], p: &[f64]) -> Option<(f64, f64)> {
    if n.len() != p.len() || n.len() < 2 || p.iter().any(|&v| !(v > 0.0)) {
        return None;
    }
    let xs: Vec<f64> = n.iter().map(|&v| v as f64).collect();
    let ys: Vec<f64> = p.iter().map(|v| v.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some((slope, r2))
}

pub const CSV_HEADER: [&str; 7] = ["framework", "beta", "n", "p_err", "ci_halfwidth", "trials", "seed"];

pub fn write_error_curves(path: &Path, curves: &[ErrorCurve]) -> Result<()> {
    let csv_err = Error::csv_at(path);
    let mut w = csv::Writer::from_path(path).map_err(&csv_err)?;
    w.write_record(CSV_HEADER).map_err(&csv_err)?;
    for c in curves {
        for (i, &n) in c.n_values.iter().enumerate() {
            w.write_record([
                c.framework.to_string(),
                c.beta.to_string(),
                n.to_string(),
                c.p_err[i].to_string(),
                c.ci_halfwidth[i].to_string(),
                c.trials.to_string(),
                c.seed.to_string(),
            ])
            .map_err(&csv_err)?;
        }
    }
    w.flush().map_err(Error::io_at(path))?;
    Ok(())
}

/// Writes the class conditionals as a problem file.
pub fn write_problem_json(path: &Path, problem: &ClassificationProblem) -> Result<()> {
    let rows: Vec<Vec<f64>> = problem.class_conditionals.outer_iter().map(|r| r.to_vec()).collect();
    let value = serde_json::json!({
        "class_conditionals": rows,
        "prior": problem.prior.to_vec(),
        "smoothing_epsilon": 0.0,
    });
    let mut f = std::fs::File::create(path).map_err(Error::io_at(path))?;
    serde_json::to_writer_pretty(&mut f, &value).map_err(Error::json_at(path))?;
    f.write_all(b"\n").map_err(Error::io_at(path))?;
    Ok(())
}
