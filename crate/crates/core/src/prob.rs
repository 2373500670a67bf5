//! Finite discrete probability primitives.
//!
//! Everything is in nats. Products of probabilities are accumulated as sums of
//! logs, and normalizations go through a max-shifted log-sum-exp.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Tolerance accepted on raw user input before renormalization.
pub const INPUT_NORM_TOL: f64 = 1e-6;

/// Default additive smoothing applied to `p(y|x)` at load time.
pub const DEFAULT_SMOOTHING: f64 = 1e-9;

/// Random variable labels for the axes of a [`ConditionalDistribution`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Var {
    X,
    XHat,
    Y,
    YHat,
}

/// Row-stochastic matrix `p(outcome | given)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalDistribution<T> {
    rows: Array2<T>,
    given: Var,
    outcome: Var,
}

impl<T: Real> ConditionalDistribution<T> {
    /// Validates nonnegativity and unit row sums (within [`Real::norm_tol`]).
    pub fn new(rows: Array2<T>, given: Var, outcome: Var) -> Result<Self> {
        let tol = T::norm_tol() * T::lit(rows.ncols().max(1) as f64);
        for (i, row) in rows.outer_iter().enumerate() {
            let mut sum = T::zero();
            for (j, &v) in row.iter().enumerate() {
                if !(v >= T::zero()) || !v.is_finite() {
                    return Err(Error::validation(
                        format!("conditional[{i}][{j}]"),
                        format!("entry {v} is not a finite nonnegative number"),
                    ));
                }
                sum = sum + v;
            }
            if (sum - T::one()).abs() > tol {
                return Err(Error::validation(
                    format!("conditional[{i}]"),
                    format!("row sums to {sum}, expected 1"),
                ));
            }
        }
        Ok(Self::from_normalized(rows, given, outcome))
    }

    /// Skips validation. Callers guarantee the rows are normalized.
    pub(crate) fn from_normalized(rows: Array2<T>, given: Var, outcome: Var) -> Self {
        debug_assert!(rows.outer_iter().all(|r| (r.sum() - T::one()).abs() < T::lit(1e-6)));
        let rows = if rows.is_standard_layout() {
            rows
        } else {
            rows.as_standard_layout().into_owned()
        };
        Self { rows, given, outcome }
    }

    /// Point-mass rows: `p(j | i) = [i == j]`.
    pub fn identity(n: usize, given: Var, outcome: Var) -> Self {
        Self::from_normalized(Array2::eye(n), given, outcome)
    }

    /// Every row uniform over `n_cols` outcomes.
    pub fn uniform(n_rows: usize, n_cols: usize, given: Var, outcome: Var) -> Self {
        let v = T::one() / T::lit(n_cols as f64);
        Self::from_normalized(Array2::from_elem((n_rows, n_cols), v), given, outcome)
    }

    pub fn rows(&self) -> ArrayView2<'_, T> {
        self.rows.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, T> {
        self.rows.row(i)
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.rows[[i, j]]
    }

    pub fn n_rows(&self) -> usize {
        self.rows.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.rows.ncols()
    }

    pub fn given(&self) -> Var {
        self.given
    }

    pub fn outcome(&self) -> Var {
        self.outcome
    }

    pub fn into_rows(self) -> Array2<T> {
        self.rows
    }

    /// Largest absolute entry-wise difference to another matrix of equal shape.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.rows
            .iter()
            .zip(other.rows.iter())
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }
}

/// The rule `p(x, y)` on finite alphabets.
///
/// Immutable once built. The conditional `p(y|x)` is strictly positive and
/// cached together with its logarithm.
#[derive(Clone, Debug, PartialEq)]
pub struct JointDistribution<T> {
    p_xy: Array2<T>,
    p_x: Array1<T>,
    p_y: Array1<T>,
    p_y_given_x: Array2<T>,
    log_p_y_given_x: Array2<T>,
}

impl<T: Real> JointDistribution<T> {
    /// Builds the joint from an input marginal and a conditional table.
    ///
    /// Rows (and `p_x`) must be normalized within [`INPUT_NORM_TOL`]; they are
    /// renormalized exactly. A positive `smoothing` adds `smoothing` to every
    /// conditional entry before renormalizing; with `smoothing == 0` any zero
    /// conditional is rejected.
    pub fn from_conditional(p_x: &[T], p_y_given_x: Array2<T>, smoothing: T) -> Result<Self> {
        let (n_x, n_y) = p_y_given_x.dim();
        if n_x == 0 || n_y == 0 {
            return Err(Error::validation("p_y_given_x", "empty table"));
        }
        if p_x.len() != n_x {
            return Err(Error::DimensionMismatch {
                context: "p_x length vs p_y_given_x rows",
                expected: n_x,
                actual: p_x.len(),
            });
        }
        if !(smoothing >= T::zero()) || !smoothing.is_finite() {
            return Err(Error::validation(
                "smoothing_epsilon",
                format!("must be a finite nonnegative number, got {smoothing}"),
            ));
        }
        let p_x = normalize_input(p_x, "p_x")?;
        if let Some(i) = p_x.iter().position(|&v| v <= T::zero()) {
            return Err(Error::validation(
                format!("p_x[{i}]"),
                "zero-probability inputs carry no information and are rejected",
            ));
        }
        let mut cond = Array2::zeros((n_x, n_y));
        for (i, row) in p_y_given_x.outer_iter().enumerate() {
            let row_vec: Vec<T> = row.iter().copied().collect();
            let row = normalize_input(&row_vec, &format!("p_y_given_x[{i}]"))?;
            let denom = T::one() + smoothing * T::lit(n_y as f64);
            for (j, &v) in row.iter().enumerate() {
                let s = (v + smoothing) / denom;
                if s <= T::zero() {
                    return Err(Error::validation(
                        format!("p_y_given_x[{i}][{j}]"),
                        "zero conditional probability; enable smoothing",
                    ));
                }
                cond[[i, j]] = s;
            }
            // exact renormalization after smoothing
            let sum: T = cond.row(i).sum();
            cond.row_mut(i).mapv_inplace(|v| v / sum);
        }
        let p_xy = Array2::from_shape_fn((n_x, n_y), |(i, j)| p_x[i] * cond[[i, j]]);
        Ok(Self::assemble(p_xy, Array1::from(p_x), cond))
    }

    /// Builds from a full joint table, which must already be normalized
    /// within [`Real::norm_tol`] and have strictly positive conditionals.
    pub fn from_joint(p_xy: Array2<T>) -> Result<Self> {
        validate_joint(p_xy.view())?;
        let p_x: Array1<T> = p_xy.sum_axis(Axis(1));
        if let Some(i) = p_x.iter().position(|&v| v <= T::zero()) {
            return Err(Error::validation(
                format!("p_xy[{i}]"),
                "zero-probability inputs carry no information and are rejected",
            ));
        }
        let mut cond = p_xy.clone();
        for (mut row, &m) in cond.outer_iter_mut().zip(p_x.iter()) {
            row.mapv_inplace(|v| v / m);
        }
        if let Some(((i, j), _)) = cond.indexed_iter().find(|(_, &v)| v <= T::zero()) {
            return Err(Error::validation(
                format!("p_xy[{i}][{j}]"),
                "zero conditional probability; enable smoothing",
            ));
        }
        Ok(Self::assemble(p_xy, p_x, cond))
    }

    fn assemble(p_xy: Array2<T>, p_x: Array1<T>, cond: Array2<T>) -> Self {
        let p_y = p_xy.sum_axis(Axis(0));
        let log_cond = cond.mapv(|v| v.ln());
        Self {
            p_xy,
            p_x,
            p_y,
            p_y_given_x: cond,
            log_p_y_given_x: log_cond,
        }
    }

    pub fn n_x(&self) -> usize {
        self.p_xy.nrows()
    }

    pub fn n_y(&self) -> usize {
        self.p_xy.ncols()
    }

    pub fn p_xy(&self) -> ArrayView2<'_, T> {
        self.p_xy.view()
    }

    pub fn p_x(&self) -> ArrayView1<'_, T> {
        self.p_x.view()
    }

    pub fn p_y(&self) -> ArrayView1<'_, T> {
        self.p_y.view()
    }

    pub fn p_y_given_x(&self) -> ArrayView2<'_, T> {
        self.p_y_given_x.view()
    }

    pub fn log_p_y_given_x(&self) -> ArrayView2<'_, T> {
        self.log_p_y_given_x.view()
    }

    /// `p(y|x)` as a conditional distribution object.
    pub fn rule(&self) -> ConditionalDistribution<T> {
        ConditionalDistribution::from_normalized(self.p_y_given_x.clone(), Var::X, Var::Y)
    }

    /// `p(x|y)`, rows indexed by `y`.
    pub fn p_x_given_y(&self) -> ConditionalDistribution<T> {
        let mut rows = self.p_xy.t().to_owned();
        for (mut row, &m) in rows.outer_iter_mut().zip(self.p_y.iter()) {
            row.mapv_inplace(|v| v / m);
        }
        ConditionalDistribution::from_normalized(rows, Var::Y, Var::X)
    }

    /// `I(X;Y)` in nats.
    pub fn mutual_information(&self) -> T {
        mi_unchecked(self.p_xy.view())
    }

    pub fn entropy_x(&self) -> T {
        entropy(self.p_x.as_slice().expect("contiguous"))
    }

    pub fn entropy_y(&self) -> T {
        entropy(self.p_y.as_slice().expect("contiguous"))
    }
}

fn normalize_input<T: Real>(v: &[T], field: &str) -> Result<Vec<T>> {
    let mut sum = T::zero();
    for (i, &p) in v.iter().enumerate() {
        if !(p >= T::zero()) || !p.is_finite() {
            return Err(Error::validation(
                format!("{field}[{i}]"),
                format!("probability {p} is negative or not finite"),
            ));
        }
        sum = sum + p;
    }
    if (sum - T::one()).abs() > T::lit(INPUT_NORM_TOL) {
        return Err(Error::validation(
            field.to_string(),
            format!("sums to {sum}, expected 1 within {INPUT_NORM_TOL:e}"),
        ));
    }
    Ok(v.iter().map(|&p| p / sum).collect())
}

fn validate_joint<T: Real>(m: ArrayView2<'_, T>) -> Result<()> {
    let mut sum = T::zero();
    for ((i, j), &v) in m.indexed_iter() {
        if !(v >= T::zero()) || !v.is_finite() {
            return Err(Error::validation(
                format!("joint[{i}][{j}]"),
                format!("entry {v} is not a finite nonnegative number"),
            ));
        }
        sum = sum + v;
    }
    let tol = T::norm_tol() * T::lit((m.len().max(1) as f64).sqrt());
    if (sum - T::one()).abs() > tol {
        return Err(Error::validation("joint", format!("total mass {sum}, expected 1")));
    }
    Ok(())
}

fn validate_vector<T: Real>(p: &[T], field: &str) -> Result<()> {
    let mut sum = T::zero();
    for (i, &v) in p.iter().enumerate() {
        if !(v >= T::zero()) || !v.is_finite() {
            return Err(Error::validation(
                format!("{field}[{i}]"),
                format!("entry {v} is not a finite nonnegative number"),
            ));
        }
        sum = sum + v;
    }
    let tol = T::norm_tol() * T::lit(p.len().max(1) as f64);
    if (sum - T::one()).abs() > tol {
        return Err(Error::validation(
            field.to_string(),
            format!("sums to {sum}, expected 1"),
        ));
    }
    Ok(())
}

/// Mutual information of a joint table in nats. Zero cells contribute zero.
pub fn mutual_information<T: Real>(joint: ArrayView2<'_, T>) -> Result<T> {
    validate_joint(joint)?;
    Ok(mi_unchecked(joint))
}

pub(crate) fn mi_unchecked<T: Real>(joint: ArrayView2<'_, T>) -> T {
    let pa = joint.sum_axis(Axis(1));
    let pb = joint.sum_axis(Axis(0));
    let mut mi = T::zero();
    for ((i, j), &p) in joint.indexed_iter() {
        if p > T::zero() {
            mi = mi + p * (p / (pa[i] * pb[j])).ln();
        }
    }
    mi.max(T::zero())
}

/// Shannon entropy in nats.
pub fn entropy<T: Real>(p: &[T]) -> T {
    -p.iter().map(|&v| v.xlogx()).sum::<T>()
}

/// `D[p ‖ q]` in nats.
///
/// Fails with [`Error::DivergenceUndefined`] when `q` vanishes somewhere `p`
/// does not, and with a validation error for malformed inputs.
pub fn kl_divergence<T: Real>(p: &[T], q: &[T]) -> Result<T> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            context: "kl_divergence",
            expected: p.len(),
            actual: q.len(),
        });
    }
    validate_vector(p, "p")?;
    validate_vector(q, "q")?;
    kl_unchecked(p.iter().copied(), q.iter().copied())
}

pub(crate) fn kl_unchecked<T: Real>(p: impl Iterator<Item = T>, q: impl Iterator<Item = T>) -> Result<T> {
    let mut d = T::zero();
    for (index, (a, b)) in p.zip(q).enumerate() {
        if a > T::zero() {
            if b <= T::zero() {
                return Err(Error::DivergenceUndefined {
                    index,
                    mass: a.as_f64(),
                });
            }
            d = d + a * (a / b).ln();
        }
    }
    Ok(d.max(T::zero()))
}

/// `log Σ exp(v)` with the max shift. Returns `-inf` for an empty or all
/// `-inf` input.
pub fn log_sum_exp<T: Real>(v: impl IntoIterator<Item = T> + Clone) -> T {
    let m = v.clone().into_iter().fold(T::neg_infinity(), |a, b| a.max(b));
    if !m.is_finite() {
        return m;
    }
    m + v.into_iter().map(|x| (x - m).exp()).sum::<T>().ln()
}

/// In-place softmax of a row of logits; returns the log normalizer.
pub(crate) fn softmax_row<T: Real>(row: &mut [T]) -> T {
    let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
    m + sum.ln()
}

fn check_inverse_encoder<T: Real>(
    joint: &JointDistribution<T>,
    inverse_encoder: &ConditionalDistribution<T>,
) -> Result<()> {
    if inverse_encoder.n_cols() != joint.n_x() {
        return Err(Error::DimensionMismatch {
            context: "inverse encoder columns vs n_x",
            expected: joint.n_x(),
            actual: inverse_encoder.n_cols(),
        });
    }
    Ok(())
}

/// Bayes-optimal decoder `p(y|x̂) = Σ_x p(y|x) p(x|x̂)`.
pub fn bayes_decoder<T: Real>(
    joint: &JointDistribution<T>,
    inverse_encoder: &ConditionalDistribution<T>,
) -> Result<ConditionalDistribution<T>> {
    check_inverse_encoder(joint, inverse_encoder)?;
    let rows = inverse_encoder.rows().dot(&joint.p_y_given_x());
    Ok(ConditionalDistribution::from_normalized(rows, Var::XHat, Var::Y))
}

/// Geometric-mean decoder `p(y|x̂) ∝ Π_x p(y|x)^{p(x|x̂)}`.
///
/// Also returns `log Z_{y|x̂}` per row.
pub fn geometric_decoder<T: Real>(
    joint: &JointDistribution<T>,
    inverse_encoder: &ConditionalDistribution<T>,
) -> Result<(ConditionalDistribution<T>, Vec<T>)> {
    check_inverse_encoder(joint, inverse_encoder)?;
    let (rows, log_z) = geometric_from_logs(inverse_encoder.rows(), joint.log_p_y_given_x());
    Ok((ConditionalDistribution::from_normalized(rows, Var::XHat, Var::Y), log_z))
}

/// Geometric mixture of arbitrary rows: `out[k] ∝ Π_i rows[i]^{weights[k][i]}`.
///
/// Unlike [`geometric_decoder`] the rows are not known to be positive, so a
/// zero entry in a row that carries positive weight is an error.
pub fn geometric_mixture<T: Real>(weights: ArrayView2<'_, T>, rows: ArrayView2<'_, T>) -> Result<(Array2<T>, Vec<T>)> {
    if weights.ncols() != rows.nrows() {
        return Err(Error::DimensionMismatch {
            context: "geometric_mixture weights vs rows",
            expected: rows.nrows(),
            actual: weights.ncols(),
        });
    }
    for (k, w) in weights.outer_iter().enumerate() {
        for (i, &wi) in w.iter().enumerate() {
            if wi > T::zero() {
                if let Some(index) = rows.row(i).iter().position(|&v| v <= T::zero()) {
                    let _ = k;
                    return Err(Error::DivergenceUndefined {
                        index,
                        mass: wi.as_f64(),
                    });
                }
            }
        }
    }
    // zero-weight rows may contain zeros; mask their logs to 0
    let logs = rows.mapv(|v| if v > T::zero() { v.ln() } else { T::zero() });
    Ok(geometric_from_logs(weights, logs.view()))
}

pub(crate) fn geometric_from_logs<T: Real>(
    weights: ArrayView2<'_, T>,
    log_rows: ArrayView2<'_, T>,
) -> (Array2<T>, Vec<T>) {
    let mut out = weights.dot(&log_rows);
    let mut log_z = Vec::with_capacity(out.nrows());
    for mut row in out.outer_iter_mut() {
        let slice = row.as_slice_mut().expect("standard layout");
        log_z.push(softmax_row(slice));
    }
    (out, log_z)
}
