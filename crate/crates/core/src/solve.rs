//! The alternating-minimization loop shared by both frameworks.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::dual;
use crate::error::{Error, Result};
use crate::prob::{self, ConditionalDistribution, JointDistribution, Var};
use crate::scalar::Real;
use crate::state::{self, BottleneckState, Framework, DEAD_CLUSTER_MASS};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 200_000;

/// Dual decomposition residual accepted inside the loop.
const DECOMPOSITION_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Stop once the largest encoder entry change falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Keep the per-iteration functional values.
    pub record_trace: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            record_trace: true,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(Error::validation("tol", "must be a positive number"));
        }
        if self.max_iter == 0 {
            return Err(Error::validation("max_iter", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport<T> {
    pub state: BottleneckState<T>,
    pub iterations: usize,
    pub converged: bool,
    /// Functional after each decoder update. Empty unless recorded.
    pub functional_trace: Vec<T>,
    /// Functional at the returned state.
    pub functional: T,
    /// `E[d]` at the returned state under the framework's distortion.
    pub expected_distortion: T,
    pub i_x: T,
    pub i_y: T,
}

/// Iterates encoder → marginal → decoder from `init` at `beta`.
///
/// The framework is taken from `framework`, not from `init`. Clusters whose
/// marginal drops below the dead-cluster threshold keep their last decoder
/// row and stay indexed.
pub fn solve<T: Real>(
    joint: &JointDistribution<T>,
    framework: Framework,
    beta: T,
    init: &BottleneckState<T>,
    opts: &SolveOptions,
) -> Result<SolveReport<T>> {
    opts.validate()?;
    if !(beta >= T::zero()) || !beta.is_finite() {
        return Err(Error::validation(
            "beta",
            format!("must be finite and nonnegative, got {beta}"),
        ));
    }
    if init.encoder.n_rows() != joint.n_x() || init.decoder.n_cols() != joint.n_y() {
        return Err(Error::DimensionMismatch {
            context: "initial state vs problem",
            expected: joint.n_x(),
            actual: init.encoder.n_rows(),
        });
    }
    let tol = T::lit(opts.tol);
    let mut enc = init.encoder.rows().to_owned();
    let mut dec = init.decoder.rows().to_owned();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        iterations += 1;
        let marginal = joint.p_x().dot(&enc);
        let live = live_mask(&marginal);
        dec = decoder_step(joint, framework, &enc, &marginal, &live, dec);
        let dist = distortion_matrix(joint, framework, &dec);

        if opts.record_trace {
            trace.push(functional_of(joint, framework, beta, &enc, &marginal, &dist));
        }
        if framework == Framework::Dual && cfg!(debug_assertions) && iterations % 100 == 0 {
            check_decomposition(joint, &enc, &marginal, &dec)?;
        }

        let next = encoder_step(beta, &marginal, &dist)?;
        let change = next
            .iter()
            .zip(enc.iter())
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()));
        enc = next;
        if change < tol {
            converged = true;
            break;
        }
    }

    let encoder = ConditionalDistribution::from_normalized(enc, Var::X, Var::XHat);
    let fallback = ConditionalDistribution::from_normalized(dec, Var::XHat, Var::Y);
    let state = BottleneckState::from_encoder(joint, framework, beta, encoder, Some(&fallback))?;
    let dist = distortion_matrix(joint, framework, &state.decoder.rows().to_owned());
    let enc = state.encoder.rows().to_owned();
    if framework == Framework::Dual {
        check_decomposition(joint, &enc, &state.marginal, &state.decoder.rows().to_owned())?;
    }
    let functional = functional_of(joint, framework, beta, &enc, &state.marginal, &dist);
    let expected_distortion = expected(joint, &enc, &dist);
    let i_x = state.i_x(joint);
    let i_y = state.i_y(joint);
    Ok(SolveReport {
        state,
        iterations,
        converged,
        functional_trace: trace,
        functional,
        expected_distortion,
        i_x,
        i_y,
    })
}

fn live_mask<T: Real>(marginal: &Array1<T>) -> Vec<bool> {
    marginal.iter().map(|&m| m >= T::lit(DEAD_CLUSTER_MASS)).collect()
}

fn decoder_step<T: Real>(
    joint: &JointDistribution<T>,
    framework: Framework,
    enc: &Array2<T>,
    marginal: &Array1<T>,
    live: &[bool],
    previous: Array2<T>,
) -> Array2<T> {
    let encoder = ConditionalDistribution::from_normalized(enc.clone(), Var::X, Var::XHat);
    let inverse = state::inverse_rows(joint, &encoder, marginal);
    let mut next = match framework {
        Framework::Ib => inverse.dot(&joint.p_y_given_x()),
        Framework::Dual => prob::geometric_from_logs(inverse.view(), joint.log_p_y_given_x()).0,
    };
    for (k, &alive) in live.iter().enumerate() {
        if !alive {
            next.row_mut(k).assign(&previous.row(k));
        }
    }
    next
}

/// `d[x, x̂]` for every pair under the framework's distortion.
pub(crate) fn distortion_matrix<T: Real>(
    joint: &JointDistribution<T>,
    framework: Framework,
    decoder: &Array2<T>,
) -> Array2<T> {
    let p = joint.p_y_given_x();
    let lp = joint.log_p_y_given_x();
    let n_x = p.nrows();
    let k = decoder.nrows();
    let log_dec = decoder.mapv(|v| v.ln());
    let mut d = Array2::zeros((n_x, k));
    match framework {
        Framework::Ib => {
            let neg_h: Vec<T> = p.outer_iter().map(|r| r.iter().map(|&v| v.xlogx()).sum()).collect();
            let cross = p.dot(&log_dec.t());
            for x in 0..n_x {
                for j in 0..k {
                    d[[x, j]] = (neg_h[x] - cross[[x, j]]).max(T::zero());
                }
            }
        }
        Framework::Dual => {
            let neg_h: Vec<T> = decoder
                .outer_iter()
                .map(|r| r.iter().map(|&v| v.xlogx()).sum())
                .collect();
            let cross = lp.dot(&decoder.t());
            for x in 0..n_x {
                for j in 0..k {
                    d[[x, j]] = (neg_h[j] - cross[[x, j]]).max(T::zero());
                }
            }
        }
    }
    d
}

/// Row-wise softmax of `ln p(x̂) − β d(x, x̂)`.
pub(crate) fn encoder_step<T: Real>(beta: T, marginal: &Array1<T>, dist: &Array2<T>) -> Result<Array2<T>> {
    let log_m: Vec<T> = marginal
        .iter()
        .map(|&m| if m > T::zero() { m.ln() } else { T::neg_infinity() })
        .collect();
    let mut next = Array2::zeros(dist.raw_dim());
    for (x, (row, mut out)) in dist.outer_iter().zip(next.outer_iter_mut()).enumerate() {
        let out = out.as_slice_mut().expect("standard layout");
        for (j, (&d, o)) in row.iter().zip(out.iter_mut()).enumerate() {
            *o = log_m[j] - beta * d;
        }
        let log_z = prob::softmax_row(out);
        if !log_z.is_finite() || out.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateRow { row: x });
        }
    }
    Ok(next)
}

pub(crate) fn expected<T: Real>(joint: &JointDistribution<T>, enc: &Array2<T>, dist: &Array2<T>) -> T {
    let mut acc = T::zero();
    for (x, (er, dr)) in enc.outer_iter().zip(dist.outer_iter()).enumerate() {
        let inner: T = er.iter().zip(dr.iter()).map(|(&e, &d)| e * d).sum();
        acc = acc + joint.p_x()[x] * inner;
    }
    acc
}

/// IB: `I_x + β E[d] − β I(X;Y)`, which is `I_x − β I_y` once the decoder is
/// Bayes-consistent. Dual: `I_x + β E[d]`.
fn functional_of<T: Real>(
    joint: &JointDistribution<T>,
    framework: Framework,
    beta: T,
    enc: &Array2<T>,
    marginal: &Array1<T>,
    dist: &Array2<T>,
) -> T {
    let i_x = state::compression_information(joint, enc.view(), marginal.view());
    let e = expected(joint, enc, dist);
    match framework {
        Framework::Ib => i_x + beta * e - beta * joint.mutual_information(),
        Framework::Dual => i_x + beta * e,
    }
}

fn check_decomposition<T: Real>(
    joint: &JointDistribution<T>,
    enc: &Array2<T>,
    marginal: &Array1<T>,
    dec: &Array2<T>,
) -> Result<()> {
    let d = dual::decomposition_parts(joint, enc, marginal, dec);
    let residual = (d.expected_distortion - d.term_a - d.term_b).abs();
    let tol = DECOMPOSITION_TOL.max(T::epsilon().as_f64() * 1e3);
    if residual.as_f64() > tol || d.term_b.as_f64() < -1e-12 {
        return Err(Error::Invariant(format!(
            "dual decomposition residual {:e}, term_b {}",
            residual.as_f64(),
            d.term_b
        )));
    }
    Ok(())
}

/// Functional and expected distortion of an arbitrary state.
pub fn evaluate<T: Real>(joint: &JointDistribution<T>, state: &BottleneckState<T>) -> (T, T) {
    let dec = state.decoder.rows().to_owned();
    let enc = state.encoder.rows().to_owned();
    let dist = distortion_matrix(joint, state.framework, &dec);
    (
        functional_of(joint, state.framework, state.beta, &enc, &state.marginal, &dist),
        expected(joint, &enc, &dist),
    )
}
