//! Fixed-β Information Bottleneck.

use ndarray::Array1;

use crate::error::{Error, Result};
use crate::prob::{self, ConditionalDistribution, JointDistribution, Var};
use crate::scalar::Real;
use crate::solve::{self, SolveOptions, SolveReport};
use crate::state::{BottleneckState, Framework};

/// `D[p(y|x) ‖ p(y|x̂)]`.
pub fn ib_distortion<T: Real>(
    state: &BottleneckState<T>,
    joint: &JointDistribution<T>,
    x: usize,
    xhat: usize,
) -> Result<T> {
    check_indices(state, joint, x, xhat)?;
    prob::kl_unchecked(
        joint.p_y_given_x().row(x).iter().copied(),
        state.decoder.row(xhat).iter().copied(),
    )
}

pub(crate) fn check_indices<T: Real>(
    state: &BottleneckState<T>,
    joint: &JointDistribution<T>,
    x: usize,
    xhat: usize,
) -> Result<()> {
    if x >= joint.n_x() {
        return Err(Error::validation(
            "x",
            format!("index {x} out of range 0..{}", joint.n_x()),
        ));
    }
    if xhat >= state.n_xhat() {
        return Err(Error::validation(
            "xhat",
            format!("index {xhat} out of range 0..{}", state.n_xhat()),
        ));
    }
    if state.decoder.n_cols() != joint.n_y() {
        return Err(Error::DimensionMismatch {
            context: "decoder columns vs n_y",
            expected: joint.n_y(),
            actual: state.decoder.n_cols(),
        });
    }
    Ok(())
}

/// One encoder update `p(x̂|x) ∝ p(x̂) exp(−β d_IB(x, x̂))` from the state's
/// marginal and decoder. Returns the new encoder and `log Z(x; β)` per `x`.
pub fn ib_encoder_update<T: Real>(
    state: &BottleneckState<T>,
    joint: &JointDistribution<T>,
) -> Result<(ConditionalDistribution<T>, Array1<T>)> {
    encoder_update(state, joint, Framework::Ib)
}

pub(crate) fn encoder_update<T: Real>(
    state: &BottleneckState<T>,
    joint: &JointDistribution<T>,
    framework: Framework,
) -> Result<(ConditionalDistribution<T>, Array1<T>)> {
    if state.decoder.n_cols() != joint.n_y() || state.encoder.n_rows() != joint.n_x() {
        return Err(Error::DimensionMismatch {
            context: "state vs problem",
            expected: joint.n_x(),
            actual: state.encoder.n_rows(),
        });
    }
    if framework == Framework::Ib && state.decoder.rows().iter().any(|&v| v <= T::zero()) {
        let index = state.decoder.rows().iter().position(|&v| v <= T::zero()).unwrap_or(0);
        return Err(Error::DivergenceUndefined { index, mass: f64::NAN });
    }
    let dist = solve::distortion_matrix(joint, framework, &state.decoder.rows().to_owned());
    let log_m = state
        .marginal
        .mapv(|m| if m > T::zero() { m.ln() } else { T::neg_infinity() });
    let enc = solve::encoder_step(state.beta, &state.marginal, &dist)?;
    let log_z = Array1::from_shape_fn(joint.n_x(), |x| {
        prob::log_sum_exp((0..state.n_xhat()).map(|j| log_m[j] - state.beta * dist[[x, j]]))
    });
    Ok((ConditionalDistribution::from_normalized(enc, Var::X, Var::XHat), log_z))
}

/// Generalized Blahut–Arimoto with the Bayes decoder.
pub fn ib_solve<T: Real>(
    joint: &JointDistribution<T>,
    beta: T,
    init: &BottleneckState<T>,
    opts: &SolveOptions,
) -> Result<SolveReport<T>> {
    solve::solve(joint, Framework::Ib, beta, init, opts)
}

/// `E_{p(x, x̂)} d_IB(x, x̂)`.
pub fn ib_expected_distortion<T: Real>(state: &BottleneckState<T>, joint: &JointDistribution<T>) -> T {
    let dist = solve::distortion_matrix(joint, Framework::Ib, &state.decoder.rows().to_owned());
    solve::expected(joint, &state.encoder.rows().to_owned(), &dist)
}
