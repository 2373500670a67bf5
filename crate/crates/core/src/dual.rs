//! Fixed-β dual Information Bottleneck.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ib;
use crate::prob::{self, ConditionalDistribution, JointDistribution};
use crate::scalar::Real;
use crate::solve::{self, SolveOptions, SolveReport};
use crate::state::{BottleneckState, Framework};

/// Split of the expected dual distortion into a prediction-information gap
/// and a mean divergence of the mixture predictor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualDecomposition<T> {
    /// `I(X̂;Ŷ) − I(X;Ŷ)`.
    pub term_a: T,
    /// `E_{p(x)} D[p(ŷ|x) ‖ p(y|x)]`.
    pub term_b: T,
    pub expected_distortion: T,
}

impl<T: Real> DualDecomposition<T> {
    pub fn residual(&self) -> T {
        (self.expected_distortion - self.term_a - self.term_b).abs()
    }
}

/// `D[p(y|x̂) ‖ p(y|x)]`.
pub fn dual_distortion<T: Real>(
    state: &BottleneckState<T>,
    joint: &JointDistribution<T>,
    x: usize,
    xhat: usize,
) -> Result<T> {
    ib::check_indices(state, joint, x, xhat)?;
    prob::kl_unchecked(
        state.decoder.row(xhat).iter().copied(),
        joint.p_y_given_x().row(x).iter().copied(),
    )
}

/// One encoder update `p(x̂|x) ∝ p(x̂) exp(−β d_dual(x, x̂))`. Returns the new
/// encoder and `log Z(x; β)` per `x`.
pub fn dual_encoder_update<T: Real>(
    state: &BottleneckState<T>,
    joint: &JointDistribution<T>,
) -> Result<(ConditionalDistribution<T>, Array1<T>)> {
    ib::encoder_update(state, joint, Framework::Dual)
}

/// Generalized Blahut–Arimoto with the geometric-mean decoder.
pub fn dual_solve<T: Real>(
    joint: &JointDistribution<T>,
    beta: T,
    init: &BottleneckState<T>,
    opts: &SolveOptions,
) -> Result<SolveReport<T>> {
    solve::solve(joint, Framework::Dual, beta, init, opts)
}

/// `E_{p(x, x̂)} d_dual(x, x̂)`.
pub fn dual_expected_distortion<T: Real>(state: &BottleneckState<T>, joint: &JointDistribution<T>) -> T {
    let dist = solve::distortion_matrix(joint, Framework::Dual, &state.decoder.rows().to_owned());
    solve::expected(joint, &state.encoder.rows().to_owned(), &dist)
}

/// `log Z_{y|x̂}` of the geometric decoder built from the state's encoder.
/// Dead clusters report zero.
pub fn decoder_log_partition<T: Real>(state: &BottleneckState<T>, joint: &JointDistribution<T>) -> Vec<T> {
    let inv = state.inverse_encoder(joint);
    let (_, mut log_z) = prob::geometric_from_logs(inv.view(), joint.log_p_y_given_x());
    for (k, z) in log_z.iter_mut().enumerate() {
        if !state.is_live(k) {
            *z = T::zero();
        }
    }
    log_z
}

/// `−E_{p(x̂)} log Z_{y|x̂}`, which equals the expected dual distortion at a
/// fixed point.
pub fn mean_neg_log_partition<T: Real>(state: &BottleneckState<T>, joint: &JointDistribution<T>) -> T {
    let log_z = decoder_log_partition(state, joint);
    -state.marginal.iter().zip(log_z.iter()).map(|(&m, &z)| m * z).sum::<T>()
}

pub fn dual_decomposition<T: Real>(state: &BottleneckState<T>, joint: &JointDistribution<T>) -> DualDecomposition<T> {
    decomposition_parts(
        joint,
        &state.encoder.rows().to_owned(),
        &state.marginal,
        &state.decoder.rows().to_owned(),
    )
}

pub(crate) fn decomposition_parts<T: Real>(
    joint: &JointDistribution<T>,
    enc: &Array2<T>,
    marginal: &Array1<T>,
    dec: &Array2<T>,
) -> DualDecomposition<T> {
    let p_x = joint.p_x();
    // p(ŷ|x) = Σ_x̂ p(y=ŷ|x̂) p(x̂|x)
    let q = enc.dot(dec);
    let xy = Array2::from_shape_fn(q.raw_dim(), |(x, y)| p_x[x] * q[[x, y]]);
    let hy = Array2::from_shape_fn(dec.raw_dim(), |(k, y)| marginal[k] * dec[[k, y]]);
    let term_a = prob::mi_unchecked(hy.view()) - prob::mi_unchecked(xy.view());
    let mut term_b = T::zero();
    for (x, row) in q.outer_iter().enumerate() {
        let d: T = row
            .iter()
            .zip(joint.log_p_y_given_x().row(x).iter())
            .map(|(&a, &lp)| if a > T::zero() { a * (a.ln() - lp) } else { T::zero() })
            .sum();
        term_b = term_b + p_x[x] * d;
    }
    let dist = solve::distortion_matrix(joint, Framework::Dual, dec);
    DualDecomposition {
        term_a,
        term_b,
        expected_distortion: solve::expected(joint, enc, &dist),
    }
}
