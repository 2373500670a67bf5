//! Dual bottleneck for exponential-family rules
//! `p(y|x) = exp(−Σ_r λ^r(y) A_r(x) − λ⁰_x)`.
//!
//! The iteration only touches the `d`-dimensional cluster statistics
//! `A_β(x̂) = Σ_x p(x|x̂) A(x)` and `λ_β(x̂) = Σ_y p(y|x̂) λ(y)`; the full
//! conditional table is never formed inside the loop.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{self, ConditionalDistribution, JointDistribution, Var};
use crate::scalar::Real;
use crate::solve::SolveOptions;
use crate::state::{self, BottleneckState, Framework, DEAD_CLUSTER_MASS};

/// Reconstruction residual above which a rule is not representable.
pub const EXACT_FIT_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct ExpFamilyModel<T> {
    /// `A_r(x)`, shape `n_x × d`.
    pub features: Array2<T>,
    /// `λ^r(y)`, shape `n_y × d`.
    pub params: Array2<T>,
    /// `λ⁰_x = log Σ_y exp(−Σ_r λ^r(y) A_r(x))`.
    pub normalizers: Array1<T>,
    pub p_x: Array1<T>,
}

/// How to obtain the features when converting a tabulated rule.
#[derive(Clone, Debug, PartialEq)]
pub enum FeatureSpec<T> {
    /// Binary labels only: `d = 1`, `λ¹ = (0, 1)`, `A₁(x) = −log(p(y₁|x)/p(y₀|x))`.
    Canonical,
    /// `d = 0`; represents exactly the rules that ignore `x`.
    Constant,
    Given {
        features: Array2<T>,
        params: Array2<T>,
    },
}

impl<T: Real> ExpFamilyModel<T> {
    pub fn new(features: Array2<T>, params: Array2<T>, p_x: &[T]) -> Result<Self> {
        if features.ncols() != params.ncols() {
            return Err(Error::DimensionMismatch {
                context: "feature count vs parameter count",
                expected: features.ncols(),
                actual: params.ncols(),
            });
        }
        if features.nrows() != p_x.len() {
            return Err(Error::DimensionMismatch {
                context: "features rows vs p_x length",
                expected: features.nrows(),
                actual: p_x.len(),
            });
        }
        if params.nrows() == 0 || features.nrows() == 0 {
            return Err(Error::validation("exp_family", "empty alphabet"));
        }
        if let Some(((i, j), _)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::validation(
                format!("exp_family.features[{i}][{j}]"),
                "not finite",
            ));
        }
        if let Some(((i, j), _)) = params.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::validation(format!("exp_family.params[{i}][{j}]"), "not finite"));
        }
        let joint_px = JointDistribution::from_conditional(p_x, Array2::from_elem((p_x.len(), 1), T::one()), T::zero())
            .map_err(|e| match e {
                Error::Validation { field, reason } => Error::validation(format!("exp_family.{field}"), reason),
                other => other,
            })?;
        let logits = features.dot(&params.t()).mapv(|v| -v);
        let normalizers = logits
            .outer_iter()
            .map(|r| prob::log_sum_exp(r.iter().copied()))
            .collect();
        Ok(Self {
            features,
            params,
            normalizers,
            p_x: joint_px.p_x().to_owned(),
        })
    }

    /// Builds a model for a tabulated rule and checks that it reproduces it.
    pub fn from_conditional(joint: &JointDistribution<T>, spec: FeatureSpec<T>) -> Result<Self> {
        let p_x = joint.p_x().to_vec();
        let model = match spec {
            FeatureSpec::Canonical => {
                if joint.n_y() != 2 {
                    return Err(Error::validation(
                        "exp_family",
                        "the canonical construction needs a binary label",
                    ));
                }
                let l = joint.log_p_y_given_x();
                let a = Array2::from_shape_fn((joint.n_x(), 1), |(x, _)| l[[x, 0]] - l[[x, 1]]);
                let params = ndarray::array![[T::zero()], [T::one()]];
                Self::new(a, params, &p_x)?
            }
            FeatureSpec::Constant => Self::new(Array2::zeros((joint.n_x(), 0)), Array2::zeros((joint.n_y(), 0)), &p_x)?,
            FeatureSpec::Given { features, params } => Self::new(features, params, &p_x)?,
        };
        if model.n_y() != joint.n_y() {
            return Err(Error::DimensionMismatch {
                context: "params rows vs n_y",
                expected: joint.n_y(),
                actual: model.n_y(),
            });
        }
        let residual = model
            .conditional()
            .iter()
            .zip(joint.p_y_given_x().iter())
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()));
        if residual.as_f64() > EXACT_FIT_TOL {
            return Err(Error::ExactFit {
                max_residual: residual.as_f64(),
            });
        }
        Ok(model)
    }

    pub fn n_x(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_y(&self) -> usize {
        self.params.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// The rule `p(y|x)` the model represents.
    pub fn conditional(&self) -> Array2<T> {
        let mut out = self.features.dot(&self.params.t()).mapv(|v| -v);
        for (mut row, &z) in out.outer_iter_mut().zip(self.normalizers.iter()) {
            row.mapv_inplace(|v| (v - z).exp());
        }
        out
    }

    /// The represented rule as a joint distribution.
    pub fn joint(&self) -> Result<JointDistribution<T>> {
        JointDistribution::from_conditional(self.p_x.as_slice().expect("contiguous"), self.conditional(), T::zero())
    }
}

/// Cluster-level state of the reduced iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpState<T> {
    pub beta: T,
    pub marginal: Array1<T>,
    pub encoder: ConditionalDistribution<T>,
    /// `A_β(x̂)`, shape `n_xhat × d`.
    pub cluster_features: Array2<T>,
    /// `λ_β(x̂)`, shape `n_xhat × d`.
    pub cluster_params: Array2<T>,
    /// `λ⁰_β(x̂)`.
    pub cluster_normalizers: Array1<T>,
}

impl<T: Real> ExpState<T> {
    /// Completes an encoder with its cluster statistics.
    pub fn from_encoder(model: &ExpFamilyModel<T>, beta: T, encoder: ConditionalDistribution<T>) -> Result<Self> {
        if encoder.n_rows() != model.n_x() {
            return Err(Error::DimensionMismatch {
                context: "encoder rows vs n_x",
                expected: model.n_x(),
                actual: encoder.n_rows(),
            });
        }
        let enc = encoder.rows().to_owned();
        let marginal = model.p_x.dot(&enc);
        let (cluster_features, log_dec, cluster_normalizers) = cluster_statistics(model, &enc, &marginal);
        let cluster_params = log_dec.mapv(|v| v.exp()).dot(&model.params);
        Ok(Self {
            beta,
            marginal,
            encoder,
            cluster_features,
            cluster_params,
            cluster_normalizers,
        })
    }

    /// Converts a full-table state (the framework is ignored).
    pub fn from_bottleneck(model: &ExpFamilyModel<T>, state: &BottleneckState<T>) -> Result<Self> {
        Self::from_encoder(model, state.beta, state.encoder.clone())
    }

    pub fn n_xhat(&self) -> usize {
        self.marginal.len()
    }
}

/// `(A_β, log p(y|x̂), λ⁰_β)` for an encoder. Dead clusters get zero features.
fn cluster_statistics<T: Real>(
    model: &ExpFamilyModel<T>,
    enc: &Array2<T>,
    marginal: &Array1<T>,
) -> (Array2<T>, Array2<T>, Array1<T>) {
    let dead = T::lit(DEAD_CLUSTER_MASS);
    let k = enc.ncols();
    let weighted = Array2::from_shape_fn((k, model.n_x()), |(j, x)| {
        if marginal[j] < dead {
            T::zero()
        } else {
            enc[[x, j]] * model.p_x[x] / marginal[j]
        }
    });
    let a_beta = weighted.dot(&model.features);
    let mut log_dec = a_beta.dot(&model.params.t()).mapv(|v| -v);
    let mut lambda0 = Array1::zeros(k);
    for (j, mut row) in log_dec.outer_iter_mut().enumerate() {
        let z = prob::log_sum_exp(row.iter().copied());
        row.mapv_inplace(|v| v - z);
        lambda0[j] = z;
    }
    (a_beta, log_dec, lambda0)
}

/// `p(y|x̂) = exp(−Σ_r λ^r(y) A_β,r(x̂) − λ⁰_β(x̂))`.
pub fn exp_decoder<T: Real>(state: &ExpState<T>, model: &ExpFamilyModel<T>) -> ConditionalDistribution<T> {
    let mut rows = state.cluster_features.dot(&model.params.t()).mapv(|v| -v);
    for (mut row, &z) in rows.outer_iter_mut().zip(state.cluster_normalizers.iter()) {
        row.mapv_inplace(|v| (v - z).exp());
    }
    ConditionalDistribution::from_normalized(rows, Var::XHat, Var::Y)
}

/// `log p(x̂|x) = log p(x̂) + β λ⁰_β(x̂) − β Σ_r λ_β,r(x̂) (A_r(x) − A_β,r(x̂)) − log Z(x)`.
/// Returns the encoder and `log Z(x)`.
pub fn exp_encoder<T: Real>(
    state: &ExpState<T>,
    model: &ExpFamilyModel<T>,
) -> Result<(ConditionalDistribution<T>, Array1<T>)> {
    let (enc, log_z) = encoder_logits(
        state.beta,
        &state.marginal,
        &state.cluster_features,
        &state.cluster_params,
        &state.cluster_normalizers,
        &model.features,
    );
    if let Some(x) = log_z.iter().position(|v| !v.is_finite()) {
        return Err(Error::DegenerateRow { row: x });
    }
    Ok((ConditionalDistribution::from_normalized(enc, Var::X, Var::XHat), log_z))
}

fn encoder_logits<T: Real>(
    beta: T,
    marginal: &Array1<T>,
    a_beta: &Array2<T>,
    lambda_beta: &Array2<T>,
    lambda0: &Array1<T>,
    features: &Array2<T>,
) -> (Array2<T>, Array1<T>) {
    // Σ_r λ_β,r (A_r(x) − A_β,r) = (A λ_βᵀ)[x, k] − Σ_r λ_β,r A_β,r
    let cross = features.dot(&lambda_beta.t());
    let own = (lambda_beta * a_beta).sum_axis(Axis(1));
    let n_x = features.nrows();
    let k = marginal.len();
    let mut enc = Array2::zeros((n_x, k));
    let mut log_z = Array1::zeros(n_x);
    for x in 0..n_x {
        let mut row: Vec<T> = (0..k)
            .map(|j| {
                let lm = if marginal[j] > T::zero() {
                    marginal[j].ln()
                } else {
                    T::neg_infinity()
                };
                lm + beta * lambda0[j] - beta * (cross[[x, j]] - own[j])
            })
            .collect();
        log_z[x] = prob::softmax_row(&mut row);
        enc.row_mut(x).assign(&Array1::from(row));
    }
    (enc, log_z)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExpSolveReport<T> {
    pub state: ExpState<T>,
    pub iterations: usize,
    pub converged: bool,
    /// Dual functional after each statistics update. Empty unless recorded.
    pub functional_trace: Vec<T>,
    pub i_x: T,
    pub i_y: T,
}

/// Reduced dual iteration on the cluster statistics.
pub fn exp_solve<T: Real>(
    model: &ExpFamilyModel<T>,
    beta: T,
    init: &ExpState<T>,
    opts: &SolveOptions,
) -> Result<ExpSolveReport<T>> {
    opts.validate()?;
    if !(beta >= T::zero()) || !beta.is_finite() {
        return Err(Error::validation(
            "beta",
            format!("must be finite and nonnegative, got {beta}"),
        ));
    }
    if init.encoder.n_rows() != model.n_x() {
        return Err(Error::DimensionMismatch {
            context: "initial encoder rows vs n_x",
            expected: model.n_x(),
            actual: init.encoder.n_rows(),
        });
    }
    let tol = T::lit(opts.tol);
    let mut enc = init.encoder.rows().to_owned();
    // dead clusters keep their last statistics
    let mut a_beta = init.cluster_features.clone();
    let mut lambda_beta = init.cluster_params.clone();
    let mut lambda0 = init.cluster_normalizers.clone();
    let dead = T::lit(DEAD_CLUSTER_MASS);
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        let marginal = model.p_x.dot(&enc);
        let (a_new, log_dec, l0_new) = cluster_statistics(model, &enc, &marginal);
        let lam_new = log_dec.mapv(|v| v.exp()).dot(&model.params);
        for j in 0..marginal.len() {
            if marginal[j] >= dead {
                a_beta.row_mut(j).assign(&a_new.row(j));
                lambda_beta.row_mut(j).assign(&lam_new.row(j));
                lambda0[j] = l0_new[j];
            }
        }
        if opts.record_trace {
            trace.push(reduced_functional(
                model,
                beta,
                &enc,
                &marginal,
                &a_beta,
                &lambda_beta,
                &lambda0,
            ));
        }
        let (next, log_z) = encoder_logits(beta, &marginal, &a_beta, &lambda_beta, &lambda0, &model.features);
        if let Some(x) = log_z.iter().position(|v| !v.is_finite()) {
            return Err(Error::DegenerateRow { row: x });
        }
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
    let mut state = ExpState::from_encoder(model, beta, encoder)?;
    for j in 0..state.n_xhat() {
        if state.marginal[j] < dead {
            state.cluster_features.row_mut(j).assign(&a_beta.row(j));
            state.cluster_params.row_mut(j).assign(&lambda_beta.row(j));
            state.cluster_normalizers[j] = lambda0[j];
        }
    }
    let joint = model.joint()?;
    let i_x = state::compression_information(&joint, state.encoder.rows(), state.marginal.view());
    let i_y = state::relevant_information(&joint, state.encoder.rows());
    Ok(ExpSolveReport {
        state,
        iterations,
        converged,
        functional_trace: trace,
        i_x,
        i_y,
    })
}

/// `I_x + β E[d_dual]` with `d_dual(x, x̂) = λ⁰_x − λ⁰_β + Σ_r λ_β,r (A_r(x) − A_β,r)`.
fn reduced_functional<T: Real>(
    model: &ExpFamilyModel<T>,
    beta: T,
    enc: &Array2<T>,
    marginal: &Array1<T>,
    a_beta: &Array2<T>,
    lambda_beta: &Array2<T>,
    lambda0: &Array1<T>,
) -> T {
    let cross = model.features.dot(&lambda_beta.t());
    let own = (lambda_beta * a_beta).sum_axis(Axis(1));
    let mut i_x = T::zero();
    let mut e_d = T::zero();
    for x in 0..model.n_x() {
        for j in 0..marginal.len() {
            let e = enc[[x, j]];
            if e > T::zero() {
                let d = model.normalizers[x] - lambda0[j] + cross[[x, j]] - own[j];
                e_d = e_d + model.p_x[x] * e * d;
                i_x = i_x + model.p_x[x] * e * (e / marginal[j]).ln();
            }
        }
    }
    i_x + beta * e_d
}

/// Closed-form information values of a reduced state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpInformation<T> {
    /// `β E_{p(x̂)}[λ⁰_β] − E_{p(x)}[log Z(x)]`; equals `I(X;X̂)` at a fixed point.
    pub compression: T,
    /// `H(Y) − E_{p(x̂)}[Σ_r λ_β,r A_β,r + λ⁰_β]`, the decoder-based label
    /// information `H(Y) − E_{p(x̂)} H(p(y|x̂))`.
    pub decoder_label_information: T,
}

pub fn exp_information<T: Real>(
    state: &ExpState<T>,
    model: &ExpFamilyModel<T>,
    p_y: &[T],
) -> Result<ExpInformation<T>> {
    let (_, log_z) = exp_encoder(state, model)?;
    let compression = state.beta * state.marginal.dot(&state.cluster_normalizers) - model.p_x.dot(&log_z);
    let own = (&state.cluster_params * &state.cluster_features).sum_axis(Axis(1));
    let expected: T = state
        .marginal
        .iter()
        .zip(own.iter().zip(state.cluster_normalizers.iter()))
        .map(|(&m, (&a, &z))| m * (a + z))
        .sum();
    Ok(ExpInformation {
        compression,
        decoder_label_information: prob::entropy(p_y) - expected,
    })
}

/// Full-table dual state with the same encoder, for cross-checks.
pub fn to_bottleneck<T: Real>(state: &ExpState<T>, joint: &JointDistribution<T>) -> Result<BottleneckState<T>> {
    BottleneckState::from_encoder(joint, Framework::Dual, state.beta, state.encoder.clone(), None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::{dual_encoder_update, dual_solve};
    use ndarray::array;

    fn d1() -> JointDistribution<f64> {
        let t = array![[0.12, 0.88], [0.23, 0.77], [0.4, 0.6], [0.6, 0.4], [0.76, 0.24]];
        JointDistribution::from_conditional(&[0.2; 5], t, 0.0).unwrap()
    }

    fn logistic() -> (JointDistribution<f64>, ExpFamilyModel<f64>) {
        let j = d1();
        let m = ExpFamilyModel::from_conditional(&j, FeatureSpec::Canonical).unwrap();
        (j, m)
    }

    #[test]
    fn canonical_model_reconstructs_the_table() {
        let (j, m) = logistic();
        assert_eq!(m.dim(), 1);
        let r = m.conditional();
        for (a, b) in r.iter().zip(j.p_y_given_x().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        for row in r.outer_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_model_for_uniform_rule() {
        let t = Array2::from_elem((4, 3), 1.0 / 3.0);
        let j = JointDistribution::from_conditional(&[0.25; 4], t, 0.0).unwrap();
        let m = ExpFamilyModel::from_conditional(&j, FeatureSpec::Constant).unwrap();
        assert_eq!(m.dim(), 0);
        assert!(m.normalizers.iter().all(|&z| (z - 3.0f64.ln()).abs() < 1e-15));
        let s = ExpState::from_encoder(
            &m,
            5.0,
            ConditionalDistribution::new(
                array![[0.2, 0.8], [0.5, 0.5], [0.9, 0.1], [0.3, 0.7]],
                Var::X,
                Var::XHat,
            )
            .unwrap(),
        )
        .unwrap();
        let (enc, _) = exp_encoder(&s, &m).unwrap();
        for row in enc.rows().outer_iter() {
            assert!((row[0] - s.marginal[0]).abs() < 1e-15);
        }
    }

    #[test]
    fn unrepresentable_rule_is_rejected() {
        let t = array![[0.2, 0.3, 0.5], [0.6, 0.1, 0.3], [0.3, 0.3, 0.4], [0.1, 0.7, 0.2]];
        let j = JointDistribution::from_conditional(&[0.25; 4], t, 0.0).unwrap();
        let spec = FeatureSpec::Given {
            features: array![[0.3], [1.2], [-0.4], [0.9]],
            params: array![[0.0], [1.0], [-0.5]],
        };
        assert!(matches!(
            ExpFamilyModel::from_conditional(&j, spec),
            Err(Error::ExactFit { .. })
        ));
        assert!(ExpFamilyModel::from_conditional(&j, FeatureSpec::Canonical).is_err());
    }

    #[test]
    fn decoder_matches_geometric_mixture() {
        let (j, m) = logistic();
        let enc = ConditionalDistribution::new(
            array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [0.0, 1.0]],
            Var::X,
            Var::XHat,
        )
        .unwrap();
        let s = ExpState::from_encoder(&m, 1.0, enc).unwrap();
        let dec = exp_decoder(&s, &m);
        assert!((dec.get(0, 0) - 0.167_929_812_857_994_57).abs() < 1e-10);
        let full = to_bottleneck(&s, &j).unwrap();
        assert!(dec.max_abs_diff(&full.decoder) < 1e-12);
    }

    #[test]
    fn point_mass_cluster_decodes_to_the_rule_row() {
        let (j, m) = logistic();
        let enc = Array2::from_shape_fn((5, 2), |(x, k)| if (x == 3) == (k == 0) { 1.0 } else { 0.0 });
        let s = ExpState::from_encoder(&m, 1.0, ConditionalDistribution::new(enc, Var::X, Var::XHat).unwrap()).unwrap();
        let dec = exp_decoder(&s, &m);
        assert!((dec.get(0, 0) - j.p_y_given_x()[[3, 0]]).abs() < 1e-12);
    }

    #[test]
    fn encoder_matches_full_table_update() {
        let (j, m) = logistic();
        for seed in 0..4 {
            let full = BottleneckState::random(&j, Framework::Dual, 3.5, 3, seed).unwrap();
            let red = ExpState::from_bottleneck(&m, &full).unwrap();
            let (a, _) = exp_encoder(&red, &m).unwrap();
            let (b, _) = dual_encoder_update(&full, &j).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-9);
        }
        let mut s =
            ExpState::from_bottleneck(&m, &BottleneckState::random(&j, Framework::Dual, 0.0, 3, 1).unwrap()).unwrap();
        s.beta = 0.0;
        let (enc, _) = exp_encoder(&s, &m).unwrap();
        for row in enc.rows().outer_iter() {
            for k in 0..3 {
                assert!((row[k] - s.marginal[k]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn solver_equivalence_and_closed_forms() {
        let (j, m) = logistic();
        let opts = SolveOptions::default();
        for &beta in &[0.0, 2.0, 5.0, 20.0] {
            let full = BottleneckState::random(&j, Framework::Dual, beta, 3, 7).unwrap();
            let a = dual_solve(&j, beta, &full, &opts).unwrap();
            let red = ExpState::from_bottleneck(&m, &full).unwrap();
            let b = exp_solve(&m, beta, &red, &opts).unwrap();
            assert!((a.i_x - b.i_x).abs() < 1e-6, "beta {beta}");
            assert!((a.i_y - b.i_y).abs() < 1e-6, "beta {beta}");
            assert!(b.functional_trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
            let info = exp_information(&b.state, &m, j.p_y().as_slice().unwrap()).unwrap();
            assert!((info.compression - b.i_x).abs() < 1e-8, "beta {beta}");
            let dec = exp_decoder(&b.state, &m);
            let direct = prob::entropy(j.p_y().as_slice().unwrap())
                - dec
                    .rows()
                    .outer_iter()
                    .zip(b.state.marginal.iter())
                    .map(|(r, &w)| w * prob::entropy(r.as_slice().unwrap()))
                    .sum::<f64>();
            assert!((info.decoder_label_information - direct).abs() < 1e-8);
        }
    }
}
