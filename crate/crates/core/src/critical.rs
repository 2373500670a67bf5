//! Per-cluster stability matrices and critical-β detection.
//!
//! A cluster becomes unstable when `β λ₂ = 1`, where `λ₂` is the largest
//! nontrivial eigenvalue of its stability matrix. Both matrices of a pair
//! share their nonzero spectrum; eigenvalues are taken from the `n_y × n_y`
//! one.

use nalgebra::{Complex, DMatrix};
use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anneal::{self, GridSpec, SweepConfig};
use crate::error::{Error, Result};
use crate::prob::JointDistribution;
use crate::scalar::Real;
use crate::solve::{self, SolveOptions};
use crate::state::{BottleneckState, Framework};

/// Imaginary parts above this are reported as a complex spectrum.
pub const COMPLEX_TOL: f64 = 1e-8;
/// Eigenvalues below this magnitude count as zero when comparing spectra.
pub const ZERO_EIGEN_TOL: f64 = 1e-8;
pub const MAX_BISECTIONS: usize = 40;

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityMatrices<T> {
    pub c_xx: Array2<T>,
    pub c_yy: Array2<T>,
    pub cluster: usize,
    pub beta: T,
    pub framework: Framework,
}

fn cluster_rows<T: Real>(
    state: &BottleneckState<T>,
    joint: &JointDistribution<T>,
    cluster: usize,
) -> Result<(Array1<T>, Array1<T>)> {
    if cluster >= state.n_xhat() {
        return Err(Error::validation(
            "cluster",
            format!("index {cluster} out of range 0..{}", state.n_xhat()),
        ));
    }
    if !state.is_live(cluster) {
        return Err(Error::SkippedCluster {
            cluster,
            marginal: state.marginal[cluster].as_f64(),
        });
    }
    let w = state.inverse_encoder(joint).row(cluster).to_owned();
    let pi = state.decoder.row(cluster).to_owned();
    if pi.iter().any(|&v| v <= T::zero()) {
        return Err(Error::SkippedCluster {
            cluster,
            marginal: state.marginal[cluster].as_f64(),
        });
    }
    Ok((w, pi))
}

/// IB matrices with the normalization mode deflated:
/// `C_xx[x,x'] = Σ_y p(y|x) w(x') p(y|x') / π(y) − w(x')` and
/// `C_yy[y,y'] = Σ_x p(y|x) w(x) p(y'|x) / π(y) − π(y')`, with `w = p(x|x̂)`
/// and `π = p(y|x̂)`.
pub fn build_ib_matrices<T: Real>(
    state: &BottleneckState<T>,
    joint: &JointDistribution<T>,
    cluster: usize,
) -> Result<StabilityMatrices<T>> {
    let (w, pi) = cluster_rows(state, joint, cluster)?;
    let p = joint.p_y_given_x();
    let (n_x, n_y) = p.dim();
    let c_xx = Array2::from_shape_fn((n_x, n_x), |(x, xp)| {
        (0..n_y).map(|y| p[[x, y]] * w[xp] * p[[xp, y]] / pi[y]).sum::<T>() - w[xp]
    });
    let c_yy = Array2::from_shape_fn((n_y, n_y), |(y, yp)| {
        (0..n_x).map(|x| p[[x, y]] * w[x] * p[[x, yp]]).sum::<T>() / pi[y] - pi[yp]
    });
    Ok(StabilityMatrices {
        c_xx,
        c_yy,
        cluster,
        beta: state.beta,
        framework: Framework::Ib,
    })
}

/// Factors `A` (`n_x × n_y`) and `B` (`n_y × n_x`) of the dual matrices:
/// `A[x,y] = π(y) Σ_x̃ w(x̃) log(p(y|x)/p(y|x̃))` and
/// `B[y,x] = w(x) Σ_ỹ π(ỹ) log(p(y|x)/p(ỹ|x))`.
pub fn dual_factors<T: Real>(
    state: &BottleneckState<T>,
    joint: &JointDistribution<T>,
    cluster: usize,
) -> Result<(Array2<T>, Array2<T>)> {
    let (w, pi) = cluster_rows(state, joint, cluster)?;
    let l = joint.log_p_y_given_x();
    let (n_x, n_y) = l.dim();
    let mean_over_x = w.dot(&l);
    let mean_over_y = l.dot(&pi);
    let a = Array2::from_shape_fn((n_x, n_y), |(x, y)| pi[y] * (l[[x, y]] - mean_over_x[y]));
    let b = Array2::from_shape_fn((n_y, n_x), |(y, x)| w[x] * (l[[x, y]] - mean_over_y[x]));
    Ok((a, b))
}

/// Dual matrices `C_xx = A B`, `C_yy = B A`.
pub fn build_dual_matrices<T: Real>(
    state: &BottleneckState<T>,
    joint: &JointDistribution<T>,
    cluster: usize,
) -> Result<StabilityMatrices<T>> {
    let (a, b) = dual_factors(state, joint, cluster)?;
    Ok(StabilityMatrices {
        c_xx: a.dot(&b),
        c_yy: b.dot(&a),
        cluster,
        beta: state.beta,
        framework: Framework::Dual,
    })
}

pub fn build_matrices<T: Real>(
    state: &BottleneckState<T>,
    joint: &JointDistribution<T>,
    cluster: usize,
) -> Result<StabilityMatrices<T>> {
    match state.framework {
        Framework::Ib => build_ib_matrices(state, joint, cluster),
        Framework::Dual => build_dual_matrices(state, joint, cluster),
    }
}

fn require_binary<T: Real>(joint: &JointDistribution<T>) -> Result<()> {
    if joint.n_y() != 2 {
        return Err(Error::validation("n_y", "the simplified form needs a binary label"));
    }
    Ok(())
}

/// Binary-label dual matrices built from the log-odds form
/// `B[y,x] = w(x) (1 − π(y)) log(p(y|x) / (1 − p(y|x)))`.
pub fn binary_dual_matrices<T: Real>(
    state: &BottleneckState<T>,
    joint: &JointDistribution<T>,
    cluster: usize,
) -> Result<StabilityMatrices<T>> {
    require_binary(joint)?;
    let (w, pi) = cluster_rows(state, joint, cluster)?;
    let p = joint.p_y_given_x();
    let l = joint.log_p_y_given_x();
    let n_x = p.nrows();
    let a = Array2::from_shape_fn((n_x, 2), |(x, y)| {
        pi[y] * (0..n_x).map(|xt| w[xt] * (p[[x, y]] / p[[xt, y]]).ln()).sum::<T>()
    });
    let b = Array2::from_shape_fn((2, n_x), |(y, x)| {
        w[x] * (T::one() - pi[y]) * (l[[x, y]] - (T::one() - p[[x, y]]).ln())
    });
    Ok(StabilityMatrices {
        c_xx: a.dot(&b),
        c_yy: b.dot(&a),
        cluster,
        beta: state.beta,
        framework: Framework::Dual,
    })
}

/// Binary-label closed form of the nontrivial dual eigenvalue:
/// `π₀ π₁ Σ_{x,x̃} w(x) w(x̃) log(p₀(x)/p₁(x)) [log(p₀(x)/p₀(x̃)) − log(p₁(x)/p₁(x̃))]`.
pub fn binary_dual_lambda2<T: Real>(
    state: &BottleneckState<T>,
    joint: &JointDistribution<T>,
    cluster: usize,
) -> Result<T> {
    require_binary(joint)?;
    let (w, pi) = cluster_rows(state, joint, cluster)?;
    let l = joint.log_p_y_given_x();
    let n_x = l.nrows();
    let mut acc = T::zero();
    for x in 0..n_x {
        let odds = l[[x, 0]] - l[[x, 1]];
        for xt in 0..n_x {
            let diff = (l[[x, 0]] - l[[xt, 0]]) - (l[[x, 1]] - l[[xt, 1]]);
            acc = acc + w[x] * w[xt] * odds * diff;
        }
    }
    Ok(pi[0] * pi[1] * acc)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<Complex<f64>>,
    /// Eigenvalue of smallest magnitude.
    pub lambda1: Complex<f64>,
    /// Largest real part among the remaining eigenvalues.
    pub lambda2: Option<f64>,
    pub complex: bool,
}

fn to_dmatrix<T: Real>(m: &Array2<T>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]].as_f64())
}

/// Eigenvalues of a square matrix, computed in `f64`.
pub fn spectrum<T: Real>(m: &Array2<T>) -> Spectrum {
    let eig: Vec<Complex<f64>> = to_dmatrix(m).complex_eigenvalues().iter().copied().collect();
    let i1 = (0..eig.len())
        .min_by(|&a, &b| eig[a].norm().total_cmp(&eig[b].norm()))
        .expect("nonempty matrix");
    let rest = eig.iter().enumerate().filter(|&(i, _)| i != i1).map(|(_, z)| *z);
    let lambda2 = rest.clone().map(|z| z.re).max_by(f64::total_cmp);
    let complex = rest.clone().any(|z| z.im.abs() > COMPLEX_TOL);
    Spectrum {
        lambda1: eig[i1],
        lambda2,
        complex,
        eigenvalues: eig,
    }
}

impl<T: Real> StabilityMatrices<T> {
    /// Spectrum of `C_yy`.
    pub fn spectrum(&self) -> Spectrum {
        let s = spectrum(&self.c_yy);
        if s.complex {
            log::warn!(
                "complex stability spectrum for cluster {} at beta = {}; using real parts",
                self.cluster,
                self.beta
            );
        }
        s
    }

    /// Largest gap between the sorted nonzero spectra of `C_xx` and `C_yy`.
    /// Infinite when the nonzero counts differ.
    pub fn spectra_gap(&self) -> f64 {
        let nonzero = |m: &Array2<T>| {
            let mut v: Vec<Complex<f64>> = spectrum(m)
                .eigenvalues
                .into_iter()
                .filter(|z| z.norm() > ZERO_EIGEN_TOL)
                .collect();
            v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
            v
        };
        let a = nonzero(&self.c_xx);
        let b = nonzero(&self.c_yy);
        if a.len() != b.len() {
            return f64::INFINITY;
        }
        a.iter().zip(&b).map(|(u, v)| (u - v).norm()).fold(0.0, f64::max)
    }

    pub fn det_yy(&self) -> f64 {
        to_dmatrix(&self.c_yy).determinant()
    }
}

/// `λ₂` of the given cluster, or `None` for a single-label problem.
pub fn cluster_lambda2<T: Real>(
    state: &BottleneckState<T>,
    joint: &JointDistribution<T>,
    cluster: usize,
) -> Result<Option<f64>> {
    Ok(build_matrices(state, joint, cluster)?.spectrum().lambda2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub beta_c: f64,
    /// Cluster index in the merged state at the lower bracket end.
    pub cluster: usize,
    pub lambda2: f64,
    /// `β_c λ₂ − 1` at the refined root.
    pub residual: f64,
    pub bracket: (f64, f64),
    /// Grid index of the lower bracket end.
    pub grid_index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalPointReport {
    pub framework: Framework,
    pub points: Vec<CriticalPoint>,
    pub grid: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalConfig {
    pub sweep: SweepConfig,
    /// Bisection stops once the bracket is narrower than this in β.
    pub refine_tol: f64,
}

impl Default for CriticalConfig {
    fn default() -> Self {
        Self {
            sweep: SweepConfig::default(),
            refine_tol: 1e-10,
        }
    }
}

/// `β λ₂ − 1` of `cluster` on the unsplit branch continued from `from` to `beta`.
fn continuation<T: Real>(
    joint: &JointDistribution<T>,
    from: &BottleneckState<T>,
    beta: f64,
    cluster: usize,
    opts: &SolveOptions,
) -> Result<(f64, f64, BottleneckState<T>)> {
    let r = solve::solve(joint, from.framework, T::lit(beta), from, opts)?;
    let l2 = cluster_lambda2(&r.state, joint, cluster)?.unwrap_or(0.0);
    Ok((beta * l2 - 1.0, l2, r.state))
}

struct Bracket<T> {
    index: usize,
    cluster: usize,
    lo: f64,
    hi: f64,
    start: BottleneckState<T>,
}

/// Scans an annealing sweep for sign changes of `β λ₂ − 1` per live cluster
/// and refines each by bisection on unsplit warm-started solves.
pub fn find_critical_points<T: Real>(
    joint: &JointDistribution<T>,
    framework: Framework,
    grid: &GridSpec,
    config: &CriticalConfig,
) -> Result<CriticalPointReport> {
    let (_, states) = anneal::sweep_with_states(joint, framework, grid, &config.sweep)?;
    find_critical_points_on(joint, framework, &grid.values(), &states, config)
}

/// As [`find_critical_points`], reusing the merged states of an existing sweep.
pub fn find_critical_points_on<T: Real>(
    joint: &JointDistribution<T>,
    framework: Framework,
    betas: &[f64],
    states: &[BottleneckState<T>],
    config: &CriticalConfig,
) -> Result<CriticalPointReport> {
    if betas.len() != states.len() {
        return Err(Error::DimensionMismatch {
            context: "grid vs sweep states",
            expected: betas.len(),
            actual: states.len(),
        });
    }
    if !(config.refine_tol > 0.0) {
        return Err(Error::validation("refine_tol", "must be positive"));
    }
    let opts = config.sweep.solve;
    let mut brackets = Vec::new();
    if joint.n_y() > 1 {
        for k in 0..betas.len().saturating_sub(1) {
            let s = &states[k];
            for j in (0..s.n_xhat()).filter(|&j| s.is_live(j)) {
                let g_lo = match cluster_lambda2(s, joint, j) {
                    Ok(l2) => betas[k] * l2.unwrap_or(0.0) - 1.0,
                    Err(Error::SkippedCluster { .. }) => continue,
                    Err(e) => return Err(e),
                };
                if g_lo >= 0.0 {
                    continue;
                }
                let (g_hi, _, _) = continuation(joint, s, betas[k + 1], j, &opts)?;
                if g_hi >= 0.0 {
                    brackets.push(Bracket {
                        index: k,
                        cluster: j,
                        lo: betas[k],
                        hi: betas[k + 1],
                        start: s.clone(),
                    });
                }
            }
        }
    }
    let mut points = brackets
        .into_par_iter()
        .map(|b| refine(joint, b, config.refine_tol, &opts))
        .collect::<Result<Vec<_>>>()?;
    points.sort_by(|a, b| a.beta_c.total_cmp(&b.beta_c));
    Ok(CriticalPointReport {
        framework,
        points,
        grid: betas.to_vec(),
    })
}

fn refine<T: Real>(
    joint: &JointDistribution<T>,
    b: Bracket<T>,
    tol: f64,
    opts: &SolveOptions,
) -> Result<CriticalPoint> {
    let (mut lo, mut hi) = (b.lo, b.hi);
    let mut warm = b.start.clone();
    for _ in 0..MAX_BISECTIONS {
        if hi - lo < tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let (g, _, s) = continuation(joint, &warm, mid, b.cluster, opts)?;
        if g < 0.0 {
            lo = mid;
            warm = s;
        } else {
            hi = mid;
        }
    }
    let beta_c = 0.5 * (lo + hi);
    let (residual, lambda2, _) = continuation(joint, &warm, beta_c, b.cluster, opts)?;
    Ok(CriticalPoint {
        beta_c,
        cluster: b.cluster,
        lambda2,
        residual,
        bracket: (b.lo, b.hi),
        grid_index: b.index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::{ConditionalDistribution, Var};
    use ndarray::array;

    fn d1() -> JointDistribution<f64> {
        let t = array![[0.12, 0.88], [0.23, 0.77], [0.4, 0.6], [0.6, 0.4], [0.76, 0.24]];
        JointDistribution::from_conditional(&[0.2; 5], t, 0.0).unwrap()
    }

    #[test]
    fn single_cluster_lambda2_matches_dense_eigensolver() {
        let j = d1();
        for fw in Framework::BOTH {
            let s = BottleneckState::single_cluster(&j, fw, 0.5);
            let m = build_matrices(&s, &j, 0).unwrap();
            let sp = m.spectrum();
            assert!(sp.lambda1.norm() < 1e-8);
            let trace = m.c_yy[[0, 0]] + m.c_yy[[1, 1]];
            assert!((sp.lambda2.unwrap() - trace).abs() < 1e-12);
            // C_xx eigenvalues by an independent route: largest real part
            let dense = spectrum(&m.c_xx);
            assert!((dense.lambda2.unwrap() - trace).abs() < 1e-10);
            assert!(m.spectra_gap() < 1e-8);
        }
    }

    #[test]
    fn first_critical_points_of_five_input_problem() {
        let j = d1();
        let ib = BottleneckState::single_cluster(&j, Framework::Ib, 1.0);
        let dual = BottleneckState::single_cluster(&j, Framework::Dual, 1.0);
        let l_ib = cluster_lambda2(&ib, &j, 0).unwrap().unwrap();
        let l_dual = cluster_lambda2(&dual, &j, 0).unwrap().unwrap();
        assert!((1.0 / l_ib - 4.443_238_122_996_211).abs() < 1e-9);
        assert!((1.0 / l_dual - 3.336_990_630_941_347).abs() < 1e-9);
    }

    #[test]
    fn binary_forms_agree() {
        let j = d1();
        let s = BottleneckState::random(&j, Framework::Dual, 2.0, 3, 4).unwrap();
        for c in 0..3 {
            let g = build_dual_matrices(&s, &j, c).unwrap();
            let b = binary_dual_matrices(&s, &j, c).unwrap();
            let diff = (&g.c_yy - &b.c_yy).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(diff < 1e-10);
            let diff = (&g.c_xx - &b.c_xx).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(diff < 1e-10);
            assert!(g.det_yy().abs() < 1e-8);
            let tr = binary_dual_lambda2(&s, &j, c).unwrap();
            assert!((g.spectrum().lambda2.unwrap() - tr).abs() < 1e-10);
        }
    }

    #[test]
    fn dead_cluster_is_skipped() {
        let j = d1();
        let enc = ConditionalDistribution::new(
            ndarray::Array2::from_shape_fn((5, 2), |(_, k)| if k == 0 { 1.0 } else { 0.0 }),
            Var::X,
            Var::XHat,
        )
        .unwrap();
        let s = BottleneckState::from_encoder(&j, Framework::Ib, 1.0, enc, None).unwrap();
        assert!(matches!(
            build_ib_matrices(&s, &j, 1),
            Err(Error::SkippedCluster { cluster: 1, .. })
        ));
    }

    #[test]
    fn flat_rule_has_no_critical_points() {
        let t = array![[0.3, 0.7], [0.3, 0.7], [0.3, 0.7]];
        let j = JointDistribution::from_conditional(&[0.2, 0.3, 0.5], t, 0.0).unwrap();
        let grid = GridSpec::log(0.25, 64.0, 30).unwrap();
        for fw in Framework::BOTH {
            let r = find_critical_points(&j, fw, &grid, &CriticalConfig::default()).unwrap();
            assert!(r.points.is_empty());
        }
    }
}
