//! Encoder/marginal/decoder triples and the information values they induce.

use std::fmt;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{self, ConditionalDistribution, JointDistribution, Var};
use crate::scalar::Real;

/// Clusters with marginal mass below this are treated as dead.
pub const DEAD_CLUSTER_MASS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Framework {
    Ib,
    Dual,
}

impl Framework {
    pub const BOTH: [Framework; 2] = [Framework::Ib, Framework::Dual];

    pub fn as_str(self) -> &'static str {
        match self {
            Framework::Ib => "ib",
            Framework::Dual => "dual",
        }
    }
}

impl fmt::Display for Framework {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Framework {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ib" => Ok(Framework::Ib),
            "dual" | "dualib" => Ok(Framework::Dual),
            other => Err(Error::validation("framework", format!("unknown framework `{other}`"))),
        }
    }
}

/// A candidate or converged bottleneck solution at fixed `beta`.
///
/// `encoder` is `p(x̂|x)` (`n_x × n_xhat`), `marginal` is `p(x̂)` and
/// `decoder` is `p(y|x̂)` (`n_xhat × n_y`).
#[derive(Clone, Debug, PartialEq)]
pub struct BottleneckState<T> {
    pub beta: T,
    pub framework: Framework,
    pub encoder: ConditionalDistribution<T>,
    pub marginal: Array1<T>,
    pub decoder: ConditionalDistribution<T>,
}

impl<T: Real> BottleneckState<T> {
    /// Completes an encoder into a consistent state: the marginal is
    /// recomputed and the decoder follows the framework's decoder rule.
    /// Dead clusters take their decoder row from `fallback` when given,
    /// and from `p(y)` otherwise.
    pub fn from_encoder(
        joint: &JointDistribution<T>,
        framework: Framework,
        beta: T,
        encoder: ConditionalDistribution<T>,
        fallback: Option<&ConditionalDistribution<T>>,
    ) -> Result<Self> {
        if encoder.n_rows() != joint.n_x() {
            return Err(Error::DimensionMismatch {
                context: "encoder rows vs n_x",
                expected: joint.n_x(),
                actual: encoder.n_rows(),
            });
        }
        if let Some(fb) = fallback {
            if fb.n_rows() != encoder.n_cols() || fb.n_cols() != joint.n_y() {
                return Err(Error::DimensionMismatch {
                    context: "fallback decoder shape",
                    expected: encoder.n_cols(),
                    actual: fb.n_rows(),
                });
            }
        }
        let marginal = marginal_of(joint, &encoder);
        let inverse = inverse_rows(joint, &encoder, &marginal);
        let mut rows = match framework {
            Framework::Ib => inverse.dot(&joint.p_y_given_x()),
            Framework::Dual => prob::geometric_from_logs(inverse.view(), joint.log_p_y_given_x()).0,
        };
        let dead = T::lit(DEAD_CLUSTER_MASS);
        for (k, &m) in marginal.iter().enumerate() {
            if m < dead {
                let src = match fallback {
                    Some(fb) => fb.row(k).to_owned(),
                    None => joint.p_y().to_owned(),
                };
                rows.row_mut(k).assign(&src);
            }
        }
        Ok(Self {
            beta,
            framework,
            encoder,
            marginal,
            decoder: ConditionalDistribution::from_normalized(rows, Var::XHat, Var::Y),
        })
    }

    /// Trivial one-cluster state: every `x` maps to the same `x̂`.
    pub fn single_cluster(joint: &JointDistribution<T>, framework: Framework, beta: T) -> Self {
        let enc = ConditionalDistribution::from_normalized(Array2::ones((joint.n_x(), 1)), Var::X, Var::XHat);
        Self::from_encoder(joint, framework, beta, enc, None).expect("shapes agree")
    }

    /// Encoder rows drawn from a symmetric Dirichlet(1) on a seeded ChaCha8 stream.
    pub fn random(
        joint: &JointDistribution<T>,
        framework: Framework,
        beta: T,
        n_xhat: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_xhat == 0 {
            return Err(Error::validation("n_xhat", "must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = random_stochastic(&mut rng, joint.n_x(), n_xhat);
        let enc = ConditionalDistribution::from_normalized(enc.mapv(T::lit), Var::X, Var::XHat);
        Self::from_encoder(joint, framework, beta, enc, None)
    }

    /// Identity encoder `x̂ ≡ x`.
    pub fn identity(joint: &JointDistribution<T>, framework: Framework, beta: T) -> Self {
        let enc = ConditionalDistribution::identity(joint.n_x(), Var::X, Var::XHat);
        Self::from_encoder(joint, framework, beta, enc, None).expect("shapes agree")
    }

    pub fn n_xhat(&self) -> usize {
        self.marginal.len()
    }

    pub fn is_live(&self, cluster: usize) -> bool {
        self.marginal[cluster] >= T::lit(DEAD_CLUSTER_MASS)
    }

    pub fn live_clusters(&self) -> usize {
        (0..self.n_xhat()).filter(|&k| self.is_live(k)).count()
    }

    /// `p(x|x̂)`, rows indexed by `x̂`. Dead clusters get a zero row.
    pub fn inverse_encoder(&self, joint: &JointDistribution<T>) -> Array2<T> {
        inverse_rows(joint, &self.encoder, &self.marginal)
    }

    /// Relabels clusters: new cluster `i` is old cluster `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let k = self.n_xhat();
        let mut seen = vec![false; k];
        if perm.len() != k || perm.iter().any(|&p| p >= k || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::validation("perm", "not a permutation of the clusters"));
        }
        let enc = self.encoder.rows().select(Axis(1), perm);
        let dec = self.decoder.rows().select(Axis(0), perm);
        Ok(Self {
            beta: self.beta,
            framework: self.framework,
            encoder: ConditionalDistribution::from_normalized(enc, Var::X, Var::XHat),
            marginal: self.marginal.select(Axis(0), perm),
            decoder: ConditionalDistribution::from_normalized(dec, Var::XHat, Var::Y),
        })
    }

    /// `I(X;X̂)` in nats.
    pub fn i_x(&self, joint: &JointDistribution<T>) -> T {
        compression_information(joint, self.encoder.rows(), self.marginal.view())
    }

    /// `I(Y;X̂)` in nats under the Markov chain `Y ↔ X ↔ X̂`.
    pub fn i_y(&self, joint: &JointDistribution<T>) -> T {
        relevant_information(joint, self.encoder.rows())
    }

    /// Largest deviation of the stored marginal from `Σ_x p(x̂|x) p(x)`.
    pub fn marginal_residual(&self, joint: &JointDistribution<T>) -> T {
        let m = marginal_of(joint, &self.encoder);
        m.iter()
            .zip(self.marginal.iter())
            .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs()))
    }
}

pub(crate) fn random_stochastic(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Array2<f64> {
    let gamma = Gamma::new(1.0, 1.0).expect("valid shape");
    let mut m = Array2::from_shape_simple_fn((n, k), || {
        let g: f64 = gamma.sample(rng);
        g.max(1e-300)
    });
    for mut row in m.outer_iter_mut() {
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    m
}

pub(crate) fn marginal_of<T: Real>(joint: &JointDistribution<T>, encoder: &ConditionalDistribution<T>) -> Array1<T> {
    joint.p_x().dot(&encoder.rows())
}

pub(crate) fn inverse_rows<T: Real>(
    joint: &JointDistribution<T>,
    encoder: &ConditionalDistribution<T>,
    marginal: &Array1<T>,
) -> Array2<T> {
    let (n_x, k) = (encoder.n_rows(), encoder.n_cols());
    let dead = T::lit(DEAD_CLUSTER_MASS);
    let p_x = joint.p_x();
    let enc = encoder.rows();
    Array2::from_shape_fn((k, n_x), |(j, x)| {
        let m = marginal[j];
        if m < dead {
            T::zero()
        } else {
            enc[[x, j]] * p_x[x] / m
        }
    })
}

pub(crate) fn compression_information<T: Real>(
    joint: &JointDistribution<T>,
    encoder: ndarray::ArrayView2<'_, T>,
    marginal: ndarray::ArrayView1<'_, T>,
) -> T {
    let mut acc = T::zero();
    for (x, row) in encoder.outer_iter().enumerate() {
        let px = joint.p_x()[x];
        for (j, &e) in row.iter().enumerate() {
            if e > T::zero() && marginal[j] > T::zero() {
                acc = acc + px * e * (e / marginal[j]).ln();
            }
        }
    }
    acc.max(T::zero())
}

pub(crate) fn relevant_information<T: Real>(joint: &JointDistribution<T>, encoder: ndarray::ArrayView2<'_, T>) -> T {
    // p(x̂, y) = Σ_x p(x, y) p(x̂|x)
    let pj = encoder.t().dot(&joint.p_xy());
    prob::mi_unchecked(pj.view())
}
