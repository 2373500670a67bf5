//! Deterministic annealing over an ascending β grid.
//!
//! Each grid point warm-starts from the previous merged solution, duplicates
//! every cluster with a small multiplicative perturbation, solves, and merges
//! clusters whose decoders coincide.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{ConditionalDistribution, JointDistribution, Var};
use crate::scalar::Real;
use crate::solve::{self, SolveOptions};
use crate::state::{BottleneckState, Framework};

/// Slack allowed on per-step decreases of `I_x` and `I_y` before a record is flagged.
pub const MONOTONE_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    Log,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub beta_min: f64,
    pub beta_max: f64,
    pub points: usize,
    pub spacing: Spacing,
}

impl GridSpec {
    pub fn log(beta_min: f64, beta_max: f64, points: usize) -> Result<Self> {
        Self::new(beta_min, beta_max, points, Spacing::Log)
    }

    pub fn new(beta_min: f64, beta_max: f64, points: usize, spacing: Spacing) -> Result<Self> {
        let g = Self {
            beta_min,
            beta_max,
            points,
            spacing,
        };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        let lower_ok = match self.spacing {
            Spacing::Log => self.beta_min > 0.0,
            Spacing::Linear => self.beta_min >= 0.0,
        };
        if !lower_ok || !self.beta_min.is_finite() {
            return Err(Error::validation("beta_grid", "invalid lower end"));
        }
        if !(self.beta_max >= self.beta_min) || !self.beta_max.is_finite() {
            return Err(Error::validation("beta_grid", "upper end below lower end"));
        }
        if self.points == 0 || (self.points > 1 && self.beta_max == self.beta_min) {
            return Err(Error::validation(
                "beta_grid",
                "needs at least one point and a nonempty range",
            ));
        }
        Ok(())
    }

    /// Grid values in ascending order. Both ends are included exactly.
    pub fn values(&self) -> Vec<f64> {
        let n = self.points;
        if n == 1 {
            return vec![self.beta_min];
        }
        let (a, b) = match self.spacing {
            Spacing::Log => (self.beta_min.ln(), self.beta_max.ln()),
            Spacing::Linear => (self.beta_min, self.beta_max),
        };
        (0..n)
            .map(|i| {
                if i == 0 {
                    return self.beta_min;
                }
                if i == n - 1 {
                    return self.beta_max;
                }
                let t = a + (b - a) * i as f64 / (n - 1) as f64;
                match self.spacing {
                    Spacing::Log => t.exp(),
                    Spacing::Linear => t,
                }
            })
            .collect()
    }
}

impl std::str::FromStr for GridSpec {
    type Err = Error;

    /// Parses `log:MIN:MAX:POINTS` or `linear:MIN:MAX:POINTS`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::validation("beta_grid", format!("expected `log|linear:MIN:MAX:POINTS`, got `{s}`"));
        if parts.len() != 4 {
            return Err(bad());
        }
        let spacing = match parts[0] {
            "log" => Spacing::Log,
            "linear" | "lin" => Spacing::Linear,
            _ => return Err(bad()),
        };
        let lo: f64 = parts[1].parse().map_err(|_| bad())?;
        let hi: f64 = parts[2].parse().map_err(|_| bad())?;
        let n: usize = parts[3].parse().map_err(|_| bad())?;
        Self::new(lo, hi, n, spacing)
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.spacing {
            Spacing::Log => "log",
            Spacing::Linear => "linear",
        };
        write!(f, "{tag}:{}:{}:{}", self.beta_min, self.beta_max, self.points)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub split_eps: f64,
    pub merge_tol: f64,
    pub seed: u64,
    pub solve: SolveOptions,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            split_eps: 1e-3,
            merge_tol: 1e-4,
            seed: 0,
            solve: SolveOptions {
                record_trace: false,
                ..SolveOptions::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct AnnealRecord<T> {
    pub beta: T,
    pub i_x: T,
    pub i_y: T,
    pub functional: T,
    pub expected_distortion: T,
    pub iterations: usize,
    pub converged: bool,
    pub effective_clusters: usize,
    /// Set when the solve failed to converge or an information value dropped.
    pub flagged: bool,
    /// Merged decoder `p(y|x̂)`, one row per effective cluster.
    pub decoder: Vec<Vec<T>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct AnnealTrace<T> {
    pub framework: Framework,
    pub grid: GridSpec,
    pub records: Vec<AnnealRecord<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    Csv,
    Json,
}

impl TraceFormat {
    pub fn extension(self) -> &'static str {
        match self {
            TraceFormat::Csv => "csv",
            TraceFormat::Json => "json",
        }
    }
}

fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// Duplicates every cluster. Child columns are `c (1 + eps ξ) / 2` and the
/// remainder, with `ξ ~ U[−1, 1]` per entry, so each pair sums to its parent.
pub fn split_and_perturb<T: Real>(
    state: &BottleneckState<T>,
    joint: &JointDistribution<T>,
    eps: f64,
    seed: u64,
) -> Result<BottleneckState<T>> {
    split_with_rng(state, joint, eps, &mut step_rng(seed, 0))
}

fn split_with_rng<T: Real>(
    state: &BottleneckState<T>,
    joint: &JointDistribution<T>,
    eps: f64,
    rng: &mut ChaCha8Rng,
) -> Result<BottleneckState<T>> {
    if !(0.0..0.5).contains(&eps) {
        return Err(Error::validation(
            "split_eps",
            format!("must lie in [0, 0.5), got {eps}"),
        ));
    }
    let k = state.n_xhat();
    let n_x = state.encoder.n_rows();
    let enc = state.encoder.rows();
    let mut out = Array2::zeros((n_x, 2 * k));
    let half = T::lit(0.5);
    for j in 0..k {
        for x in 0..n_x {
            let xi: f64 = rng.random_range(-1.0..=1.0);
            let c = enc[[x, j]];
            let a = c * (T::one() + T::lit(eps * xi)) * half;
            out[[x, 2 * j]] = a;
            out[[x, 2 * j + 1]] = c - a;
        }
    }
    let dec = state.decoder.rows();
    let dup = Array2::from_shape_fn((2 * k, dec.ncols()), |(i, y)| dec[[i / 2, y]]);
    let fallback = ConditionalDistribution::from_normalized(dup, Var::XHat, Var::Y);
    let enc = ConditionalDistribution::from_normalized(out, Var::X, Var::XHat);
    BottleneckState::from_encoder(joint, state.framework, state.beta, enc, Some(&fallback))
}

fn linf<T: Real>(a: ndarray::ArrayView1<'_, T>, b: ndarray::ArrayView1<'_, T>) -> T {
    a.iter()
        .zip(b.iter())
        .fold(T::zero(), |m, (&u, &v)| m.max((u - v).abs()))
}

/// Merges clusters whose decoder rows lie within `tol` in L∞ and folds dead
/// clusters into their nearest live neighbour. Repeats until stable, so the
/// result is a fixed point of `merge`.
pub fn merge<T: Real>(
    state: &BottleneckState<T>,
    joint: &JointDistribution<T>,
    tol: f64,
) -> Result<BottleneckState<T>> {
    let mut cur = merge_once(state, joint, T::lit(tol))?;
    loop {
        let next = merge_once(&cur, joint, T::lit(tol))?;
        if next.n_xhat() == cur.n_xhat() {
            return Ok(cur);
        }
        cur = next;
    }
}

fn merge_once<T: Real>(state: &BottleneckState<T>, joint: &JointDistribution<T>, tol: T) -> Result<BottleneckState<T>> {
    let k = state.n_xhat();
    let dec = state.decoder.rows();
    let live: Vec<usize> = (0..k).filter(|&j| state.is_live(j)).collect();
    if live.is_empty() {
        return Err(Error::Invariant("no live cluster left".into()));
    }
    // group representatives are the first member in index order
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &j in &live {
        match groups.iter_mut().find(|g| linf(dec.row(g[0]), dec.row(j)) < tol) {
            Some(g) => g.push(j),
            None => groups.push(vec![j]),
        }
    }
    for j in (0..k).filter(|&j| !state.is_live(j)) {
        let nearest = (0..groups.len())
            .min_by(|&a, &b| {
                let da = linf(dec.row(groups[a][0]), dec.row(j));
                let db = linf(dec.row(groups[b][0]), dec.row(j));
                da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal)
            })
            .expect("at least one group");
        groups[nearest].push(j);
    }
    let enc = state.encoder.rows();
    let n_x = enc.nrows();
    let merged = Array2::from_shape_fn((n_x, groups.len()), |(x, g)| {
        groups[g].iter().map(|&j| enc[[x, j]]).sum::<T>()
    });
    let fallback = Array2::from_shape_fn((groups.len(), dec.ncols()), |(g, y)| dec[[groups[g][0], y]]);
    let fallback = ConditionalDistribution::from_normalized(fallback, Var::XHat, Var::Y);
    let enc = ConditionalDistribution::from_normalized(merged, Var::X, Var::XHat);
    BottleneckState::from_encoder(joint, state.framework, state.beta, enc, Some(&fallback))
}

/// One annealing step from `state`: split and perturb with the stream `step`
/// of the seed, solve at `beta`, merge. Returns the merged state, the
/// iteration count and the convergence flag.
pub fn anneal_step<T: Real>(
    joint: &JointDistribution<T>,
    state: &BottleneckState<T>,
    beta: T,
    config: &SweepConfig,
    step: u64,
) -> Result<(BottleneckState<T>, usize, bool)> {
    let mut rng = step_rng(config.seed, step);
    let split = split_with_rng(state, joint, config.split_eps, &mut rng)?;
    let report = solve::solve(joint, state.framework, beta, &split, &config.solve)?;
    let merged = merge(&report.state, joint, config.merge_tol)?;
    Ok((merged, report.iterations, report.converged))
}

/// Sweeps the grid and returns the trace.
pub fn sweep<T: Real>(
    joint: &JointDistribution<T>,
    framework: Framework,
    grid: &GridSpec,
    config: &SweepConfig,
) -> Result<AnnealTrace<T>> {
    Ok(sweep_with_states(joint, framework, grid, config)?.0)
}

/// Sweeps the grid and also returns the merged state at every grid point.
pub fn sweep_with_states<T: Real>(
    joint: &JointDistribution<T>,
    framework: Framework,
    grid: &GridSpec,
    config: &SweepConfig,
) -> Result<(AnnealTrace<T>, Vec<BottleneckState<T>>)> {
    grid.validate()?;
    config.solve.validate()?;
    if !(config.merge_tol > 0.0) {
        return Err(Error::validation("merge_tol", "must be positive"));
    }
    let betas = grid.values();
    let mut state = BottleneckState::single_cluster(joint, framework, T::lit(betas[0]));
    let mut records: Vec<AnnealRecord<T>> = Vec::with_capacity(betas.len());
    let mut states = Vec::with_capacity(betas.len());
    for (step, &b) in betas.iter().enumerate() {
        let (merged, iterations, converged) = anneal_step(joint, &state, T::lit(b), config, step as u64)?;
        let record = make_record(joint, &merged, iterations, converged, records.last());
        if record.flagged {
            log::warn!(
                "{framework} sweep: flagged record at beta = {b} (converged = {})",
                record.converged
            );
        }
        records.push(record);
        states.push(merged.clone());
        state = merged;
    }
    Ok((
        AnnealTrace {
            framework,
            grid: *grid,
            records,
        },
        states,
    ))
}

fn make_record<T: Real>(
    joint: &JointDistribution<T>,
    state: &BottleneckState<T>,
    iterations: usize,
    converged: bool,
    previous: Option<&AnnealRecord<T>>,
) -> AnnealRecord<T> {
    let (functional, expected_distortion) = solve::evaluate(joint, state);
    let i_x = state.i_x(joint);
    let i_y = state.i_y(joint);
    let slack = T::lit(MONOTONE_SLACK);
    let dropped = previous.is_some_and(|p| i_x < p.i_x - slack || i_y < p.i_y - slack);
    AnnealRecord {
        beta: state.beta,
        i_x,
        i_y,
        functional,
        expected_distortion,
        iterations,
        converged,
        effective_clusters: state.n_xhat(),
        flagged: !converged || dropped,
        decoder: state.decoder.rows().outer_iter().map(|r| r.to_vec()).collect(),
    }
}

const FIXED_COLUMNS: [&str; 11] = [
    "framework",
    "beta",
    "i_x",
    "i_y",
    "functional",
    "expected_distortion",
    "iterations",
    "converged",
    "effective_clusters",
    "flagged",
    "units",
];

impl<T: Real> AnnealTrace<T> {
    pub fn betas(&self) -> Vec<T> {
        self.records.iter().map(|r| r.beta).collect()
    }

    pub fn export(&self, path: &Path, format: TraceFormat) -> Result<()> {
        match format {
            TraceFormat::Csv => self.write_csv(path),
            TraceFormat::Json => {
                let file = File::create(path).map_err(|source| Error::Io {
                    path: path.to_path_buf(),
                    source,
                })?;
                let mut w = BufWriter::new(file);
                serde_json::to_writer_pretty(&mut w, self).map_err(|source| Error::Json {
                    path: path.to_path_buf(),
                    source,
                })?;
                w.flush().map_err(|source| Error::Io {
                    path: path.to_path_buf(),
                    source,
                })
            }
        }
    }

    /// Reads a trace written by [`AnnealTrace::export`]. CSV files do not
    /// carry the grid, so it is supplied by the caller.
    pub fn import(path: &Path, format: TraceFormat, framework: Framework, grid: GridSpec) -> Result<Self> {
        match format {
            TraceFormat::Json => {
                let file = File::open(path).map_err(|source| Error::Io {
                    path: path.to_path_buf(),
                    source,
                })?;
                serde_json::from_reader(std::io::BufReader::new(file)).map_err(|source| Error::Json {
                    path: path.to_path_buf(),
                    source,
                })
            }
            TraceFormat::Csv => Self::read_csv(path, framework, grid),
        }
    }

    fn write_csv(&self, path: &Path) -> Result<()> {
        let n_y = self
            .records
            .iter()
            .flat_map(|r| r.decoder.first())
            .map(|r| r.len())
            .max()
            .unwrap_or(0);
        let max_k = self.records.iter().map(|r| r.decoder.len()).max().unwrap_or(0);
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
        for i in 0..max_k {
            for j in 0..n_y {
                header.push(format!("dec_xhat{i}_y{j}"));
            }
        }
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.records {
            let mut row = vec![
                self.framework.to_string(),
                r.beta.to_string(),
                r.i_x.to_string(),
                r.i_y.to_string(),
                r.functional.to_string(),
                r.expected_distortion.to_string(),
                r.iterations.to_string(),
                r.converged.to_string(),
                r.effective_clusters.to_string(),
                r.flagged.to_string(),
                "nats".to_string(),
            ];
            for i in 0..max_k {
                for j in 0..n_y {
                    row.push(
                        r.decoder
                            .get(i)
                            .and_then(|d| d.get(j))
                            .map(|v| v.to_string())
                            .unwrap_or_default(),
                    );
                }
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    fn read_csv(path: &Path, framework: Framework, grid: GridSpec) -> Result<Self> {
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let bad = |what: String| Error::validation(path.display().to_string(), what);
        let mut rd = csv::Reader::from_path(path).map_err(csv_err)?;
        let header = rd.headers().map_err(csv_err)?.clone();
        if header.len() < FIXED_COLUMNS.len() || header.iter().zip(FIXED_COLUMNS).any(|(a, b)| a != b) {
            return Err(bad("unexpected trace header".into()));
        }
        let mut n_y = 0;
        for h in header.iter().skip(FIXED_COLUMNS.len()) {
            let j: usize = h
                .rsplit_once("_y")
                .and_then(|(_, j)| j.parse().ok())
                .ok_or_else(|| bad(format!("bad decoder column `{h}`")))?;
            n_y = n_y.max(j + 1);
        }
        let n_dec = header.len() - FIXED_COLUMNS.len();
        let mut records = Vec::new();
        for (line, row) in rd.records().enumerate() {
            let row = row.map_err(csv_err)?;
            let field = |i: usize| row.get(i).unwrap_or("");
            let num = |i: usize| -> Result<T> {
                field(i)
                    .parse::<T>()
                    .map_err(|_| bad(format!("row {line}: `{}` is not a number", FIXED_COLUMNS[i])))
            };
            let int = |i: usize| -> Result<usize> {
                field(i)
                    .parse::<usize>()
                    .map_err(|_| bad(format!("row {line}: `{}` is not an integer", FIXED_COLUMNS[i])))
            };
            let boolean = |i: usize| -> Result<bool> {
                field(i)
                    .parse::<bool>()
                    .map_err(|_| bad(format!("row {line}: `{}` is not a boolean", FIXED_COLUMNS[i])))
            };
            if field(0) != framework.as_str() {
                return Err(bad(format!("row {line}: framework `{}` does not match", field(0))));
            }
            let k = int(8)?;
            let mut decoder = Vec::with_capacity(k);
            for i in 0..k {
                let mut d = Vec::with_capacity(n_y);
                for j in 0..n_y {
                    let idx = FIXED_COLUMNS.len() + i * n_y + j;
                    if i * n_y + j >= n_dec {
                        return Err(bad(format!("row {line}: missing decoder entries")));
                    }
                    d.push(
                        field(idx)
                            .parse::<T>()
                            .map_err(|_| bad(format!("row {line}: bad decoder entry")))?,
                    );
                }
                decoder.push(d);
            }
            records.push(AnnealRecord {
                beta: num(1)?,
                i_x: num(2)?,
                i_y: num(3)?,
                functional: num(4)?,
                expected_distortion: num(5)?,
                iterations: int(6)?,
                converged: boolean(7)?,
                effective_clusters: k,
                flagged: boolean(9)?,
                decoder,
            });
        }
        Ok(Self {
            framework,
            grid,
            records,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn d1() -> JointDistribution<f64> {
        let t = array![[0.12, 0.88], [0.23, 0.77], [0.4, 0.6], [0.6, 0.4], [0.76, 0.24]];
        JointDistribution::from_conditional(&[0.2; 5], t, 0.0).unwrap()
    }

    #[test]
    fn grid_parsing_and_values() {
        let g: GridSpec = "log:0.25:64:400".parse().unwrap();
        let v = g.values();
        assert_eq!(v.len(), 400);
        assert_eq!(v[0], 0.25);
        assert_eq!(v[399], 64.0);
        assert!(v.windows(2).all(|w| w[0] < w[1]));
        let ratio = v[1] / v[0];
        assert!((v[200] / v[199] - ratio).abs() < 1e-12);
        assert_eq!(g.to_string().parse::<GridSpec>().unwrap(), g);
        let lin: GridSpec = "linear:0:2:5".parse().unwrap();
        assert_eq!(lin.values(), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        for bad in ["log:0:1:3", "log:2:1:3", "log:1:2", "cubic:1:2:3", "log:1:2:0"] {
            assert!(bad.parse::<GridSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn split_conserves_mass_and_zero_eps_merges_back() {
        let j = d1();
        let s = BottleneckState::random(&j, Framework::Ib, 3.0, 3, 5).unwrap();
        let sp = split_and_perturb(&s, &j, 1e-3, 9).unwrap();
        assert_eq!(sp.n_xhat(), 6);
        assert!((sp.marginal.sum() - s.marginal.sum()).abs() < 1e-12);
        for k in 0..3 {
            for x in 0..5 {
                let pair = sp.encoder.get(x, 2 * k) + sp.encoder.get(x, 2 * k + 1);
                assert!((pair - s.encoder.get(x, k)).abs() < 1e-15);
            }
        }
        assert_eq!(sp, split_and_perturb(&s, &j, 1e-3, 9).unwrap());

        let flat = split_and_perturb(&s, &j, 0.0, 9).unwrap();
        let back = merge(&flat, &j, 1e-4).unwrap();
        assert_eq!(back.n_xhat(), 3);
        assert!(back.encoder.max_abs_diff(&s.encoder) < 1e-15);
        assert!(split_and_perturb(&s, &j, 0.5, 0).is_err());
    }

    #[test]
    fn merge_is_idempotent_and_absorbs_dead_clusters() {
        let j = d1();
        let enc = array![
            [0.5, 0.5, 0.0],
            [0.5, 0.5, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, 1.0]
        ];
        let mut with_dead = ndarray::Array2::zeros((5, 4));
        with_dead.slice_mut(ndarray::s![.., 0..3]).assign(&enc);
        let enc = ConditionalDistribution::new(with_dead, Var::X, Var::XHat).unwrap();
        let s = BottleneckState::from_encoder(&j, Framework::Ib, 1.0, enc, None).unwrap();
        assert_eq!(s.live_clusters(), 3);
        let m = merge(&s, &j, 1e-4).unwrap();
        assert_eq!(m.n_xhat(), 2);
        assert_eq!(merge(&m, &j, 1e-4).unwrap(), m);
    }

    fn short_sweep(fw: Framework) -> AnnealTrace<f64> {
        let grid = GridSpec::log(0.25, 64.0, 40).unwrap();
        sweep(&d1(), fw, &grid, &SweepConfig::default()).unwrap()
    }

    #[test]
    fn sweep_starts_trivial_and_is_reproducible() {
        let a = short_sweep(Framework::Dual);
        assert_eq!(a.records.len(), 40);
        assert_eq!(a.records[0].effective_clusters, 1);
        assert!(a.records[0].i_x.abs() < 1e-9);
        assert!(a
            .records
            .windows(2)
            .all(|w| w[1].effective_clusters >= w[0].effective_clusters));
        assert!(a.records.last().unwrap().effective_clusters > 1);
        assert_eq!(a, short_sweep(Framework::Dual));
    }

    #[test]
    fn trace_round_trips() {
        let t = short_sweep(Framework::Ib);
        let dir = tempfile::tempdir().unwrap();
        for fmt in [TraceFormat::Csv, TraceFormat::Json] {
            let p = dir.path().join(format!("t.{}", fmt.extension()));
            t.export(&p, fmt).unwrap();
            let back = AnnealTrace::import(&p, fmt, t.framework, t.grid).unwrap();
            assert_eq!(back, t, "{fmt:?}");
        }
        let empty = AnnealTrace::<f64> {
            framework: Framework::Ib,
            grid: t.grid,
            records: vec![],
        };
        let p = dir.path().join("empty.csv");
        empty.export(&p, TraceFormat::Csv).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("framework,beta,i_x"));
    }
}
