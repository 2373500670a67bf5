use std::path::Path;
use std::sync::OnceLock;

use bottleneck_lab::anneal::{self, AnnealTrace, GridSpec, SweepConfig};
use bottleneck_lab::critical::{self, CriticalConfig};
use bottleneck_lab::dual::dual_expected_distortion;
use bottleneck_lab::error_exp::{self, ClassificationProblem, ExperimentConfig};
use bottleneck_lab::{Framework, Joint, State};

struct Sweep {
    trace: AnnealTrace<f64>,
    states: Vec<State>,
    critical: Vec<f64>,
}

fn problem() -> Joint {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/appendixD1.json");
    match bottleneck_lab::cli::load_problem(&path).unwrap() {
        bottleneck_lab::cli::Problem::Table(j) => j,
        _ => unreachable!(),
    }
}

fn grid() -> GridSpec {
    GridSpec::log(0.25, 64.0, 400).unwrap()
}

fn sweeps() -> &'static (Joint, Vec<Sweep>) {
    static CELL: OnceLock<(Joint, Vec<Sweep>)> = OnceLock::new();
    CELL.get_or_init(|| {
        let joint = problem();
        let config = CriticalConfig::default();
        let out = Framework::BOTH
            .iter()
            .map(|&fw| {
                let (trace, states) = anneal::sweep_with_states(&joint, fw, &grid(), &config.sweep).unwrap();
                let report = critical::find_critical_points_on(&joint, fw, &grid().values(), &states, &config).unwrap();
                Sweep {
                    trace,
                    states,
                    critical: report.points.iter().map(|p| p.beta_c).collect(),
                }
            })
            .collect();
        (joint, out)
    })
}

fn upper_envelope(points: &[(f64, f64)], x: f64) -> Option<f64> {
    let i = points.partition_point(|p| p.0 < x);
    if i == points.len() {
        return None;
    }
    if i == 0 || points[i].0 == x {
        return Some(points[i].1);
    }
    let (a, b) = (points[i - 1], points[i]);
    Some(a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0))
}

#[test]
fn dual_points_lie_under_the_ib_curve() {
    let (_, s) = sweeps();
    let ib: Vec<(f64, f64)> = s[0].trace.records.iter().map(|r| (r.i_x, r.i_y)).collect();
    let mut checked = 0;
    for r in &s[1].trace.records {
        if let Some(y) = upper_envelope(&ib, r.i_x) {
            assert!(r.i_y <= y + 1e-9, "I_x {}: dual {} above IB {}", r.i_x, r.i_y, y);
            checked += 1;
        }
    }
    assert!(checked > 300);
}

#[test]
fn dual_rate_is_nonincreasing_convex_in_distortion() {
    let (joint, s) = sweeps();
    let mut pts: Vec<(f64, f64)> = s[1]
        .states
        .iter()
        .zip(&s[1].trace.records)
        .map(|(st, r)| (dual_expected_distortion(st, joint), r.i_x))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts.dedup_by(|b, a| (b.0 - a.0).abs() <= 1e-12);
    for w in pts.windows(2) {
        assert!(w[1].1 <= w[0].1 + 1e-9, "rate rises with distortion at {:?}", w);
    }
    for w in pts.windows(3) {
        let chord = w[0].1 + (w[2].1 - w[0].1) * (w[1].0 - w[0].0) / (w[2].0 - w[0].0);
        assert!(
            w[1].1 <= chord + 1e-7,
            "secant test fails by {:.3e} at distortion {}",
            w[1].1 - chord,
            w[1].0
        );
    }
}

#[test]
fn compression_is_concave_in_beta_between_critical_points() {
    let (_, s) = sweeps();
    for sweep in s {
        let r = &sweep.trace.records;
        let slopes: Vec<(f64, f64, f64)> = r
            .windows(2)
            .map(|w| (w[0].beta, w[1].beta, (w[1].i_x - w[0].i_x) / (w[1].beta - w[0].beta)))
            .collect();
        for w in slopes.windows(2) {
            let (lo, hi) = (w[0].0, w[1].1);
            // slopes spanning a critical point belong to different pieces
            if sweep.critical.iter().any(|&b| b >= lo && b <= hi) {
                continue;
            }
            assert!(
                w[1].2 <= w[0].2 + 1e-6,
                "{}: slope rises from {} to {} on [{lo}, {hi}]",
                sweep.trace.framework,
                w[0].2,
                w[1].2
            );
        }
    }
}

#[test]
fn merging_a_merged_state_changes_nothing() {
    let (joint, s) = sweeps();
    let tol = SweepConfig::default().merge_tol;
    for sweep in s {
        for st in sweep.states.iter().step_by(25) {
            let again = anneal::merge(st, joint, tol).unwrap();
            assert_eq!(&again, st);
        }
    }
}

#[test]
fn sweeps_are_bit_reproducible() {
    let joint = problem();
    let grid = GridSpec::log(0.25, 64.0, 80).unwrap();
    let config = SweepConfig {
        seed: 11,
        ..SweepConfig::default()
    };
    for fw in Framework::BOTH {
        let a = anneal::sweep(&joint, fw, &grid, &config).unwrap();
        let b = anneal::sweep(&joint, fw, &grid, &config).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn error_decreases_with_sample_size_within_ci() {
    let cfg = ExperimentConfig {
        trials: 2000,
        seed: 3,
        ..ExperimentConfig::default()
    };
    let curves = error_exp::run_prediction_experiment(&ClassificationProblem::m8(), &Framework::BOTH, &cfg).unwrap();
    assert_eq!(curves.len(), 2 * cfg.betas.len());
    for c in &curves {
        for i in 1..c.p_err.len() {
            assert!((0.0..=1.0).contains(&c.p_err[i]));
            assert!(
                c.p_err[i] <= c.p_err[i - 1] + c.ci_halfwidth[i] + c.ci_halfwidth[i - 1],
                "{} beta {}: {:?}",
                c.framework,
                c.beta,
                c.p_err
            );
        }
    }
}
