//! Problem files: JSON with one of `p_y_given_x`, `exp_family` or
//! `class_conditionals`, or a CSV table with a `p_x` column followed by one
//! column per label.

use std::path::Path;

use ndarray::Array2;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::error_exp::ClassificationProblem;
use crate::expfam::ExpFamilyModel;
use crate::prob::{JointDistribution, DEFAULT_SMOOTHING};

#[derive(Clone, Debug)]
pub enum Problem {
    Table(JointDistribution<f64>),
    ExpFamily {
        model: ExpFamilyModel<f64>,
        joint: JointDistribution<f64>,
    },
    Classes(ClassificationProblem),
}

impl Problem {
    /// The joint distribution the solvers run on. Classification problems use
    /// the class as the label.
    pub fn joint(&self) -> Result<JointDistribution<f64>> {
        match self {
            Problem::Table(j) => Ok(j.clone()),
            Problem::ExpFamily { joint, .. } => Ok(joint.clone()),
            Problem::Classes(c) => c.joint(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Problem::Table(_) => "table",
            Problem::ExpFamily { .. } => "exp_family",
            Problem::Classes(_) => "classes",
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemFile {
    #[serde(default, rename = "name")]
    _name: Option<String>,
    #[serde(default, rename = "description")]
    _description: Option<String>,
    p_x: Option<Vec<f64>>,
    p_y_given_x: Option<Vec<Vec<f64>>>,
    smoothing_epsilon: Option<f64>,
    exp_family: Option<ExpFamilyFile>,
    class_conditionals: Option<Vec<Vec<f64>>>,
    prior: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExpFamilyFile {
    features: Vec<Vec<f64>>,
    params: Vec<Vec<f64>>,
}

fn matrix(rows: &[Vec<f64>], field: &str, allow_empty_rows: bool) -> Result<Array2<f64>> {
    if rows.is_empty() {
        return Err(Error::validation(field, "must have at least one row"));
    }
    let n = rows[0].len();
    if n == 0 && !allow_empty_rows {
        return Err(Error::validation(format!("{field}[0]"), "must not be empty"));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != n) {
        return Err(Error::validation(
            format!("{field}[{i}]"),
            format!("has {} entries, expected {n}", rows[i].len()),
        ));
    }
    Ok(Array2::from_shape_fn((rows.len(), n), |(i, j)| rows[i][j]))
}

fn smoothing(value: Option<f64>) -> Result<f64> {
    let eps = value.unwrap_or(DEFAULT_SMOOTHING);
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::validation("smoothing_epsilon", "must be finite and nonnegative"));
    }
    Ok(eps)
}

/// Reads a problem file and validates it. The format follows the extension:
/// `.csv` is a table, anything else is JSON.
pub fn load_problem(path: &Path) -> Result<Problem> {
    let text = std::fs::read_to_string(path).map_err(Error::io_at(path))?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        return parse_csv(&text);
    }
    let file: ProblemFile = serde_json::from_str(&text).map_err(|e| {
        Error::validation(
            path.display().to_string(),
            format!("does not match the problem schema: {e}"),
        )
    })?;
    from_file(file)
}

/// Parses a JSON problem from a string.
pub fn parse_json(text: &str) -> Result<Problem> {
    let file: ProblemFile = serde_json::from_str(text)
        .map_err(|e| Error::validation("problem", format!("does not match the problem schema: {e}")))?;
    from_file(file)
}

fn from_file(f: ProblemFile) -> Result<Problem> {
    let kinds = [
        ("p_y_given_x", f.p_y_given_x.is_some()),
        ("exp_family", f.exp_family.is_some()),
        ("class_conditionals", f.class_conditionals.is_some()),
    ];
    let present: Vec<&str> = kinds.iter().filter(|k| k.1).map(|k| k.0).collect();
    match present.len() {
        0 => {
            return Err(Error::validation(
                "problem",
                "needs one of `p_y_given_x`, `exp_family` or `class_conditionals`",
            ))
        }
        1 => {}
        _ => {
            return Err(Error::validation(
                present[1],
                format!(
                    "ambiguous problem: both `{}` and `{}` are present",
                    present[0], present[1]
                ),
            ))
        }
    }
    let eps = smoothing(f.smoothing_epsilon)?;
    if let Some(rows) = f.class_conditionals {
        if f.p_x.is_some() {
            return Err(Error::validation(
                "p_x",
                "not used by a classification problem; give `prior` instead",
            ));
        }
        let m = matrix(&rows, "class_conditionals", false)?;
        return Ok(Problem::Classes(ClassificationProblem::new(m, f.prior, eps)?));
    }
    if f.prior.is_some() {
        return Err(Error::validation("prior", "only used with `class_conditionals`"));
    }
    let p_x = f.p_x.ok_or_else(|| Error::validation("p_x", "missing"))?;
    if let Some(table) = f.p_y_given_x {
        let t = matrix(&table, "p_y_given_x", false)?;
        return Ok(Problem::Table(JointDistribution::from_conditional(&p_x, t, eps)?));
    }
    let ef = f.exp_family.expect("one kind is present");
    if f.smoothing_epsilon.is_some_and(|e| e != 0.0) {
        return Err(Error::validation(
            "smoothing_epsilon",
            "an exponential-family rule is not smoothed",
        ));
    }
    let features = matrix(&ef.features, "exp_family.features", true)?;
    let params = matrix(&ef.params, "exp_family.params", true)?;
    let model = ExpFamilyModel::new(features, params, &p_x)?;
    let joint = model.joint()?;
    Ok(Problem::ExpFamily { model, joint })
}

fn parse_csv(text: &str) -> Result<Problem> {
    let mut rd = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rd
        .headers()
        .map_err(|e| Error::validation("csv", e.to_string()))?
        .clone();
    if header.get(0) != Some("p_x") || header.len() < 2 {
        return Err(Error::validation(
            "csv header",
            "expected `p_x` followed by one column per label",
        ));
    }
    let mut p_x = Vec::new();
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| Error::validation(format!("csv row {i}"), e.to_string()))?;
        let mut vals = Vec::with_capacity(rec.len());
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                Error::validation(
                    format!("csv row {i}, column `{}`", &header[j]),
                    format!("`{cell}` is not a number"),
                )
            })?;
            vals.push(v);
        }
        p_x.push(vals[0]);
        rows.push(vals[1..].to_vec());
    }
    let t = matrix(&rows, "p_y_given_x", false)?;
    Ok(Problem::Table(JointDistribution::from_conditional(
        &p_x,
        t,
        DEFAULT_SMOOTHING,
    )?))
}

#[cfg(test)]
mod tests {
    use super::*;

    const D1: &str = r#"{"p_x": [0.2, 0.2, 0.2, 0.2, 0.2],
        "p_y_given_x": [[0.12, 0.88], [0.23, 0.77], [0.4, 0.6], [0.6, 0.4], [0.76, 0.24]],
        "smoothing_epsilon": 0}"#;

    #[test]
    fn table_is_loaded_exactly() {
        let Problem::Table(j) = parse_json(D1).unwrap() else {
            panic!("kind")
        };
        let col: Vec<f64> = j.p_y_given_x().column(0).to_vec();
        assert_eq!(col, vec![0.12, 0.23, 0.4, 0.6, 0.76]);
        assert!(j.p_x().iter().all(|&v| v == 0.2));
    }

    #[test]
    fn negative_probability_names_the_entry() {
        let text = D1.replace("[0.4, 0.6]", "[-0.4, 1.4]");
        match parse_json(&text) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "p_y_given_x[2][0]"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ambiguous_problem_is_rejected() {
        let text = D1.replace(
            "\"smoothing_epsilon\": 0",
            "\"smoothing_epsilon\": 0, \"exp_family\": {\"features\": [[1]], \"params\": [[0], [1]]}",
        );
        let err = parse_json(&text).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("ambiguous"));
    }

    #[test]
    fn unknown_field_is_rejected() {
        let text = D1.replace("\"smoothing_epsilon\"", "\"smoothing\"");
        let err = parse_json(&text).unwrap_err();
        assert!(err.to_string().contains("smoothing"));
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let text = D1.replace("[0.23, 0.77]", "[0.23, 0.77, 0.0]");
        match parse_json(&text) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "p_y_given_x[1]"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_table() {
        let Problem::Table(j) = parse_csv("p_x,y0,y1\n0.5,0.1,0.9\n0.5,0.7,0.3\n").unwrap() else {
            panic!("kind")
        };
        assert_eq!(j.n_x(), 2);
        assert!(parse_csv("px,y0\n1,1\n").is_err());
        assert!(parse_csv("p_x,y0,y1\n0.5,0.1,abc\n0.5,0.7,0.3\n")
            .unwrap_err()
            .is_validation());
    }

    #[test]
    fn exp_family_and_classes() {
        let ef = r#"{"p_x": [0.5, 0.5], "exp_family": {"features": [[0.3], [-1.0]], "params": [[0], [1]]}}"#;
        assert!(matches!(parse_json(ef).unwrap(), Problem::ExpFamily { .. }));
        let cl = r#"{"class_conditionals": [[0.5, 0.5], [0.1, 0.9]]}"#;
        let Problem::Classes(c) = parse_json(cl).unwrap() else {
            panic!("kind")
        };
        assert_eq!(c.n_classes(), 2);
    }
}
