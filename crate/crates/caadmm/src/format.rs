//! On-disk formats: the JSON problem file and the solver trace CSV.
//!
//! Problem JSON:
//!
//! ```json
//! {"n": 1, "m": 1, "P": [[0, 0, 2.0]], "q": [-2.0],
//!  "A": [[0, 0, 1.0]], "l": [0.0], "u": ["inf"]}
//! ```
//!
//! Infinite bounds are written as the strings `"inf"` / `"-inf"`.

use std::io::Write;

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::admm::TraceRecord;
use crate::qp::{QpError, QpProblem, SparseMatrix};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("schema: {0}")]
    Schema(String),
    #[error(transparent)]
    Qp(#[from] QpError),
}

fn bound_to_json(v: f64) -> Value {
    if v == f64::INFINITY {
        Value::String("inf".into())
    } else if v == f64::NEG_INFINITY {
        Value::String("-inf".into())
    } else {
        json!(v)
    }
}

fn bound_from_json(v: &Value, key: &str) -> Result<f64, FormatError> {
    match v {
        Value::Number(x) => x
            .as_f64()
            .ok_or_else(|| FormatError::Schema(format!("{key}: bad number"))),
        Value::String(s) if s == "inf" || s == "+inf" => Ok(f64::INFINITY),
        Value::String(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
        other => Err(FormatError::Schema(format!("{key}: unexpected value {other}"))),
    }
}

fn triplets_to_json(m: &SparseMatrix) -> Value {
    Value::Array(
        m.entries()
            .iter()
            .map(|&(r, c, v)| json!([r, c, v]))
            .collect(),
    )
}

fn triplets_from_json(
    v: &Value,
    key: &str,
    rows: usize,
    cols: usize,
) -> Result<SparseMatrix, FormatError> {
    let arr = v
        .as_array()
        .ok_or_else(|| FormatError::Schema(format!("{key} must be an array of [i, j, v]")))?;
    let mut entries = Vec::with_capacity(arr.len());
    for t in arr {
        let t = t
            .as_array()
            .filter(|t| t.len() == 3)
            .ok_or_else(|| FormatError::Schema(format!("{key}: entries must be [i, j, v]")))?;
        let i = t[0]
            .as_u64()
            .ok_or_else(|| FormatError::Schema(format!("{key}: bad row index")))?;
        let j = t[1]
            .as_u64()
            .ok_or_else(|| FormatError::Schema(format!("{key}: bad column index")))?;
        let x = t[2]
            .as_f64()
            .ok_or_else(|| FormatError::Schema(format!("{key}: bad value")))?;
        entries.push((i as usize, j as usize, x));
    }
    Ok(SparseMatrix::from_triplets(rows, cols, entries)?)
}

pub fn problem_to_json(problem: &QpProblem) -> Value {
    let mut obj = Map::new();
    obj.insert("n".into(), json!(problem.n));
    obj.insert("m".into(), json!(problem.m));
    obj.insert("P".into(), triplets_to_json(&problem.p));
    obj.insert("q".into(), json!(problem.q));
    obj.insert("A".into(), triplets_to_json(&problem.a));
    obj.insert(
        "l".into(),
        Value::Array(problem.l.iter().map(|&v| bound_to_json(v)).collect()),
    );
    obj.insert(
        "u".into(),
        Value::Array(problem.u.iter().map(|&v| bound_to_json(v)).collect()),
    );
    Value::Object(obj)
}

pub fn problem_to_string(problem: &QpProblem) -> String {
    serde_json::to_string(&problem_to_json(problem)).expect("problem json serializes")
}

pub fn problem_from_json(v: &Value) -> Result<QpProblem, FormatError> {
    let get = |k: &str| {
        v.get(k)
            .ok_or_else(|| FormatError::Schema(format!("missing key {k}")))
    };
    let n = get("n")?
        .as_u64()
        .ok_or_else(|| FormatError::Schema("n must be an integer".into()))? as usize;
    let m = get("m")?
        .as_u64()
        .ok_or_else(|| FormatError::Schema("m must be an integer".into()))? as usize;
    let p = triplets_from_json(get("P")?, "P", n, n)?;
    let a = triplets_from_json(get("A")?, "A", m, n)?;
    let q = get("q")?
        .as_array()
        .ok_or_else(|| FormatError::Schema("q must be an array".into()))?
        .iter()
        .map(|x| {
            x.as_f64()
                .ok_or_else(|| FormatError::Schema("q: bad number".into()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let bounds = |k: &str| -> Result<Vec<f64>, FormatError> {
        get(k)?
            .as_array()
            .ok_or_else(|| FormatError::Schema(format!("{k} must be an array")))?
            .iter()
            .map(|x| bound_from_json(x, k))
            .collect()
    };
    let l = bounds("l")?;
    let u = bounds("u")?;
    if q.len() != n || l.len() != m || u.len() != m {
        return Err(QpError::DimensionMismatch(format!(
            "declared n={n}, m={m} but q/l/u have lengths {}/{}/{}",
            q.len(),
            l.len(),
            u.len()
        ))
        .into());
    }
    Ok(QpProblem::new(p, q, a, l, u)?)
}

pub fn problem_from_str(s: &str) -> Result<QpProblem, FormatError> {
    problem_from_json(&serde_json::from_str(s)?)
}

pub const TRACE_HEADER: &str =
    "iteration,norm_r_primal,norm_r_dual,rho_mean_log10,rho_min_log10,rho_max_log10";

pub fn write_trace_csv<W: Write>(mut w: W, trace: &[TraceRecord]) -> std::io::Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in trace {
        writeln!(
            w,
            "{},{:e},{:e},{},{},{}",
            r.iteration,
            r.norm_r_primal,
            r.norm_r_dual,
            r.rho_mean_log10,
            r.rho_min_log10,
            r.rho_max_log10
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> QpProblem {
        QpProblem::new(
            SparseMatrix::from_triplets(2, 2, vec![(0, 0, 2.0), (0, 1, 0.5), (1, 0, 0.5)]).unwrap(),
            vec![1.0, -1.0],
            SparseMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (1, 1, -3.0)]).unwrap(),
            vec![f64::NEG_INFINITY, 0.0],
            vec![1.0, f64::INFINITY],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_preserves_problem_and_infinities() {
        let p = sample();
        let s = problem_to_string(&p);
        assert!(s.contains("\"-inf\"") && s.contains("\"inf\""));
        assert_eq!(problem_from_str(&s).unwrap(), p);
    }

    #[test]
    fn schema_errors_name_the_key() {
        let err = problem_from_str(r#"{"n":1,"m":1,"P":[],"q":[0],"A":[],"l":[0]}"#).unwrap_err();
        assert!(err.to_string().contains("missing key u"));
        let err =
            problem_from_str(r#"{"n":1,"m":1,"P":[],"q":[0],"A":[],"l":["x"],"u":[1]}"#).unwrap_err();
        assert!(err.to_string().contains('l'));
    }

    #[test]
    fn trace_csv_has_header() {
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim(), TRACE_HEADER);
    }
}
