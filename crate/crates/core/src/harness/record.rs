//! One CSV row per recorded iteration.
//!
//! Floats are written in Rust's shortest round-trip form (`{:?}`), so parsing
//! a field gives back the exact `f64`. Missing values are empty fields.
//! Divergence is recorded as `inf`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::HarnessError;

pub const CSV_HEADER: &str = "run_id,method,kind,n,kappa,eta,iter,loss,max_dist,increment_norm,delta_hat,wall_ms,seed";

/// Column meanings by kind:
///
/// - `decomp`, `cond-sweep`: `loss` is the relative error `‖L·Rᵀ − Y‖_F/‖Y‖_F`.
/// - `multiterm`: `loss` is the objective, `max_dist` the largest aligned
///   distance to the truth, `delta_hat` (iteration 0 only) the largest RIP estimate.
/// - `width-sweep`: `increment_norm` is `‖f_t − f_{t−1}‖∞`.
/// - `toy`: `loss` is `½(f_t − y)²`, `increment_norm` is `|f_t − f_{t−1}|`.
/// - `arrangements`: `loss` is the number of distinct masks; `iter` the
///   number of sampled directions (0 for the exhaustive sweep).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: usize,
    pub method: String,
    pub kind: String,
    pub n: usize,
    pub kappa: Option<f64>,
    pub eta: Option<f64>,
    pub iter: usize,
    pub loss: Option<f64>,
    pub max_dist: Option<f64>,
    pub increment_norm: Option<f64>,
    pub delta_hat: Option<f64>,
    pub wall_ms: Option<f64>,
    pub seed: u64,
}

fn opt(out: &mut String, v: Option<f64>) {
    if let Some(v) = v {
        write!(out, "{v:?}").expect("writing to a String");
    }
}

impl RunRecord {
    pub fn to_csv_line(&self) -> String {
        let mut s = String::with_capacity(96);
        write!(s, "{},{},{},{},", self.run_id, self.method, self.kind, self.n).expect("writing to a String");
        for v in [self.kappa, self.eta] {
            opt(&mut s, v);
            s.push(',');
        }
        write!(s, "{},", self.iter).expect("writing to a String");
        for v in [
            self.loss,
            self.max_dist,
            self.increment_norm,
            self.delta_hat,
            self.wall_ms,
        ] {
            opt(&mut s, v);
            s.push(',');
        }
        write!(s, "{}", self.seed).expect("writing to a String");
        s
    }

    pub fn from_csv_line(line: &str) -> Result<Self, HarnessError> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 13 {
            return Err(bad(line, format!("expected 13 fields, got {}", fields.len())));
        }
        let int = |i: usize| -> Result<u64, HarnessError> {
            fields[i]
                .parse::<u64>()
                .map_err(|e| bad(line, format!("field {i}: {e}")))
        };
        let float = |i: usize| -> Result<Option<f64>, HarnessError> {
            if fields[i].is_empty() {
                Ok(None)
            } else {
                fields[i]
                    .parse::<f64>()
                    .map(Some)
                    .map_err(|e| bad(line, format!("field {i}: {e}")))
            }
        };
        if fields[1].is_empty() || fields[2].is_empty() {
            return Err(bad(line, "method and kind must be nonempty".into()));
        }
        Ok(Self {
            run_id: int(0)? as usize,
            method: fields[1].to_string(),
            kind: fields[2].to_string(),
            n: int(3)? as usize,
            kappa: float(4)?,
            eta: float(5)?,
            iter: int(6)? as usize,
            loss: float(7)?,
            max_dist: float(8)?,
            increment_norm: float(9)?,
            delta_hat: float(10)?,
            wall_ms: float(11)?,
            seed: int(12)?,
        })
    }
}

fn bad(line: &str, message: String) -> HarnessError {
    HarnessError::Format(format!("{message} in row `{line}`"))
}

/// Header plus one line per record, newline-terminated.
pub fn to_csv(records: &[RunRecord]) -> String {
    let mut s = String::with_capacity(64 * (records.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.to_csv_line());
        s.push('\n');
    }
    s
}

/// Parses a CSV produced by [`to_csv`], checking the header and that `iter`
/// is nondecreasing within every run.
pub fn from_csv(text: &str) -> Result<Vec<RunRecord>, HarnessError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => return Err(HarnessError::Format(format!("unexpected header {other:?}"))),
    }
    let mut out: Vec<RunRecord> = Vec::new();
    for line in lines {
        let rec = RunRecord::from_csv_line(line)?;
        if let Some(prev) = out
            .iter()
            .rev()
            .find(|p| p.run_id == rec.run_id && p.method == rec.method)
        {
            if rec.iter < prev.iter {
                return Err(bad(line, format!("iter {} after {}", rec.iter, prev.iter)));
            }
        }
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> RunRecord {
        RunRecord {
            run_id: 3,
            method: "scaled_raw-gd".into(),
            kind: "decomp".into(),
            n: 50,
            kappa: Some(100.0),
            eta: Some(0.5),
            iter: 7,
            loss: Some(2.5e-7),
            max_dist: None,
            increment_norm: Some(f64::INFINITY),
            delta_hat: None,
            wall_ms: None,
            seed: 42,
        }
    }

    #[test]
    fn line_layout() {
        assert_eq!(
            sample().to_csv_line(),
            "3,scaled_raw-gd,decomp,50,100.0,0.5,7,2.5e-7,,inf,,,42"
        );
    }

    #[test]
    fn header_has_thirteen_columns() {
        assert_eq!(CSV_HEADER.split(',').count(), 13);
    }

    #[test]
    fn bad_rows_are_rejected() {
        assert!(from_csv("nope\n").is_err());
        assert!(from_csv(&format!("{CSV_HEADER}\n1,a,b,2\n")).is_err());
        let mut later = sample();
        later.iter = 2;
        assert!(from_csv(&to_csv(&[sample(), later])).is_err());
    }

    proptest! {
        #[test]
        fn floats_round_trip_exactly(loss in any::<f64>().prop_filter("not nan", |v| !v.is_nan()), kappa in proptest::option::of(1.0f64..1e6)) {
            let mut r = sample();
            r.loss = Some(loss);
            r.kappa = kappa;
            let back = from_csv(&to_csv(std::slice::from_ref(&r))).unwrap();
            prop_assert_eq!(back, vec![r]);
        }
    }
}
