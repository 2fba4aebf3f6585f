//! Canonical report serialization: CSV and JSON with deterministic
//! 17-significant-digit decimal floats, so identical results produce
//! identical bytes.

use crate::study::StudyResult;
use crate::verify::{Outcome, VerifyReport};

/// 17 significant decimal digits: enough to round-trip any f64 exactly.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

fn csv_field(text: &str) -> String {
    if text.contains(',') || text.contains('"') || text.contains('\n') {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text.to_string()
    }
}

pub fn emit_study_csv(result: &StudyResult) -> String {
    let mut out = String::from("fixture,estimator,n,seed_count,mean,rmse,slope,bound_thm2,bound_thm3\n");
    for curve in &result.curves {
        for point in &curve.points {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                csv_field(&result.fixture),
                csv_field(&curve.estimator),
                point.n,
                result.seed_count,
                fmt_f64(point.mean),
                fmt_f64(point.rmse),
                fmt_f64(curve.slope),
                fmt_f64(point.bound_thm2),
                fmt_f64(point.bound_thm3),
            ));
        }
    }
    out
}

fn json_string(text: &str) -> String {
    serde_json::to_string(text).expect("string serialization cannot fail")
}

/// JSON mirror of the CSV with per-seed estimates attached; floats are
/// emitted with the same 17-digit formatter, so emission is a pure function
/// of the value and re-serialization is byte-identical.
pub fn emit_study_json(result: &StudyResult) -> String {
    let mut out = String::from("{");
    out.push_str(&format!("\"fixture\":{},", json_string(&result.fixture)));
    out.push_str(&format!("\"true_value\":{},", json_number(result.true_value)));
    out.push_str(&format!("\"seed_count\":{},", result.seed_count));
    out.push_str("\"curves\":[");
    for (ci, curve) in result.curves.iter().enumerate() {
        if ci > 0 {
            out.push(',');
        }
        out.push_str(&format!(
            "{{\"estimator\":{},\"slope\":{},\"points\":[",
            json_string(&curve.estimator),
            json_number(curve.slope)
        ));
        for (pi, point) in curve.points.iter().enumerate() {
            if pi > 0 {
                out.push(',');
            }
            out.push_str(&format!(
                "{{\"n\":{},\"mean\":{},\"rmse\":{},\"bound_thm2\":{},\"bound_thm3\":{},\"estimates\":[",
                point.n,
                json_number(point.mean),
                json_number(point.rmse),
                json_number(point.bound_thm2),
                json_number(point.bound_thm3)
            ));
            for (ei, est) in point.estimates.iter().enumerate() {
                if ei > 0 {
                    out.push(',');
                }
                out.push_str(&json_number(*est));
            }
            out.push_str("]}");
        }
        out.push_str("]}");
    }
    out.push_str("]}");
    out
}

/// JSON has no inf/nan literals; those values are emitted as strings.
fn json_number(x: f64) -> String {
    if x.is_finite() {
        fmt_f64(x)
    } else {
        json_string(&fmt_f64(x))
    }
}

pub fn emit_verify_csv(report: &VerifyReport) -> String {
    let mut out = String::from("check,fixture,step,outcome,residual,tolerance,detail\n");
    for row in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            csv_field(&row.check),
            csv_field(&row.fixture),
            row.step.map_or(String::new(), |h| h.to_string()),
            match row.outcome {
                Outcome::Pass => "pass",
                Outcome::Fail => "fail",
                Outcome::Skip => "skip",
            },
            fmt_f64(row.residual),
            fmt_f64(row.tolerance),
            csv_field(&row.detail),
        ));
    }
    out
}

pub fn emit_verify_json(report: &VerifyReport) -> String {
    let mut out = String::from("{\"rows\":[");
    for (i, row) in report.rows.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&format!(
            "{{\"check\":{},\"fixture\":{},\"step\":{},\"outcome\":{},\"residual\":{},\"tolerance\":{},\"detail\":{}}}",
            json_string(&row.check),
            json_string(&row.fixture),
            row.step.map_or("null".into(), |h| h.to_string()),
            json_string(match row.outcome {
                Outcome::Pass => "pass",
                Outcome::Fail => "fail",
                Outcome::Skip => "skip",
            }),
            json_number(row.residual),
            json_number(row.tolerance),
            json_string(&row.detail),
        ));
    }
    out.push_str("]}");
    out
}
