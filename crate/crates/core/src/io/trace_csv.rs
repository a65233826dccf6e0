//! Trace and terminal-sample CSV files.
//!
//! Floats are written with 17 significant digits in scientific notation,
//! so reruns with the same inputs are byte-identical.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::latent::LatentTensor;
use crate::metrics::{StepSummary, TraceSummary};

pub const TRACE_HEADER: [&str; 5] = [
    "step",
    "mean_ratio",
    "max_ratio",
    "fallback_frac",
    "mean_moment",
];

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn trace_csv(summary: &TraceSummary) -> String {
    let mut out = TRACE_HEADER.join(",");
    out.push('\n');
    for s in &summary.steps {
        writeln!(
            out,
            "{},{},{},{},{}",
            s.step,
            fmt_f64(s.mean_ratio),
            fmt_f64(s.max_ratio),
            fmt_f64(s.fallback_frac),
            fmt_f64(s.mean_moment)
        )
        .expect("writing to a String");
    }
    out
}

/// One row per sample: `sample,x_0,...,x_{d-1}`.
pub fn samples_csv(samples: &[LatentTensor]) -> String {
    let d = samples.first().map_or(0, LatentTensor::len);
    let mut out = String::from("sample");
    for i in 0..d {
        write!(out, ",x_{i}").expect("writing to a String");
    }
    out.push('\n');
    for (i, s) in samples.iter().enumerate() {
        write!(out, "{i}").expect("writing to a String");
        for v in s.data() {
            write!(out, ",{}", fmt_f64(*v)).expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

/// Parses a trace CSV, requiring the exact header and at least one data row.
pub fn parse_trace_csv(bytes: &[u8]) -> Result<Vec<StepSummary>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes);
    let header = reader
        .headers()
        .map_err(|e| Error::MalformedCsv(e.to_string()))?;
    if header.iter().ne(TRACE_HEADER) {
        return Err(Error::MalformedCsv(format!(
            "header {:?}, expected {}",
            header.iter().collect::<Vec<_>>(),
            TRACE_HEADER.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::MalformedCsv(e.to_string()))?;
        let row = i + 2;
        let step = record[0]
            .trim()
            .parse::<usize>()
            .map_err(|e| Error::MalformedCsv(format!("row {row}: step {:?}: {e}", &record[0])))?;
        let mut values = [0.0; 4];
        for (slot, field) in values.iter_mut().zip(record.iter().skip(1)) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|e| Error::MalformedCsv(format!("row {row}: {field:?}: {e}")))?;
            if !v.is_finite() {
                return Err(Error::MalformedCsv(format!(
                    "row {row}: non-finite value {field:?}"
                )));
            }
            *slot = v;
        }
        let [mean_ratio, max_ratio, fallback_frac, mean_moment] = values;
        rows.push(StepSummary {
            step,
            mean_ratio,
            max_ratio,
            fallback_frac,
            mean_moment,
        });
    }
    if rows.is_empty() {
        return Err(Error::MalformedCsv("no data rows".into()));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary() -> TraceSummary {
        TraceSummary {
            steps: vec![
                StepSummary {
                    step: 2,
                    mean_ratio: 1.25,
                    max_ratio: 3.0,
                    fallback_frac: 0.0,
                    mean_moment: 0.1,
                },
                StepSummary {
                    step: 1,
                    mean_ratio: 1.0 / 3.0,
                    max_ratio: 0.5,
                    fallback_frac: 0.5,
                    mean_moment: 2.0,
                },
            ],
        }
    }

    #[test]
    fn trace_layout() {
        let text = trace_csv(&summary());
        let mut lines = text.lines();
        assert_eq!(
            lines.next(),
            Some("step,mean_ratio,max_ratio,fallback_frac,mean_moment")
        );
        assert_eq!(
            lines.next(),
            Some("2,1.2500000000000000e0,3.0000000000000000e0,0.0000000000000000e0,1.0000000000000001e-1")
        );
        assert_eq!(lines.clone().count(), 1);
    }

    #[test]
    fn trace_parse_recovers_values_exactly() {
        let s = summary();
        assert_eq!(parse_trace_csv(trace_csv(&s).as_bytes()).unwrap(), s.steps);
    }

    #[test]
    fn trace_parse_errors() {
        let header = "step,mean_ratio,max_ratio,fallback_frac,mean_moment\n";
        for bad in [
            String::new(),
            header.to_string(),
            "step,ratio\n1,2\n".to_string(),
            format!("{header}1,2,3,4\n"),
            format!("{header}x,1,1,0,1\n"),
            format!("{header}1,1,1,0,abc\n"),
            format!("{header}1,NaN,1,0,1\n"),
            format!("{header}-1,1,1,0,1\n"),
        ] {
            assert!(
                matches!(parse_trace_csv(bad.as_bytes()), Err(Error::MalformedCsv(_))),
                "{bad:?}"
            );
        }
    }

    #[test]
    fn samples_layout() {
        let s = vec![
            LatentTensor::from_vec(vec![1.0, -2.0]).unwrap(),
            LatentTensor::from_vec(vec![0.5, 0.0]).unwrap(),
        ];
        let text = samples_csv(&s);
        assert_eq!(
            text,
            "sample,x_0,x_1\n0,1.0000000000000000e0,-2.0000000000000000e0\n1,5.0000000000000000e-1,0.0000000000000000e0\n"
        );
    }
}
