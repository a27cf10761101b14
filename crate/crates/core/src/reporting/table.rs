//! Cross-model metric table with 4-decimal half-even rounding.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{ReportError, RunArtifact};

/// Rounds `x` to `places` decimals, ties to even, on its shortest decimal
/// representation (so `0.99665` is a tie even though its binary value is
/// not exactly representable).
pub fn round_half_even(x: f64, places: usize) -> f64 {
    if !x.is_finite() {
        return x;
    }
    let text = format!("{}", x.abs());
    let (int, frac) = text.split_once('.').unwrap_or((&text, ""));
    if frac.len() <= places {
        return x;
    }
    let mut digits: Vec<u8> = int.bytes().chain(frac.bytes().take(places)).map(|b| b - b'0').collect();
    let rest = &frac.as_bytes()[places..];
    let first = rest[0] - b'0';
    let beyond = rest[1..].iter().any(|&b| b != b'0');
    let last_odd = digits.last().is_some_and(|d| d % 2 == 1);
    let up = first > 5 || (first == 5 && (beyond || last_odd));
    if up {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, 1);
                break;
            }
            i -= 1;
            if digits[i] == 9 {
                digits[i] = 0;
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let split = digits.len() - places;
    let s: String = digits[..split].iter().map(|d| char::from(b'0' + d)).collect::<String>()
        + "."
        + &digits[split..].iter().map(|d| char::from(b'0' + d)).collect::<String>();
    let v: f64 = s.parse().expect("decimal digits");
    v.copysign(x)
}

pub const TABLE_PLACES: usize = 4;
pub const TABLE_COLUMNS: [&str; 5] = ["Accuracy", "Precision", "Recall", "F1-Score", "Jaccard Score"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    /// Unrounded values in [`TABLE_COLUMNS`] order.
    pub values: [f64; 5],
    pub best: bool,
}

impl ComparisonRow {
    pub fn accuracy(&self) -> f64 {
        self.values[0]
    }

    pub fn f1(&self) -> f64 {
        self.values[3]
    }

    pub fn formatted(&self) -> [String; 5] {
        self.values
            .map(|v| format!("{:.*}", TABLE_PLACES, round_half_even(v, TABLE_PLACES)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

/// Best row first by accuracy, then F1, then lexically smallest name.
fn rank(a: &ComparisonRow, b: &ComparisonRow) -> Ordering {
    b.accuracy()
        .total_cmp(&a.accuracy())
        .then(b.f1().total_cmp(&a.f1()))
        .then(a.model.cmp(&b.model))
}

/// One row per artifact, in input order, with the best row flagged.
pub fn comparison_table(artifacts: &[RunArtifact]) -> Result<ComparisonTable, ReportError> {
    if artifacts.is_empty() {
        return Err(ReportError::NoArtifacts(1));
    }
    let mut rows: Vec<ComparisonRow> = artifacts
        .iter()
        .map(|a| {
            let m = &a.metrics;
            ComparisonRow {
                model: a.model.clone(),
                values: [m.accuracy, m.precision, m.recall, m.f1, m.jaccard],
                best: false,
            }
        })
        .collect();
    let best = (0..rows.len())
        .min_by(|&i, &j| rank(&rows[i], &rows[j]))
        .expect("non-empty");
    rows[best].best = true;
    Ok(ComparisonTable { rows })
}

impl ComparisonTable {
    pub fn best(&self) -> &ComparisonRow {
        self.rows.iter().find(|r| r.best).expect("one row is flagged")
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("Model,{},Best\n", TABLE_COLUMNS.join(","));
        for r in &self.rows {
            let model = if r.model.contains([',', '"']) {
                format!("\"{}\"", r.model.replace('"', "\"\""))
            } else {
                r.model.clone()
            };
            out += &format!(
                "{},{},{}\n",
                model,
                r.formatted().join(","),
                if r.best { "yes" } else { "" }
            );
        }
        out
    }

    /// Aligned plain text; the best row is marked with `*`.
    pub fn to_text(&self) -> String {
        let cells: Vec<Vec<String>> = std::iter::once(
            std::iter::once("Model".to_string())
                .chain(TABLE_COLUMNS.iter().map(|s| s.to_string()))
                .collect(),
        )
        .chain(self.rows.iter().map(|r| {
            let name = if r.best {
                format!("{} *", r.model)
            } else {
                r.model.clone()
            };
            std::iter::once(name).chain(r.formatted()).collect()
        }))
        .collect();
        let widths: Vec<usize> = (0..6)
            .map(|c| cells.iter().map(|row| row[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in cells.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, v)| {
                    if c == 0 {
                        format!("{v:<w$}", w = widths[c])
                    } else {
                        format!("{v:>w$}", w = widths[c])
                    }
                })
                .collect();
            out += line.join("  ").trim_end();
            out.push('\n');
            if i == 0 {
                out += &"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1));
                out.push('\n');
            }
        }
        out += "* best by accuracy (ties: F1, then name)\n";
        out
    }
}
