//! Summary tables written as CSV and as aligned text with the same numbers.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{ensure, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub dataset: String,
    pub method: String,
    pub metric: String,
    pub mean: f64,
    /// Sample std with the `n - 1` denominator; absent for a single repeat.
    pub std: Option<f64>,
    pub repeats: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<TableRow>,
}

/// Mean and `n - 1` sample std; the std is `None` below two values.
pub fn summarize(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, Some(var.sqrt()))
}

fn fmt_num(v: f64) -> String {
    format!("{v:.6}")
}

impl ResultTable {
    pub fn push(&mut self, dataset: &str, method: &str, metric: &str, values: &[f64]) -> Result<()> {
        ensure!(!values.is_empty(), "no values for {dataset}/{method}/{metric}");
        let (mean, std) = summarize(values);
        self.rows.push(TableRow {
            dataset: dataset.into(),
            method: method.into(),
            metric: metric.into(),
            mean,
            std,
            repeats: values.len(),
        });
        Ok(())
    }

    pub fn find(&self, dataset: &str, method: &str, metric: &str) -> Option<&TableRow> {
        self.rows
            .iter()
            .find(|r| r.dataset == dataset && r.method == method && r.metric == metric)
    }

    fn cells(&self) -> Vec<[String; 6]> {
        self.rows
            .iter()
            .map(|r| {
                [
                    r.dataset.clone(),
                    r.method.clone(),
                    r.metric.clone(),
                    fmt_num(r.mean),
                    r.std.map(fmt_num).unwrap_or_default(),
                    r.repeats.to_string(),
                ]
            })
            .collect()
    }

    const HEADER: [&'static str; 6] = ["dataset", "method", "metric", "mean", "std", "repeats"];

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::HEADER)?;
        for row in self.cells() {
            w.write_record(&row)?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }

    pub fn to_text(&self) -> String {
        let cells = self.cells();
        let mut widths: Vec<usize> = Self::HEADER.iter().map(|h| h.len()).collect();
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, row: &[String]| {
            let parts: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i < 3 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&mut out, &Self::HEADER.map(String::from));
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        line(&mut out, &rule);
        for row in &cells {
            line(&mut out, row);
        }
        out
    }

    /// Writes `<stem>.csv` and `<stem>.txt` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv()?)?;
        std::fs::write(dir.join(format!("{stem}.txt")), self.to_text())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn std_uses_n_minus_one() {
        let (m, s) = summarize(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_eq!(s, Some(1.0));
        assert_eq!(summarize(&[4.0]), (4.0, None));
    }

    #[test]
    fn csv_and_text_carry_the_same_numbers() {
        let mut t = ResultTable::default();
        t.push("pima", "chivi", "test_error", &[0.2, 0.25, 0.21]).unwrap();
        t.push("pima", "klvi", "test_error", &[0.22]).unwrap();
        let csv = t.to_csv().unwrap();
        let txt = t.to_text();
        for row in csv.lines().skip(1) {
            for cell in row.split(',').filter(|c| !c.is_empty()) {
                assert!(txt.contains(cell), "{cell} missing from\n{txt}");
            }
        }
        assert!(csv.lines().nth(2).unwrap().ends_with(",,1"));
    }

    #[test]
    fn empty_values_rejected() {
        assert!(ResultTable::default().push("a", "b", "c", &[]).is_err());
    }
}
