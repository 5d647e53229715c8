use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One monitoring point of a fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub elbo: f64,
    pub cubo: f64,
    pub n: f64,
    #[serde(rename = "S")]
    pub samples: usize,
    pub elbo_se: f64,
    pub cubo_se: f64,
    pub grad_norm: f64,
    pub log_scale_correction: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SandwichTrace {
    pub rows: Vec<TraceRow>,
}

impl SandwichTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        if self.rows.is_empty() {
            w.write_record([
                "iteration", "elbo", "cubo", "n", "S", "elbo_se", "cubo_se", "grad_norm",
                "log_scale_correction", "wall_ms",
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Upper bound from the CHIVI fit against lower bound from the KLVI fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub iteration: usize,
    pub elbo: f64,
    pub cubo: f64,
    pub gap: f64,
    pub joint_se: f64,
}

pub fn write_gap_csv<W: Write>(rows: &[GapRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record(["iteration", "elbo", "cubo", "gap", "joint_se"])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_header_and_shortest_floats() {
        let t = SandwichTrace {
            rows: vec![TraceRow {
                iteration: 10,
                elbo: -1.5,
                cubo: 0.1,
                n: 2.0,
                samples: 1000,
                elbo_se: 0.01,
                cubo_se: 0.02,
                grad_norm: 3.0,
                log_scale_correction: -0.25,
                wall_ms: 0.0,
            }],
        };
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(
            s,
            "iteration,elbo,cubo,n,S,elbo_se,cubo_se,grad_norm,log_scale_correction,wall_ms\n10,-1.5,0.1,2.0,1000,0.01,0.02,3.0,-0.25,0.0\n"
        );
        let mut empty = Vec::new();
        SandwichTrace::default().write_csv(&mut empty).unwrap();
        assert!(String::from_utf8(empty).unwrap().starts_with("iteration,elbo"));
    }
}
