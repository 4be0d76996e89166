use std::io::Write;

use crate::field::{summarize, FieldError, FieldSummary, GridStack};

/// Field statistics of simulations and holdout events, and whether each
/// holdout statistic falls within the simulated range.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub simulations: Vec<FieldSummary>,
    pub holdout: Vec<FieldSummary>,
    /// `coverage[h][s]`: holdout `h`, statistic `s` in `FieldSummary::NAMES` order.
    pub coverage: Vec<[bool; 6]>,
}

pub const SUMMARY_CSV_HEADER: &str = "index,min,max,mean,median,iqr,range";
pub const COVERAGE_CSV_HEADER: &str = "holdout,min,max,mean,median,iqr,range";

impl ValidationReport {
    /// Simulated `[min, max]` of each statistic.
    pub fn simulated_bounds(&self) -> [(f64, f64); 6] {
        let mut b = [(f64::INFINITY, f64::NEG_INFINITY); 6];
        for s in &self.simulations {
            for (k, v) in s.as_array().into_iter().enumerate() {
                b[k] = (b[k].0.min(v), b[k].1.max(v));
            }
        }
        b
    }

    /// Per statistic: is every holdout value covered?
    pub fn statistic_covered(&self) -> [bool; 6] {
        let mut out = [true; 6];
        for row in &self.coverage {
            for k in 0..6 {
                out[k] &= row[k];
            }
        }
        out
    }

    pub fn covered_statistics(&self) -> usize {
        self.statistic_covered().iter().filter(|&&c| c).count()
    }

    /// Share of covered (holdout, statistic) pairs.
    pub fn coverage_fraction(&self) -> f64 {
        let total = self.coverage.len() * 6;
        if total == 0 {
            return 0.0;
        }
        let hit = self.coverage.iter().flatten().filter(|&&c| c).count();
        hit as f64 / total as f64
    }

    pub fn write_summaries_csv<W: Write>(table: &[FieldSummary], w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{SUMMARY_CSV_HEADER}")?;
        for (i, s) in table.iter().enumerate() {
            let a = s.as_array();
            writeln!(w, "{i},{},{},{},{},{},{}", a[0], a[1], a[2], a[3], a[4], a[5])?;
        }
        Ok(())
    }

    pub fn write_coverage_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{COVERAGE_CSV_HEADER}")?;
        for (i, row) in self.coverage.iter().enumerate() {
            let f = |b: bool| if b { "1" } else { "0" };
            writeln!(w, "{i},{},{},{},{},{},{}", f(row[0]), f(row[1]), f(row[2]), f(row[3]), f(row[4]), f(row[5]))?;
        }
        Ok(())
    }
}

fn summaries(stack: &GridStack) -> Result<Vec<FieldSummary>, FieldError> {
    stack.replicates().map(summarize).collect()
}

pub fn validate(simulations: &GridStack, holdout: &GridStack) -> Result<ValidationReport, FieldError> {
    if !simulations.grid().same_as(holdout.grid()) {
        return Err(FieldError::GridMismatch("simulation and holdout grids differ".into()));
    }
    let mut report = ValidationReport { simulations: summaries(simulations)?, holdout: summaries(holdout)?, coverage: vec![] };
    let bounds = report.simulated_bounds();
    report.coverage = report
        .holdout
        .iter()
        .map(|h| {
            let a = h.as_array();
            std::array::from_fn(|k| bounds[k].0 <= a[k] && a[k] <= bounds[k].1)
        })
        .collect();
    Ok(report)
}
