//! Plot data as CSV: one header row, then numeric rows. Read in gnuplot with
//! `set datafile separator ','` and `plot 'file.csv' using 1:2 skip 1`.

use std::fs::File;
use std::path::Path;

use residence_core::mc::BoundReport;
use residence_core::pde::MeanResidenceTable;
use residence_core::sde::PathOutcome;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl PlotSeries {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    /// `x,tau` of a solved table, thinned to about `points` rows.
    pub fn tau_curve(table: &MeanResidenceTable, points: usize) -> Self {
        let mut s = Self::new(&["x", "tau"]);
        let stride = (table.x.len() / points.max(1)).max(1);
        for i in (0..table.x.len()).step_by(stride) {
            s.push(vec![table.x[i], table.tau[i]]);
        }
        let last = table.x.len() - 1;
        if !last.is_multiple_of(stride) {
            s.push(vec![table.x[last], table.tau[last]]);
        }
        s
    }

    /// `tau,cdf` of the hitting times, with the CDF normalized by all paths.
    pub fn empirical_cdf(outcomes: &[PathOutcome]) -> Self {
        let mut s = Self::new(&["tau", "cdf"]);
        for (t, p) in residence_core::mc::empirical_cdf(outcomes) {
            s.push(vec![t, p]);
        }
        s
    }

    /// `t,empirical,se,bound` for `P(τ > t)` against a bound curve.
    pub fn survival_overlay(times: &[f64], reports: &[BoundReport]) -> Self {
        let mut s = Self::new(&["t", "empirical", "se", "bound"]);
        for (t, r) in times.iter().zip(reports) {
            s.push(vec![*t, r.estimate, r.se, r.bound]);
        }
        s
    }
}

pub fn emit_plot_data(series: &PlotSeries, path: &Path) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(&series.columns).map_err(|e| CliError::Io(e.to_string()))?;
    for row in &series.rows {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use residence_core::pde::{solve_mean_residence_1d, DirichletSpec};

    #[test]
    fn tau_curve_increases_and_keeps_endpoints() {
        let t = solve_mean_residence_1d(&DirichletSpec::poly_drift(3).unwrap()).unwrap();
        let s = PlotSeries::tau_curve(&t, 200);
        let tau = s.column("tau").unwrap();
        assert!(tau.windows(2).all(|w| w[1] > w[0]));
        let x = s.column("x").unwrap();
        assert_eq!(x[0], 1.0);
        assert!((x.last().unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn writes_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = PlotSeries::new(&["a", "b"]);
        s.push(vec![1.0, 2.5]);
        let p = dir.path().join("s.csv");
        emit_plot_data(&s, &p).unwrap();
        assert_eq!(std::fs::read_to_string(p).unwrap(), "a,b\n1,2.5\n");
    }
}
