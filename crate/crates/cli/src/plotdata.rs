use std::io::Write;
use std::path::{Path, PathBuf};

use equipomdp::agent::CurveRow;
use serde::Serialize;

use crate::train::CURVE_FILE;
use crate::CliError;

/// One eval step across seeds. Spreads are population standard deviations
/// (divide by the number of seeds), so a single seed gives 0.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateRow {
    pub step: usize,
    pub seeds: usize,
    pub mean_success_rate: f64,
    pub std_success_rate: f64,
    pub mean_return: f64,
    pub std_return: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Curves must share their eval grid exactly: same number of rows and the
/// same step in every row.
pub fn aggregate(curves: &[Vec<CurveRow>]) -> Result<Vec<AggregateRow>, String> {
    let Some(first) = curves.first() else {
        return Ok(Vec::new());
    };
    for (c, curve) in curves.iter().enumerate().skip(1) {
        if curve.len() != first.len() {
            return Err(format!("curve {c} has {} eval rows, curve 0 has {}", curve.len(), first.len()));
        }
        if let Some(i) = (0..first.len()).find(|&i| curve[i].step != first[i].step) {
            return Err(format!(
                "curve {c} row {i} is at step {}, curve 0 is at step {}",
                curve[i].step, first[i].step
            ));
        }
    }
    Ok((0..first.len())
        .map(|i| {
            let success: Vec<f64> = curves.iter().map(|c| c[i].success_rate).collect();
            let returns: Vec<f64> = curves.iter().map(|c| c[i].mean_return).collect();
            let (mean_success_rate, std_success_rate) = mean_std(&success);
            let (mean_return, std_return) = mean_std(&returns);
            AggregateRow {
                step: first[i].step,
                seeds: curves.len(),
                mean_success_rate,
                std_success_rate,
                mean_return,
                std_return,
            }
        })
        .collect())
}

pub fn read_curve(path: &Path) -> Result<Vec<CurveRow>, CliError> {
    let file = if path.is_dir() { path.join(CURVE_FILE) } else { path.to_path_buf() };
    let mut reader = csv::Reader::from_path(&file).map_err(|e| CliError::Runtime(format!("{}: {e}", file.display())))?;
    reader
        .deserialize()
        .collect::<Result<Vec<CurveRow>, _>>()
        .map_err(|e| CliError::Runtime(format!("{}: {e}", file.display())))
}

pub fn run(inputs: &[PathBuf], out: Option<&Path>) -> Result<bool, CliError> {
    let curves = inputs.iter().map(|p| read_curve(p)).collect::<Result<Vec<_>, _>>()?;
    let rows = aggregate(&curves).map_err(|e| {
        let names: Vec<String> = inputs.iter().map(|p| p.display().to_string()).collect();
        CliError::Runtime(format!("eval grids do not align ({e}); curves in order: {}", names.join(", ")))
    })?;
    let sink: Box<dyn Write> = match out {
        Some(path) => Box::new(std::fs::File::create(path).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))?),
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(sink);
    w.write_record(["step", "seeds", "mean_success_rate", "std_success_rate", "mean_return", "std_return"])
        .map_err(CliError::runtime)?;
    for row in &rows {
        w.serialize(row).map_err(CliError::runtime)?;
    }
    w.flush().map_err(CliError::runtime)?;
    Ok(true)
}
