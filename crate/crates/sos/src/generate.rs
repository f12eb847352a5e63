//! Synthetic CSV files for trying out `fit`.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use sos_core::data::{Dataset, Table};
use sos_core::models::sigmoid;

use crate::error::{CliError, Result};

/// Columns of the synthetic flight file, covariates in model order.
pub const AIRLINE_RESPONSE: &str = "arr_delay15";
pub const AIRLINE_COVARIATES: [&str; 4] = ["night", "distance", "weekend", "dep_delay15"];

/// Coefficients used to label the synthetic flights: intercept, night,
/// distance, weekend, dep_delay15.
pub const AIRLINE_THETA: [f64; 5] = [-2.824, -0.033, 1.337, 0.241, 4.127];

/// Synthetic flights.
///
/// * `night`: departure outside 06:00-18:00, probability 0.25.
/// * `distance`: great-circle distance in thousands of miles, uniform on
///   [0.1, 2.7].
/// * `weekend`: Saturday or Sunday, probability 2/7.
/// * `dep_delay15`: departure at least 15 minutes late, probability 0.2.
///
/// The arrival-delay indicator is drawn from the logistic model with
/// [`AIRLINE_THETA`].
pub fn gen_airline<R: Rng + ?Sized>(rng: &mut R, rows: usize) -> Table {
    let mut t = Table::with_capacity(4, rows);
    let mut x = [0.0; 4];
    for _ in 0..rows {
        x[0] = f64::from(u8::from(rng.random::<f64>() < 0.25));
        x[1] = rng.random_range(0.1..2.7);
        x[2] = f64::from(u8::from(rng.random::<f64>() < 2.0 / 7.0));
        x[3] = f64::from(u8::from(rng.random::<f64>() < 0.2));
        let eta = AIRLINE_THETA[0] + x.iter().zip(&AIRLINE_THETA[1..]).map(|(a, b)| a * b).sum::<f64>();
        let y = f64::from(u8::from(rng.random::<f64>() < sigmoid(eta)));
        t.push(&x, y).expect("row has four covariates");
    }
    t
}

/// Writes `table` with header `response, covariates...`. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_csv<W: Write>(table: &Table, response: &str, covariates: &[String], out: W) -> Result<()> {
    if covariates.len() != table.covariates() {
        return Err(CliError::config(format!(
            "{} covariate names for {} columns",
            covariates.len(),
            table.covariates()
        )));
    }
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| CliError::config(format!("writing CSV: {e}"));
    let mut header = vec![response.to_string()];
    header.extend(covariates.iter().cloned());
    w.write_record(&header).map_err(err)?;
    let mut rec = Vec::with_capacity(covariates.len() + 1);
    for i in 0..table.rows() {
        let (x, y) = table.row(i);
        rec.clear();
        rec.push(y.to_string());
        rec.extend(x.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::config(format!("writing CSV: {e}")))?;
    Ok(())
}

pub fn write_csv_file(table: &Table, response: &str, covariates: &[String], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    write_csv(table, response, covariates, std::io::BufWriter::new(file))
}

/// `x1, x2, ...`
pub fn default_covariate_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}
