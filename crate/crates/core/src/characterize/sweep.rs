//! Pump-sweep CSV form.

use std::io::{Read, Write};

use super::fit::PumpSweepPoint;
use super::trace::parse_f64;
use super::CharacterizeError;

pub const SWEEP_HEADER: [&str; 4] = ["pump_ratio", "v_minus_dB", "v_plus_dB", "sigma_dB"];

/// Uncertainty assumed when a sweep file has no `sigma_dB` column.
pub const DEFAULT_SIGMA_DB: f64 = 0.1;

/// Parse a sweep CSV. `sigma_dB` is optional; an empty quadrature cell reads
/// as missing and is rejected by the fit. Row numbers count the header as 1.
pub fn read_sweep<R: Read>(source: R) -> Result<Vec<PumpSweepPoint>, CharacterizeError> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(source);
    let headers = reader.headers()?.clone();
    if headers.iter().all(|h| h.trim().is_empty()) {
        return Err(CharacterizeError::MissingColumn(SWEEP_HEADER[0].to_string()));
    }
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let ratio = col(SWEEP_HEADER[0]).ok_or_else(|| CharacterizeError::MissingColumn(SWEEP_HEADER[0].to_string()))?;
    let (minus, plus) = match (col(SWEEP_HEADER[1]), col(SWEEP_HEADER[2])) {
        (Some(m), Some(p)) => (m, p),
        _ => return Err(CharacterizeError::MissingQuadrature),
    };
    let sigma = col(SWEEP_HEADER[3]);

    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        let quadrature = |k: usize, name: &str| {
            let raw = rec.get(k).unwrap_or("").trim();
            if raw.is_empty() {
                Ok(f64::NAN)
            } else {
                parse_f64(row, name, raw)
            }
        };
        out.push(PumpSweepPoint {
            pump_ratio: parse_f64(row, SWEEP_HEADER[0], rec.get(ratio).unwrap_or(""))?,
            v_minus_db: quadrature(minus, SWEEP_HEADER[1])?,
            v_plus_db: quadrature(plus, SWEEP_HEADER[2])?,
            sigma_db: match sigma {
                Some(k) => parse_f64(row, SWEEP_HEADER[3], rec.get(k).unwrap_or(""))?,
                None => DEFAULT_SIGMA_DB,
            },
        });
    }
    Ok(out)
}

pub fn write_sweep<W: Write>(sink: W, points: &[PumpSweepPoint]) -> Result<W, CharacterizeError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(SWEEP_HEADER)?;
    for p in points {
        w.write_record([
            format!("{:.4}", p.pump_ratio),
            format!("{:.6}", p.v_minus_db),
            format!("{:.6}", p.v_plus_db),
            format!("{:.4}", p.sigma_db),
        ])?;
    }
    w.into_inner().map_err(|e| CharacterizeError::Io(e.into_error()))
}
