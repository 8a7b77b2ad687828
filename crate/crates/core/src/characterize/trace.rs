//! Telemetry rows and their CSV form.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::CharacterizeError;

pub const TRACE_HEADER: [&str; 8] = [
    "t_s",
    "squeezing_dB",
    "antisqueezing_dB",
    "locked",
    "controller_phase",
    "offset_mrad",
    "pump_mW",
    "event",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    /// Signed, negative when squeezed.
    pub squeezing_db: f64,
    pub antisqueezing_db: Option<f64>,
    pub locked: bool,
    pub controller_phase: String,
    /// Cumulative phase offset applied by the controller, rad.
    pub applied_offset_rad: f64,
    pub pump_mw: f64,
    pub event: Option<String>,
}

impl TraceRecord {
    fn csv_fields(&self) -> [String; 8] {
        [
            format!("{:.3}", self.t),
            format!("{:.4}", self.squeezing_db),
            self.antisqueezing_db.map(|v| format!("{v:.4}")).unwrap_or_default(),
            u8::from(self.locked).to_string(),
            self.controller_phase.clone(),
            format!("{:.4}", self.applied_offset_rad * 1e3),
            format!("{:.3}", self.pump_mw),
            self.event.clone().unwrap_or_default(),
        ]
    }
}

/// Streams records as CSV with fixed-precision numbers.
pub struct TraceWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(sink: W) -> Result<Self, CharacterizeError> {
        let mut inner = csv::Writer::from_writer(sink);
        inner.write_record(TRACE_HEADER)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, record: &TraceRecord) -> Result<(), CharacterizeError> {
        self.inner.write_record(record.csv_fields())?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, CharacterizeError> {
        self.inner.flush()?;
        self.inner
            .into_inner()
            .map_err(|e| CharacterizeError::Io(e.into_error()))
    }
}

pub fn write_trace<W: Write>(sink: W, records: &[TraceRecord]) -> Result<W, CharacterizeError> {
    let mut w = TraceWriter::new(sink)?;
    for r in records {
        w.write(r)?;
    }
    w.finish()
}

pub(super) fn parse_f64(row: usize, column: &str, raw: &str) -> Result<f64, CharacterizeError> {
    let v: f64 = raw.trim().parse().map_err(|_| CharacterizeError::Schema {
        row,
        column: column.to_string(),
        reason: format!("expected a number, got `{raw}`"),
    })?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CharacterizeError::Schema {
            row,
            column: column.to_string(),
            reason: "value is not finite".into(),
        })
    }
}

fn parse_bool(row: usize, column: &str, raw: &str) -> Result<bool, CharacterizeError> {
    match raw.trim() {
        "1" | "true" | "True" | "TRUE" => Ok(true),
        "0" | "false" | "False" | "FALSE" => Ok(false),
        other => Err(CharacterizeError::Schema {
            row,
            column: column.to_string(),
            reason: format!("expected 0/1 or true/false, got `{other}`"),
        }),
    }
}

/// Parse a trace CSV. Row numbers in diagnostics count the header as row 1.
pub fn read_trace<R: Read>(source: R) -> Result<Vec<TraceRecord>, CharacterizeError> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(source);
    let headers = reader.headers()?.clone();
    let mut idx = [0usize; 8];
    for (slot, name) in idx.iter_mut().zip(TRACE_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CharacterizeError::MissingColumn(name.to_string()))?;
    }

    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        let field = |k: usize| rec.get(idx[k]).unwrap_or("");
        let anti = field(2).trim();
        let event = field(7).trim();
        out.push(TraceRecord {
            t: parse_f64(row, TRACE_HEADER[0], field(0))?,
            squeezing_db: parse_f64(row, TRACE_HEADER[1], field(1))?,
            antisqueezing_db: if anti.is_empty() {
                None
            } else {
                Some(parse_f64(row, TRACE_HEADER[2], anti)?)
            },
            locked: parse_bool(row, TRACE_HEADER[3], field(3))?,
            controller_phase: field(4).trim().to_string(),
            applied_offset_rad: parse_f64(row, TRACE_HEADER[5], field(5))? * 1e-3,
            pump_mw: parse_f64(row, TRACE_HEADER[6], field(6))?,
            event: (!event.is_empty()).then(|| event.to_string()),
        });
    }
    Ok(out)
}

/// Nonempty with strictly increasing time.
pub fn validate_trace(records: &[TraceRecord]) -> Result<(), CharacterizeError> {
    if records.is_empty() {
        return Err(CharacterizeError::EmptyTrace);
    }
    for (i, w) in records.windows(2).enumerate() {
        if !(w[1].t > w[0].t) {
            return Err(CharacterizeError::NonMonotonicTime { row: i + 1, t: w[1].t });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<TraceRecord> {
        vec![
            TraceRecord {
                t: 0.0,
                squeezing_db: -12.1234,
                antisqueezing_db: Some(19.5),
                locked: true,
                controller_phase: "monitoring".into(),
                applied_offset_rad: 0.0012,
                pump_mw: 475.7,
                event: None,
            },
            TraceRecord {
                t: 1.0,
                squeezing_db: 0.01,
                antisqueezing_db: None,
                locked: false,
                controller_phase: "tear_down".into(),
                applied_offset_rad: -0.0005,
                pump_mw: 476.0,
                event: Some("relock_start".into()),
            },
        ]
    }

    #[test]
    fn csv_roundtrip() {
        let bytes = write_trace(Vec::new(), &sample()).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("t_s,squeezing_dB,antisqueezing_dB,locked,controller_phase,offset_mrad,pump_mW,event\n"));
        assert!(text.contains("1.000,0.0100,,0,tear_down,-0.5000,476.000,relock_start"));
        let back = read_trace(bytes.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].event.as_deref(), Some("relock_start"));
        assert_eq!(back[1].antisqueezing_db, None);
        assert!((back[0].applied_offset_rad - 0.0012).abs() < 1e-12);
        assert!(!back[1].locked);
    }

    #[test]
    fn diagnostics_name_row_and_column() {
        let text = "t_s,squeezing_dB,antisqueezing_dB,locked,controller_phase,offset_mrad,pump_mW,event\n\
                    0,-12,,1,m,0,470,\n\
                    1,abc,,1,m,0,470,\n";
        match read_trace(text.as_bytes()) {
            Err(CharacterizeError::Schema { row, column, .. }) => {
                assert_eq!(row, 3);
                assert_eq!(column, "squeezing_dB");
            }
            other => panic!("{other:?}"),
        }
        let missing = "t_s,squeezing_dB\n0,1\n";
        assert!(matches!(
            read_trace(missing.as_bytes()),
            Err(CharacterizeError::MissingColumn(c)) if c == "antisqueezing_dB"
        ));
    }

    #[test]
    fn time_must_increase() {
        let mut recs = sample();
        assert!(validate_trace(&recs).is_ok());
        recs[1].t = 0.0;
        assert!(matches!(validate_trace(&recs), Err(CharacterizeError::NonMonotonicTime { row: 1, .. })));
        assert!(matches!(validate_trace(&[]), Err(CharacterizeError::EmptyTrace)));
    }
}
