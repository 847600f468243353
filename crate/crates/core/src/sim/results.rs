//! Aggregated error counts and their CSV form.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::runner::FrameCounts;

pub const CSV_HEADER: [&str; 13] = [
    "detector",
    "db",
    "trials",
    "frames",
    "symbol_errors",
    "bit_errors",
    "ser",
    "ber",
    "stderr_ser",
    "stderr_ber",
    "symbols",
    "bits",
    "note",
];

const ERROR_PREFIX: &str = "error: ";

/// Counts for one detector at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub detector: String,
    pub db: f64,
    pub trials: u64,
    pub frames: u64,
    pub symbols: u64,
    pub symbol_errors: u64,
    pub bits: u64,
    pub bit_errors: u64,
    pub error: Option<String>,
}

impl ResultRow {
    pub fn new(detector: &str, db: f64, trials: u64) -> Self {
        ResultRow {
            detector: detector.to_string(),
            db,
            trials,
            frames: 0,
            symbols: 0,
            symbol_errors: 0,
            bits: 0,
            bit_errors: 0,
            error: None,
        }
    }

    pub fn add(&mut self, c: &FrameCounts) {
        self.frames += 1;
        self.symbols += c.symbols;
        self.symbol_errors += c.symbol_errors;
        self.bits += c.bits;
        self.bit_errors += c.bit_errors;
    }

    pub fn ser(&self) -> f64 {
        rate(self.symbol_errors, self.symbols)
    }

    pub fn ber(&self) -> f64 {
        rate(self.bit_errors, self.bits)
    }

    /// Binomial standard error; the rule-of-three bound `3/n` when no errors occurred.
    pub fn stderr_ser(&self) -> f64 {
        stderr(self.symbol_errors, self.symbols)
    }

    pub fn stderr_ber(&self) -> f64 {
        stderr(self.bit_errors, self.bits)
    }

    pub fn note(&self) -> String {
        if let Some(e) = &self.error {
            return format!("{ERROR_PREFIX}{e}");
        }
        let mut parts = Vec::new();
        if self.symbols > 0 && self.symbol_errors == 0 {
            parts.push("zero symbol errors, stderr_ser is the rule-of-three bound 3/n");
        }
        if self.bits > 0 && self.bit_errors == 0 {
            parts.push("zero bit errors, stderr_ber is the rule-of-three bound 3/n");
        }
        parts.join("; ")
    }
}

fn rate(errors: u64, n: u64) -> f64 {
    if n == 0 {
        f64::NAN
    } else {
        errors as f64 / n as f64
    }
}

fn stderr(errors: u64, n: u64) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    if errors == 0 {
        return 3.0 / n as f64;
    }
    let p = errors as f64 / n as f64;
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Every (detector, point) row, ordered by point then by configured detector order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<ResultRow>,
}

impl SweepResult {
    pub fn row(&self, detector: &str, db: f64) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.detector == detector && r.db == db)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let ctx = |source| Error::Csv { context: "writing results".into(), source };
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER).map_err(ctx)?;
        for r in &self.rows {
            w.write_record([
                r.detector.clone(),
                r.db.to_string(),
                r.trials.to_string(),
                r.frames.to_string(),
                r.symbol_errors.to_string(),
                r.bit_errors.to_string(),
                r.ser().to_string(),
                r.ber().to_string(),
                r.stderr_ser().to_string(),
                r.stderr_ber().to_string(),
                r.symbols.to_string(),
                r.bits.to_string(),
                r.note(),
            ])
            .map_err(ctx)?;
        }
        w.flush().map_err(|e| ctx(e.into()))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let ctx = |source| Error::Csv { context: "reading results".into(), source };
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers().map_err(ctx)?.clone();
        if header.iter().ne(CSV_HEADER) {
            return Err(Error::input(format!("unexpected results header {:?}", header)));
        }
        let mut rows = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(ctx)?;
            let field = |k: usize| rec.get(k).unwrap_or_default();
            let int = |k: usize| -> Result<u64> {
                field(k).parse().map_err(|_| Error::input(format!("row {}: bad {} {:?}", line + 1, CSV_HEADER[k], field(k))))
            };
            let db: f64 = field(1).parse().map_err(|_| Error::input(format!("row {}: bad db", line + 1)))?;
            let note = field(12);
            rows.push(ResultRow {
                detector: field(0).to_string(),
                db,
                trials: int(2)?,
                frames: int(3)?,
                symbol_errors: int(4)?,
                bit_errors: int(5)?,
                symbols: int(10)?,
                bits: int(11)?,
                error: note.strip_prefix(ERROR_PREFIX).map(str::to_string),
            });
        }
        Ok(SweepResult { rows })
    }
}

/// Writes the CSV to `path`.
pub fn emit_csv(result: &SweepResult, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    result.write_csv(std::io::BufWriter::new(file))
}

pub fn parse_csv(path: &Path) -> Result<SweepResult> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    SweepResult::read_csv(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(errors: u64) -> ResultRow {
        let mut r = ResultRow::new("full-csi", 4.0, 2);
        r.add(&FrameCounts { symbols: 500_000, symbol_errors: errors, bits: 500_000, bit_errors: errors });
        r.add(&FrameCounts { symbols: 500_000, symbol_errors: 0, bits: 500_000, bit_errors: 0 });
        r
    }

    #[test]
    fn empty_sweep_is_header_only() {
        let text = SweepResult::default().to_csv_string().unwrap();
        assert_eq!(text, CSV_HEADER.join(",") + "\n");
    }

    #[test]
    fn zero_errors_use_rule_of_three() {
        let r = row(0);
        assert_eq!(r.ber(), 0.0);
        assert_eq!(r.stderr_ber(), 3e-6);
        assert!(r.note().contains("rule-of-three"));
    }

    #[test]
    fn binomial_stderr() {
        let r = row(100);
        let p = 1e-4;
        assert_eq!(r.ser(), p);
        assert!((r.stderr_ser() - (p * (1.0 - p) / 1e6).sqrt()).abs() < 1e-18);
        assert_eq!(r.note(), "");
    }

    #[test]
    fn csv_round_trip() {
        let mut failed = ResultRow::new("bcjr-nn", -1.5, 3);
        failed.error = Some("training failed: invalid input: x, \"y\"".into());
        let res = SweepResult { rows: vec![row(0), row(17), failed] };
        let text = res.to_csv_string().unwrap();
        assert_eq!(SweepResult::read_csv(text.as_bytes()).unwrap(), res);
    }
}
