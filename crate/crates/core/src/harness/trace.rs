use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::cost::{parse_rational, Rational};
use crate::error::{bail, Error, Result};

pub const TRACE_HEADER: [&str; 6] = ["step", "tokens", "cum_cost", "mode", "train_loss", "val_loss"];

/// One optimizer step. `train_loss` is absent in cost-only dry runs;
/// `val_loss` only on evaluation steps.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    pub tokens: u64,
    pub cum_cost: Rational,
    pub mode: String,
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
}

/// Integers print plainly, other values as `n/d`, so the column stays exact.
pub fn format_cost(r: Rational) -> String {
    if r.is_integer() {
        r.to_integer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl TraceRow {
    fn record(&self) -> [String; 6] {
        [
            self.step.to_string(),
            self.tokens.to_string(),
            format_cost(self.cum_cost),
            self.mode.clone(),
            opt_f64(self.train_loss),
            opt_f64(self.val_loss),
        ]
    }

    fn parse(rec: &csv::StringRecord, line: usize) -> Result<Self> {
        let bad = |what: &str| Error::Data(format!("trace line {line}: bad {what}"));
        let field = |i: usize| rec.get(i).unwrap_or("");
        let loss = |i: usize, what: &str| -> Result<Option<f64>> {
            match field(i) {
                "" => Ok(None),
                s => s.parse().map(Some).map_err(|_| bad(what)),
            }
        };
        if rec.len() != TRACE_HEADER.len() {
            return Err(bad("field count"));
        }
        Ok(TraceRow {
            step: field(0).parse().map_err(|_| bad("step"))?,
            tokens: field(1).parse().map_err(|_| bad("tokens"))?,
            cum_cost: parse_rational(field(2)).map_err(|_| bad("cum_cost"))?,
            mode: field(3).to_string(),
            train_loss: loss(4, "train_loss")?,
            val_loss: loss(5, "val_loss")?,
        })
    }
}

/// A whole trace in memory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
}

impl RunTrace {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header = rd.headers().map_err(|e| Error::Data(e.to_string()))?.clone();
        if header.iter().ne(TRACE_HEADER.iter().copied()) {
            bail!(Data, "trace header must be {}", TRACE_HEADER.join(","));
        }
        let mut rows: Vec<TraceRow> = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec.map_err(|e| Error::Data(e.to_string()))?;
            let row = TraceRow::parse(&rec, i + 2)?;
            if let Some(prev) = rows.last() {
                if row.step <= prev.step {
                    bail!(Data, "trace line {}: step {} does not increase", i + 2, row.step);
                }
            }
            rows.push(row);
        }
        Ok(RunTrace { rows })
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(TRACE_HEADER).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r.record()).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii")
    }

    pub fn row_at(&self, step: u64) -> Option<&TraceRow> {
        self.rows.binary_search_by_key(&step, |r| r.step).ok().map(|i| &self.rows[i])
    }

    pub fn last_step(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.step)
    }
}

/// Appends rows to a trace file, flushing after each one.
pub struct TraceWriter {
    path: PathBuf,
    out: csv::Writer<BufWriter<File>>,
}

impl TraceWriter {
    /// Starts a fresh file containing only the header.
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = TraceWriter {
            path: path.to_path_buf(),
            out: csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(file)),
        };
        w.out.write_record(TRACE_HEADER).map_err(|e| w.csv_err(e))?;
        w.out.flush().map_err(|e| Error::io(&w.path, e))?;
        Ok(w)
    }

    /// Keeps rows with `step <= keep_through` and appends after them.
    pub fn resume(path: &Path, keep_through: u64) -> Result<Self> {
        let mut trace = RunTrace::read(path)?;
        trace.rows.retain(|r| r.step <= keep_through);
        let tmp = path.with_extension("csv.tmp");
        fs::write(&tmp, trace.to_csv()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
        let file = OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?;
        Ok(TraceWriter {
            path: path.to_path_buf(),
            out: csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(file)),
        })
    }

    pub fn append(&mut self, row: &TraceRow) -> Result<()> {
        self.out.write_record(row.record()).map_err(|e| self.csv_err(e))?;
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }

    fn csv_err(&self, e: csv::Error) -> Error {
        Error::io(&self.path, std::io::Error::other(e.to_string()))
    }
}

pub fn write_trace(path: &Path, trace: &RunTrace) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(trace.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
}
