//! Metric records and the per-run CSV log.

use std::io::{BufRead, Write};

use crate::error::{BimError, Result};

pub const CSV_HEADER: &str = "step,loss,accuracy,spikes,synops,alive_synapses,sparsity,theta,wall_ms";

/// One metric-cadence tick. `spikes` and `synops` are cumulative since step 0;
/// `loss` and `accuracy` are means over the scored steps of the last window
/// (NaN when the window scored nothing).
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub step: u64,
    pub loss: f64,
    pub accuracy: f64,
    pub spikes: u64,
    pub synops: u64,
    pub alive_synapses: u64,
    pub sparsity: f64,
    pub theta: f64,
    pub wall_ms: f64,
}

/// At most nine significant digits, shortest form.
pub fn format_number(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() {
            "NaN".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let rounded: f64 = format!("{v:.8e}").parse().unwrap_or(v);
    format!("{rounded}")
}

impl MetricsRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.step,
            format_number(self.loss),
            format_number(self.accuracy),
            self.spikes,
            self.synops,
            self.alive_synapses,
            format_number(self.sparsity),
            format_number(self.theta),
            format_number(self.wall_ms)
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != 9 {
            return Err(BimError::Format(format!(
                "metrics row has {} fields, expected 9: {line:?}",
                fields.len()
            )));
        }
        let int = |i: usize| {
            fields[i]
                .parse::<u64>()
                .map_err(|e| BimError::Format(format!("field {i} {:?}: {e}", fields[i])))
        };
        let float = |i: usize| {
            fields[i]
                .parse::<f64>()
                .map_err(|e| BimError::Format(format!("field {i} {:?}: {e}", fields[i])))
        };
        Ok(Self {
            step: int(0)?,
            loss: float(1)?,
            accuracy: float(2)?,
            spikes: int(3)?,
            synops: int(4)?,
            alive_synapses: int(5)?,
            sparsity: float(6)?,
            theta: float(7)?,
            wall_ms: float(8)?,
        })
    }
}

pub fn read_csv<R: BufRead>(input: R) -> Result<Vec<MetricsRecord>> {
    let mut lines = input.lines();
    let header = lines.next().transpose()?;
    if header.as_deref().map(str::trim) != Some(CSV_HEADER) {
        return Err(BimError::Format(format!(
            "metrics file must start with header {CSV_HEADER:?}"
        )));
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(MetricsRecord::parse_csv_row(&line)?);
        }
    }
    Ok(out)
}

/// Destination for metric records.
pub trait MetricsSink {
    fn record(&mut self, rec: &MetricsRecord) -> Result<()>;
}

impl MetricsSink for Vec<MetricsRecord> {
    fn record(&mut self, rec: &MetricsRecord) -> Result<()> {
        self.push(rec.clone());
        Ok(())
    }
}

pub struct CsvSink<W: Write> {
    out: W,
}

impl<W: Write> CsvSink<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{CSV_HEADER}")?;
        Ok(Self { out })
    }

    /// Continue an existing log without repeating the header.
    pub fn append(out: W) -> Self {
        Self { out }
    }

    pub fn into_inner(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

impl<W: Write> MetricsSink for CsvSink<W> {
    fn record(&mut self, rec: &MetricsRecord) -> Result<()> {
        writeln!(self.out, "{}", rec.to_csv_row())?;
        Ok(())
    }
}
