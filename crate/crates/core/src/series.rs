//! Timestamped multichannel tension data with a per-entry observation mask.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{BoolMatrix, RealMatrix};

/// Cable names in corpus column order.
pub const CABLE_NAMES: [&str; 14] = [
    "SJS08", "SJS09", "SJS10", "SJS11", "SJS12", "SJS13", "SJS14", "SJX08", "SJX09", "SJX10",
    "SJX11", "SJX12", "SJX13", "SJX14",
];

pub fn default_channel_names() -> Vec<String> {
    CABLE_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Rows are samples at a fixed rate, columns are channels.
///
/// Missing entries hold `0.0` in `values` and `false` in `mask`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiChannelSeries {
    names: Vec<String>,
    sample_rate: f64,
    start_time: f64,
    values: RealMatrix,
    mask: BoolMatrix,
}

impl MultiChannelSeries {
    pub fn new(
        names: Vec<String>,
        sample_rate: f64,
        start_time: f64,
        mut values: RealMatrix,
        mask: BoolMatrix,
    ) -> Result<Self> {
        if names.len() != values.cols() {
            return Err(Error::shape(
                "MultiChannelSeries",
                format!("{} channel names", values.cols()),
                format!("{}", names.len()),
            ));
        }
        if mask.shape() != values.shape() {
            return Err(Error::shape(
                "MultiChannelSeries mask",
                format!("{:?}", values.shape()),
                format!("{:?}", mask.shape()),
            ));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::Config(format!("duplicate channel name {dup}")));
        }
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::Config(format!("sample rate must be positive, got {sample_rate}")));
        }
        for (v, &m) in values.as_mut_slice().iter_mut().zip(mask.as_slice()) {
            if !m {
                *v = 0.0;
            } else if !v.is_finite() {
                return Err(Error::Numeric("observed entry is not finite".into()));
            }
        }
        Ok(Self {
            names,
            sample_rate,
            start_time,
            values,
            mask,
        })
    }

    /// Every entry observed.
    pub fn observed(names: Vec<String>, sample_rate: f64, values: RealMatrix) -> Result<Self> {
        let mask = BoolMatrix::filled(values.rows(), values.cols(), true);
        Self::new(names, sample_rate, 0.0, values, mask)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    /// Time of row 0 in seconds.
    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn values(&self) -> &RealMatrix {
        &self.values
    }

    pub fn mask(&self) -> &BoolMatrix {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel_count(&self) -> usize {
        self.values.cols()
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Indices of `names`, failing on the first unknown one.
    pub fn channel_indices<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                self.channel_index(n.as_ref())
                    .ok_or_else(|| Error::Config(format!("unknown channel {}", n.as_ref())))
            })
            .collect()
    }

    pub fn time(&self, row: usize) -> f64 {
        self.start_time + row as f64 / self.sample_rate
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.mask.get(row, col).then(|| self.values.get(row, col))
    }

    /// Overwrites one entry; `None` marks it missing.
    pub fn set(&mut self, row: usize, col: usize, value: Option<f64>) {
        self.values.set(row, col, value.unwrap_or(0.0));
        self.mask.set(row, col, value.is_some());
    }

    pub fn observed_count(&self, col: usize) -> usize {
        (0..self.len()).filter(|&r| self.mask.get(r, col)).count()
    }

    /// Rows `start..end` with the time origin shifted accordingly.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Self {
            names: self.names.clone(),
            sample_rate: self.sample_rate,
            start_time: self.time(start),
            values: self.values.slice_rows(start, end),
            mask: self.mask.slice_rows(start, end),
        }
    }

    /// Rows covering `[from, to)` seconds.
    pub fn slice_seconds(&self, from: f64, to: f64) -> Self {
        let index = |t: f64| {
            (((t - self.start_time) * self.sample_rate).round().max(0.0) as usize).min(self.len())
        };
        let (a, b) = (index(from), index(to));
        self.slice_rows(a, b.max(a))
    }

    /// Marks every entry of the given channels missing.
    pub fn hide_channels(&mut self, cols: &[usize]) {
        for r in 0..self.len() {
            for &c in cols {
                self.set(r, c, None);
            }
        }
    }

    /// New series whose column `j` is this series' column `order[j]`.
    pub fn permute_channels(&self, order: &[usize]) -> Result<Self> {
        check_permutation(order, self.channel_count())?;
        let m = self.channel_count();
        let rows = self.len();
        let values = RealMatrix::from_fn(rows, m, |r, c| self.values.get(r, order[c]));
        let mut mask = BoolMatrix::filled(rows, m, false);
        for r in 0..rows {
            for (c, &src) in order.iter().enumerate() {
                mask.set(r, c, self.mask.get(r, src));
            }
        }
        Ok(Self {
            names: order.iter().map(|&i| self.names[i].clone()).collect(),
            sample_rate: self.sample_rate,
            start_time: self.start_time,
            values,
            mask,
        })
    }

    /// Replaces the values, keeping names, timing and mask.
    pub fn with_values(&self, values: RealMatrix) -> Result<Self> {
        Self::new(
            self.names.clone(),
            self.sample_rate,
            self.start_time,
            values,
            self.mask.clone(),
        )
    }

    /// Writes `timestamp,<names...>`; missing entries become empty cells.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let csv_err = |e: csv::Error| Error::Csv(e.to_string());
        let mut header = Vec::with_capacity(self.channel_count() + 1);
        header.push("timestamp".to_string());
        header.extend(self.names.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        let mut record = Vec::with_capacity(header.len());
        for r in 0..self.len() {
            record.clear();
            record.push(self.time(r).to_string());
            for c in 0..self.channel_count() {
                record.push(self.get(r, c).map_or_else(String::new, |v| v.to_string()));
            }
            w.write_record(&record).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }

    /// Parses the corpus CSV format; the sample rate comes from the first two timestamps.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let csv_err = |e: csv::Error| Error::Csv(e.to_string());
        let header = rdr.headers().map_err(csv_err)?.clone();
        if header.get(0) != Some("timestamp") {
            return Err(Error::Csv("first column must be `timestamp`".into()));
        }
        let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let m = names.len();
        let mut times = Vec::new();
        let mut values = Vec::new();
        let mut mask = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            if rec.len() != m + 1 {
                return Err(Error::Csv(format!(
                    "row {} has {} fields, expected {}",
                    line + 1,
                    rec.len(),
                    m + 1
                )));
            }
            let parse = |s: &str, what: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Csv(format!("row {}: bad {what} `{s}`", line + 1)))
            };
            times.push(parse(&rec[0], "timestamp")?);
            for cell in rec.iter().skip(1) {
                if cell.trim().is_empty() {
                    values.push(0.0);
                    mask.push(false);
                } else {
                    let v = parse(cell, "value")?;
                    if !v.is_finite() {
                        return Err(Error::Csv(format!("row {}: non-finite value", line + 1)));
                    }
                    values.push(v);
                    mask.push(true);
                }
            }
        }
        let rows = times.len();
        let sample_rate = match times.as_slice() {
            [t0, t1, ..] if t1 > t0 => 1.0 / (t1 - t0),
            [_, _, ..] => return Err(Error::Csv("timestamps must increase".into())),
            _ => 1.0,
        };
        let start = times.first().copied().unwrap_or(0.0);
        let values = RealMatrix::from_vec(rows, m, values)?;
        let mask = BoolMatrix::from_vec(rows, m, mask)?;
        Self::new(names, sample_rate, start, values, mask)
    }

    pub fn export_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn import_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

pub(crate) fn check_permutation(order: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if order.len() != n || !order.iter().all(|&i| i < n && !std::mem::replace(&mut seen[i], true)) {
        return Err(Error::Config(format!("{order:?} is not a permutation of 0..{n}")));
    }
    Ok(())
}
