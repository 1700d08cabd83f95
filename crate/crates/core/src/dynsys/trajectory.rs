use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Time-major matrix of sampled states. Row `t` holds the state at time `t * dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBuffer {
    data: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
    dt: f64,
    channels: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct BinHeader {
    dims: [usize; 2],
    dt: f64,
    channels: Vec<String>,
}

impl TrajectoryBuffer {
    /// Builds a buffer from row-major data. Non-finite entries are rejected.
    pub fn new(data: Vec<f64>, n_cols: usize, dt: f64, channels: Vec<String>) -> Result<Self> {
        if n_cols == 0 || data.len() % n_cols != 0 {
            return Err(Error::Format(format!(
                "{} values cannot be split into rows of {}",
                data.len(),
                n_cols
            )));
        }
        if channels.len() != n_cols {
            return Err(Error::DimensionMismatch { expected: n_cols, got: channels.len() });
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::BlowUp { step: pos / n_cols });
        }
        Ok(Self { n_rows: data.len() / n_cols, data, n_cols, dt, channels })
    }

    pub fn with_default_channels(data: Vec<f64>, n_cols: usize, dt: f64) -> Result<Self> {
        Self::new(data, n_cols, dt, (0..n_cols).map(|i| format!("u{i}")).collect())
    }

    pub fn len(&self) -> usize {
        self.n_rows
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows == 0
    }

    pub fn dim(&self) -> usize {
        self.n_cols
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.n_cols..(t + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_cols)
    }

    pub fn column(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows().map(move |r| r[c])
    }

    /// Copies rows `start..end` into a new buffer.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        assert!(start <= end && end <= self.n_rows, "row range {start}..{end} out of bounds");
        Self {
            data: self.data[start * self.n_cols..end * self.n_cols].to_vec(),
            n_rows: end - start,
            n_cols: self.n_cols,
            dt: self.dt,
            channels: self.channels.clone(),
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.channels.join(","))?;
        let mut line = String::new();
        for row in self.rows() {
            line.clear();
            for (i, x) in row.iter().enumerate() {
                if i > 0 {
                    line.push(',');
                }
                // `{:?}` gives the shortest representation that round-trips exactly.
                line.push_str(&format!("{x:?}"));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Reads the CSV produced by [`write_csv`](Self::write_csv). The step size is not part of
    /// the CSV format and must be supplied.
    pub fn read_csv<R: Read>(r: R, dt: f64) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty CSV".into()))??;
        let channels: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        let mut data = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let before = data.len();
            for field in line.split(',') {
                data.push(field.trim().parse::<f64>().map_err(|e| {
                    Error::Format(format!("line {}: {e}", lineno + 2))
                })?);
            }
            if data.len() - before != channels.len() {
                return Err(Error::Format(format!(
                    "line {}: expected {} fields",
                    lineno + 2,
                    channels.len()
                )));
            }
        }
        Self::new(data, channels.len(), dt, channels)
    }

    /// Binary layout: u64 LE header length, JSON header `{dims, dt, channels}`, then
    /// `dims[0] * dims[1]` little-endian f64 values in row-major order.
    pub fn write_bin<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(&BinHeader {
            dims: [self.n_rows, self.n_cols],
            dt: self.dt,
            channels: self.channels.clone(),
        })?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for x in &self.data {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_bin<R: Read>(mut r: R) -> Result<Self> {
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        let mut header = vec![0u8; len];
        r.read_exact(&mut header)?;
        let header: BinHeader = serde_json::from_slice(&header)?;
        let n = header.dims[0] * header.dims[1];
        let data = crate::io::read_f64s(&mut r, n)?;
        Self::new(data, header.dims[1], header.dt, header.channels)
    }
}
