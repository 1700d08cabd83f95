//! Model snapshot file.
//!
//! Layout: the 8-byte magic `RCMODEL1`, a little-endian u64 header length, a JSON
//! header, then binary sections in this order:
//!
//! - `w_in`: `size × inputs` f64, row-major
//! - adjacency in coordinate form: `nnz` u64 row indices, `nnz` u64 column indices,
//!   `nnz` f64 values
//! - `w_out`: `outputs × size` f64, row-major (absent when untrained)
//! - `state`: `size` f64
//!
//! All numbers are little-endian, so a snapshot round-trips bit-exactly.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{ReservoirModel, ReservoirParams, TrainReport};
use crate::error::{Error, Result};
use crate::io::{read_f64s, read_u64s, write_f64s, write_u64s};
use crate::linalg::CsrMatrix;

const MAGIC: &[u8; 8] = b"RCMODEL1";

#[derive(Serialize, Deserialize)]
struct Header {
    params: ReservoirParams,
    network_seed: u64,
    nnz: usize,
    trained: bool,
    train_report: Option<TrainReport>,
    sections: Vec<String>,
}

impl ReservoirModel {
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        let mut sections = vec!["w_in", "adjacency_rows", "adjacency_cols", "adjacency_values"];
        if self.is_trained() {
            sections.push("w_out");
        }
        sections.push("state");
        let header = Header {
            params: self.params,
            network_seed: self.network_seed,
            nnz: self.adjacency.nnz(),
            trained: self.is_trained(),
            train_report: self.report.clone(),
            sections: sections.into_iter().map(String::from).collect(),
        };
        let header = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        write_f64s(&mut w, &self.w_in)?;
        let (mut rows, mut cols, mut vals) = (Vec::new(), Vec::new(), Vec::new());
        for (r, c, v) in self.adjacency.triplets() {
            rows.push(r as u64);
            cols.push(c as u64);
            vals.push(v);
        }
        write_u64s(&mut w, &rows)?;
        write_u64s(&mut w, &cols)?;
        write_f64s(&mut w, &vals)?;
        if self.is_trained() {
            write_f64s(&mut w, &self.w_out)?;
        }
        write_f64s(&mut w, &self.state)?;
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a model snapshot".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut header)?;
        let header: Header = serde_json::from_slice(&header)?;
        let p = header.params;
        p.validate()?;
        let w_in = read_f64s(&mut r, p.size * p.inputs)?;
        let rows = read_u64s(&mut r, header.nnz)?;
        let cols = read_u64s(&mut r, header.nnz)?;
        let vals = read_f64s(&mut r, header.nnz)?;
        if rows.iter().chain(&cols).any(|&i| i as usize >= p.size) {
            return Err(Error::Format("adjacency index out of range".into()));
        }
        let triplets = rows
            .into_iter()
            .zip(cols)
            .zip(vals)
            .map(|((r, c), v)| (r as usize, c as usize, v))
            .collect();
        let adjacency = CsrMatrix::from_triplets(p.size, p.size, triplets);
        let w_out = if header.trained { read_f64s(&mut r, p.outputs * p.size)? } else { Vec::new() };
        let state = read_f64s(&mut r, p.size)?;
        let mut model = ReservoirModel::from_parts(p, header.network_seed, w_in, adjacency, w_out);
        model.state = state;
        model.report = header.train_report;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{build, Connectivity, InputLayout};
    use super::*;
    use crate::dynsys::{OdeKind, OdeSystem};

    #[test]
    fn snapshot_round_trips_bit_exactly() {
        let params = ReservoirParams {
            size: 64,
            inputs: 3,
            outputs: 3,
            sigma: 0.1,
            input_layout: InputLayout::Dense,
            connectivity: Connectivity::Density(0.3),
            rho: 1.2,
            eta: 1e-5,
            seed: 8,
        };
        let mut model = build(&params).unwrap();
        let sys = OdeSystem::new(OdeKind::Lorenz);
        model.train(&sys.integrate(&sys.initial_state(0), 1000, 100).unwrap(), 50).unwrap();

        let mut bytes = Vec::new();
        model.save(&mut bytes).unwrap();
        let back = ReservoirModel::load(bytes.as_slice()).unwrap();
        assert_eq!(back.w_in(), model.w_in());
        assert_eq!(back.adjacency(), model.adjacency());
        assert_eq!(back.w_out(), model.w_out());
        assert_eq!(back.state(), model.state());
        assert_eq!(back.train_report(), model.train_report());
        let mut again = Vec::new();
        back.save(&mut again).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(ReservoirModel::load(&b"NOTMODEL........"[..]).is_err());
    }
}
