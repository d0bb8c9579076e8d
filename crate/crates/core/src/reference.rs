//! Reference sets: the SMD vector of every split drawn (or enumerated) under
//! the ideal scheme, with integer probability weights and provenance.
//!
//! Cache file layout (CSV with a commented provenance header):
//!
//! ```text
//! # covbal-reference v1
//! # population_hash=<sha256 hex>
//! # scheme=srs
//! # m_size=4
//! # n_size=40
//! # mode=monte_carlo:100000
//! # seed=1
//! weight,<covariate 1>,...,<covariate J>
//! 1,0.1234,...
//! ```

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::data::Population;
use crate::error::{Error, Result};
use crate::sampling::ReferenceMode;

const MAGIC: &str = "# covbal-reference v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub scheme: String,
    pub m_size: usize,
    pub n_size: usize,
    pub mode: ReferenceMode,
    pub seed: u64,
    pub population_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet {
    j: usize,
    /// Row-major `rows × J`.
    smd_rows: Vec<f64>,
    weights: Vec<u64>,
    total_weight: u64,
    provenance: Provenance,
}

impl ReferenceSet {
    pub fn new(j: usize, smd_rows: Vec<f64>, weights: Vec<u64>, provenance: Provenance) -> Result<Self> {
        if j == 0 {
            return Err(Error::InvalidArgument("reference rows need at least one covariate".into()));
        }
        if smd_rows.len() != weights.len() * j {
            return Err(Error::DimensionMismatch { expected: weights.len() * j, found: smd_rows.len() });
        }
        if weights.is_empty() {
            return Err(Error::EmptyReference);
        }
        if smd_rows.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::InvalidArgument("reference SMDs must be finite and >= 0".into()));
        }
        let total_weight = weights
            .iter()
            .try_fold(0u64, |a, &w| a.checked_add(w))
            .ok_or_else(|| Error::InvalidArgument("reference weights overflow".into()))?;
        if total_weight == 0 {
            return Err(Error::EmptyReference);
        }
        Ok(ReferenceSet { j, smd_rows, weights, total_weight, provenance })
    }

    pub fn j(&self) -> usize {
        self.j
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.smd_rows[i * self.j..(i + 1) * self.j]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.smd_rows.chunks_exact(self.j)
    }

    pub fn weights(&self) -> &[u64] {
        &self.weights
    }

    pub fn total_weight(&self) -> u64 {
        self.total_weight
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Largest SMD over all rows.
    pub fn max_smd(&self) -> f64 {
        self.smd_rows.iter().copied().fold(0.0, f64::max)
    }

    /// Fails unless this set was built on `pop` with the given arm sizes.
    pub fn check_matches(&self, pop: &Population, m_size: usize, n_size: usize) -> Result<()> {
        let p = &self.provenance;
        if p.population_hash != pop.content_hash() {
            return Err(Error::Provenance("reference was built on a different population".into()));
        }
        if (p.m_size, p.n_size) != (m_size, n_size) {
            return Err(Error::Provenance(format!(
                "reference arm sizes ({}, {}) differ from the split's ({m_size}, {n_size})",
                p.m_size, p.n_size
            )));
        }
        if self.j != pop.j() {
            return Err(Error::DimensionMismatch { expected: pop.j(), found: self.j });
        }
        Ok(())
    }

    /// Writes the cache file. Values use Rust's shortest round-trip formatting.
    pub fn write_csv<W: Write>(&self, mut w: W, covariate_names: &[String]) -> Result<()> {
        if covariate_names.len() != self.j {
            return Err(Error::DimensionMismatch { expected: self.j, found: covariate_names.len() });
        }
        let p = &self.provenance;
        let io = |e: std::io::Error| Error::ReferenceFormat(e.to_string());
        writeln!(w, "{MAGIC}").map_err(io)?;
        writeln!(w, "# population_hash={}", p.population_hash).map_err(io)?;
        writeln!(w, "# scheme={}", p.scheme).map_err(io)?;
        writeln!(w, "# m_size={}", p.m_size).map_err(io)?;
        writeln!(w, "# n_size={}", p.n_size).map_err(io)?;
        writeln!(w, "# mode={}", p.mode).map_err(io)?;
        writeln!(w, "# seed={}", p.seed).map_err(io)?;
        let mut cw = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| Error::ReferenceFormat(e.to_string());
        let mut header = vec!["weight".to_string()];
        header.extend(covariate_names.iter().cloned());
        cw.write_record(&header).map_err(csv_err)?;
        let mut rec = Vec::with_capacity(self.j + 1);
        for (row, wgt) in self.rows().zip(&self.weights) {
            rec.clear();
            rec.push(wgt.to_string());
            rec.extend(row.iter().map(|v| v.to_string()));
            cw.write_record(&rec).map_err(csv_err)?;
        }
        cw.flush().map_err(io)?;
        Ok(())
    }

    /// Reads a cache file; returns the set and the covariate names from its header.
    pub fn read_csv<R: BufRead>(r: R) -> Result<(Self, Vec<String>)> {
        let fmt = |msg: String| Error::ReferenceFormat(msg);
        let mut lines = r.lines();
        let first = lines.next().transpose().map_err(|e| fmt(e.to_string()))?;
        if first.as_deref().map(str::trim_end) != Some(MAGIC) {
            return Err(fmt("missing 'covbal-reference v1' header".into()));
        }
        let mut meta = std::collections::HashMap::new();
        let mut body = String::new();
        for line in lines {
            let line = line.map_err(|e| fmt(e.to_string()))?;
            if let Some(kv) = line.strip_prefix("# ") {
                let (k, v) = kv.split_once('=').ok_or_else(|| fmt(format!("bad header line '{line}'")))?;
                meta.insert(k.to_string(), v.to_string());
            } else {
                body.push_str(&line);
                body.push('\n');
            }
        }
        let get = |k: &str| meta.get(k).cloned().ok_or_else(|| fmt(format!("missing '{k}' in header")));
        let parse_usize =
            |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| fmt(format!("bad value for '{k}'"))) };
        let provenance = Provenance {
            population_hash: get("population_hash")?,
            scheme: get("scheme")?,
            m_size: parse_usize("m_size")?,
            n_size: parse_usize("n_size")?,
            mode: get("mode")?.parse()?,
            seed: get("seed")?.parse().map_err(|_| fmt("bad value for 'seed'".into()))?,
        };

        let mut rdr = csv::Reader::from_reader(body.as_bytes());
        let header = rdr.headers().map_err(|e| fmt(e.to_string()))?.clone();
        if header.get(0) != Some("weight") || header.len() < 2 {
            return Err(fmt("column header must be 'weight' followed by covariate names".into()));
        }
        let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let j = names.len();
        let mut rows = Vec::new();
        let mut weights = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| fmt(e.to_string()))?;
            let line = i + 2;
            if rec.len() != j + 1 {
                return Err(fmt(format!("data row {line} has {} fields, expected {}", rec.len(), j + 1)));
            }
            weights.push(rec[0].parse().map_err(|_| fmt(format!("bad weight on data row {line}")))?);
            for f in rec.iter().skip(1) {
                rows.push(f.parse().map_err(|_| fmt(format!("bad value '{f}' on data row {line}")))?);
            }
        }
        Ok((ReferenceSet::new(j, rows, weights, provenance)?, names))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prov() -> Provenance {
        Provenance {
            scheme: "srs".into(),
            m_size: 1,
            n_size: 1,
            mode: ReferenceMode::MonteCarlo { rounds: 2 },
            seed: 9,
            population_hash: "abc".into(),
        }
    }

    #[test]
    fn rejects_empty_and_ragged() {
        assert_eq!(ReferenceSet::new(2, vec![], vec![], prov()), Err(Error::EmptyReference));
        assert!(ReferenceSet::new(2, vec![0.1, 0.2, 0.3], vec![1, 1], prov()).is_err());
        assert!(ReferenceSet::new(1, vec![-0.1], vec![1], prov()).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let rows = vec![0.1, 1.0 / 3.0, 2f64.sqrt(), 0.0];
        let set = ReferenceSet::new(2, rows, vec![1, 3], prov()).unwrap();
        let mut buf = Vec::new();
        set.write_csv(&mut buf, &["a".into(), "b,c".into()]).unwrap();
        let (back, names) = ReferenceSet::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, set);
        assert_eq!(names, vec!["a".to_string(), "b,c".to_string()]);
    }

    #[test]
    fn read_rejects_garbage() {
        assert!(ReferenceSet::read_csv("hello\n".as_bytes()).is_err());
        let text = format!("{MAGIC}\n# scheme=srs\nweight,a\n1,0.5\n");
        assert!(matches!(ReferenceSet::read_csv(text.as_bytes()), Err(Error::ReferenceFormat(_))));
    }
}
