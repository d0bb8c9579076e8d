//! Covariate and split files.
//!
//! Covariates: a header row (`<id column>,<name 1>,…,<name J>`) then one row
//! per unit. Splits: a header row then `unit_id,arm` rows with arm `M` or `N`;
//! units not listed are population members outside the sample.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use covbal::{Population, SplitSample};

use crate::error::{CliError, Result};

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| CliError::io(path, e))
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(r)
}

fn parse_err(what: &str, e: csv::Error) -> CliError {
    CliError::Parse(format!("{what}: {e}"))
}

pub fn read_covariates(path: &Path) -> Result<Population> {
    read_covariates_from(open(path)?, &path.display().to_string())
}

pub fn read_covariates_from<R: Read>(r: R, what: &str) -> Result<Population> {
    let mut rdr = reader(r);
    let header = rdr.headers().map_err(|e| parse_err(what, e))?.clone();
    if header.len() < 2 {
        return Err(CliError::Parse(format!("{what}: header needs a unit id column and at least one covariate")));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut seen_names = HashSet::new();
    if let Some(dup) = names.iter().find(|n| !seen_names.insert(n.as_str())) {
        return Err(CliError::Parse(format!("{what}: duplicate covariate name '{dup}'")));
    }
    let j = names.len();
    let mut ids = Vec::new();
    let mut seen_ids = HashMap::new();
    let mut columns = vec![Vec::new(); j];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(what, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != j + 1 {
            return Err(CliError::Parse(format!("{what}: line {line} has {} fields, expected {}", rec.len(), j + 1)));
        }
        let id = rec[0].to_string();
        if let Some(first) = seen_ids.insert(id.clone(), line) {
            return Err(CliError::Parse(format!("{what}: line {line}: unit id '{id}' already used on line {first}")));
        }
        ids.push(id);
        for (c, cell) in rec.iter().skip(1).enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                CliError::Parse(format!(
                    "{what}: line {line}, column '{}': cannot parse '{cell}' as a number",
                    names[c]
                ))
            })?;
            if !v.is_finite() {
                return Err(CliError::Parse(format!(
                    "{what}: line {line}, column '{}': value '{cell}' is not finite",
                    names[c]
                )));
            }
            columns[c].push(v);
        }
    }
    Ok(Population::from_columns(ids, names, columns)?)
}

/// Writes covariates back out; values use shortest round-trip formatting.
pub fn write_covariates<W: Write>(w: W, pop: &Population, id_column: &str) -> Result<()> {
    let mut cw = csv::Writer::from_writer(w);
    let werr = |e: csv::Error| CliError::Io(e.to_string());
    let mut header = vec![id_column.to_string()];
    header.extend(pop.covariate_names().iter().cloned());
    cw.write_record(&header).map_err(werr)?;
    for (u, id) in pop.unit_ids().iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend((0..pop.j()).map(|c| pop.value(u, c).to_string()));
        cw.write_record(&rec).map_err(werr)?;
    }
    cw.flush().map_err(|e| CliError::Io(e.to_string()))
}

pub fn read_split(path: &Path, pop: &Population) -> Result<SplitSample> {
    read_split_from(open(path)?, pop, &path.display().to_string())
}

pub fn read_split_from<R: Read>(r: R, pop: &Population, what: &str) -> Result<SplitSample> {
    let mut rdr = reader(r);
    rdr.headers().map_err(|e| parse_err(what, e))?;
    let (mut m, mut n) = (Vec::new(), Vec::new());
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(what, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 2 {
            return Err(CliError::Parse(format!("{what}: line {line} has {} fields, expected unit_id,arm", rec.len())));
        }
        let id = &rec[0];
        let unit = pop.unit_index(id).ok_or_else(|| {
            CliError::Validation(format!("{what}: line {line}: unit id '{id}' is not in the covariate file"))
        })?;
        if !seen.insert(unit) {
            return Err(CliError::Validation(format!("{what}: line {line}: unit id '{id}' listed twice")));
        }
        match rec[1].to_ascii_uppercase().as_str() {
            "M" => m.push(unit),
            "N" => n.push(unit),
            other => return Err(CliError::Parse(format!("{what}: line {line}: arm must be M or N, got '{other}'"))),
        }
    }
    if m.is_empty() || n.is_empty() {
        return Err(CliError::Validation(format!(
            "{what}: both arms need at least one unit (M: {}, N: {})",
            m.len(),
            n.len()
        )));
    }
    Ok(SplitSample::new(m, n, pop.k())?)
}
