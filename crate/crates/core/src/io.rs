//! CSV formats. Matrix files hold one row per line; triplet and sampling
//! files use 1-based `i,j[,value]` rows with an optional header line.
//! Feature maps and model bundles start with a `# key=value,...` line.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use faer::{Mat, MatRef};

use crate::error::{Error, Result};
use crate::kernels::{FeatureMap, FeatureProvenance};
use crate::sampling::{ObservationSet, SamplingSet};

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_err(path, e))
}

/// Non-empty, non-comment records with their 1-based line numbers.
fn records(path: &Path) -> Result<Vec<(u64, csv::StringRecord)>> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        out.push((line, rec));
    }
    Ok(out)
}

fn parse_f64(path: &Path, line: u64, field: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| parse_err(path, line, format!("'{field}' is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite value '{field}'")));
    }
    Ok(v)
}

fn parse_index(path: &Path, line: u64, field: &str, bound: usize, what: &str) -> Result<usize> {
    let v: usize = field
        .parse()
        .map_err(|_| parse_err(path, line, format!("{what} index '{field}' is not a positive integer")))?;
    if v == 0 || v > bound {
        return Err(parse_err(path, line, format!("{what} index {v} outside 1..={bound}")));
    }
    Ok(v - 1)
}

fn is_header(rec: &csv::StringRecord) -> bool {
    rec.get(0).is_some_and(|f| f.eq_ignore_ascii_case("i"))
}

pub fn read_matrix_csv(path: &Path) -> Result<Mat<f64>> {
    let recs = records(path)?;
    let rows: Vec<Vec<f64>> = recs
        .iter()
        .map(|(line, rec)| rec.iter().map(|f| parse_f64(path, *line, f)).collect())
        .collect::<Result<_>>()?;
    let ncols = rows.first().map_or(0, Vec::len);
    for ((line, _), row) in recs.iter().zip(&rows) {
        if row.len() != ncols {
            return Err(parse_err(
                path,
                *line,
                format!("expected {ncols} fields, found {}", row.len()),
            ));
        }
    }
    Ok(Mat::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn write_rows<W: Write>(out: &mut W, m: MatRef<'_, f64>) -> std::io::Result<()> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.write_all(b",")?;
            }
            write!(out, "{}", m[(i, j)])?;
        }
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes with shortest round-trip formatting, so reading back is bit-exact.
pub fn write_matrix_csv(path: &Path, m: MatRef<'_, f64>) -> Result<()> {
    let mut out = create(path)?;
    write_rows(&mut out, m)
        .and_then(|_| out.flush())
        .map_err(|e| io_err(path, e))
}

/// Reads `i,j,value` rows (1-based) for an `N×L` grid. Duplicates are errors.
pub fn read_triplets_csv(path: &Path, n_rows: usize, n_cols: usize) -> Result<ObservationSet> {
    let mut entries = Vec::new();
    let mut values = Vec::new();
    let mut seen = HashSet::new();
    for (k, (line, rec)) in records(path)?.iter().enumerate() {
        if k == 0 && is_header(rec) {
            continue;
        }
        if rec.len() != 3 {
            return Err(parse_err(path, *line, format!("expected i,j,value, found {} fields", rec.len())));
        }
        let i = parse_index(path, *line, &rec[0], n_rows, "row")?;
        let j = parse_index(path, *line, &rec[1], n_cols, "column")?;
        if !seen.insert((i, j)) {
            return Err(parse_err(path, *line, format!("duplicate entry ({}, {})", i + 1, j + 1)));
        }
        entries.push((i, j));
        values.push(parse_f64(path, *line, &rec[2])?);
    }
    ObservationSet::new(SamplingSet::new(n_rows, n_cols, entries)?, values)
}

pub fn write_triplets_csv(path: &Path, obs: &ObservationSet) -> Result<()> {
    let mut out = create(path)?;
    let res = (|| {
        writeln!(out, "i,j,value")?;
        for (i, j, v) in obs.iter() {
            writeln!(out, "{},{},{}", i + 1, j + 1, v)?;
        }
        out.flush()
    })();
    res.map_err(|e| io_err(path, e))
}

pub fn read_sampling_csv(path: &Path, n_rows: usize, n_cols: usize) -> Result<SamplingSet> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (k, (line, rec)) in records(path)?.iter().enumerate() {
        if k == 0 && is_header(rec) {
            continue;
        }
        if rec.len() != 2 {
            return Err(parse_err(path, *line, format!("expected i,j, found {} fields", rec.len())));
        }
        let i = parse_index(path, *line, &rec[0], n_rows, "row")?;
        let j = parse_index(path, *line, &rec[1], n_cols, "column")?;
        if !seen.insert((i, j)) {
            return Err(parse_err(path, *line, format!("duplicate entry ({}, {})", i + 1, j + 1)));
        }
        entries.push((i, j));
    }
    SamplingSet::new(n_rows, n_cols, entries)
}

pub fn write_sampling_csv(path: &Path, s: &SamplingSet) -> Result<()> {
    let mut out = create(path)?;
    let res = (|| {
        writeln!(out, "i,j")?;
        for &(i, j) in s.entries() {
            writeln!(out, "{},{}", i + 1, j + 1)?;
        }
        out.flush()
    })();
    res.map_err(|e| io_err(path, e))
}

/// Key-value pairs of a `# k=v,k=v` metadata line.
pub type Metadata = BTreeMap<String, String>;

fn format_metadata(meta: &[(&str, String)]) -> String {
    let body: Vec<String> = meta.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("# {}", body.join(","))
}

/// Parses the metadata header of a bundle file.
pub fn read_metadata(path: &Path) -> Result<Metadata> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut first = String::new();
    BufReader::new(file)
        .read_line(&mut first)
        .map_err(|e| io_err(path, e))?;
    let body = first
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| parse_err(path, 1, "missing '# key=value' metadata line"))?;
    let mut meta = Metadata::new();
    for pair in body.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| parse_err(path, 1, format!("metadata item '{pair}' lacks '='")))?;
        meta.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(meta)
}

pub fn meta_get<T: std::str::FromStr>(meta: &Metadata, path: &Path, key: &str) -> Result<T> {
    let raw = meta
        .get(key)
        .ok_or_else(|| parse_err(path, 1, format!("metadata lacks '{key}'")))?;
    raw.parse()
        .map_err(|_| parse_err(path, 1, format!("metadata '{key}={raw}' has the wrong type")))
}

/// Header `# N=..,L=..,d=..,provenance=..`, then the `NL×d` matrix.
pub fn write_feature_map(path: &Path, fm: &FeatureMap) -> Result<()> {
    let mut out = create(path)?;
    let header = format_metadata(&[
        ("N", fm.n_rows().to_string()),
        ("L", fm.n_cols().to_string()),
        ("d", fm.dim().to_string()),
        ("provenance", fm.provenance().to_string()),
    ]);
    let res = writeln!(out, "{header}")
        .and_then(|_| write_rows(&mut out, fm.phi()))
        .and_then(|_| out.flush());
    res.map_err(|e| io_err(path, e))
}

pub fn read_feature_map(path: &Path) -> Result<FeatureMap> {
    let meta = read_metadata(path)?;
    let n: usize = meta_get(&meta, path, "N")?;
    let l: usize = meta_get(&meta, path, "L")?;
    let d: usize = meta_get(&meta, path, "d")?;
    let provenance: FeatureProvenance = meta_get(&meta, path, "provenance")?;
    let phi = read_matrix_csv(path)?;
    if phi.nrows() != n * l || phi.ncols() != d {
        return Err(parse_err(
            path,
            1,
            format!("header promises {}x{d}, body is {}x{}", n * l, phi.nrows(), phi.ncols()),
        ));
    }
    FeatureMap::with_provenance(phi, n, l, provenance)
}

/// Writes a bundle: metadata header line, then a matrix body.
pub fn write_bundle(path: &Path, meta: &[(&str, String)], body: MatRef<'_, f64>) -> Result<()> {
    let mut out = create(path)?;
    let res = writeln!(out, "{}", format_metadata(meta))
        .and_then(|_| write_rows(&mut out, body))
        .and_then(|_| out.flush());
    res.map_err(|e| io_err(path, e))
}

/// Reads a bundle written by [`write_bundle`].
pub fn read_bundle(path: &Path) -> Result<(Metadata, Mat<f64>)> {
    Ok((read_metadata(path)?, read_matrix_csv(path)?))
}

/// One row of a results file.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: String,
    pub ps: f64,
    pub realization: usize,
    pub nmse: f64,
    pub seconds: f64,
    pub mu: f64,
    pub eta: Option<f64>,
}

pub const RESULTS_HEADER: &str = "method,P_s,realization,nmse,seconds,mu,eta";

/// Writes `method,P_s,realization,nmse,seconds,mu,eta`. With `omit_timing`
/// the seconds column is left empty so output depends only on the inputs.
pub fn write_results_csv(path: &Path, rows: &[ResultRow], omit_timing: bool) -> Result<()> {
    let mut out = create(path)?;
    let res = (|| {
        writeln!(out, "{RESULTS_HEADER}")?;
        for r in rows {
            let secs = if omit_timing { String::new() } else { r.seconds.to_string() };
            let eta = r.eta.map(|e| e.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.method, r.ps, r.realization, r.nmse, secs, r.mu, eta
            )?;
        }
        out.flush()
    })();
    res.map_err(|e| io_err(path, e))
}
