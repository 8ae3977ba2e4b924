//! Text and JSON file formats.
//!
//! * Edge lists: `i<TAB>j<TAB>s` per line, `#` comments, optional `#n=<N>`
//!   and `#undirected` headers.
//! * Label files: one integer per line, indexed by object.
//! * Side information: `i<TAB>j<TAB>f1,f2,...,fm`.
//! * Scores: `i<TAB>j<TAB>score` with shortest round-trip decimals.
//! * Checkpoints: JSON with row-major parameter arrays.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Entry, RelationData, SideInfo};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::state::{FitTrace, FitWarning, LatentState};

/// Version stamped into checkpoints and metrics documents.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: {source}")]
    Data { line: usize, source: DataError },
    #[error("unsupported format version: {found} (expected {FORMAT_VERSION})")]
    Version { found: String },
    #[error("malformed document: {0}")]
    Document(String),
    #[error("inconsistent dimensions: {0}")]
    Dimension(String),
}

fn malformed(line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Malformed { line, message: message.into() }
}

fn parse_index(field: &str, line: usize, what: &str) -> Result<usize, FormatError> {
    field.parse().map_err(|_| malformed(line, format!("invalid {what} `{field}`")))
}

/// Reads an edge list. `n` is one past the largest index unless a `#n=` header is given.
pub fn parse_edge_list(source: impl Read) -> Result<RelationData, FormatError> {
    let reader = BufReader::new(source);
    let mut header_n: Option<usize> = None;
    let mut undirected = false;
    let mut triples: Vec<(usize, usize, i64)> = Vec::new();
    let mut lines: Vec<usize> = Vec::new();
    for (idx, raw) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let raw = raw?;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(value) = comment.strip_prefix("n=") {
                header_n = Some(parse_index(value.trim(), line_no, "object count")?);
            } else if comment == "undirected" {
                undirected = true;
            }
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(malformed(line_no, format!("expected 3 fields, found {}", fields.len())));
        }
        let i = parse_index(fields[0], line_no, "index")?;
        let j = parse_index(fields[1], line_no, "index")?;
        let s: i64 = fields[2]
            .parse()
            .map_err(|_| malformed(line_no, format!("invalid value `{}`", fields[2])))?;
        triples.push((i, j, s));
        lines.push(line_no);
        if undirected && i != j {
            triples.push((j, i, s));
            lines.push(line_no);
        }
    }
    let n = header_n.unwrap_or_else(|| triples.iter().map(|&(i, j, _)| i.max(j) + 1).max().unwrap_or(0));
    RelationData::from_triples(n, &triples, !undirected).map_err(|source| {
        let position = match source {
            DataError::IndexOutOfRange { position, .. }
            | DataError::DuplicatePair { position, .. }
            | DataError::NonBinaryValue { position, .. } => position,
            _ => 0,
        };
        FormatError::Data { line: lines.get(position).copied().unwrap_or(0), source }
    })
}

/// Writes the canonical edge list: `#n=` header, entries sorted by `(i, j)`.
/// Undirected data is written once per unordered pair under `#undirected`.
pub fn write_edge_list(data: &RelationData, mut sink: impl Write) -> Result<(), FormatError> {
    writeln!(sink, "#n={}", data.n())?;
    if data.directed() {
        for e in data.entries() {
            writeln!(sink, "{}\t{}\t{}", e.i, e.j, e.s as u8)?;
        }
    } else {
        writeln!(sink, "#undirected")?;
        for e in data.entries() {
            if data.get(e.j, e.i) != Some(e.s) {
                return Err(FormatError::Document(format!(
                    "undirected data is not symmetric at ({}, {})",
                    e.i, e.j
                )));
            }
            if e.i <= e.j {
                writeln!(sink, "{}\t{}\t{}", e.i, e.j, e.s as u8)?;
            }
        }
    }
    Ok(())
}

/// Writes held-out entries in edge-list form.
pub fn write_entries(n: usize, entries: &[Entry], mut sink: impl Write) -> Result<(), FormatError> {
    writeln!(sink, "#n={n}")?;
    for e in entries {
        writeln!(sink, "{}\t{}\t{}", e.i, e.j, e.s as u8)?;
    }
    Ok(())
}

pub fn read_labels(source: impl Read) -> Result<Vec<usize>, FormatError> {
    let mut labels = Vec::new();
    for (idx, raw) in BufReader::new(source).lines().enumerate() {
        let raw = raw?;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        labels.push(parse_index(line, idx + 1, "label")?);
    }
    Ok(labels)
}

pub fn write_labels(labels: &[usize], mut sink: impl Write) -> Result<(), FormatError> {
    for l in labels {
        writeln!(sink, "{l}")?;
    }
    Ok(())
}

/// Reads pairwise covariates. The dimension is taken from the first record.
pub fn read_side_info(source: impl Read) -> Result<SideInfo<f64>, FormatError> {
    let mut side: Option<SideInfo<f64>> = None;
    for (idx, raw) in BufReader::new(source).lines().enumerate() {
        let line_no = idx + 1;
        let raw = raw?;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(malformed(line_no, format!("expected 3 fields, found {}", fields.len())));
        }
        let i = parse_index(fields[0], line_no, "index")?;
        let j = parse_index(fields[1], line_no, "index")?;
        let x = fields[2]
            .split(',')
            .map(|f| f.trim().parse::<f64>().map_err(|_| malformed(line_no, format!("invalid covariate `{f}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        let side = side.get_or_insert_with(|| SideInfo::new(x.len()));
        side.insert(i, j, x).map_err(|source| FormatError::Data { line: line_no, source })?;
    }
    Ok(side.unwrap_or_else(|| SideInfo::new(0)))
}

/// Reads `i<TAB>j[<TAB>...]` lines, ignoring any trailing fields.
pub fn read_pairs(source: impl Read) -> Result<Vec<(usize, usize)>, FormatError> {
    let mut pairs = Vec::new();
    for (idx, raw) in BufReader::new(source).lines().enumerate() {
        let line_no = idx + 1;
        let raw = raw?;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 2 {
            return Err(malformed(line_no, "expected at least 2 fields"));
        }
        pairs.push((parse_index(fields[0], line_no, "index")?, parse_index(fields[1], line_no, "index")?));
    }
    Ok(pairs)
}

pub fn write_scores<T: Scalar>(
    pairs: &[(usize, usize)],
    scores: &[T],
    mut sink: impl Write,
) -> Result<(), FormatError> {
    for (&(i, j), s) in pairs.iter().zip(scores) {
        writeln!(sink, "{i}\t{j}\t{s}")?;
    }
    Ok(())
}

pub fn read_scores(source: impl Read) -> Result<Vec<(usize, usize, f64)>, FormatError> {
    let mut out = Vec::new();
    for (idx, raw) in BufReader::new(source).lines().enumerate() {
        let line_no = idx + 1;
        let raw = raw?;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(malformed(line_no, format!("expected 3 fields, found {}", fields.len())));
        }
        let score: f64 =
            fields[2].parse().map_err(|_| malformed(line_no, format!("invalid score `{}`", fields[2])))?;
        out.push((parse_index(fields[0], line_no, "index")?, parse_index(fields[1], line_no, "index")?, score));
    }
    Ok(out)
}

/// Comma-separated dense matrix, one row per line.
pub fn write_matrix_csv<T: Scalar>(m: &Matrix<T>, mut sink: impl Write) -> Result<(), FormatError> {
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|x| x.to_string()).collect();
        writeln!(sink, "{}", row.join(","))?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointDoc {
    format_version: u32,
    n: usize,
    d: usize,
    #[serde(rename = "K")]
    k: usize,
    m: usize,
    #[serde(rename = "U")]
    u: Vec<f64>,
    #[serde(rename = "V")]
    v: Vec<f64>,
    #[serde(rename = "C")]
    c: Vec<f64>,
    beta: Vec<f64>,
    z: Vec<usize>,
    bias: f64,
    objective_per_sweep: Vec<f64>,
    #[serde(default)]
    eta_per_update: Vec<f64>,
    #[serde(default)]
    reassignment_counts: Vec<usize>,
    #[serde(default)]
    warnings: Vec<FitWarning>,
}

fn to_f64s<T: Scalar>(xs: &[T], what: &str) -> Result<Vec<f64>, FormatError> {
    xs.iter()
        .map(|x| {
            let v = x.to_f64_lossy();
            if v.is_finite() {
                Ok(v)
            } else {
                Err(FormatError::Document(format!("{what} contains a non-finite value")))
            }
        })
        .collect()
}

fn from_f64s<T: Scalar>(xs: &[f64]) -> Vec<T> {
    xs.iter().map(|&x| T::lit(x)).collect()
}

/// Serializes a state and its trace as a JSON checkpoint document.
pub fn checkpoint_to_string<T: Scalar>(
    state: &LatentState<T>,
    trace: &FitTrace<T>,
) -> Result<String, FormatError> {
    let doc = CheckpointDoc {
        format_version: FORMAT_VERSION,
        n: state.n(),
        d: state.d(),
        k: state.k(),
        m: state.m(),
        u: to_f64s(state.u.as_slice(), "U")?,
        v: to_f64s(state.v.as_slice(), "V")?,
        c: to_f64s(state.c.as_slice(), "C")?,
        beta: to_f64s(&state.beta, "beta")?,
        z: state.z.clone(),
        bias: to_f64s(&[state.bias], "bias")?[0],
        objective_per_sweep: to_f64s(&trace.objective_per_sweep, "objective_per_sweep")?,
        eta_per_update: to_f64s(&trace.eta_per_update, "eta_per_update")?,
        reassignment_counts: trace.reassignment_counts.clone(),
        warnings: trace.warnings.clone(),
    };
    serde_json::to_string(&doc).map_err(|e| FormatError::Document(e.to_string()))
}

/// Parses a checkpoint document, checking its version and dimensions.
pub fn checkpoint_from_str<T: Scalar>(text: &str) -> Result<(LatentState<T>, FitTrace<T>), FormatError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| FormatError::Document(e.to_string()))?;
    match value.get("format_version") {
        Some(v) if v.as_u64() == Some(FORMAT_VERSION as u64) => {}
        Some(v) => return Err(FormatError::Version { found: v.to_string() }),
        None => return Err(FormatError::Version { found: "missing".into() }),
    }
    let doc: CheckpointDoc = serde_json::from_value(value).map_err(|e| FormatError::Document(e.to_string()))?;
    let dim = |what: &str, got: usize, want: usize| {
        if got == want {
            Ok(())
        } else {
            Err(FormatError::Dimension(format!("{what} has length {got}, expected {want}")))
        }
    };
    dim("U", doc.u.len(), doc.n * doc.d)?;
    dim("V", doc.v.len(), doc.n * doc.d)?;
    dim("C", doc.c.len(), doc.k * doc.k)?;
    dim("beta", doc.beta.len(), doc.m)?;
    dim("z", doc.z.len(), doc.n)?;
    if let Some(&bad) = doc.z.iter().find(|&&l| l >= doc.k) {
        return Err(FormatError::Dimension(format!("label {bad} outside [0, {})", doc.k)));
    }
    let state = LatentState {
        u: Matrix::from_row_major(doc.n, doc.d, from_f64s(&doc.u)).expect("checked"),
        v: Matrix::from_row_major(doc.n, doc.d, from_f64s(&doc.v)).expect("checked"),
        c: Matrix::from_row_major(doc.k, doc.k, from_f64s(&doc.c)).expect("checked"),
        z: doc.z,
        beta: from_f64s(&doc.beta),
        bias: T::lit(doc.bias),
    };
    let trace = FitTrace {
        objective_per_sweep: from_f64s(&doc.objective_per_sweep),
        eta_per_update: from_f64s(&doc.eta_per_update),
        reassignment_counts: doc.reassignment_counts,
        warnings: doc.warnings,
    };
    Ok((state, trace))
}

pub fn save_checkpoint<T: Scalar>(
    state: &LatentState<T>,
    trace: &FitTrace<T>,
    path: impl AsRef<Path>,
) -> Result<(), FormatError> {
    let text = checkpoint_to_string(state, trace)?;
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(text.as_bytes())?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<(LatentState<T>, FitTrace<T>), FormatError> {
    let text = std::fs::read_to_string(path)?;
    checkpoint_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_plain_edge_list() {
        let data = parse_edge_list("0\t1\t1\n1\t0\t0\n".as_bytes()).unwrap();
        assert_eq!(data.n(), 2);
        assert_eq!(data.len(), 2);
        assert!(data.directed());
    }

    #[test]
    fn header_overrides_object_count() {
        let data = parse_edge_list("#n=5\n0\t1\t1\n".as_bytes()).unwrap();
        assert_eq!(data.n(), 5);
        assert_eq!(data.len(), 1);
    }

    #[test]
    fn non_binary_value_reports_line() {
        let err = parse_edge_list("0\t1\t2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, FormatError::Data { line: 1, source: DataError::NonBinaryValue { value: 2, .. } }));
    }

    #[test]
    fn malformed_and_duplicate_lines() {
        let err = parse_edge_list("# c\n0\t1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, FormatError::Malformed { line: 2, .. }));
        let err = parse_edge_list("0\t1\t1\n0\tx\t1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, FormatError::Malformed { line: 2, .. }));
        let err = parse_edge_list("0\t1\t1\n2\t2\t0\n0\t1\t0\n".as_bytes()).unwrap_err();
        assert!(matches!(err, FormatError::Data { line: 3, source: DataError::DuplicatePair { .. } }));
    }

    #[test]
    fn undirected_header_mirrors_entries() {
        let data = parse_edge_list("#undirected\n0\t1\t1\n2\t2\t0\n".as_bytes()).unwrap();
        assert!(!data.directed());
        assert_eq!(data.len(), 3);
        assert_eq!(data.get(1, 0), Some(true));
        let mut out = Vec::new();
        write_edge_list(&data, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "#n=3\n#undirected\n0\t1\t1\n2\t2\t0\n");
        let err = parse_edge_list("#undirected\n0\t1\t1\n1\t0\t1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, FormatError::Data { source: DataError::DuplicatePair { .. }, .. }));
    }

    #[test]
    fn canonical_write_sorts_entries() {
        let data = parse_edge_list("2\t0\t1\n0\t2\t0\n0\t1\t1\n".as_bytes()).unwrap();
        let mut out = Vec::new();
        write_edge_list(&data, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "#n=3\n0\t1\t1\n0\t2\t0\n2\t0\t1\n");
    }

    #[test]
    fn side_info_and_scores() {
        let side = read_side_info("0\t1\t0.5,-1\n1\t0\t2,3\n".as_bytes()).unwrap();
        assert_eq!(side.dim(), 2);
        assert_eq!(side.get(1, 0), &[2.0, 3.0]);
        assert!(read_side_info("0\t1\t0.5\n1\t0\t2,3\n".as_bytes()).is_err());
        let mut out = Vec::new();
        write_scores(&[(0, 1), (2, 0)], &[0.1f64, 1.0 / 3.0], &mut out).unwrap();
        let back = read_scores(out.as_slice()).unwrap();
        assert_eq!(back, vec![(0, 1, 0.1), (2, 0, 1.0 / 3.0)]);
    }

    #[test]
    fn checkpoint_rejects_tampering() {
        let mut state = LatentState::<f64>::zeros(3, 2, 2, 1);
        state.z = vec![0, 1, 1];
        state.u[(1, 1)] = 0.1 + 0.2;
        let trace = FitTrace { objective_per_sweep: vec![-1.5, -1.25], ..Default::default() };
        let text = checkpoint_to_string(&state, &trace).unwrap();
        let (s2, t2) = checkpoint_from_str::<f64>(&text).unwrap();
        assert_eq!(s2, state);
        assert_eq!(t2, trace);

        let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        doc["z"] = serde_json::json!([0, 1]);
        assert!(matches!(checkpoint_from_str::<f64>(&doc.to_string()), Err(FormatError::Dimension(_))));

        let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        doc.as_object_mut().unwrap().remove("format_version");
        assert!(matches!(checkpoint_from_str::<f64>(&doc.to_string()), Err(FormatError::Version { .. })));

        let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        doc["format_version"] = serde_json::json!(99);
        assert!(matches!(checkpoint_from_str::<f64>(&doc.to_string()), Err(FormatError::Version { .. })));

        let mut nan_state = state.clone();
        nan_state.bias = f64::NAN;
        assert!(checkpoint_to_string(&nan_state, &trace).is_err());
    }
}
