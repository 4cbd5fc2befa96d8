//! On-disk formats: JSON with 17-significant-digit floats (lossless f64
//! round trips), the plain-text graph format, and the posterior CSV export.
//!
//! Graph files look like
//!
//! ```text
//! n=4 q=2
//! 1   3
//! 2   1
//! labels:
//! 1 2 2 1
//! ```
//!
//! — a header with the vertex and class counts, one `i<TAB>j` line per
//! directed edge (1-based, sorted), and an optional labels section. Parsing
//! is strict: self-loops, duplicates, and out-of-range indices are errors.

use crate::error::{Result, SbmError};
use crate::exact::PosteriorTable;
use crate::fit::FitResult;
use crate::graph::LabeledGraph;
use crate::params::SbmParams;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

// ---------------------------------------------------------------------------
// JSON with fixed float precision
// ---------------------------------------------------------------------------

/// Pretty JSON formatter that writes every f64 with 17 significant digits
/// (`{:.16e}`), enough to reproduce the bits exactly on read-back.
struct Fmt17<'a> {
    inner: serde_json::ser::PrettyFormatter<'a>,
}

impl Fmt17<'_> {
    fn new() -> Self {
        Fmt17 {
            inner: serde_json::ser::PrettyFormatter::new(),
        }
    }
}

impl serde_json::ser::Formatter for Fmt17<'_> {
    fn write_f64<W: ?Sized + std::io::Write>(
        &mut self,
        writer: &mut W,
        value: f64,
    ) -> std::io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn begin_array<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.inner.begin_array(w)
    }

    fn end_array<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.inner.end_array(w)
    }

    fn begin_array_value<W: ?Sized + std::io::Write>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> std::io::Result<()> {
        self.inner.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.inner.end_array_value(w)
    }

    fn begin_object<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.inner.begin_object(w)
    }

    fn end_object<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.inner.end_object(w)
    }

    fn begin_object_key<W: ?Sized + std::io::Write>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> std::io::Result<()> {
        self.inner.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + std::io::Write>(
        &mut self,
        w: &mut W,
    ) -> std::io::Result<()> {
        self.inner.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.inner.end_object_value(w)
    }
}

/// Serialize any value as pretty JSON with fixed 17-digit floats and a
/// trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Fmt17::new());
    value
        .serialize(&mut ser)
        .map_err(|e| SbmError::Parse(format!("serialization failed: {e}")))?;
    out.push(b'\n');
    String::from_utf8(out).map_err(|e| SbmError::Parse(format!("non-utf8 output: {e}")))
}

pub fn from_json_str<T: DeserializeOwned>(s: &str) -> Result<T> {
    serde_json::from_str(s).map_err(|e| SbmError::Parse(format!("invalid JSON: {e}")))
}

pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json_string(value)?)?;
    Ok(())
}

/// One float with 17 significant digits, for CSV cells and the like.
pub fn format_float(value: f64) -> String {
    format!("{value:.16e}")
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

pub fn params_to_json(params: &SbmParams) -> Result<String> {
    to_json_string(params)
}

pub fn params_from_json(s: &str) -> Result<SbmParams> {
    let p: SbmParams = from_json_str(s)?;
    p.validate()?;
    Ok(p)
}

pub fn read_params_file(path: &Path) -> Result<SbmParams> {
    params_from_json(&std::fs::read_to_string(path)?)
}

pub fn write_params_file(path: &Path, params: &SbmParams) -> Result<()> {
    std::fs::write(path, params_to_json(params)?)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Graph text format
// ---------------------------------------------------------------------------

pub fn graph_to_text(graph: &LabeledGraph, q: usize) -> String {
    let mut out = String::new();
    writeln!(out, "n={} q={}", graph.n(), q).unwrap();
    for (i, j) in graph.edges() {
        writeln!(out, "{}\t{}", i + 1, j + 1).unwrap();
    }
    if let Some(labels) = graph.labels() {
        out.push_str("labels:\n");
        let line: Vec<String> = labels.iter().map(|&c| (c + 1).to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn graph_from_text(text: &str) -> Result<(LabeledGraph, usize)> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| SbmError::Parse("empty graph file".into()))?;
    let mut n = None;
    let mut q = None;
    for tok in header.split_whitespace() {
        if let Some(v) = tok.strip_prefix("n=") {
            n = Some(v.parse::<usize>().map_err(|_| {
                SbmError::Parse(format!("bad vertex count in header: {tok:?}"))
            })?);
        } else if let Some(v) = tok.strip_prefix("q=") {
            q = Some(v.parse::<usize>().map_err(|_| {
                SbmError::Parse(format!("bad class count in header: {tok:?}"))
            })?);
        } else {
            return Err(SbmError::Parse(format!(
                "unexpected header token {tok:?}; expected \"n=<int> q=<int>\""
            )));
        }
    }
    let n = n.ok_or_else(|| SbmError::Parse("header is missing n=".into()))?;
    let q = q.ok_or_else(|| SbmError::Parse("header is missing q=".into()))?;
    let mut graph = LabeledGraph::empty(n);
    let mut labels: Option<Vec<usize>> = None;
    let mut in_tail = false;
    while let Some((lineno, line)) = lines.next() {
        let human = lineno + 1;
        if in_tail {
            if !line.trim().is_empty() {
                return Err(SbmError::Parse(format!(
                    "line {human}: content after the labels line"
                )));
            }
            continue;
        }
        if line == "labels:" {
            let (label_no, label_line) = lines.next().ok_or_else(|| {
                SbmError::Parse("labels: section without a label line".into())
            })?;
            let mut z = Vec::with_capacity(n);
            for tok in label_line.split_whitespace() {
                let v: usize = tok.parse().map_err(|_| {
                    SbmError::Parse(format!("line {}: bad label {tok:?}", label_no + 1))
                })?;
                if v < 1 || v > q {
                    return Err(SbmError::Parse(format!(
                        "line {}: label {v} outside 1..={q}",
                        label_no + 1
                    )));
                }
                z.push(v - 1);
            }
            if z.len() != n {
                return Err(SbmError::Parse(format!(
                    "expected {n} labels, found {}",
                    z.len()
                )));
            }
            labels = Some(z);
            in_tail = true;
            continue;
        }
        if line.trim().is_empty() {
            in_tail = true;
            continue;
        }
        let mut parts = line.split('\t');
        let (a, b) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err(SbmError::Parse(format!(
                    "line {human}: expected \"i<TAB>j\", got {line:?}"
                )))
            }
        };
        let i: usize = a
            .trim()
            .parse()
            .map_err(|_| SbmError::Parse(format!("line {human}: bad vertex {a:?}")))?;
        let j: usize = b
            .trim()
            .parse()
            .map_err(|_| SbmError::Parse(format!("line {human}: bad vertex {b:?}")))?;
        if i < 1 || i > n || j < 1 || j > n {
            return Err(SbmError::Parse(format!(
                "line {human}: edge ({i},{j}) outside 1..={n}"
            )));
        }
        if i == j {
            return Err(SbmError::Parse(format!("line {human}: self-loop on {i}")));
        }
        if graph.edge(i - 1, j - 1) {
            return Err(SbmError::Parse(format!(
                "line {human}: duplicate edge ({i},{j})"
            )));
        }
        graph.set_edge(i - 1, j - 1, true);
    }
    if let Some(z) = labels {
        graph.set_labels(Some(z))?;
    }
    Ok((graph, q))
}

pub fn read_graph_file(path: &Path) -> Result<(LabeledGraph, usize)> {
    graph_from_text(&std::fs::read_to_string(path)?)
}

pub fn write_graph_file(path: &Path, graph: &LabeledGraph, q: usize) -> Result<()> {
    std::fs::write(path, graph_to_text(graph, q))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Fit results
// ---------------------------------------------------------------------------

/// The serialized shape of a fit:
/// `{"alpha": [...], "pi": [[...]], "j_final": x, "trace": [...],
///   "restarts_used": k, "converged": bool}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitRecord {
    pub alpha: Vec<f64>,
    pub pi: Vec<Vec<f64>>,
    pub j_final: f64,
    pub trace: Vec<f64>,
    pub restarts_used: usize,
    pub converged: bool,
}

impl FitRecord {
    pub fn from_fit(fit: &FitResult) -> FitRecord {
        FitRecord {
            alpha: fit.params.alpha().to_vec(),
            pi: fit.params.pi().to_vec(),
            j_final: fit.objective(),
            trace: fit.objective_trace.clone(),
            restarts_used: fit.restarts_used,
            converged: fit.converged,
        }
    }

    pub fn params(&self) -> Result<SbmParams> {
        SbmParams::new(self.alpha.clone(), self.pi.clone())
    }
}

pub fn fit_to_json(fit: &FitResult) -> Result<String> {
    to_json_string(&FitRecord::from_fit(fit))
}

pub fn fit_record_from_json(s: &str) -> Result<FitRecord> {
    from_json_str(s)
}

// ---------------------------------------------------------------------------
// Posterior export
// ---------------------------------------------------------------------------

/// Label vector as a compact 1-based string: digits concatenated when the
/// class count fits one digit each, otherwise dash-separated.
pub fn label_code_string(z: &[usize], q: usize) -> String {
    if q <= 9 {
        z.iter().map(|&c| char::from(b'1' + c as u8)).collect()
    } else {
        z.iter()
            .map(|&c| (c + 1).to_string())
            .collect::<Vec<_>>()
            .join("-")
    }
}

/// CSV with one row per label vector in enumeration order:
/// `labels,prob` header, then the 1-based label string and the posterior
/// probability at 17 significant digits.
pub fn posterior_to_csv(table: &PosteriorTable) -> String {
    let mut out = String::from("labels,prob\n");
    let mut z = vec![0usize; table.n()];
    for code in 0..table.len() {
        table.decode_into(code, &mut z);
        writeln!(
            out,
            "{},{}",
            label_code_string(&z, table.q()),
            format_float(table.prob_code(code))
        )
        .unwrap();
    }
    out
}
