//! Embedding export: TSV with one row per target node (id then d floats with
//! 9 mantissa digits, enough to reload within 1e-9) under a metadata header.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{HecoError, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddingHeader {
    pub variant: String,
    pub seed: u64,
    pub dim: usize,
}

pub fn export_embeddings(path: &Path, z: &Matrix, variant: &str, seed: u64) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "# variant={variant} seed={seed} d={}", z.cols()).unwrap();
    for r in 0..z.rows() {
        write!(out, "{r}").unwrap();
        for v in z.row(r) {
            write!(out, "\t{v:.9e}").unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| HecoError::io(path.display().to_string(), e))
}

pub fn load_embeddings(path: &Path) -> Result<(Matrix, EmbeddingHeader)> {
    let text = fs::read_to_string(path).map_err(|e| HecoError::io(path.display().to_string(), e))?;
    let mut lines = text.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| HecoError::Data(format!("{}: empty embeddings file", path.display())))?;
    let header = parse_header(path, header_line)?;
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let mut parts = line.split('\t');
        let id: usize = parts
            .next()
            .unwrap_or_default()
            .parse()
            .map_err(|_| parse_err(path, lineno + 2, "bad row id"))?;
        if id != lineno {
            return Err(parse_err(path, lineno + 2, "row ids must be dense"));
        }
        let row: Vec<f64> = parts
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| parse_err(path, lineno + 2, format!("bad float '{v}'")))
            })
            .collect::<Result<_>>()?;
        if row.len() != header.dim {
            return Err(parse_err(
                path,
                lineno + 2,
                format!("expected {} values, got {}", header.dim, row.len()),
            ));
        }
        rows.push(row);
    }
    Ok((Matrix::from_rows(&rows)?, header))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> HecoError {
    HecoError::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_header(path: &Path, line: &str) -> Result<EmbeddingHeader> {
    let body = line
        .strip_prefix("# ")
        .ok_or_else(|| parse_err(path, 1, "missing metadata header"))?;
    let mut variant = None;
    let mut seed = None;
    let mut dim = None;
    for field in body.split_whitespace() {
        match field.split_once('=') {
            Some(("variant", v)) => variant = Some(v.to_string()),
            Some(("seed", v)) => seed = v.parse().ok(),
            Some(("d", v)) => dim = v.parse().ok(),
            _ => {}
        }
    }
    match (variant, seed, dim) {
        (Some(variant), Some(seed), Some(dim)) => Ok(EmbeddingHeader { variant, seed, dim }),
        _ => Err(parse_err(path, 1, "header needs variant=, seed=, d= fields")),
    }
}

/// 2-D coordinates export for plotting (same TSV layout, d = 2).
pub fn export_coords(path: &Path, coords: &Matrix, variant: &str, seed: u64) -> Result<()> {
    export_embeddings(path, coords, variant, seed)
}
