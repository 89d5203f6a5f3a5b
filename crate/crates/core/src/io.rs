//! File formats: adjacency ingestion and JSON/CSV report emission.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Serialize, Serializer};

use crate::error::{DcmmError, Result};
use crate::model::AdjacencyMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdjacencyFormat {
    /// Lines `i,j` with zero-based node ids.
    EdgeListCsv,
    /// `n` lines of `n` comma-separated 0/1 values.
    DenseCsv,
}

impl std::str::FromStr for AdjacencyFormat {
    type Err = DcmmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edgelist" => Ok(AdjacencyFormat::EdgeListCsv),
            "dense" => Ok(AdjacencyFormat::DenseCsv),
            other => Err(DcmmError::Config(format!("unknown adjacency format '{other}'"))),
        }
    }
}

pub(crate) fn serialize_rows<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
    rows.serialize(s)
}

fn parse_index(tok: &str, line: usize) -> Result<usize> {
    tok.trim().parse::<usize>().map_err(|_| DcmmError::Parse {
        line,
        msg: format!("'{}' is not a node index", tok.trim()),
    })
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Parses an edge list. `n` defaults to one past the largest index.
pub fn parse_edge_list(text: &str, n: Option<usize>, self_loop: bool) -> Result<AdjacencyMatrix> {
    let mut edges = Vec::new();
    for (line, l) in content_lines(text) {
        let toks: Vec<&str> = l.split(',').collect();
        if toks.len() != 2 {
            return Err(DcmmError::Parse {
                line,
                msg: "expected 'i,j'".into(),
            });
        }
        let (i, j) = (parse_index(toks[0], line)?, parse_index(toks[1], line)?);
        if i == j && !self_loop {
            return Err(DcmmError::Validation(format!("self-loop at node {i} (line {line}) not allowed")));
        }
        edges.push((line, i, j));
    }
    let max_id = edges.iter().map(|&(_, i, j)| i.max(j) + 1).max().unwrap_or(0);
    let n = n.unwrap_or(max_id);
    let mut x = DMatrix::zeros(n, n);
    for (line, i, j) in edges {
        if i >= n || j >= n {
            return Err(DcmmError::Validation(format!("node index out of range on line {line}")));
        }
        x[(i, j)] = 1.0;
        x[(j, i)] = 1.0;
    }
    AdjacencyMatrix::new(x, self_loop)
}

pub fn parse_dense(text: &str, self_loop: bool) -> Result<AdjacencyMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, l) in content_lines(text) {
        let row = l
            .split(',')
            .map(|t| match t.trim() {
                "0" => Ok(0.0),
                "1" => Ok(1.0),
                other => Err(DcmmError::Parse {
                    line,
                    msg: format!("'{other}' is not 0 or 1"),
                }),
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(DcmmError::Parse {
                    line,
                    msg: format!("expected {} columns, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    let n = rows.len();
    if rows.first().is_some_and(|r| r.len() != n) {
        return Err(DcmmError::Shape(format!("dense adjacency has {n} rows but {} columns", rows[0].len())));
    }
    AdjacencyMatrix::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]), self_loop)
}

pub fn load_adjacency(path: &Path, format: AdjacencyFormat, self_loop: bool) -> Result<AdjacencyMatrix> {
    let file = fs::File::open(path)?;
    let mut text = String::new();
    for line in BufReader::new(file).lines() {
        text.push_str(&line?);
        text.push('\n');
    }
    match format {
        AdjacencyFormat::EdgeListCsv => parse_edge_list(&text, None, self_loop),
        AdjacencyFormat::DenseCsv => parse_dense(&text, self_loop),
    }
}

pub fn write_adjacency<W: Write>(adj: &AdjacencyMatrix, format: AdjacencyFormat, mut out: W) -> Result<()> {
    let n = adj.n();
    match format {
        AdjacencyFormat::DenseCsv => {
            for i in 0..n {
                let row: Vec<&str> = (0..n).map(|j| if adj.get(i, j) { "1" } else { "0" }).collect();
                writeln!(out, "{}", row.join(","))?;
            }
        }
        AdjacencyFormat::EdgeListCsv => {
            for i in 0..n {
                for j in i..n {
                    if adj.get(i, j) {
                        writeln!(out, "{i},{j}")?;
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn save_adjacency(path: &Path, adj: &AdjacencyMatrix, format: AdjacencyFormat) -> Result<()> {
    let mut f = fs::File::create(path)?;
    write_adjacency(adj, format, &mut f)
}

/// Writes any serializable report as pretty JSON.
pub fn save_report<T: Serialize>(path: &Path, report: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, report)?;
    writeln!(f)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_parsed_edge_list() {
        let adj = parse_edge_list("0,1\n1,2", None, false).unwrap();
        assert_eq!(adj.n(), 3);
        let on = [(0, 1), (1, 0), (1, 2), (2, 1)];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(adj.get(i, j), on.contains(&(i, j)));
            }
        }
    }

    #[test]
    fn dense_asymmetry_rejected() {
        let err = parse_dense("0,1\n0,0", false).unwrap_err();
        assert!(err.to_string().contains("asymmetric"));
    }

    #[test]
    fn errors_carry_context() {
        match parse_edge_list("0,1\n1,x\n", None, false).unwrap_err() {
            DcmmError::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
        assert!(parse_edge_list("0,5", Some(3), false).unwrap_err().to_string().contains("out of range"));
        assert!(parse_edge_list("1,1", None, false).unwrap_err().to_string().contains("self-loop"));
        assert!(parse_edge_list("1,1", None, true).unwrap().get(1, 1));
        assert!(parse_dense("1,0\n0,0", false).is_err());
        assert!(parse_dense("0,1\n1,0,0", false).is_err());
    }
}
