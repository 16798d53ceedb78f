//! Delimited text formats: numeric matrices, saved embeddings, label files
//! and edge lists.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::structure::{parse_edge_list_checked, DataMatrix};

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses delimited numeric rows. Blank lines are skipped, and a first line
/// with no numeric cell at all is taken as a header.
pub fn parse_csv_matrix(text: &str, delimiter: char, name: &str) -> Result<DataMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    let mut seen_first = false;
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(delimiter).map(str::trim).collect();
        if !seen_first {
            seen_first = true;
            if cells.iter().all(|c| c.parse::<f64>().is_err()) {
                continue;
            }
        }
        let mut row = Vec::with_capacity(cells.len());
        for (col, cell) in cells.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                Error::format(
                    name,
                    format!("line {lineno}"),
                    format!("column {}: not a number: {cell:?}", col + 1),
                )
            })?;
            row.push(v);
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::format(
                    name,
                    format!("line {lineno}"),
                    format!("ragged row: {} columns, expected {w}", row.len()),
                ))
            }
            _ => {}
        }
        rows.push(row);
    }
    if rows.len() < 2 {
        return Err(Error::invalid(format!(
            "{name}: need at least 2 data rows, found {}",
            rows.len()
        )));
    }
    DataMatrix::from_rows(&rows)
}

pub fn load_csv_matrix(path: &Path, delimiter: char) -> Result<DataMatrix> {
    parse_csv_matrix(&read_text(path)?, delimiter, &path.display().to_string())
}

/// CSV text with header `id,z0,...[,label]`. Floats use the shortest
/// representation that parses back to the same value.
pub fn embedding_csv(z: ArrayView2<'_, f64>, labels: Option<&[usize]>) -> Result<String> {
    if let Some(l) = labels {
        if l.len() != z.nrows() {
            return Err(Error::invalid(format!("{} labels for {} rows", l.len(), z.nrows())));
        }
    }
    let mut out = String::from("id");
    for c in 0..z.ncols() {
        write!(out, ",z{c}").unwrap();
    }
    if labels.is_some() {
        out.push_str(",label");
    }
    out.push('\n');
    for (i, row) in z.rows().into_iter().enumerate() {
        write!(out, "{i}").unwrap();
        for v in row {
            write!(out, ",{v}").unwrap();
        }
        if let Some(l) = labels {
            write!(out, ",{}", l[i]).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn save_embedding(z: ArrayView2<'_, f64>, labels: Option<&[usize]>, path: &Path) -> Result<()> {
    write_text(path, &embedding_csv(z, labels)?)
}

/// Reads a file written by [`save_embedding`].
pub fn load_embedding(path: &Path) -> Result<(Array2<f64>, Option<Vec<usize>>)> {
    let text = read_text(path)?;
    let name = path.display().to_string();
    let header = text.lines().next().unwrap_or("");
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"id") || cols.len() < 2 {
        return Err(Error::format(name, "line 1", "expected header starting with id,z0"));
    }
    let has_label = cols.last() == Some(&"label");
    let m = parse_csv_matrix(&text, ',', &name)?.into_values();
    let dim = m.ncols() - 1 - usize::from(has_label);
    let z = m.slice(ndarray::s![.., 1..1 + dim]).to_owned();
    let labels = if has_label {
        let col = m.column(m.ncols() - 1);
        let mut out = Vec::with_capacity(col.len());
        for (i, &v) in col.iter().enumerate() {
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::format(
                    &name,
                    format!("line {}", i + 2),
                    format!("label {v} is not a class index"),
                ));
            }
            out.push(v as usize);
        }
        Some(out)
    } else {
        None
    };
    Ok((z, labels))
}

/// Two whitespace-separated columns `node_id label`, both nonnegative
/// integers; every node in `0..n` must appear exactly once.
pub fn parse_labels(text: &str, name: &str, n: usize) -> Result<Vec<usize>> {
    let mut labels = vec![None; n];
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = |msg: String| Error::format(name, format!("line {lineno}"), msg);
        if fields.len() != 2 {
            return Err(bad(format!("expected `node_id label`, got {} fields", fields.len())));
        }
        let node: usize = fields[0]
            .parse()
            .map_err(|_| bad(format!("bad node id {:?}", fields[0])))?;
        let label: usize = fields[1]
            .parse()
            .map_err(|_| bad(format!("bad label {:?}", fields[1])))?;
        if node >= n {
            return Err(bad(format!("node {node} out of range for {n} nodes")));
        }
        if labels[node].replace(label).is_some() {
            return Err(bad(format!("node {node} labelled twice")));
        }
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| Error::format(name, "end of file", format!("node {i} has no label"))))
        .collect()
}

pub fn load_labels(path: &Path, n: usize) -> Result<Vec<usize>> {
    parse_labels(&read_text(path)?, &path.display().to_string(), n)
}

pub fn load_edge_list(path: &Path, n: usize) -> Result<Vec<(usize, usize)>> {
    parse_edge_list_checked(&read_text(path)?, &path.display().to_string(), n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn parse_basic() {
        let m = parse_csv_matrix("1,2\n3,4", ',', "t").unwrap();
        assert_eq!(m.values(), array![[1.0, 2.0], [3.0, 4.0]]);
        let m = parse_csv_matrix("a;b\n\n1e-3;2\n-3.5E2;4\n", ';', "t").unwrap();
        assert_eq!(m.values(), array![[1e-3, 2.0], [-350.0, 4.0]]);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(parse_csv_matrix("", ',', "t"), Err(Error::InvalidArgument(_))));
        let e = parse_csv_matrix("1,2\n3", ',', "t").unwrap_err().to_string();
        assert!(e.contains("line 2") && e.contains("ragged"), "{e}");
        let e = parse_csv_matrix("1,2\n3,x\n", ',', "t").unwrap_err().to_string();
        assert!(e.contains("line 2") && e.contains("\"x\""), "{e}");
    }

    #[test]
    fn embedding_text() {
        let s = embedding_csv(array![[0.5, -1.0]].view(), None).unwrap();
        assert_eq!(s, "id,z0,z1\n0,0.5,-1\n");
        let s = embedding_csv(array![[0.1], [2.0]].view(), Some(&[3, 0])).unwrap();
        assert_eq!(s, "id,z0,label\n0,0.1,3\n1,2,0\n");
    }

    #[test]
    fn label_file() {
        assert_eq!(parse_labels("1 0\n0 2\n# c\n2 1\n", "t", 3).unwrap(), vec![2, 0, 1]);
        assert!(parse_labels("0 1\n0 1\n", "t", 1)
            .unwrap_err()
            .to_string()
            .contains("line 2"));
        assert!(parse_labels("0 1\n", "t", 2)
            .unwrap_err()
            .to_string()
            .contains("node 1"));
        assert!(parse_labels("5 1\n", "t", 2).is_err());
    }
}
