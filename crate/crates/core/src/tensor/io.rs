//! Plain-text tensor format:
//!
//! ```text
//! # comment
//! dims 2 2
//! 0 0 3
//! 1 0 3
//! missing 0 1
//! ```

use std::fmt::Write as _;
use std::path::Path;

use super::SparseCountTensor;
use crate::error::{Error, Result};

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_usizes<'a>(line: usize, fields: impl Iterator<Item = &'a str>) -> Result<Vec<usize>> {
    fields
        .map(|f| f.parse::<usize>().map_err(|_| parse_err(line, format!("`{f}` is not a nonnegative integer"))))
        .collect()
}

pub fn parse_tensor(text: &str) -> Result<SparseCountTensor> {
    let mut tensor: Option<SparseCountTensor> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut fields = content.split_whitespace();
        let head = fields.next().expect("non-empty line");
        let Some(t) = tensor.as_mut() else {
            if head != "dims" {
                return Err(Error::DimsLineMissing);
            }
            let dims = parse_usizes(line, fields)?;
            if dims.iter().any(|&d| d == 0) {
                return Err(parse_err(line, "dimensions must be positive"));
            }
            tensor = Some(SparseCountTensor::new(dims));
            continue;
        };
        let order = t.order();
        if head == "dims" {
            return Err(parse_err(line, "second `dims` line"));
        }
        if head == "missing" {
            let idx = parse_usizes(line, fields)?;
            if idx.len() != order {
                return Err(parse_err(line, format!("expected {order} indices, got {}", idx.len())));
            }
            if t.is_missing(&idx) || t.get(&idx) > 0 {
                return Err(Error::DuplicateEntry { line, index: idx });
            }
            t.set_missing(&idx).map_err(|e| parse_err(line, e.to_string()))?;
            continue;
        }
        let all: Vec<&str> = std::iter::once(head).chain(fields).collect();
        if all.len() != order + 1 {
            return Err(parse_err(
                line,
                format!("expected {order} indices and a count, got {} fields", all.len()),
            ));
        }
        let idx = parse_usizes(line, all[..order].iter().copied())?;
        let count: u64 = all[order]
            .parse()
            .map_err(|_| parse_err(line, format!("`{}` is not a count", all[order])))?;
        if count == 0 {
            return Err(parse_err(line, "counts must be positive"));
        }
        if t.get(&idx) > 0 || t.is_missing(&idx) {
            return Err(Error::DuplicateEntry { line, index: idx });
        }
        t.set(&idx, count).map_err(|e| parse_err(line, e.to_string()))?;
    }
    tensor.ok_or(Error::DimsLineMissing)
}

pub fn format_tensor(t: &SparseCountTensor) -> String {
    let mut out = String::new();
    let join = |idx: &[usize]| idx.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ");
    let _ = writeln!(out, "dims {}", join(t.dims()));
    for (idx, v) in t.iter() {
        if idx.is_empty() {
            let _ = writeln!(out, "{v}");
        } else {
            let _ = writeln!(out, "{} {v}", join(idx));
        }
    }
    for idx in t.mask() {
        let _ = writeln!(out, "missing {}", join(idx));
    }
    out
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<SparseCountTensor> {
    parse_tensor(&std::fs::read_to_string(path)?)
}

pub fn write_tensor(t: &SparseCountTensor, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, format_tensor(t))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_masked_example() {
        let t = parse_tensor("dims 2 2\n0 0 3\n1 0 3\n1 1 3\nmissing 0 1").unwrap();
        assert_eq!(t.dims(), &[2, 2]);
        assert_eq!(t.total(), 9);
        assert!(t.is_missing(&[0, 1]));
        assert_eq!(t.mask().len(), 1);
    }

    #[test]
    fn empty_body_is_zero_tensor() {
        let t = parse_tensor("# nothing here\ndims 3 4\n").unwrap();
        assert_eq!(t.nnz(), 0);
        assert_eq!(t.dims(), &[3, 4]);
    }

    #[test]
    fn round_trip_file() {
        let x1 = SparseCountTensor::from_matrix(&[[2u64, 1, 1, 0], [0, 0, 1, 2], [0, 0, 1, 1]]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x1.tsv");
        write_tensor(&x1, &path).unwrap();
        assert_eq!(read_tensor(&path).unwrap(), x1);
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert!(matches!(parse_tensor("0 0 1"), Err(Error::DimsLineMissing)));
        assert!(matches!(parse_tensor(""), Err(Error::DimsLineMissing)));
        assert!(matches!(
            parse_tensor("dims 2 2\n0 0 1\n\n0 0 2"),
            Err(Error::DuplicateEntry { line: 4, .. })
        ));
        assert!(matches!(parse_tensor("dims 2 2\n0 x 1"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_tensor("dims 2 2\n0 2 1"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_tensor("dims 2 2\n0 1 0"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(
            parse_tensor("dims 2 2\n0 1 4\nmissing 0 1"),
            Err(Error::DuplicateEntry { line: 3, .. })
        ));
    }
}
