//! Versioned CSV files for fields.
//!
//! ```text
//! # steinflow field v1
//! # dim=1 half_width=8 cells=2048
//! x,value
//! -7.99609375,1.2e-30
//! ```
//!
//! Two-dimensional files use the header `x,y,value`, row-major.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

pub const FIELD_CSV_VERSION: &str = "# steinflow field v1";

/// Writes a box-grid field. Values use the shortest round-trip representation.
pub fn write_field_csv<W: Write>(field: &Field, mut w: W) -> Result<()> {
    let g = field.grid();
    writeln!(w, "{FIELD_CSV_VERSION}")?;
    writeln!(
        w,
        "# dim={} half_width={} cells={}",
        g.dim(),
        g.half_width(),
        g.cells_per_axis()
    )?;
    if g.dim() == 1 {
        writeln!(w, "x,value")?;
    } else {
        writeln!(w, "x,y,value")?;
    }
    for (i, v) in field.values().iter().enumerate() {
        let p = g.point(i);
        if g.dim() == 1 {
            writeln!(w, "{:?},{v:?}", p[0])?;
        } else {
            writeln!(w, "{:?},{:?},{v:?}", p[0], p[1])?;
        }
    }
    Ok(())
}

pub fn save_field(field: &Field, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_field_csv(field, std::io::BufWriter::new(file))
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn header_value<'a>(parts: &'a [(&'a str, &'a str)], key: &str, line: usize) -> Result<&'a str> {
    parts
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| parse_err(line, format!("missing '{key}' in grid header")))
}

/// Reads a field written by [`write_field_csv`]. Errors name the 1-based line.
pub fn read_field_csv<R: BufRead>(reader: R) -> Result<Field> {
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((n, Ok(l))) => Ok((n, l)),
            Some((n, Err(e))) => Err(parse_err(n, e.to_string())),
            None => Err(parse_err(0, format!("unexpected end of file, expected {what}"))),
        }
    };
    let (n, version) = next("version line")?;
    if version.trim() != FIELD_CSV_VERSION {
        return Err(parse_err(n, format!("expected '{FIELD_CSV_VERSION}'")));
    }
    let (n, meta) = next("grid header")?;
    let body = meta
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| parse_err(n, "grid header must start with '#'"))?;
    let parts: Vec<(&str, &str)> = body
        .split_whitespace()
        .map(|kv| kv.split_once('=').ok_or_else(|| parse_err(n, format!("bad header entry '{kv}'"))))
        .collect::<Result<_>>()?;
    let num = |key: &str| -> Result<f64> {
        header_value(&parts, key, n)?
            .parse::<f64>()
            .map_err(|e| parse_err(n, format!("{key}: {e}")))
    };
    let dim = num("dim")? as usize;
    let half_width = num("half_width")?;
    let cells = num("cells")? as usize;
    let grid = Grid::new(dim, half_width, cells).map_err(|e| parse_err(n, e.to_string()))?;
    let (n, columns) = next("column header")?;
    let expected = if dim == 1 { "x,value" } else { "x,y,value" };
    if columns.trim() != expected {
        return Err(parse_err(n, format!("expected columns '{expected}'")));
    }
    let mut values = Vec::with_capacity(grid.len());
    for (n, line) in lines {
        let line = line.map_err(|e| parse_err(n, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != dim + 1 {
            return Err(parse_err(n, format!("expected {} columns, found {}", dim + 1, cols.len())));
        }
        let idx = values.len();
        if idx >= grid.len() {
            return Err(parse_err(n, format!("more than {} data rows", grid.len())));
        }
        let p = grid.point(idx);
        for a in 0..dim {
            let c: f64 = cols[a]
                .trim()
                .parse()
                .map_err(|e| parse_err(n, format!("coordinate '{}': {e}", cols[a])))?;
            if (c - p[a]).abs() > 1e-9 * (1.0 + p[a].abs()) {
                return Err(parse_err(n, format!("coordinate {c} does not match cell centre {}", p[a])));
            }
        }
        let v: f64 = cols[dim]
            .trim()
            .parse()
            .map_err(|e| parse_err(n, format!("value '{}': {e}", cols[dim])))?;
        if !v.is_finite() {
            return Err(parse_err(n, "non-finite value"));
        }
        values.push(v);
    }
    if values.len() != grid.len() {
        return Err(parse_err(0, format!("expected {} data rows, found {}", grid.len(), values.len())));
    }
    Field::new(grid, values)
}

pub fn load_field(path: &Path) -> Result<Field> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_field_csv(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::default_initial;

    fn roundtrip(f: &Field) -> Field {
        let mut buf = Vec::new();
        write_field_csv(f, &mut buf).unwrap();
        read_field_csv(buf.as_slice()).unwrap()
    }

    #[test]
    fn roundtrip_is_exact() {
        let f = default_initial(&Grid::new(1, 4.0, 64).unwrap());
        assert_eq!(roundtrip(&f), f);
        let g2 = Grid::new(2, 1.0, 8).unwrap();
        let f2 = Field::from_fn(&g2, |x| x[0] * 3.0 - x[1]);
        assert_eq!(roundtrip(&f2), f2);
    }

    #[test]
    fn malformed_line_is_named() {
        let f = default_initial(&Grid::new(1, 4.0, 8).unwrap());
        let mut buf = Vec::new();
        write_field_csv(&f, &mut buf).unwrap();
        let text: String = String::from_utf8(buf)
            .unwrap()
            .lines()
            .enumerate()
            .map(|(i, l)| if i == 4 { format!("{l}oops\n") } else { format!("{l}\n") })
            .collect();
        let err = read_field_csv(text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 5, .. }), "{err}");
    }

    #[test]
    fn wrong_version_and_truncation() {
        assert!(matches!(
            read_field_csv("# other\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
        let f = default_initial(&Grid::new(1, 4.0, 8).unwrap());
        let mut buf = Vec::new();
        write_field_csv(&f, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut: String = text.lines().take(6).map(|l| format!("{l}\n")).collect();
        assert!(read_field_csv(cut.as_bytes()).is_err());
    }
}
