//! Field dumps and CSV export.
//!
//! A dump is one ASCII header line
//! `PLAPFIELD v1; n=<n>; m=<m>; sizes=<s1,...,sn>; extents=<lo1:hi1,...>`
//! terminated by `\n`, followed by the values in storage order (last axis
//! fastest) as little-endian IEEE-754 binary64.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};

const MAGIC: &str = "PLAPFIELD v1";

pub fn header_line(grid: &Grid) -> String {
    let sizes: Vec<String> = grid.sizes().iter().map(|s| s.to_string()).collect();
    let extents: Vec<String> = grid.extents().iter().map(|(lo, hi)| format!("{lo}:{hi}")).collect();
    format!("{MAGIC}; n={}; m={}; sizes={}; extents={}", grid.n(), grid.m(), sizes.join(","), extents.join(","))
}

pub fn parse_header(line: &str) -> Result<Grid> {
    let bad = |msg: &str| Error::Format(format!("field dump header: {msg}"));
    let mut parts = line.trim_end().split(';').map(str::trim);
    if parts.next() != Some(MAGIC) {
        return Err(bad("missing 'PLAPFIELD v1' tag"));
    }
    let (mut n, mut m, mut sizes, mut extents) = (None, None, None, None);
    for part in parts {
        let (key, value) = part.split_once('=').ok_or_else(|| bad(&format!("malformed entry '{part}'")))?;
        match key.trim() {
            "n" => n = Some(value.parse::<usize>().map_err(|_| bad("bad n"))?),
            "m" => m = Some(value.parse::<usize>().map_err(|_| bad("bad m"))?),
            "sizes" => {
                sizes = Some(
                    value.split(',').map(|s| s.trim().parse::<usize>()).collect::<std::result::Result<Vec<_>, _>>().map_err(|_| bad("bad sizes"))?,
                )
            }
            "extents" => {
                let mut ext = Vec::new();
                for e in value.split(',') {
                    let (lo, hi) = e.split_once(':').ok_or_else(|| bad("extent needs lo:hi"))?;
                    let lo: f64 = lo.trim().parse().map_err(|_| bad("bad extent"))?;
                    let hi: f64 = hi.trim().parse().map_err(|_| bad("bad extent"))?;
                    ext.push((lo, hi));
                }
                extents = Some(ext)
            }
            other => return Err(bad(&format!("unknown key '{other}'"))),
        }
    }
    let (n, m, sizes, extents) = match (n, m, sizes, extents) {
        (Some(n), Some(m), Some(s), Some(e)) => (n, m, s, e),
        _ => return Err(bad("n, m, sizes and extents are all required")),
    };
    if sizes.len() != n || extents.len() != n || m > n {
        return Err(bad("n, m, sizes and extents disagree"));
    }
    if m == 0 && n == 1 {
        return Grid::fiber(extents[0].0, extents[0].1, sizes[0]);
    }
    Grid::new(m, n - m, &sizes, &extents)
}

pub fn write_field(field: &ScalarField, writer: &mut impl Write) -> Result<()> {
    writeln!(writer, "{}", header_line(field.grid()))?;
    let mut bytes = Vec::with_capacity(field.values().len() * 8);
    for v in field.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    writer.write_all(&bytes)?;
    Ok(())
}

/// Reads a dump; NaN entries (masked-out geometry values) are accepted.
pub fn read_field(reader: &mut impl BufRead) -> Result<ScalarField> {
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let grid = parse_header(&line)?;
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() != grid.len() * 8 {
        return Err(Error::Format(format!("field dump holds {} bytes of data, expected {}", bytes.len(), grid.len() * 8)));
    }
    let values: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    if let Some(index) = values.iter().position(|v| v.is_infinite()) {
        return Err(Error::NonFinite { index });
    }
    Ok(ScalarField::from_values_unchecked(&grid, values))
}

pub fn save_field(field: &ScalarField, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_field(field, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_field(path: &Path) -> Result<ScalarField> {
    read_field(&mut BufReader::new(File::open(path)?))
}

/// CSV with columns `x1..xm, y1..y(n-m), value`, one row per point in
/// storage order, numbers in `{:.12e}`.
pub fn write_field_csv(field: &ScalarField, writer: &mut impl Write) -> Result<()> {
    let g = field.grid();
    let mut cols: Vec<String> = (1..=g.m()).map(|k| format!("x{k}")).collect();
    cols.extend((1..=g.n_minus_m()).map(|k| format!("y{k}")));
    cols.push("value".into());
    writeln!(writer, "{}", cols.join(","))?;
    let mut point = vec![0.0; g.n()];
    for i in 0..g.len() {
        g.point_into(i, &mut point);
        let mut row: Vec<String> = point.iter().map(|v| format!("{v:.12e}")).collect();
        row.push(format!("{:.12e}", field.get(i)));
        writeln!(writer, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn save_field_csv(field: &ScalarField, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_field_csv(field, &mut w)?;
    w.flush()?;
    Ok(())
}
