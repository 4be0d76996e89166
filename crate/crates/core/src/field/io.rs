//! Grid-stack file formats.
//!
//! Binary layout (all little endian):
//!
//! ```text
//! "GRDS" | version: u8 | nx: u32 | ny: u32 | m: u32 | x0 y0 dx dy: f64 | values: f64 * nx*ny*m
//! ```
//!
//! Replicates are concatenated, each row-major. CSV-long has the header
//! `replicate,row,col,value` (0-based indices) and may be preceded by a
//! `# grid nx=.. ny=.. x0=.. y0=.. dx=.. dy=..` comment line; without it the
//! grid is taken to cover the unit square.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use super::{FieldError, Grid, GridStack};

const MAGIC: &[u8; 4] = b"GRDS";
const VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 3 * 4 + 4 * 8;
pub const CSV_HEADER: &str = "replicate,row,col,value";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StackFormat {
    Binary,
    CsvLong,
}

impl FromStr for StackFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binary" => Ok(StackFormat::Binary),
            "csv-long" | "csv" => Ok(StackFormat::CsvLong),
            other => Err(format!("unknown stack format '{other}' (expected binary or csv-long)")),
        }
    }
}

pub fn load_grid_stack(path: impl AsRef<Path>, format: StackFormat) -> Result<GridStack, FieldError> {
    let file = File::open(path.as_ref())?;
    read_grid_stack(BufReader::new(file), format)
}

pub fn save_grid_stack(stack: &GridStack, path: impl AsRef<Path>, format: StackFormat) -> Result<(), FieldError> {
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    write_grid_stack(stack, &mut w, format)?;
    w.flush()?;
    Ok(())
}

pub fn read_grid_stack<R: Read>(mut reader: R, format: StackFormat) -> Result<GridStack, FieldError> {
    match format {
        StackFormat::Binary => {
            let mut bytes = Vec::new();
            reader.read_to_end(&mut bytes)?;
            decode_binary(&bytes)
        }
        StackFormat::CsvLong => {
            let mut text = String::new();
            reader.read_to_string(&mut text)?;
            decode_csv(&text)
        }
    }
}

pub fn write_grid_stack<W: Write>(stack: &GridStack, writer: &mut W, format: StackFormat) -> Result<(), FieldError> {
    match format {
        StackFormat::Binary => writer.write_all(&encode_binary(stack))?,
        StackFormat::CsvLong => encode_csv(stack, writer)?,
    }
    Ok(())
}

fn encode_binary(stack: &GridStack) -> Vec<u8> {
    let g = stack.grid();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * stack.values().len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for n in [g.nx, g.ny, stack.m()] {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for x in [g.x0, g.y0, g.dx, g.dy] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for v in stack.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode_binary(bytes: &[u8]) -> Result<GridStack, FieldError> {
    if bytes.len() < HEADER_LEN {
        return Err(FieldError::Malformed(format!("file too short for header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(FieldError::Malformed("bad magic bytes".into()));
    }
    if bytes[4] != VERSION {
        return Err(FieldError::Malformed(format!("unsupported version {}", bytes[4])));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let (nx, ny, m) = (u32_at(5), u32_at(9), u32_at(13));
    let grid = Grid::new(nx, ny, f64_at(17), f64_at(25), f64_at(33), f64_at(41))?;
    if m == 0 {
        return Err(FieldError::Malformed("replicate count is zero".into()));
    }
    let payload = &bytes[HEADER_LEN..];
    let expected = nx
        .checked_mul(ny)
        .and_then(|n| n.checked_mul(m))
        .ok_or_else(|| FieldError::Malformed("dimensions overflow".into()))?;
    if payload.len() != expected * 8 {
        return Err(FieldError::LengthMismatch { expected, found: payload.len() / 8 });
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    GridStack::new(grid, m, values)
}

fn encode_csv<W: Write>(stack: &GridStack, w: &mut W) -> Result<(), FieldError> {
    let g = stack.grid();
    writeln!(w, "# grid nx={} ny={} x0={} y0={} dx={} dy={}", g.nx, g.ny, g.x0, g.y0, g.dx, g.dy)?;
    writeln!(w, "{CSV_HEADER}")?;
    for (j, rep) in stack.replicates().enumerate() {
        for (i, v) in rep.iter().enumerate() {
            let (row, col) = g.row_col(i);
            if v.is_nan() {
                writeln!(w, "{j},{row},{col},NaN")?;
            } else {
                writeln!(w, "{j},{row},{col},{v}")?;
            }
        }
    }
    Ok(())
}

fn parse_grid_comment(line: &str) -> Result<Grid, FieldError> {
    let bad = |msg: &str| FieldError::Malformed(format!("grid comment: {msg}"));
    let mut nx = None;
    let mut ny = None;
    let mut geom = [None::<f64>; 4];
    for tok in line.trim_start_matches('#').split_whitespace().skip(1) {
        let (k, v) = tok.split_once('=').ok_or_else(|| bad(tok))?;
        match k {
            "nx" => nx = Some(v.parse::<usize>().map_err(|_| bad(tok))?),
            "ny" => ny = Some(v.parse::<usize>().map_err(|_| bad(tok))?),
            "x0" | "y0" | "dx" | "dy" => {
                let slot = ["x0", "y0", "dx", "dy"].iter().position(|n| *n == k).unwrap();
                geom[slot] = Some(v.parse::<f64>().map_err(|_| bad(tok))?);
            }
            _ => return Err(bad(tok)),
        }
    }
    match (nx, ny, geom) {
        (Some(nx), Some(ny), [Some(x0), Some(y0), Some(dx), Some(dy)]) => Grid::new(nx, ny, x0, y0, dx, dy),
        _ => Err(bad("missing keys")),
    }
}

fn parse_value(s: &str, line: usize) -> Result<f64, FieldError> {
    let t = s.trim();
    if t.eq_ignore_ascii_case("nan") || t.eq_ignore_ascii_case("na") || t.is_empty() {
        return Ok(f64::NAN);
    }
    let v: f64 = t
        .parse()
        .map_err(|_| FieldError::Malformed(format!("line {line}: bad value '{t}'")))?;
    if v.is_infinite() {
        return Err(FieldError::NonFinite { index: line, value: v });
    }
    Ok(v)
}

fn decode_csv(text: &str) -> Result<GridStack, FieldError> {
    let declared = text
        .lines()
        .take_while(|l| l.trim_start().starts_with('#'))
        .find(|l| l.trim_start_matches('#').trim_start().starts_with("grid"))
        .map(parse_grid_comment)
        .transpose()?;

    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| FieldError::Malformed(e.to_string()))?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols != ["replicate", "row", "col", "value"] {
        return Err(FieldError::Malformed(format!("expected header '{CSV_HEADER}', found '{}'", cols.join(","))));
    }

    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| FieldError::Malformed(e.to_string()))?;
        let line = k + 2;
        if rec.len() != 4 {
            return Err(FieldError::Malformed(format!("line {line}: expected 4 columns")));
        }
        let idx = |c: usize| -> Result<usize, FieldError> {
            rec[c]
                .parse::<usize>()
                .map_err(|_| FieldError::Malformed(format!("line {line}: bad index '{}'", &rec[c])))
        };
        rows.push((idx(0)?, idx(1)?, idx(2)?, parse_value(&rec[3], line)?));
    }
    if rows.is_empty() {
        return Err(FieldError::Empty);
    }

    let m = rows.iter().map(|r| r.0).max().unwrap() + 1;
    let grid = match declared {
        Some(g) => g,
        None => {
            let ny = rows.iter().map(|r| r.1).max().unwrap() + 1;
            let nx = rows.iter().map(|r| r.2).max().unwrap() + 1;
            Grid::unit_square(nx, ny)?
        }
    };
    let n = grid.len();
    if rows.len() != n * m {
        return Err(FieldError::LengthMismatch { expected: n * m, found: rows.len() });
    }
    let mut values = vec![f64::NAN; n * m];
    let mut seen = vec![false; n * m];
    for (j, row, col, v) in rows {
        if row >= grid.ny || col >= grid.nx {
            return Err(FieldError::Malformed(format!("cell ({row},{col}) outside {}x{} grid", grid.ny, grid.nx)));
        }
        let at = j * n + grid.index(row, col);
        if std::mem::replace(&mut seen[at], true) {
            return Err(FieldError::Malformed(format!("duplicate entry for replicate {j} cell ({row},{col})")));
        }
        values[at] = v;
    }
    GridStack::new(grid, m, values)
}
