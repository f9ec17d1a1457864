//! ESRI ASCII grid and raw little-endian f32 (+ JSON sidecar) I/O.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Georef, Grid, Mask, DEFAULT_NODATA};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridFormat {
    EsriAscii,
    RawF32,
}

impl GridFormat {
    /// `.asc`/`.txt` → ESRI ASCII, `.f32`/`.raw`/`.bin` → raw.
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        match ext.as_deref() {
            Some("asc") | Some("txt") => Ok(GridFormat::EsriAscii),
            Some("f32") | Some("raw") | Some("bin") => Ok(GridFormat::RawF32),
            _ => Err(Error::Config(format!(
                "cannot infer grid format from {}",
                path.display()
            ))),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            GridFormat::EsriAscii => "asc",
            GridFormat::RawF32 => "f32",
        }
    }
}

pub fn read_grid(path: &Path, format: GridFormat) -> Result<Grid> {
    match format {
        GridFormat::EsriAscii => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_esri_ascii(&text, path)
        }
        GridFormat::RawF32 => read_raw(path),
    }
}

pub fn write_grid(grid: &Grid, path: &Path, format: GridFormat) -> Result<()> {
    match format {
        GridFormat::EsriAscii => write_esri_ascii(grid, path),
        GridFormat::RawF32 => write_raw(grid, path),
    }
}

pub fn read_mask(path: &Path, format: GridFormat) -> Result<Mask> {
    read_grid(path, format).map(|g| Mask::from_grid(&g))
}

pub fn write_mask(mask: &Mask, path: &Path, format: GridFormat) -> Result<()> {
    write_grid(&mask.to_grid(DEFAULT_NODATA), path, format)
}

const HEADER_KEYS: [&str; 6] = [
    "ncols",
    "nrows",
    "xllcorner",
    "yllcorner",
    "cellsize",
    "nodata_value",
];

fn parse_esri_ascii(text: &str, path: &Path) -> Result<Grid> {
    let parse_err = |line: usize, field: &str, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        field: field.to_string(),
        message,
    };

    let mut ncols: Option<usize> = None;
    let mut nrows: Option<usize> = None;
    let mut x: Option<(f64, bool)> = None; // (value, is_center)
    let mut y: Option<(f64, bool)> = None;
    let mut cellsize: Option<f64> = None;
    let mut nodata = DEFAULT_NODATA;

    let mut lines = text.lines().enumerate().peekable();
    while let Some(&(n, line)) = lines.peek() {
        let mut toks = line.split_whitespace();
        let Some(key) = toks.next() else {
            lines.next();
            continue;
        };
        let lower = key.to_ascii_lowercase();
        let is_header = HEADER_KEYS.contains(&lower.as_str())
            || lower == "xllcenter"
            || lower == "yllcenter";
        if !is_header {
            break;
        }
        lines.next();
        let lineno = n + 1;
        let value = toks
            .next()
            .ok_or_else(|| parse_err(lineno, key, "missing value".into()))?;
        if toks.next().is_some() {
            return Err(parse_err(lineno, key, "trailing tokens".into()));
        }
        let float = || {
            value
                .parse::<f64>()
                .map_err(|e| parse_err(lineno, key, format!("{value:?}: {e}")))
        };
        let count = || {
            value
                .parse::<usize>()
                .map_err(|e| parse_err(lineno, key, format!("{value:?}: {e}")))
        };
        match lower.as_str() {
            "ncols" => ncols = Some(count()?),
            "nrows" => nrows = Some(count()?),
            "xllcorner" => x = Some((float()?, false)),
            "xllcenter" => x = Some((float()?, true)),
            "yllcorner" => y = Some((float()?, false)),
            "yllcenter" => y = Some((float()?, true)),
            "cellsize" => cellsize = Some(float()?),
            "nodata_value" => {
                nodata = value
                    .parse::<f32>()
                    .map_err(|e| parse_err(lineno, key, format!("{value:?}: {e}")))?
            }
            _ => unreachable!(),
        }
    }

    let missing = |field: &str| parse_err(1, field, "missing header field".into());
    let ncols = ncols.ok_or_else(|| missing("ncols"))?;
    let nrows = nrows.ok_or_else(|| missing("nrows"))?;
    let cellsize = cellsize.ok_or_else(|| missing("cellsize"))?;
    let (x, x_center) = x.ok_or_else(|| missing("xllcorner"))?;
    let (y, y_center) = y.ok_or_else(|| missing("yllcorner"))?;
    let half = cellsize / 2.0;
    let georef = Georef {
        width: ncols,
        height: nrows,
        cellsize,
        origin_x: if x_center { x - half } else { x },
        origin_y: if y_center { y - half } else { y },
    };
    georef.validate()?;

    let mut cells = Vec::with_capacity(georef.len());
    let mut rows_read = 0usize;
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let before = cells.len();
        for tok in line.split_whitespace() {
            let v = tok.parse::<f32>().map_err(|e| {
                parse_err(n + 1, "value", format!("{tok:?}: {e}"))
            })?;
            cells.push(v);
        }
        let got = cells.len() - before;
        if got != ncols {
            return Err(Error::Structural(format!(
                "{}: line {}: expected {ncols} values per row (ncols), found {got}",
                path.display(),
                n + 1
            )));
        }
        rows_read += 1;
    }
    if rows_read != nrows {
        return Err(Error::Structural(format!(
            "{}: expected {nrows} rows (nrows), found {rows_read}",
            path.display()
        )));
    }
    Grid::new(georef, nodata, cells)
}

fn write_esri_ascii(grid: &Grid, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let g = &grid.georef;
    let io = |e| Error::io(path, e);
    // `{}` on floats prints the shortest string that parses back to the same bits.
    writeln!(w, "ncols {}", g.width).map_err(io)?;
    writeln!(w, "nrows {}", g.height).map_err(io)?;
    writeln!(w, "xllcorner {}", g.origin_x).map_err(io)?;
    writeln!(w, "yllcorner {}", g.origin_y).map_err(io)?;
    writeln!(w, "cellsize {}", g.cellsize).map_err(io)?;
    writeln!(w, "NODATA_value {}", grid.nodata).map_err(io)?;
    let mut line = String::new();
    for row in grid.cells.chunks(g.width) {
        line.clear();
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            use std::fmt::Write as _;
            let _ = write!(line, "{v}");
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    width: usize,
    height: usize,
    cellsize: f64,
    xllcorner: f64,
    yllcorner: f64,
    /// `null` encodes a NaN sentinel.
    nodata: Option<f32>,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn read_raw(path: &Path) -> Result<Grid> {
    let side = sidecar_path(path);
    let meta = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: Sidecar = serde_json::from_str(&meta).map_err(|e| Error::Parse {
        path: side.clone(),
        line: e.line(),
        field: "sidecar".into(),
        message: e.to_string(),
    })?;
    let georef = Georef {
        width: meta.width,
        height: meta.height,
        cellsize: meta.cellsize,
        origin_x: meta.xllcorner,
        origin_y: meta.yllcorner,
    };
    georef.validate()?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != georef.len() * 4 {
        return Err(Error::Structural(format!(
            "{}: expected {} bytes for {}x{} f32 cells, found {}",
            path.display(),
            georef.len() * 4,
            georef.width,
            georef.height,
            bytes.len()
        )));
    }
    let cells = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Grid::new(georef, meta.nodata.unwrap_or(f32::NAN), cells)
}

fn write_raw(grid: &Grid, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(grid.cells.len() * 4);
    for v in &grid.cells {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let g = &grid.georef;
    let meta = Sidecar {
        width: g.width,
        height: g.height,
        cellsize: g.cellsize,
        xllcorner: g.origin_x,
        yllcorner: g.origin_y,
        nodata: if grid.nodata.is_nan() {
            None
        } else {
            Some(grid.nodata)
        },
    };
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&meta).expect("sidecar serializes");
    fs::write(&side, text).map_err(|e| Error::io(&side, e))
}
