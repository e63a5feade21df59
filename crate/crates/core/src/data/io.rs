use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use super::{HsiCube, LabelMap};
use crate::error::{Error, Result};

fn parse_cell(path: &Path, line: u64, cell: &str) -> Result<f64> {
    cell.trim().parse::<f64>().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("non-numeric cell {:?}", cell),
    })
}

fn csv_records(path: &Path) -> Result<Vec<(u64, Vec<String>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg: format!("{other:?}"),
            },
        })?;
    let mut out: Vec<(u64, Vec<String>)> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        out.push((line, rec.iter().map(str::to_owned).collect()));
    }
    // optional single header row, detected by a non-numeric first cell
    if let Some((_, first)) = out.first() {
        if first
            .first()
            .is_some_and(|c| c.parse::<f64>().is_err())
        {
            out.remove(0);
        }
    }
    Ok(out)
}

/// Reads a numeric CSV, one sample per row.
pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let records = csv_records(path)?;
    let width = records.first().map(|(_, r)| r.len()).unwrap_or(0);
    let mut values = Vec::with_capacity(records.len() * width);
    for (line, rec) in &records {
        if rec.len() != width {
            return Err(Error::RaggedRow {
                path: path.to_path_buf(),
                line: *line,
                expected: width,
                found: rec.len(),
            });
        }
        for cell in rec {
            values.push(parse_cell(path, *line, cell)?);
        }
    }
    Array2::from_shape_vec((records.len(), width), values)
        .map_err(|e| Error::Dimension(e.to_string()))
}

/// Reads one integer label per line. Blank lines are skipped.
pub fn read_labels(path: &Path) -> Result<Vec<i64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let label = line.parse::<i64>().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: k as u64 + 1,
            msg: format!("non-integer label {line:?}"),
        })?;
        labels.push(label);
    }
    Ok(labels)
}

/// Loads a dense CSV dataset (one sample per row) and its label file.
pub fn load_dense_dataset(features_path: &Path, labels_path: &Path) -> Result<(Array2<f64>, Vec<i64>)> {
    let features = read_matrix(features_path)?;
    let labels = read_labels(labels_path)?;
    if labels.len() != features.nrows() {
        return Err(Error::CountMismatch {
            labels: labels.len(),
            samples: features.nrows(),
        });
    }
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l < 1) {
        return Err(Error::InvalidLabel { index, label });
    }
    Ok((features, labels))
}

/// Sample type of a raw cube payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CubeDtype {
    F32,
    F64,
}

impl CubeDtype {
    fn size(self) -> usize {
        match self {
            CubeDtype::F32 => 4,
            CubeDtype::F64 => 8,
        }
    }

    fn name(self) -> &'static str {
        match self {
            CubeDtype::F32 => "f32",
            CubeDtype::F64 => "f64",
        }
    }
}

struct CubeHeader {
    height: usize,
    width: usize,
    bands: usize,
    dtype: CubeDtype,
}

fn parse_header(path: &Path) -> Result<CubeHeader> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as u64 + 1,
        msg,
    };
    let (mut height, mut width, mut bands, mut dtype) = (None, None, None, None);
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(k, format!("expected key=value, found {line:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        let int = || {
            value
                .parse::<usize>()
                .map_err(|_| err(k, format!("{key} must be a non-negative integer")))
        };
        match key {
            "height" => height = Some(int()?),
            "width" => width = Some(int()?),
            "bands" => bands = Some(int()?),
            "dtype" => {
                dtype = Some(match value {
                    "f32" => CubeDtype::F32,
                    "f64" => CubeDtype::F64,
                    other => return Err(err(k, format!("unknown dtype {other:?}"))),
                })
            }
            "order" if value == "bsq" => {}
            "order" => return Err(err(k, format!("unsupported order {value:?}"))),
            "byte_order" if value == "little" => {}
            "byte_order" => return Err(err(k, format!("unsupported byte order {value:?}"))),
            other => return Err(err(k, format!("unknown key {other:?}"))),
        }
    }
    let missing = |name: &str| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: format!("missing key {name}"),
    };
    Ok(CubeHeader {
        height: height.ok_or_else(|| missing("height"))?,
        width: width.ok_or_else(|| missing("width"))?,
        bands: bands.ok_or_else(|| missing("bands"))?,
        dtype: dtype.ok_or_else(|| missing("dtype"))?,
    })
}

/// Loads a little-endian band-sequential cube described by a key=value header.
pub fn load_hsi_cube(header_path: &Path, raw_path: &Path) -> Result<HsiCube> {
    let h = parse_header(header_path)?;
    let raw = fs::read(raw_path).map_err(|e| Error::io(raw_path, e))?;
    let count = h.height * h.width * h.bands;
    let expected = count * h.dtype.size();
    if raw.len() != expected {
        return Err(Error::SizeMismatch {
            expected,
            found: raw.len(),
        });
    }
    let values: Vec<f64> = match h.dtype {
        CubeDtype::F32 => raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect(),
        CubeDtype::F64 => raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect(),
    };
    HsiCube::new(h.height, h.width, h.bands, values)
}

/// Writes a cube as header + raw payload. `F32` rounds values to single precision.
pub fn write_hsi_cube(cube: &HsiCube, header_path: &Path, raw_path: &Path, dtype: CubeDtype) -> Result<()> {
    let header = format!(
        "height={}\nwidth={}\nbands={}\ndtype={}\norder=bsq\n",
        cube.height(),
        cube.width(),
        cube.bands(),
        dtype.name()
    );
    fs::write(header_path, header).map_err(|e| Error::io(header_path, e))?;
    let mut bytes = Vec::with_capacity(cube.values().len() * dtype.size());
    for &v in cube.values() {
        match dtype {
            CubeDtype::F32 => bytes.extend_from_slice(&(v as f32).to_le_bytes()),
            CubeDtype::F64 => bytes.extend_from_slice(&v.to_le_bytes()),
        }
    }
    fs::write(raw_path, bytes).map_err(|e| Error::io(raw_path, e))
}

/// Reads a label grid stored as CSV of non-negative integers.
pub fn read_label_map_csv(path: &Path) -> Result<LabelMap> {
    let records = csv_records(path)?;
    let width = records.first().map(|(_, r)| r.len()).unwrap_or(0);
    let mut labels = Vec::with_capacity(records.len() * width);
    for (line, rec) in &records {
        if rec.len() != width {
            return Err(Error::RaggedRow {
                path: path.to_path_buf(),
                line: *line,
                expected: width,
                found: rec.len(),
            });
        }
        for cell in rec {
            labels.push(cell.parse::<usize>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: *line,
                msg: format!("invalid label {cell:?}"),
            })?);
        }
    }
    LabelMap::new(records.len(), width, labels)
}

pub fn write_label_map_csv(map: &LabelMap, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    for r in 0..map.height() {
        let row: Vec<String> = (0..map.width()).map(|c| map.get(r, c).to_string()).collect();
        writeln!(w, "{}", row.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Writes an ASCII PGM (P2) with classes spread evenly over the gray range,
/// plus a `class,gray` mapping file next to it.
pub fn write_label_map_pgm(map: &LabelMap, path: &Path, mapping_path: &Path, classes: usize) -> Result<()> {
    let gray = |label: usize| -> usize { (label * 255).checked_div(classes).unwrap_or(0) };
    let io = |e| Error::io(path, e);
    let file = fs::File::create(path).map_err(io)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "P2\n{} {}\n255", map.width(), map.height()).map_err(io)?;
    for r in 0..map.height() {
        let row: Vec<String> = (0..map.width()).map(|c| gray(map.get(r, c)).to_string()).collect();
        writeln!(w, "{}", row.join(" ")).map_err(io)?;
    }
    w.flush().map_err(io)?;
    let mapping: String = (0..=classes).map(|k| format!("{k},{}\n", gray(k))).collect();
    fs::write(mapping_path, format!("class,gray\n{mapping}")).map_err(|e| Error::io(mapping_path, e))
}
