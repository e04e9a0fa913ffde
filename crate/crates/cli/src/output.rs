//! File and stream helpers shared by the subcommands.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use spectraloss::io::{fmt_f64, read_field, read_field_csv, read_spectral, write_field, write_field_csv, write_spectral};
use spectraloss::{Error, Grid, GridField, SpectralField, Truncation};

fn has_extension(path: &Path, ext: &str) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

pub fn is_spectral(path: &Path) -> bool {
    has_extension(path, "scf")
}

pub fn read_grid(path: &Path) -> Result<GridField, Error> {
    if has_extension(path, "csv") {
        let f = File::open(path).map_err(|e| io_error(path, e))?;
        read_field_csv(io::BufReader::new(f)).map_err(|e| Error::in_file(path, e))
    } else {
        read_field(path)
    }
}

pub fn write_grid(field: &GridField, path: &Path) -> Result<(), Error> {
    if has_extension(path, "csv") {
        let f = File::create(path).map_err(|e| io_error(path, e))?;
        write_field_csv(field, BufWriter::new(f))
    } else {
        write_field(field, path)
    }
}

pub fn read_spec(path: &Path) -> Result<SpectralField, Error> {
    read_spectral(path)
}

pub fn write_spec(spec: &SpectralField, path: &Path) -> Result<(), Error> {
    write_spectral(spec, path)
}

/// Numbers from a field file, or whitespace/comma separated text. Lines
/// starting with `#` and a non-numeric first line are skipped.
pub fn read_samples(path: &Path) -> Result<Vec<f64>, Error> {
    if has_extension(path, "sgf") {
        return Ok(read_field(path)?.into_values());
    }
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed: Result<Vec<f64>, _> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(str::parse::<f64>)
            .collect();
        match parsed {
            Ok(v) => out.extend(v),
            Err(_) if out.is_empty() && i == 0 => continue,
            Err(_) => {
                return Err(Error::in_file(
                    path,
                    Error::Parameter(format!("line {}: not a number", i + 1)),
                ))
            }
        }
    }
    Ok(out)
}

pub fn io_error(path: &Path, e: io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Largest truncation the grid resolves.
pub fn default_trunc(grid: &Grid) -> Truncation {
    Truncation((grid.nlat() - 1).min((grid.nlon() - 1) / 2))
}

/// Destination for a command's primary CSV output plus its notes.
///
/// Notes go to standard output when the CSV goes to a file, and to standard
/// error otherwise, so the CSV stream stays clean.
pub struct Sink {
    path: Option<PathBuf>,
}

impl Sink {
    pub fn new(path: Option<PathBuf>) -> Self {
        Sink { path }
    }

    pub fn writer(&self) -> Result<Box<dyn Write>, Error> {
        Ok(match &self.path {
            Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| io_error(p, e))?)),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        })
    }

    pub fn note(&self, line: impl AsRef<str>) {
        if self.path.is_some() {
            println!("{}", line.as_ref());
        } else {
            eprintln!("{}", line.as_ref());
        }
    }
}

/// `key=value` with full-precision floats.
pub fn kv(key: &str, v: f64) -> String {
    format!("{key}={}", fmt_f64(v))
}
