//! File formats.
//!
//! `SGF1` grid field: ASCII `SGF1`, u32 LE nlat, u32 LE nlon, u8 grid kind
//! (0 Gaussian, 1 equiangular), 7 zero bytes, then `nlat * nlon` f64 LE
//! values, latitude-major.
//!
//! `SCF1` spectral field: ASCII `SCF1`, u32 LE K, then `(K+1)(K+2)/2`
//! complex values as interleaved f64 LE `(re, im)`, k-major then l.
//!
//! CSV fields use the header `lat,lon,value` with coordinates in degrees.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, FormatErrorKind, Result};
use crate::grid::{Grid, GridField, GridKind};
use crate::sht::{SpectralField, Truncation};

pub const FIELD_MAGIC: &[u8; 4] = b"SGF1";
pub const SPECTRAL_MAGIC: &[u8; 4] = b"SCF1";
const FIELD_HEADER_LEN: usize = 20;
const SPECTRAL_HEADER_LEN: usize = 8;

/// Round-trip float formatting with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn encode_field(field: &GridField) -> Vec<u8> {
    let grid = field.grid();
    let mut out = Vec::with_capacity(FIELD_HEADER_LEN + 8 * grid.len());
    out.extend_from_slice(FIELD_MAGIC);
    out.extend_from_slice(&(grid.nlat() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.nlon() as u32).to_le_bytes());
    out.push(grid.kind().code());
    out.extend_from_slice(&[0u8; 7]);
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4-byte slice")))
        .ok_or_else(|| {
            Error::format(
                bytes.len() as u64,
                FormatErrorKind::BadHeader("header too short".into()),
            )
        })
}

fn decode_f64s(bytes: &[u8], start: usize, count: usize) -> Result<Vec<f64>> {
    let available = bytes.len().saturating_sub(start);
    if available < 8 * count {
        return Err(Error::format(
            bytes.len() as u64,
            FormatErrorKind::Truncated {
                expected: count,
                found: available / 8,
            },
        ));
    }
    if available > 8 * count {
        return Err(Error::format(
            (start + 8 * count) as u64,
            FormatErrorKind::TrailingBytes,
        ));
    }
    let mut out = Vec::with_capacity(count);
    for (n, chunk) in bytes[start..].chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        if !v.is_finite() {
            return Err(Error::format((start + 8 * n) as u64, FormatErrorKind::NonFinite));
        }
        out.push(v);
    }
    Ok(out)
}

pub fn decode_field(bytes: &[u8]) -> Result<GridField> {
    if bytes.len() < 4 || &bytes[..4] != FIELD_MAGIC {
        return Err(Error::format(0, FormatErrorKind::BadMagic));
    }
    let nlat = read_u32(bytes, 4)? as usize;
    let nlon = read_u32(bytes, 8)? as usize;
    let kind_code = *bytes.get(12).ok_or_else(|| {
        Error::format(12, FormatErrorKind::BadHeader("header too short".into()))
    })?;
    let kind = GridKind::from_code(kind_code).ok_or_else(|| {
        Error::format(12, FormatErrorKind::BadHeader(format!("unknown grid kind {kind_code}")))
    })?;
    let pad = bytes
        .get(13..FIELD_HEADER_LEN)
        .ok_or_else(|| Error::format(13, FormatErrorKind::BadHeader("header too short".into())))?;
    if let Some(p) = pad.iter().position(|&b| b != 0) {
        return Err(Error::format(
            (13 + p) as u64,
            FormatErrorKind::BadHeader("non-zero padding".into()),
        ));
    }
    let grid = Grid::new(nlat, nlon, kind)
        .map_err(|e| Error::format(4, FormatErrorKind::BadHeader(e.to_string())))?;
    let values = decode_f64s(bytes, FIELD_HEADER_LEN, nlat * nlon)?;
    Ok(GridField::from_parts(Arc::new(grid), values))
}

pub fn write_field(field: &GridField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_field(field)).map_err(|e| Error::io(path, e))
}

pub fn read_field(path: impl AsRef<Path>) -> Result<GridField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_field(&bytes).map_err(|e| Error::in_file(path, e))
}

pub fn encode_spectral(spec: &SpectralField) -> Vec<u8> {
    let mut out = Vec::with_capacity(SPECTRAL_HEADER_LEN + 16 * spec.coeffs().len());
    out.extend_from_slice(SPECTRAL_MAGIC);
    out.extend_from_slice(&(spec.truncation().max_wavenumber() as u32).to_le_bytes());
    for c in spec.coeffs() {
        out.extend_from_slice(&c.re.to_le_bytes());
        out.extend_from_slice(&c.im.to_le_bytes());
    }
    out
}

pub fn decode_spectral(bytes: &[u8]) -> Result<SpectralField> {
    if bytes.len() < 4 || &bytes[..4] != SPECTRAL_MAGIC {
        return Err(Error::format(0, FormatErrorKind::BadMagic));
    }
    let kmax = read_u32(bytes, 4)? as usize;
    let trunc = Truncation(kmax);
    let flat = decode_f64s(bytes, SPECTRAL_HEADER_LEN, 2 * trunc.len())?;
    let coeffs: Vec<Complex64> = flat.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
    for k in 0..=kmax {
        let idx = trunc.index(k, 0);
        if coeffs[idx].im != 0.0 {
            return Err(Error::format(
                (SPECTRAL_HEADER_LEN + 16 * idx + 8) as u64,
                FormatErrorKind::BadHeader(format!("Im α({k},0) must be zero")),
            ));
        }
    }
    Ok(SpectralField::from_parts(trunc, coeffs))
}

pub fn write_spectral(spec: &SpectralField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_spectral(spec)).map_err(|e| Error::io(path, e))
}

pub fn read_spectral(path: impl AsRef<Path>) -> Result<SpectralField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_spectral(&bytes).map_err(|e| Error::in_file(path, e))
}

fn csv_error(e: csv::Error) -> Error {
    let offset = e.position().map(|p| p.byte()).unwrap_or(0);
    Error::format(offset, FormatErrorKind::Csv(e.to_string()))
}

/// Writes `lat,lon,value` rows in storage order, coordinates in degrees.
pub fn write_field_csv<W: Write>(field: &GridField, out: W) -> Result<()> {
    let grid = field.grid();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lat", "lon", "value"]).map_err(csv_error)?;
    for (i, lat) in grid.latitudes().iter().enumerate() {
        for j in 0..grid.nlon() {
            w.write_record([
                fmt_f64(lat.to_degrees()),
                fmt_f64(grid.longitude(j).to_degrees()),
                fmt_f64(field.value(i, j)),
            ])
            .map_err(csv_error)?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// Reads a CSV field written in storage order. The grid is recognized by
/// matching its latitudes against the Gaussian and equiangular layouts.
pub fn read_field_csv<R: Read>(input: R) -> Result<GridField> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["lat", "lon", "value"] {
        return Err(Error::format(
            0,
            FormatErrorKind::Csv("expected header lat,lon,value".into()),
        ));
    }
    let mut lats: Vec<f64> = Vec::new();
    let mut values = Vec::new();
    let mut nlon = None;
    let mut count_in_row = 0usize;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let offset = rec.position().map(|p| p.byte()).unwrap_or(0);
        let parse = |s: &str| -> Result<f64> {
            let v: f64 = s.trim().parse().map_err(|_| {
                Error::format(offset, FormatErrorKind::Csv(format!("not a number: {s:?}")))
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::format(offset, FormatErrorKind::NonFinite))
            }
        };
        let lat = parse(&rec[0])?;
        let value = parse(&rec[2])?;
        if lats.last() != Some(&lat) {
            if !lats.is_empty() {
                match nlon {
                    None => nlon = Some(count_in_row),
                    Some(n) if n != count_in_row => {
                        return Err(Error::format(offset, FormatErrorKind::Csv("ragged rows".into())))
                    }
                    _ => {}
                }
            }
            lats.push(lat);
            count_in_row = 0;
        }
        count_in_row += 1;
        values.push(value);
    }
    let nlon = nlon.unwrap_or(count_in_row);
    if count_in_row != nlon || lats.len() * nlon != values.len() {
        return Err(Error::format(0, FormatErrorKind::Csv("ragged rows".into())));
    }
    let nlat = lats.len();
    for kind in [GridKind::Gaussian, GridKind::Equiangular] {
        if let Ok(grid) = Grid::new(nlat, nlon, kind) {
            let matches = grid
                .latitudes()
                .iter()
                .zip(&lats)
                .all(|(a, b)| (a.to_degrees() - b).abs() < 1e-9);
            if matches {
                return Ok(GridField::from_parts(Arc::new(grid), values));
            }
        }
    }
    Err(Error::format(
        0,
        FormatErrorKind::Csv(format!("latitudes match no known {nlat}x{nlon} grid")),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_field(kind: GridKind) -> GridField {
        let g = Arc::new(Grid::new(6, 8, kind).unwrap());
        GridField::from_fn(g, |lat, lon| lat.sin() * 3.0 + lon.cos() / 7.0).unwrap()
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for kind in [GridKind::Gaussian, GridKind::Equiangular] {
            let f = sample_field(kind);
            let p = dir.path().join("f.sgf");
            write_field(&f, &p).unwrap();
            let g = read_field(&p).unwrap();
            assert_eq!(g.grid().kind(), kind);
            assert!(f.values().iter().zip(g.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode_field(&sample_field(GridKind::Equiangular));
        assert_eq!(&bytes[..4], b"SGF1");
        assert_eq!(&bytes[4..8], &6u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &8u32.to_le_bytes());
        assert_eq!(bytes[12], 1);
        assert_eq!(&bytes[13..20], &[0u8; 7]);
        assert_eq!(bytes.len(), 20 + 48 * 8);
    }

    #[test]
    fn bad_magic_names_offset_zero() {
        let mut bytes = encode_field(&sample_field(GridKind::Gaussian));
        bytes[..4].copy_from_slice(b"XXXX");
        match decode_field(&bytes) {
            Err(Error::Format { offset: 0, kind: FormatErrorKind::BadMagic }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_payload() {
        let g = Arc::new(Grid::gaussian(64, 128).unwrap());
        let mut bytes = encode_field(&GridField::zeros(g));
        bytes.truncate(20 + 100 * 8);
        match decode_field(&bytes) {
            Err(Error::Format { kind: FormatErrorKind::Truncated { expected, found }, .. }) => {
                assert_eq!((expected, found), (64 * 128, 100));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn nan_payload_reports_value_offset() {
        let mut bytes = encode_field(&sample_field(GridKind::Gaussian));
        bytes[20 + 8 * 5..20 + 8 * 6].copy_from_slice(&f64::NAN.to_le_bytes());
        match decode_field(&bytes) {
            Err(Error::Format { offset, kind: FormatErrorKind::NonFinite }) => assert_eq!(offset, 60),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_header_fields() {
        let base = encode_field(&sample_field(GridKind::Gaussian));
        let mut b = base.clone();
        b[12] = 9;
        assert!(matches!(decode_field(&b), Err(Error::Format { offset: 12, .. })));
        let mut b = base.clone();
        b[15] = 1;
        assert!(matches!(decode_field(&b), Err(Error::Format { offset: 15, .. })));
        let mut b = base.clone();
        b.push(0);
        assert!(matches!(decode_field(&b), Err(Error::Format { kind: FormatErrorKind::TrailingBytes, .. })));
        assert!(matches!(decode_field(&base[..10]), Err(Error::Format { .. })));
    }

    #[test]
    fn spectral_layout_and_errors() {
        let tr = Truncation(2);
        let mut s = SpectralField::zeros(tr);
        s.set(2, 1, Complex64::new(1.5, -2.5));
        let bytes = encode_spectral(&s);
        assert_eq!(&bytes[..4], b"SCF1");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(bytes.len(), 8 + 6 * 16);
        // (2,1) is index 4.
        assert_eq!(&bytes[8 + 64..8 + 72], &1.5f64.to_le_bytes());
        assert_eq!(&bytes[8 + 72..8 + 80], &(-2.5f64).to_le_bytes());
        assert_eq!(decode_spectral(&bytes).unwrap(), s);
        let mut bad = bytes.clone();
        bad[8 + 8..8 + 16].copy_from_slice(&1.0f64.to_le_bytes());
        assert!(matches!(decode_spectral(&bad), Err(Error::Format { offset: 16, .. })));
        assert!(matches!(decode_spectral(&bytes[..40]), Err(Error::Format { .. })));
    }

    #[test]
    fn csv_round_trip() {
        for kind in [GridKind::Gaussian, GridKind::Equiangular] {
            let f = sample_field(kind);
            let mut buf = Vec::new();
            write_field_csv(&f, &mut buf).unwrap();
            let text = String::from_utf8(buf.clone()).unwrap();
            assert!(text.starts_with("lat,lon,value\n"));
            let g = read_field_csv(buf.as_slice()).unwrap();
            assert_eq!(g.grid().kind(), kind);
            assert_eq!(f.values(), g.values());
        }
    }

    proptest! {
        #[test]
        fn any_finite_payload_round_trips(values in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 32)) {
            let g = Arc::new(Grid::gaussian(4, 8).unwrap());
            let f = GridField::new(g, values).unwrap();
            let back = decode_field(&encode_field(&f)).unwrap();
            prop_assert!(f.values().iter().zip(back.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
