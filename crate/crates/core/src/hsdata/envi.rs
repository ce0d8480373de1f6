//! Reader for ENVI header + raw binary cubes.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::HyperCube;
use crate::error::{Error, Result};

const DATA_EXTENSIONS: [&str; 7] = ["", "img", "dat", "raw", "bsq", "bil", "bip"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Interleave {
    Bsq,
    Bil,
    Bip,
}

#[derive(Debug)]
struct Header {
    samples: usize,
    lines: usize,
    bands: usize,
    interleave: Interleave,
    data_type: u32,
    offset: usize,
}

fn parse_header(text: &str) -> Result<Header> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ENVI") {
        return Err(Error::Format("ENVI header must start with 'ENVI'".into()));
    }
    let mut fields = HashMap::new();
    let mut pending: Option<(String, String)> = None;
    for line in lines {
        if let Some((key, mut value)) = pending.take() {
            value.push(' ');
            value.push_str(line.trim());
            if line.contains('}') {
                fields.insert(key, value);
            } else {
                pending = Some((key, value));
            }
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        let key = key.trim().to_ascii_lowercase();
        let value = value.trim().to_string();
        if value.starts_with('{') && !value.contains('}') {
            pending = Some((key, value));
        } else {
            fields.insert(key, value);
        }
    }

    let int = |key: &str, default: Option<usize>| -> Result<usize> {
        match fields.get(key) {
            Some(v) => v
                .parse()
                .map_err(|_| Error::Format(format!("ENVI field '{key}' is not an integer: {v}"))),
            None => default.ok_or_else(|| Error::Format(format!("ENVI header lacks '{key}'"))),
        }
    };
    let interleave = match fields
        .get("interleave")
        .map(|s| s.to_ascii_lowercase())
        .as_deref()
    {
        Some("bsq") | None => Interleave::Bsq,
        Some("bil") => Interleave::Bil,
        Some("bip") => Interleave::Bip,
        Some(other) => return Err(Error::Unsupported(format!("interleave '{other}'"))),
    };
    let data_type = int("data type", None)? as u32;
    if data_type != 4 && data_type != 12 {
        return Err(Error::Unsupported(format!("ENVI data type {data_type}")));
    }
    let byte_order = int("byte order", Some(0))?;
    if byte_order != 0 {
        return Err(Error::Unsupported(format!("ENVI byte order {byte_order}")));
    }
    Ok(Header {
        samples: int("samples", None)?,
        lines: int("lines", None)?,
        bands: int("bands", None)?,
        interleave,
        data_type,
        offset: int("header offset", Some(0))?,
    })
}

fn locate(path: &Path) -> Result<(PathBuf, PathBuf)> {
    let is_header = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("hdr"));
    if is_header {
        let stem = path.with_extension("");
        for ext in DATA_EXTENSIONS {
            let candidate = if ext.is_empty() {
                stem.clone()
            } else {
                stem.with_extension(ext)
            };
            if candidate.is_file() {
                return Ok((path.to_path_buf(), candidate));
            }
        }
        return Err(Error::Format(format!(
            "no data file found next to {}",
            path.display()
        )));
    }
    let mut appended = path.as_os_str().to_owned();
    appended.push(".hdr");
    let candidates = [PathBuf::from(appended), path.with_extension("hdr")];
    candidates
        .into_iter()
        .find(|c| c.is_file())
        .map(|h| (h, path.to_path_buf()))
        .ok_or_else(|| Error::Format(format!("no ENVI header for {}", path.display())))
}

/// Loads an ENVI cube; `path` may be the `.hdr` file or the raw data file.
pub fn load_envi(path: impl AsRef<Path>) -> Result<HyperCube> {
    let (header_path, data_path) = locate(path.as_ref())?;
    let header = parse_header(&fs::read_to_string(header_path)?)?;
    let bytes = fs::read(data_path)?;
    decode(&header, &bytes)
}

fn decode(header: &Header, bytes: &[u8]) -> Result<HyperCube> {
    let (h, w, b) = (header.lines, header.samples, header.bands);
    let n = h * w * b;
    let width = if header.data_type == 4 { 4 } else { 2 };
    let needed = header.offset + n * width;
    if bytes.len() < needed {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::UnexpectedEof,
            format!("ENVI payload has {} bytes, need {needed}", bytes.len()),
        )));
    }
    let raw = &bytes[header.offset..needed];
    let values: Vec<f32> = if header.data_type == 4 {
        raw.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect()
    } else {
        raw.chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as f32)
            .collect()
    };
    let mut data = vec![0f32; n];
    for (i, v) in values.into_iter().enumerate() {
        let (band, row, col) = match header.interleave {
            Interleave::Bsq => (i / (h * w), (i / w) % h, i % w),
            Interleave::Bil => ((i / w) % b, i / (w * b), i % w),
            Interleave::Bip => (i % b, i / (w * b), (i / b) % w),
        };
        data[(band * h + row) * w + col] = v;
    }
    HyperCube::new(h, w, b, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(interleave: &str, dtype: u32, order: u32) -> String {
        format!(
            "ENVI\ndescription = {{\n  test cube}}\nsamples = 3\nlines = 2\nbands = 2\n\
             header offset = 0\nfile type = ENVI Standard\ndata type = {dtype}\n\
             interleave = {interleave}\nbyte order = {order}\n"
        )
    }

    /// Encodes value `100*b + 10*r + c` at every (band, row, col).
    fn encode(interleave: &str) -> Vec<u8> {
        let (h, w, b) = (2, 3, 2);
        let mut out = Vec::new();
        let mut push = |band: usize, r: usize, c: usize| {
            out.extend(((100 * band + 10 * r + c) as f32).to_le_bytes());
        };
        match interleave {
            "bsq" => (0..b).for_each(|bb| (0..h).for_each(|r| (0..w).for_each(|c| push(bb, r, c)))),
            "bil" => (0..h).for_each(|r| (0..b).for_each(|bb| (0..w).for_each(|c| push(bb, r, c)))),
            _ => (0..h).for_each(|r| (0..w).for_each(|c| (0..b).for_each(|bb| push(bb, r, c)))),
        }
        out
    }

    #[test]
    fn all_interleaves_agree() {
        for il in ["bsq", "bil", "bip"] {
            let hdr = parse_header(&header(il, 4, 0)).unwrap();
            let cube = decode(&hdr, &encode(il)).unwrap();
            assert_eq!((cube.height(), cube.width(), cube.bands()), (2, 3, 2));
            for b in 0..2 {
                for r in 0..2 {
                    for c in 0..3 {
                        assert_eq!(cube.get(b, r, c), (100 * b + 10 * r + c) as f32, "{il}");
                    }
                }
            }
        }
    }

    #[test]
    fn uint16_payload() {
        let hdr = parse_header(&header("bsq", 12, 0)).unwrap();
        let bytes: Vec<u8> = (0u16..12).flat_map(|v| v.to_le_bytes()).collect();
        let cube = decode(&hdr, &bytes).unwrap();
        assert_eq!(cube.get(1, 1, 2), 11.0);
    }

    #[test]
    fn unsupported_variants() {
        assert!(matches!(
            parse_header(&header("bsq", 5, 0)),
            Err(Error::Unsupported(_))
        ));
        assert!(matches!(
            parse_header(&header("bsq", 4, 1)),
            Err(Error::Unsupported(_))
        ));
        assert!(matches!(parse_header("NOTENVI\n"), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_payload() {
        let hdr = parse_header(&header("bsq", 4, 0)).unwrap();
        assert!(matches!(decode(&hdr, &[0u8; 10]), Err(Error::Io(_))));
    }

    #[test]
    fn indian_pines_sized_header() {
        let dir = tempfile::tempdir().unwrap();
        let hdr = dir.path().join("pines.hdr");
        fs::write(
            &hdr,
            "ENVI\nsamples = 145\nlines = 145\nbands = 200\ndata type = 12\ninterleave = bsq\nbyte order = 0\n",
        )
        .unwrap();
        fs::write(dir.path().join("pines.img"), vec![0u8; 145 * 145 * 200 * 2]).unwrap();
        let cube = load_envi(&hdr).unwrap();
        assert_eq!((cube.height(), cube.width(), cube.bands()), (145, 145, 200));
        let by_data = load_envi(dir.path().join("pines.img")).unwrap();
        assert_eq!(by_data, cube);
    }
}
