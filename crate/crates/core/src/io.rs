//! File formats.
//!
//! - `FTS1` binary feature sets: magic `FTS1`, u32-LE count, u32-LE dimension,
//!   then N·d IEEE-754 f32 little-endian values, row-major. Values are stored
//!   at f32 precision regardless of the in-memory scalar type.
//! - `fts-csv` text feature sets: header `# fts-csv v1 dim=<d>`, then one
//!   comma-separated row per point.
//! - Binary PPM (`P6`, 8-bit RGB) and PGM (`P5`, 8-bit gray) images; byte
//!   values map to [0,1] by v/255 and back by round(v·255).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::feature_set::{FeatureSet, ImageGrid};
use crate::scalar::{real, Real};

const FTS1_MAGIC: &[u8; 4] = b"FTS1";

/// Encodes a feature set in the FTS1 binary layout.
pub fn feature_set_to_fts1<T: Real>(set: &FeatureSet<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + set.as_flat().len() * 4);
    out.extend_from_slice(FTS1_MAGIC);
    out.extend_from_slice(&(set.len() as u32).to_le_bytes());
    out.extend_from_slice(&(set.dim() as u32).to_le_bytes());
    for v in set.as_flat() {
        let f = v.to_f32().unwrap_or(f32::NAN);
        out.extend_from_slice(&f.to_le_bytes());
    }
    out
}

/// Decodes an FTS1 buffer.
pub fn feature_set_from_fts1<T: Real>(bytes: &[u8]) -> Result<FeatureSet<T>> {
    if bytes.len() < 4 || &bytes[..4] != FTS1_MAGIC {
        return Err(Error::format(0, "bad magic, expected \"FTS1\""));
    }
    if bytes.len() < 12 {
        return Err(Error::format(
            bytes.len(),
            format!("truncated header: expected 12 bytes, got {}", bytes.len()),
        ));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = 12 + n * d * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            bytes.len().min(expected),
            format!(
                "truncated payload: expected {} bytes total, got {}",
                expected,
                bytes.len()
            ),
        ));
    }
    let mut data = Vec::with_capacity(n * d);
    for chunk in bytes[12..].chunks_exact(4) {
        let f = f32::from_le_bytes(chunk.try_into().unwrap());
        data.push(real::<T>(f as f64));
    }
    FeatureSet::from_flat(data, n, d)
}

/// Encodes a feature set as `fts-csv` text. Floats are written with the
/// shortest representation that parses back to the same value.
pub fn feature_set_to_csv<T: Real>(set: &FeatureSet<T>) -> String {
    let mut out = format!("# fts-csv v1 dim={}\n", set.dim());
    for p in set.iter_points() {
        let row: Vec<String> = p.iter().map(|v| format!("{v}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Parses an `fts-csv` text buffer.
pub fn feature_set_from_csv<T: Real>(text: &str) -> Result<FeatureSet<T>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format(0, "empty fts-csv input"))?;
    let dim: usize = header
        .strip_prefix("# fts-csv v1 dim=")
        .and_then(|d| d.trim().parse().ok())
        .ok_or_else(|| Error::format(0, "bad fts-csv header"))?;
    let mut data = Vec::new();
    let mut count = 0usize;
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim {
            return Err(Error::format(
                0,
                format!(
                    "line {}: expected {} fields, got {}",
                    lineno + 2,
                    dim,
                    fields.len()
                ),
            ));
        }
        for f in fields {
            let v: f64 = f.trim().parse().map_err(|_| {
                Error::format(0, format!("line {}: bad float {f:?}", lineno + 2))
            })?;
            data.push(real::<T>(v));
        }
        count += 1;
    }
    FeatureSet::from_flat(data, count, dim)
}

/// Encodes an image as binary PGM (1 channel) or PPM (3 channels).
pub fn image_to_pnm<T: Real>(image: &ImageGrid<T>) -> Vec<u8> {
    let magic = if image.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    for v in image.as_flat() {
        let byte = (v.to_f64().unwrap() * 255.0).round().clamp(0.0, 255.0) as u8;
        out.push(byte);
    }
    out
}

/// Decodes binary PGM/PPM. Only 8-bit files (maxval 255) are accepted.
pub fn image_from_pnm<T: Real>(bytes: &[u8]) -> Result<ImageGrid<T>> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::format(0, "bad magic, expected \"P5\" or \"P6\"")),
    };
    let mut pos = 2usize;
    let mut fields = [0usize; 3]; // width, height, maxval
    for field in fields.iter_mut() {
        *field = read_pnm_int(bytes, &mut pos)?;
    }
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(Error::format(
            pos,
            format!("unsupported maxval {maxval}, expected 255"),
        ));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::format(pos, "expected whitespace before raster")),
    }
    let expected = width * height * channels;
    let raster = &bytes[pos..];
    if raster.len() != expected {
        return Err(Error::format(
            pos + raster.len().min(expected),
            format!(
                "truncated raster: expected {} bytes, got {}",
                expected,
                raster.len()
            ),
        ));
    }
    let data: Vec<T> = raster.iter().map(|&b| real::<T>(b as f64 / 255.0)).collect();
    ImageGrid::new(data, height, width, channels)
}

/// Reads one whitespace-and-comment-delimited decimal integer.
fn read_pnm_int(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            }
            Some(b) if b.is_ascii_digit() => break,
            Some(_) => return Err(Error::format(*pos, "expected integer in header")),
            None => return Err(Error::format(*pos, "truncated header")),
        }
    }
    let mut value = 0usize;
    while let Some(&b) = bytes.get(*pos) {
        if b.is_ascii_digit() {
            value = value * 10 + (b - b'0') as usize;
            *pos += 1;
        } else {
            break;
        }
    }
    Ok(value)
}

/// Input payloads distinguishable by magic bytes.
#[derive(Debug, Clone)]
pub enum LoadedInput<T> {
    Points(FeatureSet<T>),
    Image(ImageGrid<T>),
}

/// Sniffs a buffer by its magic bytes and decodes accordingly.
pub fn sniff_input<T: Real>(bytes: &[u8]) -> Result<LoadedInput<T>> {
    if bytes.starts_with(FTS1_MAGIC) {
        return Ok(LoadedInput::Points(feature_set_from_fts1(bytes)?));
    }
    if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        return Ok(LoadedInput::Image(image_from_pnm(bytes)?));
    }
    if bytes.starts_with(b"# fts-csv") {
        let text = std::str::from_utf8(bytes)
            .map_err(|e| Error::format(e.valid_up_to(), "invalid UTF-8 in fts-csv"))?;
        return Ok(LoadedInput::Points(feature_set_from_csv(text)?));
    }
    Err(Error::format(
        0,
        "unrecognized format (expected FTS1, P5, P6, or \"# fts-csv\")",
    ))
}

pub fn load_input<T: Real>(path: impl AsRef<Path>) -> Result<LoadedInput<T>> {
    sniff_input(&fs::read(path)?)
}

pub fn save_feature_set<T: Real>(set: &FeatureSet<T>, path: impl AsRef<Path>) -> Result<()> {
    Ok(fs::write(path, feature_set_to_fts1(set))?)
}

pub fn save_feature_set_csv<T: Real>(set: &FeatureSet<T>, path: impl AsRef<Path>) -> Result<()> {
    Ok(fs::write(path, feature_set_to_csv(set))?)
}

pub fn save_image<T: Real>(image: &ImageGrid<T>, path: impl AsRef<Path>) -> Result<()> {
    Ok(fs::write(path, image_to_pnm(image))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fts1_round_trip_is_bit_exact() {
        let set =
            FeatureSet::<f32>::from_rows(&[vec![0.5, -1.25], vec![3.0, 0.1], vec![7.5, 2.0]])
                .unwrap();
        let bytes = feature_set_to_fts1(&set);
        let back = feature_set_from_fts1::<f32>(&bytes).unwrap();
        assert_eq!(set, back);
    }

    #[test]
    fn fts1_truncation_names_lengths() {
        let set = FeatureSet::<f64>::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let mut bytes = feature_set_to_fts1(&set);
        bytes.truncate(bytes.len() - 3);
        let err = feature_set_from_fts1::<f64>(&bytes).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected 20"), "{msg}");
        assert!(msg.contains("got 17"), "{msg}");
    }

    #[test]
    fn fts1_bad_magic_reports_offset_zero() {
        let err = feature_set_from_fts1::<f64>(b"NOPE").unwrap_err();
        assert!(err.to_string().contains("byte 0"));
    }

    #[test]
    fn csv_round_trip() {
        let set = FeatureSet::<f64>::from_rows(&[
            vec![0.1, 0.2, 0.30000000000000004],
            vec![-5.0, 1e-7, 2.5],
        ])
        .unwrap();
        let text = feature_set_to_csv(&set);
        assert!(text.starts_with("# fts-csv v1 dim=3\n"));
        let back = feature_set_from_csv::<f64>(&text).unwrap();
        assert_eq!(set, back);
    }

    #[test]
    fn p6_known_bytes_map_to_known_floats() {
        let bytes = b"P6\n2 2\n255\n\x00\x33\x66\x99\xcc\xff\x7f\x80\x81\x01\x02\x03";
        let img = image_from_pnm::<f64>(bytes).unwrap();
        assert_eq!(img.height(), 2);
        assert_eq!(img.width(), 2);
        assert_eq!(img.channels(), 3);
        let expected = [
            0x00, 0x33, 0x66, 0x99, 0xcc, 0xff, 0x7f, 0x80, 0x81, 0x01, 0x02, 0x03,
        ];
        for (v, e) in img.as_flat().iter().zip(expected) {
            assert_eq!(*v, e as f64 / 255.0);
        }
    }

    #[test]
    fn pnm_round_trip_at_8bit() {
        let data: Vec<f64> = (0..16).map(|i| i as f64 / 15.0).collect();
        let img = ImageGrid::new(data, 4, 4, 1).unwrap();
        let bytes = image_to_pnm(&img);
        assert!(bytes.starts_with(b"P5"));
        let back = image_from_pnm::<f64>(&bytes).unwrap();
        // One quantization round trip; 8-bit exactness means re-encoding
        // reproduces the same bytes.
        assert_eq!(bytes, image_to_pnm(&back));
        for (a, b) in img.as_flat().iter().zip(back.as_flat()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn pnm_with_comments_parses() {
        let bytes = b"P5\n# a comment\n2 1\n# another\n255\n\x10\x20";
        let img = image_from_pnm::<f64>(bytes).unwrap();
        assert_eq!(img.width(), 2);
        assert_eq!(img.height(), 1);
    }

    #[test]
    fn sniffing_dispatches_by_magic() {
        let set = FeatureSet::<f64>::from_rows(&[vec![1.0]]).unwrap();
        assert!(matches!(
            sniff_input::<f64>(&feature_set_to_fts1(&set)).unwrap(),
            LoadedInput::Points(_)
        ));
        assert!(matches!(
            sniff_input::<f64>(feature_set_to_csv(&set).as_bytes()).unwrap(),
            LoadedInput::Points(_)
        ));
        let img = ImageGrid::<f64>::constant(0.5, 2, 2, 3).unwrap();
        assert!(matches!(
            sniff_input::<f64>(&image_to_pnm(&img)).unwrap(),
            LoadedInput::Image(_)
        ));
        assert!(sniff_input::<f64>(b"garbage").is_err());
    }
}
