//! NRRD label-volume IO (raw encoding, little-endian, uint8/uint16).
//!
//! Supports attached headers (data follows the blank line) and detached
//! headers (`data file:` reference). Unknown header fields are kept and
//! written back on save.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{LabelVolume, VolumeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VoxelType {
    U8,
    U16,
}

pub fn write_nrrd<W: Write>(w: &mut W, v: &LabelVolume) -> Result<(), VolumeError> {
    let vtype = if v.labels.iter().all(|&l| l <= u8::MAX as u16) {
        VoxelType::U8
    } else {
        VoxelType::U16
    };
    writeln!(w, "NRRD0004")?;
    writeln!(w, "type: {}", if vtype == VoxelType::U8 { "uint8" } else { "uint16" })?;
    writeln!(w, "dimension: 3")?;
    writeln!(w, "sizes: {} {} {}", v.dims[0], v.dims[1], v.dims[2])?;
    writeln!(w, "spacings: {} {} {}", v.spacing[0], v.spacing[1], v.spacing[2])?;
    writeln!(w, "space origin: ({},{},{})", v.origin[0], v.origin[1], v.origin[2])?;
    writeln!(w, "endian: little")?;
    writeln!(w, "encoding: raw")?;
    for (k, val) in &v.extra_header {
        writeln!(w, "{k}: {val}")?;
    }
    writeln!(w)?;
    match vtype {
        VoxelType::U8 => {
            let bytes: Vec<u8> = v.labels.iter().map(|&l| l as u8).collect();
            w.write_all(&bytes)?;
        }
        VoxelType::U16 => {
            let mut bytes = Vec::with_capacity(v.labels.len() * 2);
            for &l in &v.labels {
                bytes.extend_from_slice(&l.to_le_bytes());
            }
            w.write_all(&bytes)?;
        }
    }
    Ok(())
}

pub fn write_nrrd_file(path: &Path, v: &LabelVolume) -> Result<(), VolumeError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_nrrd(&mut f, v)
}

/// Reads an attached-header NRRD from a stream.
pub fn read_nrrd<R: Read>(r: &mut R) -> Result<LabelVolume, VolumeError> {
    let mut reader = BufReader::new(r);
    let (header, datafile) = parse_header(&mut reader)?;
    if datafile.is_some() {
        return Err(VolumeError::MalformedNrrd(
            "detached data file requires read_nrrd_file".into(),
        ));
    }
    read_body(header, &mut reader)
}

/// Reads attached or detached NRRD; detached `data file` paths resolve
/// relative to the header's directory.
pub fn read_nrrd_file(path: &Path) -> Result<LabelVolume, VolumeError> {
    let f = std::fs::File::open(path)?;
    let mut reader = BufReader::new(f);
    let (header, datafile) = parse_header(&mut reader)?;
    match datafile {
        None => read_body(header, &mut reader),
        Some(rel) => {
            let dir = path.parent().unwrap_or_else(|| Path::new("."));
            let data = std::fs::File::open(dir.join(rel))?;
            read_body(header, &mut BufReader::new(data))
        }
    }
}

struct Header {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    vtype: VoxelType,
    extra: Vec<(String, String)>,
}

fn parse_header<R: BufRead>(r: &mut R) -> Result<(Header, Option<String>), VolumeError> {
    let bad = |m: &str| VolumeError::MalformedNrrd(m.to_string());

    let mut magic = String::new();
    r.read_line(&mut magic)?;
    if !magic.trim_end().starts_with("NRRD") {
        return Err(bad("missing NRRD magic"));
    }

    let mut dims = None;
    let mut spacing = None;
    let mut origin = None;
    let mut vtype = None;
    let mut encoding = None;
    let mut endian: Option<String> = None;
    let mut dimension = None;
    let mut datafile = None;
    let mut extra = Vec::new();

    loop {
        let mut line = String::new();
        let n = r.read_line(&mut line)?;
        if n == 0 {
            return Err(bad("unexpected end of header"));
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if line.starts_with('#') {
            extra.push(("#".to_string(), line[1..].trim().to_string()));
            continue;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| bad("header line without colon"))?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "dimension" => {
                dimension = Some(value.parse::<usize>().map_err(|_| bad("bad dimension"))?)
            }
            "sizes" => {
                let v = parse_triplet::<usize>(value).ok_or_else(|| bad("bad sizes"))?;
                dims = Some(v);
            }
            "spacings" => {
                let v = parse_triplet::<f64>(value).ok_or_else(|| bad("bad spacings"))?;
                spacing = Some(v);
            }
            "space origin" => {
                let trimmed = value.trim_start_matches('(').trim_end_matches(')');
                let parts: Vec<&str> = trimmed.split(',').map(|s| s.trim()).collect();
                if parts.len() != 3 {
                    return Err(bad("bad space origin"));
                }
                let mut o = [0.0f64; 3];
                for (i, p) in parts.iter().enumerate() {
                    o[i] = p.parse().map_err(|_| bad("bad origin value"))?;
                }
                origin = Some(o);
            }
            "type" => {
                vtype = Some(match value {
                    "uint8" | "uchar" | "unsigned char" => VoxelType::U8,
                    "uint16" | "ushort" | "unsigned short" => VoxelType::U16,
                    other => return Err(bad(&format!("unsupported type {other}"))),
                })
            }
            "encoding" => encoding = Some(value.to_string()),
            "endian" => endian = Some(value.to_string()),
            "data file" | "datafile" => datafile = Some(value.to_string()),
            _ => extra.push((key.to_string(), value.to_string())),
        }
    }

    if dimension != Some(3) {
        return Err(bad("dimension must be 3"));
    }
    if let Some(e) = &encoding {
        if e != "raw" {
            return Err(bad("only raw encoding supported"));
        }
    } else {
        return Err(bad("missing encoding"));
    }
    if let Some(e) = &endian {
        if e != "little" {
            return Err(bad("only little endian supported"));
        }
    }
    let header = Header {
        dims: dims.ok_or_else(|| bad("missing sizes"))?,
        spacing: spacing.ok_or_else(|| bad("missing spacings"))?,
        origin: origin.unwrap_or([0.0; 3]),
        vtype: vtype.ok_or_else(|| bad("missing type"))?,
        extra,
    };
    Ok((header, datafile))
}

fn parse_triplet<T: std::str::FromStr>(s: &str) -> Option<[T; 3]>
where
    T: Copy,
{
    let parts: Vec<T> = s.split_whitespace().filter_map(|p| p.parse().ok()).collect();
    if parts.len() == 3 {
        Some([parts[0], parts[1], parts[2]])
    } else {
        None
    }
}

fn read_body<R: Read>(header: Header, r: &mut R) -> Result<LabelVolume, VolumeError> {
    let mut v = LabelVolume::new(header.dims, header.spacing, header.origin)?;
    let count = v.len();
    match header.vtype {
        VoxelType::U8 => {
            let mut buf = vec![0u8; count];
            r.read_exact(&mut buf)?;
            for (dst, &b) in v.labels.iter_mut().zip(&buf) {
                *dst = b as u16;
            }
        }
        VoxelType::U16 => {
            let mut buf = vec![0u8; count * 2];
            r.read_exact(&mut buf)?;
            for (i, dst) in v.labels.iter_mut().enumerate() {
                *dst = u16::from_le_bytes([buf[2 * i], buf[2 * i + 1]]);
            }
        }
    }
    v.extra_header = header.extra;
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> LabelVolume {
        let mut v = LabelVolume::new([3, 2, 2], [0.5, 0.6, 0.7], [1.0, -2.0, 3.0]).unwrap();
        v.set(0, 0, 0, 1);
        v.set(2, 1, 1, 2);
        v.extra_header.push(("content".into(), "synthetic case".into()));
        v
    }

    #[test]
    fn attached_round_trip() {
        let v = sample();
        let mut buf = Vec::new();
        write_nrrd(&mut buf, &v).unwrap();
        let back = read_nrrd(&mut buf.as_slice()).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn unknown_fields_preserved() {
        let v = sample();
        let mut buf = Vec::new();
        write_nrrd(&mut buf, &v).unwrap();
        let back = read_nrrd(&mut buf.as_slice()).unwrap();
        assert_eq!(back.extra_header, v.extra_header);
        // write again, the custom field must still be present in the text
        let mut buf2 = Vec::new();
        write_nrrd(&mut buf2, &back).unwrap();
        let text = String::from_utf8_lossy(&buf2[..200.min(buf2.len())]).to_string();
        assert!(text.contains("content: synthetic case"));
    }

    #[test]
    fn u16_labels_round_trip() {
        let mut v = sample();
        v.set(1, 0, 0, 700);
        let mut buf = Vec::new();
        write_nrrd(&mut buf, &v).unwrap();
        let back = read_nrrd(&mut buf.as_slice()).unwrap();
        assert_eq!(back.get(1, 0, 0), 700);
    }

    #[test]
    fn detached_header() {
        let dir = tempfile::tempdir().unwrap();
        let v = sample();
        // write raw data separately
        let data_path = dir.path().join("vol.raw");
        let bytes: Vec<u8> = v.labels.iter().map(|&l| l as u8).collect();
        std::fs::write(&data_path, &bytes).unwrap();
        let header = format!(
            "NRRD0004\ntype: uint8\ndimension: 3\nsizes: 3 2 2\nspacings: 0.5 0.6 0.7\nspace origin: (1,-2,3)\nendian: little\nencoding: raw\ndata file: vol.raw\n\n",
        );
        let header_path = dir.path().join("vol.nhdr");
        std::fs::write(&header_path, header).unwrap();
        let back = read_nrrd_file(&header_path).unwrap();
        assert_eq!(back.labels, v.labels);
        assert_eq!(back.spacing, v.spacing);
    }

    #[test]
    fn garbage_rejected() {
        let data = b"not nrrd\n";
        assert!(read_nrrd(&mut &data[..]).is_err());
    }
}
